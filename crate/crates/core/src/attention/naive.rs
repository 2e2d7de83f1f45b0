use super::{AttentionError, AttentionInput};
use crate::parallel;
use crate::tensor::Tensor4;

/// Softmax attention materializing the full score matrix, in binary64.
///
/// This is the accuracy oracle every kernel is measured against.
pub fn naive_attention(input: &AttentionInput) -> Result<Tensor4<f64>, AttentionError> {
    input.validate()?;
    let shape = input.shape();
    let (n, d) = (shape.tokens, shape.dim);
    let scale = 1.0 / (d as f64).sqrt();
    let slices: Vec<usize> = (0..shape.slices()).collect();
    let heads = parallel::map(&slices, |&s| {
        let (q, k, v) = (input.q.head(s), input.k.head(s), input.v.head(s));
        let mut out = vec![0.0f64; n * d];
        let mut p = vec![0.0f64; n];
        for i in 0..n {
            let qi = &q[i * d..(i + 1) * d];
            let visible = if input.causal { i + 1 } else { n };
            for (j, pj) in p[..visible].iter_mut().enumerate() {
                let kj = &k[j * d..(j + 1) * d];
                *pj = qi
                    .iter()
                    .zip(kj)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum::<f64>()
                    * scale;
            }
            let max = p[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for pj in &mut p[..visible] {
                *pj = (*pj - max).exp();
                sum += *pj;
            }
            let oi = &mut out[i * d..(i + 1) * d];
            for (j, &pj) in p[..visible].iter().enumerate() {
                let w = pj / sum;
                for (o, &x) in oi.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                    *o += w * f64::from(x);
                }
            }
        }
        out
    });
    let data = heads.into_iter().flatten().collect();
    Ok(Tensor4::from_vec(shape, data).expect("one block per slice"))
}
