use super::tiling::{classify, TileKind};
use super::{assemble, query_tiles, AttentionError, AttentionInput, OnlineSoftmaxState, QueryTile};
use crate::parallel;
use crate::quant::softmax_scale;
use crate::tensor::Tensor4;

/// Tiled attention with an online softmax, entirely in binary32.
///
/// Query blocks are independent and run in parallel; key blocks of one
/// query block are visited in ascending order.
pub fn flash_attention_fp(
    input: &AttentionInput,
    block_q: usize,
    block_kv: usize,
) -> Result<Tensor4, AttentionError> {
    if block_q == 0 || block_kv == 0 {
        return Err(AttentionError::InvalidBlockSize { block_q, block_kv });
    }
    input.validate()?;
    let shape = input.shape();
    let tiles = query_tiles(shape, block_q);
    let blocks = parallel::map(&tiles, |tile| flash_tile(input, tile, block_kv));
    Ok(assemble(shape, &tiles, blocks))
}

fn flash_tile(input: &AttentionInput, tile: &QueryTile, block_kv: usize) -> Vec<f32> {
    let shape = input.shape();
    let (n, d) = (shape.tokens, shape.dim);
    let scale = softmax_scale(d);
    let q = input.q.head(tile.slice);
    let k = input.k.head(tile.slice);
    let v = input.v.head(tile.slice);
    let rows = tile.rows.clone();
    let bq = rows.len();

    let mut state = OnlineSoftmaxState::new(bq);
    let mut acc = vec![0.0f32; bq * d];
    let mut s = Vec::with_capacity(bq * block_kv);
    for k0 in (0..n).step_by(block_kv) {
        let cols = k0..(k0 + block_kv).min(n);
        let kind = if input.causal {
            classify(&rows, &cols)
        } else {
            TileKind::Full
        };
        if kind == TileKind::Skip {
            continue;
        }
        let bkv = cols.len();
        s.clear();
        for r in rows.clone() {
            let qr = &q[r * d..(r + 1) * d];
            for c in cols.clone() {
                if kind == TileKind::Diagonal && c > r {
                    s.push(f32::NEG_INFINITY);
                } else {
                    let kc = &k[c * d..(c + 1) * d];
                    let dot: f32 = qr.iter().zip(kc).map(|(a, b)| a * b).sum();
                    s.push(dot * scale);
                }
            }
        }
        let alpha = state.update(&mut s, bkv);
        for (r, (orow, prow)) in acc.chunks_exact_mut(d).zip(s.chunks_exact(bkv)).enumerate() {
            let a = alpha[r];
            orow.iter_mut().for_each(|o| *o *= a);
            for (t, &p) in prow.iter().enumerate() {
                let vrow = &v[(k0 + t) * d..(k0 + t + 1) * d];
                for (o, &x) in orow.iter_mut().zip(vrow) {
                    *o += p * x;
                }
            }
        }
    }
    for (orow, &l) in acc.chunks_exact_mut(d).zip(state.row_sum()) {
        orow.iter_mut().for_each(|o| *o /= l);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn causal_two_tokens() {
        let s = Shape4::new(1, 1, 2, 1);
        let one = Tensor4::from_vec(s, vec![1.0, 1.0]).unwrap();
        let v = Tensor4::from_vec(s, vec![2.0, 6.0]).unwrap();
        let input = AttentionInput::new(one.clone(), one, v, true).unwrap();
        for (bq, bkv) in [(1, 1), (2, 2), (1, 2), (2, 1)] {
            let o = flash_attention_fp(&input, bq, bkv).unwrap();
            assert_eq!(o.as_slice()[0], 2.0);
            assert_eq!(o.as_slice()[1], 4.0);
        }
    }

    #[test]
    fn zero_block_size_is_an_error() {
        let s = Shape4::new(1, 1, 1, 1);
        let x = Tensor4::from_vec(s, vec![1.0]).unwrap();
        let input = AttentionInput::new(x.clone(), x.clone(), x, false).unwrap();
        assert!(matches!(
            flash_attention_fp(&input, 0, 4),
            Err(AttentionError::InvalidBlockSize { .. })
        ));
    }
}
