/// Running row max `m` and row sum `l` of the online softmax for one query
/// block, kept in binary32.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSoftmaxState {
    m: Vec<f32>,
    l: Vec<f32>,
}

impl OnlineSoftmaxState {
    pub fn new(rows: usize) -> Self {
        Self {
            m: vec![f32::NEG_INFINITY; rows],
            l: vec![0.0; rows],
        }
    }

    pub fn row_max(&self) -> &[f32] {
        &self.m
    }

    pub fn row_sum(&self) -> &[f32] {
        &self.l
    }

    /// Consumes one score tile (`rows × cols`, masked entries `-∞`).
    ///
    /// On return `s` holds `P̃ = exp(S - m_new)` and the returned vector holds
    /// the per-row rescale factors `exp(m_old - m_new)` that must be applied
    /// to the output accumulator before adding `P̃ V`.
    pub fn update(&mut self, s: &mut [f32], cols: usize) -> Vec<f32> {
        debug_assert_eq!(s.len(), self.m.len() * cols);
        let mut alpha = Vec::with_capacity(self.m.len());
        for (r, row) in s.chunks_exact_mut(cols).enumerate() {
            let m_old = self.m[r];
            let m_new = row.iter().fold(m_old, |m, &x| m.max(x));
            if m_new == f32::NEG_INFINITY {
                // Nothing unmasked yet for this row.
                row.fill(0.0);
                alpha.push(1.0);
                continue;
            }
            let mut rowsum = 0.0f32;
            for x in row.iter_mut() {
                *x = (*x - m_new).exp();
                rowsum += *x;
            }
            let a = (m_old - m_new).exp();
            self.l[r] = a * self.l[r] + rowsum;
            self.m[r] = m_new;
            alpha.push(a);
        }
        alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blocks_match_one_softmax() {
        let logits = [0.3f32, -1.2, 2.5, 0.7];
        let mut st = OnlineSoftmaxState::new(1);
        let mut a = logits[..2].to_vec();
        let alpha0 = st.update(&mut a, 2);
        assert_eq!(alpha0, vec![0.0]);
        let mut b = logits[2..].to_vec();
        let alpha1 = st.update(&mut b, 2);
        let total: f64 = logits.iter().map(|&x| (f64::from(x) - 2.5).exp()).sum();
        assert!((f64::from(st.row_sum()[0]) - total).abs() < 1e-6);
        assert!((f64::from(alpha1[0]) - (0.3f64 - 2.5).exp()).abs() < 1e-7);
        assert_eq!(st.row_max(), &[2.5]);
    }

    #[test]
    fn masked_rows_are_inert() {
        let mut st = OnlineSoftmaxState::new(2);
        let mut s = vec![f32::NEG_INFINITY, f32::NEG_INFINITY, 1.0, f32::NEG_INFINITY];
        let alpha = st.update(&mut s, 2);
        assert_eq!(s, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(alpha[0], 1.0);
        assert_eq!(st.row_sum(), &[0.0, 1.0]);
    }

    #[test]
    fn max_is_non_decreasing() {
        let mut st = OnlineSoftmaxState::new(1);
        let mut prev = f32::NEG_INFINITY;
        for block in [[1.0f32, 0.0], [-3.0, -2.0], [4.0, 1.0], [0.0, 0.0]] {
            let mut s = block.to_vec();
            st.update(&mut s, 2);
            assert!(st.row_max()[0] >= prev);
            prev = st.row_max()[0];
        }
    }
}
