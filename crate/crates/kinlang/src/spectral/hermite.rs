//! Probabilists' Hermite functions scaled to the momentum marginal N(0, βI).
//!
//! φ_n(p) = He_n(p/√β)/√(n!) are orthonormal in L²(N(0, β)); tensor products
//! over components give the d-dimensional family. Multi-indices are ordered
//! by total degree (then lexicographically), so operators that couple degree
//! g only to g ± 1 become block-tridiagonal.

/// Multi-index set {0..N−1}^d sorted degree-major.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    pub d: usize,
    /// Degrees per component run 0..n_per_axis−1.
    pub n_per_axis: usize,
    pub beta: f64,
    pub indices: Vec<Vec<usize>>,
    /// position of each mixed-radix index (n₁·N + n₂ …) in `indices`.
    lookup: Vec<usize>,
    /// indices[degree_offsets[g]..degree_offsets[g+1]] have total degree g.
    pub degree_offsets: Vec<usize>,
}

impl HermiteBasis {
    pub fn new(d: usize, n_per_axis: usize, beta: f64) -> Self {
        assert!(d >= 1 && n_per_axis >= 1);
        let count = n_per_axis.pow(d as u32);
        let mut indices: Vec<Vec<usize>> = Vec::with_capacity(count);
        let mut cur = vec![0usize; d];
        loop {
            indices.push(cur.clone());
            let mut axis = d;
            let mut done = true;
            while axis > 0 {
                axis -= 1;
                cur[axis] += 1;
                if cur[axis] < n_per_axis {
                    done = false;
                    break;
                }
                cur[axis] = 0;
            }
            if done {
                break;
            }
        }
        indices.sort_by(|a, b| {
            let sa: usize = a.iter().sum();
            let sb: usize = b.iter().sum();
            sa.cmp(&sb).then_with(|| a.cmp(b))
        });
        let mut lookup = vec![usize::MAX; count];
        for (pos, idx) in indices.iter().enumerate() {
            lookup[Self::radix(idx, n_per_axis)] = pos;
        }
        let max_deg = d * (n_per_axis - 1);
        let mut degree_offsets = vec![0usize; max_deg + 2];
        for idx in &indices {
            let g: usize = idx.iter().sum();
            degree_offsets[g + 1] += 1;
        }
        for g in 0..=max_deg {
            degree_offsets[g + 1] += degree_offsets[g];
        }
        HermiteBasis {
            d,
            n_per_axis,
            beta,
            indices,
            lookup,
            degree_offsets,
        }
    }

    fn radix(idx: &[usize], n: usize) -> usize {
        idx.iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.d * (self.n_per_axis - 1)
    }

    pub fn total_degree(&self, pos: usize) -> usize {
        self.indices[pos].iter().sum()
    }

    /// Position of a multi-index, None if any component exceeds the box.
    pub fn position(&self, idx: &[usize]) -> Option<usize> {
        if idx.iter().any(|&i| i >= self.n_per_axis) {
            return None;
        }
        Some(self.lookup[Self::radix(idx, self.n_per_axis)])
    }

    /// Action of multiplication by p_axis: φ_n ↦ √β(√(n+1)·φ_{n+1} + √n·φ_{n−1})
    /// in the given component; raises/lowers outside the box are dropped.
    pub fn p_mult_action(&self, pos: usize, axis: usize) -> Vec<(usize, f64)> {
        let idx = &self.indices[pos];
        let n = idx[axis];
        let sb = self.beta.sqrt();
        let mut out = Vec::with_capacity(2);
        let mut up = idx.clone();
        up[axis] = n + 1;
        if let Some(tp) = self.position(&up) {
            out.push((tp, sb * ((n + 1) as f64).sqrt()));
        }
        if n > 0 {
            let mut dn = idx.clone();
            dn[axis] = n - 1;
            if let Some(tp) = self.position(&dn) {
                out.push((tp, sb * (n as f64).sqrt()));
            }
        }
        out
    }

    /// Action of ∂_{p_axis}: φ_n ↦ √(n/β)·φ_{n−1}.
    pub fn deriv_action(&self, pos: usize, axis: usize) -> Vec<(usize, f64)> {
        let idx = &self.indices[pos];
        let n = idx[axis];
        if n == 0 {
            return Vec::new();
        }
        let mut dn = idx.clone();
        dn[axis] = n - 1;
        match self.position(&dn) {
            Some(tp) => vec![(tp, (n as f64 / self.beta).sqrt())],
            None => Vec::new(),
        }
    }

    /// Values φ_0..φ_{N−1} at a scalar momentum, by the stable three-term
    /// recurrence φ_{n+1} = (x·φ_n − √n·φ_{n−1})/√(n+1), x = p/√β.
    pub fn eval_1d(&self, p: f64, out: &mut [f64]) {
        let x = p / self.beta.sqrt();
        out[0] = 1.0;
        if self.n_per_axis > 1 {
            out[1] = x;
        }
        for n in 1..self.n_per_axis - 1 {
            out[n + 1] = (x * out[n] - (n as f64).sqrt() * out[n - 1]) / ((n + 1) as f64).sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_major_ordering_and_offsets() {
        let hb = HermiteBasis::new(2, 3, 1.0);
        assert_eq!(hb.len(), 9);
        // degrees: one index of degree 0, two of 1, three of 2, two of 3, one of 4
        assert_eq!(hb.degree_offsets, vec![0, 1, 3, 6, 8, 9]);
        assert_eq!(hb.indices[0], vec![0, 0]);
        for pos in 0..hb.len() - 1 {
            assert!(hb.total_degree(pos) <= hb.total_degree(pos + 1));
        }
        for (pos, idx) in hb.indices.iter().enumerate() {
            assert_eq!(hb.position(idx), Some(pos));
        }
    }

    #[test]
    fn recurrence_matches_explicit_low_orders() {
        let beta = 2.0;
        let hb = HermiteBasis::new(1, 5, beta);
        let p = 0.8;
        let x = p / beta.sqrt();
        let mut v = [0.0; 5];
        hb.eval_1d(p, &mut v);
        // He_0..He_4 normalized by √(n!)
        let expect = [
            1.0,
            x,
            (x * x - 1.0) / 2.0_f64.sqrt(),
            (x * x * x - 3.0 * x) / 6.0_f64.sqrt(),
            (x * x * x * x - 6.0 * x * x + 3.0) / 24.0_f64.sqrt(),
        ];
        for (a, e) in v.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn p_mult_and_deriv_consistency() {
        // p·φ_1 at β = 1: √1·√2·φ_2 + √1·1·φ_0 ⇒ coefficients (√2, 1).
        let hb = HermiteBasis::new(1, 4, 1.0);
        let act = hb.p_mult_action(1, 0);
        let mut coeff = [0.0; 4];
        for (t, a) in act {
            coeff[t] = a;
        }
        assert!((coeff[2] - 2.0_f64.sqrt()).abs() < 1e-15);
        assert!((coeff[0] - 1.0).abs() < 1e-15);
        let dact = hb.deriv_action(2, 0);
        assert_eq!(dact.len(), 1);
        assert!((dact[0].1 - 2.0_f64.sqrt()).abs() < 1e-15);
    }
}
