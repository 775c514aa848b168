//! Tensor quadrature: Gauss–Hermite in momentum × uniform trapezoid on the
//! torus. Sized so that triple products of truncated fields (plus analytic
//! density weights) integrate to near machine precision.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::Basis;
use crate::spectral::field::SpectralField;

/// Gauss–Hermite rule for ∫ f(x) e^{−x²}/√π dx: nodes and weights with Σw = 1.
/// Golub–Welsch on the Jacobi matrix with off-diagonals √(k/2).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let v = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = v;
        j[(k, k - 1)] = v;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let nodes = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1).collect();
    (nodes, weights)
}

/// Precomputed tensor grid with basis-function value tables.
pub struct Quadrature {
    pub d: usize,
    /// Momentum nodes per axis (already scaled by √(2β)).
    pub p_nodes_1d: Vec<f64>,
    pub p_weights_1d: Vec<f64>,
    /// Uniform torus points per axis.
    pub n_r_1d: usize,
    /// Tensor sizes.
    pub n_p: usize,
    pub n_r: usize,
    /// Tensor Gauss weights, p-major flattening.
    pub p_weights: Vec<f64>,
    /// Hermite multi-index values: (n_p × H).
    pub hermite_vals: DMatrix<f64>,
    /// Fourier mode values: (n_r × F).
    pub fourier_vals: DMatrix<f64>,
    /// Flattened grid coordinates.
    pub p_points: Vec<Vec<f64>>,
    pub r_points: Vec<Vec<f64>>,
}

/// Pointwise weight dμ/dν on the grid; the r-only variant avoids
/// materializing the momentum direction.
pub enum WeightTable {
    One,
    ROnly(Vec<f64>),
    Full(DMatrix<f64>),
}

impl Quadrature {
    /// Grid sized for degree-3 products of basis fields.
    pub fn for_basis(basis: &Basis) -> Self {
        let n_p = 3 * basis.n_hermite / 2 + 4;
        let n_r = 6 * basis.k_fourier + 16;
        Self::with_sizes(basis, n_p, n_r)
    }

    pub fn with_sizes(basis: &Basis, n_p_1d: usize, n_r_1d: usize) -> Self {
        let d = basis.d;
        let (x, w) = gauss_hermite(n_p_1d);
        let scale = (2.0 * basis.beta).sqrt();
        let p_nodes_1d: Vec<f64> = x.iter().map(|&xi| scale * xi).collect();
        let n_p = n_p_1d.pow(d as u32);
        let n_r = n_r_1d.pow(d as u32);

        // 1-d Hermite value table per axis node.
        let nh = basis.n_hermite;
        let mut h1 = DMatrix::<f64>::zeros(n_p_1d, nh);
        let mut buf = vec![0.0; nh];
        for (i, &p) in p_nodes_1d.iter().enumerate() {
            basis.hermite.eval_1d(p, &mut buf);
            for (n, &v) in buf.iter().enumerate() {
                h1[(i, n)] = v;
            }
        }

        // Tensor Hermite values and weights over the multi-index list.
        let hcount = basis.hermite.len();
        let mut hermite_vals = DMatrix::<f64>::zeros(n_p, hcount);
        let mut p_weights = vec![0.0; n_p];
        let mut p_points = Vec::with_capacity(n_p);
        for a in 0..n_p {
            let mut rem = a;
            let mut axes = vec![0usize; d];
            for ax in (0..d).rev() {
                axes[ax] = rem % n_p_1d;
                rem /= n_p_1d;
            }
            let mut wt = 1.0;
            let mut pt = vec![0.0; d];
            for ax in 0..d {
                wt *= w[axes[ax]];
                pt[ax] = p_nodes_1d[axes[ax]];
            }
            p_weights[a] = wt;
            for (hpos, idx) in basis.hermite.indices.iter().enumerate() {
                let mut v = 1.0;
                for ax in 0..d {
                    v *= h1[(axes[ax], idx[ax])];
                }
                hermite_vals[(a, hpos)] = v;
            }
            p_points.push(pt);
        }

        // Fourier values on the uniform tensor grid.
        let fcount = basis.fourier.len();
        let mut fourier_vals = DMatrix::<f64>::zeros(n_r, fcount);
        let mut r_points = Vec::with_capacity(n_r);
        let mut fbuf = vec![0.0; fcount];
        for b in 0..n_r {
            let mut rem = b;
            let mut rpt = vec![0.0; d];
            for ax in (0..d).rev() {
                rpt[ax] = (rem % n_r_1d) as f64 / n_r_1d as f64;
                rem /= n_r_1d;
            }
            basis.fourier.eval_modes(&rpt, &mut fbuf);
            for (f, &v) in fbuf.iter().enumerate() {
                fourier_vals[(b, f)] = v;
            }
            r_points.push(rpt);
        }

        Quadrature {
            d,
            p_nodes_1d,
            p_weights_1d: w,
            n_r_1d,
            n_p,
            n_r,
            p_weights,
            hermite_vals,
            fourier_vals,
            p_points,
            r_points,
        }
    }

    /// Field values on the tensor grid as an (n_p × n_r) table,
    /// computed by two separable contractions.
    pub fn eval(&self, field: &SpectralField) -> DMatrix<f64> {
        let h = self.hermite_vals.ncols();
        let f = self.fourier_vals.ncols();
        let c = DMatrix::from_row_slice(h, f, field.coeffs.as_slice());
        &self.hermite_vals * c * self.fourier_vals.transpose()
    }

    /// Values of an r-only field (Fourier coefficients) on the r-grid.
    pub fn eval_r(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        (&self.fourier_vals * coeffs).as_slice().to_vec()
    }

    /// ∫ table dν with ν = N(0,β)^⊗d ⊗ Leb(torus).
    pub fn integrate(&self, table: &DMatrix<f64>) -> f64 {
        let rw = 1.0 / self.n_r as f64;
        let mut acc = 0.0;
        for a in 0..self.n_p {
            let mut row = 0.0;
            for b in 0..self.n_r {
                row += table[(a, b)];
            }
            acc += self.p_weights[a] * row;
        }
        acc * rw
    }

    /// ∫ f·g dμ for the weight table dμ/dν.
    pub fn ip_weighted(&self, f: &DMatrix<f64>, g: &DMatrix<f64>, w: &WeightTable) -> f64 {
        let rw = 1.0 / self.n_r as f64;
        let mut acc = 0.0;
        match w {
            WeightTable::One => {
                for a in 0..self.n_p {
                    let mut row = 0.0;
                    for b in 0..self.n_r {
                        row += f[(a, b)] * g[(a, b)];
                    }
                    acc += self.p_weights[a] * row;
                }
            }
            WeightTable::ROnly(wr) => {
                for a in 0..self.n_p {
                    let mut row = 0.0;
                    for b in 0..self.n_r {
                        row += f[(a, b)] * g[(a, b)] * wr[b];
                    }
                    acc += self.p_weights[a] * row;
                }
            }
            WeightTable::Full(wt) => {
                for a in 0..self.n_p {
                    let mut row = 0.0;
                    for b in 0..self.n_r {
                        row += f[(a, b)] * g[(a, b)] * wt[(a, b)];
                    }
                    acc += self.p_weights[a] * row;
                }
            }
        }
        acc * rw
    }

    /// ∫ f dμ.
    pub fn integrate_weighted(&self, f: &DMatrix<f64>, w: &WeightTable) -> f64 {
        let ones = DMatrix::from_element(self.n_p, self.n_r, 1.0);
        self.ip_weighted(f, &ones, w)
    }
}

// ---------------------------------------------------------------------------
// Exact triple-product pairings.
// ---------------------------------------------------------------------------

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut lf = vec![0.0; n + 1];
    for k in 1..=n {
        lf[k] = lf[k - 1] + (k as f64).ln();
    }
    lf
}

/// Pairings ∫ u·v·w dν of truncated fields without a momentum grid.
///
/// Products of two scaled Hermite functions are linearized through
/// φ_a φ_b = Σ_k √(a! b! c!)/(k!(a−k)!(b−k)!) φ_c, c = a+b−2k, so the
/// momentum direction stays in coefficient space; the torus direction uses
/// a uniform grid fine enough that box harmonics times the (wider) defect
/// harmonics integrate without aliasing. Past degree ≈ 30 a pointwise
/// Hermite value table overflows the coefficients it multiplies and a
/// Gauss rule loses every digit, so weighted norms must come through here.
pub struct TriplePlan {
    d: usize,
    n_axis: usize,
    f_len: usize,
    h_len: usize,
    /// lin[a·N + b]: in-box linearization of the 1-d product φ_a·φ_b.
    lin: Vec<Vec<(usize, f64)>>,
    /// Hermite multi-indices in basis order.
    h_indices: Vec<Vec<usize>>,
    /// radix lookup c₁·N + c₂ → basis position (c → position for d = 1).
    pos: Vec<usize>,
    /// Fourier mode values on the tensor grid: (n_nodes × F).
    fvals: DMatrix<f64>,
    node_weight: f64,
    r_nodes: Vec<Vec<f64>>,
}

/// Hermite profiles of a field: coefficient vectors in p per torus node,
/// stored as an (H × n_nodes) matrix.
pub struct Profiles(pub DMatrix<f64>);

impl TriplePlan {
    pub fn new(basis: &Basis) -> Self {
        let d = basis.d;
        let n_axis = basis.n_hermite;
        let lf = ln_factorials(2 * n_axis);
        let mut lin = vec![Vec::new(); n_axis * n_axis];
        for a in 0..n_axis {
            for b in 0..n_axis {
                let excess = (a + b).saturating_sub(n_axis - 1);
                let k_min = (excess + 1) / 2;
                for k in k_min..=a.min(b) {
                    let c = a + b - 2 * k;
                    let lg = 0.5 * (lf[a] + lf[b] + lf[c]) - lf[k] - lf[a - k] - lf[b - k];
                    lin[a * n_axis + b].push((c, lg.exp()));
                }
            }
        }

        let h_len = basis.hermite.len();
        let mut pos = vec![usize::MAX; n_axis.pow(d as u32)];
        let mut idx = vec![0usize; d];
        for (radix, slot) in pos.iter_mut().enumerate() {
            let mut rem = radix;
            for ax in (0..d).rev() {
                idx[ax] = rem % n_axis;
                rem /= n_axis;
            }
            *slot = basis.hermite.position(&idx).expect("full-box index");
        }

        // Aliasing budget: three box factors (3K) plus a defect-field
        // profile (2K + 8) times a box factor fit under 6K + 18 nodes.
        let n_r_1d = 6 * basis.k_fourier + 18;
        let n_nodes = n_r_1d.pow(d as u32);
        let f_len = basis.fourier.len();
        let mut fvals = DMatrix::<f64>::zeros(n_nodes, f_len);
        let mut r_nodes = Vec::with_capacity(n_nodes);
        let mut fbuf = vec![0.0; f_len];
        for node in 0..n_nodes {
            let mut rem = node;
            let mut rpt = vec![0.0; d];
            for ax in (0..d).rev() {
                rpt[ax] = (rem % n_r_1d) as f64 / n_r_1d as f64;
                rem /= n_r_1d;
            }
            basis.fourier.eval_modes(&rpt, &mut fbuf);
            for (f, &v) in fbuf.iter().enumerate() {
                fvals[(node, f)] = v;
            }
            r_nodes.push(rpt);
        }

        TriplePlan {
            d,
            n_axis,
            f_len,
            h_len,
            lin,
            h_indices: basis.hermite.indices.clone(),
            pos,
            fvals,
            node_weight: 1.0 / n_nodes as f64,
            r_nodes,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.r_nodes.len()
    }

    pub fn r_nodes(&self) -> &[Vec<f64>] {
        &self.r_nodes
    }

    pub fn node_weight(&self) -> f64 {
        self.node_weight
    }

    pub fn profile(&self, field: &SpectralField) -> Profiles {
        let c = DMatrix::from_row_slice(self.h_len, self.f_len, field.coeffs.as_slice());
        Profiles(c * self.fvals.transpose())
    }

    /// ∫ u·v·w dν from precomputed profiles.
    pub fn ip3_profiles(&self, u: &Profiles, v: &Profiles, w: &Profiles) -> f64 {
        let n = self.n_axis;
        let mut acc = 0.0;
        for node in 0..self.n_nodes() {
            let uc = u.0.column(node);
            let vc = v.0.column(node);
            let wc = w.0.column(node);
            let mut s = 0.0;
            if self.d == 1 {
                for a in 0..self.h_len {
                    let ua = uc[a];
                    if ua == 0.0 {
                        continue;
                    }
                    for b in 0..self.h_len {
                        let f = ua * vc[b];
                        if f == 0.0 {
                            continue;
                        }
                        for &(c, g) in &self.lin[a * n + b] {
                            s += f * g * wc[c];
                        }
                    }
                }
            } else {
                for apos in 0..self.h_len {
                    let ua = uc[apos];
                    if ua == 0.0 {
                        continue;
                    }
                    let ai = &self.h_indices[apos];
                    for bpos in 0..self.h_len {
                        let f = ua * vc[bpos];
                        if f == 0.0 {
                            continue;
                        }
                        let bi = &self.h_indices[bpos];
                        for &(c1, g1) in &self.lin[ai[0] * n + bi[0]] {
                            let fg = f * g1;
                            for &(c2, g2) in &self.lin[ai[1] * n + bi[1]] {
                                s += fg * g2 * wc[self.pos[c1 * n + c2]];
                            }
                        }
                    }
                }
            }
            acc += s;
        }
        acc * self.node_weight
    }

    pub fn ip3(&self, u: &SpectralField, v: &SpectralField, w: &SpectralField) -> f64 {
        self.ip3_profiles(&self.profile(u), &self.profile(v), &self.profile(w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_basis;

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(12);
        // moments of N(0, 1/2) under e^{−x²}/√π: E[x²] = 1/2, E[x⁴] = 3/4.
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi * xi).sum();
        let m4: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(4)).sum();
        assert!((m0 - 1.0).abs() < 1e-13);
        assert!((m2 - 0.5).abs() < 1e-12);
        assert!((m4 - 0.75).abs() < 1e-12);
    }

    fn pseudo_field(dim: usize, seed: f64) -> SpectralField {
        let coeffs = DVector::from_fn(dim, |i, _| ((i as f64 + seed) * 0.7).sin());
        SpectralField::from_coeffs(coeffs)
    }

    #[test]
    fn triple_with_unit_weight_recovers_parseval() {
        let basis = build_basis(1, 24, 6, 1.4).unwrap();
        let plan = TriplePlan::new(&basis);
        let u = pseudo_field(basis.dim(), 0.3);
        let v = pseudo_field(basis.dim(), 11.0);
        let mut one = SpectralField::zeros(basis.dim());
        one.coeffs[0] = 1.0;
        let got = plan.ip3(&u, &v, &one);
        assert!((got - u.ip_nu(&v)).abs() < 1e-11 * u.norm_nu() * v.norm_nu());
    }

    #[test]
    fn triple_linearization_matches_explicit_square() {
        // φ₁² = √2·φ₂ + φ₀ regardless of the temperature scaling.
        let basis = build_basis(1, 6, 2, 1.7).unwrap();
        let plan = TriplePlan::new(&basis);
        let f = basis.fourier.len();
        let mut u = SpectralField::zeros(basis.dim());
        u.coeffs[f] = 1.0; // φ₁ with constant torus mode
        let mut w2 = SpectralField::zeros(basis.dim());
        w2.coeffs[2 * f] = 1.0;
        let mut w0 = SpectralField::zeros(basis.dim());
        w0.coeffs[0] = 1.0;
        assert!((plan.ip3(&u, &u, &w2) - 2.0_f64.sqrt()).abs() < 1e-14);
        assert!((plan.ip3(&u, &u, &w0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn triple_matches_gauss_tables_where_those_are_stable() {
        for &(d, n, k) in &[(1usize, 10usize, 4usize), (2, 6, 3)] {
            let basis = build_basis(d, n, k, 0.8).unwrap();
            let plan = TriplePlan::new(&basis);
            let quad = Quadrature::for_basis(&basis);
            let u = pseudo_field(basis.dim(), 1.0);
            let v = pseudo_field(basis.dim(), 2.5);
            let w = pseudo_field(basis.dim(), 4.0);
            let exact = plan.ip3(&u, &v, &w);
            let tabled = quad.ip_weighted(
                &quad.eval(&u),
                &quad.eval(&v),
                &WeightTable::Full(quad.eval(&w)),
            );
            assert!(
                (exact - tabled).abs() < 1e-10 * exact.abs().max(1.0),
                "d={d}: {exact} vs {tabled}"
            );
        }
    }
}
