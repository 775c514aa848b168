//! Galerkin assembly of the fast-system operators in the Hermite × Fourier
//! basis. Every constructor returns a sparse triplet matrix; terms leaving
//! the truncation box are dropped (Galerkin projection).

use nalgebra::{DMatrix, DVector};

use super::{Basis, FourierBasis};
use crate::model::TrigPoly;

/// Sparse triplet matrix (duplicates accumulate).
#[derive(Debug, Clone)]
pub struct CooMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl CooMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CooMatrix {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.entries.push((row as u32, col as u32, val));
        }
    }

    /// self += scale · other.
    pub fn axpy(&mut self, scale: f64, other: &CooMatrix) {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.entries.extend(
            other
                .entries
                .iter()
                .map(|&(r, c, v)| (r, c, scale * v)),
        );
    }

    pub fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.2 *= s;
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        for &(r, c, v) in &self.entries {
            y[r as usize] += v * x[c as usize];
        }
        y
    }

    pub fn matvec_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.ncols);
        for &(r, c, v) in &self.entries {
            y[c as usize] += v * x[r as usize];
        }
        y
    }

    pub fn transpose(&self) -> CooMatrix {
        CooMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r as usize, c as usize)] += v;
        }
        m
    }
}

/// Velocity Ornstein–Uhlenbeck generator A = −p·∇_p + βΔ_p:
/// exactly diagonal with eigenvalue −(total Hermite degree).
pub fn op_ou(basis: &Basis) -> CooMatrix {
    let f = basis.fourier.len();
    let mut m = CooMatrix::new(basis.dim(), basis.dim());
    for (hpos, idx) in basis.hermite.indices.iter().enumerate() {
        let g: usize = idx.iter().sum();
        if g == 0 {
            continue;
        }
        for fi in 0..f {
            let i = hpos * f + fi;
            m.push(i, i, -(g as f64));
        }
    }
    m
}

/// Transport generator B = p·∇_r + b(r)·∇_p.
pub fn op_transport(basis: &Basis, b: &[TrigPoly]) -> CooMatrix {
    assert_eq!(b.len(), basis.d);
    let f = basis.fourier.len();
    let mut m = CooMatrix::new(basis.dim(), basis.dim());
    for hpos in 0..basis.hermite.len() {
        for axis in 0..basis.d {
            let pacts = basis.hermite.p_mult_action(hpos, axis);
            let dacts = basis.hermite.deriv_action(hpos, axis);
            for fi in 0..f {
                let col = hpos * f + fi;
                // p_axis ∂_{r_axis}
                if !pacts.is_empty() {
                    for (ft, fa) in basis.fourier.deriv_action(fi, axis) {
                        for &(ht, ha) in &pacts {
                            m.push(ht * f + ft, col, ha * fa);
                        }
                    }
                }
                // b_axis ∂_{p_axis}
                if !dacts.is_empty() {
                    for (ft, fa) in basis.fourier.mult_action(fi, &b[axis]) {
                        for &(ht, ha) in &dacts {
                            m.push(ht * f + ft, col, ha * fa);
                        }
                    }
                }
            }
        }
    }
    m
}

/// Momentum part for an explicit diagonal diffusion:
/// −λ p·∇_p + ½ Σ α_i ∂²_{p_i}. Reduces to λ·A when α = 2βλ·I.
pub fn op_fast_general(basis: &Basis, lambda: f64, alpha_diag: &[f64]) -> CooMatrix {
    assert_eq!(alpha_diag.len(), basis.d);
    let f = basis.fourier.len();
    let beta = basis.beta;
    let mut m = CooMatrix::new(basis.dim(), basis.dim());
    for (hpos, idx) in basis.hermite.indices.iter().enumerate() {
        for axis in 0..basis.d {
            let n = idx[axis];
            if n == 0 {
                continue;
            }
            // p_i ∂_{p_i}: n·φ_n + √(n(n−1))·φ_{n−2}
            // ∂²_{p_i}: √(n(n−1))/β·φ_{n−2}
            let diag = -(lambda * n as f64);
            let sub = ((n * (n - 1)) as f64).sqrt();
            let drop2 = -lambda * sub + 0.5 * alpha_diag[axis] * sub / beta;
            for fi in 0..f {
                let col = hpos * f + fi;
                m.push(col, col, diag);
                if n >= 2 && drop2 != 0.0 {
                    let mut dn = idx.clone();
                    dn[axis] = n - 2;
                    if let Some(ht) = basis.hermite.position(&dn) {
                        m.push(ht * f + fi, col, drop2);
                    }
                }
            }
        }
    }
    m
}

/// Full fast generator L = (λ/m)·A + (1/√m)·B in fluctuation–dissipation
/// form, or (1/√m)·B + (1/m)·(−λp·∇_p + ½α:∇²_p) for explicit α.
pub fn op_generator(
    basis: &Basis,
    b: &[TrigPoly],
    lambda: f64,
    m: f64,
    alpha_diag: Option<&[f64]>,
) -> CooMatrix {
    let mut op = match alpha_diag {
        None => {
            let mut a = op_ou(basis);
            a.scale(lambda / m);
            a
        }
        Some(alpha) => {
            let mut a = op_fast_general(basis, lambda, alpha);
            a.scale(1.0 / m);
            a
        }
    };
    let bmat = op_transport(basis, b);
    op.axpy(1.0 / m.sqrt(), &bmat);
    op
}

/// Multiplication by the scalar field p·h(r) = Σ_i p_i h_i(r).
pub fn op_mult_p_dot(basis: &Basis, h: &[TrigPoly]) -> CooMatrix {
    assert_eq!(h.len(), basis.d);
    let f = basis.fourier.len();
    let mut m = CooMatrix::new(basis.dim(), basis.dim());
    for hpos in 0..basis.hermite.len() {
        for axis in 0..basis.d {
            let pacts = basis.hermite.p_mult_action(hpos, axis);
            if pacts.is_empty() {
                continue;
            }
            for fi in 0..f {
                let col = hpos * f + fi;
                for (ft, fa) in basis.fourier.mult_action(fi, &h[axis]) {
                    for &(ht, ha) in &pacts {
                        m.push(ht * f + ft, col, ha * fa);
                    }
                }
            }
        }
    }
    m
}

/// ρ⁰-adjoint of the fast generator in fluctuation–dissipation mode:
/// M = (λ/m)·A − (1/√m)·B + (1/√m)·mult(p·h_β), whose kernel is the
/// density ratio ρᵐ/ρ⁰.
pub fn op_adjoint_generator(
    basis: &Basis,
    b: &[TrigPoly],
    h: &[TrigPoly],
    lambda: f64,
    m: f64,
) -> CooMatrix {
    let mut op = op_ou(basis);
    op.scale(lambda / m);
    let bmat = op_transport(basis, b);
    op.axpy(-1.0 / m.sqrt(), &bmat);
    let hm = op_mult_p_dot(basis, h);
    op.axpy(1.0 / m.sqrt(), &hm);
    op
}

/// ∂_{p_axis} on the full basis.
pub fn op_p_deriv(basis: &Basis, axis: usize) -> CooMatrix {
    let f = basis.fourier.len();
    let mut m = CooMatrix::new(basis.dim(), basis.dim());
    for hpos in 0..basis.hermite.len() {
        for &(ht, ha) in &basis.hermite.deriv_action(hpos, axis) {
            for fi in 0..f {
                m.push(ht * f + fi, hpos * f + fi, ha);
            }
        }
    }
    m
}

/// ∂_{r_axis} on the full basis.
pub fn op_r_deriv(basis: &Basis, axis: usize) -> CooMatrix {
    let f = basis.fourier.len();
    let mut m = CooMatrix::new(basis.dim(), basis.dim());
    for hpos in 0..basis.hermite.len() {
        for fi in 0..f {
            for (ft, fa) in basis.fourier.deriv_action(fi, axis) {
                m.push(hpos * f + ft, hpos * f + fi, fa);
            }
        }
    }
    m
}

/// Multiplication by an r-only trigonometric polynomial on the full basis.
pub fn op_mult_trig(basis: &Basis, poly: &TrigPoly) -> CooMatrix {
    let f = basis.fourier.len();
    let mut m = CooMatrix::new(basis.dim(), basis.dim());
    for hpos in 0..basis.hermite.len() {
        for fi in 0..f {
            let col = hpos * f + fi;
            for (ft, fa) in basis.fourier.mult_action(fi, poly) {
                m.push(hpos * f + ft, col, fa);
            }
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Operators on the Fourier-only (r-space) basis.
// ---------------------------------------------------------------------------

/// Overdamped generator L⁰ = (1/λ)·b·∇_r + βΔ_r on the Fourier basis.
pub fn op_overdamped(fb: &FourierBasis, b: &[TrigPoly], lambda: f64, beta: f64) -> CooMatrix {
    let n = fb.len();
    let mut m = CooMatrix::new(n, n);
    let two_pi = 2.0 * std::f64::consts::PI;
    for fi in 0..n {
        // βΔ: diagonal −β(2π)²|k|².
        if let Some(k) = fb.modes[fi].wave_vector() {
            let k2: f64 = k.iter().map(|&ki| f64::from(ki) * f64::from(ki)).sum();
            m.push(fi, fi, -beta * two_pi * two_pi * k2);
        }
        // (1/λ) b·∇
        for axis in 0..b.len() {
            for (fd, da) in fb.deriv_action(fi, axis) {
                for (ft, ma) in fb.mult_action(fd, &b[axis]) {
                    m.push(ft, fi, da * ma / lambda);
                }
            }
        }
    }
    m
}

/// ∂_{r_axis} on the Fourier basis.
pub fn op_r_deriv_fourier(fb: &FourierBasis, axis: usize) -> CooMatrix {
    let n = fb.len();
    let mut m = CooMatrix::new(n, n);
    for fi in 0..n {
        for (ft, fa) in fb.deriv_action(fi, axis) {
            m.push(ft, fi, fa);
        }
    }
    m
}

/// Multiplication by a trigonometric polynomial on the Fourier basis.
pub fn op_mult_fourier(fb: &FourierBasis, poly: &TrigPoly) -> CooMatrix {
    let n = fb.len();
    let mut m = CooMatrix::new(n, n);
    for fi in 0..n {
        for (ft, fa) in fb.mult_action(fi, poly) {
            m.push(ft, fi, fa);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrigMode;
    use crate::spectral::build_basis;

    fn sin_field(amplitude: f64) -> Vec<TrigPoly> {
        vec![TrigPoly {
            constant: 0.0,
            modes: vec![TrigMode {
                k: vec![1],
                cos: 0.0,
                sin: amplitude,
            }],
        }]
    }

    #[test]
    fn ou_spectrum_is_exact() {
        let basis = build_basis(1, 6, 2, 1.5).unwrap();
        let a = op_ou(&basis).to_dense();
        for (hpos, idx) in basis.hermite.indices.iter().enumerate() {
            let g: f64 = idx.iter().sum::<usize>() as f64;
            for fi in 0..basis.fourier.len() {
                let i = hpos * basis.fourier.len() + fi;
                assert_eq!(a[(i, i)], -g);
            }
        }
        // off-diagonals vanish
        let mut off = 0.0;
        for i in 0..basis.dim() {
            for j in 0..basis.dim() {
                if i != j {
                    off += a[(i, j)].abs();
                }
            }
        }
        assert_eq!(off, 0.0);
    }

    #[test]
    fn transport_matches_collocation_on_interior_modes() {
        // B √2sin(2πr) = 2π p √2cos(2πr); with b = sin drift the ∇_p part
        // acts on Hermite degree ≥ 1 only.
        let basis = build_basis(1, 6, 4, 1.0).unwrap();
        let b = sin_field(1.0);
        let bop = op_transport(&basis, &b);
        let f = basis.fourier.len();

        // column of the Sin(1), Hermite-0 element
        let ci = basis.fourier.cos_index(&[1]).unwrap();
        let col = 0 * f + ci + 1;
        let y = bop.matvec(&nalgebra::DVector::from_fn(basis.dim(), |i, _| {
            if i == col {
                1.0
            } else {
                0.0
            }
        }));
        // expected: p·2π√2cos(2πr) = 2π·√β(φ_1)·√2cos → coefficient 2π at
        // (hermite 1, Cos(1)); everything else zero.
        let expect_row = 1 * f + ci;
        let two_pi = 2.0 * std::f64::consts::PI;
        for i in 0..basis.dim() {
            let e = if i == expect_row { two_pi } else { 0.0 };
            assert!((y[i] - e).abs() < 1e-12, "row {i}: {} vs {e}", y[i]);
        }
    }

    #[test]
    fn generator_scaling_combines_a_and_b() {
        // m = 0.25, λ = 2 ⇒ L = 8A + 2B.
        let basis = build_basis(1, 5, 3, 1.0).unwrap();
        let b = sin_field(0.7);
        let l = op_generator(&basis, &b, 2.0, 0.25, None).to_dense();
        let mut expect = op_ou(&basis).to_dense() * 8.0;
        expect += op_transport(&basis, &b).to_dense() * 2.0;
        assert!((l - expect).norm() < 1e-12);
    }

    #[test]
    fn fd_alpha_reduces_to_scaled_ou() {
        let beta = 0.7;
        let lambda = 1.3;
        let basis = build_basis(1, 7, 2, beta).unwrap();
        let alpha = vec![2.0 * beta * lambda];
        let gen_general = op_fast_general(&basis, lambda, &alpha).to_dense();
        let mut ou = op_ou(&basis).to_dense();
        ou *= lambda;
        assert!((gen_general - ou).norm() < 1e-12);
    }

    #[test]
    fn overdamped_diagonal_for_zero_drift() {
        // b ≡ 0: L⁰ = βΔ diagonal with −β(2πk)².
        let fb = FourierBasis::new(1, 3, );
        let beta = 0.5;
        let l0 = op_overdamped(&fb, &[TrigPoly::default()], 1.0, beta).to_dense();
        let two_pi = 2.0 * std::f64::consts::PI;
        for (i, mode) in fb.modes.iter().enumerate() {
            let k2 = mode
                .wave_vector()
                .map_or(0.0, |k| f64::from(k[0]) * f64::from(k[0]));
            assert!((l0[(i, i)] + beta * two_pi * two_pi * k2).abs() < 1e-12);
        }
    }

    #[test]
    fn overdamped_lambda_halves_drift_only() {
        let fb = FourierBasis::new(1, 4);
        let b = sin_field(1.0);
        let l1 = op_overdamped(&fb, &b, 1.0, 1.0).to_dense();
        let l2 = op_overdamped(&fb, &b, 2.0, 1.0).to_dense();
        let drift1 = {
            let lap = op_overdamped(&fb, &[TrigPoly::default()], 1.0, 1.0).to_dense();
            l1 - lap
        };
        let drift2 = {
            let lap = op_overdamped(&fb, &[TrigPoly::default()], 1.0, 1.0).to_dense();
            l2 - lap
        };
        assert!((drift1 * 0.5 - drift2).norm() < 1e-13);
    }
}
