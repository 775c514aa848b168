//! Phase-space fields as coefficient vectors over the tensor basis.
//!
//! The reference measure ν = N(0, βI)(dp) ⊗ Leb(dr) makes the basis
//! orthonormal, so L²(ν) inner products are plain coefficient dots.

use nalgebra::DVector;

use super::ops::CooMatrix;
use super::Basis;
use crate::model::TrigPoly;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub coeffs: DVector<f64>,
}

impl SpectralField {
    pub fn zeros(dim: usize) -> Self {
        SpectralField {
            coeffs: DVector::zeros(dim),
        }
    }

    pub fn from_coeffs(coeffs: DVector<f64>) -> Self {
        SpectralField { coeffs }
    }

    /// Momentum-independent field from a trigonometric polynomial.
    pub fn from_trig_poly(basis: &Basis, poly: &TrigPoly) -> Self {
        Self::from_r_coeffs(basis, &DVector::from_vec(basis.fourier.project_poly(poly)))
    }

    /// Embed Fourier-only coefficients at Hermite degree 0; the degree-0
    /// block sits first, so this is a prefix copy.
    pub fn from_r_coeffs(basis: &Basis, r_coeffs: &DVector<f64>) -> Self {
        let f = basis.fourier.len();
        assert_eq!(r_coeffs.len(), f);
        let mut coeffs = DVector::zeros(basis.dim());
        coeffs.rows_mut(0, f).copy_from(r_coeffs);
        SpectralField { coeffs }
    }

    /// The coordinate field p_axis = √β·φ_{e_axis}.
    pub fn p_coordinate(basis: &Basis, axis: usize) -> Self {
        let mut idx = vec![0usize; basis.d];
        idx[axis] = 1;
        let hpos = basis.hermite.position(&idx).expect("degree 1 in box");
        let mut coeffs = DVector::zeros(basis.dim());
        coeffs[basis.index(hpos, 0)] = basis.beta.sqrt();
        SpectralField { coeffs }
    }

    /// The field w(r)·p_axis for a trigonometric w: coefficients of w land
    /// on the Hermite index e_axis scaled by √β.
    pub fn r_poly_times_p(basis: &Basis, poly: &TrigPoly, axis: usize) -> Self {
        let mut idx = vec![0usize; basis.d];
        idx[axis] = 1;
        let hpos = basis.hermite.position(&idx).expect("degree 1 in box");
        let f = basis.fourier.len();
        let r = basis.fourier.project_poly(poly);
        let mut coeffs = DVector::zeros(basis.dim());
        for (fi, &v) in r.iter().enumerate() {
            coeffs[hpos * f + fi] = basis.beta.sqrt() * v;
        }
        SpectralField { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// ⟨f, g⟩_{L²(ν)}.
    pub fn ip_nu(&self, other: &SpectralField) -> f64 {
        self.coeffs.dot(&other.coeffs)
    }

    pub fn norm_nu(&self) -> f64 {
        self.coeffs.norm()
    }

    /// ∫ f dν: the coefficient of the constant mode.
    pub fn mean_nu(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn apply(&self, op: &CooMatrix) -> SpectralField {
        SpectralField {
            coeffs: op.matvec(&self.coeffs),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        self.coeffs.axpy(a, &other.coeffs, 1.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.coeffs *= s;
    }

    /// Pointwise value at (p, r) by direct basis summation.
    pub fn eval_at(&self, basis: &Basis, p: &[f64], r: &[f64]) -> f64 {
        let f = basis.fourier.len();
        let mut fvals = vec![0.0; f];
        basis.fourier.eval_modes(r, &mut fvals);
        // per-axis Hermite tables
        let n = basis.n_hermite;
        let mut h1 = vec![0.0; n * basis.d];
        for ax in 0..basis.d {
            basis.hermite.eval_1d(p[ax], &mut h1[ax * n..(ax + 1) * n]);
        }
        let mut acc = 0.0;
        for (hpos, idx) in basis.hermite.indices.iter().enumerate() {
            let mut hv = 1.0;
            for ax in 0..basis.d {
                hv *= h1[ax * n + idx[ax]];
            }
            if hv == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for fi in 0..f {
                row += self.coeffs[hpos * f + fi] * fvals[fi];
            }
            acc += hv * row;
        }
        acc
    }
}
