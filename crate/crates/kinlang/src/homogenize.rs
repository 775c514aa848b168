//! Homogenized drift and diffusion for the slow variable: the finite-mass
//! pair (r_m, Q_m) from the kinetic corrector and the overdamped pair
//! (r₀, Q₀) from χ, plus the mass sweep comparing them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cell::{solve_chi, solve_phi, ChiSolution, PhiSolution};
use crate::error::{Error, Result};
use crate::spectral::ops::{op_mult_trig, op_p_deriv};
use crate::spectral::SpectralField;
use crate::stationary::{solve_rho_m, DensitySet, FastSystem};

#[derive(Debug, Clone)]
pub struct CoeffsM {
    pub m: f64,
    pub r: DVector<f64>,
    pub q: DMatrix<f64>,
    /// Max-norm asymmetry of Q before symmetrization (truncation gauge).
    pub asymmetry: f64,
    pub min_eig: f64,
}

#[derive(Debug, Clone)]
pub struct Coeffs0 {
    pub r: DVector<f64>,
    pub q: DMatrix<f64>,
    pub min_eig: f64,
}

/// r_m = (1/√m)∫∇_pΦ·c dρᵐ and Q_m = (1/m)∫∇_pΦ α (∇_pΦ)ᵀ dρᵐ.
///
/// Both integrals are coefficient pairings against the weight w = dρᵐ/dν:
/// w has no content outside the box, so ⟨P(f·g), w⟩ equals the exact
/// integral ∫ f·g dρᵐ for box fields f, g.
pub fn coeffs_m(sys: &FastSystem, set: &DensitySet, phi: &PhiSolution) -> Result<CoeffsM> {
    let basis = &sys.basis;
    let d = basis.d;
    let m = phi.m;
    let alpha = sys.spec.alpha_diag(&sys.spec.q0);
    let w = &set.weight;

    // ∂_{p_j}Φ_ℓ for all pairs
    let grads: Vec<Vec<SpectralField>> = (0..d)
        .map(|ell| {
            (0..d)
                .map(|j| phi.phi[ell].apply(&op_p_deriv(basis, j)))
                .collect()
        })
        .collect();

    let mut r = DVector::zeros(d);
    for ell in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            let c_op = op_mult_trig(basis, &sys.spec.c_poly(j));
            acc += grads[ell][j].apply(&c_op).ip_nu(w);
        }
        r[ell] = acc / m.sqrt();
    }

    let mut q_raw = DMatrix::zeros(d, d);
    for ell in 0..d {
        for kk in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += alpha[j] * sys.ip_weighted_by(w, &grads[ell][j], &grads[kk][j]);
            }
            q_raw[(ell, kk)] = acc / m;
        }
    }
    let qt = q_raw.transpose();
    let asymmetry = (&q_raw - &qt).abs().max();
    let q = (q_raw + qt) * 0.5;
    let min_eig = spd_min_eig(&q)?;
    Ok(CoeffsM {
        m,
        r,
        q,
        asymmetry,
        min_eig,
    })
}

/// r₀ = (1/λ)∫(I+∂χ)c ρ₀ and Q₀ = (1/λ²)∫(I+∂χ)α(I+∂χ)ᵀ ρ₀.
pub fn coeffs_0(sys: &FastSystem, chi: &ChiSolution) -> Result<Coeffs0> {
    let d = sys.basis.d;
    let alpha = sys.spec.alpha_diag(&sys.spec.q0);
    let quad = sys.quadrature();
    let rho = sys.rho0_values(&quad);
    // mobility rows (I + ∂χ)_{ℓj} on the r-grid
    let mob: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|ell| {
            (0..d)
                .map(|j| {
                    let mut vals = quad.eval_r(&chi.grad(sys, ell, j));
                    if ell == j {
                        for v in &mut vals {
                            *v += 1.0;
                        }
                    }
                    vals
                })
                .collect()
        })
        .collect();
    let c_vals: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            quad.r_points
                .iter()
                .map(|pt| sys.spec.c_at(pt)[j])
                .collect()
        })
        .collect();
    let n_r = rho.len();
    let rw = 1.0 / n_r as f64;
    let mut r0 = DVector::zeros(d);
    let mut q0 = DMatrix::zeros(d, d);
    for ell in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            for i in 0..n_r {
                acc += mob[ell][j][i] * c_vals[j][i] * rho[i];
            }
        }
        r0[ell] = acc * rw / sys.lambda;
        for kk in 0..d {
            let mut qa = 0.0;
            for j in 0..d {
                for i in 0..n_r {
                    qa += mob[ell][j][i] * alpha[j] * mob[kk][j][i] * rho[i];
                }
            }
            q0[(ell, kk)] = qa * rw / (sys.lambda * sys.lambda);
        }
    }
    let q0 = (&q0 + &q0.transpose()) * 0.5;
    let min_eig = spd_min_eig(&q0)?;
    Ok(Coeffs0 {
        r: r0,
        q: q0,
        min_eig,
    })
}

fn spd_min_eig(q: &DMatrix<f64>) -> Result<f64> {
    let eig = q.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(min)
}

#[derive(Debug, Clone, Serialize)]
pub struct MassSweepRow {
    pub m: f64,
    pub r_m: Vec<f64>,
    /// Row-major Q_m.
    pub q_m: Vec<f64>,
    /// max-norm |r_m − r₀|.
    pub diff_r: f64,
    /// max-norm |Q_m − Q₀|.
    pub diff_q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MassSweep {
    pub rows: Vec<MassSweepRow>,
    pub r_0: Vec<f64>,
    pub q_0: Vec<f64>,
    /// Log-log slope of diff_q in m, when the differences are resolvable.
    pub slope_q: Option<f64>,
    pub slope_r: Option<f64>,
    pub monotone: bool,
}

/// Coefficient convergence along a descending m-list.
pub fn mass_sweep(sys: &FastSystem, m_list: &[f64]) -> Result<MassSweep> {
    if m_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "mass sweep list must be strictly decreasing".into(),
        ));
    }
    let chi = solve_chi(sys)?;
    let c0 = coeffs_0(sys, &chi)?;
    let mut rows = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let set = solve_rho_m(sys, m)?;
        let phi = solve_phi(sys, &set)?;
        let cm = coeffs_m(sys, &set, &phi)?;
        let diff_r = (&cm.r - &c0.r).abs().max();
        let diff_q = (&cm.q - &c0.q).abs().max();
        rows.push(MassSweepRow {
            m,
            r_m: cm.r.as_slice().to_vec(),
            q_m: cm.q.as_slice().to_vec(),
            diff_r,
            diff_q,
        });
    }
    let resolvable = |v: f64| v > 1e-13;
    let slope_of = |sel: &dyn Fn(&MassSweepRow) -> f64| -> Option<f64> {
        if rows.iter().all(|r| resolvable(sel(r))) {
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.m.ln(), sel(r).ln())).collect();
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
        } else {
            None
        }
    };
    let slope_q = slope_of(&|r: &MassSweepRow| r.diff_q);
    let slope_r = slope_of(&|r: &MassSweepRow| r.diff_r);
    let monotone = rows
        .windows(2)
        .all(|w| w[1].diff_q <= w[0].diff_q + 1e-13 && w[1].diff_r <= w[0].diff_r + 1e-13);
    Ok(MassSweep {
        rows,
        r_0: c0.r.as_slice().to_vec(),
        q_0: c0.q.as_slice().to_vec(),
        slope_q,
        slope_r,
        monotone,
    })
}
