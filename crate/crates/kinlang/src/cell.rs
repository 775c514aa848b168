//! Cell problems of the two-scale expansion: the overdamped corrector χ,
//! the kinetic corrector Φ (solved in transformed form), the explicit
//! ladder terms Ψ₁, Ψ₂, and the remainder Ψ₃ᵐ with its order diagnostics.
//!
//! Expansion convention: Ψ = Ψ₀ + √m Ψ₁ + m Ψ₂ + Ψ₃ᵐ with Ψ₀ = χ,
//! where Ψ_ℓ = Φ_ℓ − (√m/λ)p_ℓ solves L^m Ψ_ℓ = −b_ℓ/λ.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::CENTERING_TOL;
use crate::solver::{factor_bordered, solve_bordered};
use crate::spectral::ops::{op_overdamped, op_p_deriv, op_r_deriv_fourier, op_transport};
use crate::spectral::SpectralField;
use crate::stationary::{DensitySet, FastSystem};

/// Residual allowed for the overdamped corrector solve.
pub const CHI_RESIDUAL_TOL: f64 = 1e-10;
/// Residual allowed for the kinetic corrector solve (unscaled operator).
pub const PHI_RESIDUAL_TOL: f64 = 1e-9;
/// Disagreement allowed between the two Ψ₃ᵐ routes.
pub const PSI3_ROUTE_TOL: f64 = 1e-7;
/// Hermite-degree-0 inconsistency allowed in the Ψ₂ equation.
const LADDER_CONSISTENCY_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Overdamped corrector χ.
// ---------------------------------------------------------------------------

/// χ_ℓ on the torus Fourier box, one coefficient vector per slow
/// component, each with zero ρ₀-mean.
#[derive(Debug, Clone)]
pub struct ChiSolution {
    pub components: Vec<DVector<f64>>,
    /// Largest solve residual over components (against the projected rhs).
    pub residual: f64,
    /// Largest |⟨rhs, ρ₀⟩| over components before projection.
    pub solvability_defect: f64,
}

impl ChiSolution {
    /// Fourier coefficients of ∂_{r_axis} χ_ℓ.
    pub fn grad(&self, sys: &FastSystem, ell: usize, axis: usize) -> DVector<f64> {
        let d_op = op_r_deriv_fourier(&sys.basis.fourier, axis);
        d_op.matvec(&self.components[ell])
    }
}

/// Solve L⁰χ_ℓ = −b_ℓ/λ for every component with the zero-ρ₀-mean gauge.
///
/// The discrete left-null direction of L⁰ is the ρ₀ coefficient vector
/// itself (it solves the transposed system), so the solvability defect of
/// each right-hand side is an exact coefficient dot product.
pub fn solve_chi(sys: &FastSystem) -> Result<ChiSolution> {
    let fb = &sys.basis.fourier;
    let drift_means = sys.rho0.drift_means(&sys.spec);
    for &mean in &drift_means {
        if mean.abs() > CENTERING_TOL {
            return Err(Error::Solvability {
                context: "overdamped cell problem centering",
                residual: mean.abs(),
                tolerance: CENTERING_TOL,
            });
        }
    }
    let rho = reproject_rho0(sys);
    let rho_nsq: f64 = rho.iter().map(|v| v * v).sum();
    let op = op_overdamped(fb, &sys.b_polys, sys.lambda, sys.beta);
    let constraint: Vec<(usize, f64)> = rho
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, v))
        .collect();
    let factor = factor_bordered(&op, 0, &constraint, None)?;
    let mut components = Vec::with_capacity(sys.basis.d);
    let mut residual = 0.0f64;
    let mut defect = 0.0f64;
    for ell in 0..sys.basis.d {
        let mut rhs = DVector::from_vec(fb.project_poly(&sys.b_polys[ell]));
        rhs.scale_mut(-1.0 / sys.lambda);
        let k: f64 = rhs.iter().zip(rho.iter()).map(|(a, b)| a * b).sum();
        defect = defect.max(k.abs());
        let proj = &rhs - &rho * (k / rho_nsq);
        let out = factor.solve(&proj, 0.0)?;
        let chi = out.solution;
        let mut r = op.matvec(&chi) - proj;
        r[0] = 0.0; // replaced equation holds by the projection
        residual = residual.max(r.norm());
        components.push(chi);
    }
    if residual > CHI_RESIDUAL_TOL {
        return Err(Error::Solvability {
            context: "overdamped cell problem",
            residual,
            tolerance: CHI_RESIDUAL_TOL,
        });
    }
    Ok(ChiSolution {
        components,
        residual,
        solvability_defect: defect,
    })
}

/// ρ₀ coefficients on the phase-space Fourier box.
fn reproject_rho0(sys: &FastSystem) -> DVector<f64> {
    let fb = &sys.basis.fourier;
    let mut rho = DVector::zeros(fb.len());
    for (fi, mode) in fb.modes.iter().enumerate() {
        rho[fi] = match mode.wave_vector() {
            None => 1.0,
            Some(k) => sys
                .rho0
                .basis
                .cos_index(k)
                .map(|ci| {
                    let is_sin = matches!(mode, crate::spectral::FourierMode::Sin(_));
                    sys.rho0.coeffs[if is_sin { ci + 1 } else { ci }]
                })
                .unwrap_or(0.0),
        };
    }
    rho
}

// ---------------------------------------------------------------------------
// Ladder terms Ψ₁, Ψ₂.
// ---------------------------------------------------------------------------

/// The m-independent expansion terms. κ is the solvability defect of the
/// gauge equation for the r-only part of Ψ₂ (zero for gradient drifts).
pub struct ExpansionTerms {
    pub psi1: Vec<SpectralField>,
    pub psi2: Vec<SpectralField>,
    pub kappa: Vec<f64>,
    /// ‖ℬΨ₀ + λ𝒜Ψ₁‖ over components (should vanish by construction).
    pub ladder_residual: f64,
    /// Largest Hermite-degree-0 inconsistency of the Ψ₂ equation.
    pub consistency: f64,
}

/// Build Ψ₁ exactly and solve for Ψ₂ in the OU complement plus gauge.
pub fn expansion_terms(sys: &FastSystem, chi: &ChiSolution) -> Result<ExpansionTerms> {
    let basis = &sys.basis;
    let fb = &basis.fourier;
    let d = basis.d;
    let b_op = op_transport(basis, &sys.b_polys);
    let rho = reproject_rho0(sys);
    let rho_nsq: f64 = rho.iter().map(|v| v * v).sum();
    // gauge operator βΔ + b·∇ shares its left-null direction with L⁰
    let gauge_op = op_overdamped(fb, &sys.b_polys, 1.0, sys.beta);
    let constraint: Vec<(usize, f64)> = rho
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, v))
        .collect();

    let mut psi1 = Vec::with_capacity(d);
    let mut psi2 = Vec::with_capacity(d);
    let mut kappa = Vec::with_capacity(d);
    let mut ladder_residual = 0.0f64;
    let mut consistency = 0.0f64;
    for ell in 0..d {
        // Ψ₁ = (1/λ)∇_rχ_ℓ·p, assembled exactly in coefficient space
        let mut p1 = SpectralField::zeros(basis.dim());
        for axis in 0..d {
            let g_poly = fb.to_trig_poly(chi.grad(sys, ell, axis).as_slice());
            let part = SpectralField::r_poly_times_p(basis, &g_poly, axis);
            p1.axpy(1.0 / sys.lambda, &part);
        }
        // ℬΨ₀ + λ𝒜Ψ₁ with Ψ₀ = χ (𝒜 is −degree on the orthonormal basis)
        let chi_field = SpectralField::from_r_coeffs(basis, &chi.components[ell]);
        let mut ladder = chi_field.apply(&b_op);
        for (i, c) in ladder.coeffs.iter_mut().enumerate() {
            let g = degree_of(basis, i) as f64;
            *c += sys.lambda * (-g) * p1.coeffs[i];
        }
        ladder_residual = ladder_residual.max(ladder.coeffs.norm());

        // 𝒜Ψ₂ = (1/λ)(−b_ℓ − ℬΨ₁): degree-0 part must vanish, the rest
        // inverts diagonally
        let mut r_field = p1.apply(&b_op);
        let b_field = SpectralField::from_trig_poly(basis, &sys.b_polys[ell]);
        r_field.axpy(1.0, &b_field);
        r_field.scale(-1.0 / sys.lambda);
        let f = fb.len();
        let mut c0 = 0.0f64;
        for i in 0..f {
            c0 += r_field.coeffs[i] * r_field.coeffs[i];
        }
        consistency = consistency.max(c0.sqrt());
        let mut p2 = SpectralField::zeros(basis.dim());
        for i in f..basis.dim() {
            let g = degree_of(basis, i) as f64;
            p2.coeffs[i] = r_field.coeffs[i] / (-g);
        }

        // gauge: βΔψ̂₂ + b·∇ψ̂₂ = −π₀(ℬ[ℬΨ₂^⊥]₁), zero ρ₀-mean
        let u = p2.apply(&b_op);
        let mut u1 = SpectralField::zeros(basis.dim());
        let deg1 = basis.degree_range(1);
        u1.coeffs
            .rows_mut(deg1.start, deg1.len())
            .copy_from(&u.coeffs.rows(deg1.start, deg1.len()));
        let v = u1.apply(&b_op);
        let mut rhs = DVector::zeros(f);
        for i in 0..f {
            rhs[i] = -v.coeffs[i];
        }
        let k: f64 = rhs.iter().zip(rho.iter()).map(|(a, b)| a * b).sum();
        kappa.push(k);
        let proj = &rhs - &rho * (k / rho_nsq);
        let out = solve_bordered(&gauge_op, &proj, 0, &constraint, 0.0, None)?;
        for i in 0..f {
            p2.coeffs[i] = out.solution[i];
        }

        psi1.push(p1);
        psi2.push(p2);
    }
    if consistency > LADDER_CONSISTENCY_TOL {
        return Err(Error::CenteringMismatch(consistency));
    }
    Ok(ExpansionTerms {
        psi1,
        psi2,
        kappa,
        ladder_residual,
        consistency,
    })
}

fn degree_of(basis: &crate::spectral::Basis, idx: usize) -> usize {
    basis.hermite.total_degree(idx / basis.fourier.len())
}

// ---------------------------------------------------------------------------
// Kinetic corrector Φ.
// ---------------------------------------------------------------------------

pub struct PhiSolution {
    pub m: f64,
    /// Φ_ℓ with zero ρᵐ-mean.
    pub phi: Vec<SpectralField>,
    /// Ψ_ℓ = Φ_ℓ − (√m/λ)p_ℓ, also shifted to zero ρᵐ-mean.
    pub psi: Vec<SpectralField>,
    /// Largest unscaled residual of L^mΨ = −b/λ over components.
    pub residual: f64,
    /// Largest |∫ b_ℓ dρᵐ|/λ over components (kinetic centering transfer).
    pub solvability_defect: f64,
}

/// Solve the transformed cell problem L^mΨ_ℓ = −b_ℓ/λ and add back the
/// explicit linear part. One factorization serves all components.
pub fn solve_phi(sys: &FastSystem, set: &DensitySet) -> Result<PhiSolution> {
    let basis = &sys.basis;
    let m = set.m;
    let op = sys.scaled_generator(m);
    let factor = factor_bordered(&op, 0, &[(0, 1.0)], Some(basis))?;
    let w = &set.weight;
    let mut phi = Vec::with_capacity(basis.d);
    let mut psi = Vec::with_capacity(basis.d);
    let mut residual = 0.0f64;
    let mut defect = 0.0f64;
    for ell in 0..basis.d {
        let b_field = SpectralField::from_trig_poly(basis, &sys.b_polys[ell]);
        defect = defect.max(b_field.ip_nu(w).abs() / sys.lambda);
        let mut rhs = b_field.coeffs.clone();
        rhs.scale_mut(-m / sys.lambda);
        let out = factor.solve(&rhs, 0.0)?;
        residual = residual.max(out.solve_residual / m);
        let mut psi_f = SpectralField::from_coeffs(out.solution);
        let mean = psi_f.ip_nu(w);
        psi_f.coeffs[0] -= mean;
        let mut phi_f = psi_f.clone();
        let p_f = SpectralField::p_coordinate(basis, ell);
        phi_f.axpy(m.sqrt() / sys.lambda, &p_f);
        let mean_phi = phi_f.ip_nu(w);
        phi_f.coeffs[0] -= mean_phi;
        phi.push(phi_f);
        psi.push(psi_f);
    }
    if residual > PHI_RESIDUAL_TOL {
        return Err(Error::Solvability {
            context: "kinetic cell problem",
            residual,
            tolerance: PHI_RESIDUAL_TOL,
        });
    }
    Ok(PhiSolution {
        m,
        phi,
        psi,
        residual,
        solvability_defect: defect,
    })
}

// ---------------------------------------------------------------------------
// Remainder Ψ₃ᵐ.
// ---------------------------------------------------------------------------

pub struct Psi3Remainder {
    pub m: f64,
    /// Subtraction-route remainder, zero ρᵐ-mean.
    pub fields: Vec<SpectralField>,
    /// Largest L²(ρ⁰) disagreement with the direct solve of its equation.
    pub route_disagreement: f64,
    /// ‖Ψ₃ᵐ‖_{L²(ρ⁰)} per component.
    pub norm_rho0: Vec<f64>,
    /// ‖(1/√m)∇_pΨ₃ᵐ‖²_{L²(ρᵐ)} per component.
    pub grad_scaled_sq: Vec<f64>,
    /// Relative error of the derivation-consistent gradient identity
    /// lhs = (√m/(λβ))⟨ℬΨ₂, Ψ₃ᵐ⟩_{ρᵐ}.
    pub identity_rel_err: Vec<f64>,
    /// lhs divided by the displayed coefficient (√m/2)⟨ℬΨ₂, Ψ₃ᵐ⟩_{ρᵐ};
    /// ≈ 2/(λβ) wherever the inner product is nonzero.
    pub displayed_ratio: Vec<f64>,
}

/// Ψ₃ᵐ by subtraction and by direct solve of L^mΨ₃ = −√m ℬΨ₂, with the
/// gradient identity evaluated on the subtraction route.
pub fn remainder_psi3(
    sys: &FastSystem,
    set: &DensitySet,
    phi: &PhiSolution,
    terms: &ExpansionTerms,
    chi: &ChiSolution,
) -> Result<Psi3Remainder> {
    let basis = &sys.basis;
    let m = set.m;
    assert_eq!(phi.m, m, "density and corrector must share m");
    let b_op = op_transport(basis, &sys.b_polys);
    let op = sys.scaled_generator(m);
    let factor = factor_bordered(&op, 0, &[(0, 1.0)], Some(basis))?;
    let w = &set.weight;

    let mut fields = Vec::with_capacity(basis.d);
    let mut route_disagreement = 0.0f64;
    let mut norm_rho0 = Vec::with_capacity(basis.d);
    let mut grad_scaled_sq = Vec::with_capacity(basis.d);
    let mut identity_rel_err = Vec::with_capacity(basis.d);
    let mut displayed_ratio = Vec::with_capacity(basis.d);
    for ell in 0..basis.d {
        // subtraction route
        let mut sub = phi.psi[ell].clone();
        let chi_field = SpectralField::from_r_coeffs(basis, &chi.components[ell]);
        sub.axpy(-1.0, &chi_field);
        sub.axpy(-m.sqrt(), &terms.psi1[ell]);
        sub.axpy(-m, &terms.psi2[ell]);
        let mean = sub.ip_nu(w);
        sub.coeffs[0] -= mean;

        // direct route
        let bpsi2 = terms.psi2[ell].apply(&b_op);
        let mut rhs = bpsi2.coeffs.clone();
        rhs.scale_mut(-m * m.sqrt());
        let out = factor.solve(&rhs, 0.0)?;
        let mut dir = SpectralField::from_coeffs(out.solution);
        let mean_dir = dir.ip_nu(w);
        dir.coeffs[0] -= mean_dir;

        let mut diff = sub.clone();
        diff.axpy(-1.0, &dir);
        route_disagreement = route_disagreement.max(sys.norm_rho0(&diff));

        norm_rho0.push(sys.norm_rho0(&sub));

        let mut lhs = 0.0;
        for axis in 0..basis.d {
            let dp = sub.apply(&op_p_deriv(basis, axis));
            lhs += sys.ip_weighted_by(w, &dp, &dp);
        }
        lhs /= m;
        grad_scaled_sq.push(lhs);
        let ip = sys.ip_weighted_by(w, &bpsi2, &sub);
        let rhs_true = m.sqrt() / (sys.lambda * sys.beta) * ip;
        let rel = (lhs - rhs_true).abs() / lhs.abs().max(rhs_true.abs()).max(1e-14);
        identity_rel_err.push(rel);
        let displayed = 0.5 * m.sqrt() * ip;
        displayed_ratio.push(if displayed.abs() > 1e-14 {
            lhs / displayed
        } else {
            f64::NAN
        });

        fields.push(sub);
    }
    if route_disagreement > PSI3_ROUTE_TOL {
        return Err(Error::Truncation {
            context: "remainder route agreement",
            detail: "subtraction and direct solves disagree; raise the truncation",
            value: route_disagreement,
            tolerance: PSI3_ROUTE_TOL,
        });
    }
    Ok(Psi3Remainder {
        m,
        fields,
        route_disagreement,
        norm_rho0,
        grad_scaled_sq,
        identity_rel_err,
        displayed_ratio,
    })
}

// ---------------------------------------------------------------------------
// Convergence metric and bundle.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub m: f64,
    /// ‖(1/√m)∇_pΦ − (1/λ)(I + ∇_rχ)‖_{L²(ρ⁰)} (Frobenius over components).
    pub metric: f64,
}

/// The Frobenius convergence metric at one solved corrector.
pub fn convergence_metric(
    sys: &FastSystem,
    chi: &ChiSolution,
    phi: &PhiSolution,
) -> Result<f64> {
    let basis = &sys.basis;
    let inv_sm = 1.0 / phi.m.sqrt();
    let mut acc = 0.0;
    for ell in 0..basis.d {
        for axis in 0..basis.d {
            let mut err = phi.phi[ell].apply(&op_p_deriv(basis, axis));
            err.scale(inv_sm);
            let g = chi.grad(sys, ell, axis);
            let g_field = SpectralField::from_r_coeffs(basis, &g);
            err.axpy(-1.0 / sys.lambda, &g_field);
            if ell == axis {
                err.coeffs[0] -= 1.0 / sys.lambda;
            }
            acc += sys.ip_rho0(&err, &err);
        }
    }
    Ok(acc.max(0.0).sqrt())
}

/// Metric along a descending m-list; each point does its own stationary
/// and corrector solves.
pub fn cell_convergence_metric(sys: &FastSystem, m_list: &[f64]) -> Result<Vec<MetricRow>> {
    if m_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "metric mass list must be strictly decreasing".into(),
        ));
    }
    let chi = solve_chi(sys)?;
    let mut rows = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let set = crate::stationary::solve_rho_m(sys, m)?;
        let phi = solve_phi(sys, &set)?;
        rows.push(MetricRow {
            m,
            metric: convergence_metric(sys, &chi, &phi)?,
        });
    }
    Ok(rows)
}

/// Everything the `cell` command reports for one (preset, m).
pub struct CellSolution {
    pub chi: ChiSolution,
    pub terms: ExpansionTerms,
    pub phi: PhiSolution,
    pub psi3: Psi3Remainder,
    pub metric: f64,
}

pub fn solve_cell(sys: &FastSystem, set: &DensitySet) -> Result<CellSolution> {
    let chi = solve_chi(sys)?;
    let terms = expansion_terms(sys, &chi)?;
    let phi = solve_phi(sys, set)?;
    let psi3 = remainder_psi3(sys, set, &phi, &terms, &chi)?;
    let metric = convergence_metric(sys, &chi, &phi)?;
    Ok(CellSolution {
        chi,
        terms,
        phi,
        psi3,
        metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PresetName, ProblemSpec};
    use crate::stationary::solve_rho_m;

    const I0_1: f64 = 1.2660658777520084;

    fn gradient_system() -> FastSystem {
        let spec = ProblemSpec::preset(PresetName::GradientDrift);
        FastSystem::new(&spec, 16, 12).unwrap()
    }

    #[test]
    fn chi_vanishes_for_zero_drift() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let sys = FastSystem::new(&spec, 8, 4).unwrap();
        let chi = solve_chi(&sys).unwrap();
        assert!(chi.components[0].norm() < 1e-12);
        let set = solve_rho_m(&sys, 0.1).unwrap();
        let terms = expansion_terms(&sys, &chi).unwrap();
        assert!(terms.psi1[0].coeffs.norm() < 1e-12);
        assert!(terms.psi2[0].coeffs.norm() < 1e-12);
        let phi = solve_phi(&sys, &set).unwrap();
        // Φ = √m·p exactly for b ≡ 0, λ = 1
        let p = SpectralField::p_coordinate(&sys.basis, 0);
        let mut diff = phi.phi[0].clone();
        diff.axpy(-0.1f64.sqrt(), &p);
        assert!(diff.coeffs.norm() < 1e-12, "‖Φ−√m p‖ = {}", diff.coeffs.norm());
        let psi3 = remainder_psi3(&sys, &set, &phi, &terms, &chi).unwrap();
        assert!(psi3.norm_rho0[0] < 1e-12);
        let metric = convergence_metric(&sys, &chi, &phi).unwrap();
        assert!(metric < 1e-11, "metric = {metric}");
    }

    #[test]
    fn chi_matches_closed_form_for_cosine_potential() {
        // V = cos(2πr): 1 + χ′(r) = e^{V(r)}/I₀(1)
        let sys = gradient_system();
        let chi = solve_chi(&sys).unwrap();
        let fb = &sys.basis.fourier;
        let gpoly = fb.to_trig_poly(chi.grad(&sys, 0, 0).as_slice());
        for t in 0..11 {
            let r = [t as f64 / 11.0];
            let expect = (2.0 * std::f64::consts::PI * r[0]).cos().exp() / I0_1;
            let got = 1.0 + gpoly.eval(&r);
            assert!((got - expect).abs() < 1e-8, "r={}: {got} vs {expect}", r[0]);
        }
        // effective mobility ∫(1+χ′)²ρ₀ = 1/I₀(1)²
        let quad = sys.quadrature();
        let vals = quad.eval_r(&chi.grad(&sys, 0, 0));
        let rho = sys.rho0_values(&quad);
        let mut acc = 0.0;
        for (v, r) in vals.iter().zip(rho.iter()) {
            acc += (1.0 + v) * (1.0 + v) * r;
        }
        acc /= quad.n_r as f64;
        let expect = 1.0 / (I0_1 * I0_1);
        assert!((acc - expect).abs() < 1e-8, "{acc} vs {expect}");
    }

    #[test]
    fn uncentered_drift_is_rejected() {
        let mut spec = ProblemSpec::preset(PresetName::GradientDrift);
        spec.tilt = vec![0.4];
        let sys = FastSystem::new(&spec, 12, 10).unwrap();
        let err = solve_chi(&sys).unwrap_err();
        assert!(matches!(err, Error::Solvability { .. }), "{err:?}");
    }

    #[test]
    fn ladder_equation_residuals_vanish() {
        let sys = gradient_system();
        let chi = solve_chi(&sys).unwrap();
        let terms = expansion_terms(&sys, &chi).unwrap();
        assert!(terms.ladder_residual < 1e-10, "{}", terms.ladder_residual);
        assert!(terms.consistency < 1e-10, "{}", terms.consistency);
        // gradient drift: gauge equation solvable without obstruction
        assert!(terms.kappa[0].abs() < 1e-9, "κ = {}", terms.kappa[0]);
    }

    #[test]
    fn psi3_routes_agree_and_identity_holds() {
        let sys = gradient_system();
        let chi = solve_chi(&sys).unwrap();
        let terms = expansion_terms(&sys, &chi).unwrap();
        let set = solve_rho_m(&sys, 0.1).unwrap();
        let phi = solve_phi(&sys, &set).unwrap();
        let psi3 = remainder_psi3(&sys, &set, &phi, &terms, &chi).unwrap();
        assert!(psi3.route_disagreement < 1e-9, "{}", psi3.route_disagreement);
        assert!(psi3.norm_rho0[0] > 1e-8, "remainder should be nonzero");
        assert!(
            psi3.identity_rel_err[0] < 1e-6,
            "identity error {}",
            psi3.identity_rel_err[0]
        );
        // λ = β = 1: displayed coefficient is off by exactly 2
        assert!(
            (psi3.displayed_ratio[0] - 2.0).abs() < 1e-4,
            "ratio {}",
            psi3.displayed_ratio[0]
        );
        // zero ρᵐ-mean
        assert!(psi3.fields[0].ip_nu(&set.weight).abs() < 1e-13);
    }

    #[test]
    fn metric_decreases_in_m() {
        let sys = gradient_system();
        let rows = cell_convergence_metric(&sys, &[0.2, 0.1, 0.05]).unwrap();
        assert!(rows[0].metric > rows[1].metric && rows[1].metric > rows[2].metric);
    }

    #[test]
    fn phi_is_independent_of_observable() {
        // doubling c must leave Φ unchanged (cell problem has no c)
        let spec = ProblemSpec::preset(PresetName::GradientDrift);
        let mut spec2 = spec.clone();
        for comp in &mut spec2.c.components {
            comp.constant *= 2.0;
            for mode in &mut comp.modes {
                mode.cos *= 2.0;
                mode.sin *= 2.0;
            }
        }
        let sys = FastSystem::new(&spec, 12, 12).unwrap();
        let sys2 = FastSystem::new(&spec2, 12, 12).unwrap();
        let set = solve_rho_m(&sys, 0.1).unwrap();
        let set2 = solve_rho_m(&sys2, 0.1).unwrap();
        let phi = solve_phi(&sys, &set).unwrap();
        let phi2 = solve_phi(&sys2, &set2).unwrap();
        let mut diff = phi.phi[0].clone();
        diff.axpy(-1.0, &phi2.phi[0]);
        assert!(diff.coeffs.norm() < 1e-12);
    }
}
