//! Stationary structure of the fast system: the overdamped density ρ₀ on
//! the torus, the drift defect field h, and the kinetic stationary density
//! ρᵐ computed by two independent routes and cross-checked.
//!
//! Measure conventions: ν = N(0, βI)(dp) ⊗ Leb(dr) is the orthonormality
//! measure of the basis; ρ⁰ = ρ₀(r)·ν is the product reference; ρᵐ = w·ν
//! with w the route-1 weight; δᵐ = ρᵐ/ρ⁰ − 1 is the route-2 unknown.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ProblemSpec, TrigMode, TrigPoly};
use crate::solver::solve_bordered;
use crate::spectral::ops::{
    op_generator, op_mult_p_dot, op_ou, op_overdamped, op_p_deriv, op_r_deriv, op_transport,
    CooMatrix,
};
use crate::spectral::{
    build_basis, Basis, FourierBasis, Quadrature, SpectralField, TriplePlan,
};

/// Galerkin residual allowed for the overdamped stationary solve.
pub const RHO0_RESIDUAL_TOL: f64 = 1e-10;
/// Unscaled nullspace residual allowed for ρᵐ.
pub const NULLSPACE_RESIDUAL_TOL: f64 = 1e-9;
/// Route disagreement above this aborts (truncation too small).
pub const ROUTE_CONSISTENCY_LIMIT: f64 = 1e-5;
/// Smallest density value tolerated before spectral division.
pub const RHO_FLOOR: f64 = 1e-9;
/// Defect-field Fourier coefficients below this are dropped.
const H_COEFF_FLOOR: f64 = 1e-12;

/// Default (hermite, fourier) truncation per dimension.
pub fn default_truncation(d: usize) -> (usize, usize) {
    match d {
        1 => (40, 16),
        _ => (8, 5),
    }
}

/// Enlarged truncation used for cross-checking.
pub fn cross_truncation(d: usize) -> (usize, usize) {
    match d {
        1 => (60, 24),
        _ => (10, 6),
    }
}

// ---------------------------------------------------------------------------
// Overdamped stationary density ρ₀.
// ---------------------------------------------------------------------------

/// Stationary density of the overdamped generator (1/λ)b·∇_r + βΔ_r,
/// stored as orthonormal Fourier coefficients with unit mass.
#[derive(Debug, Clone)]
pub struct Rho0 {
    pub basis: FourierBasis,
    pub coeffs: DVector<f64>,
    /// ‖(L⁰)*ρ̂‖ over the whole truncated system.
    pub residual: f64,
    /// Minimum over the positivity check grid.
    pub min_value: f64,
}

impl Rho0 {
    pub fn eval_with_buf(&self, r: &[f64], buf: &mut [f64]) -> f64 {
        self.basis.eval_modes(r, buf);
        buf.iter()
            .zip(self.coeffs.iter())
            .map(|(&m, &c)| m * c)
            .sum()
    }

    pub fn eval(&self, r: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.basis.len()];
        self.eval_with_buf(r, &mut buf)
    }

    /// ∇ρ₀ at a point.
    pub fn eval_grad(&self, r: &[f64]) -> Vec<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut out = vec![0.0; self.basis.d];
        let sqrt2 = std::f64::consts::SQRT_2;
        for (i, mode) in self.basis.modes.iter().enumerate() {
            let c = self.coeffs[i];
            if c == 0.0 {
                continue;
            }
            match mode {
                crate::spectral::FourierMode::Const => {}
                crate::spectral::FourierMode::Cos(k) => {
                    let phase: f64 = k.iter().zip(r).map(|(&ki, &ri)| f64::from(ki) * ri).sum();
                    let s = (two_pi * phase).sin();
                    for (ax, o) in out.iter_mut().enumerate() {
                        *o += -c * sqrt2 * two_pi * f64::from(k[ax]) * s;
                    }
                }
                crate::spectral::FourierMode::Sin(k) => {
                    let phase: f64 = k.iter().zip(r).map(|(&ki, &ri)| f64::from(ki) * ri).sum();
                    let cs = (two_pi * phase).cos();
                    for (ax, o) in out.iter_mut().enumerate() {
                        *o += c * sqrt2 * two_pi * f64::from(k[ax]) * cs;
                    }
                }
            }
        }
        out
    }

    /// ∫ b_i ρ₀ dr for every component, exact in coefficient space.
    pub fn drift_means(&self, spec: &ProblemSpec) -> Vec<f64> {
        (0..spec.d)
            .map(|i| {
                let bi = self.basis.project_poly(&spec.b_poly(i));
                bi.iter()
                    .zip(self.coeffs.iter())
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// ∫ f ρ₀ dr for a trigonometric polynomial.
    pub fn mean_of(&self, poly: &TrigPoly) -> f64 {
        let f = self.basis.project_poly(poly);
        f.iter().zip(self.coeffs.iter()).map(|(&a, &b)| a * b).sum()
    }
}

/// Solve (L⁰)*ρ₀ = 0 on the torus with unit mass and a positivity check.
pub fn solve_rho0(spec: &ProblemSpec, fourier_k: usize) -> Result<Rho0> {
    let needed = spec.max_harmonic().max(0) as usize;
    if fourier_k < needed.max(2) {
        return Err(Error::InvalidParameter(format!(
            "Fourier cutoff {fourier_k} below drift harmonic content {needed}"
        )));
    }
    let lambda = spec.lambda_at(&spec.q0);
    let fb = FourierBasis::new(spec.d, fourier_k);
    let b_polys: Vec<TrigPoly> = (0..spec.d).map(|i| spec.b_poly(i)).collect();
    let l0 = op_overdamped(&fb, &b_polys, lambda, spec.beta);
    let adj = l0.transpose();
    let rhs = DVector::zeros(fb.len());
    let out = solve_bordered(&adj, &rhs, 0, &[(0, 1.0)], 1.0, None)?;
    let coeffs = out.solution;
    // full stationarity residual; the replaced equation is identically zero
    let residual = adj.matvec(&coeffs).norm();
    if residual > RHO0_RESIDUAL_TOL {
        return Err(Error::Solvability {
            context: "overdamped stationary solve",
            residual,
            tolerance: RHO0_RESIDUAL_TOL,
        });
    }
    let rho0 = Rho0 {
        basis: fb,
        coeffs,
        residual,
        min_value: f64::INFINITY,
    };
    let n = (8 * fourier_k).max(64);
    let mut min_value = f64::INFINITY;
    let mut buf = vec![0.0; rho0.basis.len()];
    let mut r = vec![0.0; spec.d];
    let total = n.pow(spec.d as u32);
    for j in 0..total {
        let mut rem = j;
        for ax in (0..spec.d).rev() {
            r[ax] = (rem % n) as f64 / n as f64;
            rem /= n;
        }
        min_value = min_value.min(rho0.eval_with_buf(&r, &mut buf));
    }
    if min_value <= RHO_FLOOR {
        return Err(Error::Truncation {
            context: "overdamped stationary density",
            detail: "density not strictly positive on the check grid",
            value: min_value,
            tolerance: RHO_FLOOR,
        });
    }
    Ok(Rho0 { min_value, ..rho0 })
}

// ---------------------------------------------------------------------------
// Drift defect field h.
// ---------------------------------------------------------------------------

/// Componentwise h_i = b_i/β − ∂_{r_i} log ρ₀, projected onto harmonics
/// ‖k‖_∞ ≤ k_out by discrete Fourier sums. Vanishes identically when the
/// drift balances the density gradient (reversible case).
pub fn defect_field(
    spec: &ProblemSpec,
    rho0: &Rho0,
    k_out: usize,
) -> Result<Vec<TrigPoly>> {
    let d = spec.d;
    let n = (4 * k_out + 16).max(64);
    let total = n.pow(d as u32);
    let target = FourierBasis::new(d, k_out);
    let mut sums = vec![vec![0.0; target.len()]; d];
    let mut mode_buf = vec![0.0; target.len()];
    let mut rho_buf = vec![0.0; rho0.basis.len()];
    let mut r = vec![0.0; d];
    for j in 0..total {
        let mut rem = j;
        for ax in (0..d).rev() {
            r[ax] = (rem % n) as f64 / n as f64;
            rem /= n;
        }
        let rho = rho0.eval_with_buf(&r, &mut rho_buf);
        if rho <= RHO_FLOOR {
            return Err(Error::Truncation {
                context: "defect field division",
                detail: "stationary density below floor on projection grid",
                value: rho,
                tolerance: RHO_FLOOR,
            });
        }
        let grad = rho0.eval_grad(&r);
        let b = spec.b_at(&r);
        target.eval_modes(&r, &mut mode_buf);
        for ax in 0..d {
            let h = b[ax] / spec.beta - grad[ax] / rho;
            for (s, &m) in sums[ax].iter_mut().zip(mode_buf.iter()) {
                *s += h * m;
            }
        }
    }
    let scale = 1.0 / total as f64;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(d);
    for sums_ax in sums {
        let mut poly = TrigPoly {
            constant: 0.0,
            modes: Vec::new(),
        };
        let c0 = sums_ax[0] * scale;
        if c0.abs() > H_COEFF_FLOOR {
            poly.constant = c0;
        }
        let mut i = 1;
        while i < target.len() {
            let k = target.modes[i]
                .wave_vector()
                .expect("non-constant mode")
                .to_vec();
            let cos = sums_ax[i] * scale * sqrt2;
            let sin = sums_ax[i + 1] * scale * sqrt2;
            if cos.abs() > H_COEFF_FLOOR || sin.abs() > H_COEFF_FLOOR {
                poly.modes.push(TrigMode {
                    k,
                    cos: if cos.abs() > H_COEFF_FLOOR { cos } else { 0.0 },
                    sin: if sin.abs() > H_COEFF_FLOOR { sin } else { 0.0 },
                });
            }
            i += 2;
        }
        out.push(poly);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shared fast-system context.
// ---------------------------------------------------------------------------

/// Everything the fast-system solves share at a frozen slow position:
/// basis, overdamped density, defect field, and coefficient polynomials.
pub struct FastSystem {
    pub spec: ProblemSpec,
    pub lambda: f64,
    pub beta: f64,
    pub basis: Basis,
    pub rho0: Rho0,
    pub h: Vec<TrigPoly>,
    pub b_polys: Vec<TrigPoly>,
    plan: TriplePlan,
    rho0_embed: SpectralField,
}

impl FastSystem {
    pub fn new(spec: &ProblemSpec, n_hermite: usize, fourier_k: usize) -> Result<Self> {
        spec.validate()?;
        let basis = build_basis(spec.d, n_hermite, fourier_k, spec.beta)?;
        let rho0 = solve_rho0(spec, fourier_k)?;
        let h = defect_field(spec, &rho0, 2 * fourier_k + 8)?;
        let b_polys: Vec<TrigPoly> = (0..spec.d).map(|i| spec.b_poly(i)).collect();
        let plan = TriplePlan::new(&basis);
        let mut rho0_embed = SpectralField::zeros(basis.dim());
        for (fi, mode) in basis.fourier.modes.iter().enumerate() {
            rho0_embed.coeffs[fi] = match mode.wave_vector() {
                None => 1.0,
                Some(k) => rho0
                    .basis
                    .cos_index(k)
                    .map(|ci| {
                        let is_sin = matches!(mode, crate::spectral::FourierMode::Sin(_));
                        rho0.coeffs[if is_sin { ci + 1 } else { ci }]
                    })
                    .unwrap_or(0.0),
            };
        }
        Ok(FastSystem {
            spec: spec.clone(),
            lambda: spec.lambda_at(&spec.q0),
            beta: spec.beta,
            basis,
            rho0,
            h,
            b_polys,
            plan,
            rho0_embed,
        })
    }

    /// Shared coefficient-space pairing plan.
    pub fn triple(&self) -> &TriplePlan {
        &self.plan
    }

    /// ρ₀ as a field on the phase-space box (Hermite-0 block).
    pub fn rho0_embedded(&self) -> &SpectralField {
        &self.rho0_embed
    }

    /// ⟨u, v⟩_{L²(ρ⁰)}, exact for box fields.
    pub fn ip_rho0(&self, u: &SpectralField, v: &SpectralField) -> f64 {
        self.plan.ip3(u, v, &self.rho0_embed)
    }

    /// ‖u‖_{L²(ρ⁰)}.
    pub fn norm_rho0(&self, u: &SpectralField) -> f64 {
        self.ip_rho0(u, u).max(0.0).sqrt()
    }

    /// ⟨u, v⟩ against a kinetic stationary weight w = dρᵐ/dν.
    pub fn ip_weighted_by(&self, w: &SpectralField, u: &SpectralField, v: &SpectralField) -> f64 {
        self.plan.ip3(u, v, w)
    }

    pub fn is_fd(&self) -> bool {
        self.spec.is_fluctuation_dissipation()
    }

    /// Fast generator L^m (fluctuation–dissipation or explicit α).
    pub fn generator(&self, m: f64) -> CooMatrix {
        let alpha;
        let alpha_opt = if self.is_fd() {
            None
        } else {
            alpha = self.spec.alpha_diag(&self.spec.q0);
            Some(alpha.as_slice())
        };
        op_generator(&self.basis, &self.b_polys, self.lambda, m, alpha_opt)
    }

    /// m·L^m = λA + √m·B: the scaling used for linear solves, which keeps
    /// the matrix O(1) as m → 0.
    pub fn scaled_generator(&self, m: f64) -> CooMatrix {
        let mut op = op_ou(&self.basis);
        op.scale(self.lambda);
        let b = op_transport(&self.basis, &self.b_polys);
        op.axpy(m.sqrt(), &b);
        op
    }

    /// m·(L^m)^{*,ρ⁰} = λA − √m·B + √m·mult(p·h).
    pub fn scaled_adjoint(&self, m: f64) -> CooMatrix {
        let mut op = op_ou(&self.basis);
        op.scale(self.lambda);
        let b = op_transport(&self.basis, &self.b_polys);
        op.axpy(-m.sqrt(), &b);
        let hm = op_mult_p_dot(&self.basis, &self.h);
        op.axpy(m.sqrt(), &hm);
        op
    }

    /// The field p·h(r) on the phase-space basis.
    pub fn ph_field(&self) -> SpectralField {
        let mut f = SpectralField::zeros(self.basis.dim());
        for axis in 0..self.basis.d {
            let part = SpectralField::r_poly_times_p(&self.basis, &self.h[axis], axis);
            f.axpy(1.0, &part);
        }
        f
    }

    /// Zero-mean constraint row ⟨ρ₀, ·⟩_ν confined to the Hermite-0 block.
    pub fn rho0_constraint(&self) -> Vec<(usize, f64)> {
        let f = self.basis.fourier.len();
        (0..f)
            .filter_map(|fi| {
                let v = self.rho0_embed.coeffs[fi];
                (v != 0.0).then_some((fi, v))
            })
            .collect()
    }

    pub fn quadrature(&self) -> Quadrature {
        Quadrature::for_basis(&self.basis)
    }

    /// ρ₀ values on a quadrature r-grid.
    pub fn rho0_values(&self, quad: &Quadrature) -> Vec<f64> {
        let mut buf = vec![0.0; self.rho0.basis.len()];
        quad.r_points
            .iter()
            .map(|r| self.rho0.eval_with_buf(r, &mut buf))
            .collect()
    }

    /// p·h(r) values on the full quadrature grid.
    pub fn ph_values(&self, quad: &Quadrature) -> nalgebra::DMatrix<f64> {
        let d = self.basis.d;
        let h_vals: Vec<Vec<f64>> = (0..d)
            .map(|ax| quad.r_points.iter().map(|r| self.h[ax].eval(r)).collect())
            .collect();
        let mut table = nalgebra::DMatrix::zeros(quad.n_p, quad.n_r);
        for a in 0..quad.n_p {
            for b in 0..quad.n_r {
                let mut v = 0.0;
                for ax in 0..d {
                    v += quad.p_points[a][ax] * h_vals[ax][b];
                }
                table[(a, b)] = v;
            }
        }
        table
    }
}

// ---------------------------------------------------------------------------
// Kinetic stationary density ρᵐ by two routes.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DensityNorms {
    pub l2: f64,
    pub h1: f64,
    pub grad_p: f64,
    pub grad_r: f64,
}

pub struct DensitySet {
    pub m: f64,
    /// Route-1 weight w = dρᵐ/dν with w₀ = 1.
    pub weight: SpectralField,
    /// Route-2 deviation δᵐ = dρᵐ/dρ⁰ − 1 with exact zero ρ⁰-mean.
    pub delta: SpectralField,
    /// ‖δ_route1 − δ_route2‖_{L²(ρ⁰)} by quadrature.
    pub route_agreement: f64,
    /// Unscaled ‖(L^m)* w‖.
    pub nullspace_residual: f64,
    /// Bordered residual of the route-2 solve (m-scaled system).
    pub delta_residual: f64,
    pub norms: DensityNorms,
}

impl DensitySet {
    /// ρ̃ᵐ = 1 + δᵐ.
    pub fn rho_tilde(&self) -> SpectralField {
        let mut f = self.delta.clone();
        f.coeffs[0] += 1.0;
        f
    }

    /// Componentwise max of |∫ b_i dρᵐ| (centering transfer to the kinetic
    /// stationary law), exact in coefficient space.
    pub fn drift_mean_m(&self, sys: &FastSystem) -> f64 {
        (0..sys.basis.d)
            .map(|i| {
                let bi = SpectralField::from_trig_poly(&sys.basis, &sys.b_polys[i]);
                bi.ip_nu(&self.weight).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Solve for ρᵐ by both routes and cross-check them.
///
/// Route 1: left null vector of the Galerkin L^m (bordered by w₀ = 1),
/// then δ₁ = w/ρ₀ − 1 pointwise. Route 2: the ρ⁰-adjoint equation
/// m·M δ = −√m·p·h with the zero-ρ⁰-mean row appended.
pub fn solve_rho_m(sys: &FastSystem, m: f64) -> Result<DensitySet> {
    if !sys.is_fd() {
        return Err(Error::InvalidParameter(
            "stationary density routes require fluctuation-dissipation noise".into(),
        ));
    }
    if m < crate::model::M_MIN {
        return Err(Error::InvalidParameter(format!(
            "m = {m} below the stiffness floor {}",
            crate::model::M_MIN
        )));
    }
    let basis = &sys.basis;

    // route 1
    let g = sys.scaled_generator(m);
    let gt = g.transpose();
    let rhs = DVector::zeros(basis.dim());
    let w_out = solve_bordered(&gt, &rhs, 0, &[(0, 1.0)], 1.0, Some(basis))?;
    let weight = SpectralField::from_coeffs(w_out.solution);
    let nullspace_residual = gt.matvec(&weight.coeffs).norm() / m;
    if nullspace_residual > NULLSPACE_RESIDUAL_TOL {
        return Err(Error::Solvability {
            context: "kinetic stationary null-space solve",
            residual: nullspace_residual,
            tolerance: NULLSPACE_RESIDUAL_TOL,
        });
    }

    // route 2
    let madj = sys.scaled_adjoint(m);
    let mut rhs2 = sys.ph_field();
    rhs2.scale(-m.sqrt());
    let con = sys.rho0_constraint();
    let d_out = solve_bordered(&madj, &rhs2.coeffs, 0, &con, 0.0, Some(basis))?;
    let delta = SpectralField::from_coeffs(d_out.solution);

    // cross-check in L²(ρ⁰): the momentum direction stays in coefficient
    // space (Hermite profiles per torus node), so no high-degree pointwise
    // Hermite values ever enter
    let plan = sys.triple();
    let mut rbuf = vec![0.0; sys.rho0.basis.len()];
    let rho0_vals: Vec<f64> = plan
        .r_nodes()
        .iter()
        .map(|r| sys.rho0.eval_with_buf(r, &mut rbuf))
        .collect();
    if rho0_vals.iter().any(|&v| v <= RHO_FLOOR) {
        return Err(Error::Truncation {
            context: "route comparison division",
            detail: "stationary density below floor on the torus grid",
            value: rho0_vals.iter().copied().fold(f64::INFINITY, f64::min),
            tolerance: RHO_FLOOR,
        });
    }
    let wprof = plan.profile(&weight);
    let dprof = plan.profile(&delta);
    let mut agree2 = 0.0;
    for (node, &rho) in rho0_vals.iter().enumerate() {
        let inv = 1.0 / rho;
        let wc = wprof.0.column(node);
        let dc = dprof.0.column(node);
        let mut e2 = (wc[0] * inv - 1.0 - dc[0]).powi(2);
        for a in 1..wc.len() {
            e2 += (wc[a] * inv - dc[a]).powi(2);
        }
        agree2 += rho * e2;
    }
    let route_agreement = (agree2 * plan.node_weight()).max(0.0).sqrt();
    if route_agreement > ROUTE_CONSISTENCY_LIMIT {
        return Err(Error::Truncation {
            context: "stationary density route agreement",
            detail: "independent routes disagree; raise the truncation",
            value: route_agreement,
            tolerance: ROUTE_CONSISTENCY_LIMIT,
        });
    }

    // norms of δᵐ in L²(ρ⁰) and its phase-space gradient
    let l2 = sys.norm_rho0(&delta);
    let mut gp2 = 0.0;
    let mut gr2 = 0.0;
    for axis in 0..basis.d {
        let dp = delta.apply(&op_p_deriv(basis, axis));
        gp2 += sys.ip_rho0(&dp, &dp);
        let dr = delta.apply(&op_r_deriv(basis, axis));
        gr2 += sys.ip_rho0(&dr, &dr);
    }
    let norms = DensityNorms {
        l2,
        h1: (l2 * l2 + gp2 + gr2).sqrt(),
        grad_p: gp2.max(0.0).sqrt(),
        grad_r: gr2.max(0.0).sqrt(),
    };

    Ok(DensitySet {
        m,
        weight,
        delta,
        route_agreement,
        nullspace_residual,
        delta_residual: d_out.solve_residual,
        norms,
    })
}

// ---------------------------------------------------------------------------
// Hypocoercivity sweep.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub m: f64,
    pub norm_l2: f64,
    pub norm_h1: f64,
    pub grad_p: f64,
    pub grad_r: f64,
    pub route_agreement: f64,
    /// λβ‖∇_pδ‖²_{ρ⁰} (left side of the gradient identity).
    pub identity_lhs: f64,
    /// (√m/2)⟨hp, δ²⟩_{ρ⁰} + √m⟨hp, δ⟩_{ρ⁰}.
    pub identity_rhs: f64,
    pub identity_rel_err: f64,
    /// Least-squares slope of log‖δ‖ vs log m over rows seen so far.
    pub slope_so_far: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Full-sweep log-log slope of ‖δᵐ‖ in m.
    pub slope: f64,
    pub strictly_decreasing: bool,
}

/// Norm decay of δᵐ along a descending m-list, with the per-point gradient
/// identity evaluated by quadrature on both sides.
pub fn hypocoercivity_sweep(
    sys: &FastSystem,
    m_list: &[f64],
) -> Result<SweepResult> {
    if m_list.len() < 2 {
        return Err(Error::InvalidParameter(
            "sweep needs at least two mass values".into(),
        ));
    }
    if m_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "sweep mass list must be strictly decreasing".into(),
        ));
    }
    let sets: Vec<Result<(DensitySet, f64, f64)>> = m_list
        .par_iter()
        .map(|&m| {
            let set = solve_rho_m(sys, m)?;
            let (lhs, rhs) = gradient_identity_sides(sys, &set)?;
            Ok((set, lhs, rhs))
        })
        .collect();
    let mut rows = Vec::with_capacity(m_list.len());
    let mut logs: Vec<(f64, f64)> = Vec::new();
    for item in sets {
        let (set, lhs, rhs) = item?;
        logs.push((set.m.ln(), set.norms.l2.max(f64::MIN_POSITIVE).ln()));
        let slope_so_far = if logs.len() >= 2 {
            Some(least_squares_slope(&logs))
        } else {
            None
        };
        rows.push(SweepRow {
            m: set.m,
            norm_l2: set.norms.l2,
            norm_h1: set.norms.h1,
            grad_p: set.norms.grad_p,
            grad_r: set.norms.grad_r,
            route_agreement: set.route_agreement,
            identity_lhs: lhs,
            identity_rhs: rhs,
            identity_rel_err: (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-14),
            slope_so_far,
        });
    }
    let slope = least_squares_slope(&logs);
    let strictly_decreasing = rows.windows(2).all(|w| w[1].norm_l2 < w[0].norm_l2);
    Ok(SweepResult {
        rows,
        slope,
        strictly_decreasing,
    })
}

/// Both sides of the gradient identity
/// λβ‖∇_pδ‖²_{ρ⁰} = (√m/2)⟨hp, δ²⟩_{ρ⁰} + √m⟨hp, δ⟩_{ρ⁰},
/// each side assembled independently. The defect field h keeps its full
/// harmonic content and enters pointwise on the torus grid; the momentum
/// pairings ⟨p_i δ, δ^j⟩ are exact through the box projection of p_i δ.
pub fn gradient_identity_sides(sys: &FastSystem, set: &DensitySet) -> Result<(f64, f64)> {
    let mut lhs = 0.0;
    for axis in 0..sys.basis.d {
        let dp = set.delta.apply(&op_p_deriv(&sys.basis, axis));
        lhs += sys.ip_rho0(&dp, &dp);
    }
    lhs *= sys.lambda * sys.beta;

    let plan = sys.triple();
    let dprof = plan.profile(&set.delta);
    let sm = set.m.sqrt();
    let mut rbuf = vec![0.0; sys.rho0.basis.len()];
    let mut rhs = 0.0;
    for axis in 0..sys.basis.d {
        let unit: Vec<TrigPoly> = (0..sys.basis.d)
            .map(|ax| TrigPoly {
                constant: if ax == axis { 1.0 } else { 0.0 },
                modes: Vec::new(),
            })
            .collect();
        let pdelta = set.delta.apply(&op_mult_p_dot(&sys.basis, &unit));
        let pprof = plan.profile(&pdelta);
        for (node, r) in plan.r_nodes().iter().enumerate() {
            let hv = sys.h[axis].eval(r);
            if hv == 0.0 {
                continue;
            }
            let rho = sys.rho0.eval_with_buf(r, &mut rbuf);
            let mean = pprof.0[(0, node)];
            let square = pprof.0.column(node).dot(&dprof.0.column(node));
            rhs += rho * hv * (sm * mean + 0.5 * sm * square);
        }
    }
    rhs *= plan.node_weight();
    Ok((lhs, rhs))
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

// ---------------------------------------------------------------------------
// Spectral gap of the m = 1 generator.
// ---------------------------------------------------------------------------

/// Largest system accepted by the dense eigensolve.
const DENSE_EIG_LIMIT: usize = 1500;

#[derive(Debug, Clone, Serialize)]
pub struct GapEstimate {
    pub gap: f64,
    pub dim: usize,
    pub n_hermite: usize,
    pub fourier_k: usize,
}

/// −max{Re μ : μ eigenvalue of the discretized m = 1 generator, μ ≠ 0}
/// by a dense eigensolve; diagnostic only.
pub fn spectral_gap(spec: &ProblemSpec, n_hermite: usize, fourier_k: usize) -> Result<GapEstimate> {
    spec.validate()?;
    let basis = build_basis(spec.d, n_hermite, fourier_k, spec.beta)?;
    if basis.dim() > DENSE_EIG_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "gap eigensolve limited to dimension {DENSE_EIG_LIMIT}, got {}",
            basis.dim()
        )));
    }
    let lambda = spec.lambda_at(&spec.q0);
    let b_polys: Vec<TrigPoly> = (0..spec.d).map(|i| spec.b_poly(i)).collect();
    let alpha;
    let alpha_opt = if spec.is_fluctuation_dissipation() {
        None
    } else {
        alpha = spec.alpha_diag(&spec.q0);
        Some(alpha.as_slice())
    };
    let l = op_generator(&basis, &b_polys, lambda, 1.0, alpha_opt).to_dense();
    let eigs = l.complex_eigenvalues();
    let mut gap = f64::INFINITY;
    for e in eigs.iter() {
        if e.norm() <= 1e-8 {
            continue;
        }
        gap = gap.min(-e.re);
    }
    if !(gap > 0.0 && gap.is_finite()) {
        return Err(Error::Solvability {
            context: "spectral gap eigensolve",
            residual: gap,
            tolerance: 0.0,
        });
    }
    Ok(GapEstimate {
        gap,
        dim: basis.dim(),
        n_hermite,
        fourier_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PresetName;

    #[test]
    fn uniform_density_for_zero_drift() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let rho0 = solve_rho0(&spec, 6).unwrap();
        assert!((rho0.coeffs[0] - 1.0).abs() < 1e-14);
        for i in 1..rho0.basis.len() {
            assert!(rho0.coeffs[i].abs() < 1e-13);
        }
        assert!((rho0.eval(&[0.37]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_density_matches_gibbs_form() {
        // b = −V′ with V = cos(2πr), λ = β = 1 → ρ₀ ∝ e^{−cos(2πr)}
        let spec = ProblemSpec::preset(PresetName::GradientDrift);
        let rho0 = solve_rho0(&spec, 16).unwrap();
        // I₀(1) by series
        let i0: f64 = (0..20)
            .map(|j| {
                let jf: f64 = (1..=j).map(|x| x as f64).product::<f64>().max(1.0);
                (0.25f64).powi(j as i32) / (jf * jf)
            })
            .sum();
        for t in 0..9 {
            let r = t as f64 / 9.0;
            let expect = (-(2.0 * std::f64::consts::PI * r).cos()).exp() / i0;
            assert!(
                (rho0.eval(&[r]) - expect).abs() < 1e-10,
                "r = {r}: {} vs {expect}",
                rho0.eval(&[r])
            );
        }
    }

    #[test]
    fn defect_vanishes_for_gradient_drift() {
        let spec = ProblemSpec::preset(PresetName::GradientDrift);
        let rho0 = solve_rho0(&spec, 16).unwrap();
        let h = defect_field(&spec, &rho0, 24).unwrap();
        assert!(h[0].constant.abs() < 1e-9);
        let worst = h[0]
            .modes
            .iter()
            .map(|m| m.cos.abs().max(m.sin.abs()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "largest defect harmonic {worst}");
    }

    #[test]
    fn defect_consistent_with_density_product() {
        // h·ρ₀ must reproduce b·ρ₀/β − ∇ρ₀ pointwise (division-free check)
        let mut spec = ProblemSpec::preset(PresetName::GradientDrift);
        // uncalibrated tilt makes h genuinely nonzero in one dimension
        spec.tilt = vec![0.4];
        let rho0 = solve_rho0(&spec, 16).unwrap();
        let h = defect_field(&spec, &rho0, 40).unwrap();
        for t in 0..23 {
            let r = [t as f64 / 23.0];
            let rho = rho0.eval(&r);
            let grad = rho0.eval_grad(&r)[0];
            let b = spec.b_at(&r)[0];
            let lhs = h[0].eval(&r) * rho;
            let rhs = b * rho / spec.beta - grad;
            assert!((lhs - rhs).abs() < 1e-10, "r = {:?}: {lhs} vs {rhs}", r);
        }
    }

    #[test]
    fn delta_vanishes_for_gradient_preset() {
        // the Fourier cutoff must push the Gibbs tail below the defect
        // coefficient floor, otherwise h picks up truncation residue
        let spec = ProblemSpec::preset(PresetName::GradientDrift);
        let sys = FastSystem::new(&spec, 12, 12).unwrap();
        let set = solve_rho_m(&sys, 0.1).unwrap();
        assert!(set.norms.l2 < 1e-9, "‖δ‖ = {}", set.norms.l2);
        assert!(set.route_agreement < 1e-9);
        assert!((set.weight.coeffs[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn uncalibrated_tilt_gives_nonzero_delta_with_route_agreement() {
        let mut spec = ProblemSpec::preset(PresetName::GradientDrift);
        spec.tilt = vec![0.4];
        let sys = FastSystem::new(&spec, 16, 10).unwrap();
        let set = solve_rho_m(&sys, 0.2).unwrap();
        assert!(set.norms.l2 > 1e-4, "expected genuine deviation");
        assert!(
            set.route_agreement < 1e-8,
            "route agreement {}",
            set.route_agreement
        );
        // zero-mean constraint is exact
        let con = sys.rho0_constraint();
        let mean: f64 = con.iter().map(|&(c, v)| v * set.delta.coeffs[c]).sum();
        assert!(mean.abs() < 1e-13);
    }

    #[test]
    fn gradient_identity_holds_on_solved_delta() {
        let mut spec = ProblemSpec::preset(PresetName::GradientDrift);
        spec.tilt = vec![0.4];
        let sys = FastSystem::new(&spec, 16, 10).unwrap();
        let set = solve_rho_m(&sys, 0.2).unwrap();
        let (lhs, rhs) = gradient_identity_sides(&sys, &set).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-14);
        assert!(rel < 1e-7, "identity relative error {rel} ({lhs} vs {rhs})");
    }

    #[test]
    fn gap_for_pure_ou_coupling() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let est = spectral_gap(&spec, 10, 4).unwrap();
        assert!(est.gap > 0.0 && est.gap <= 1.0 + 1e-9, "gap = {}", est.gap);
    }
}
