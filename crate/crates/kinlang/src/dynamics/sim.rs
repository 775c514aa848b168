//! Path simulation of the transformed kinetic system, its controlled
//! variant, and the overdamped first-order limit.
//!
//! The kinetic step is a Strang composition: exact flow of the linear part
//! (Ornstein–Uhlenbeck momentum together with the exact time integral that
//! moves q), a full-step b/c kick on p, and a second exact linear flow. The
//! linear substep draws the jointly Gaussian triple (ΔW, ∫e^{-θ(τ-s)}dW,
//! ∫(1-e^{-θ(τ-s)})/θ dW) per component, so a zero-drift problem is sampled
//! from its exact Gaussian law at any step size, and a control enters as the
//! exact mean shift of that triple, making the Girsanov weight exact for the
//! discrete chain.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::rng::PathRng;
use crate::error::{Error, Result};
use crate::ldp::{ControlPolicy, OptimalControl};
use crate::model::{Profile, ProblemSpec};
use crate::stationary::FastSystem;

/// Log-weights beyond this magnitude are clamped and flagged.
const LOG_WEIGHT_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Transformed second-order system in (q, p).
    Underdamped,
    /// First-order small-mass limit, including the friction-gradient drift.
    Overdamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMomentum {
    Zero,
    /// p₀ ~ N(0, βI), the fluctuation–dissipation equilibrium marginal.
    Stationary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub system: SystemKind,
    pub epsilon: f64,
    pub delta: f64,
    pub m: f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Fraction c_r of the fast-phase resolution limit the step may use.
    pub resolution: f64,
    pub initial_momentum: InitialMomentum,
    /// Store every stride-th state (plus the terminal one); 0 keeps
    /// terminals only.
    pub store_stride: usize,
}

impl SimConfig {
    /// Kinetic run at the spec's scale triplet; the step count saturates the
    /// resolution rule h ≤ c_r δ²√m/ε with c_r = 0.2.
    pub fn underdamped(spec: &ProblemSpec, t_final: f64, n_paths: usize, seed: u64) -> Self {
        let mut cfg = SimConfig {
            system: SystemKind::Underdamped,
            epsilon: spec.scales.epsilon,
            delta: spec.scales.delta,
            m: spec.scales.m,
            t_final,
            n_steps: 1,
            n_paths,
            seed,
            resolution: 0.2,
            initial_momentum: InitialMomentum::Stationary,
            store_stride: 0,
        };
        cfg.n_steps = cfg.steps_for_resolution();
        cfg
    }

    /// Overdamped run; resolution rule h ≤ c_r δ²/ε.
    pub fn overdamped(spec: &ProblemSpec, t_final: f64, n_paths: usize, seed: u64) -> Self {
        let mut cfg = SimConfig {
            system: SystemKind::Overdamped,
            ..Self::underdamped(spec, t_final, n_paths, seed)
        };
        cfg.n_steps = cfg.steps_for_resolution();
        cfg
    }

    /// Smallest step count satisfying the resolution rule.
    pub fn steps_for_resolution(&self) -> usize {
        ((self.t_final / self.h_max()).ceil() as usize).max(1)
    }

    pub fn h(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    /// Step bound resolving the fast phase q/δ.
    pub fn h_max(&self) -> f64 {
        let base = self.resolution * self.delta * self.delta / self.epsilon;
        match self.system {
            SystemKind::Underdamped => base * self.m.sqrt(),
            SystemKind::Overdamped => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("m", self.m),
            ("t_final", self.t_final),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.resolution > 0.0 && self.resolution <= 0.2) {
            return Err(Error::InvalidParameter(format!(
                "resolution fraction must lie in (0, 0.2], got {}",
                self.resolution
            )));
        }
        if self.n_steps == 0 || self.n_paths == 0 {
            return Err(Error::InvalidParameter(
                "need at least one step and one path".into(),
            ));
        }
        let h = self.h();
        let h_max = self.h_max();
        if h > h_max * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { h, h_max });
        }
        Ok(())
    }
}

/// Feedback control wiring for controlled runs: the target velocity comes
/// from the policy, the feedback field from the cell solution.
pub struct Controller<'a> {
    pub sys: &'a FastSystem,
    pub control: &'a OptimalControl,
    pub policy: &'a ControlPolicy,
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub d: usize,
    /// Times of the stored samples (empty when stride = 0).
    pub times: Vec<f64>,
    /// Per path, row-major (sample, component).
    pub q_stored: Vec<Vec<f64>>,
    pub p_stored: Vec<Vec<f64>>,
    /// Row-major (path, component).
    pub terminal_q: Vec<f64>,
    pub terminal_p: Vec<f64>,
    pub log_weights: Vec<f64>,
    /// Paths whose log-weight hit the clamp.
    pub clamped: usize,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.log_weights.len()
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        &self.terminal_q[path * self.d..(path + 1) * self.d]
    }

    /// Ensemble mean and standard error of the stored path, row-major
    /// (sample, component).
    pub fn mean_path(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_paths();
        let len = self.times.len() * self.d;
        let mut mean = vec![0.0; len];
        let mut sq = vec![0.0; len];
        for rec in &self.q_stored {
            for (i, &v) in rec.iter().enumerate() {
                mean[i] += v;
                sq[i] += v * v;
            }
        }
        let nf = n as f64;
        let mut se = vec![0.0; len];
        for i in 0..len {
            mean[i] /= nf;
            let var = (sq[i] / nf - mean[i] * mean[i]).max(0.0);
            se[i] = (var / nf).sqrt();
        }
        (mean, se)
    }

    /// Terminal mean and standard error per component.
    pub fn terminal_mean_se(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_paths();
        let mut mean = vec![0.0; self.d];
        let mut sq = vec![0.0; self.d];
        for path in 0..n {
            for (j, &v) in self.terminal(path).iter().enumerate() {
                mean[j] += v;
                sq[j] += v * v;
            }
        }
        let nf = n as f64;
        let mut se = vec![0.0; self.d];
        for j in 0..self.d {
            mean[j] /= nf;
            let var = (sq[j] / nf - mean[j] * mean[j]).max(0.0);
            se[j] = (var / nf).sqrt();
        }
        (mean, se)
    }
}

/// Exact-flow constants of one linear substep of length τ at rate θ:
/// the contraction, the deterministic kernels, and the Cholesky factor of
/// the unit-noise triple (ΔW, I, K) with
/// I = ∫e^{-θ(τ-s)}dW_s and K = ∫(1-e^{-θ(τ-s)})/θ dW_s.
#[derive(Debug, Clone, Copy)]
struct OuCoeffs {
    decay: f64,
    /// (1 − e^{−θτ})/θ: momentum response to constant forcing, position
    /// response to the initial momentum.
    g1: f64,
    /// (τ − g₁)/θ: position response to constant forcing.
    int_mu: f64,
    l11: f64,
    l21: f64,
    l22: f64,
    l31: f64,
    l32: f64,
    l33: f64,
}

fn ou_coeffs(theta: f64, tau: f64) -> OuCoeffs {
    let x = theta * tau;
    let decay = (-x).exp();
    let g1 = -(-x).exp_m1() / theta;
    let v_i = -(-2.0 * x).exp_m1() / (2.0 * theta);
    let int_mu = (tau - g1) / theta;
    let var_k = (tau - 2.0 * g1 + v_i) / (theta * theta);
    let c_ik = (g1 - v_i) / theta;
    let l11 = tau.sqrt();
    let l21 = g1 / l11;
    let l31 = int_mu / l11;
    let l22 = (v_i - l21 * l21).max(0.0).sqrt();
    let l32 = if l22 > 0.0 {
        (c_ik - l21 * l31) / l22
    } else {
        0.0
    };
    let l33 = (var_k - l31 * l31 - l32 * l32).max(0.0).sqrt();
    OuCoeffs {
        decay,
        g1,
        int_mu,
        l11,
        l21,
        l22,
        l31,
        l32,
        l33,
    }
}

pub(crate) struct PathOutcome {
    pub(crate) q: Vec<f64>,
    pub(crate) p: Vec<f64>,
    pub(crate) log_weight: f64,
    pub(crate) clamped: bool,
}

/// Single-path integrator; shared immutably across worker threads.
pub(crate) struct Stepper<'a> {
    spec: &'a ProblemSpec,
    config: &'a SimConfig,
    controller: Option<&'a Controller<'a>>,
    d: usize,
    h: f64,
    /// ε/(δ√m): q-velocity per unit p.
    transport: f64,
    /// ε/(√m δ²) and 1/(√m δ): kick strengths of b and c.
    kick_b: f64,
    kick_c: f64,
    /// Substep constants when λ is position-independent.
    fixed_ou: Option<OuCoeffs>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        config: &'a SimConfig,
        controller: Option<&'a Controller<'a>>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(ctrl) = controller {
            if config.system == SystemKind::Overdamped {
                return Err(Error::InvalidParameter(
                    "controlled runs require the underdamped system".into(),
                ));
            }
            ctrl.policy.validate(spec.d)?;
        }
        let h = config.h();
        let (eps, del, m) = (config.epsilon, config.delta, config.m);
        let sm = m.sqrt();
        let fixed_ou = match spec.lambda {
            Profile::Const { value } => Some(ou_coeffs(value * eps / (m * del * del), h * 0.5)),
            Profile::Poly { .. } => None,
        };
        Ok(Stepper {
            spec,
            config,
            controller,
            d: spec.d,
            h,
            transport: eps / (del * sm),
            kick_b: eps / (sm * del * del),
            kick_c: 1.0 / (sm * del),
            fixed_ou,
        })
    }

    fn torus(&self, q: &[f64], r: &mut [f64]) {
        for (rj, &qj) in r.iter_mut().zip(q) {
            let y = qj / self.config.delta;
            *rj = y - y.floor();
        }
    }

    fn control_at(&self, t: f64, q: &[f64], p: &[f64], r: &[f64]) -> Option<DVector<f64>> {
        let ctrl = self.controller?;
        let nu = ctrl.policy.nu_at(t)?;
        Some(ctrl.control.eval(ctrl.sys, q, p, r, &nu))
    }

    /// Exact linear flow over τ: contraction and noise on p, the exact time
    /// integral of p on q, control as the matched mean shift of the noise
    /// triple, Girsanov increment from the unshifted ΔW.
    fn linear_substep(
        &self,
        q: &mut [f64],
        p: &mut [f64],
        r_buf: &mut [f64],
        t: f64,
        tau: f64,
        rng: &mut PathRng,
        log_weight: &mut f64,
    ) {
        let (eps, del, m) = (self.config.epsilon, self.config.delta, self.config.m);
        let co = self.fixed_ou.unwrap_or_else(|| {
            ou_coeffs(self.spec.lambda_at(q) * eps / (m * del * del), tau)
        });
        let sigma = self.spec.sigma_diag(q);
        self.torus(q, r_buf);
        let u = self.control_at(t, q, p, r_buf);
        let sm = m.sqrt();
        let se = eps.sqrt();
        for j in 0..self.d {
            let (z1, z2, z3) = rng.normal_triple();
            let dw = co.l11 * z1;
            let i = co.l21 * z1 + co.l22 * z2;
            let k = co.l31 * z1 + co.l32 * z2 + co.l33 * z3;
            let eta = se * sigma[j] / (sm * del);
            let (mu, uj) = match &u {
                Some(u) => (sigma[j] * u[j] / (sm * del), u[j]),
                None => (0.0, 0.0),
            };
            q[j] += self.transport * (p[j] * co.g1 + mu * co.int_mu + eta * k);
            p[j] = co.decay * p[j] + mu * co.g1 + eta * i;
            if uj != 0.0 {
                *log_weight -= uj * dw / se + uj * uj * tau / (2.0 * eps);
            }
        }
    }

    fn step_underdamped(
        &self,
        q: &mut [f64],
        p: &mut [f64],
        r_buf: &mut [f64],
        t: f64,
        rng: &mut PathRng,
        log_weight: &mut f64,
    ) {
        let tau = self.h * 0.5;
        self.linear_substep(q, p, r_buf, t, tau, rng, log_weight);
        self.torus(q, r_buf);
        let bv = self.spec.b_at(r_buf);
        let cv = self.spec.c_at(r_buf);
        for j in 0..self.d {
            p[j] += self.h * (self.kick_b * bv[j] + self.kick_c * cv[j]);
        }
        self.linear_substep(q, p, r_buf, t + tau, tau, rng, log_weight);
    }

    /// Overdamped drift including the friction-gradient term.
    fn overdamped_drift(&self, q: &[f64], r_buf: &mut [f64], out: &mut [f64]) {
        let (eps, del) = (self.config.epsilon, self.config.delta);
        self.torus(q, r_buf);
        let bv = self.spec.b_at(r_buf);
        let cv = self.spec.c_at(r_buf);
        let lam = self.spec.lambda_at(q);
        let grad = self.spec.lambda.grad(q, self.d);
        let alpha = self.spec.alpha_diag(q);
        for j in 0..self.d {
            out[j] = (eps / del) * bv[j] / lam + cv[j] / lam
                - eps * grad[j] * alpha[j] / (2.0 * lam * lam * lam);
        }
    }

    /// Heun step: second-order in the drift, exact for the additive noise.
    fn step_overdamped(&self, q: &mut [f64], r_buf: &mut [f64], rng: &mut PathRng) {
        let (eps, h) = (self.config.epsilon, self.h);
        let se = eps.sqrt();
        let mut f0 = vec![0.0; self.d];
        let mut f1 = vec![0.0; self.d];
        let mut noise = vec![0.0; self.d];
        let lam0 = self.spec.lambda_at(q);
        let sig0 = self.spec.sigma_diag(q);
        for (j, nj) in noise.iter_mut().enumerate() {
            let (z, _) = rng.normal_pair();
            *nj = se * sig0[j] / lam0 * h.sqrt() * z;
        }
        self.overdamped_drift(q, r_buf, &mut f0);
        let mut q_star = vec![0.0; self.d];
        for j in 0..self.d {
            q_star[j] = q[j] + h * f0[j] + noise[j];
        }
        self.overdamped_drift(&q_star, r_buf, &mut f1);
        for j in 0..self.d {
            q[j] += 0.5 * h * (f0[j] + f1[j]) + noise[j];
        }
    }

    /// Runs one path, invoking the observer with the state at the start of
    /// every step and once more with the terminal state (step = n_steps).
    pub fn run_path<F>(&self, path: u64, mut observe: F) -> Result<PathOutcome>
    where
        F: FnMut(usize, f64, &[f64], &[f64]),
    {
        let cfg = self.config;
        let mut rng = PathRng::new(cfg.seed, path, self.d);
        let mut q = self.spec.q0.clone();
        let mut p = vec![0.0; self.d];
        if cfg.system == SystemKind::Underdamped {
            if let InitialMomentum::Stationary = cfg.initial_momentum {
                rng.seek_block(0);
                let sb = self.spec.beta.sqrt();
                for pj in p.iter_mut() {
                    *pj = sb * rng.normal_pair().0;
                }
            }
        }
        let mut r_buf = vec![0.0; self.d];
        let mut log_weight = 0.0;
        let mut clamped = false;
        for step in 0..cfg.n_steps {
            let t = step as f64 * self.h;
            observe(step, t, &q, &p);
            rng.seek_block(step as u64 + 1);
            match cfg.system {
                SystemKind::Underdamped => {
                    self.step_underdamped(&mut q, &mut p, &mut r_buf, t, &mut rng, &mut log_weight)
                }
                SystemKind::Overdamped => self.step_overdamped(&mut q, &mut r_buf, &mut rng),
            }
            if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { path, step });
            }
            if log_weight.abs() > LOG_WEIGHT_CLAMP {
                log_weight = log_weight.clamp(-LOG_WEIGHT_CLAMP, LOG_WEIGHT_CLAMP);
                clamped = true;
            }
        }
        observe(cfg.n_steps, cfg.t_final, &q, &p);
        Ok(PathOutcome {
            q,
            p,
            log_weight,
            clamped,
        })
    }
}

/// Steps at which states are stored, always including the terminal one.
fn stored_steps(config: &SimConfig) -> Vec<usize> {
    if config.store_stride == 0 {
        return Vec::new();
    }
    let mut steps: Vec<usize> = (0..=config.n_steps)
        .filter(|k| k % config.store_stride == 0)
        .collect();
    if *steps.last().unwrap() != config.n_steps {
        steps.push(config.n_steps);
    }
    steps
}

/// Simulates an ensemble; paths run independently in parallel with
/// per-path counter-based streams.
pub fn simulate(
    spec: &ProblemSpec,
    config: &SimConfig,
    controller: Option<&Controller>,
) -> Result<PathEnsemble> {
    let stepper = Stepper::new(spec, config, controller)?;
    let steps = stored_steps(config);
    let h = config.h();
    let times: Vec<f64> = steps.iter().map(|&k| k as f64 * h).collect();
    let d = spec.d;
    let results: Result<Vec<_>> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rec_q = Vec::with_capacity(steps.len() * d);
            let mut rec_p = Vec::with_capacity(steps.len() * d);
            let mut next = 0usize;
            let out = stepper.run_path(i as u64, |k, _t, q, p| {
                if next < steps.len() && steps[next] == k {
                    rec_q.extend_from_slice(q);
                    rec_p.extend_from_slice(p);
                    next += 1;
                }
            })?;
            Ok((rec_q, rec_p, out))
        })
        .collect();
    let results = results?;
    let n = results.len();
    let mut ensemble = PathEnsemble {
        d,
        times,
        q_stored: Vec::with_capacity(if config.store_stride == 0 { 0 } else { n }),
        p_stored: Vec::with_capacity(if config.store_stride == 0 { 0 } else { n }),
        terminal_q: Vec::with_capacity(n * d),
        terminal_p: Vec::with_capacity(n * d),
        log_weights: Vec::with_capacity(n),
        clamped: 0,
    };
    for (rec_q, rec_p, out) in results {
        if config.store_stride > 0 {
            ensemble.q_stored.push(rec_q);
            ensemble.p_stored.push(rec_p);
        }
        ensemble.terminal_q.extend_from_slice(&out.q);
        ensemble.terminal_p.extend_from_slice(&out.p);
        ensemble.log_weights.push(out.log_weight);
        ensemble.clamped += out.clamped as usize;
    }
    Ok(ensemble)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_phi;
    use crate::homogenize::coeffs_m;
    use crate::ldp::RateCoeffs;
    use crate::model::{PresetName, SigmaSpec};
    use crate::stationary::solve_rho_m;

    fn linear_spec() -> ProblemSpec {
        // b = c = 0, diagonal σ: the kinetic system is exactly Gaussian
        let mut spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        for comp in &mut spec.c.components {
            comp.constant = 0.0;
        }
        spec.sigma = SigmaSpec::Diagonal { values: vec![1.0] };
        spec.scales.epsilon = 0.1;
        spec.scales.delta = 0.1;
        spec.scales.m = 0.5;
        spec
    }

    /// Closed-form Var(q_T) for the linear system started at p₀ = 0.
    fn linear_variance(spec: &ProblemSpec, t: f64) -> f64 {
        let (eps, del, m) = (spec.scales.epsilon, spec.scales.delta, spec.scales.m);
        let lam = 1.0;
        let theta = lam * eps / (m * del * del);
        let a = eps / (del * m.sqrt());
        let eta = eps.sqrt() / (m.sqrt() * del);
        let g1 = (1.0 - (-theta * t).exp()) / theta;
        let v_i = (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta);
        let var_k = (t - 2.0 * g1 + v_i) / (theta * theta);
        a * a * eta * eta * var_k
    }

    #[test]
    fn zero_drift_terminal_matches_exact_gaussian_law() {
        let spec = linear_spec();
        let mut cfg = SimConfig::underdamped(&spec, 1.0, 4000, 11);
        cfg.initial_momentum = InitialMomentum::Zero;
        let ens = simulate(&spec, &cfg, None).unwrap();
        let (mean, se) = ens.terminal_mean_se();
        assert!(mean[0].abs() < 3.0 * se[0], "mean {} se {}", mean[0], se[0]);
        let var_exact = linear_variance(&spec, 1.0);
        let n = ens.n_paths() as f64;
        let var_sample: f64 = (0..ens.n_paths())
            .map(|i| (ens.terminal(i)[0] - mean[0]).powi(2))
            .sum::<f64>()
            / n;
        // sample variance of a Gaussian: SE ≈ var·√(2/n)
        let tol = 3.0 * var_exact * (2.0 / n).sqrt();
        assert!(
            (var_sample - var_exact).abs() < tol,
            "var {var_sample} vs exact {var_exact}"
        );
    }

    #[test]
    fn same_seed_reproduces_bitwise_and_zero_control_matches_plain() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let sys = FastSystem::new(&spec, 8, 4).unwrap();
        let set = solve_rho_m(&sys, spec.scales.m).unwrap();
        let phi = solve_phi(&sys, &set).unwrap();
        let cm = coeffs_m(&sys, &set, &phi).unwrap();
        let ctrl =
            OptimalControl::new(&sys, &phi, RateCoeffs::from_finite_mass(&cm).unwrap()).unwrap();
        let cfg = SimConfig::underdamped(&spec, 0.1, 16, 99);
        let plain = simulate(&spec, &cfg, None).unwrap();
        let again = simulate(&spec, &cfg, None).unwrap();
        assert_eq!(plain.terminal_q, again.terminal_q);
        let policy = ControlPolicy::Zero;
        let controller = Controller {
            sys: &sys,
            control: &ctrl,
            policy: &policy,
        };
        let controlled = simulate(&spec, &cfg, Some(&controller)).unwrap();
        assert_eq!(plain.terminal_q, controlled.terminal_q);
        assert_eq!(plain.terminal_p, controlled.terminal_p);
        assert!(controlled.log_weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn controlled_mean_velocity_tracks_target() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let sys = FastSystem::new(&spec, 8, 4).unwrap();
        let set = solve_rho_m(&sys, spec.scales.m).unwrap();
        let phi = solve_phi(&sys, &set).unwrap();
        let cm = coeffs_m(&sys, &set, &phi).unwrap();
        let ctrl =
            OptimalControl::new(&sys, &phi, RateCoeffs::from_finite_mass(&cm).unwrap()).unwrap();
        let policy = ControlPolicy::ConstantVelocity(vec![2.0]);
        let controller = Controller {
            sys: &sys,
            control: &ctrl,
            policy: &policy,
        };
        let cfg = SimConfig::underdamped(&spec, 1.0, 400, 5);
        let ens = simulate(&spec, &cfg, Some(&controller)).unwrap();
        let (mean, se) = ens.terminal_mean_se();
        // target path q₀ + νT = 2
        assert!(
            (mean[0] - 2.0).abs() < 3.0 * se[0],
            "mean {} se {}",
            mean[0],
            se[0]
        );
        assert!(ens.log_weights.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn step_halving_shifts_mean_less_than_the_ci() {
        let spec = ProblemSpec::preset(PresetName::GradientDrift);
        let mut cfg = SimConfig::underdamped(&spec, 0.5, 600, 21);
        let coarse = simulate(&spec, &cfg, None).unwrap();
        cfg.n_steps *= 2;
        let fine = simulate(&spec, &cfg, None).unwrap();
        let (m0, s0) = coarse.terminal_mean_se();
        let (m1, s1) = fine.terminal_mean_se();
        let ci = 3.0 * (s0[0] * s0[0] + s1[0] * s1[0]).sqrt();
        assert!((m0[0] - m1[0]).abs() < ci, "means {} vs {}", m0[0], m1[0]);
    }

    #[test]
    fn overdamped_run_rejects_controller_and_oversized_steps() {
        let spec = ProblemSpec::preset(PresetName::GradientDrift);
        let sys = FastSystem::new(&spec, 16, 8).unwrap();
        let set = solve_rho_m(&sys, 0.1).unwrap();
        let phi = solve_phi(&sys, &set).unwrap();
        let cm = coeffs_m(&sys, &set, &phi).unwrap();
        let ctrl =
            OptimalControl::new(&sys, &phi, RateCoeffs::from_finite_mass(&cm).unwrap()).unwrap();
        let policy = ControlPolicy::Zero;
        let controller = Controller {
            sys: &sys,
            control: &ctrl,
            policy: &policy,
        };
        let cfg = SimConfig::overdamped(&spec, 0.1, 4, 1);
        assert!(matches!(
            simulate(&spec, &cfg, Some(&controller)),
            Err(Error::InvalidParameter(_))
        ));
        let mut bad = cfg.clone();
        bad.n_steps = 1;
        assert!(matches!(
            simulate(&spec, &bad, None),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn stored_paths_carry_strided_samples() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let mut cfg = SimConfig::underdamped(&spec, 0.2, 3, 7);
        cfg.store_stride = cfg.n_steps / 4;
        let ens = simulate(&spec, &cfg, None).unwrap();
        assert!(ens.times.len() >= 5);
        assert_eq!(ens.times[0], 0.0);
        assert!((ens.times.last().unwrap() - 0.2).abs() < 1e-12);
        for rec in &ens.q_stored {
            assert_eq!(rec.len(), ens.times.len());
        }
        // stored start is q0, stored end matches the terminal value
        for (i, rec) in ens.q_stored.iter().enumerate() {
            assert_eq!(rec[0], spec.q0[0]);
            assert_eq!(*rec.last().unwrap(), ens.terminal(i)[0]);
        }
    }
}
