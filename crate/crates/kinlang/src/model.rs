//! Problem definition: coefficient fields, scale parameters, presets,
//! configuration parsing, centering calibration, and validity checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard floor on the diffusion matrix diagonal (uniform ellipticity in p).
pub const ALPHA_FLOOR: f64 = 1e-8;
/// Smallest mass admitted by sweeps; below this the fast solve conditioning degrades.
pub const M_MIN: f64 = 2e-3;

/// One trigonometric mode of a coefficient component:
/// `cos·cos(2πk·r) + sin·sin(2πk·r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    pub k: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// A real trigonometric polynomial on the d-torus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigPoly {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<TrigMode>,
}

impl TrigPoly {
    pub fn constant(v: f64) -> Self {
        TrigPoly {
            constant: v,
            modes: Vec::new(),
        }
    }

    /// Evaluate at a point of the torus (coordinates in [0,1)).
    pub fn eval(&self, r: &[f64]) -> f64 {
        let mut acc = self.constant;
        for m in &self.modes {
            let phase = two_pi_dot(&m.k, r);
            acc += m.cos * phase.cos() + m.sin * phase.sin();
        }
        acc
    }

    /// Partial derivative with respect to r_axis.
    pub fn eval_deriv(&self, r: &[f64], axis: usize) -> f64 {
        let mut acc = 0.0;
        for m in &self.modes {
            let w = 2.0 * std::f64::consts::PI * f64::from(m.k[axis]);
            let phase = two_pi_dot(&m.k, r);
            acc += -m.cos * w * phase.sin() + m.sin * w * phase.cos();
        }
        acc
    }

    /// Largest |k_i| over all modes (0 for a constant).
    pub fn max_harmonic(&self) -> i32 {
        self.modes
            .iter()
            .flat_map(|m| m.k.iter().map(|k| k.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Sup-norm bound: |constant| + Σ √(cos² + sin²).
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs()
            + self
                .modes
                .iter()
                .map(|m| m.cos.hypot(m.sin))
                .sum::<f64>()
    }
}

fn two_pi_dot(k: &[i32], r: &[f64]) -> f64 {
    2.0 * std::f64::consts::PI
        * k.iter()
            .zip(r)
            .map(|(&ki, &ri)| f64::from(ki) * ri)
            .sum::<f64>()
}

/// A d-component coefficient field on the torus (q enters only through
/// profiles; the fast fields themselves are q-independent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffField {
    pub components: Vec<TrigPoly>,
}

impl CoeffField {
    pub fn zero(d: usize) -> Self {
        CoeffField {
            components: vec![TrigPoly::default(); d],
        }
    }

    pub fn constant(values: &[f64]) -> Self {
        CoeffField {
            components: values.iter().map(|&v| TrigPoly::constant(v)).collect(),
        }
    }

    pub fn eval(&self, r: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(r)).collect()
    }

    pub fn max_harmonic(&self) -> i32 {
        self.components
            .iter()
            .map(TrigPoly::max_harmonic)
            .max()
            .unwrap_or(0)
    }

    pub fn sup_bound(&self) -> f64 {
        self.components
            .iter()
            .map(TrigPoly::sup_bound)
            .fold(0.0, f64::max)
    }
}

/// Friction profile λ(q) > 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Const { value: f64 },
    /// Polynomial in the coordinate q[axis]: Σ coeffs[i]·q[axis]^i.
    Poly { coeffs: Vec<f64>, axis: usize },
}

impl Profile {
    pub fn eval(&self, q: &[f64]) -> f64 {
        match self {
            Profile::Const { value } => *value,
            Profile::Poly { coeffs, axis } => {
                let x = q.get(*axis).copied().unwrap_or(0.0);
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
            }
        }
    }

    /// Analytic gradient with respect to q.
    pub fn grad(&self, q: &[f64], d: usize) -> Vec<f64> {
        let mut g = vec![0.0; d];
        if let Profile::Poly { coeffs, axis } = self {
            let x = q.get(*axis).copied().unwrap_or(0.0);
            let mut dv = 0.0;
            for (i, &c) in coeffs.iter().enumerate().skip(1) {
                dv += c * (i as f64) * x.powi(i as i32 - 1);
            }
            if *axis < d {
                g[*axis] = dv;
            }
        }
        g
    }
}

/// Momentum-noise specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    /// Fluctuation–dissipation pairing σ = √(2βλ(q))·I; the regime in which
    /// all small-mass sweep statements hold.
    FluctuationDissipation,
    /// Constant diagonal σ = diag(values). Accepted by the LDP and
    /// simulation layers; sweeps reject it.
    Diagonal { values: Vec<f64> },
}

/// Scale triplet of the slow/fast system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub epsilon: f64,
    pub delta: f64,
    pub m: f64,
}

impl Default for Scales {
    fn default() -> Self {
        // ε = 0.1, δ = 0.2·ε keeps δ ≪ ε while staying resolvable.
        Scales {
            epsilon: 0.1,
            delta: 0.02,
            m: 0.1,
        }
    }
}

/// Full problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    /// Spatial dimension of q (and of the torus), 1 or 2 at desk scale.
    pub d: usize,
    /// Inverse-temperature-like parameter of the momentum marginal N(0, βI).
    pub beta: f64,
    pub lambda: Profile,
    pub sigma: SigmaSpec,
    /// Fast drift base field (tilt excluded).
    pub b: CoeffField,
    /// Additive tilt of the fast drift, the unknown of centering calibration.
    pub tilt: Vec<f64>,
    /// Slow drift field.
    pub c: CoeffField,
    pub scales: Scales,
    pub q0: Vec<f64>,
}

/// Built-in problem presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    /// b ≡ 0, c ≡ 1, σ = √2: every corrector is exact and every
    /// homogenized quantity has a closed form.
    ConstantCoeff,
    /// b = −V′ with V(r) = cos(2πr): reversible fast dynamics with the
    /// classical 1-d periodic effective-diffusion anchor.
    GradientDrift,
    /// d = 2 rotational drift with additive tilt: non-gradient fast dynamics
    /// whose stationary density genuinely deviates from the product reference.
    TiltedNongradient,
}

impl PresetName {
    pub const ALL: [PresetName; 3] = [
        PresetName::ConstantCoeff,
        PresetName::GradientDrift,
        PresetName::TiltedNongradient,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant_coeff" => Ok(PresetName::ConstantCoeff),
            "gradient_drift" => Ok(PresetName::GradientDrift),
            "tilted_nongradient" => Ok(PresetName::TiltedNongradient),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::ConstantCoeff => "constant_coeff",
            PresetName::GradientDrift => "gradient_drift",
            PresetName::TiltedNongradient => "tilted_nongradient",
        }
    }
}

impl ProblemSpec {
    pub fn preset(name: PresetName) -> Self {
        match name {
            PresetName::ConstantCoeff => ProblemSpec {
                name: name.as_str().to_string(),
                d: 1,
                beta: 1.0,
                lambda: Profile::Const { value: 1.0 },
                sigma: SigmaSpec::FluctuationDissipation,
                b: CoeffField::zero(1),
                tilt: vec![0.0],
                c: CoeffField::constant(&[1.0]),
                scales: Scales::default(),
                q0: vec![0.0],
            },
            PresetName::GradientDrift => {
                // V(r) = cos(2πr), b = −V′ = 2π sin(2πr).
                let two_pi = 2.0 * std::f64::consts::PI;
                ProblemSpec {
                    name: name.as_str().to_string(),
                    d: 1,
                    beta: 1.0,
                    lambda: Profile::Const { value: 1.0 },
                    sigma: SigmaSpec::FluctuationDissipation,
                    b: CoeffField {
                        components: vec![TrigPoly {
                            constant: 0.0,
                            modes: vec![TrigMode {
                                k: vec![1],
                                cos: 0.0,
                                sin: two_pi,
                            }],
                        }],
                    },
                    tilt: vec![0.0],
                    c: CoeffField::constant(&[1.0]),
                    scales: Scales::default(),
                    q0: vec![0.0],
                }
            }
            PresetName::TiltedNongradient => ProblemSpec {
                name: name.as_str().to_string(),
                d: 2,
                beta: 1.0,
                lambda: Profile::Const { value: 1.0 },
                sigma: SigmaSpec::FluctuationDissipation,
                b: CoeffField {
                    components: vec![
                        TrigPoly {
                            constant: 0.0,
                            modes: vec![
                                TrigMode {
                                    k: vec![1, 0],
                                    cos: 0.0,
                                    sin: 1.0,
                                },
                                TrigMode {
                                    k: vec![0, 1],
                                    cos: 0.0,
                                    sin: 0.3,
                                },
                            ],
                        },
                        TrigPoly {
                            constant: 0.0,
                            modes: vec![
                                TrigMode {
                                    k: vec![0, 1],
                                    cos: 0.0,
                                    sin: 1.0,
                                },
                                TrigMode {
                                    k: vec![1, 0],
                                    cos: 0.0,
                                    sin: -0.3,
                                },
                            ],
                        },
                    ],
                },
                // Deliberately uncalibrated starting tilt; calibrate_centering
                // drives it to the centered value.
                tilt: vec![0.1, -0.05],
                c: CoeffField::constant(&[1.0, 0.5]),
                scales: Scales::default(),
                q0: vec![0.0, 0.0],
            },
        }
    }

    /// Friction at q.
    pub fn lambda_at(&self, q: &[f64]) -> f64 {
        self.lambda.eval(q)
    }

    /// Diagonal of σ at q.
    pub fn sigma_diag(&self, q: &[f64]) -> Vec<f64> {
        match &self.sigma {
            SigmaSpec::FluctuationDissipation => {
                let s = (2.0 * self.beta * self.lambda.eval(q)).sqrt();
                vec![s; self.d]
            }
            SigmaSpec::Diagonal { values } => values.clone(),
        }
    }

    /// Diagonal of α = σσᵀ at q.
    pub fn alpha_diag(&self, q: &[f64]) -> Vec<f64> {
        self.sigma_diag(q).iter().map(|s| s * s).collect()
    }

    pub fn is_fluctuation_dissipation(&self) -> bool {
        matches!(self.sigma, SigmaSpec::FluctuationDissipation)
    }

    /// Fast drift including tilt.
    pub fn b_at(&self, r: &[f64]) -> Vec<f64> {
        let mut v = self.b.eval(r);
        for (vi, ti) in v.iter_mut().zip(&self.tilt) {
            *vi += ti;
        }
        v
    }

    /// Component i of the fast drift as a trigonometric polynomial with the
    /// tilt folded into the constant term.
    pub fn b_poly(&self, i: usize) -> TrigPoly {
        let mut p = self.b.components[i].clone();
        p.constant += self.tilt[i];
        p
    }

    pub fn c_at(&self, r: &[f64]) -> Vec<f64> {
        self.c.eval(r)
    }

    /// Component j of the observable coefficient.
    pub fn c_poly(&self, j: usize) -> TrigPoly {
        self.c.components[j].clone()
    }

    /// Copy with a replaced tilt vector.
    pub fn with_tilt(&self, tilt: Vec<f64>) -> Self {
        let mut s = self.clone();
        s.tilt = tilt;
        s
    }

    /// Largest harmonic present in b or c (sizing input for bases and grids).
    pub fn max_harmonic(&self) -> i32 {
        self.b.max_harmonic().max(self.c.max_harmonic())
    }

    /// Structural validation independent of scales.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter("dimension d must be ≥ 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter("β must be positive".into()));
        }
        if self.b.components.len() != self.d
            || self.c.components.len() != self.d
            || self.tilt.len() != self.d
            || self.q0.len() != self.d
        {
            return Err(Error::InvalidParameter(
                "b, c, tilt, q0 must all have d components".into(),
            ));
        }
        for comp in self.b.components.iter().chain(&self.c.components) {
            for m in &comp.modes {
                if m.k.len() != self.d {
                    return Err(Error::InvalidParameter(
                        "mode wave vectors must have d components".into(),
                    ));
                }
                if m.k.iter().all(|&k| k == 0) {
                    return Err(Error::InvalidParameter(
                        "zero wave vector must be expressed through the constant term".into(),
                    ));
                }
            }
        }
        if let SigmaSpec::Diagonal { values } = &self.sigma {
            if values.len() != self.d {
                return Err(Error::InvalidParameter(
                    "σ diagonal must have d entries".into(),
                ));
            }
            if values.iter().any(|&v| v * v < ALPHA_FLOOR) {
                return Err(Error::InvalidParameter(format!(
                    "σ² diagonal below the ellipticity floor {ALPHA_FLOOR:.1e}"
                )));
            }
        }
        let lam = self.lambda.eval(&self.q0);
        if !(lam > 0.0) || !lam.is_finite() {
            return Err(Error::InvalidParameter(
                "λ(q0) must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Pointwise coefficient evaluation at (q, r); everything the integrator or a
/// condition check needs in one call.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub lambda: f64,
    pub grad_lambda: Vec<f64>,
    pub sigma_diag: Vec<f64>,
    pub alpha_diag: Vec<f64>,
}

/// Evaluate all coefficient fields at (q, r).
pub fn eval_coefficients(spec: &ProblemSpec, q: &[f64], r: &[f64]) -> Coefficients {
    Coefficients {
        b: spec.b_at(r),
        c: spec.c_at(r),
        lambda: spec.lambda.eval(q),
        grad_lambda: spec.lambda.grad(q, spec.d),
        sigma_diag: spec.sigma_diag(q),
        alpha_diag: spec.alpha_diag(q),
    }
}

/// Outcome of `check_conditions`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub lambda_value: f64,
    pub lambda_positive: bool,
    pub alpha_min: f64,
    pub alpha_above_floor: bool,
    /// |∫ b ρ₀ dr| componentwise max under the current tilt.
    pub centering_residual: f64,
    pub centered: bool,
    /// δ/ε; the scale separation assumption wants this small.
    pub delta_over_epsilon: f64,
    pub scale_separation_flagged: bool,
    pub pass: bool,
}

/// Verify the standing assumptions at the frozen slow position q0.
///
/// The centering residual is computed against the overdamped stationary
/// density at the given Fourier truncation.
pub fn check_conditions(spec: &ProblemSpec, fourier_k: usize) -> Result<ConditionReport> {
    spec.validate()?;
    let lam = spec.lambda.eval(&spec.q0);
    let alpha_min = spec
        .alpha_diag(&spec.q0)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let centering = centering_residual(spec, fourier_k)?;
    let ratio = spec.scales.delta / spec.scales.epsilon;
    let report = ConditionReport {
        lambda_value: lam,
        lambda_positive: lam > 0.0,
        alpha_min,
        alpha_above_floor: alpha_min >= ALPHA_FLOOR,
        centering_residual: centering,
        centered: centering <= CENTERING_TOL,
        delta_over_epsilon: ratio,
        scale_separation_flagged: ratio > 0.5,
        pass: lam > 0.0 && alpha_min >= ALPHA_FLOOR && centering <= CENTERING_TOL,
    };
    Ok(report)
}

/// Tolerance to which the drift must average to zero under ρ₀.
pub const CENTERING_TOL: f64 = 1e-10;

/// Componentwise max of |∫ b ρ₀ dr| under the spec's current tilt.
pub fn centering_residual(spec: &ProblemSpec, fourier_k: usize) -> Result<f64> {
    let rho0 = crate::stationary::solve_rho0(spec, fourier_k)?;
    let means = rho0.drift_means(spec);
    Ok(means.iter().fold(0.0, |a: f64, &v| a.max(v.abs())))
}

/// Result of `calibrate_centering`.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    /// Calibrated tilt a with ∫ (b + a) ρ₀[a] dr = 0.
    pub tilt: Vec<f64>,
    /// Final componentwise max of the overdamped centering residual.
    pub residual: f64,
    pub iterations: usize,
}

/// Solve ∫ b[a] ρ₀[a] dr = 0 for the tilt a by a damped quasi-Newton
/// iteration with finite-difference Jacobian (secant in one dimension).
///
/// ρ₀[a] is the overdamped stationary density recomputed at every trial tilt,
/// so the fixed point accounts for the density's own dependence on the tilt.
pub fn calibrate_centering(spec: &ProblemSpec, fourier_k: usize) -> Result<CalibrationReport> {
    spec.validate()?;
    let d = spec.d;
    let sup = spec.b.sup_bound() + spec.tilt.iter().fold(0.0, |a: f64, &t| a.max(t.abs()));
    let bound = sup.max(1.0);

    let f = |tilt: &[f64]| -> Result<Vec<f64>> {
        let trial = spec.with_tilt(tilt.to_vec());
        let rho0 = crate::stationary::solve_rho0(&trial, fourier_k)?;
        Ok(rho0.drift_means(&trial))
    };

    let mut a = spec.tilt.clone();
    let mut resid = f(&a)?;
    let mut norm = max_abs(&resid);
    let mut iterations = 0;
    let fd_step = 1e-6 * bound;

    while norm > CENTERING_TOL && iterations < 60 {
        // Finite-difference Jacobian of the residual map (d ≤ 2: cheap).
        let mut jac = nalgebra::DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            let mut ap = a.clone();
            ap[j] += fd_step;
            let rp = f(&ap)?;
            for i in 0..d {
                jac[(i, j)] = (rp[i] - resid[i]) / fd_step;
            }
        }
        let rhs = nalgebra::DVector::from_column_slice(&resid);
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularSolve("centering calibration Jacobian"))?;
        // Damped update, clamped to the a-priori bracket [-bound, bound].
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = a
                .iter()
                .zip(step.iter())
                .map(|(&ai, &si)| (ai - t * si).clamp(-bound, bound))
                .collect();
            let rtrial = f(&trial)?;
            let ntrial = max_abs(&rtrial);
            if ntrial < norm || t < 1.0 / 16.0 {
                a = trial;
                resid = rtrial;
                norm = ntrial;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
    }

    if norm > CENTERING_TOL {
        return Err(Error::Solvability {
            context: "centering calibration",
            residual: norm,
            tolerance: CENTERING_TOL,
        });
    }
    Ok(CalibrationReport {
        tilt: a,
        residual: norm,
        iterations,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a: f64, &x| a.max(x.abs()))
}

// ---------------------------------------------------------------------------
// TOML configuration.
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct ConfigFile {
    problem: ProblemSection,
    #[serde(default)]
    coefficients: Option<CoefficientsSection>,
    #[serde(default)]
    scales: Option<Scales>,
}

#[derive(Debug, Deserialize)]
struct ProblemSection {
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    d: Option<usize>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    lambda_poly: Option<Vec<f64>>,
    /// "fd" or a diagonal array.
    #[serde(default)]
    sigma: Option<toml::Value>,
    #[serde(default)]
    tilt: Option<Vec<f64>>,
    #[serde(default)]
    q0: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct CoefficientsSection {
    #[serde(default)]
    b: Option<FieldSection>,
    #[serde(default)]
    c: Option<FieldSection>,
}

#[derive(Debug, Deserialize)]
struct FieldSection {
    #[serde(rename = "const", default)]
    constant: Option<Vec<f64>>,
    #[serde(default)]
    modes: Option<Vec<ModeSection>>,
}

#[derive(Debug, Deserialize)]
struct ModeSection {
    k: Vec<i32>,
    /// Component index this mode belongs to (default 0).
    #[serde(default)]
    component: usize,
    #[serde(default)]
    cos: f64,
    #[serde(default)]
    sin: f64,
}

impl ProblemSpec {
    /// Parse a TOML configuration. A `preset` key selects a built-in problem;
    /// remaining keys override its fields.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse: {e}")))?;

        let mut spec = match &cfg.problem.preset {
            Some(p) => ProblemSpec::preset(PresetName::parse(p)?),
            None => {
                let d = cfg
                    .problem
                    .d
                    .ok_or_else(|| Error::Config("custom problem requires `d`".into()))?;
                ProblemSpec {
                    name: cfg
                        .problem
                        .name
                        .clone()
                        .unwrap_or_else(|| "custom".to_string()),
                    d,
                    beta: 1.0,
                    lambda: Profile::Const { value: 1.0 },
                    sigma: SigmaSpec::FluctuationDissipation,
                    b: CoeffField::zero(d),
                    tilt: vec![0.0; d],
                    c: CoeffField::zero(d),
                    scales: Scales::default(),
                    q0: vec![0.0; d],
                }
            }
        };

        if let Some(name) = cfg.problem.name {
            spec.name = name;
        }
        if let Some(beta) = cfg.problem.beta {
            spec.beta = beta;
        }
        if let Some(v) = cfg.problem.lambda {
            spec.lambda = Profile::Const { value: v };
        }
        if let Some(coeffs) = cfg.problem.lambda_poly {
            spec.lambda = Profile::Poly { coeffs, axis: 0 };
        }
        if let Some(sig) = cfg.problem.sigma {
            spec.sigma = parse_sigma(&sig)?;
        }
        if let Some(t) = cfg.problem.tilt {
            spec.tilt = t;
        }
        if let Some(q0) = cfg.problem.q0 {
            spec.q0 = q0;
        }
        if let Some(co) = cfg.coefficients {
            if let Some(bsec) = co.b {
                spec.b = parse_field(&bsec, spec.d)?;
            }
            if let Some(csec) = co.c {
                spec.c = parse_field(&csec, spec.d)?;
            }
        }
        if let Some(s) = cfg.scales {
            spec.scales = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_sigma(v: &toml::Value) -> Result<SigmaSpec> {
    match v {
        toml::Value::String(s) if s == "fd" => Ok(SigmaSpec::FluctuationDissipation),
        toml::Value::Array(arr) => {
            let values: Option<Vec<f64>> = arr.iter().map(toml::Value::as_float).collect();
            values
                .map(|values| SigmaSpec::Diagonal { values })
                .ok_or_else(|| Error::Config("sigma array must hold floats".into()))
        }
        other => Err(Error::Config(format!(
            "sigma must be \"fd\" or an array, got {other}"
        ))),
    }
}

fn parse_field(sec: &FieldSection, d: usize) -> Result<CoeffField> {
    let mut field = CoeffField::zero(d);
    if let Some(consts) = &sec.constant {
        if consts.len() != d {
            return Err(Error::Config(format!(
                "field const must have {d} entries, got {}",
                consts.len()
            )));
        }
        for (comp, &v) in field.components.iter_mut().zip(consts) {
            comp.constant = v;
        }
    }
    if let Some(modes) = &sec.modes {
        for m in modes {
            if m.component >= d {
                return Err(Error::Config(format!(
                    "mode component {} out of range for d = {d}",
                    m.component
                )));
            }
            if m.k.len() != d {
                return Err(Error::Config(format!(
                    "mode wave vector must have {d} entries, got {}",
                    m.k.len()
                )));
            }
            field.components[m.component].modes.push(TrigMode {
                k: m.k.clone(),
                cos: m.cos,
                sin: m.sin,
            });
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_constant_coeff_values() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        spec.validate().unwrap();
        let r = [0.37];
        assert_eq!(spec.b_at(&r), vec![0.0]);
        assert_eq!(spec.c_at(&r), vec![1.0]);
        assert!((spec.sigma_diag(&[0.0])[0] - 2.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(spec.lambda_at(&[0.0]), 1.0);
    }

    #[test]
    fn gradient_drift_at_quarter_period() {
        // b = −V′, V = cos(2πr): b(0.25) = 2π.
        let spec = ProblemSpec::preset(PresetName::GradientDrift);
        let b = spec.b_at(&[0.25]);
        assert!((b[0] - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn tilted_drift_at_origin_equals_tilt() {
        let spec = ProblemSpec::preset(PresetName::TiltedNongradient);
        let b = spec.b_at(&[0.0, 0.0]);
        assert_eq!(b, spec.tilt);
    }

    #[test]
    fn trig_poly_derivative_matches_finite_difference() {
        let p = TrigPoly {
            constant: 0.3,
            modes: vec![
                TrigMode {
                    k: vec![1, 2],
                    cos: 0.7,
                    sin: -0.2,
                },
                TrigMode {
                    k: vec![3, -1],
                    cos: 0.1,
                    sin: 0.4,
                },
            ],
        };
        let r = [0.21, 0.63];
        let h = 1e-6;
        for axis in 0..2 {
            let mut rp = r;
            rp[axis] += h;
            let mut rm = r;
            rm[axis] -= h;
            let fd = (p.eval(&rp) - p.eval(&rm)) / (2.0 * h);
            assert!((p.eval_deriv(&r, axis) - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn lambda_poly_profile_and_gradient() {
        let prof = Profile::Poly {
            coeffs: vec![1.0, 0.5, 0.25],
            axis: 0,
        };
        let q = [2.0];
        assert!((prof.eval(&q) - (1.0 + 1.0 + 1.0)).abs() < 1e-14);
        let g = prof.grad(&q, 1);
        assert!((g[0] - (0.5 + 2.0 * 0.25 * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn config_roundtrip_with_preset_and_overrides() {
        let text = r#"
            [problem]
            preset = "gradient_drift"
            name = "gd-custom"

            [scales]
            epsilon = 0.05
            delta = 0.005
            m = 0.2
        "#;
        let spec = ProblemSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.name, "gd-custom");
        assert_eq!(spec.scales.m, 0.2);
        assert_eq!(spec.d, 1);
        assert!(!spec.b.components[0].modes.is_empty());
    }

    #[test]
    fn config_custom_problem() {
        let text = r#"
            [problem]
            d = 1
            beta = 1.0
            lambda = 1.0
            sigma = "fd"

            [coefficients.b]
            modes = [{ k = [1], sin = 1.0 }, { k = [2], cos = 0.3 }]

            [coefficients.c]
            const = [1.0]

            [scales]
            epsilon = 0.1
            delta = 0.02
            m = 0.1
        "#;
        let spec = ProblemSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.b.components[0].modes.len(), 2);
        assert_eq!(spec.c_at(&[0.5]), vec![1.0]);
        assert_eq!(spec.max_harmonic(), 2);
    }

    #[test]
    fn config_rejects_zero_wave_vector() {
        let text = r#"
            [problem]
            d = 1

            [coefficients.b]
            modes = [{ k = [0], cos = 1.0 }]
        "#;
        assert!(ProblemSpec::from_toml_str(text).is_err());
    }

    #[test]
    fn validate_rejects_alpha_below_floor() {
        let mut spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        spec.sigma = SigmaSpec::Diagonal {
            values: vec![1e-9],
        };
        assert!(spec.validate().is_err());
    }
}
