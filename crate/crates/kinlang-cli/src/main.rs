//! Command-line driver: one subcommand per experiment. All artifacts are
//! deterministic for a fixed seed and truncation — CSV/JSON bodies are
//! byte-identical across reruns, and volatile metadata (timestamps, tool
//! version) lives in `.meta.json` sidecars next to each artifact.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use kinlang::cell::{cell_convergence_metric, solve_cell, solve_chi, solve_phi};
use kinlang::dynamics::{
    lln_check, occupation_run, simulate, OccupationConfig, SimConfig, SystemKind,
};
use kinlang::homogenize::{coeffs_0, coeffs_m, mass_sweep};
use kinlang::identities::identity_suite;
use kinlang::io::{fmt_f64, write_csv, write_json, Metadata};
use kinlang::ldp::{
    action, is_estimate, CoeffProvider, ControlPolicy, DiscretePath, EventSpec, OptimalControl,
    RateCoeffs,
};
use kinlang::model::{
    calibrate_centering, check_conditions, PresetName, ProblemSpec, TrigMode, TrigPoly,
};
use kinlang::spectral::SpectralField;
use kinlang::stationary::{hypocoercivity_sweep, solve_rho_m, FastSystem};

#[derive(Parser)]
#[command(
    name = "kinlang",
    version,
    about = "Numerical laboratory for multiscale kinetic Langevin dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Problem selection and truncation, shared by the solver subcommands.
#[derive(Args, Clone)]
struct ProblemArgs {
    /// Built-in preset: constant_coeff, gradient_drift, tilted_nongradient.
    #[arg(long, default_value = "gradient_drift")]
    preset: String,
    /// TOML problem description; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-tilt the fast drift so the centering condition holds.
    #[arg(long)]
    calibrate: bool,
    /// Override the scale ε.
    #[arg(long)]
    eps: Option<f64>,
    /// Override the scale δ.
    #[arg(long)]
    delta: Option<f64>,
    /// Override the mass m.
    #[arg(long)]
    mass: Option<f64>,
    /// Hermite modes per momentum axis (default 16 in 1-d, 8 in 2-d).
    #[arg(long)]
    hermite: Option<usize>,
    /// Fourier harmonic cutoff (default 12 in 1-d, 5 in 2-d).
    #[arg(long)]
    fourier: Option<usize>,
}

impl ProblemArgs {
    /// Resolved problem plus (hermite, fourier) truncation.
    fn load(&self) -> Result<(ProblemSpec, usize, usize)> {
        let mut spec: ProblemSpec = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ProblemSpec::preset(parse_preset(&self.preset)?),
        };
        if let Some(e) = self.eps {
            spec.scales.epsilon = e;
        }
        if let Some(d) = self.delta {
            spec.scales.delta = d;
        }
        if let Some(m) = self.mass {
            spec.scales.m = m;
        }
        let (n_def, k_def) = if spec.d >= 2 { (8, 5) } else { (16, 12) };
        let n = self.hermite.unwrap_or(n_def);
        let k = self.fourier.unwrap_or(k_def);
        if self.calibrate {
            let report = calibrate_centering(&spec, k)
                .context("centering calibration during config load")?;
            spec = spec.with_tilt(report.tilt);
        }
        spec.validate().context("validating problem description")?;
        Ok((spec, n, k))
    }
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OutArgs {
    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

const DEFAULT_M_LIST: [f64; 7] = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005];

#[derive(Args, Clone)]
struct MassList {
    /// Strictly decreasing mass values, comma separated.
    #[arg(long = "m-list", value_delimiter = ',', default_values_t = DEFAULT_M_LIST)]
    m_list: Vec<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the standing assumptions of a problem description.
    Check {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Stationary-correction norms along a mass sweep, with the gradient
    /// identity evaluated on both sides at every point.
    Density {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        masses: MassList,
    },
    /// Cell chain (correctors, remainder, convergence metric) per mass.
    Cell {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        masses: MassList,
    },
    /// Homogenized drift and mobility against their overdamped limits.
    Homogenize {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        masses: MassList,
    },
    /// Density sweep at two truncations plus the cell metric and the
    /// homogenized-coefficient gaps, in one run.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        masses: MassList,
    },
    /// Quadratic action of fixed test paths at finite mass vs the limit.
    Action {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        masses: MassList,
        #[arg(long = "t-final", default_value_t = 1.0)]
        t_final: f64,
    },
    /// Simulate an ensemble of the kinetic or overdamped system.
    Simulate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 256)]
        paths: usize,
        #[arg(long = "t-final", default_value_t = 1.0)]
        t_final: f64,
        /// kinetic or overdamped.
        #[arg(long, default_value = "kinetic")]
        system: String,
        /// Store every stride-th state for the mean-path artifact;
        /// 0 keeps terminals only.
        #[arg(long, default_value_t = 0)]
        stride: usize,
    },
    /// Ensemble mean against the homogenized deterministic flow.
    Lln {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long = "t-final", default_value_t = 1.0)]
        t_final: f64,
        /// kinetic or overdamped.
        #[arg(long, default_value = "kinetic")]
        system: String,
    },
    /// Occupation-measure accounting: unit mass per unit time, generator
    /// stationarity residuals, and the fast-variable histogram.
    Occupation {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 64)]
        paths: usize,
        #[arg(long = "t-final", default_value_t = 2.0)]
        t_final: f64,
        /// Averaging window Δ; default √ε·T.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long = "p-bins", default_value_t = 32)]
        p_bins: usize,
        #[arg(long = "r-bins", default_value_t = 32)]
        r_bins: usize,
    },
    /// Importance-sampling estimate of a terminal tail event under the
    /// optimal tilting control (1-d problems).
    IsEstimate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long = "t-final", default_value_t = 1.0)]
        t_final: f64,
        /// Tail threshold; default puts the event this many homogenized
        /// standard deviations above the mean terminal position.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 4.0)]
        sigmas: f64,
        /// aim (constant velocity toward the threshold) or zero (plain MC).
        #[arg(long, default_value = "aim")]
        policy: String,
    },
    /// Integration-by-parts identity suite on seeded random band-limited
    /// fields; runs on fixed tilted/centered 1-d configurations.
    Identities {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 16)]
        hermite: usize,
        #[arg(long, default_value_t = 10)]
        fourier: usize,
        #[arg(long, default_value_t = 0.2)]
        mass: f64,
    },
}

fn parse_preset(name: &str) -> Result<PresetName> {
    match name {
        "constant_coeff" => Ok(PresetName::ConstantCoeff),
        "gradient_drift" => Ok(PresetName::GradientDrift),
        "tilted_nongradient" => Ok(PresetName::TiltedNongradient),
        other => bail!(
            "unknown preset {other:?}; expected constant_coeff, gradient_drift, \
             or tilted_nongradient"
        ),
    }
}

fn metadata(spec: &ProblemSpec, n: usize, k: usize, seed: u64, command: &str) -> Result<Metadata> {
    let text = toml::to_string(spec).context("serializing problem description")?;
    Ok(Metadata::new(&text, seed, n, k, command.to_string()))
}

fn validate_m_list(m_list: &[f64]) -> Result<()> {
    if m_list.len() < 2 || m_list.windows(2).any(|w| w[1] >= w[0]) {
        bail!("--m-list must hold at least two strictly decreasing values");
    }
    Ok(())
}

/// Least-squares slope of y against x.
fn lsq_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

fn opt_str(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Check { problem, out } => run_check(&problem, &out),
        Command::Density {
            problem,
            out,
            masses,
        } => run_density(&problem, &out, &masses.m_list),
        Command::Cell {
            problem,
            out,
            masses,
        } => run_cell(&problem, &out, &masses.m_list),
        Command::Homogenize {
            problem,
            out,
            masses,
        } => run_homogenize(&problem, &out, &masses.m_list),
        Command::Sweep {
            problem,
            out,
            masses,
        } => run_sweep(&problem, &out, &masses.m_list),
        Command::Action {
            problem,
            out,
            masses,
            t_final,
        } => run_action(&problem, &out, &masses.m_list, t_final),
        Command::Simulate {
            problem,
            out,
            paths,
            t_final,
            system,
            stride,
        } => run_simulate(&problem, &out, paths, t_final, &system, stride),
        Command::Lln {
            problem,
            out,
            paths,
            t_final,
            system,
        } => run_lln(&problem, &out, paths, t_final, &system),
        Command::Occupation {
            problem,
            out,
            paths,
            t_final,
            window,
            p_bins,
            r_bins,
        } => run_occupation(&problem, &out, paths, t_final, window, p_bins, r_bins),
        Command::IsEstimate {
            problem,
            out,
            paths,
            t_final,
            threshold,
            sigmas,
            policy,
        } => run_is_estimate(&problem, &out, paths, t_final, threshold, sigmas, &policy),
        Command::Identities {
            out,
            trials,
            hermite,
            fourier,
            mass,
        } => run_identities(&out, trials, hermite, fourier, mass),
    }
}

fn run_check(problem: &ProblemArgs, out: &OutArgs) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    let report = check_conditions(&spec, k).context("condition check")?;
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "check")?;
    write_json(&out.path("check.json"), &report, &meta).context("writing check.json")?;
    println!(
        "lambda(q0) = {} ({})",
        fmt_f64(report.lambda_value),
        if report.lambda_positive { "positive" } else { "NOT POSITIVE" }
    );
    println!(
        "alpha_min  = {} ({})",
        fmt_f64(report.alpha_min),
        if report.alpha_above_floor { "above floor" } else { "BELOW FLOOR" }
    );
    println!(
        "centering  = {} ({})",
        fmt_f64(report.centering_residual),
        if report.centered { "centered" } else { "not centered" }
    );
    println!(
        "delta/eps  = {}{}",
        fmt_f64(report.delta_over_epsilon),
        if report.scale_separation_flagged {
            "  (flagged: scale separation is weak)"
        } else {
            ""
        }
    );
    println!("overall: {}", if report.pass { "pass" } else { "FAIL" });
    Ok(())
}

fn run_density(problem: &ProblemArgs, out: &OutArgs, m_list: &[f64]) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    validate_m_list(m_list)?;
    let sys = FastSystem::new(&spec, n, k).context("building fast system")?;
    let result = hypocoercivity_sweep(&sys, m_list).context("density sweep")?;
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "density")?;
    let header = [
        "m",
        "norm_l2",
        "norm_h1",
        "grad_p",
        "grad_r",
        "route_agreement",
        "identity_rel_err",
        "slope_so_far",
    ];
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.m),
                fmt_f64(r.norm_l2),
                fmt_f64(r.norm_h1),
                fmt_f64(r.grad_p),
                fmt_f64(r.grad_r),
                fmt_f64(r.route_agreement),
                fmt_f64(r.identity_rel_err),
                opt_str(r.slope_so_far),
            ]
        })
        .collect();
    write_csv(&out.path("density.csv"), &header, &rows, &meta).context("writing density.csv")?;
    write_json(&out.path("density.json"), &result, &meta).context("writing density.json")?;
    println!(
        "density sweep over {} masses: slope {} ({})",
        result.rows.len(),
        fmt_f64(result.slope),
        if result.strictly_decreasing {
            "strictly decreasing"
        } else {
            "NOT monotone"
        }
    );
    Ok(())
}

fn run_cell(problem: &ProblemArgs, out: &OutArgs, m_list: &[f64]) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    validate_m_list(m_list)?;
    let sys = FastSystem::new(&spec, n, k).context("building fast system")?;
    let mut rows = Vec::with_capacity(m_list.len());
    let mut logs = Vec::new();
    for &m in m_list {
        let set = solve_rho_m(&sys, m)
            .with_context(|| format!("stationary solve at m = {m}"))?;
        let cell = solve_cell(&sys, &set).with_context(|| format!("cell chain at m = {m}"))?;
        let psi3_norm = cell
            .psi3
            .norm_rho0
            .iter()
            .fold(0.0f64, |a, &v| a.hypot(v));
        let identity = cell
            .psi3
            .identity_rel_err
            .iter()
            .fold(0.0f64, |a, &v| a.max(v));
        logs.push((m.ln(), psi3_norm.max(f64::MIN_POSITIVE).ln()));
        rows.push(vec![
            fmt_f64(m),
            fmt_f64(psi3_norm),
            fmt_f64(cell.psi3.route_disagreement),
            fmt_f64(identity),
            fmt_f64(cell.metric),
        ]);
    }
    let order = lsq_slope(&logs);
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "cell")?;
    let header = [
        "m",
        "psi3_norm",
        "route_disagreement",
        "identity_rel_err",
        "metric",
    ];
    write_csv(&out.path("cell.csv"), &header, &rows, &meta).context("writing cell.csv")?;
    write_json(
        &out.path("cell.json"),
        &serde_json::json!({ "fitted_order": order, "m_list": m_list }),
        &meta,
    )
    .context("writing cell.json")?;
    println!(
        "cell chain over {} masses: remainder order {}",
        m_list.len(),
        fmt_f64(order)
    );
    Ok(())
}

fn run_homogenize(problem: &ProblemArgs, out: &OutArgs, m_list: &[f64]) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    validate_m_list(m_list)?;
    let sys = FastSystem::new(&spec, n, k).context("building fast system")?;
    let sweep = mass_sweep(&sys, m_list).context("homogenized-coefficient sweep")?;
    let d = spec.d;
    let mut header: Vec<String> = vec!["m".into()];
    if d == 1 {
        header.extend(["r_m", "q_m", "r_0", "q_0"].map(String::from));
    } else {
        header.extend((0..d).map(|i| format!("r_m_{i}")));
        header.extend((0..d).flat_map(|i| (0..d).map(move |j| format!("q_m_{i}{j}"))));
        header.extend((0..d).map(|i| format!("r_0_{i}")));
        header.extend((0..d).flat_map(|i| (0..d).map(move |j| format!("q_0_{i}{j}"))));
    }
    header.extend(["diff_r", "diff_q", "slope_so_far"].map(String::from));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::with_capacity(sweep.rows.len());
    let mut logs: Vec<(f64, f64)> = Vec::new();
    for row in &sweep.rows {
        let mut cells = vec![fmt_f64(row.m)];
        cells.extend(row.r_m.iter().copied().map(fmt_f64));
        cells.extend(row.q_m.iter().copied().map(fmt_f64));
        cells.extend(sweep.r_0.iter().copied().map(fmt_f64));
        cells.extend(sweep.q_0.iter().copied().map(fmt_f64));
        cells.push(fmt_f64(row.diff_r));
        cells.push(fmt_f64(row.diff_q));
        // running slope of the mobility gap; blank while unresolved
        if row.diff_q > 1e-13 {
            logs.push((row.m.ln(), row.diff_q.ln()));
        }
        cells.push(if logs.len() >= 2 {
            fmt_f64(lsq_slope(&logs))
        } else {
            String::new()
        });
        rows.push(cells);
    }
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "homogenize")?;
    write_csv(&out.path("homogenize.csv"), &header_refs, &rows, &meta)
        .context("writing homogenize.csv")?;
    write_json(&out.path("homogenize.json"), &sweep, &meta).context("writing homogenize.json")?;
    println!(
        "homogenized coefficients over {} masses: diff_q {} -> {}{}",
        sweep.rows.len(),
        fmt_f64(sweep.rows.first().map(|r| r.diff_q).unwrap_or(0.0)),
        fmt_f64(sweep.rows.last().map(|r| r.diff_q).unwrap_or(0.0)),
        match sweep.slope_q {
            Some(s) => format!(", slope {}", fmt_f64(s)),
            None => String::new(),
        }
    );
    Ok(())
}

fn run_sweep(problem: &ProblemArgs, out: &OutArgs, m_list: &[f64]) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    validate_m_list(m_list)?;
    let (dn, dk) = if spec.d >= 2 { (2, 1) } else { (20, 8) };
    let sys = FastSystem::new(&spec, n, k).context("building fast system")?;
    let base = hypocoercivity_sweep(&sys, m_list).context("density sweep, base truncation")?;
    let sys_fine =
        FastSystem::new(&spec, n + dn, k + dk).context("building refined fast system")?;
    let fine =
        hypocoercivity_sweep(&sys_fine, m_list).context("density sweep, refined truncation")?;
    let cross_rel = base
        .rows
        .iter()
        .zip(&fine.rows)
        .map(|(a, b)| (a.norm_l2 - b.norm_l2).abs() / b.norm_l2.abs().max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    let metric = cell_convergence_metric(&sys, m_list).context("cell metric sweep")?;
    let coeffs = mass_sweep(&sys, m_list).context("homogenized-coefficient sweep")?;

    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "sweep")?;
    let norm_header = ["m", "norm_l2", "norm_h1", "grad_p", "grad_r", "slope_so_far"];
    for (name, res) in [("sweep_norms.csv", &base), ("sweep_norms_refined.csv", &fine)] {
        let rows: Vec<Vec<String>> = res
            .rows
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(r.m),
                    fmt_f64(r.norm_l2),
                    fmt_f64(r.norm_h1),
                    fmt_f64(r.grad_p),
                    fmt_f64(r.grad_r),
                    opt_str(r.slope_so_far),
                ]
            })
            .collect();
        write_csv(&out.path(name), &norm_header, &rows, &meta)
            .with_context(|| format!("writing {name}"))?;
    }
    let metric_rows: Vec<Vec<String>> = metric
        .iter()
        .map(|r| vec![fmt_f64(r.m), fmt_f64(r.metric)])
        .collect();
    write_csv(
        &out.path("sweep_metric.csv"),
        &["m", "metric"],
        &metric_rows,
        &meta,
    )
    .context("writing sweep_metric.csv")?;
    let coeff_rows: Vec<Vec<String>> = coeffs
        .rows
        .iter()
        .map(|r| vec![fmt_f64(r.m), fmt_f64(r.diff_r), fmt_f64(r.diff_q)])
        .collect();
    write_csv(
        &out.path("sweep_coeff_diffs.csv"),
        &["m", "diff_r", "diff_q"],
        &coeff_rows,
        &meta,
    )
    .context("writing sweep_coeff_diffs.csv")?;
    write_json(
        &out.path("sweep.json"),
        &serde_json::json!({
            "slope": base.slope,
            "strictly_decreasing": base.strictly_decreasing,
            "cross_truncation_rel": cross_rel,
            "truncations": [[n, k], [n + dn, k + dk]],
        }),
        &meta,
    )
    .context("writing sweep.json")?;
    println!(
        "sweep over {} masses: slope {}, {}, cross-truncation gap {}",
        m_list.len(),
        fmt_f64(base.slope),
        if base.strictly_decreasing {
            "strictly decreasing"
        } else {
            "NOT monotone"
        },
        fmt_f64(cross_rel)
    );
    Ok(())
}

/// Three fixed test paths for the action comparison.
fn test_paths(spec: &ProblemSpec, t_final: f64) -> Result<Vec<(&'static str, DiscretePath)>> {
    let q0 = &spec.q0;
    let n = 200;
    let straight = DiscretePath::straight(q0, &vec![0.7; spec.d], t_final, n)?;
    let q0_sine = q0.clone();
    let sine = DiscretePath::from_fn(q0, t_final, n, move |t| {
        q0_sine
            .iter()
            .map(|&a| a + 0.5 * t + 0.3 * (2.0 * std::f64::consts::PI * t / t_final).sin())
            .collect()
    })?;
    let q0_arc = q0.clone();
    let arc = DiscretePath::from_fn(q0, t_final, n, move |t| {
        q0_arc
            .iter()
            .map(|&a| a + 0.9 * t * (2.0 * t_final - t) / t_final)
            .collect()
    })?;
    Ok(vec![("straight", straight), ("sine", sine), ("arc", arc)])
}

fn run_action(problem: &ProblemArgs, out: &OutArgs, m_list: &[f64], t_final: f64) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    validate_m_list(m_list)?;
    let sys = FastSystem::new(&spec, n, k).context("building fast system")?;
    let chi = solve_chi(&sys).context("overdamped cell problem")?;
    let provider_0 = CoeffProvider::Single(
        RateCoeffs::from_overdamped(&coeffs_0(&sys, &chi).context("overdamped coefficients")?)
            .context("overdamped rate coefficients")?,
    );
    let paths = test_paths(&spec, t_final)?;
    let mut rows = Vec::new();
    let mut monotone = vec![true; paths.len()];
    let mut prev_gap = vec![f64::INFINITY; paths.len()];
    for &m in m_list {
        let set = solve_rho_m(&sys, m)
            .with_context(|| format!("stationary solve at m = {m}"))?;
        let phi = solve_phi(&sys, &set).with_context(|| format!("corrector at m = {m}"))?;
        let provider_m = CoeffProvider::Single(
            RateCoeffs::from_finite_mass(
                &coeffs_m(&sys, &set, &phi)
                    .with_context(|| format!("homogenized coefficients at m = {m}"))?,
            )
            .context("finite-mass rate coefficients")?,
        );
        for (i, (name, path)) in paths.iter().enumerate() {
            let s_m = action(path, &provider_m)
                .with_context(|| format!("action of {name} at m = {m}"))?;
            let s_0 = action(path, &provider_0)
                .with_context(|| format!("limit action of {name}"))?;
            let gap = (s_m - s_0).abs();
            if gap > prev_gap[i] + 1e-14 {
                monotone[i] = false;
            }
            prev_gap[i] = gap;
            rows.push(vec![
                (*name).to_string(),
                fmt_f64(m),
                fmt_f64(s_m),
                fmt_f64(s_0),
                fmt_f64(gap),
            ]);
        }
    }
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "action")?;
    write_csv(
        &out.path("action.csv"),
        &["path", "m", "s_m", "s_0", "gap"],
        &rows,
        &meta,
    )
    .context("writing action.csv")?;
    let names: Vec<&str> = paths.iter().map(|p| p.0).collect();
    write_json(
        &out.path("action.json"),
        &serde_json::json!({ "paths": names, "gap_decreasing": monotone }),
        &meta,
    )
    .context("writing action.json")?;
    println!(
        "action gaps over {} masses: decreasing on {}/{} paths",
        m_list.len(),
        monotone.iter().filter(|&&b| b).count(),
        monotone.len()
    );
    Ok(())
}

fn parse_system(name: &str) -> Result<SystemKind> {
    match name {
        "kinetic" => Ok(SystemKind::Underdamped),
        "overdamped" => Ok(SystemKind::Overdamped),
        other => bail!("unknown system {other:?}; expected kinetic or overdamped"),
    }
}

fn sim_config(
    spec: &ProblemSpec,
    system: SystemKind,
    t_final: f64,
    paths: usize,
    seed: u64,
) -> SimConfig {
    match system {
        SystemKind::Underdamped => SimConfig::underdamped(spec, t_final, paths, seed),
        SystemKind::Overdamped => SimConfig::overdamped(spec, t_final, paths, seed),
    }
}

fn run_simulate(
    problem: &ProblemArgs,
    out: &OutArgs,
    paths: usize,
    t_final: f64,
    system: &str,
    stride: usize,
) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    let kind = parse_system(system)?;
    let mut cfg = sim_config(&spec, kind, t_final, paths, out.seed);
    cfg.store_stride = stride;
    let ens = simulate(&spec, &cfg, None).context("ensemble run")?;
    let (mean, se) = ens.terminal_mean_se();
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "simulate")?;
    write_json(
        &out.path("simulate.json"),
        &serde_json::json!({
            "system": system,
            "n_paths": ens.n_paths(),
            "n_steps": cfg.n_steps,
            "h": cfg.h(),
            "t_final": t_final,
            "terminal_mean": mean,
            "terminal_se": se,
            "clamped": ens.clamped,
        }),
        &meta,
    )
    .context("writing simulate.json")?;
    if stride > 0 {
        let (path_mean, path_se) = ens.mean_path();
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((0..ens.d).map(|j| format!("mean_{j}")));
        header.extend((0..ens.d).map(|j| format!("se_{j}")));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = ens
            .times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut cells = vec![fmt_f64(t)];
                cells.extend((0..ens.d).map(|j| fmt_f64(path_mean[i * ens.d + j])));
                cells.extend((0..ens.d).map(|j| fmt_f64(path_se[i * ens.d + j])));
                cells
            })
            .collect();
        write_csv(&out.path("simulate_mean_path.csv"), &header_refs, &rows, &meta)
            .context("writing simulate_mean_path.csv")?;
    }
    println!(
        "{} ensemble: {} paths x {} steps (h = {}), terminal mean {:?}",
        system,
        ens.n_paths(),
        cfg.n_steps,
        fmt_f64(cfg.h()),
        mean
    );
    Ok(())
}

/// Homogenized coefficients as a constant-in-q provider matching the
/// simulated system: finite-mass for the kinetic run, limit for the
/// overdamped run.
fn coeff_provider(
    sys: &FastSystem,
    kind: SystemKind,
    m: f64,
) -> Result<CoeffProvider> {
    let coeffs = match kind {
        SystemKind::Underdamped => {
            let set = solve_rho_m(sys, m).context("stationary solve")?;
            let phi = solve_phi(sys, &set).context("corrector solve")?;
            RateCoeffs::from_finite_mass(
                &coeffs_m(sys, &set, &phi).context("homogenized coefficients")?,
            )?
        }
        SystemKind::Overdamped => {
            let chi = solve_chi(sys).context("overdamped cell problem")?;
            RateCoeffs::from_overdamped(&coeffs_0(sys, &chi).context("limit coefficients")?)?
        }
    };
    Ok(CoeffProvider::Single(coeffs))
}

fn run_lln(
    problem: &ProblemArgs,
    out: &OutArgs,
    paths: usize,
    t_final: f64,
    system: &str,
) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    let kind = parse_system(system)?;
    let sys = FastSystem::new(&spec, n, k).context("building fast system")?;
    let provider = coeff_provider(&sys, kind, spec.scales.m)?;
    let cfg = sim_config(&spec, kind, t_final, paths, out.seed);
    let (report, _) = lln_check(&spec, &cfg, &provider, None).context("ensemble-mean check")?;
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "lln")?;
    let mut header: Vec<String> = vec!["t".into()];
    for tag in ["mean", "se", "ode"] {
        header.extend((0..spec.d).map(|j| format!("{tag}_{j}")));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let d = spec.d;
    let rows: Vec<Vec<String>> = report
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut cells = vec![fmt_f64(t)];
            cells.extend((0..d).map(|j| fmt_f64(report.mean[i * d + j])));
            cells.extend((0..d).map(|j| fmt_f64(report.se[i * d + j])));
            cells.extend((0..d).map(|j| fmt_f64(report.ode[i * d + j])));
            cells
        })
        .collect();
    write_csv(&out.path("lln.csv"), &header_refs, &rows, &meta).context("writing lln.csv")?;
    write_json(&out.path("lln.json"), &report, &meta).context("writing lln.json")?;
    println!(
        "{} ensemble vs homogenized flow: sup distance {}, terminal gap {} ({} 3 SE)",
        system,
        fmt_f64(report.sup_distance),
        fmt_f64(report.terminal_gap),
        if report.within_3se { "within" } else { "OUTSIDE" }
    );
    Ok(())
}

fn run_occupation(
    problem: &ProblemArgs,
    out: &OutArgs,
    paths: usize,
    t_final: f64,
    window: Option<f64>,
    p_bins: usize,
    r_bins: usize,
) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    let sys = FastSystem::new(&spec, n, k).context("building fast system")?;
    let cfg = SimConfig::underdamped(&spec, t_final, paths, out.seed);
    let occ = OccupationConfig {
        window: window.unwrap_or(spec.scales.epsilon.sqrt() * t_final),
        n_p_bins: p_bins,
        p_range: {
            let s = 4.0 * spec.beta.sqrt();
            (-s, s)
        },
        n_r_bins: r_bins,
    };
    // stationarity residuals E[(1/T)∫ L g] for g = p and g = sin(2πr), per axis
    let mut fields = Vec::new();
    let gen = sys.generator(spec.scales.m);
    for axis in 0..spec.d {
        let p = SpectralField::p_coordinate(&sys.basis, axis);
        fields.push((format!("L[p_{axis}]"), p.apply(&gen)));
        let mut kvec = vec![0i32; spec.d];
        kvec[axis] = 1;
        let sin_poly = TrigPoly {
            constant: 0.0,
            modes: vec![TrigMode {
                k: kvec,
                cos: 0.0,
                sin: 1.0,
            }],
        };
        let sin_field = SpectralField::from_trig_poly(&sys.basis, &sin_poly);
        fields.push((format!("L[sin_{axis}]"), sin_field.apply(&gen)));
    }
    let report = occupation_run(&sys, &cfg, &occ, &fields).context("occupation run")?;
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "occupation")?;
    let residual_rows: Vec<Vec<String>> = report
        .residuals
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                fmt_f64(r.mean),
                fmt_f64(r.se),
                fmt_f64(r.residual),
            ]
        })
        .collect();
    write_csv(
        &out.path("occupation_residuals.csv"),
        &["field", "mean", "se", "residual"],
        &residual_rows,
        &meta,
    )
    .context("writing occupation_residuals.csv")?;
    if let Some(hist) = &report.histogram {
        let mut header: Vec<String> = vec!["p_lo".into(), "p_hi".into()];
        header.extend(
            hist.r_edges
                .windows(2)
                .map(|w| format!("r_{}", fmt_f64(0.5 * (w[0] + w[1])))),
        );
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let n_r = hist.n_r_cols();
        let rows: Vec<Vec<String>> = (0..hist.n_p_rows())
            .map(|i| {
                // row 0 is the underflow bin, the last row is overflow
                let lo = if i == 0 {
                    "-inf".to_string()
                } else {
                    fmt_f64(hist.p_edges[i - 1])
                };
                let hi = if i + 1 == hist.n_p_rows() {
                    "inf".to_string()
                } else {
                    fmt_f64(hist.p_edges[i])
                };
                let mut cells = vec![lo, hi];
                cells.extend((0..n_r).map(|j| fmt_f64(hist.probs[i * n_r + j])));
                cells
            })
            .collect();
        write_csv(&out.path("occupation_hist.csv"), &header_refs, &rows, &meta)
            .context("writing occupation_hist.csv")?;
    }
    write_json(&out.path("occupation.json"), &report, &meta)
        .context("writing occupation.json")?;
    println!(
        "occupation over T = {}: mass/time = {}, residuals {}",
        fmt_f64(report.horizon),
        fmt_f64(report.mass_per_time),
        report
            .residuals
            .iter()
            .map(|r| format!("{} = {}", r.name, fmt_f64(r.residual)))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn run_is_estimate(
    problem: &ProblemArgs,
    out: &OutArgs,
    paths: usize,
    t_final: f64,
    threshold: Option<f64>,
    sigmas: f64,
    policy_name: &str,
) -> Result<()> {
    let (spec, n, k) = problem.load()?;
    if spec.d != 1 {
        bail!("is-estimate drives a scalar terminal event; the problem must be 1-d");
    }
    let sys = FastSystem::new(&spec, n, k).context("building fast system")?;
    let m = spec.scales.m;
    let set = solve_rho_m(&sys, m).context("stationary solve")?;
    let phi = solve_phi(&sys, &set).context("corrector solve")?;
    let coeffs =
        RateCoeffs::from_finite_mass(&coeffs_m(&sys, &set, &phi).context("homogenized coefficients")?)?;
    let drift = coeffs.r[0];
    let mobility = coeffs.q[(0, 0)];
    let q0 = spec.q0[0];
    let thr = threshold.unwrap_or_else(|| {
        q0 + drift * t_final + sigmas * (spec.scales.epsilon * mobility * t_final).sqrt()
    });
    let nu = (thr - q0) / t_final;
    let nu_vec = DVector::from_vec(vec![nu]);
    let control = OptimalControl::new(&sys, &phi, coeffs).context("optimal control")?;
    let (energy_lhs, energy_rhs) = control.energy_identity(&sys, &set, &nu_vec);
    let energy_rel =
        (energy_lhs - energy_rhs).abs() / energy_lhs.abs().max(energy_rhs.abs()).max(1e-300);
    let policy = match policy_name {
        "aim" => ControlPolicy::ConstantVelocity(vec![nu]),
        "zero" => ControlPolicy::Zero,
        other => bail!("unknown policy {other:?}; expected aim or zero"),
    };
    let cfg = SimConfig::underdamped(&spec, t_final, paths, out.seed);
    let event = move |q: &[f64]| q[0] >= thr;
    let report = is_estimate(&sys, &control, &policy, &cfg, &EventSpec::TerminalSet(&event))
        .context("importance-sampling run")?;
    out.prepare()?;
    let meta = metadata(&spec, n, k, out.seed, "is-estimate")?;
    write_json(
        &out.path("is_estimate.json"),
        &serde_json::json!({
            "estimate": report.estimate,
            "std_error": report.std_error,
            "variance_ratio": report.variance_ratio,
            "n": report.n,
            "clamped": report.clamped,
            "policy": report.policy,
            "seed": out.seed,
            "threshold": thr,
            "nu": nu,
            "energy_identity": {
                "control_energy": energy_lhs,
                "quadratic_form": energy_rhs,
                "rel_err": energy_rel,
            },
        }),
        &meta,
    )
    .context("writing is_estimate.json")?;
    println!(
        "P(q_T >= {}) = {} +- {} ({} paths, policy {}, variance ratio {})",
        fmt_f64(thr),
        fmt_f64(report.estimate),
        fmt_f64(report.std_error),
        report.n,
        report.policy,
        fmt_f64(report.variance_ratio)
    );
    println!(
        "control energy identity: {} vs {} (rel {})",
        fmt_f64(energy_lhs),
        fmt_f64(energy_rhs),
        fmt_f64(energy_rel)
    );
    Ok(())
}

fn run_identities(
    out: &OutArgs,
    trials: usize,
    hermite: usize,
    fourier: usize,
    mass: f64,
) -> Result<()> {
    let suite =
        identity_suite(hermite, fourier, mass, trials, out.seed).context("identity suite")?;
    out.prepare()?;
    let params = serde_json::json!({
        "trials": trials, "hermite": hermite, "fourier": fourier, "m": mass,
    });
    let meta = Metadata::new(&params.to_string(), out.seed, hermite, fourier, "identities");
    write_json(&out.path("identities.json"), &suite, &meta)
        .context("writing identities.json")?;
    for row in &suite.rows {
        println!(
            "{} [{}]: max residual {} (tolerance {}) {}",
            row.name,
            row.system,
            fmt_f64(row.max_rel),
            fmt_f64(row.tolerance),
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    if !suite.all_pass {
        bail!("identity suite failed");
    }
    Ok(())
}
