//! Law-of-large-numbers check: the ensemble mean of simulated slow paths
//! against the deterministic flow of the homogenized drift.

use nalgebra::DVector;
use serde::Serialize;

use super::sim::{simulate, Controller, PathEnsemble, SimConfig};
use crate::error::Result;
use crate::ldp::CoeffProvider;
use crate::model::ProblemSpec;

/// RK4 substeps per stored sampling interval.
const ODE_SUBSTEPS: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct LlnReport {
    /// Sampling times of the stored states.
    pub times: Vec<f64>,
    /// Ensemble mean, row-major (sample, component).
    pub mean: Vec<f64>,
    /// Standard error of the mean, same layout.
    pub se: Vec<f64>,
    /// Homogenized flow at the sampling times, same layout.
    pub ode: Vec<f64>,
    /// max over samples of the euclidean mean-to-flow distance.
    pub sup_distance: f64,
    pub terminal_gap: f64,
    /// Euclidean norm of the terminal per-component standard errors.
    pub terminal_se: f64,
    /// Terminal gap within 3 combined standard errors.
    pub within_3se: bool,
}

fn rk4_segment(
    provider: &CoeffProvider,
    q: &mut DVector<f64>,
    t0: f64,
    t1: f64,
) -> Result<()> {
    let h = (t1 - t0) / ODE_SUBSTEPS as f64;
    for _ in 0..ODE_SUBSTEPS {
        let k1 = provider.at(q)?.r.clone();
        let k2 = provider.at(&(&*q + &k1 * (h / 2.0)))?.r.clone();
        let k3 = provider.at(&(&*q + &k2 * (h / 2.0)))?.r.clone();
        let k4 = provider.at(&(&*q + &k3 * h))?.r.clone();
        *q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(())
}

/// Integrates the homogenized drift through the sampling times.
pub fn homogenized_flow(
    provider: &CoeffProvider,
    q0: &[f64],
    times: &[f64],
) -> Result<Vec<f64>> {
    let mut q = DVector::from_column_slice(q0);
    let mut out = Vec::with_capacity(times.len() * q0.len());
    let mut t = times.first().copied().unwrap_or(0.0);
    for &tk in times {
        if tk > t {
            rk4_segment(provider, &mut q, t, tk)?;
            t = tk;
        }
        out.extend(q.iter().copied());
    }
    Ok(out)
}

/// Runs an ensemble and compares its mean path with the homogenized flow.
/// A zero store stride is replaced by one giving about 64 samples.
pub fn lln_check(
    spec: &ProblemSpec,
    config: &SimConfig,
    provider: &CoeffProvider,
    controller: Option<&Controller>,
) -> Result<(LlnReport, PathEnsemble)> {
    let mut cfg = config.clone();
    if cfg.store_stride == 0 {
        cfg.store_stride = (cfg.n_steps / 64).max(1);
    }
    let ens = simulate(spec, &cfg, controller)?;
    let (mean, se) = ens.mean_path();
    let ode = homogenized_flow(provider, &spec.q0, &ens.times)?;
    let d = ens.d;
    let mut sup = 0.0f64;
    for k in 0..ens.times.len() {
        let dist: f64 = (0..d)
            .map(|j| (mean[k * d + j] - ode[k * d + j]).powi(2))
            .sum::<f64>()
            .sqrt();
        sup = sup.max(dist);
    }
    let last = ens.times.len() - 1;
    let terminal_gap: f64 = (0..d)
        .map(|j| (mean[last * d + j] - ode[last * d + j]).powi(2))
        .sum::<f64>()
        .sqrt();
    let terminal_se: f64 = (0..d)
        .map(|j| se[last * d + j].powi(2))
        .sum::<f64>()
        .sqrt();
    let report = LlnReport {
        times: ens.times.clone(),
        within_3se: terminal_gap <= 3.0 * terminal_se,
        mean,
        se,
        ode,
        sup_distance: sup,
        terminal_gap,
        terminal_se,
    };
    Ok((report, ens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::RateCoeffs;
    use crate::model::PresetName;
    use nalgebra::DMatrix;

    fn constant_provider(r: f64, q: f64) -> CoeffProvider {
        CoeffProvider::Single(
            RateCoeffs::new(DVector::from_vec(vec![r]), DMatrix::from_vec(1, 1, vec![q]))
                .unwrap(),
        )
    }

    #[test]
    fn flow_of_constant_drift_is_a_straight_line() {
        let provider = constant_provider(1.5, 2.0);
        let times = vec![0.0, 0.25, 0.5, 1.0];
        let flow = homogenized_flow(&provider, &[0.5], &times).unwrap();
        for (k, &t) in times.iter().enumerate() {
            assert!((flow[k] - (0.5 + 1.5 * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_flow_matches_logistic_style_ode() {
        // r(x) = 1 + x/2 on a grid dense enough that interpolation is exact
        let knots: Vec<f64> = (0..81).map(|i| -1.0 + i as f64 * 0.1).collect();
        let values: Vec<RateCoeffs> = knots
            .iter()
            .map(|&x| {
                RateCoeffs::new(
                    DVector::from_vec(vec![1.0 + 0.5 * x]),
                    DMatrix::from_vec(1, 1, vec![1.0]),
                )
                .unwrap()
            })
            .collect();
        let provider = CoeffProvider::grid(0, knots, values).unwrap();
        let times: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let flow = homogenized_flow(&provider, &[0.0], &times).unwrap();
        // exact solution of x' = 1 + x/2, x(0) = 0: x = 2(e^{t/2} − 1)
        for (k, &t) in times.iter().enumerate() {
            let exact = 2.0 * ((0.5 * t).exp() - 1.0);
            assert!(
                (flow[k] - exact).abs() < 1e-8,
                "t = {t}: {} vs {exact}",
                flow[k]
            );
        }
    }

    #[test]
    fn constant_coeff_ensemble_mean_tracks_homogenized_line() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let cfg = SimConfig::underdamped(&spec, 0.5, 256, 3);
        // r = c/λ = 1, Q = α/λ² = 2
        let provider = constant_provider(1.0, 2.0);
        let (report, _) = lln_check(&spec, &cfg, &provider, None).unwrap();
        assert!(report.within_3se, "gap {} se {}", report.terminal_gap, report.terminal_se);
        assert!(report.terminal_gap < 0.1);
    }
}
