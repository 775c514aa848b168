//! Double-averaged occupation measure of the fast variables along slow
//! paths: window averages of (p, q/δ mod 1) integrated over the horizon.
//!
//! The discrete measure is a weighted sum over step states. With window
//! weight w = round(Δ/h), the state at step j carries integer multiplicity
//! overlap(j) = #{k < n_T : k ≤ j < k+w}, so the total mass is n_T·w/w = T/h
//! steps exactly and mass per unit horizon is exactly one.

use rayon::prelude::*;
use serde::Serialize;

use super::sim::{SimConfig, Stepper, SystemKind};
use crate::error::{Error, Result};
use crate::spectral::SpectralField;
use crate::stationary::FastSystem;

#[derive(Debug, Clone, Serialize)]
pub struct OccupationConfig {
    /// Window length Δ of the inner time average.
    pub window: f64,
    /// Momentum bins between p_range, plus one underflow and one overflow.
    pub n_p_bins: usize,
    pub p_range: (f64, f64),
    /// Torus bins on [0, 1).
    pub n_r_bins: usize,
}

impl OccupationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0) {
            return Err(Error::InvalidParameter(
                "occupation window must be positive".into(),
            ));
        }
        if self.n_p_bins == 0 || self.n_r_bins == 0 || self.p_range.1 <= self.p_range.0 {
            return Err(Error::InvalidParameter(
                "occupation histogram needs nonempty bins and an ordered p range".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualRow {
    pub name: String,
    /// Ensemble mean of (1/T)∫ f dP across paths.
    pub mean: f64,
    pub se: f64,
    /// |mean|: the reported stationarity residual.
    pub residual: f64,
}

/// Fast-variable histogram, d = 1 only: (n_p_bins + 2) × n_r_bins
/// probabilities in row-major (p bin, r bin) order; p rows 0 and
/// n_p_bins + 1 are the under/overflow rows.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub p_edges: Vec<f64>,
    pub r_edges: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Histogram {
    pub fn n_p_rows(&self) -> usize {
        self.p_edges.len() + 1
    }

    pub fn n_r_cols(&self) -> usize {
        self.r_edges.len() - 1
    }

    /// Probability mass outside the p range.
    pub fn spill(&self) -> f64 {
        let cols = self.n_r_cols();
        let rows = self.n_p_rows();
        self.probs[..cols].iter().sum::<f64>()
            + self.probs[(rows - 1) * cols..].iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OccupationReport {
    /// Occupation horizon T.
    pub horizon: f64,
    pub window: f64,
    /// Window width in steps.
    pub window_steps: usize,
    /// Total mass divided by T; exactly one by construction.
    pub mass_per_time: f64,
    pub n_paths: usize,
    pub residuals: Vec<ResidualRow>,
    pub histogram: Option<Histogram>,
}

/// Integer multiplicity of step j in the double average: the number of
/// outer times k < n_T whose window [k, k+w) contains j. The last left
/// endpoint used is j = n_T + w − 2.
fn overlap_weights(n_t: usize, w: usize) -> Vec<u64> {
    (0..n_t + w - 1)
        .map(|j| {
            let hi = j.min(n_t - 1);
            let lo = j.saturating_sub(w - 1);
            (hi - lo + 1) as u64
        })
        .collect()
}

/// Simulates an ensemble over [0, T + Δ] and accumulates occupation
/// integrals of the given integrands together with the fast-variable
/// histogram (d = 1 only). `config.t_final` is the occupation horizon T;
/// the run is extended by the window internally.
pub fn occupation_run(
    sys: &FastSystem,
    config: &SimConfig,
    occ: &OccupationConfig,
    fields: &[(String, SpectralField)],
) -> Result<OccupationReport> {
    occ.validate()?;
    if config.system != SystemKind::Underdamped {
        return Err(Error::InvalidParameter(
            "occupation statistics need the underdamped system".into(),
        ));
    }
    let spec = &sys.spec;
    let h = config.h();
    let n_t = config.n_steps;
    let w = ((occ.window / h).round() as usize).max(1);
    let mut run_cfg = config.clone();
    run_cfg.n_steps = n_t + w - 1;
    run_cfg.t_final = (n_t + w - 1) as f64 * h;
    run_cfg.store_stride = 0;
    let stepper = Stepper::new(spec, &run_cfg, None)?;
    let weights = overlap_weights(n_t, w);
    let d = spec.d;
    let delta = config.delta;
    let horizon = n_t as f64 * h;
    let n_fields = fields.len();
    let do_hist = d == 1;
    let (p_lo, p_hi) = occ.p_range;
    let p_width = (p_hi - p_lo) / occ.n_p_bins as f64;
    let hist_len = if do_hist {
        (occ.n_p_bins + 2) * occ.n_r_bins
    } else {
        0
    };

    struct PathAcc {
        integrals: Vec<f64>,
        hist: Vec<u64>,
        mass: u64,
    }

    let accs: Result<Vec<PathAcc>> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut acc = PathAcc {
                integrals: vec![0.0; n_fields],
                hist: vec![0u64; hist_len],
                mass: 0,
            };
            let mut r = vec![0.0; d];
            stepper.run_path(i as u64, |k, _t, q, p| {
                if k >= weights.len() {
                    return;
                }
                let wt = weights[k];
                acc.mass += wt;
                for (rj, &qj) in r.iter_mut().zip(q) {
                    let y = qj / delta;
                    *rj = y - y.floor();
                }
                let wf = wt as f64;
                for (slot, (_, f)) in acc.integrals.iter_mut().zip(fields) {
                    *slot += wf * f.eval_at(&sys.basis, p, &r);
                }
                if do_hist {
                    let pj = p[0];
                    let row = if pj < p_lo {
                        0
                    } else if pj >= p_hi {
                        occ.n_p_bins + 1
                    } else {
                        1 + ((pj - p_lo) / p_width) as usize
                    };
                    let col = ((r[0] * occ.n_r_bins as f64) as usize).min(occ.n_r_bins - 1);
                    acc.hist[row * occ.n_r_bins + col] += wt;
                }
            })?;
            Ok(acc)
        })
        .collect();
    let accs = accs?;

    let expected_mass = (n_t as u64) * (w as u64);
    let n_paths = accs.len();
    let mut residuals = Vec::with_capacity(n_fields);
    // per-path time-averaged integrals: (h/w)·Σ overlap·f / T
    let scale = (h / w as f64) / horizon;
    for (idx, (name, _)) in fields.iter().enumerate() {
        let vals: Vec<f64> = accs.iter().map(|a| a.integrals[idx] * scale).collect();
        let mean = vals.iter().sum::<f64>() / n_paths as f64;
        let denom = (n_paths * n_paths.saturating_sub(1)).max(1) as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / denom;
        residuals.push(ResidualRow {
            name: name.clone(),
            mean,
            se: var.sqrt(),
            residual: mean.abs(),
        });
    }

    let mut mass_ok = true;
    for a in &accs {
        mass_ok &= a.mass == expected_mass;
    }
    let mass_per_time = if mass_ok {
        1.0
    } else {
        accs.iter().map(|a| a.mass as f64).sum::<f64>()
            / (n_paths as f64 * expected_mass as f64)
    };

    let histogram = if do_hist {
        let total: u64 = accs.iter().map(|a| a.mass).sum();
        let mut probs = vec![0.0; hist_len];
        for a in &accs {
            for (slot, &c) in probs.iter_mut().zip(&a.hist) {
                *slot += c as f64;
            }
        }
        for v in probs.iter_mut() {
            *v /= total as f64;
        }
        let p_edges = (0..=occ.n_p_bins)
            .map(|i| p_lo + i as f64 * p_width)
            .collect();
        let r_edges = (0..=occ.n_r_bins)
            .map(|i| i as f64 / occ.n_r_bins as f64)
            .collect();
        Some(Histogram {
            p_edges,
            r_edges,
            probs,
        })
    } else {
        None
    };

    Ok(OccupationReport {
        horizon,
        window: w as f64 * h,
        window_steps: w,
        mass_per_time,
        n_paths,
        residuals,
        histogram,
    })
}

/// χ² divergence Σ (o − e)²/e between two probability vectors, skipping
/// cells whose expected mass is negligible.
pub fn chi_squared_distance(observed: &[f64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 1e-12)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PresetName, ProblemSpec, TrigPoly};
    use crate::spectral::SpectralField;

    #[test]
    fn overlap_weights_sum_to_window_times_horizon() {
        for (n_t, w) in [(10usize, 3usize), (7, 7), (50, 1), (4, 9)] {
            let wts = overlap_weights(n_t, w);
            assert_eq!(wts.len(), n_t + w - 1);
            assert_eq!(wts.iter().sum::<u64>(), (n_t * w) as u64);
            assert!(wts.iter().all(|&x| (1..=w.min(n_t)).contains(&(x as usize))));
        }
    }

    #[test]
    fn unit_mass_and_exact_constant_integral() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let sys = FastSystem::new(&spec, 6, 3).unwrap();
        let mut cfg = SimConfig::underdamped(&spec, 0.3, 4, 17);
        cfg.n_steps = cfg.steps_for_resolution();
        let occ = OccupationConfig {
            window: 0.05,
            n_p_bins: 24,
            p_range: (-4.0, 4.0),
            n_r_bins: 16,
        };
        let one = SpectralField::from_trig_poly(
            &sys.basis,
            &TrigPoly {
                constant: 1.0,
                modes: vec![],
            },
        );
        let report =
            occupation_run(&sys, &cfg, &occ, &[("one".to_string(), one)]).unwrap();
        assert_eq!(report.mass_per_time, 1.0);
        assert!((report.residuals[0].mean - 1.0).abs() < 1e-12);
        assert!(report.residuals[0].se < 1e-12);
        let hist = report.histogram.unwrap();
        assert!((hist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // equilibrium momentum scale is O(√β); the 4σ range catches it
        assert!(hist.spill() < 0.05, "spill {}", hist.spill());
    }

    #[test]
    fn momentum_residual_shows_the_subleading_drift_term() {
        // E[L g] for g = p picks up the uncentered part of the slow drift,
        // of size c·δ/(ε√m); here ≈ 0.632
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let sys = FastSystem::new(&spec, 10, 3).unwrap();
        let cfg = SimConfig::underdamped(&spec, 2.0, 16, 31);
        let occ = OccupationConfig {
            window: 0.1,
            n_p_bins: 16,
            p_range: (-4.0, 4.0),
            n_r_bins: 8,
        };
        let p_field = SpectralField::p_coordinate(&sys.basis, 0);
        let image = p_field.apply(&sys.generator(spec.scales.m));
        let report =
            occupation_run(&sys, &cfg, &occ, &[("Lp".to_string(), image)]).unwrap();
        let row = &report.residuals[0];
        let predicted = spec.scales.delta / (spec.scales.epsilon * spec.scales.m.sqrt());
        assert!(
            (row.mean + predicted).abs() < 0.15,
            "mean {} vs -{predicted}",
            row.mean
        );
    }

    #[test]
    fn rejects_overdamped_and_bad_windows() {
        let spec = ProblemSpec::preset(PresetName::ConstantCoeff);
        let sys = FastSystem::new(&spec, 6, 3).unwrap();
        let occ = OccupationConfig {
            window: 0.05,
            n_p_bins: 8,
            p_range: (-3.0, 3.0),
            n_r_bins: 8,
        };
        let cfg = SimConfig::overdamped(&spec, 0.2, 2, 1);
        assert!(occupation_run(&sys, &cfg, &occ, &[]).is_err());
        let bad = OccupationConfig {
            window: 0.0,
            ..occ
        };
        let cfg2 = SimConfig::underdamped(&spec, 0.2, 2, 1);
        assert!(occupation_run(&sys, &cfg2, &bad, &[]).is_err());
    }
}
