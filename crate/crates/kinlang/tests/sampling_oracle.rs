//! Million-path plain Monte Carlo oracle for the four-sigma tail event.
//! Run once with `cargo test --test sampling_oracle -- --ignored --nocapture`
//! to reproduce the frozen reference used by the acceptance suite.

use kinlang::dynamics::{simulate, SimConfig};
use kinlang::model::{PresetName, ProblemSpec};

fn tail_setup() -> (ProblemSpec, f64) {
    let mut spec = ProblemSpec::preset(PresetName::ConstantCoeff);
    spec.scales.epsilon = 0.05;
    spec.scales.delta = 0.05;
    spec.scales.m = 0.5;
    // q₀ + cT/λ + 4√(εαT)/λ with T = 1, α = 2βλ = 2
    let threshold = 1.0 + 4.0 * (0.05f64 * 2.0).sqrt();
    (spec, threshold)
}

#[test]
#[ignore = "oracle run; takes about a minute and only pins a frozen constant"]
fn million_path_tail_probability() {
    let (spec, threshold) = tail_setup();
    let n: usize = 1_000_000;
    let cfg = SimConfig::underdamped(&spec, 1.0, n, 2024);
    let ens = simulate(&spec, &cfg, None).unwrap();
    let hits = (0..n).filter(|&i| ens.terminal(i)[0] >= threshold).count();
    let p = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    println!("threshold = {threshold}");
    println!("hits = {hits} / {n}");
    println!("p = {p:e}  se = {se:e}");
}
