//! Solver checks against closed-form oracles, printed as a table.

use adaflow::oracle::AnalyticTarget;
use adaflow::rng::{normal_vec, stream};
use adaflow::solver::{solve_adaptive, verify_global_error_scaling, verify_local_error_bound, SolverConfig};
use rand::Rng;

use crate::CliError;

const ETAS: [f64; 4] = [0.02, 0.05, 0.1, 0.2];

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

pub fn run(sigma_scale: f64, samples: usize, seed: u64) -> Result<(), CliError> {
    if !(sigma_scale >= 0.0) {
        return Err(CliError::Config(format!("--sigma-scale must be non-negative, got {sigma_scale}")));
    }
    let mut rng = stream(seed, "oracle-check");
    let mut failures = Vec::new();

    println!("[dirac] adaptive solve with the exact field, 1000 random (a, z0)");
    let cfg = SolverConfig::new(0.1, 1.0 / 64.0)?;
    let (mut max_nfe, mut max_err) = (0usize, 0.0f64);
    for _ in 0..1000 {
        let d = rng.random_range(1..=4);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let target = AnalyticTarget::dirac(a.clone())?;
        let z0: Vec<f64> = normal_vec(&mut rng, d);
        let (z1, trace) = solve_adaptive(&target, &target, &[], &z0, &cfg)?;
        max_nfe = max_nfe.max(trace.nfe);
        for (x, y) in z1.iter().zip(&a) {
            max_err = max_err.max((x - y).abs());
        }
    }
    let ok = max_nfe == 1 && max_err < 1e-12;
    println!("  nfe={max_nfe} error={max_err:.1e} {}", verdict(ok));
    if !ok {
        failures.push("dirac");
    }

    println!("[local] one Euler step vs W2 bound, sigma x {sigma_scale}, {samples} samples");
    println!("  {:<18} {:>4} {:>5} {:>11} {:>11} {:>7}", "target", "t", "eps", "W2^2", "bound", "");
    let targets = [
        ("pair(-1,+1)", AnalyticTarget::symmetric_pair()),
        ("pair(-1,2;0.3)", AnalyticTarget::two_point(-1.0, 2.0, 0.3)?),
    ];
    let mut local_ok = true;
    for (name, target) in &targets {
        for t in [0.1, 0.3, 0.6] {
            for eps in [0.05, 0.1, 0.2] {
                let r = verify_local_error_bound(target, t, eps, samples, sigma_scale, &mut rng)?;
                local_ok &= r.passed;
                println!(
                    "  {name:<18} {t:>4} {eps:>5} {:>11.3e} {:>11.3e} {:>7}",
                    r.lhs,
                    r.rhs,
                    verdict(r.passed)
                );
            }
        }
    }
    if !local_ok {
        failures.push("local");
    }

    println!("[global] endpoint W2 over an eta sweep, eps_min = 1/64");
    let report = verify_global_error_scaling(&targets[0].1, &ETAS, 1.0 / 64.0, samples, &mut rng)?;
    println!("  {:>5} {:>8} {:>8} {:>10} {:>10}", "eta", "nfe", "N/Nmax", "W2", "se");
    for row in &report.rows {
        println!(
            "  {:>5} {:>8.3} {:>8.3} {:>10.3e} {:>10.1e}",
            row.eta, row.mean_nfe, row.ratio, row.w2, row.w2_se
        );
    }
    println!("  error falls as steps are added: {}", verdict(report.monotone));
    if !report.monotone {
        failures.push("global");
    }

    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Check(format!("oracle checks failed: {}", failures.join(", "))))
    }
}
