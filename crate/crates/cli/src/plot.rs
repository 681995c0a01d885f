//! Tidy CSV bundles for figures; rendering is left to external tools.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adaflow::baselines::{BcExecutor, BcPolicy, FlowAdaptiveExecutor, FlowFixedExecutor};
use adaflow::envs::MazeWorld;
use adaflow::flow::FlowPolicy;
use adaflow::metrics::EvalReport;
use adaflow::nn::checkpoint_exists;
use adaflow::oracle::AnalyticTarget;
use adaflow::rng::{normal, stream};
use adaflow::solver::{solve_adaptive, SolverConfig};
use adaflow::variance::VarianceNet;
use adaflow::{Policy, Sigma};

use crate::commands::{eval_world, load_demos, run_eval};
use crate::config::ExperimentConfig;
use crate::paths::Layout;
use crate::CliError;

fn csv(path: &Path, header: &str) -> Result<BufWriter<File>, CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    Ok(out)
}

fn missing_checkpoints(layout: &Layout, seeds: &[u64], stages: &[&str]) -> Vec<PathBuf> {
    seeds
        .iter()
        .flat_map(|&s| stages.iter().map(move |st| layout.checkpoint(s, st)))
        .filter(|b| !checkpoint_exists(b))
        .collect()
}

pub fn plot_data(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let layout = Layout::new(cfg);
    let world = eval_world(cfg)?;
    let mut missing = match world {
        Some(_) => missing_checkpoints(&layout, &cfg.seeds, &["flow", "variance", "bc"]),
        None => missing_checkpoints(&layout, &cfg.seeds, &["flow", "variance"]),
    };
    if world.is_some() {
        missing.extend(cfg.seeds.iter().map(|&s| layout.demos(s)).filter(|p| !p.exists()));
    }
    if !missing.is_empty() {
        return Err(CliError::Missing(missing));
    }
    let dir = layout.plots();
    fs::create_dir_all(&dir)?;
    match world {
        Some(w) => maze_plots(cfg, &layout, &w, &dir),
        None => regression_plots(cfg, &layout, &dir),
    }
}

fn load_pair(layout: &Layout, seed: u64) -> Result<(Policy, Sigma), CliError> {
    Ok((
        FlowPolicy::load(&layout.checkpoint(seed, "flow"))?.0,
        VarianceNet::load(&layout.checkpoint(seed, "variance"))?.0,
    ))
}

fn oracle_at(x: f64) -> Result<AnalyticTarget, CliError> {
    Ok(if x <= 0.0 {
        AnalyticTarget::dirac(vec![0.0])?
    } else {
        AnalyticTarget::two_point(-x, x, 0.5)?
    })
}

fn regression_plots(cfg: &ExperimentConfig, layout: &Layout, dir: &Path) -> Result<(), CliError> {
    let mut curve = csv(&dir.join("variance_curve.csv"), "seed,x,sigma_trained,sigma_oracle")?;
    let mut traj = csv(&dir.join("trajectories.csv"), "seed,x,sample,k,t,step,z")?;
    let mut sweep = csv(&dir.join("eta_sweep.csv"), "seed,eta,eps_min,mean_nfe_x_le_0,mean_nfe_x_gt_0")?;
    for &seed in &cfg.seeds {
        let (flow, sigma) = load_pair(layout, seed)?;
        // σ averaged over t ∈ {0, 0.1, …, 0.8} and interpolants of the data law.
        let mut rng = stream(seed, "plot-variance");
        for i in -50..=50 {
            let x = i as f64 / 10.0;
            let oracle = oracle_at(x)?;
            let (mut trained, mut exact, mut n) = (0.0, 0.0, 0.0);
            for k in 0..=8 {
                let t = k as f64 / 10.0;
                for _ in 0..64 {
                    let a = oracle.sample(&mut rng)[0];
                    let xt = t * a + (1.0 - t) * normal::<f64, _>(&mut rng);
                    trained += sigma.predict_sigma(&[x], &[xt], t)?;
                    exact += oracle.sigma2(&[xt], t)?.sqrt();
                    n += 1.0;
                }
            }
            writeln!(curve, "{seed},{x},{},{}", trained / n, exact / n)?;
        }
        let mut rng = stream(seed, "z0");
        for &x in &cfg.plot.trajectory_xs {
            for sample in 0..cfg.plot.trajectory_samples {
                let (_, tr) = solve_adaptive(&flow, &sigma, &[x], &[normal(&mut rng)], &cfg.solver)?;
                for k in 0..tr.times.len() {
                    writeln!(traj, "{seed},{x},{sample},{k},{},{},{}", tr.times[k], tr.steps[k], tr.points[k][0])?;
                }
            }
        }
        for &eta in &cfg.plot.etas {
            let solver = SolverConfig::new(eta, cfg.solver.eps_min)?;
            let mut nfe = [0usize; 2];
            let mut count = [0usize; 2];
            for i in -50..=50 {
                let x = i as f64 / 10.0;
                let side = usize::from(x > 0.0);
                for _ in 0..20 {
                    nfe[side] += solve_adaptive(&flow, &sigma, &[x], &[normal(&mut rng)], &solver)?.1.nfe;
                    count[side] += 1;
                }
            }
            writeln!(
                sweep,
                "{seed},{eta},{},{},{}",
                solver.eps_min,
                nfe[0] as f64 / count[0] as f64,
                nfe[1] as f64 / count[1] as f64
            )?;
        }
    }
    for mut f in [curve, traj, sweep] {
        f.flush()?;
    }
    eprintln!("wrote variance_curve.csv, trajectories.csv, eta_sweep.csv to {}", dir.display());
    Ok(())
}

fn sweep_row(report: &EvalReport, method: &str, task: &str, seed: u64, eta: Option<f64>, steps: Option<usize>) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    format!(
        "{method},{task},{seed},{},{},{},{},{}",
        opt(eta.map(|e| e.to_string())),
        opt(steps.map(|s| s.to_string())),
        report.sr,
        opt(report.ds.map(|d| d.to_string())),
        report.mean_nfe
    )
}

fn maze_plots(cfg: &ExperimentConfig, layout: &Layout, world: &MazeWorld, dir: &Path) -> Result<(), CliError> {
    let task = cfg.task.label();
    let mut sweep = csv(&dir.join("eta_sweep.csv"), "method,task,seed,eta,steps,sr,ds,mean_nfe")?;
    let mut epochs = if cfg.snapshot_every > 0 {
        Some(csv(&dir.join("sr_vs_epoch.csv"), "seed,epoch,steps,sr,ds")?)
    } else {
        eprintln!("snapshot_every is 0; skipping sr_vs_epoch.csv");
        None
    };
    for &seed in &cfg.seeds {
        let demos = load_demos(layout, seed)?;
        let (flow, sigma) = load_pair(layout, seed)?;
        let bc = BcExecutor(BcPolicy::load(&layout.checkpoint(seed, "bc"))?.0);
        let r = run_eval(cfg, world, &demos, &bc, false, seed)?.report;
        writeln!(sweep, "{}", sweep_row(&r, "bc", &task, seed, None, None))?;
        for &steps in &cfg.plot.fixed_steps {
            let e = FlowFixedExecutor {
                policy: flow.clone(),
                steps,
            };
            let r = run_eval(cfg, world, &demos, &e, false, seed)?.report;
            writeln!(sweep, "{}", sweep_row(&r, "flow-fixed", &task, seed, None, Some(steps)))?;
        }
        for &eta in &cfg.plot.etas {
            let e = FlowAdaptiveExecutor {
                policy: flow.clone(),
                sigma: sigma.clone(),
                solver: SolverConfig::new(eta, cfg.solver.eps_min)?,
            };
            let r = run_eval(cfg, world, &demos, &e, false, seed)?.report;
            writeln!(sweep, "{}", sweep_row(&r, "flow-adaptive", &task, seed, Some(eta), None))?;
        }
        if let Some(out) = epochs.as_mut() {
            let snaps = layout.snapshots(seed);
            let mut found = Vec::new();
            if snaps.is_dir() {
                for entry in fs::read_dir(&snaps)? {
                    let name = entry?.file_name().to_string_lossy().into_owned();
                    if let Some(e) = name.strip_prefix("flow-epoch-").and_then(|r| r.strip_suffix(".meta.json")) {
                        if let Ok(e) = e.parse::<usize>() {
                            found.push(e);
                        }
                    }
                }
            }
            if found.is_empty() {
                return Err(CliError::Missing(vec![snaps.join("flow-epoch-*")]));
            }
            found.sort_unstable();
            for epoch in found {
                let policy = FlowPolicy::load(&snaps.join(format!("flow-epoch-{epoch}")))?.0;
                let e = FlowFixedExecutor { policy, steps: 1 };
                let r = run_eval(cfg, world, &demos, &e, false, seed)?.report;
                let ds = r.ds.map(|d| d.to_string()).unwrap_or_default();
                writeln!(out, "{seed},{epoch},1,{},{ds}", r.sr)?;
            }
        }
    }
    sweep.flush()?;
    if let Some(mut out) = epochs {
        out.flush()?;
    }
    eprintln!("wrote plot data to {}", dir.display());
    Ok(())
}
