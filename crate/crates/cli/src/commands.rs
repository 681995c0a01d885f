use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use adaflow::baselines::{train_bc, BcExecutor, BcPolicy, FlowAdaptiveExecutor, FlowFixedExecutor, ReplayExecutor};
use adaflow::data::Dataset;
use adaflow::envs::{plan_demonstrations, Executor, MazeLayout, MazeWorld};
use adaflow::flow::{reflow, train_flow_observed, FlowPolicy};
use adaflow::metrics::{demo_state_sets, evaluate, evaluate_from, EvalSettings, Evaluation, Protocol};
use adaflow::nn::{checkpoint_exists, MlpModel, Normalizer};
use adaflow::rng::stream;
use adaflow::solver::SolverConfig;
use adaflow::train::{write_loss_history, EpochRecord};
use adaflow::variance::{train_variance, VarianceNet};
use serde_json::json;

use crate::config::{ExperimentConfig, TaskSpec};
use crate::paths::Layout;
use crate::{CliError, ExecutorArg, Stage};

fn build_world(cfg: &ExperimentConfig, max_steps: Option<usize>) -> Result<Option<MazeWorld>, CliError> {
    let TaskSpec::Maze(spec) = &cfg.task else {
        return Ok(None);
    };
    let layout = MazeLayout::resolve(spec).map_err(|e| CliError::Config(e.to_string()))?;
    let mut maze = cfg.maze.clone();
    if let Some(n) = max_steps {
        maze.max_episode_steps = n;
    }
    Ok(Some(MazeWorld::new(layout, maze).map_err(|e| CliError::Config(e.to_string()))?))
}

/// The maze as configured, used for planning demonstrations.
pub fn maze_world(cfg: &ExperimentConfig) -> Result<Option<MazeWorld>, CliError> {
    build_world(cfg, None)
}

/// The maze with the evaluation step limit applied.
pub fn eval_world(cfg: &ExperimentConfig) -> Result<Option<MazeWorld>, CliError> {
    build_world(cfg, cfg.eval.max_steps)
}

fn write_config(cfg: &ExperimentConfig, layout: &Layout) -> Result<(), CliError> {
    fs::create_dir_all(layout.root())?;
    fs::write(layout.root().join("config.json"), cfg.to_json())?;
    Ok(())
}

pub fn require_checkpoints(layout: &Layout, seed: u64, stages: &[&str]) -> Result<(), CliError> {
    let missing: Vec<PathBuf> = stages
        .iter()
        .map(|s| layout.checkpoint(seed, s))
        .filter(|b| !checkpoint_exists(b))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Missing(missing))
    }
}

pub fn load_demos(layout: &Layout, seed: u64) -> Result<Dataset, CliError> {
    let path = layout.demos(seed);
    if !path.exists() {
        return Err(CliError::Precondition(format!(
            "no demonstrations at {}; run `adaflow gen-demos` first",
            path.display()
        )));
    }
    Ok(Dataset::read_jsonl(&path)?)
}

/// The dataset the networks are fit on: actions grouped into chunks.
fn training_data(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<Dataset, CliError> {
    Ok(load_demos(layout, seed)?.chunked(cfg.chunk.horizon)?)
}

pub fn gen_demos(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let layout = Layout::new(cfg);
    write_config(cfg, &layout)?;
    let world = maze_world(cfg)?;
    for &seed in &cfg.seeds {
        let mut rng = stream(seed, "demo-gen");
        let (data, generator) = match &world {
            None => (cfg.demos.regression.generate(&mut rng)?, json!(cfg.demos.regression)),
            Some(w) => (
                plan_demonstrations(w, &cfg.demos.planner, cfg.demos.episodes, &mut rng)?,
                json!({"layout": w.layout().name(), "maze": cfg.maze, "planner": cfg.demos.planner}),
            ),
        };
        let path = layout.demos(seed);
        data.write_jsonl(
            &path,
            json!({"generator": cfg.task.to_string(), "seed": seed, "config": generator}),
        )?;
        eprintln!(
            "seed {seed}: {} episodes, {} pairs -> {}",
            data.n_episodes(),
            data.len(),
            path.display()
        );
    }
    Ok(())
}

fn save_history(path: &Path, history: &[EpochRecord]) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_loss_history(&mut out, history)?;
    out.flush()?;
    Ok(())
}

fn load_flow(layout: &Layout, seed: u64, stage: &str) -> Result<FlowPolicy<f64>, CliError> {
    let base = layout.checkpoint(seed, stage);
    if !checkpoint_exists(&base) {
        return Err(CliError::Precondition(format!(
            "no {stage} checkpoint at {}; run `adaflow train --stage {stage}` first",
            base.display()
        )));
    }
    Ok(FlowPolicy::load(&base)?.0)
}

pub fn train(cfg: &ExperimentConfig, stage: Stage) -> Result<(), CliError> {
    let layout = Layout::new(cfg);
    write_config(cfg, &layout)?;
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        let name = match stage {
            Stage::Flow => "flow",
            Stage::Variance => "variance",
            Stage::Bc => "bc",
            Stage::Reflow => "reflow",
        };
        // Check the stage-1 prerequisite before touching the data.
        let frozen = match stage {
            Stage::Variance | Stage::Reflow => Some(load_flow(&layout, seed, "flow")?),
            _ => None,
        };
        let data = training_data(cfg, &layout, seed)?;
        let history = match stage {
            Stage::Flow => {
                let snaps = layout.snapshots(seed);
                let every = cfg.snapshot_every;
                // Same conditioner the trainer builds, for wrapping snapshot weights.
                let mut template = FlowPolicy::new(data.state_dim(), data.action_dim(), &cfg.flow.net, seed)?;
                if cfg.flow.net.normalize_states {
                    template.set_state_norm(Normalizer::fit(data.state_dim(), data.pairs().map(|p| p.s.as_slice())))?;
                }
                if every > 0 {
                    fs::create_dir_all(&snaps)?;
                }
                let mut observer = |rec: &EpochRecord, net: &MlpModel<f64>| -> adaflow::Result<()> {
                    let epoch = rec.epoch + 1;
                    if every > 0 && epoch.is_multiple_of(every) {
                        let p = FlowPolicy::from_parts(net.clone(), template.conditioner().clone())?;
                        p.save(&snaps.join(format!("flow-epoch-{epoch}")), "flow", seed, epoch as u64)?;
                    }
                    Ok(())
                };
                let trained = train_flow_observed(&data, &cfg.flow, seed, &mut observer)?;
                trained.model.save(&layout.checkpoint(seed, name), name, seed, trained.history.len() as u64)?;
                trained.history
            }
            Stage::Variance => {
                let frozen = frozen.as_ref().expect("loaded above");
                let trained = train_variance(frozen, &data, &cfg.variance, seed)?;
                trained.model.save(&layout.checkpoint(seed, name), seed, trained.history.len() as u64)?;
                trained.history
            }
            Stage::Bc => {
                let trained = train_bc(&data, &cfg.bc, seed)?;
                trained.model.save(&layout.checkpoint(seed, name), seed, trained.history.len() as u64)?;
                trained.history
            }
            Stage::Reflow => {
                let teacher = frozen.as_ref().expect("loaded above");
                let states: Vec<Vec<f64>> = data.pairs().map(|p| p.s.clone()).collect();
                let trained = reflow(teacher, &states, data.action_dim(), &cfg.reflow, seed)?;
                trained.model.save(&layout.checkpoint(seed, name), name, seed, trained.history.len() as u64)?;
                trained.history
            }
        };
        save_history(&layout.loss_history(seed, name), &history)?;
        eprintln!(
            "seed {seed}: {name} trained for {} epochs in {:.1}s, final loss {:.5}",
            history.len(),
            t0.elapsed().as_secs_f64(),
            history.last().map_or(f64::NAN, |r| r.loss)
        );
    }
    Ok(())
}

pub struct EvalRequest {
    pub executor: ExecutorArg,
    pub steps: usize,
    pub solver: SolverConfig,
    pub reflowed: bool,
    pub traces: bool,
}

impl EvalRequest {
    /// Method name used in file names and CSV rows.
    pub fn method(&self) -> String {
        let flow = if self.reflowed { "reflow" } else { "flow" };
        match self.executor {
            ExecutorArg::Bc => "bc".into(),
            ExecutorArg::Replay => "replay".into(),
            ExecutorArg::FlowFixed => format!("{flow}-fixed-{}", self.steps),
            ExecutorArg::FlowAdaptive => format!("{flow}-adaptive-eta{}", self.solver.eta),
        }
    }
}

pub fn build_executor(layout: &Layout, seed: u64, req: &EvalRequest) -> Result<Box<dyn Executor>, CliError> {
    let flow_stage = if req.reflowed { "reflow" } else { "flow" };
    Ok(match req.executor {
        ExecutorArg::Bc => {
            require_checkpoints(layout, seed, &["bc"])?;
            Box::new(BcExecutor(BcPolicy::load(&layout.checkpoint(seed, "bc"))?.0))
        }
        ExecutorArg::FlowFixed => {
            if req.steps == 0 {
                return Err(CliError::Config("--steps must be positive".into()));
            }
            require_checkpoints(layout, seed, &[flow_stage])?;
            Box::new(FlowFixedExecutor {
                policy: FlowPolicy::load(&layout.checkpoint(seed, flow_stage))?.0,
                steps: req.steps,
            })
        }
        ExecutorArg::FlowAdaptive => {
            require_checkpoints(layout, seed, &[flow_stage, "variance"])?;
            Box::new(FlowAdaptiveExecutor {
                policy: FlowPolicy::load(&layout.checkpoint(seed, flow_stage))?.0,
                sigma: VarianceNet::load(&layout.checkpoint(seed, "variance"))?.0,
                solver: req.solver,
            })
        }
        ExecutorArg::Replay => Box::new(ReplayExecutor::new(&load_demos(layout, seed)?)),
    })
}

/// Evaluates on the maze; replay always starts from the recorded starts.
pub fn run_eval(
    cfg: &ExperimentConfig,
    world: &MazeWorld,
    demos: &Dataset,
    executor: &dyn Executor,
    replay: bool,
    seed: u64,
) -> Result<Evaluation, CliError> {
    let settings = EvalSettings {
        execute: cfg.chunk.execute,
        ..EvalSettings::new(cfg.eval.episodes, cfg.eval.protocol, seed)
    };
    let sets = demo_state_sets(demos, false)?;
    let sets = (sets.len() >= 2).then_some(sets);
    if replay || cfg.eval.protocol == Protocol::DemoStarts {
        let starts = demos
            .episodes()
            .iter()
            .map(|ep| world.recover_start(&ep[0].s))
            .collect::<adaflow::Result<Vec<_>>>()?;
        Ok(evaluate_from(world, executor, &settings, &starts, sets.as_deref())?)
    } else {
        Ok(evaluate(world, executor, &settings, sets.as_deref())?)
    }
}

fn write_traces(dir: &Path, ev: &Evaluation) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (i, r) in ev.rollouts.iter().enumerate() {
        let mut out = BufWriter::new(File::create(dir.join(format!("episode-{i}.csv")))?);
        writeln!(out, "step,x,y,ax,ay")?;
        for (k, p) in r.positions.iter().enumerate() {
            let (ax, ay) = r.actions.get(k).map_or((String::new(), String::new()), |a| {
                (a[0].to_string(), a[1].to_string())
            });
            writeln!(out, "{k},{},{},{ax},{ay}", p[0], p[1])?;
        }
        out.flush()?;
    }
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig, req: &EvalRequest) -> Result<(), CliError> {
    let Some(world) = eval_world(cfg)? else {
        return Err(CliError::Precondition(
            "eval runs maze tasks; regression outputs come from `adaflow plot-data`".into(),
        ));
    };
    let layout = Layout::new(cfg);
    write_config(cfg, &layout)?;
    let method = req.method();
    let task = cfg.task.label();
    for &seed in &cfg.seeds {
        let demos = load_demos(&layout, seed)?;
        let executor = build_executor(&layout, seed, req)?;
        let ev = run_eval(cfg, &world, &demos, executor.as_ref(), req.executor == ExecutorArg::Replay, seed)?;
        let dir = layout.eval_dir(seed);
        fs::create_dir_all(&dir)?;
        let json = serde_json::to_string_pretty(&ev.report).map_err(|e| CliError::Check(e.to_string()))?;
        fs::write(dir.join(format!("{method}.json")), json + "\n")?;
        let mut csv = BufWriter::new(File::create(dir.join(format!("{method}.csv")))?);
        ev.report.write_csv(&mut csv, &method, &task, seed)?;
        csv.flush()?;
        if req.traces {
            write_traces(&dir.join("traces").join(&method), &ev)?;
        }
        println!("{}", ev.report.csv_row(&method, &task, seed));
    }
    Ok(())
}
