//! Success rate, demonstration-coverage diversity and NFE statistics.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::envs::maze::{route_side, AgentState, MazeWorld, Task};
use crate::envs::{rollout, Executor, Rollout};
use crate::error::{Error, Result};
use crate::rng::indexed_stream;

/// A set of state vectors of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl StateSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Invalid("state set mixes dimensions".into()));
        }
        Ok(Self { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Union of several sets.
    pub fn union<'a>(sets: impl IntoIterator<Item = &'a StateSet>) -> Result<Self> {
        Self::new(sets.into_iter().flat_map(|s| s.points.iter().cloned()).collect())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact nearest-neighbour queries by a sweep over points sorted on their
/// first coordinate; the sweep stops once the first-coordinate gap alone
/// exceeds the best squared distance found.
struct NearestIndex<'a> {
    sorted: Vec<&'a [f64]>,
}

impl<'a> NearestIndex<'a> {
    fn new(set: &'a StateSet) -> Self {
        let mut sorted: Vec<&[f64]> = set.points.iter().map(Vec::as_slice).collect();
        sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
        Self { sorted }
    }

    fn min_sq_dist(&self, q: &[f64]) -> f64 {
        let pts = &self.sorted;
        let split = pts.partition_point(|p| p[0] < q[0]);
        let mut best = f64::INFINITY;
        let mut hi = split;
        let mut lo = split;
        loop {
            let mut moved = false;
            if hi < pts.len() {
                let gap = pts[hi][0] - q[0];
                if gap * gap <= best {
                    best = best.min(sq_dist(pts[hi], q));
                    hi += 1;
                    moved = true;
                } else {
                    hi = pts.len();
                }
            }
            if lo > 0 {
                let gap = q[0] - pts[lo - 1][0];
                if gap * gap <= best {
                    best = best.min(sq_dist(pts[lo - 1], q));
                    lo -= 1;
                    moved = true;
                } else {
                    lo = 0;
                }
            }
            if !moved {
                return best;
            }
        }
    }
}

fn check_pair(tau1: &StateSet, tau2: &StateSet) -> Result<()> {
    if tau1.is_empty() || tau2.is_empty() {
        return Err(Error::Invalid("set divergence needs two nonempty sets".into()));
    }
    if tau1.dim != tau2.dim || tau1.dim == 0 {
        return Err(Error::Invalid(format!(
            "set divergence between dimensions {} and {}",
            tau1.dim, tau2.dim
        )));
    }
    Ok(())
}

fn divergence_to(tau1: &StateSet, index: &NearestIndex<'_>) -> f64 {
    tau1.points.iter().map(|p| index.min_sq_dist(p)).sum::<f64>() / tau1.len() as f64
}

/// Mean over `tau1` of the squared distance to the nearest point of `tau2`.
pub fn set_divergence(tau1: &StateSet, tau2: &StateSet) -> Result<f64> {
    check_pair(tau1, tau2)?;
    Ok(divergence_to(tau1, &NearestIndex::new(tau2)))
}

/// Largest divergence of one demonstration from the union of the others.
pub fn lambda_expert(demos: &[StateSet]) -> Result<f64> {
    if demos.len() < 2 {
        return Err(Error::Invalid("lambda_expert needs at least two demonstrations".into()));
    }
    let per_demo: Vec<f64> = (0..demos.len())
        .into_par_iter()
        .map(|k| {
            let rest = StateSet::union(demos.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, d)| d))?;
            set_divergence(&demos[k], &rest)
        })
        .collect::<Result<_>>()?;
    Ok(per_demo.into_iter().fold(0.0, f64::max))
}

/// Fraction of demonstrations whose divergence from the rollout states is at
/// most `lambda`.
pub fn diversity_score(demos: &[StateSet], rollouts: &StateSet, lambda: f64) -> Result<f64> {
    if demos.is_empty() {
        return Err(Error::Invalid("diversity score needs demonstrations".into()));
    }
    if rollouts.is_empty() {
        return Err(Error::Invalid("diversity score needs rollout states".into()));
    }
    let index = NearestIndex::new(rollouts);
    let covered = demos
        .par_iter()
        .map(|d| {
            check_pair(d, rollouts)?;
            Ok(divergence_to(d, &index) <= lambda)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(covered.iter().filter(|&&c| c).count() as f64 / demos.len() as f64)
}

fn project(obs: &[f64], use_velocity: bool) -> Vec<f64> {
    obs[..if use_velocity { 4 } else { 2 }].to_vec()
}

/// One state set per demonstration episode: positions, or positions and
/// velocities when `use_velocity` is set.
pub fn demo_state_sets(demos: &Dataset, use_velocity: bool) -> Result<Vec<StateSet>> {
    demos
        .episodes()
        .iter()
        .map(|ep| StateSet::new(ep.iter().map(|p| project(&p.s, use_velocity)).collect()))
        .collect()
}

/// All visited states of the given rollouts as one set.
pub fn rollout_states(rollouts: &[Rollout], use_velocity: bool) -> Result<StateSet> {
    let points = rollouts
        .iter()
        .flat_map(|r| {
            if use_velocity {
                r.observations.iter().map(|o| project(o, true)).collect::<Vec<_>>()
            } else {
                r.positions.iter().map(|p| p.to_vec()).collect()
            }
        })
        .collect();
    StateSet::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Random task and jittered start per episode.
    RandomStarts,
    /// The first task, starting at rest on the start-cell center.
    FixedStart,
    /// Episode `i` starts where recorded episode `i mod n` started.
    DemoStarts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub episodes: usize,
    pub protocol: Protocol,
    pub seed: u64,
    /// Actions applied from each predicted chunk before re-querying.
    #[serde(default = "one")]
    pub execute: usize,
}

fn one() -> usize {
    1
}

impl EvalSettings {
    pub fn new(episodes: usize, protocol: Protocol, seed: u64) -> Self {
        Self {
            episodes,
            protocol,
            seed,
            execute: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub success: bool,
    pub decisions: usize,
    pub nfe: usize,
    /// Side of the start→goal line the path median lies on.
    pub route: i8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub episodes: usize,
    pub sr: f64,
    pub ds: Option<f64>,
    pub mean_nfe: f64,
    pub rows: Vec<EpisodeRow>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "method,task,seed,sr,ds,mean_nfe";

    pub fn csv_row(&self, method: &str, task: &str, seed: u64) -> String {
        let ds = self.ds.map(|d| d.to_string()).unwrap_or_default();
        format!("{method},{task},{seed},{},{ds},{}", self.sr, self.mean_nfe)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, method: &str, task: &str, seed: u64) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(out, "{}", self.csv_row(method, task, seed))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub rollouts: Vec<Rollout>,
}

/// Runs the episodes in parallel, episode `i` drawing from the `"eval"`
/// stream with index `i`. When `demos` is given, the diversity score against
/// them is filled in.
pub fn evaluate<E: Executor + ?Sized>(
    world: &MazeWorld,
    executor: &E,
    settings: &EvalSettings,
    demos: Option<&[StateSet]>,
) -> Result<Evaluation> {
    if settings.protocol == Protocol::DemoStarts {
        return Err(Error::Invalid("recorded starts go through evaluate_from".into()));
    }
    run_episodes(world, executor, settings, &[], demos)
}

/// [`evaluate`] with episode `i` started from `starts[i mod n]`; the report's
/// protocol is [`Protocol::DemoStarts`].
pub fn evaluate_from<E: Executor + ?Sized>(
    world: &MazeWorld,
    executor: &E,
    settings: &EvalSettings,
    starts: &[(Task, AgentState)],
    demos: Option<&[StateSet]>,
) -> Result<Evaluation> {
    if starts.is_empty() {
        return Err(Error::Invalid("no recorded starts".into()));
    }
    let settings = EvalSettings {
        protocol: Protocol::DemoStarts,
        ..*settings
    };
    run_episodes(world, executor, &settings, starts, demos)
}

fn run_episodes<E: Executor + ?Sized>(
    world: &MazeWorld,
    executor: &E,
    settings: &EvalSettings,
    recorded: &[(Task, AgentState)],
    demos: Option<&[StateSet]>,
) -> Result<Evaluation> {
    let EvalSettings {
        episodes: n_episodes,
        protocol,
        seed,
        execute,
    } = *settings;
    if n_episodes == 0 {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let max_steps = world.config().max_episode_steps;
    let rollouts: Vec<Rollout> = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = indexed_stream(seed, "eval", i as u64);
            let (task, start) = match protocol {
                Protocol::RandomStarts => {
                    let task = world.sample_task(&mut rng);
                    let start = world.sample_start(&task, &mut rng)?;
                    (task, start)
                }
                Protocol::FixedStart => {
                    let task = world.default_task();
                    (task, world.fixed_start(&task))
                }
                Protocol::DemoStarts => recorded[i % recorded.len()],
            };
            Ok(rollout(world, &task, start, executor, max_steps, execute, &mut rng))
        })
        .collect::<Result<_>>()?;

    let successes = rollouts.iter().filter(|r| r.success).count();
    let decisions: usize = rollouts.iter().map(|r| r.decisions).sum();
    let nfe: usize = rollouts.iter().map(|r| r.total_nfe).sum();
    let rows = rollouts
        .iter()
        .enumerate()
        .map(|(i, r)| EpisodeRow {
            episode: i,
            success: r.success,
            decisions: r.decisions,
            nfe: r.total_nfe,
            route: route_side(world, &r.task, &r.positions),
            failure: r.failure.clone(),
        })
        .collect();
    let ds = match demos {
        Some(d) => {
            let lambda = lambda_expert(d)?;
            let use_velocity = d.first().is_some_and(|s| s.dim() == 4);
            Some(diversity_score(d, &rollout_states(&rollouts, use_velocity)?, lambda)?)
        }
        None => None,
    };
    let report = EvalReport {
        protocol,
        episodes: n_episodes,
        sr: successes as f64 / n_episodes as f64,
        ds,
        mean_nfe: if decisions == 0 { 0.0 } else { nfe as f64 / decisions as f64 },
        rows,
    };
    Ok(Evaluation { report, rollouts })
}
