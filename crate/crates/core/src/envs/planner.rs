//! Demonstration synthesis: tabular Q-learning on the cell grid, greedy
//! path extraction, perturbed waypoints and a PD tracking controller.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Pair};
use crate::envs::maze::{Cell, MazeLayout, MazeWorld, Task};
use crate::error::{Error, Result};
use crate::rng::normal;

/// Up, down, left, right as `(d_row, d_col)`.
const MOVES: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub discount: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Sweeps stop once no Q value moves by more than this.
    pub tolerance: f64,
    /// Waypoint perturbation std as a fraction of the cell size.
    pub waypoint_std: f64,
    /// Distance at which the controller moves on to the next waypoint.
    pub switch_radius: f64,
    pub kp: f64,
    pub kd: f64,
    /// Planning attempts per requested episode before giving up.
    pub max_attempts: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            learning_rate: 0.5,
            max_iterations: 10_000,
            tolerance: 1e-6,
            waypoint_std: 0.3,
            switch_radius: 0.35,
            kp: 3.0,
            kd: 2.0,
            max_attempts: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QTable {
    cols: usize,
    goal: Cell,
    q: Vec<[f64; 4]>,
    pub iterations: usize,
    pub converged: bool,
}

fn neighbor(layout: &MazeLayout, (r, c): Cell, k: usize) -> Cell {
    let (dr, dc) = MOVES[k];
    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
    if layout.is_wall(nr, nc) {
        (r, c)
    } else {
        (nr as usize, nc as usize)
    }
}

impl QTable {
    /// Synchronous tabular Q-learning sweeps with reward −1 per move and 0 on
    /// entering the (absorbing) goal.
    pub fn learn(layout: &MazeLayout, goal: Cell, cfg: &PlannerConfig) -> Self {
        let cols = layout.cols();
        let n = layout.rows() * cols;
        let free = layout.free_cells();
        let mut q = vec![[0.0; 4]; n];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let prev = q.clone();
            let mut delta: f64 = 0.0;
            for &cell in &free {
                if cell == goal {
                    continue;
                }
                let idx = cell.0 * cols + cell.1;
                for k in 0..4 {
                    let next = neighbor(layout, cell, k);
                    let target = if next == goal {
                        0.0
                    } else {
                        let v = prev[next.0 * cols + next.1];
                        -1.0 + cfg.discount * v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    };
                    let updated = prev[idx][k] + cfg.learning_rate * (target - prev[idx][k]);
                    delta = delta.max((updated - prev[idx][k]).abs());
                    q[idx][k] = updated;
                }
            }
            if delta < cfg.tolerance {
                converged = true;
                break;
            }
        }
        Self {
            cols,
            goal,
            q,
            iterations,
            converged,
        }
    }

    pub fn values(&self, (r, c): Cell) -> [f64; 4] {
        self.q[r * self.cols + c]
    }

    /// Greedy rollout on the grid; ties between equally valued moves are
    /// broken at random, which is what spreads demonstrations over routes of
    /// equal length.
    pub fn greedy_path<R: Rng + ?Sized>(
        &self,
        layout: &MazeLayout,
        start: Cell,
        rng: &mut R,
    ) -> Result<Vec<Cell>> {
        let mut path = vec![start];
        let mut cur = start;
        let limit = layout.rows() * layout.cols();
        while cur != self.goal {
            if path.len() > limit {
                return Err(Error::Planning(format!("greedy path from {start:?} does not reach the goal")));
            }
            let vals = self.values(cur);
            let moves: Vec<usize> = (0..4).filter(|&k| neighbor(layout, cur, k) != cur).collect();
            let best = moves.iter().map(|&k| vals[k]).fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-9 * best.abs().max(1.0);
            let ties: Vec<usize> = moves.into_iter().filter(|&k| vals[k] >= best - tol).collect();
            cur = neighbor(layout, cur, ties[rng.random_range(0..ties.len())]);
            path.push(cur);
        }
        Ok(path)
    }
}

/// Breadth-first reachability on the 4-connected free cells.
pub fn reachable(layout: &MazeLayout, from: Cell, to: Cell) -> bool {
    let cols = layout.cols();
    let mut seen = vec![false; layout.rows() * cols];
    let mut queue = VecDeque::from([from]);
    seen[from.0 * cols + from.1] = true;
    while let Some(cell) = queue.pop_front() {
        if cell == to {
            return true;
        }
        for k in 0..4 {
            let next = neighbor(layout, cell, k);
            let idx = next.0 * cols + next.1;
            if !seen[idx] {
                seen[idx] = true;
                queue.push_back(next);
            }
        }
    }
    false
}

fn perturbed_waypoint<R: Rng + ?Sized>(
    world: &MazeWorld,
    cell: Cell,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> [f64; 2] {
    let c = world.cell_center(cell);
    let std = cfg.waypoint_std * world.config().cell_size;
    for _ in 0..100 {
        let w = [c[0] + std * normal::<f64, _>(rng), c[1] + std * normal::<f64, _>(rng)];
        if !world.blocked(w) {
            return w;
        }
    }
    c
}

/// One demonstration, or `None` when the controller misses the goal in time.
pub fn plan_episode<R: Rng + ?Sized>(
    world: &MazeWorld,
    task: &Task,
    q: &QTable,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<Option<Vec<Pair>>> {
    let mut st = world.sample_start(task, rng)?;
    let path = q.greedy_path(world.layout(), task.start, rng)?;
    let mut waypoints: Vec<[f64; 2]> = path[1..]
        .iter()
        .map(|&cell| {
            if cell == task.goal {
                world.cell_center(cell)
            } else {
                perturbed_waypoint(world, cell, cfg, rng)
            }
        })
        .collect();
    if waypoints.is_empty() {
        waypoints.push(world.cell_center(task.goal));
    }
    let mut target = 0;
    let mut pairs = Vec::new();
    for _ in 0..world.config().max_episode_steps {
        let w = waypoints[target];
        if target + 1 < waypoints.len() && (w[0] - st.p[0]).hypot(w[1] - st.p[1]) < cfg.switch_radius {
            target += 1;
        }
        let w = waypoints[target];
        let raw = [
            cfg.kp * (w[0] - st.p[0]) - cfg.kd * st.u[0],
            cfg.kp * (w[1] - st.p[1]) - cfg.kd * st.u[1],
        ];
        let a = world.clamp_action(&raw).to_vec();
        pairs.push(Pair {
            s: world.observe(&st, task),
            a: a.clone(),
        });
        st = world.step(&st, &a);
        if world.in_goal(st.p, task.goal) {
            return Ok(Some(pairs));
        }
    }
    Ok(None)
}

/// `n_episodes` successful demonstrations; failed attempts are discarded and
/// re-drawn.
pub fn plan_demonstrations<R: Rng + ?Sized>(
    world: &MazeWorld,
    cfg: &PlannerConfig,
    n_episodes: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if n_episodes == 0 {
        return Err(Error::Invalid("n_episodes must be positive".into()));
    }
    let layout = world.layout();
    let mut tables: Vec<(Cell, QTable)> = Vec::new();
    let mut ds = Dataset::new(world.obs_dim(), world.action_dim());
    for ep in 0..n_episodes {
        let mut done = false;
        for _ in 0..cfg.max_attempts {
            let task = world.sample_task(rng);
            if !reachable(layout, task.start, task.goal) {
                return Err(Error::Planning(format!(
                    "goal {:?} is unreachable from start {:?}",
                    task.goal, task.start
                )));
            }
            if !tables.iter().any(|(g, _)| *g == task.goal) {
                tables.push((task.goal, QTable::learn(layout, task.goal, cfg)));
            }
            let q = &tables.iter().find(|(g, _)| *g == task.goal).expect("table inserted").1;
            if let Some(pairs) = plan_episode(world, &task, q, cfg, rng)? {
                ds.push_episode(pairs)?;
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Planning(format!(
                "episode {ep}: no successful demonstration in {} attempts",
                cfg.max_attempts
            )));
        }
    }
    Ok(ds)
}
