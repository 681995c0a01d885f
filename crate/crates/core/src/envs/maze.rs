//! Point-mass navigation in a walled grid.
//!
//! Layouts are ASCII art: `#` wall, `.` free, `S` start cell, `G` goal cell.
//! Cell `(row, col)` covers `x ∈ [col, col + 1)·cell_size` and
//! `y ∈ [row, row + 1)·cell_size`, so `y` grows downward like the text.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Cell = (usize, usize);

const BUILTIN: [(&str, &str); 4] = [
    ("maze1-like", include_str!("../../mazes/maze1.txt")),
    ("maze2-like", include_str!("../../mazes/maze2.txt")),
    ("maze3-like", include_str!("../../mazes/maze3.txt")),
    ("maze4-like", include_str!("../../mazes/maze4.txt")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct MazeLayout {
    name: String,
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    starts: Vec<Cell>,
    goals: Vec<Cell>,
}

impl MazeLayout {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::Format(format!("layout {name} is empty")));
        }
        let cols = lines[0].chars().count();
        let mut walls = Vec::with_capacity(lines.len() * cols);
        let mut starts = Vec::new();
        let mut goals = Vec::new();
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Format(format!("layout {name}: row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        walls.push(false);
                        starts.push((r, c));
                    }
                    'G' => {
                        walls.push(false);
                        goals.push((r, c));
                    }
                    other => {
                        return Err(Error::Format(format!(
                            "layout {name}: unexpected character {other:?} at row {r}, column {c}"
                        )))
                    }
                }
            }
        }
        Self::new(name, lines.len(), cols, walls, starts, goals)
    }

    pub fn new(
        name: &str,
        rows: usize,
        cols: usize,
        walls: Vec<bool>,
        starts: Vec<Cell>,
        goals: Vec<Cell>,
    ) -> Result<Self> {
        if walls.len() != rows * cols {
            return Err(Error::Format(format!("layout {name}: wall grid has the wrong size")));
        }
        if starts.is_empty() || goals.is_empty() {
            return Err(Error::Format(format!("layout {name} needs at least one S and one G")));
        }
        let layout = Self {
            name: name.to_string(),
            rows,
            cols,
            walls,
            starts,
            goals,
        };
        for &(r, c) in layout.starts.iter().chain(&layout.goals) {
            if layout.is_wall(r as i64, c as i64) {
                return Err(Error::Format(format!("layout {name}: marker at ({r}, {c}) is a wall")));
            }
        }
        Ok(layout)
    }

    /// One of the shipped layouts, `maze1-like` … `maze4-like`.
    pub fn builtin(name: &str) -> Result<Self> {
        let text = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown layout {name:?}; built-in layouts are {}",
                    BUILTIN.map(|(n, _)| n).join(", ")
                ))
            })?;
        Self::parse(name, text)
    }

    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    /// A built-in name, or a path to an ASCII layout file.
    pub fn resolve(spec: &str) -> Result<Self> {
        if BUILTIN.iter().any(|(n, _)| *n == spec) {
            return Self::builtin(spec);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
        Self::parse(name, &text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn starts(&self) -> &[Cell] {
        &self.starts
    }

    pub fn goals(&self) -> &[Cell] {
        &self.goals
    }

    /// Cells outside the grid count as walls.
    pub fn is_wall(&self, r: i64, c: i64) -> bool {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            return true;
        }
        self.walls[r as usize * self.cols + c as usize]
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| !self.is_wall(r as i64, c as i64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub dt: f64,
    pub friction: f64,
    /// Per-axis bound on the commanded acceleration.
    pub max_accel: f64,
    /// Per-axis bound on the velocity.
    pub max_speed: f64,
    /// Half-width of the square agent footprint.
    pub agent_radius: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            friction: 0.1,
            max_accel: 2.0,
            max_speed: 1.5,
            agent_radius: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeConfig {
    pub cell_size: f64,
    /// Half-width of the box around the start-cell center used for random starts.
    pub start_jitter: f64,
    /// Half-width of the goal box around the goal-cell center.
    pub goal_half_width: f64,
    pub max_episode_steps: usize,
    pub dynamics: DynamicsConfig,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            cell_size: 1.0,
            start_jitter: 0.1,
            goal_half_width: 0.3,
            max_episode_steps: 400,
            dynamics: DynamicsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub p: [f64; 2],
    pub u: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Task {
    pub start: Cell,
    pub goal: Cell,
}

#[derive(Debug, Clone)]
pub struct MazeWorld {
    layout: MazeLayout,
    cfg: MazeConfig,
}

impl MazeWorld {
    pub fn new(layout: MazeLayout, cfg: MazeConfig) -> Result<Self> {
        let d = &cfg.dynamics;
        if !(cfg.cell_size > 0.0 && d.dt > 0.0 && d.max_accel > 0.0 && d.max_speed > 0.0) {
            return Err(Error::Invalid("maze sizes, dt and bounds must be positive".into()));
        }
        if !(0.0..1.0).contains(&d.friction) {
            return Err(Error::Invalid("friction must lie in [0, 1)".into()));
        }
        if d.max_speed * d.dt >= cfg.cell_size - 2.0 * d.agent_radius {
            return Err(Error::Invalid(
                "max_speed·dt must stay below the free gap of a cell to rule out tunneling".into(),
            ));
        }
        if !(cfg.goal_half_width > 0.0 && cfg.goal_half_width <= 0.5 * cfg.cell_size) {
            return Err(Error::Invalid("goal_half_width must lie in (0, cell_size/2]".into()));
        }
        Ok(Self { layout, cfg })
    }

    pub fn layout(&self) -> &MazeLayout {
        &self.layout
    }

    pub fn config(&self) -> &MazeConfig {
        &self.cfg
    }

    /// Multi-goal layouts append the goal position to the observation.
    pub fn multi_task(&self) -> bool {
        self.layout.goals.len() > 1
    }

    pub fn obs_dim(&self) -> usize {
        if self.multi_task() {
            6
        } else {
            4
        }
    }

    pub fn action_dim(&self) -> usize {
        2
    }

    pub fn cell_center(&self, (r, c): Cell) -> [f64; 2] {
        let cs = self.cfg.cell_size;
        [(c as f64 + 0.5) * cs, (r as f64 + 0.5) * cs]
    }

    pub fn cell_of(&self, p: [f64; 2]) -> (i64, i64) {
        let cs = self.cfg.cell_size;
        ((p[1] / cs).floor() as i64, (p[0] / cs).floor() as i64)
    }

    pub fn observe(&self, st: &AgentState, task: &Task) -> Vec<f64> {
        let mut o = vec![st.p[0], st.p[1], st.u[0], st.u[1]];
        if self.multi_task() {
            o.extend_from_slice(&self.cell_center(task.goal));
        }
        o
    }

    /// True when the agent footprint centered at `p` overlaps a wall.
    pub fn blocked(&self, p: [f64; 2]) -> bool {
        let cs = self.cfg.cell_size;
        let r = self.cfg.dynamics.agent_radius;
        let c0 = ((p[0] - r) / cs).floor() as i64;
        let c1 = ((p[0] + r) / cs).floor() as i64;
        let r0 = ((p[1] - r) / cs).floor() as i64;
        let r1 = ((p[1] + r) / cs).floor() as i64;
        (r0..=r1).any(|row| (c0..=c1).any(|col| self.layout.is_wall(row, col)))
    }

    pub fn in_goal(&self, p: [f64; 2], goal: Cell) -> bool {
        let g = self.cell_center(goal);
        let h = self.cfg.goal_half_width;
        (p[0] - g[0]).abs() <= h && (p[1] - g[1]).abs() <= h
    }

    pub fn clamp_action(&self, a: &[f64]) -> [f64; 2] {
        let m = self.cfg.dynamics.max_accel;
        [a[0].clamp(-m, m), a[1].clamp(-m, m)]
    }

    /// `p ← p + u·dt` with per-axis wall clamping, then
    /// `u ← (1 − friction)·u + a·dt` with the speed cap. A blocked axis stops
    /// at the wall and loses its velocity component.
    pub fn step(&self, st: &AgentState, action: &[f64]) -> AgentState {
        let d = &self.cfg.dynamics;
        let a = self.clamp_action(action);
        let mut p = st.p;
        let mut u = st.u;
        for axis in 0..2 {
            let mut cand = p;
            cand[axis] += u[axis] * d.dt;
            if !self.blocked(cand) {
                p = cand;
                continue;
            }
            let cs = self.cfg.cell_size;
            let r = d.agent_radius;
            let edge = if u[axis] > 0.0 {
                ((cand[axis] + r) / cs).floor() * cs - r - 1e-9
            } else {
                ((cand[axis] - r) / cs).floor() * cs + cs + r + 1e-9
            };
            let mut snapped = p;
            snapped[axis] = edge;
            let moved_forward = (edge - p[axis]) * u[axis] >= 0.0;
            if moved_forward && !self.blocked(snapped) {
                p = snapped;
            }
            u[axis] = 0.0;
        }
        for axis in 0..2 {
            u[axis] = ((1.0 - d.friction) * u[axis] + a[axis] * d.dt).clamp(-d.max_speed, d.max_speed);
        }
        AgentState { p, u }
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> Task {
        let starts = &self.layout.starts;
        let goals = &self.layout.goals;
        loop {
            let start = starts[rng.random_range(0..starts.len())];
            let goal = goals[rng.random_range(0..goals.len())];
            if start != goal || (starts.len() == 1 && goals.len() == 1) {
                return Task { start, goal };
            }
        }
    }

    /// The first start and goal markers.
    pub fn default_task(&self) -> Task {
        Task {
            start: self.layout.starts[0],
            goal: self.layout.goals[0],
        }
    }

    /// Agent at rest at the start-cell center.
    pub fn fixed_start(&self, task: &Task) -> AgentState {
        AgentState {
            p: self.cell_center(task.start),
            u: [0.0; 2],
        }
    }

    /// Task and agent state behind a recorded observation.
    pub fn recover_start(&self, obs: &[f64]) -> Result<(Task, AgentState)> {
        if obs.len() != self.obs_dim() {
            return Err(Error::Invalid(format!(
                "observation has {} entries, the maze expects {}",
                obs.len(),
                self.obs_dim()
            )));
        }
        let cell = |p: [f64; 2]| -> Result<Cell> {
            let (r, c) = self.cell_of(p);
            if self.layout.is_wall(r, c) {
                return Err(Error::Invalid(format!("recorded position {p:?} is not on a free cell")));
            }
            Ok((r as usize, c as usize))
        };
        let p = [obs[0], obs[1]];
        let goal = if self.multi_task() {
            cell([obs[4], obs[5]])?
        } else {
            self.layout.goals[0]
        };
        let task = Task { start: cell(p)?, goal };
        Ok((task, AgentState { p, u: [obs[2], obs[3]] }))
    }

    /// Agent at rest, uniform in the start box, outside the goal box.
    pub fn sample_start<R: Rng + ?Sized>(&self, task: &Task, rng: &mut R) -> Result<AgentState> {
        let c = self.cell_center(task.start);
        let j = self.cfg.start_jitter;
        for _ in 0..1000 {
            let p = [c[0] + rng.random_range(-j..=j), c[1] + rng.random_range(-j..=j)];
            if !self.blocked(p) && !self.in_goal(p, task.goal) {
                return Ok(AgentState { p, u: [0.0; 2] });
            }
        }
        Err(Error::Planning(format!(
            "no valid start near cell {:?} outside the goal region",
            task.start
        )))
    }
}

/// Which side of the straight start→goal segment the path's median point
/// lies on: `-1`, `0` or `+1`. Distinguishes the two routes around a
/// central obstacle.
pub fn route_side(world: &MazeWorld, task: &Task, positions: &[[f64; 2]]) -> i8 {
    if positions.is_empty() {
        return 0;
    }
    let s = world.cell_center(task.start);
    let g = world.cell_center(task.goal);
    let m = positions[positions.len() / 2];
    let cross = (g[0] - s[0]) * (m[1] - s[1]) - (g[1] - s[1]) * (m[0] - s[0]);
    if cross > 1e-9 {
        1
    } else if cross < -1e-9 {
        -1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn open_world() -> MazeWorld {
        MazeWorld::new(MazeLayout::builtin("maze1-like").unwrap(), MazeConfig::default()).unwrap()
    }

    #[test]
    fn builtin_layouts_parse() {
        for name in MazeLayout::builtin_names() {
            let l = MazeLayout::builtin(name).unwrap();
            assert!(!l.free_cells().is_empty());
        }
        let m1 = MazeLayout::builtin("maze1-like").unwrap();
        assert_eq!((m1.rows(), m1.cols()), (7, 7));
        assert_eq!(m1.starts(), &[(5, 1)]);
        assert_eq!(m1.goals(), &[(1, 5)]);
        assert!(MazeLayout::builtin("maze9").is_err());
    }

    #[test]
    fn parse_rejects_bad_layouts() {
        assert!(MazeLayout::parse("x", "#S#\n#G").is_err());
        assert!(MazeLayout::parse("x", "#S?G#").is_err());
        assert!(MazeLayout::parse("x", "#..#").is_err());
    }

    #[test]
    fn free_motion_follows_the_update_rule() {
        let w = open_world();
        let st = AgentState {
            p: [1.5, 5.5],
            u: [0.0, -0.5],
        };
        let next = w.step(&st, &[0.0, -1.0]);
        assert!((next.p[1] - 5.45).abs() < 1e-12);
        assert!((next.u[1] - (0.9 * -0.5 - 0.1)).abs() < 1e-12);
        assert_eq!(next.p[0], 1.5);
    }

    #[test]
    fn walls_stop_the_agent() {
        let w = open_world();
        let mut st = w.fixed_start(&w.default_task());
        for _ in 0..200 {
            st = w.step(&st, &[-2.0, 2.0]);
            let (r, c) = w.cell_of(st.p);
            assert!(!w.layout().is_wall(r, c));
            assert!(!w.blocked(st.p));
        }
        assert!(st.p[0] < 1.15 && st.p[0] > 1.0);
        assert!(st.p[1] > 5.85 && st.p[1] < 6.0);
    }

    #[test]
    fn random_actions_never_enter_walls() {
        let w = open_world();
        let mut rng = stream(3, "walls");
        for _ in 0..100 {
            let mut st = w.fixed_start(&w.default_task());
            for _ in 0..100 {
                let a = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                st = w.step(&st, &a);
                assert!(!w.blocked(st.p), "{:?}", st.p);
            }
        }
    }

    #[test]
    fn tunneling_configuration_rejected() {
        let cfg = MazeConfig {
            dynamics: DynamicsConfig {
                max_speed: 10.0,
                ..DynamicsConfig::default()
            },
            ..MazeConfig::default()
        };
        assert!(MazeWorld::new(MazeLayout::builtin("maze1-like").unwrap(), cfg).is_err());
    }

    #[test]
    fn multi_task_observation_carries_goal() {
        let w = MazeWorld::new(MazeLayout::builtin("maze3-like").unwrap(), MazeConfig::default()).unwrap();
        assert!(w.multi_task());
        let task = w.sample_task(&mut stream(0, "task"));
        assert_ne!(task.start, task.goal);
        let o = w.observe(&w.fixed_start(&task), &task);
        assert_eq!(o.len(), 6);
        assert_eq!(&o[4..], &w.cell_center(task.goal));
    }
}
