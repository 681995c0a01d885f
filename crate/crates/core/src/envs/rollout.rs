use crate::envs::maze::{AgentState, MazeWorld, Task};
use crate::error::Result;
use crate::rng::StreamRng;

/// Maps an observation to an action, or a chunk of consecutive actions laid
/// end to end, and the number of velocity evaluations spent producing it.
pub trait Executor: Sync {
    fn act(&self, obs: &[f64], rng: &mut StreamRng) -> Result<(Vec<f64>, usize)>;
}

impl<E: Executor + ?Sized> Executor for &E {
    fn act(&self, obs: &[f64], rng: &mut StreamRng) -> Result<(Vec<f64>, usize)> {
        (**self).act(obs, rng)
    }
}

impl<E: Executor + ?Sized> Executor for Box<E> {
    fn act(&self, obs: &[f64], rng: &mut StreamRng) -> Result<(Vec<f64>, usize)> {
        (**self).act(obs, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub task: Task,
    /// Agent positions, starting with the initial one.
    pub positions: Vec<[f64; 2]>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub success: bool,
    /// Executor queries; each may yield several executed actions.
    pub decisions: usize,
    pub total_nfe: usize,
    /// Why the episode ended early, if it did.
    pub failure: Option<String>,
}

/// Runs `executor` from `start` until the goal box is entered or `max_steps`
/// actions have been applied. Of each returned chunk, the first `execute`
/// actions are applied before the executor is queried again.
pub fn rollout<E: Executor + ?Sized>(
    world: &MazeWorld,
    task: &Task,
    start: AgentState,
    executor: &E,
    max_steps: usize,
    execute: usize,
    rng: &mut StreamRng,
) -> Rollout {
    let ad = world.action_dim();
    let mut st = start;
    let mut out = Rollout {
        task: *task,
        positions: vec![st.p],
        observations: Vec::new(),
        actions: Vec::new(),
        success: world.in_goal(st.p, task.goal),
        decisions: 0,
        total_nfe: 0,
        failure: None,
    };
    while !out.success && out.actions.len() < max_steps {
        let obs = world.observe(&st, task);
        let (chunk, nfe) = match executor.act(&obs, rng) {
            Ok(r) => r,
            Err(e) => {
                out.failure = Some(format!("executor error: {e}"));
                break;
            }
        };
        out.decisions += 1;
        out.total_nfe += nfe;
        if chunk.is_empty() || chunk.len() % ad != 0 || chunk.iter().any(|v| !v.is_finite()) {
            out.failure = Some(format!("invalid action {chunk:?}"));
            break;
        }
        for action in chunk.chunks(ad).take(execute.max(1)) {
            let obs = world.observe(&st, task);
            st = world.step(&st, action);
            out.observations.push(obs);
            out.actions.push(action.to_vec());
            out.positions.push(st.p);
            out.success = world.in_goal(st.p, task.goal);
            if out.success || out.actions.len() >= max_steps {
                break;
            }
        }
    }
    if !out.success && out.failure.is_none() {
        out.failure = Some(format!("goal not reached in {max_steps} steps"));
    }
    out
}
