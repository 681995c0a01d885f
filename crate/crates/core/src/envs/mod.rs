//! Desk-scale tasks that produce demonstrations and score rollouts.

pub mod maze;
pub mod planner;
pub mod regression;
mod rollout;

pub use maze::{AgentState, Cell, DynamicsConfig, MazeConfig, MazeLayout, MazeWorld, Task};
pub use planner::{plan_demonstrations, PlannerConfig, QTable};
pub use regression::Regression1DTask;
pub use rollout::{rollout, Executor, Rollout};
