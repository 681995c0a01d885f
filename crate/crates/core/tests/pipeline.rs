use adaflow::baselines::{train_bc, BcConfig, FlowFixedExecutor, ReplayExecutor};
use adaflow::data::Dataset;
use adaflow::envs::{plan_demonstrations, MazeConfig, MazeLayout, MazeWorld, PlannerConfig, Regression1DTask};
use adaflow::flow::{FlowPolicy, NetConfig};
use adaflow::metrics::{demo_state_sets, evaluate, evaluate_from, EvalSettings, Protocol};
use adaflow::nn::AdamConfig;
use adaflow::rng::stream;
use adaflow::train::TrainConfig;

fn maze() -> MazeWorld {
    MazeWorld::new(MazeLayout::builtin("maze1-like").unwrap(), MazeConfig::default()).unwrap()
}

fn demos(world: &MazeWorld, n: usize) -> Dataset {
    plan_demonstrations(world, &PlannerConfig::default(), n, &mut stream(5, "demo-gen")).unwrap()
}

#[test]
fn replay_from_recorded_starts_reaches_every_goal() {
    let world = maze();
    let data = demos(&world, 12);
    let starts: Vec<_> = data
        .episodes()
        .iter()
        .map(|ep| world.recover_start(&ep[0].s).unwrap())
        .collect();
    let sets = demo_state_sets(&data, false).unwrap();
    let eval = evaluate_from(
        &world,
        &ReplayExecutor::new(&data),
        &EvalSettings::new(12, Protocol::FixedStart, 0),
        &starts,
        Some(&sets),
    )
    .unwrap();
    assert_eq!(eval.report.protocol, Protocol::DemoStarts);
    assert_eq!(eval.report.sr, 1.0);
    assert_eq!(eval.report.ds, Some(1.0));
    assert_eq!(eval.report.mean_nfe, 0.0);
    for (r, ep) in eval.rollouts.iter().zip(data.episodes()) {
        assert_eq!(r.actions.len(), ep.len());
    }
}

#[test]
fn recorded_starts_must_go_through_evaluate_from() {
    let world = maze();
    let data = demos(&world, 2);
    let settings = EvalSettings::new(2, Protocol::DemoStarts, 0);
    assert!(evaluate(&world, &ReplayExecutor::new(&data), &settings, None).is_err());
    assert!(evaluate_from(&world, &ReplayExecutor::new(&data), &settings, &[], None).is_err());
}

#[test]
fn fixed_step_flow_spends_exactly_its_steps_per_decision() {
    let world = maze();
    let net = NetConfig {
        hidden: vec![16],
        time_dim: 8,
        normalize_states: false,
    };
    let policy = FlowPolicy::new(world.obs_dim(), world.action_dim(), &net, 3).unwrap();
    for steps in [1, 3] {
        let exec = FlowFixedExecutor {
            policy: policy.clone(),
            steps,
        };
        let eval = evaluate(&world, &exec, &EvalSettings::new(4, Protocol::FixedStart, 1), None).unwrap();
        assert_eq!(eval.report.mean_nfe, steps as f64);
        let again = evaluate(&world, &exec, &EvalSettings::new(4, Protocol::FixedStart, 1), None).unwrap();
        assert_eq!(eval.report, again.report);
    }
}

#[test]
fn bc_regresses_to_the_conditional_mean_between_branches() {
    let task = Regression1DTask {
        n_samples: 4000,
        ..Regression1DTask::default()
    };
    let data = task.generate(&mut stream(2, "demo-gen")).unwrap();
    let cfg = BcConfig {
        hidden: vec![64, 64],
        normalize_states: true,
        train: TrainConfig {
            epochs: 60,
            batch_size: 200,
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            t_max: 1.0,
        },
    };
    let bc = train_bc(&data, &cfg, 2).unwrap().model;
    // E[y | x] = 0 on both sides; the ±x branches are never predicted.
    for x in [2.0, 3.0, 4.0] {
        let y = bc.predict(&[x]).unwrap()[0];
        assert!(y.abs() < 0.2 * x, "x = {x}: {y}");
    }
    assert!(bc.predict(&[-3.0]).unwrap()[0].abs() < 0.2);
}
