//! Training, checkpoints, evaluation and experiment plumbing.

use cfmdp::agents::AgentKind;
use cfmdp::harness::*;
use cfmdp::mdp::make_example_d1;
use cfmdp::oracle::{convergence_gap, standard_rl_fixed_point};

fn d1_daql(steps: u64, seed: u64) -> RunConfig {
    RunConfig {
        agent: AgentConfig {
            alpha_init: Some(0.3),
            ..AgentConfig::of_kind(AgentKind::DaQl)
        },
        training_steps: steps,
        snapshot_interval: 50,
        eval_episodes: 5,
        eval_horizon: 10,
        seed,
        ..RunConfig::default()
    }
}

#[test]
fn same_config_same_record() {
    let cfg = d1_daql(5_000, 3);
    let (a, b) = (run_training(&cfg).unwrap(), run_training(&cfg).unwrap());
    assert_eq!(cfmdp::doc::to_line(&a), cfmdp::doc::to_line(&b));
    let other = run_training(&d1_daql(5_000, 4)).unwrap();
    assert_ne!(a.trace, other.trace);
}

#[test]
fn resume_matches_uninterrupted_run() {
    for kind in [AgentKind::DaQl, AgentKind::DaPg, AgentKind::StandardQl] {
        let cfg = RunConfig {
            agent: AgentConfig {
                init: InitKind::Gaussian { mean: 0.0, sd: 1.0 },
                ..AgentConfig::of_kind(kind)
            },
            env: EnvConfig::Procedural {
                params: Default::default(),
                seed: 9,
                feedback: FeedbackSource::Approval,
                approver: Default::default(),
            },
            training_steps: 3_000,
            snapshot_interval: 97,
            eval_episodes: 3,
            seed: 21,
            ..RunConfig::default()
        };
        let whole = run_training(&cfg).unwrap();

        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.run_until(1_234).unwrap();
        let text = serde_json::to_string(&t.checkpoint()).unwrap();
        let ckpt: Checkpoint = serde_json::from_str(&text).unwrap();
        let mut resumed = Trainer::from_checkpoint(ckpt).unwrap();
        resumed.run_until(cfg.training_steps).unwrap();
        assert_eq!(
            cfmdp::doc::to_line(&resumed.finish()),
            cfmdp::doc::to_line(&whole),
            "{kind}"
        );
    }
}

#[test]
fn bookkeeping_adds_up() {
    let rec = run_training(&RunConfig {
        snapshot_interval: 1,
        ..d1_daql(2_000, 0)
    })
    .unwrap();
    assert_eq!(rec.trace.len(), 2_000);
    rec.check_bookkeeping().unwrap();
    for row in &rec.trace {
        assert!((row.observed - row.true_feedback - row.corruption).abs() < 1e-9);
    }
}

#[test]
fn d1_evaluation_returns() {
    let env = make_example_d1();
    let good = eval_policy(&env, &[0, 0], 1, 10, 0);
    assert_eq!(good.mean_true_return, 10.0);
    assert_eq!(good.mean_observed_return, 10.0);
    let fixed = standard_rl_fixed_point(&env);
    assert_eq!(fixed, vec![1, 1]);
    let bad = eval_policy(&env, &fixed, 1, 10, 0);
    assert_eq!(bad.mean_true_return, 0.0);
    assert_eq!(bad.mean_observed_return, 100.0);
    assert!(bad.tampering.excess > 0.0);
}

#[test]
fn zero_corruption_observed_equals_true() {
    let mut env = make_example_d1();
    env.corruption.offsets = vec![0.0, 0.0];
    let e = eval_policy(&env, &[1, 0], 4, 7, 2);
    assert_eq!(e.mean_observed_return, e.mean_true_return);
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn d1_gap_shrinks_over_training() {
    for seed in 0..8 {
        let cfg = RunConfig {
            reset_interval: Some(0),
            ..d1_daql(100_000, seed)
        };
        let fb = make_example_d1().feedback;
        let mut t = Trainer::new(cfg).unwrap();
        let window = |t: &mut Trainer, from: u64, to: u64| -> f64 {
            let mut gaps = Vec::new();
            while t.step_count() < to {
                t.step_once().unwrap();
                if t.step_count() >= from {
                    let q = t.agent().table();
                    gaps.push(convergence_gap(&q, &fb));
                }
            }
            median(&mut gaps)
        };
        let early = window(&mut t, 1_000, 2_000);
        let late = window(&mut t, 90_000, 100_000);
        assert!(late < early, "seed {seed}: early {early} late {late}");
    }
}

#[test]
fn standard_rl_tampers_on_adversarial_env() {
    let cfg = RunConfig {
        agent: AgentConfig::of_kind(AgentKind::StandardQl),
        env: EnvConfig::Adversarial {
            base: default_adversarial_base(),
            base_seed: 5,
            target_state: 0,
            tampering_action: None,
        },
        training_steps: 50_000,
        snapshot_interval: 50_000,
        ..RunConfig::default()
    };
    let rec = run_training(&cfg).unwrap();
    let built = cfg.env.build().unwrap();
    let c = built.adversarial.unwrap();
    assert_eq!(
        rec.summary.greedy_policy[0],
        standard_rl_fixed_point(&built.cfmdp)[0]
    );
    assert_eq!(rec.summary.greedy_policy[0], c.tampering_action);
    assert_ne!(rec.summary.greedy_policy[0], c.optimal_action);
}

#[test]
fn config_rejects_unknown_keys() {
    let err =
        serde_json::from_str::<RunConfig>(r#"{"agent":{"kind":"da-ql","alpha":0.1}}"#).unwrap_err();
    assert!(err.to_string().contains("alpha"), "{err}");
    let cfg: RunConfig = serde_json::from_str(&cfmdp::doc::to_line(&d1_daql(10, 1))).unwrap();
    assert_eq!(cfg, d1_daql(10, 1));
}

#[test]
fn oversized_alpha_is_a_config_error() {
    let cfg = RunConfig {
        agent: AgentConfig {
            alpha_init: Some(0.6),
            ..AgentConfig::default()
        },
        ..RunConfig::default()
    };
    assert!(matches!(
        Trainer::new(cfg),
        Err(cfmdp::error::Error::Config(_))
    ));
}

#[test]
fn csv_and_jsonl_round_trip() {
    let dir = std::env::temp_dir().join(format!("cfmdp-harness-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let rec = run_training(&d1_daql(500, 2)).unwrap();
    write_trace_csv(dir.join("trace.csv"), &rec.trace).unwrap();
    assert_eq!(read_trace_csv(dir.join("trace.csv")).unwrap(), rec.trace);
    let header = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert!(header.starts_with("step,s,a,k,true,observed,corruption"));
    write_snapshots_csv(dir.join("snap.csv"), &rec.snapshots).unwrap();
    let path = dir.join("runs.jsonl");
    let _ = std::fs::remove_file(&path);
    append_jsonl(&path, &rec.summary).unwrap();
    append_jsonl(&path, &rec.summary).unwrap();
    let back: Vec<RunSummary> = read_jsonl(&path).unwrap();
    assert_eq!(back, vec![rec.summary.clone(), rec.summary]);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn favorable_init_d1() {
    let rep = experiment_d1_favorable(&D1FavorableConfig {
        runs: 20,
        steps: 20_000,
        ..Default::default()
    })
    .unwrap();
    let get = |k| rep.agents.iter().find(|a| a.agent == k).unwrap();
    assert!(get(AgentKind::ApprovalQl).fraction_tampering >= 0.95);
    assert!(get(AgentKind::DaQl).fraction_desired >= 0.95);
    assert!(get(AgentKind::DaQlNoIs).fraction_desired > 0.5);
}

#[test]
fn small_d1_experiment_emits_curves() {
    let cfg = D1Config {
        runs: 2,
        steps: 100,
        curve_interval: 10,
        ..Default::default()
    };
    let (rep, curves) = experiment_d1(&cfg).unwrap();
    assert_eq!(rep.agents.len(), cfg.agents.len());
    assert!(rep.agents.iter().all(|a| a.favored_per_run.len() == 2));
    assert!(!curves.is_empty());
}
