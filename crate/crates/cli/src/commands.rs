use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use cfmdp::agents::AgentKind;
use cfmdp::doc;
use cfmdp::error::{Error, Result};
use cfmdp::harness::*;
use cfmdp::verify::{run_verify, CheckName, VerifyConfig, VerifyReport};

use crate::overrides::{env_overrides, split_assignment, Layers};
use crate::{BenchName, Builtin, Cli, Command, Common, EnvShorthand, EXIT_OK, EXIT_VERIFY};

const DEFAULT_OUT: &str = "cfmdp-out";

struct Ctx {
    common: Common,
    sets: Vec<(String, Value)>,
    env: Vec<(String, Value)>,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self
            .common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Defaults, then environment, then the config file.
    fn base<T: Serialize + DeserializeOwned + Default>(&self) -> Result<Layers<T>> {
        Layers::<T>::new()?
            .env(&self.env)?
            .file(self.common.config.as_deref())
    }
}

pub fn dispatch(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let ctx = Ctx {
        sets: cli
            .common
            .set
            .iter()
            .map(|s| split_assignment(s))
            .collect::<Result<_>>()?,
        env: env_overrides(std::env::vars()),
        common: cli.common,
    };
    match cli.command {
        Command::Gen {
            builtin,
            procedural,
            seed,
            states,
            actions,
        } => gen(&ctx, builtin, procedural, seed, states, actions),
        Command::Train {
            env,
            seed,
            steps,
            stop_after,
            resume,
        } => train(&ctx, env, seed, steps, stop_after, resume),
        Command::Verify {
            seed,
            inject_coupling,
            checks,
        } => verify(&ctx, seed, inject_coupling, checks),
        Command::Bench {
            name,
            runs,
            steps,
            count,
            seed,
        } => bench(&ctx, name, runs, steps, count, seed),
        Command::Report { input } => report(&ctx, &input),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn gen(
    ctx: &Ctx,
    builtin: Option<Builtin>,
    procedural: bool,
    seed: Option<u64>,
    states: Option<usize>,
    actions: Option<usize>,
) -> Result<i32> {
    let mut layers = ctx.base::<EnvConfig>()?;
    let source = match (builtin, procedural) {
        (Some(Builtin::ExampleD1), _) => Some("example-d1"),
        (Some(Builtin::Adversarial), _) => Some("adversarial"),
        (None, true) => Some("procedural"),
        (None, false) => None,
    };
    if let Some(src) = source {
        layers = layers.root(json!({ "source": src }))?;
    }
    let (params_key, seed_key) = match layers.typed() {
        EnvConfig::Procedural { .. } => ("params", "seed"),
        EnvConfig::Adversarial { .. } => ("base", "base_seed"),
        _ if seed.is_some() || states.is_some() || actions.is_some() => {
            return Err(Error::Config(
                "--seed, --states and --actions need --procedural or --builtin adversarial".into(),
            ));
        }
        _ => ("", ""),
    };
    if let Some(s) = seed {
        layers = layers.replace(seed_key, json!(s))?;
    }
    if let Some(n) = states {
        layers = layers.replace(&format!("{params_key}.n_states"), json!(n))?;
    }
    if let Some(n) = actions {
        layers = layers.replace(&format!("{params_key}.n_actions"), json!(n))?;
    }
    let env = layers.sets(&ctx.sets)?.finish();
    if let EnvConfig::Procedural { params, .. } | EnvConfig::Adversarial { base: params, .. } = &env
    {
        params.validate()?;
    }
    let built = env.build()?;
    let text = built.cfmdp.to_json();
    match &ctx.common.out {
        Some(_) => {
            let dir = ctx.out_dir()?;
            fs::write(dir.join("cfmdp.json"), format!("{text}\n"))?;
            doc::write(dir.join("gen_config.json"), &env)?;
            println!("wrote {}", dir.join("cfmdp.json").display());
        }
        None => {
            // a closed pipe (`| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }
    Ok(EXIT_OK)
}

fn train(
    ctx: &Ctx,
    env: Option<EnvShorthand>,
    seed: Option<u64>,
    steps: Option<u64>,
    stop_after: Option<u64>,
    resume: Option<PathBuf>,
) -> Result<i32> {
    let mut trainer = match resume {
        Some(path) => {
            if !ctx.sets.is_empty() || ctx.common.config.is_some() {
                return Err(Error::Config(
                    "a resumed run keeps its own config; drop --config and overrides".into(),
                ));
            }
            Trainer::from_checkpoint(doc::read(&path)?)?
        }
        None => {
            let mut layers = ctx.base::<RunConfig>()?;
            if let Some(e) = env {
                let src = match e {
                    EnvShorthand::ExampleD1 => "example-d1",
                    EnvShorthand::Adversarial => "adversarial",
                    EnvShorthand::Procedural => "procedural",
                };
                layers = layers.replace("env", json!({ "source": src }))?;
            }
            if let Some(s) = seed {
                layers = layers.replace("seed", json!(s))?;
            }
            if let Some(n) = steps {
                layers = layers.replace("training_steps", json!(n))?;
            }
            Trainer::new(layers.sets(&ctx.sets)?.finish())?
        }
    };
    let total = trainer.config().training_steps;
    let dir = ctx.out_dir()?;
    if let Some(stop) = stop_after {
        trainer.run_until(stop.min(total))?;
        let path = dir.join("checkpoint.json");
        doc::write(&path, &trainer.checkpoint())?;
        println!(
            "checkpoint at step {} written to {}",
            trainer.step_count(),
            path.display()
        );
        return Ok(EXIT_OK);
    }
    trainer.run_until(total)?;
    let record = trainer.finish();
    record.check_bookkeeping()?;
    doc::write(dir.join("config.json"), &record.config)?;
    let runs = dir.join("runs.jsonl");
    if runs.exists() {
        fs::remove_file(&runs)?;
    }
    append_jsonl(&runs, &record)?;
    write_trace_csv(dir.join("trace.csv"), &record.trace)?;
    write_snapshots_csv(dir.join("snapshots.csv"), &record.snapshots)?;
    let s = &record.summary;
    println!("agent {}", record.config.agent.kind);
    println!("steps {}", s.steps);
    println!("true return {}", s.eval.mean_true_return);
    println!("observed return {}", s.eval.mean_observed_return);
    match s.convergence_gap {
        Some(g) => println!("convergence gap {g}"),
        None => println!("convergence gap n/a"),
    }
    println!("greedy policy {:?}", s.greedy_policy);
    println!("approval-optimal policy {:?}", s.approval_optimal_policy);
    Ok(EXIT_OK)
}

fn print_verify(report: &VerifyReport) {
    println!(
        "{:<24} {:<6} {:>12} {:>10} {:>9}  detail",
        "check", "result", "worst", "tolerance", "cases"
    );
    for c in &report.checks {
        println!(
            "{:<24} {:<6} {:>12.3e} {:>10.0e} {:>9}  {}",
            c.check.name(),
            if c.passed { "pass" } else { "FAIL" },
            c.worst,
            c.tolerance,
            c.cases,
            c.detail
        );
    }
}

fn verify(ctx: &Ctx, seeds: Vec<u64>, inject_coupling: bool, checks: Vec<String>) -> Result<i32> {
    let mut layers = ctx.base::<VerifyConfig>()?;
    if inject_coupling {
        layers = layers.replace("inject_coupling", json!(true))?;
    }
    if !checks.is_empty() {
        let parsed = checks
            .iter()
            .map(|c| c.parse::<CheckName>())
            .collect::<Result<Vec<_>>>()?;
        layers = layers.replace("only", serde_json::to_value(parsed)?)?;
    }
    let cfg = layers.sets(&ctx.sets)?.finish();
    let seeds = if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds
    };
    let mut reports = Vec::new();
    for &seed in &seeds {
        let report = run_verify(&VerifyConfig {
            seed,
            ..cfg.clone()
        })?;
        if seeds.len() > 1 {
            println!("seed {seed}");
        }
        print_verify(&report);
        reports.push(report);
    }
    if let Some(dir) = ctx.common.out.as_ref().map(|_| ctx.out_dir()).transpose()? {
        doc::write(dir.join("verify.json"), &reports)?;
    }
    let verdicts = |r: &VerifyReport| {
        r.checks
            .iter()
            .map(|c| (c.check, c.passed))
            .collect::<Vec<_>>()
    };
    if reports
        .windows(2)
        .any(|w| verdicts(&w[0]) != verdicts(&w[1]))
    {
        println!("verdicts differ between seeds");
    } else if seeds.len() > 1 {
        println!("verdicts identical across {} seeds", seeds.len());
    }
    let failed: Vec<&str> = reports
        .iter()
        .flat_map(|r| r.checks.iter())
        .filter(|c| !c.passed)
        .map(|c| c.check.name())
        .collect();
    if failed.is_empty() {
        println!("all checks passed");
        Ok(EXIT_OK)
    } else {
        let mut names = failed.clone();
        names.dedup();
        eprintln!("verification failed: {}", names.join(", "));
        Ok(EXIT_VERIFY)
    }
}

/// Applies the generic bench flags onto whichever keys the config has.
fn bench_layers<T: Serialize + DeserializeOwned + Default>(
    ctx: &Ctx,
    flags: &[(&str, Option<u64>)],
) -> Result<T> {
    let mut layers = ctx.base::<T>()?;
    for (key, v) in flags {
        if let Some(v) = v {
            layers = layers
                .replace(key, json!(v))
                .map_err(|_| Error::Config(format!("--{key} does not apply here")))?;
        }
    }
    Ok(layers.sets(&ctx.sets)?.finish())
}

fn bench(
    ctx: &Ctx,
    name: BenchName,
    runs: Option<u64>,
    steps: Option<u64>,
    count: Option<u64>,
    seed: Option<u64>,
) -> Result<i32> {
    let flags = [
        ("runs", runs),
        ("steps", steps),
        ("count", count),
        ("seed", seed),
    ];
    let dir = ctx.out_dir()?;
    match name {
        BenchName::D1 => {
            let cfg: D1Config = bench_layers(ctx, &flags)?;
            let (report, curves) = experiment_d1(&cfg)?;
            doc::write(dir.join("d1_summary.json"), &report)?;
            write_csv(&dir.join("d1_curves.csv"), &curves)?;
            let target = |k: AgentKind| match k {
                AgentKind::DaQl => "0.98",
                AgentKind::DaQlNoIs => "0.15",
                AgentKind::DaPg => "0.95",
                AgentKind::ApprovalQl | AgentKind::ApprovalPg => "0.00",
                _ => "-",
            };
            println!("{:<14} {:>9} {:>8}", "agent", "fraction", "target");
            for a in &report.agents {
                println!(
                    "{:<14} {:>9.2} {:>8}",
                    a.agent.name(),
                    a.fraction_of_runs,
                    target(a.agent)
                );
            }
        }
        BenchName::D1Favorable => {
            let cfg: D1FavorableConfig = bench_layers(ctx, &flags)?;
            let report = experiment_d1_favorable(&cfg)?;
            doc::write(dir.join("d1_favorable_summary.json"), &report)?;
            let rows = report.agents.iter().flat_map(|a| {
                a.final_actions
                    .iter()
                    .enumerate()
                    .map(move |(run, &final_action)| FavRow {
                        agent: a.agent,
                        run,
                        final_action,
                    })
            });
            write_csv(&dir.join("d1_favorable_runs.csv"), rows)?;
            println!("{:<14} {:>8} {:>10}", "agent", "desired", "tampering");
            for a in &report.agents {
                println!(
                    "{:<14} {:>8.2} {:>10.2}",
                    a.agent.name(),
                    a.fraction_desired,
                    a.fraction_tampering
                );
            }
        }
        BenchName::Procedural => {
            let cfg: ProceduralConfig = bench_layers(ctx, &flags)?;
            let report = experiment_procedural(&cfg)?;
            doc::write(dir.join("procedural_summary.json"), &report)?;
            let rows = report.instances.iter().flat_map(|i| {
                i.outcomes.iter().map(move |o| ProcRow {
                    index: i.index,
                    env_seed: i.env_seed,
                    approver_return: i.approver_return,
                    agent: o.agent,
                    success: o.success,
                    true_return: o.true_return,
                    observed_approval: o.observed_approval,
                    true_approval: o.true_approval,
                    excess_corruption: o.excess_corruption,
                })
            });
            write_csv(&dir.join("procedural_instances.csv"), rows)?;
            let target = |k: AgentKind| match k {
                AgentKind::DaPg => "1.00",
                AgentKind::ApprovalPg => "0.35",
                _ => "-",
            };
            println!(
                "{:<14} {:>8} {:>7} {:>17} {:>13} {:>11}",
                "agent", "success", "target", "observed approval", "true approval", "true return"
            );
            for a in &report.agents {
                println!(
                    "{:<14} {:>8.3} {:>7} {:>17.3} {:>13.3} {:>11.2}",
                    a.agent.name(),
                    a.success_rate,
                    target(a.agent),
                    a.mean_observed_approval,
                    a.mean_true_approval,
                    a.mean_true_return
                );
            }
        }
        BenchName::Convergence => {
            let cfg: ConvergenceConfig = bench_layers(ctx, &flags)?;
            let report = experiment_convergence(&cfg)?;
            doc::write(dir.join("convergence_summary.json"), &report)?;
            let curve = report.instances.iter().flat_map(|i| {
                i.gap_curve
                    .iter()
                    .map(move |&(step, gap)| (i.label.clone(), step, gap))
            });
            write_csv(
                &dir.join("convergence_gap.csv"),
                curve.map(|(label, step, gap)| GapRow { label, step, gap }),
            )?;
            println!(
                "{:<16} {:>10} {:>10} {:>8} {:>6}",
                "instance", "final gap", "min δ gap", "greedy", "pass"
            );
            for i in &report.instances {
                println!(
                    "{:<16} {:>10.4} {:>10.4} {:>8} {:>6}",
                    i.label, i.final_gap, i.min_feedback_gap, i.greedy_matches, i.passed
                );
            }
            println!(
                "threshold {} all passed {}",
                cfg.threshold, report.all_passed
            );
        }
        BenchName::Adversarial => {
            let cfg: AdversarialConfig = bench_layers(ctx, &flags)?;
            let report = experiment_adversarial(&cfg)?;
            doc::write(dir.join("adversarial_summary.json"), &report)?;
            write_csv(&dir.join("adversarial_instances.csv"), &report.instances)?;
            println!(
                "standard RL at the tampering fixed point {:.2}",
                report.standard_fraction
            );
            println!(
                "DA-QL at the approval-optimal action    {:.2}",
                report.daql_fraction
            );
        }
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FavRow {
    agent: AgentKind,
    run: usize,
    final_action: usize,
}

#[derive(Serialize)]
struct ProcRow {
    index: u64,
    env_seed: u64,
    approver_return: f64,
    agent: AgentKind,
    success: bool,
    true_return: f64,
    observed_approval: f64,
    true_approval: f64,
    excess_corruption: f64,
}

#[derive(Serialize)]
struct GapRow {
    label: String,
    step: u64,
    gap: f64,
}

#[derive(Serialize)]
struct RunRow {
    run: usize,
    agent: AgentKind,
    env: String,
    seed: u64,
    steps: u64,
    mean_true_return: f64,
    mean_observed_return: f64,
    convergence_gap: Option<f64>,
    invariant_checks: u64,
}

fn report(ctx: &Ctx, input: &Path) -> Result<i32> {
    let records: Vec<RunRecord> = read_jsonl(input)?;
    let dir = ctx.out_dir()?;
    for (i, r) in records.iter().enumerate() {
        r.check_bookkeeping()?;
        write_trace_csv(dir.join(format!("trace_{i}.csv")), &r.trace)?;
        write_snapshots_csv(dir.join(format!("snapshots_{i}.csv")), &r.snapshots)?;
    }
    let rows = records.iter().enumerate().map(|(run, r)| RunRow {
        run,
        agent: r.config.agent.kind,
        env: serde_json::to_value(&r.config.env)
            .ok()
            .and_then(|v| v["source"].as_str().map(String::from))
            .unwrap_or_default(),
        seed: r.config.seed,
        steps: r.summary.steps,
        mean_true_return: r.summary.eval.mean_true_return,
        mean_observed_return: r.summary.eval.mean_observed_return,
        convergence_gap: r.summary.convergence_gap,
        invariant_checks: r.summary.invariant_checks,
    });
    write_csv(&dir.join("summary.csv"), rows)?;
    println!(
        "rendered {} run records into {}",
        records.len(),
        dir.display()
    );
    Ok(EXIT_OK)
}
