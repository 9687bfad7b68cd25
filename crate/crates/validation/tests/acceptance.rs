//! Acceptance criteria 1 to 10, one line each. Exits non-zero if any fails.

use std::time::{Duration, Instant};

use cfmdp::agents::AgentKind;
use cfmdp::doc::to_line;
use cfmdp::harness::{
    experiment_adversarial, experiment_convergence, experiment_d1, experiment_procedural,
    AdversarialConfig, ConvergenceConfig, D1Config, ProceduralConfig,
};
use cfmdp::verify::{run_check, CheckName, CheckResult, VerifyConfig};

struct Line {
    id: u32,
    passed: bool,
    elapsed: Duration,
    limit: Duration,
    detail: String,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn verify_line(id: u32, check: CheckName, limit_s: u64) -> Line {
    let (r, elapsed) = timed(|| run_check(check, &VerifyConfig::default()));
    let limit = Duration::from_secs(limit_s);
    match r {
        Ok(CheckResult {
            passed,
            worst,
            tolerance,
            cases,
            detail,
            ..
        }) => Line {
            id,
            passed: passed && elapsed < limit,
            elapsed,
            limit,
            detail: format!(
                "{}: worst {worst:.3e} vs {tolerance:.0e} over {cases} cases {detail}",
                check.name()
            ),
        },
        Err(e) => Line {
            id,
            passed: false,
            elapsed,
            limit,
            detail: format!("error: {e}"),
        },
    }
}

fn frac(report: &cfmdp::harness::D1Report, kind: AgentKind) -> f64 {
    report
        .agents
        .iter()
        .find(|a| a.agent == kind)
        .map_or(f64::NAN, |a| a.fraction_of_runs)
}

/// Runs criteria 6 to 9 and returns their lines plus the serialized
/// summaries for the determinism comparison.
fn experiments() -> (Vec<Line>, Vec<String>) {
    let mut lines = Vec::new();
    let mut docs = Vec::new();

    let (r, elapsed) = timed(|| experiment_convergence(&ConvergenceConfig::default()));
    match r {
        Ok(rep) => {
            let worst = rep
                .instances
                .iter()
                .map(|i| i.final_gap)
                .fold(0.0, f64::max);
            let d1 = &rep.instances[0];
            let failed = rep.instances.iter().filter(|i| !i.passed).count();
            let mismatched = rep
                .instances
                .iter()
                .filter(|i| i.policy_required && !i.greedy_matches)
                .count();
            lines.push(Line {
                id: 6,
                passed: rep.all_passed && elapsed < Duration::from_secs(120),
                elapsed,
                limit: Duration::from_secs(120),
                detail: format!(
                    "example-d1 gap {:.4}; worst gap {worst:.4} vs 0.05; {failed}/{} instances fail; {mismatched} greedy mismatches",
                    d1.final_gap,
                    rep.instances.len()
                ),
            });
            docs.push(to_line(&rep));
        }
        Err(e) => lines.push(Line {
            id: 6,
            passed: false,
            elapsed,
            limit: Duration::from_secs(120),
            detail: e.to_string(),
        }),
    }

    let (r, elapsed) = timed(|| experiment_d1(&D1Config::default()));
    match r {
        Ok((rep, _)) => {
            let (q, no_is, app_q, pg, app_pg) = (
                frac(&rep, AgentKind::DaQl),
                frac(&rep, AgentKind::DaQlNoIs),
                frac(&rep, AgentKind::ApprovalQl),
                frac(&rep, AgentKind::DaPg),
                frac(&rep, AgentKind::ApprovalPg),
            );
            let ok = q >= 0.90
                && app_q <= 0.05
                && (0.02..=0.45).contains(&no_is)
                && pg >= 0.85
                && app_pg <= 0.05;
            lines.push(Line {
                id: 7,
                passed: ok && elapsed < Duration::from_secs(300),
                elapsed,
                limit: Duration::from_secs(300),
                detail: format!(
                    "DA-QL {q:.2} (>=0.90) Approval QL {app_q:.2} (<=0.05) no-IS {no_is:.2} (0.02..0.45) DA-PG {pg:.2} (>=0.85) Approval PG {app_pg:.2} (<=0.05)"
                ),
            });
            docs.push(to_line(&rep));
        }
        Err(e) => lines.push(Line {
            id: 7,
            passed: false,
            elapsed,
            limit: Duration::from_secs(300),
            detail: e.to_string(),
        }),
    }

    let (r, elapsed) = timed(|| experiment_procedural(&ProceduralConfig::default()));
    match r {
        Ok(rep) => {
            let get = |k: AgentKind| rep.agents.iter().find(|a| a.agent == k).cloned();
            let (Some(da), Some(ap)) = (get(AgentKind::DaPg), get(AgentKind::ApprovalPg)) else {
                panic!("procedural report lacks a policy-gradient agent");
            };
            let ok = da.success_rate >= 0.95
                && ap.success_rate <= 0.60
                && ap.mean_observed_approval > da.mean_observed_approval
                && da.mean_true_approval > ap.mean_true_approval;
            lines.push(Line {
                id: 8,
                passed: ok && elapsed < Duration::from_secs(900),
                elapsed,
                limit: Duration::from_secs(900),
                detail: format!(
                    "success DA-PG {:.3} (>=0.95) Approval PG {:.3} (<=0.60); observed approval {:.3} vs {:.3}; true approval {:.3} vs {:.3}",
                    da.success_rate,
                    ap.success_rate,
                    ap.mean_observed_approval,
                    da.mean_observed_approval,
                    da.mean_true_approval,
                    ap.mean_true_approval
                ),
            });
            docs.push(to_line(&rep));
        }
        Err(e) => lines.push(Line {
            id: 8,
            passed: false,
            elapsed,
            limit: Duration::from_secs(900),
            detail: e.to_string(),
        }),
    }

    let (r, elapsed) = timed(|| experiment_adversarial(&AdversarialConfig::default()));
    match r {
        Ok(rep) => {
            let ok = rep.standard_fraction >= 0.95 && rep.daql_fraction >= 0.95;
            lines.push(Line {
                id: 9,
                passed: ok && elapsed < Duration::from_secs(120),
                elapsed,
                limit: Duration::from_secs(120),
                detail: format!(
                    "standard RL at fixed point {:.2}, DA-QL approval-optimal {:.2} over {} instances (>=0.95)",
                    rep.standard_fraction,
                    rep.daql_fraction,
                    rep.instances.len()
                ),
            });
            docs.push(to_line(&rep));
        }
        Err(e) => lines.push(Line {
            id: 9,
            passed: false,
            elapsed,
            limit: Duration::from_secs(120),
            detail: e.to_string(),
        }),
    }
    (lines, docs)
}

fn main() {
    let mut lines = vec![
        verify_line(1, CheckName::PgExpectedUpdate, 5),
        verify_line(2, CheckName::DaqlDecomposition, 5),
        verify_line(3, CheckName::MixtureIncentive, 5),
        verify_line(4, CheckName::QueryRateMean, 10),
        verify_line(5, CheckName::RateAndValueBounds, 30),
    ];
    let (mut first, docs_a) = experiments();
    lines.append(&mut first);
    let ((_, docs_b), elapsed) = timed(experiments);
    let identical = docs_a.len() == 4 && docs_a == docs_b;
    lines.push(Line {
        id: 10,
        passed: identical,
        elapsed,
        limit: Duration::MAX,
        detail: format!(
            "{} of {} summary documents byte-identical on rerun",
            docs_a.iter().zip(&docs_b).filter(|(a, b)| a == b).count(),
            docs_a.len()
        ),
    });

    let mut failed = 0;
    for l in &lines {
        let verdict = if l.passed { "PASS" } else { "FAIL" };
        let limit = if l.limit == Duration::MAX {
            String::new()
        } else {
            format!(" (limit {}s)", l.limit.as_secs())
        };
        println!(
            "criterion {:>2} {verdict} [{:.2}s{limit}] {}",
            l.id,
            l.elapsed.as_secs_f64(),
            l.detail
        );
        failed += usize::from(!l.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        lines.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
