use cfmdp::verify::{run_verify, CheckName, VerifyConfig};

fn quick() -> VerifyConfig {
    VerifyConfig {
        cfmdps: 30,
        rate_draws: 20_000,
        bound_cfmdps: 2,
        bound_steps_per_cfmdp: 20_000,
        ..Default::default()
    }
}

#[test]
fn default_sweep_passes() {
    let rep = run_verify(&quick()).unwrap();
    assert!(rep.all_passed, "{:#?}", rep.checks);
    assert_eq!(rep.checks.len(), CheckName::ALL.len());
    for c in &rep.checks {
        if matches!(
            c.check,
            CheckName::PgExpectedUpdate | CheckName::DaqlDecomposition
        ) {
            assert!(c.worst < 1e-10);
        }
    }
}

#[test]
fn injected_coupling_fails_only_the_pg_check() {
    let rep = run_verify(&VerifyConfig {
        inject_coupling: true,
        ..quick()
    })
    .unwrap();
    assert!(!rep.all_passed);
    for c in &rep.checks {
        assert_eq!(
            c.passed,
            c.check != CheckName::PgExpectedUpdate,
            "{}",
            c.check.name()
        );
    }
}

#[test]
fn exact_verdicts_do_not_depend_on_seed() {
    let exact = vec![
        CheckName::PgExpectedUpdate,
        CheckName::DaqlDecomposition,
        CheckName::MixtureIncentive,
        CheckName::GapShiftInvariance,
        CheckName::GreedyConsistency,
    ];
    let a = run_verify(&VerifyConfig {
        seed: 1,
        only: exact.clone(),
        ..quick()
    })
    .unwrap();
    let b = run_verify(&VerifyConfig {
        seed: 2,
        only: exact,
        ..quick()
    })
    .unwrap();
    assert_eq!(a.checks, b.checks);
}

#[test]
fn check_names_parse() {
    for c in CheckName::ALL {
        assert_eq!(c.name().parse::<CheckName>().unwrap(), c);
    }
    assert!("nonsense".parse::<CheckName>().is_err());
}
