use cfmdp::agents::AgentKind;
use cfmdp_demo::*;

#[test]
fn decoupled_sweep_matches_clean_and_coupled_does_not() {
    let sweep = update_sweep(10.0, 20).unwrap();
    assert_eq!(sweep.len(), 19);
    for p in &sweep {
        assert!((p.decoupled - p.clean).abs() < 1e-10);
        // coupled queries push toward the tampering action
        assert!(p.coupled < p.clean);
    }
}

#[test]
fn incentive_gradient_is_positive() {
    for p in incentive_curve(10.0, 0.5, -3.0, 3.0, 7).unwrap() {
        assert!(p.gradient > 0.0);
        assert!(p.approval_after > p.approval_before);
    }
}

#[test]
fn curves_cover_requested_agents() {
    let c = learning_curves(&[AgentKind::DaQl, AgentKind::ApprovalQl], 2_000, 1, 100).unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c[0].points.len(), 20);
    assert_eq!(c[0].agent, "da-ql");
}

#[test]
fn exported_functions_return_json() {
    let v: serde_json::Value =
        serde_json::from_str(&d1_learning_curves("da-ql, da-pg", 500, 0, 50)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    let v: serde_json::Value =
        serde_json::from_str(&d1_learning_curves("nope", 500, 0, 50)).unwrap();
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let v: serde_json::Value = serde_json::from_str(&expected_update_sweep(10.0, 4)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
    let v: serde_json::Value =
        serde_json::from_str(&mixture_incentive(10.0, 0.1, -1.0, 1.0, 3)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
}
