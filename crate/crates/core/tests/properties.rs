//! Property tests over random tables and small random CFMDPs.

use cfmdp::agents::QlAgentState;
use cfmdp::approver::{approval_from_q, approval_optimal_policy, greedy_policy};
use cfmdp::mdp::{CorruptionMap, FeedbackKind, FeedbackTable};
use cfmdp::oracle::{
    convergence_gap, exact_daql_update, exact_pg_update, sample_query_rate, Coupling,
};
use cfmdp::policy::{argmax, epsilon_greedy, expectation, softmax};
use cfmdp::rng::{rng_from_seed, stream};
use cfmdp::verify::random_small_cfmdp;
use proptest::prelude::*;

fn row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n)
}

fn table() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5, 2usize..5).prop_flat_map(|(ns, na)| prop::collection::vec(row(na), ns))
}

fn on_simplex(p: &[f64]) -> bool {
    p.iter().all(|&x| (0.0..=1.0).contains(&x)) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12
}

proptest! {
    #[test]
    fn policies_lie_on_the_simplex(logits in row(4), eps in 0.0f64..=1.0) {
        prop_assert!(on_simplex(&softmax(&logits)));
        prop_assert!(on_simplex(&epsilon_greedy(&logits, eps)));
    }

    #[test]
    fn approval_rows_are_centred(q in table()) {
        for r in approval_from_q(&q).values {
            prop_assert!(r.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_is_lowest_maximiser(r in prop::collection::vec(-3i32..3, 1..6)) {
        let r: Vec<f64> = r.into_iter().map(f64::from).collect();
        let i = argmax(&r);
        prop_assert!(r.iter().all(|&x| x <= r[i]));
        prop_assert!(r[..i].iter().all(|&x| x < r[i]));
    }

    #[test]
    fn approval_optimal_dominates_any_policy(fb in table(), seed in any::<u64>()) {
        let fb = FeedbackTable { kind: FeedbackKind::ApprovalFeedback, values: fb };
        let best = approval_optimal_policy(&fb);
        let mut rng = rng_from_seed(seed);
        for (s, r) in fb.values.iter().enumerate() {
            let pi = cfmdp::procedural::sample_dirichlet(1.0, r.len(), &mut rng);
            prop_assert!(r[best[s]] >= expectation(&pi, r) - 1e-12);
        }
    }

    #[test]
    fn step_feedback_is_query_independent_and_additive(index in 0u64..200, s_pick in any::<usize>(), a_pick in any::<usize>()) {
        let mut rng = stream(11, index);
        let env = random_small_cfmdp(&mut rng, index);
        let s = s_pick % env.n_states();
        let a = a_pick % env.n_actions();
        for k in 0..env.n_actions() {
            let out = env.step(s, a, k, &mut rng_from_seed(index)).unwrap();
            let base = env.step(s, a, 0, &mut rng_from_seed(index)).unwrap();
            prop_assert_eq!(out.next_state, base.next_state);
            prop_assert_eq!(out.corruption, base.corruption);
            prop_assert_eq!(out.corruption, env.corruption.offset(out.next_state));
            prop_assert_eq!(out.true_feedback, env.feedback.value(s, k));
            prop_assert_eq!(out.observed_feedback, out.true_feedback + out.corruption);
        }
    }

    #[test]
    fn gap_ignores_row_shifts(q in table(), shift in -1e3f64..1e3) {
        let fb = FeedbackTable { kind: FeedbackKind::RewardFeedback, values: q.iter().map(|r| r.iter().map(|x| x * 0.5).collect()).collect() };
        let shifted: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
        let (a, b) = (convergence_gap(&q, &fb), convergence_gap(&shifted, &fb));
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn small_gap_means_matching_greedy(fb in table(), offsets in prop::collection::vec(-100.0f64..100.0, 5), eps in 0.0f64..1.0) {
        let fbt = FeedbackTable { kind: FeedbackKind::RewardFeedback, values: fb.clone() };
        let gap = cfmdp::oracle::min_feedback_gap(&fbt);
        prop_assume!(gap.is_finite() && gap > 1e-6);
        // perturb every entry by less than gap/4
        let q: Vec<Vec<f64>> = fb.iter().enumerate().map(|(s, r)| {
            r.iter().enumerate().map(|(k, x)| x + offsets[s] + gap * 0.24 * eps * if k % 2 == 0 { 1.0 } else { -1.0 }).collect()
        }).collect();
        prop_assert!(convergence_gap(&q, &fbt) < gap / 2.0);
        prop_assert_eq!(greedy_policy(&q), approval_optimal_policy(&fbt));
    }

    #[test]
    fn decoupled_pg_update_ignores_corruption(index in 0u64..500, logit_seed in any::<u64>()) {
        let mut rng = stream(12, index);
        let env = random_small_cfmdp(&mut rng, index);
        let mut lr = rng_from_seed(logit_seed);
        let policy: Vec<Vec<f64>> = (0..env.n_states())
            .map(|_| softmax(&(0..env.n_actions()).map(|_| rand::Rng::random_range(&mut lr, -2.0..2.0)).collect::<Vec<_>>()))
            .collect();
        for s in 0..env.n_states() {
            let r = exact_pg_update(&env, &policy, s, Coupling::Decoupled).unwrap();
            prop_assert!(r.max_abs_difference < 1e-10);
        }
    }

    #[test]
    fn daql_update_decomposes(index in 0u64..500, m in 1u64..100) {
        let mut rng = stream(13, index);
        let env = random_small_cfmdp(&mut rng, index);
        let (ns, na) = (env.n_states(), env.n_actions());
        let mut agent = QlAgentState::new(ns, na, 0.5 / na as f64, 0);
        agent.visit_counts = vec![m; ns];
        for s in 0..ns {
            let r = exact_daql_update(&env, &agent, s).unwrap();
            prop_assert!(r.decomposition_residual.unwrap() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The exact expected rate agrees with a Monte Carlo estimate within
    /// four standard errors.
    #[test]
    fn sampled_rate_matches_exact(m in 1u64..50, k in 0usize..3, q in row(3), seed in any::<u64>()) {
        let mut agent = QlAgentState::new(1, 3, 0.2, 0).with_q(vec![q]);
        agent.visit_counts[0] = m;
        let (mean, se) = sample_query_rate(&agent, 0, k, 20_000, &mut rng_from_seed(seed)).unwrap();
        let exact = 0.2 / m as f64;
        prop_assert!((mean - exact).abs() <= 4.0 * se + 1e-15, "mean {mean} exact {exact} se {se}");
    }
}

#[test]
fn decoupled_action_and_query_are_independent() {
    let env = cfmdp::mdp::make_example_d1();
    let mut agent = QlAgentState::new(2, 2, 0.4, 0).with_q(vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
    agent.visit_counts[0] = 3;
    let (pa, pk) = (
        agent.action_policy(0).unwrap(),
        agent.query_policy(0).unwrap(),
    );
    let n = 40_000;
    let mut counts = [[0u64; 2]; 2];
    let mut rng = rng_from_seed(5);
    for _ in 0..n {
        let step = agent.clone().daql_step(&env, 0, &mut rng).unwrap();
        counts[step.action][step.query] += 1;
    }
    let mut chi2 = 0.0;
    for a in 0..2 {
        for k in 0..2 {
            let e = n as f64 * pa[a] * pk[k];
            chi2 += (counts[a][k] as f64 - e).powi(2) / e;
        }
    }
    // 3 degrees of freedom, p = 0.001
    assert!(chi2 < 16.27, "chi-square {chi2}, counts {counts:?}");
}

#[test]
fn zero_offsets_leave_feedback_untouched() {
    let mut env = cfmdp::mdp::make_example_d1();
    env.corruption = CorruptionMap::zeros(2);
    let out = env.step(0, 1, 0, &mut rng_from_seed(0)).unwrap();
    assert_eq!(out.observed_feedback, out.true_feedback);
}
