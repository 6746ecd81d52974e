use spiti_core::generators::{coffee_robot, gen_linear, gen_noisy};
use spiti_core::metrics::{model_accuracy, nonterminal_model_accuracy, reference_value, relative_error, sigma_accuracy};
use spiti_core::model::ProblemSpec;
use spiti_core::planner::{ssa_evaluate, PlannerConfig};
use spiti_core::stats::{chi2_tail_q, two_distribution_chi2};
use spiti_core::tree::Tree;

#[test]
fn optimal_policy_scores_zero() {
    for spec in [coffee_robot(), gen_linear(5).unwrap(), gen_noisy(5, 0.2).unwrap()] {
        let cfg = PlannerConfig::for_spec(&spec).with_tolerances(1e-10, 1e-12);
        let (v_star, pi) = reference_value(&spec, &cfg).unwrap();
        let v = ssa_evaluate(&pi, &spec, &cfg).unwrap();
        assert_eq!(relative_error(&v_star, &v, &spec.domain()).unwrap().xi, 0.0);
    }
}

#[test]
fn relative_error_equals_enumeration() {
    let spec = coffee_robot();
    let cfg = PlannerConfig::for_spec(&spec).with_tolerances(1e-10, 1e-12);
    let (v_star, _) = reference_value(&spec, &cfg).unwrap();
    let d = spec.domain();
    for a in 0..spec.num_actions() {
        let v = ssa_evaluate(&Tree::leaf(a), &spec, &cfg).unwrap();
        let tree_xi = relative_error(&v_star, &v, &d).unwrap().xi;
        let brute: f64 = d
            .states()
            .map(|s| {
                let (vs, vp) = (*v_star.get(&s.0), *v.get(&s.0));
                if vs - vp <= 0.0 { 0.0 } else { (vs - vp) / vs.abs() }
            })
            .sum::<f64>()
            / d.state_count() as f64;
        assert!((tree_xi - brute).abs() <= 1e-9, "action {a}: {tree_xi} vs {brute}");
    }
}

fn perturbed(spec: &ProblemSpec) -> ProblemSpec {
    let mut other = spec.clone();
    other.cpds[0][0] = Tree::leaf(vec![0.5, 0.5]);
    other
}

#[test]
fn accuracy_equals_enumeration() {
    let spec = gen_noisy(4, 0.2).unwrap();
    let learned = perturbed(&spec);
    let d = spec.domain();
    let sigma = sigma_accuracy(&spec, &learned, 0, 0, 1).unwrap();
    let brute: f64 = d
        .states()
        .map(|s| {
            let chi2 = two_distribution_chi2(spec.cpds[0][0].get(&s.0), learned.cpds[0][0].get(&s.0)).unwrap();
            chi2_tail_q(chi2, 1).unwrap().value()
        })
        .sum();
    assert!((sigma - brute).abs() <= 1e-9);
    let report = model_accuracy(&spec, &learned, 1).unwrap();
    assert!(report.q_overall < 1.0 && report.q_overall > 0.0);
    assert_eq!(model_accuracy(&spec, &spec, 1).unwrap().q_overall, 1.0);
}

#[test]
fn nonterminal_accuracy_ignores_terminal_regions() {
    let spec = gen_linear(3).unwrap();
    let mut learned = spec.clone();
    // a1 and a2 leave x3 unchanged; only its terminal half differs
    for a in 0..2 {
        learned.cpds[a][2] = Tree::leaf(vec![1.0, 0.0]);
    }
    assert!(model_accuracy(&spec, &learned, 1).unwrap().q_overall < 1.0);
    assert_eq!(nonterminal_model_accuracy(&spec, &learned, 1).unwrap(), 1.0);
}
