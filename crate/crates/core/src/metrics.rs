//! Evaluation criteria: relative value error, model accuracy and the
//! discounted reward trace.

use crate::error::{Error, Result};
use crate::model::{Distribution, ProblemSpec};
use crate::planner::{ssa_evaluate, svi_solve, PlannerConfig, PolicyTree, ValueTree};
use crate::stats::{chi2_tail_q, two_distribution_chi2};
use crate::tree::{merge2, try_merge_all, Domain, Tree};

/// Amount by which a policy value may exceed the reference before it counts
/// as an inconsistency rather than round-off.
pub const VALUE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RelativeErrorReport {
    pub xi: f64,
    /// (ΔV, region size) per leaf of the merged tree.
    pub leaves: Vec<(f64, u128)>,
}

fn relative_gap(v_star: f64, v_pi: f64) -> Result<f64> {
    let gap = v_star - v_pi;
    if gap < -VALUE_SLACK {
        return Err(Error::Consistency(format!(
            "policy value {v_pi} exceeds the optimal value {v_star}"
        )));
    }
    if gap <= 0.0 {
        return Ok(0.0);
    }
    if v_star == 0.0 {
        return Err(Error::Numeric(format!("relative error undefined: V* = 0, V_pi = {v_pi}")));
    }
    Ok(gap / v_star.abs())
}

/// ξ = Σ_l ΔV_l·S_l / |S| with ΔV = (V* − V_π) / V*.
pub fn relative_error(v_star: &ValueTree, v_pi: &ValueTree, domain: &Domain) -> Result<RelativeErrorReport> {
    let merged: Tree<f64> = try_merge_all(&[v_star, v_pi], |ls| relative_gap(*ls[0], *ls[1]))?;
    let leaves: Vec<(f64, u128)> = merged
        .leaf_regions(domain)
        .into_iter()
        .map(|r| (*r.label, r.size))
        .collect();
    let weighted: f64 = leaves.iter().map(|&(d, n)| d * n as f64).sum();
    Ok(RelativeErrorReport { xi: weighted / domain.state_count() as f64, leaves })
}

/// Reference optimal value: the exact value of the SVI policy, so that the
/// optimal policy scores exactly zero.
pub fn reference_value(spec: &ProblemSpec, config: &PlannerConfig) -> Result<(ValueTree, PolicyTree)> {
    let solved = svi_solve(spec, config)?;
    let v = ssa_evaluate(&solved.policy, spec, config)?;
    Ok((v, solved.policy))
}

/// ξ of `policy` on `spec` against a reference optimal value.
pub fn policy_relative_error(
    spec: &ProblemSpec,
    policy: &PolicyTree,
    v_star: &ValueTree,
    config: &PlannerConfig,
) -> Result<f64> {
    let v_pi = ssa_evaluate(policy, spec, config)?;
    Ok(relative_error(v_star, &v_pi, &spec.domain())?.xi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub q_overall: f64,
    /// σ per (action, variable).
    pub sigma: Vec<Vec<f64>>,
}

fn q_tree(true_spec: &ProblemSpec, learned: &ProblemSpec, action: usize, var: usize, dof: usize) -> Result<Tree<f64>> {
    let trees: [&Tree<Distribution>; 2] = [&true_spec.cpds[action][var], &learned.cpds[action][var]];
    try_merge_all(&trees, |ls| {
        let chi2 = two_distribution_chi2(ls[0], ls[1])?;
        Ok::<f64, Error>(chi2_tail_q(chi2, dof)?.value())
    })
}

/// σ_{a,i} = Σ_l Q(χ²(P_true, P_learned) | dof)·S_l over the merge of the
/// two CPD trees.
pub fn sigma_accuracy(
    true_spec: &ProblemSpec,
    learned: &ProblemSpec,
    action: usize,
    var: usize,
    dof: usize,
) -> Result<f64> {
    Ok(q_tree(true_spec, learned, action, var, dof)?
        .leaf_regions(&true_spec.domain())
        .into_iter()
        .map(|r| r.label * r.size as f64)
        .sum())
}

/// 𝒬 = Σ_a Σ_i σ_{a,i} / (|A|·n·|S|); the variable count n in the
/// normalizer keeps 𝒬 in [0, 1] with 1 for a perfect model.
pub fn model_accuracy(true_spec: &ProblemSpec, learned: &ProblemSpec, dof: usize) -> Result<AccuracyReport> {
    if true_spec.variables != learned.variables || true_spec.actions != learned.actions {
        return Err(Error::Validation("models disagree on variables or actions".into()));
    }
    let mut sigma = Vec::with_capacity(true_spec.num_actions());
    let mut total = 0.0;
    for a in 0..true_spec.num_actions() {
        let row = (0..true_spec.num_vars())
            .map(|i| sigma_accuracy(true_spec, learned, a, i, dof))
            .collect::<Result<Vec<f64>>>()?;
        total += row.iter().sum::<f64>();
        sigma.push(row);
    }
    let normalizer =
        true_spec.num_actions() as f64 * true_spec.num_vars() as f64 * true_spec.domain().state_count() as f64;
    Ok(AccuracyReport { q_overall: total / normalizer, sigma })
}

/// 𝒬 restricted to non-terminal states of `true_spec`, where transitions
/// can actually be observed. Diagnostic only; 1.0 when every state is terminal.
pub fn nonterminal_model_accuracy(true_spec: &ProblemSpec, learned: &ProblemSpec, dof: usize) -> Result<f64> {
    if true_spec.variables != learned.variables || true_spec.actions != learned.actions {
        return Err(Error::Validation("models disagree on variables or actions".into()));
    }
    let domain = true_spec.domain();
    let open: u128 = true_spec
        .terminal
        .leaf_regions(&domain)
        .into_iter()
        .filter(|r| !*r.label)
        .map(|r| r.size)
        .sum();
    if open == 0 {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for a in 0..true_spec.num_actions() {
        for i in 0..true_spec.num_vars() {
            let q = q_tree(true_spec, learned, a, i, dof)?;
            let masked = merge2(&q, &true_spec.terminal, |&q, &term| if term { 0.0 } else { q });
            total += masked.leaf_regions(&domain).into_iter().map(|r| r.label * r.size as f64).sum::<f64>();
        }
    }
    Ok(total / (true_spec.num_actions() as f64 * true_spec.num_vars() as f64 * open as f64))
}

/// R_t = r_t + γ'·R_{t−1}.
pub fn discounted_reward_update(prev: f64, reward: f64, gamma_report: f64) -> f64 {
    reward + gamma_report * prev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_trees() {
        let d = Domain::binary(3);
        let r = relative_error(&Tree::leaf(10.0), &Tree::leaf(9.0), &d).unwrap();
        assert!((r.xi - 0.1).abs() < 1e-15);
        assert_eq!(relative_error(&Tree::leaf(0.0), &Tree::leaf(0.0), &d).unwrap().xi, 0.0);
    }

    #[test]
    fn policy_above_optimum_is_an_error() {
        let d = Domain::binary(1);
        assert!(matches!(
            relative_error(&Tree::leaf(1.0), &Tree::leaf(2.0), &d),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn mixed_regions() {
        let d = Domain::binary(2);
        let v_star = Tree::node(0, vec![Tree::leaf(4.0), Tree::leaf(2.0)]);
        let v_pi = Tree::node(1, vec![Tree::leaf(2.0), Tree::leaf(1.0)]);
        // states (x0,x1): (0,0) 0.5, (1,0) 0, (0,1) 0.75, (1,1) 0.5
        let r = relative_error(&v_star, &v_pi, &d).unwrap();
        assert!((r.xi - (0.5 + 0.0 + 0.75 + 0.5) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn nonterminal_accuracy_of_truth_is_one() {
        let spec = crate::generators::gen_noisy(4, 0.2).unwrap();
        assert_eq!(nonterminal_model_accuracy(&spec, &spec, 1).unwrap(), 1.0);
    }

    #[test]
    fn reward_trace() {
        assert_eq!(discounted_reward_update(0.0, 1.0, 0.99), 1.0);
        let mut r = 0.0;
        for _ in 0..5000 {
            r = discounted_reward_update(r, 1.0, 0.99);
        }
        assert!((r - 100.0).abs() < 1e-6);
    }
}
