//! Structured dynamic programming over decision trees.

use crate::error::{Error, Result};
use crate::model::{Distribution, ProblemSpec};
use crate::tree::{merge2, merge_all, Assignment, Tree, VarId};

pub type ValueTree = Tree<f64>;
pub type PolicyTree = Tree<usize>;
/// One Q tree per action.
pub type QTreeSet = Vec<Tree<f64>>;

/// Relative gap below which two action values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerConfig {
    pub gamma: f64,
    /// SVI stops when the span of successive differences drops to this.
    pub span_tolerance: f64,
    /// SSA stops when the sup-norm of successive differences drops to this.
    pub sup_tolerance: f64,
    pub max_iterations: usize,
    /// Backups performed per `plan_step` call by online agents.
    pub backups_per_step: usize,
}

impl PlannerConfig {
    pub fn new(gamma: f64) -> Self {
        PlannerConfig {
            gamma,
            span_tolerance: 1e-5,
            sup_tolerance: 1e-6,
            max_iterations: 10_000,
            backups_per_step: 1,
        }
    }

    pub fn for_spec(spec: &ProblemSpec) -> Self {
        Self::new(spec.discount)
    }

    pub fn with_tolerances(mut self, span: f64, sup: f64) -> Self {
        self.span_tolerance = span;
        self.sup_tolerance = sup;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Validation(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(self.span_tolerance > 0.0 && self.sup_tolerance > 0.0) {
            return Err(Error::Validation("planner tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Expected value of `v` at the next step given per-variable marginals.
/// `slot[var]` locates the marginal of `var` in `marginals`.
fn expected_value(v: &ValueTree, slot: &[Option<usize>], marginals: &[&Distribution]) -> f64 {
    match v {
        Tree::Leaf(x) => *x,
        Tree::Node { var, children } => {
            let dist = marginals[slot[*var].expect("tested variable has a marginal")];
            children
                .iter()
                .zip(dist)
                .filter(|(_, &p)| p > 0.0)
                .map(|(c, &p)| p * expected_value(c, slot, marginals))
                .sum()
        }
    }
}

/// Tree of Q(s, a) = R(s, a) + γ·E[V(s')], with zero future value in
/// terminal states.
pub fn regress(v: &ValueTree, spec: &ProblemSpec, action: usize, gamma: f64) -> Tree<f64> {
    let vars: Vec<VarId> = v.tested_vars().into_iter().collect();
    let future = if vars.is_empty() {
        v.clone()
    } else {
        let mut slot = vec![None; spec.num_vars()];
        for (k, &var) in vars.iter().enumerate() {
            slot[var] = Some(k);
        }
        let cpds: Vec<&Tree<Distribution>> = vars.iter().map(|&var| &spec.cpds[action][var]).collect();
        merge_all(&cpds, |marginals| expected_value(v, &slot, marginals))
    };
    let masked = merge2(&spec.terminal, &future, |&term, &f| if term { 0.0 } else { f });
    merge2(&spec.reward_for(action), &masked, |&r, &f| r + gamma * f)
}

fn max_merge(qs: &[Tree<f64>]) -> ValueTree {
    let refs: Vec<&Tree<f64>> = qs.iter().collect();
    merge_all(&refs, |ls| ls.iter().fold(f64::NEG_INFINITY, |m, &&x| m.max(x)))
}

/// One backup sweep: every Q tree from `v_prev`, then their max.
pub fn plan_step(spec: &ProblemSpec, v_prev: &ValueTree, gamma: f64) -> (QTreeSet, ValueTree) {
    let qs: QTreeSet = (0..spec.num_actions()).map(|a| regress(v_prev, spec, a, gamma)).collect();
    let v = max_merge(&qs);
    (qs, v)
}

fn argmax(values: &[&f64]) -> usize {
    let mut best = 0;
    for (a, &&q) in values.iter().enumerate().skip(1) {
        let b = *values[best];
        if q - b > TIE_TOLERANCE * q.abs().max(b.abs()) {
            best = a;
        }
    }
    best
}

/// Best action per state; near-ties go to the lowest action id.
pub fn greedy_policy(qs: &[Tree<f64>]) -> PolicyTree {
    let refs: Vec<&Tree<f64>> = qs.iter().collect();
    merge_all(&refs, argmax)
}

/// Best action in one state.
pub fn greedy_action(qs: &[Tree<f64>], state: &[usize]) -> usize {
    let values: Vec<&f64> = qs.iter().map(|q| q.get(state)).collect();
    argmax(&values)
}

/// Minimum and maximum leaf of `a − b`.
fn difference_range(a: &ValueTree, b: &ValueTree) -> (f64, f64) {
    let diff = merge2(a, b, |x, y| x - y);
    diff.leaves()
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)))
}

#[derive(Clone, Debug)]
pub struct SviResult {
    pub value: ValueTree,
    pub policy: PolicyTree,
    pub q: QTreeSet,
    pub iterations: usize,
    /// Sup-norm distance between successive iterates.
    pub sup_trace: Vec<f64>,
}

/// Structured value iteration from V = 0 until the span of successive
/// differences is within tolerance, followed by a span-bound extrapolation.
pub fn svi_solve(spec: &ProblemSpec, config: &PlannerConfig) -> Result<SviResult> {
    config.validate()?;
    let mut v: ValueTree = Tree::leaf(0.0);
    let mut trace = Vec::new();
    let mut span = f64::INFINITY;
    for it in 1..=config.max_iterations {
        let (qs, next) = plan_step(spec, &v, config.gamma);
        let (lo, hi) = difference_range(&next, &v);
        span = hi - lo;
        trace.push(lo.abs().max(hi.abs()));
        v = next;
        if span <= config.span_tolerance {
            // a small span means every state still moves by about the same
            // amount; extrapolate that geometric tail (midpoint of the
            // span bounds). Terminal states already hold their exact value.
            let shift = config.gamma / (1.0 - config.gamma) * 0.5 * (lo + hi);
            let value = merge2(&spec.terminal, &v, |&term, &x| if term { x } else { x + shift });
            let policy = greedy_policy(&qs);
            return Ok(SviResult { value, policy, q: qs, iterations: it, sup_trace: trace });
        }
    }
    Err(Error::Convergence { iterations: config.max_iterations, residual: span })
}

fn select_by_policy(policy: &PolicyTree, qs: &[Tree<f64>], path: &mut Assignment) -> Tree<f64> {
    match policy {
        Tree::Leaf(a) => qs[*a].restrict_partial(path),
        Tree::Node { var, children } => {
            let mut out = Vec::with_capacity(children.len());
            for (k, c) in children.iter().enumerate() {
                path.set(*var, k);
                out.push(select_by_policy(c, qs, path));
            }
            path.unset(*var);
            Tree::node_simplified(*var, out)
        }
    }
}

/// Structured successive approximation: the value of `policy` by fixed-point
/// iteration, stopping on the sup-norm.
pub fn ssa_evaluate(policy: &PolicyTree, spec: &ProblemSpec, config: &PlannerConfig) -> Result<ValueTree> {
    config.validate()?;
    let used: Vec<bool> = {
        let mut used = vec![false; spec.num_actions()];
        for &a in policy.leaves() {
            if a >= spec.num_actions() {
                return Err(Error::Validation(format!("policy leaf names unknown action {a}")));
            }
            used[a] = true;
        }
        used
    };
    let mut v: ValueTree = Tree::leaf(0.0);
    let mut residual = f64::INFINITY;
    for _ in 0..config.max_iterations {
        let qs: QTreeSet = (0..spec.num_actions())
            .map(|a| if used[a] { regress(&v, spec, a, config.gamma) } else { Tree::leaf(0.0) })
            .collect();
        let next = select_by_policy(policy, &qs, &mut Assignment::new());
        let (lo, hi) = difference_range(&next, &v);
        residual = lo.abs().max(hi.abs());
        v = next;
        if residual <= config.sup_tolerance {
            return Ok(v);
        }
    }
    Err(Error::Convergence { iterations: config.max_iterations, residual })
}
