//! Factored MDP models: the ground-truth problem, the learned model, the
//! simulated environment and the enumerated ground MDP used as an oracle.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::induction::{InductionConfig, LearnerTree};
use crate::tree::{Domain, State, Tree, VarId};

/// Probability of each domain value of one variable.
pub type Distribution = Vec<f64>;

/// Largest number of state/action pairs the oracle will enumerate.
pub const ENUMERATION_CAP: u128 = 1 << 21;

const PROB_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub values: Vec<String>,
}

impl Variable {
    pub fn binary(name: impl Into<String>) -> Self {
        Variable { name: name.into(), values: vec!["false".into(), "true".into()] }
    }
}

/// How episodes start after a terminal state.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialRule {
    /// Non-terminal states from which some policy reaches a terminal state,
    /// found by enumeration.
    Reachable,
    /// Every non-terminal state.
    NonTerminal,
    Explicit(Vec<State>),
}

/// A factored MDP with tree-structured CPDs, reward and terminal condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub variables: Vec<Variable>,
    pub actions: Vec<String>,
    /// `cpds[a][i]` gives the distribution of X'_i after action `a`.
    pub cpds: Vec<Vec<Tree<Distribution>>>,
    /// Reward over the state variables plus one action attribute whose id is
    /// the number of variables.
    pub reward: Tree<f64>,
    pub terminal: Tree<bool>,
    pub discount: f64,
    pub initial: InitialRule,
    pub r_max: Option<f64>,
}

impl ProblemSpec {
    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn domain(&self) -> Domain {
        Domain::new(self.variables.iter().map(|v| v.values.len()).collect())
            .expect("validated variable table")
    }

    /// Id of the action attribute in the reward tree.
    pub fn action_var(&self) -> VarId {
        self.variables.len()
    }

    pub fn reward_domain(&self) -> Domain {
        self.domain().with_extra(self.actions.len())
    }

    pub fn state_action_pairs(&self) -> u128 {
        self.domain().state_count() * self.actions.len() as u128
    }

    pub fn var_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    /// Reward tree specialised to one action.
    pub fn reward_for(&self, action: usize) -> Tree<f64> {
        self.reward.restrict(self.action_var(), action)
    }

    pub fn true_reward(&self, state: &[usize], action: usize) -> f64 {
        let mut attrs = state.to_vec();
        attrs.push(action);
        *self.reward.get(&attrs)
    }

    pub fn is_terminal(&self, state: &[usize]) -> bool {
        *self.terminal.get(state)
    }

    /// Upper bound on rewards: the declared value or the largest reward leaf.
    pub fn r_max(&self) -> f64 {
        self.r_max
            .unwrap_or_else(|| self.reward.leaves().into_iter().fold(f64::MIN, |a, &b| a.max(b)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::Validation("problem declares no variables".into()));
        }
        if self.actions.is_empty() {
            return Err(Error::Validation("problem declares no actions".into()));
        }
        for v in &self.variables {
            if v.values.len() < 2 {
                return Err(Error::Validation(format!("variable {:?} needs at least two values", v.name)));
            }
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Validation(format!("discount {} outside [0, 1)", self.discount)));
        }
        let domain = self.domain();
        if self.cpds.len() != self.actions.len() {
            return Err(Error::Validation("one CPD set per action required".into()));
        }
        for (a, per_var) in self.cpds.iter().enumerate() {
            if per_var.len() != self.variables.len() {
                return Err(Error::Validation(format!(
                    "action {:?} has {} CPDs for {} variables",
                    self.actions[a],
                    per_var.len(),
                    self.variables.len()
                )));
            }
            for (i, tree) in per_var.iter().enumerate() {
                let at = || format!("CPD of ({}, {})", self.actions[a], self.variables[i].name);
                tree.validate(&domain).map_err(|e| Error::Validation(format!("{}: {e}", at())))?;
                for dist in tree.leaves() {
                    if dist.len() != self.variables[i].values.len() {
                        return Err(Error::Validation(format!(
                            "{}: leaf has {} probabilities for {} values",
                            at(),
                            dist.len(),
                            self.variables[i].values.len()
                        )));
                    }
                    let sum: f64 = dist.iter().sum();
                    if dist.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > PROB_TOL {
                        return Err(Error::Validation(format!("{}: leaf {dist:?} sums to {sum}", at())));
                    }
                }
            }
        }
        self.reward
            .validate(&self.reward_domain())
            .map_err(|e| Error::Validation(format!("reward: {e}")))?;
        if self.reward.leaves().iter().any(|r| !r.is_finite()) {
            return Err(Error::Validation("reward: non-finite leaf".into()));
        }
        self.terminal
            .validate(&domain)
            .map_err(|e| Error::Validation(format!("terminal: {e}")))?;
        if let InitialRule::Explicit(states) = &self.initial {
            for s in states {
                domain.check(s).map_err(|e| Error::Validation(format!("initial state: {e}")))?;
                if self.is_terminal(s) {
                    return Err(Error::Validation(format!("initial state {:?} is terminal", s.0)));
                }
            }
        }
        Ok(())
    }
}

fn sample_index(dist: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the cumulative sum; take the last value with mass
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

/// Draws the next state, each variable independently from its CPD.
pub fn sample_transition(spec: &ProblemSpec, state: &[usize], action: usize, rng: &mut impl Rng) -> Result<State> {
    if spec.is_terminal(state) {
        return Err(Error::TerminalState(state.to_vec()));
    }
    Ok(State(
        spec.cpds[action]
            .iter()
            .map(|cpd| sample_index(cpd.get(state), rng))
            .collect(),
    ))
}

/// Where episodes restart.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialSet {
    Explicit(Vec<State>),
    /// Uniform over non-terminal states, drawn by rejection.
    NonTerminal,
    /// Uniform over every state; used when no state can reach a terminal.
    AllStates,
}

impl InitialSet {
    pub fn is_empty(&self) -> bool {
        matches!(self, InitialSet::Explicit(v) if v.is_empty())
    }
}

/// The set of initial states declared or implied by `spec`.
pub fn initial_states(spec: &ProblemSpec) -> Result<InitialSet> {
    match &spec.initial {
        InitialRule::Explicit(states) => Ok(InitialSet::Explicit(states.clone())),
        InitialRule::NonTerminal => Ok(InitialSet::NonTerminal),
        InitialRule::Reachable => Ok(InitialSet::Explicit(reachable_initial_states(spec)?)),
    }
}

/// Non-terminal states with a positive probability of eventually reaching a
/// terminal state under some policy.
pub fn reachable_initial_states(spec: &ProblemSpec) -> Result<Vec<State>> {
    let ground = ground_mdp(spec)?;
    let n = ground.num_states();
    let mut good: Vec<bool> = ground.terminal.clone();
    loop {
        let mut changed = false;
        for s in 0..n {
            if good[s] {
                continue;
            }
            let reaches = ground.transitions[s]
                .iter()
                .any(|row| row.iter().any(|&(t, p)| p > 0.0 && good[t]));
            if reaches {
                good[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let domain = spec.domain();
    Ok((0..n)
        .filter(|&s| good[s] && !ground.terminal[s])
        .map(|s| domain.state_at(s))
        .collect())
}

/// Uniform draw from the initial set. An empty explicit set falls back to
/// every state.
pub fn reset_initial(spec: &ProblemSpec, initial: &InitialSet, rng: &mut impl Rng) -> State {
    let domain = spec.domain();
    let uniform = |rng: &mut dyn rand::RngCore| -> State {
        State(domain.sizes().iter().map(|&k| rng.gen_range(0..k)).collect())
    };
    match initial {
        InitialSet::Explicit(states) if !states.is_empty() => states[rng.gen_range(0..states.len())].clone(),
        InitialSet::NonTerminal => {
            // bounded rejection; problems whose states are nearly all terminal
            // should declare explicit initial states
            for _ in 0..100_000 {
                let s = uniform(rng);
                if !spec.is_terminal(&s) {
                    return s;
                }
            }
            uniform(rng)
        }
        _ => uniform(rng),
    }
}

/// Parent sets of every (action, variable) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DbnGraph {
    pub parents: Vec<Vec<BTreeSet<VarId>>>,
}

impl DbnGraph {
    pub fn parents(&self, action: usize, var: VarId) -> &BTreeSet<VarId> {
        &self.parents[action][var]
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().flatten().map(BTreeSet::len).sum()
    }
}

/// Parents of X'_i under `a` are the variables tested in its CPD tree.
pub fn extract_parents<L>(cpds: &[Vec<Tree<L>>]) -> DbnGraph {
    DbnGraph {
        parents: cpds
            .iter()
            .map(|per_var| per_var.iter().map(Tree::tested_vars).collect())
            .collect(),
    }
}

/// The enumerated MDP.
#[derive(Clone, Debug)]
pub struct GroundMdp {
    pub domain: Domain,
    pub num_actions: usize,
    /// `transitions[s][a]` lists successor indices with positive probability.
    /// Terminal states have empty rows.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub rewards: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
    pub discount: f64,
}

/// Enumerates states and transitions of `spec`.
pub fn ground_mdp(spec: &ProblemSpec) -> Result<GroundMdp> {
    let pairs = spec.state_action_pairs();
    if pairs > ENUMERATION_CAP {
        return Err(Error::Infeasible { pairs, cap: ENUMERATION_CAP });
    }
    let domain = spec.domain();
    let n = domain.state_count() as usize;
    let na = spec.num_actions();
    let mut transitions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut terminal = Vec::with_capacity(n);
    for idx in 0..n {
        let s = domain.state_at(idx);
        let is_term = spec.is_terminal(&s);
        terminal.push(is_term);
        rewards.push((0..na).map(|a| spec.true_reward(&s, a)).collect());
        if is_term {
            transitions.push(vec![Vec::new(); na]);
            continue;
        }
        let mut rows = Vec::with_capacity(na);
        for a in 0..na {
            let marginals: Vec<&Distribution> = spec.cpds[a].iter().map(|t| t.get(&s)).collect();
            let row = product_successors(&domain, &marginals);
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::Consistency(format!(
                    "transition row of state {idx}, action {a} sums to {sum}"
                )));
            }
            rows.push(row);
        }
        transitions.push(rows);
    }
    Ok(GroundMdp { domain, num_actions: na, transitions, rewards, terminal, discount: spec.discount })
}

/// Successor distribution as the product of independent marginals.
fn product_successors(domain: &Domain, marginals: &[&Distribution]) -> Vec<(usize, f64)> {
    let mut partial: Vec<(usize, f64)> = vec![(0, 1.0)];
    let mut stride = 1usize;
    for (i, dist) in marginals.iter().enumerate() {
        let mut next = Vec::with_capacity(partial.len() * 2);
        for &(idx, p) in &partial {
            for (k, &q) in dist.iter().enumerate() {
                if q > 0.0 {
                    next.push((idx + k * stride, p * q));
                }
            }
        }
        partial = next;
        stride *= domain.size(i);
    }
    partial.sort_unstable_by_key(|&(i, _)| i);
    partial
}

impl GroundMdp {
    pub fn num_states(&self) -> usize {
        self.terminal.len()
    }

    /// Q(s, a) = R(s, a) + γ Σ P(s'|s, a) V(s'); terminal rows have no
    /// successors so their Q is the reward.
    pub fn backup(&self, values: &[f64], s: usize, a: usize) -> f64 {
        let future: f64 = self.transitions[s][a].iter().map(|&(t, p)| p * values[t]).sum();
        self.rewards[s][a] + self.discount * future
    }

    /// Tabular value iteration to sup-norm `tol`.
    pub fn value_iteration(&self, tol: f64, max_iterations: usize) -> Result<Vec<f64>> {
        let n = self.num_states();
        let mut v = vec![0.0; n];
        for _ in 0..max_iterations {
            let next: Vec<f64> = (0..n)
                .map(|s| {
                    (0..self.num_actions)
                        .map(|a| self.backup(&v, s, a))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if diff <= tol {
                return Ok(v);
            }
        }
        Err(Error::Convergence { iterations: max_iterations, residual: f64::NAN })
    }

    /// Tabular policy evaluation to sup-norm `tol`.
    pub fn policy_evaluation(&self, policy: &[usize], tol: f64, max_iterations: usize) -> Result<Vec<f64>> {
        let n = self.num_states();
        let mut v = vec![0.0; n];
        for _ in 0..max_iterations {
            let next: Vec<f64> = (0..n).map(|s| self.backup(&v, s, policy[s])).collect();
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if diff <= tol {
                return Ok(v);
            }
        }
        Err(Error::Convergence { iterations: max_iterations, residual: f64::NAN })
    }
}

/// The learned model: one learner per (action, variable) CPD plus a reward
/// learner whose attributes are the state variables and the action.
#[derive(Clone, Debug)]
pub struct LearnedModel {
    pub variables: Vec<Variable>,
    pub actions: Vec<String>,
    pub cpds: Vec<Vec<LearnerTree>>,
    pub reward: LearnerTree,
    /// Episode-end signal supplied by the environment.
    pub terminal: Tree<bool>,
    pub discount: f64,
    pub config: InductionConfig,
}

/// One observed step. `next` is `None` for the final step taken in a
/// terminal state, which yields a reward but no transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: usize,
    pub reward: f64,
    pub next: Option<State>,
}

impl LearnedModel {
    /// An empty model over the variable and action tables of `template`.
    pub fn new(template: &ProblemSpec, config: InductionConfig) -> Self {
        let arities: Vec<usize> = template.variables.iter().map(|v| v.values.len()).collect();
        let cpds = (0..template.num_actions())
            .map(|_| {
                arities
                    .iter()
                    .map(|&k| LearnerTree::new(arities.clone(), k, config))
                    .collect()
            })
            .collect();
        let mut reward_arities = arities.clone();
        reward_arities.push(template.num_actions());
        LearnedModel {
            variables: template.variables.clone(),
            actions: template.actions.clone(),
            cpds,
            reward: LearnerTree::numeric(reward_arities, config),
            terminal: template.terminal.clone(),
            discount: template.discount,
            config,
        }
    }

    /// Feeds one observation to the learners: a reward example and, when the
    /// step had a successor, one example per variable into the trees of the
    /// executed action. Returns the number of examples added.
    pub fn observe(&mut self, t: &Transition) -> Result<usize> {
        let mut attrs = t.state.0.clone();
        attrs.push(t.action);
        self.reward.add_value_example(&attrs, t.reward)?;
        let mut added = 1;
        if let Some(next) = &t.next {
            for (i, learner) in self.cpds[t.action].iter_mut().enumerate() {
                learner.add_example(&t.state, next[i])?;
                added += 1;
            }
        }
        Ok(added)
    }

    /// Total node count of the transition trees.
    pub fn node_count(&self) -> usize {
        self.cpds.iter().flatten().map(LearnerTree::node_count).sum()
    }

    pub fn frozen_cpd(&self, action: usize, var: VarId) -> Tree<Distribution> {
        self.cpds[action][var].freeze().map(&mut |d| d.probabilities())
    }

    pub fn frozen_reward(&self) -> Tree<f64> {
        self.reward.freeze_values()
    }

    pub fn parents(&self) -> DbnGraph {
        DbnGraph {
            parents: self
                .cpds
                .iter()
                .map(|per_var| {
                    per_var
                        .iter()
                        .map(|l| l.installed_tests().into_iter().map(|(v, _)| v).collect())
                        .collect()
                })
                .collect(),
        }
    }
}

/// Freezes every learner into a problem the planner and metrics can use.
pub fn model_to_spec(model: &LearnedModel) -> ProblemSpec {
    ProblemSpec {
        name: "learned".into(),
        variables: model.variables.clone(),
        actions: model.actions.clone(),
        cpds: (0..model.actions.len())
            .map(|a| (0..model.variables.len()).map(|i| model.frozen_cpd(a, i)).collect())
            .collect(),
        reward: model.frozen_reward(),
        terminal: model.terminal.clone(),
        discount: model.discount,
        initial: InitialRule::NonTerminal,
        r_max: None,
    }
}

/// Simulated environment around a problem.
#[derive(Clone, Debug)]
pub struct Environment {
    spec: Arc<ProblemSpec>,
    initial: InitialSet,
    state: State,
}

impl Environment {
    pub fn new(spec: Arc<ProblemSpec>, rng: &mut impl Rng) -> Result<Self> {
        let initial = initial_states(&spec)?;
        Ok(Self::with_initial(spec, initial, rng))
    }

    pub fn with_initial(spec: Arc<ProblemSpec>, initial: InitialSet, rng: &mut impl Rng) -> Self {
        let state = reset_initial(&spec, &initial, rng);
        Environment { spec, initial, state }
    }

    pub fn spec(&self) -> &Arc<ProblemSpec> {
        &self.spec
    }

    pub fn initial(&self) -> &InitialSet {
        &self.initial
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn in_terminal(&self) -> bool {
        self.spec.is_terminal(&self.state)
    }

    /// Executes `action`. From a non-terminal state the successor is sampled;
    /// from a terminal state the reward is collected and the episode restarts.
    pub fn step(&mut self, action: usize, rng: &mut impl Rng) -> Result<Transition> {
        let state = self.state.clone();
        let reward = self.spec.true_reward(&state, action);
        if self.spec.is_terminal(&state) {
            self.state = reset_initial(&self.spec, &self.initial, rng);
            return Ok(Transition { state, action, reward, next: None });
        }
        let next = sample_transition(&self.spec, &state, action, rng)?;
        self.state = next.clone();
        Ok(Transition { state, action, reward, next: Some(next) })
    }
}
