//! Online agents: the SPITI act/learn/plan loop, a tabular DYNA-Q baseline,
//! and random and optimal reference agents.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::induction::InductionConfig;
use crate::metrics::discounted_reward_update;
use crate::model::{model_to_spec, Environment, LearnedModel, ProblemSpec, Transition};
use crate::planner::{greedy_action, greedy_policy, plan_step, PlannerConfig, PolicyTree, QTreeSet, ValueTree};
use crate::tree::{State, Tree};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplorationConfig {
    pub epsilon: f64,
    pub gamma: f64,
    /// Discount of the reported reward trace.
    pub gamma_report: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig { epsilon: 0.1, gamma: 0.9, gamma_report: 0.99 }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Validation(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..1.0).contains(&self.gamma_report) {
            return Err(Error::Validation("discounts must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// ε-greedy choice over Q trees.
pub fn select_action(qs: &[Tree<f64>], state: &[usize], epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..qs.len())
    } else {
        greedy_action(qs, state)
    }
}

/// One step of an online run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub t: usize,
    pub state: State,
    pub action: usize,
    pub reward: f64,
    pub r_disc: f64,
    pub model_nodes: usize,
    /// The step was taken in a terminal state and the episode restarted.
    pub episode_end: bool,
}

pub trait Agent {
    /// Acts once in `env` and updates internal state from the outcome.
    fn step(&mut self, env: &mut Environment, rng: &mut dyn rand::RngCore) -> Result<Transition>;

    /// Size of the agent's model; zero for model-free agents.
    fn model_nodes(&self) -> usize;

    /// The agent's current greedy policy, when it has a structured one.
    fn policy(&self) -> Option<PolicyTree> {
        None
    }

    /// The structured model being learned, if any.
    fn learned_model(&self) -> Option<&LearnedModel> {
        None
    }
}

/// Drives `agent` for `steps` steps, calling `observe` after each one.
pub fn run_online(
    agent: &mut dyn Agent,
    env: &mut Environment,
    steps: usize,
    gamma_report: f64,
    rng: &mut dyn rand::RngCore,
    mut observe: impl FnMut(&RunRecord, &dyn Agent) -> Result<()>,
) -> Result<()> {
    let mut r_disc = 0.0;
    for t in 0..steps {
        let tr = agent.step(env, rng)?;
        r_disc = discounted_reward_update(r_disc, tr.reward, gamma_report);
        let record = RunRecord {
            t,
            state: tr.state,
            action: tr.action,
            reward: tr.reward,
            r_disc,
            model_nodes: agent.model_nodes(),
            episode_end: tr.next.is_none(),
        };
        observe(&record, &*agent)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoopCounters {
    pub learn_calls: usize,
    pub plan_calls: usize,
}

/// SDYNA with χ²-gated tree learners and one structured backup per step.
#[derive(Clone, Debug)]
pub struct SpitiAgent {
    pub model: LearnedModel,
    pub value: ValueTree,
    pub q: QTreeSet,
    pub planner: PlannerConfig,
    pub exploration: ExplorationConfig,
    pub counters: LoopCounters,
}

impl SpitiAgent {
    /// `template` supplies the variable and action tables and the terminal
    /// signal; nothing else of it is visible to the agent.
    pub fn new(template: &ProblemSpec, induction: InductionConfig, exploration: ExplorationConfig) -> Self {
        let mut model = LearnedModel::new(template, induction);
        model.discount = exploration.gamma;
        let planner = PlannerConfig::new(exploration.gamma);
        let value: ValueTree = Tree::leaf(0.0);
        let (q, value) = plan_step(&model_to_spec(&model), &value, planner.gamma);
        SpitiAgent { model, value, q, planner, exploration, counters: LoopCounters::default() }
    }

    pub fn learn(&mut self, tr: &Transition) -> Result<()> {
        self.model.observe(tr)?;
        self.counters.learn_calls += 1;
        Ok(())
    }

    pub fn plan(&mut self) {
        let spec = model_to_spec(&self.model);
        for _ in 0..self.planner.backups_per_step.max(1) {
            let (q, v) = plan_step(&spec, &self.value, self.planner.gamma);
            self.q = q;
            self.value = v;
        }
        self.counters.plan_calls += 1;
    }
}

impl Agent for SpitiAgent {
    fn step(&mut self, env: &mut Environment, mut rng: &mut dyn rand::RngCore) -> Result<Transition> {
        let action = select_action(&self.q, env.state(), self.exploration.epsilon, &mut rng);
        let tr = env.step(action, &mut rng)?;
        self.learn(&tr)?;
        self.plan();
        Ok(tr)
    }

    fn model_nodes(&self) -> usize {
        self.model.node_count()
    }

    fn policy(&self) -> Option<PolicyTree> {
        Some(greedy_policy(&self.q))
    }

    fn learned_model(&self) -> Option<&LearnedModel> {
        Some(&self.model)
    }
}

#[derive(Clone, Debug, Default)]
struct PairModel {
    successors: BTreeMap<State, u64>,
    visits: u64,
    reward_sum: f64,
}

impl PairModel {
    fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.reward_sum / self.visits as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynaQConfig {
    pub alpha: f64,
    /// Planning updates per step as a multiple of the model size.
    pub planning_multiplier: usize,
    pub q_init: f64,
    /// Back up one sampled successor instead of the empirical expectation.
    pub sampled_backups: bool,
}

impl DynaQConfig {
    /// Optimistic initial values from the reward bound.
    pub fn optimistic(r_max: f64, gamma: f64) -> Self {
        DynaQConfig { alpha: 1.0, planning_multiplier: 2, q_init: r_max / (1.0 - gamma), sampled_backups: false }
    }
}

/// Tabular DYNA-Q over an empirical transition model.
#[derive(Clone, Debug)]
pub struct DynaQAgent {
    num_actions: usize,
    q: HashMap<State, Vec<f64>>,
    model: HashMap<(State, usize), PairModel>,
    /// Stored pairs in insertion order, for uniform planning draws.
    pairs: Vec<(State, usize)>,
    transition_pairs: usize,
    pub config: DynaQConfig,
    pub exploration: ExplorationConfig,
}

impl DynaQAgent {
    pub fn new(num_actions: usize, config: DynaQConfig, exploration: ExplorationConfig) -> Self {
        DynaQAgent {
            num_actions,
            q: HashMap::new(),
            model: HashMap::new(),
            pairs: Vec::new(),
            transition_pairs: 0,
            config,
            exploration,
        }
    }

    pub fn q_value(&self, state: &State, action: usize) -> f64 {
        self.q.get(state).map_or(self.config.q_init, |row| row[action])
    }

    fn max_q(&self, state: &State) -> f64 {
        self.q
            .get(state)
            .map_or(self.config.q_init, |row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    fn greedy(&self, state: &State) -> usize {
        match self.q.get(state) {
            None => 0,
            Some(row) => {
                let mut best = 0;
                for a in 1..row.len() {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            }
        }
    }

    fn record(&mut self, tr: &Transition) {
        let key = (tr.state.clone(), tr.action);
        let entry = self.model.entry(key.clone()).or_insert_with(|| {
            self.pairs.push(key);
            PairModel::default()
        });
        entry.visits += 1;
        entry.reward_sum += tr.reward;
        if let Some(next) = &tr.next {
            if entry.successors.is_empty() {
                self.transition_pairs += 1;
            }
            *entry.successors.entry(next.clone()).or_insert(0) += 1;
        }
    }

    fn backup(&mut self, state: &State, action: usize, rng: &mut dyn rand::RngCore) {
        let pm = &self.model[&(state.clone(), action)];
        let n: u64 = pm.successors.values().sum();
        let future = if n == 0 {
            0.0
        } else if self.config.sampled_backups {
            let mut pick = rng.gen_range(0..n);
            let mut chosen = None;
            for (s, &c) in &pm.successors {
                if pick < c {
                    chosen = Some(s);
                    break;
                }
                pick -= c;
            }
            self.max_q(chosen.expect("draw within total"))
        } else {
            pm.successors.iter().map(|(s, &c)| c as f64 / n as f64 * self.max_q(s)).sum()
        };
        let target = pm.mean_reward() + self.exploration.gamma * future;
        let q_init = self.config.q_init;
        let alpha = self.config.alpha;
        let row = self.q.entry(state.clone()).or_insert_with(|| vec![q_init; self.num_actions]);
        row[action] += alpha * (target - row[action]);
    }
}

impl Agent for DynaQAgent {
    fn step(&mut self, env: &mut Environment, rng: &mut dyn rand::RngCore) -> Result<Transition> {
        let state = env.state().clone();
        let action = if self.exploration.epsilon > 0.0 && rng.gen::<f64>() < self.exploration.epsilon {
            rng.gen_range(0..self.num_actions)
        } else {
            self.greedy(&state)
        };
        let tr = env.step(action, &mut &mut *rng)?;
        self.record(&tr);
        self.backup(&tr.state, tr.action, rng);
        let updates = self.config.planning_multiplier * self.model_nodes();
        for _ in 0..updates {
            let (s, a) = self.pairs[rng.gen_range(0..self.pairs.len())].clone();
            self.backup(&s, a, rng);
        }
        Ok(tr)
    }

    /// Distinct state/action pairs with an observed transition.
    fn model_nodes(&self) -> usize {
        self.transition_pairs
    }
}

/// Uniformly random actions.
#[derive(Clone, Debug)]
pub struct RandomAgent {
    pub num_actions: usize,
}

impl Agent for RandomAgent {
    fn step(&mut self, env: &mut Environment, mut rng: &mut dyn rand::RngCore) -> Result<Transition> {
        let a = rng.gen_range(0..self.num_actions);
        env.step(a, &mut rng)
    }

    fn model_nodes(&self) -> usize {
        0
    }
}

/// Follows a precomputed policy.
#[derive(Clone, Debug)]
pub struct OptimalAgent {
    pub policy: PolicyTree,
}

impl Agent for OptimalAgent {
    fn step(&mut self, env: &mut Environment, mut rng: &mut dyn rand::RngCore) -> Result<Transition> {
        let a = *self.policy.get(env.state());
        env.step(a, &mut rng)
    }

    fn model_nodes(&self) -> usize {
        0
    }

    fn policy(&self) -> Option<PolicyTree> {
        Some(self.policy.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialRule, InitialSet, Variable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn coin_spec(reward: f64) -> ProblemSpec {
        ProblemSpec {
            name: "coin".into(),
            variables: vec![Variable::binary("x")],
            actions: vec!["a".into(), "b".into()],
            cpds: vec![vec![Tree::leaf(vec![0.5, 0.5])]; 2],
            reward: Tree::leaf(reward),
            terminal: Tree::leaf(false),
            discount: 0.9,
            initial: InitialRule::NonTerminal,
            r_max: Some(1.0),
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let qs = vec![Tree::leaf(0.0), Tree::leaf(5.0), Tree::leaf(1.0), Tree::leaf(2.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = [0usize; 4];
        for _ in 0..10_000 {
            hits[select_action(&qs, &[0], 1.0, &mut rng)] += 1;
        }
        assert!(hits.iter().all(|&h| (h as f64 / 10_000.0 - 0.25).abs() < 0.02), "{hits:?}");
    }

    #[test]
    fn epsilon_zero_is_greedy() {
        let qs = vec![Tree::leaf(0.0), Tree::leaf(5.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| select_action(&qs, &[0], 0.0, &mut rng) == 1));
    }

    #[test]
    fn spiti_counts_one_learn_and_plan_per_step() {
        let spec = Arc::new(coin_spec(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut env = Environment::with_initial(spec.clone(), InitialSet::NonTerminal, &mut rng);
        let mut agent = SpitiAgent::new(&spec, InductionConfig::default(), ExplorationConfig::default());
        run_online(&mut agent, &mut env, 25, 0.99, &mut rng, |_, _| Ok(())).unwrap();
        assert_eq!(agent.counters, LoopCounters { learn_calls: 25, plan_calls: 25 });
        assert_eq!(agent.value, Tree::leaf(0.0));
    }

    #[test]
    fn dynaq_geometric_backup() {
        // one state, one action, reward 1, self loop
        let spec = ProblemSpec {
            cpds: vec![vec![Tree::leaf(vec![1.0, 0.0])]],
            actions: vec!["a".into()],
            ..coin_spec(1.0)
        };
        let spec = Arc::new(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut env = Environment::with_initial(spec, InitialSet::Explicit(vec![State(vec![0])]), &mut rng);
        let cfg = DynaQConfig { q_init: 0.0, ..DynaQConfig::optimistic(1.0, 0.9) };
        let mut agent = DynaQAgent::new(1, cfg, ExplorationConfig::default());
        let s = State(vec![0]);
        agent.step(&mut env, &mut rng).unwrap();
        // one direct update plus two planning updates
        assert!((agent.q_value(&s, 0) - (1.0 + 0.9 + 0.81)).abs() < 1e-12);
        for _ in 0..30 {
            agent.step(&mut env, &mut rng).unwrap();
        }
        assert!((agent.q_value(&s, 0) - 10.0).abs() < 1e-3);
        assert_eq!(agent.model_nodes(), 1);
    }

    #[test]
    fn unvisited_pairs_keep_initial_value() {
        let agent = DynaQAgent::new(2, DynaQConfig::optimistic(1.0, 0.9), ExplorationConfig::default());
        assert!((agent.q_value(&State(vec![1]), 1) - 10.0).abs() < 1e-12);
    }
}
