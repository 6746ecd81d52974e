//! Experiment protocols and their CSV output: online runs, τ sweeps over a
//! shared random trajectory, and model accuracy across problem sizes.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agents::{
    run_online, Agent, DynaQAgent, DynaQConfig, ExplorationConfig, OptimalAgent, RandomAgent, SpitiAgent,
};
use crate::error::{Error, Result};
use crate::generators;
use crate::induction::InductionConfig;
use crate::metrics::{model_accuracy, policy_relative_error, reference_value};
use crate::model::{initial_states, model_to_spec, Environment, InitialSet, LearnedModel, ProblemSpec, Transition};
use crate::planner::{svi_solve, PlannerConfig, ValueTree};
use crate::problem_file::load_problem;

/// Default τ grid of the sweep protocol.
pub const DEFAULT_TAUS: [f64; 7] = [0.5, 1.0, 2.0, 3.84, 6.63, 7.88, 10.8];

/// Resolves `builtin:linear:N`, `builtin:expon:N`, `builtin:noisy:N:THETA`,
/// `builtin:coffee`, `builtin:process`, or a problem file path.
pub fn resolve_problem(source: &str) -> Result<ProblemSpec> {
    let Some(rest) = source.strip_prefix("builtin:") else {
        return load_problem(Path::new(source));
    };
    let parts: Vec<&str> = rest.split(':').collect();
    let num = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Validation(format!("bad size {s:?} in {source:?}")))
    };
    match parts.as_slice() {
        ["linear", n] => generators::gen_linear(num(n)?),
        ["expon", n] => generators::gen_expon(num(n)?),
        ["noisy", n, theta] => {
            let theta = theta
                .parse()
                .map_err(|_| Error::Validation(format!("bad noise level {theta:?} in {source:?}")))?;
            generators::gen_noisy(num(n)?, theta)
        }
        ["coffee"] => Ok(generators::coffee_robot()),
        ["process"] => Ok(generators::process_planning()),
        _ => Err(Error::Validation(format!("unknown builtin problem {source:?}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentKind {
    Spiti,
    DynaQ,
    Random,
    Optimal,
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spiti" => Ok(AgentKind::Spiti),
            "dynaq" => Ok(AgentKind::DynaQ),
            "random" => Ok(AgentKind::Random),
            "optimal" => Ok(AgentKind::Optimal),
            _ => Err(Error::Validation(format!("unknown agent {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub problem: Arc<ProblemSpec>,
    pub agent: AgentKind,
    pub tau: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub gamma_report: f64,
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    pub xi: bool,
    pub q_chi2: bool,
    /// Metrics are computed every this many steps and at the last step.
    pub metric_every: usize,
    pub q_dof: usize,
    pub planner: PlannerConfig,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, agent: AgentKind) -> Self {
        let gamma = problem.discount;
        ExperimentConfig {
            problem: Arc::new(problem),
            agent,
            tau: crate::induction::DEFAULT_TAU,
            epsilon: 0.1,
            gamma,
            gamma_report: 0.99,
            steps: 4000,
            runs: 20,
            seed: 0,
            xi: false,
            q_chi2: false,
            metric_every: 100,
            q_dof: 1,
            planner: PlannerConfig::new(gamma).with_tolerances(1e-8, 1e-10),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.steps == 0 || self.metric_every == 0 {
            return Err(Error::Validation("runs, steps and metric cadence must be at least 1".into()));
        }
        self.exploration().validate()?;
        self.planner.validate()
    }

    fn exploration(&self) -> ExplorationConfig {
        ExplorationConfig { epsilon: self.epsilon, gamma: self.gamma, gamma_report: self.gamma_report }
    }

    /// The problem as evaluated: its discount replaced by the configured γ.
    fn evaluated_problem(&self) -> ProblemSpec {
        let mut spec = (*self.problem).clone();
        spec.discount = self.gamma;
        spec
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

/// One line of an online-run CSV. Metric cells are empty when not sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub run: usize,
    pub t: usize,
    pub action: Option<usize>,
    pub reward: Option<f64>,
    pub r_disc: Option<f64>,
    pub model_nodes: Option<usize>,
    pub xi: Option<f64>,
    pub q_chi2: Option<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

pub const ONLINE_HEADER: [&str; 10] =
    ["run", "t", "action", "reward", "r_disc", "model_nodes", "xi", "q_chi2", "seed", "error"];

fn cell<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl CsvRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.run.to_string(),
            self.t.to_string(),
            cell(&self.action),
            cell(&self.reward),
            cell(&self.r_disc),
            cell(&self.model_nodes),
            cell(&self.xi),
            cell(&self.q_chi2),
            self.seed.to_string(),
            cell(&self.error),
        ]
    }
}

/// Shared, run-independent inputs of the metrics.
struct MetricContext {
    spec: ProblemSpec,
    /// Computed once; failing here is a configuration error, not a replica one.
    initial: InitialSet,
    v_star: Option<ValueTree>,
    optimal: Option<crate::planner::PolicyTree>,
}

fn metric_context(config: &ExperimentConfig) -> Result<MetricContext> {
    let spec = config.evaluated_problem();
    let need_reference = config.xi || config.agent == AgentKind::Optimal;
    let (v_star, optimal) = if need_reference {
        let (v, p) = reference_value(&spec, &config.planner)?;
        (Some(v), Some(p))
    } else {
        (None, None)
    };
    let initial = initial_states(&spec)?;
    Ok(MetricContext { spec, initial, v_star, optimal })
}

fn make_agent(config: &ExperimentConfig, ctx: &MetricContext) -> Box<dyn Agent> {
    let spec = &ctx.spec;
    match config.agent {
        AgentKind::Spiti => {
            let mut agent = SpitiAgent::new(spec, InductionConfig::with_tau(config.tau), config.exploration());
            agent.planner = PlannerConfig { gamma: config.gamma, ..config.planner };
            Box::new(agent)
        }
        AgentKind::DynaQ => Box::new(DynaQAgent::new(
            spec.num_actions(),
            DynaQConfig::optimistic(spec.r_max(), config.gamma),
            config.exploration(),
        )),
        AgentKind::Random => Box::new(RandomAgent { num_actions: spec.num_actions() }),
        AgentKind::Optimal => Box::new(OptimalAgent { policy: ctx.optimal.clone().expect("reference solved") }),
    }
}

fn learned_spec(agent: &dyn Agent) -> Option<ProblemSpec> {
    agent.learned_model().map(model_to_spec)
}

fn run_replica(config: &ExperimentConfig, ctx: &MetricContext, run: usize) -> Vec<CsvRow> {
    let seed = config.run_seed(run);
    let mut rows = Vec::with_capacity(config.steps);
    let outcome = (|| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Environment::with_initial(Arc::new(ctx.spec.clone()), ctx.initial.clone(), &mut rng);
        let mut agent = make_agent(config, ctx);
        run_online(agent.as_mut(), &mut env, config.steps, config.gamma_report, &mut rng, |rec, agent| {
            let sample = (rec.t + 1) % config.metric_every == 0 || rec.t + 1 == config.steps;
            let mut xi = None;
            let mut q = None;
            if sample && config.xi {
                if let (Some(policy), Some(v_star)) = (agent.policy(), &ctx.v_star) {
                    xi = Some(policy_relative_error(&ctx.spec, &policy, v_star, &config.planner)?);
                }
            }
            if sample && config.q_chi2 {
                if let Some(learned) = learned_spec(agent) {
                    q = Some(model_accuracy(&ctx.spec, &learned, config.q_dof)?.q_overall);
                }
            }
            rows.push(CsvRow {
                run,
                t: rec.t,
                action: Some(rec.action),
                reward: Some(rec.reward),
                r_disc: Some(rec.r_disc),
                model_nodes: Some(rec.model_nodes),
                xi,
                q_chi2: q,
                seed,
                error: None,
            });
            Ok(())
        })
    })();
    if let Err(e) = outcome {
        rows.push(CsvRow {
            run,
            t: rows.len(),
            action: None,
            reward: None,
            r_disc: None,
            model_nodes: None,
            xi: None,
            q_chi2: None,
            seed,
            error: Some(e.to_string()),
        });
    }
    rows
}

/// Online protocol: `runs` seeded replicas in parallel, rows in (run, t)
/// order. A failing replica ends with an error row; the others proceed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<CsvRow>> {
    config.validate()?;
    let ctx = metric_context(config)?;
    let per_run: Vec<Vec<CsvRow>> = (0..config.runs).into_par_iter().map(|r| run_replica(config, &ctx, r)).collect();
    Ok(per_run.into_iter().flatten().collect())
}

fn write_rows(out: impl Write, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_online_csv(out: impl Write, rows: &[CsvRow]) -> Result<()> {
    write_rows(out, &ONLINE_HEADER, rows.iter().map(CsvRow::fields))
}

/// A random-action trajectory of `steps` steps.
pub fn random_trajectory(spec: &Arc<ProblemSpec>, steps: usize, seed: u64) -> Result<Vec<Transition>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Environment::new(spec.clone(), &mut rng)?;
    let mut agent = RandomAgent { num_actions: spec.num_actions() };
    (0..steps).map(|_| agent.step(&mut env, &mut rng)).collect()
}

pub fn trajectory_hash(trajectory: &[Transition]) -> u64 {
    let mut h = DefaultHasher::new();
    for tr in trajectory {
        tr.state.hash(&mut h);
        tr.action.hash(&mut h);
        tr.reward.to_bits().hash(&mut h);
        tr.next.hash(&mut h);
    }
    h.finish()
}

/// A model learned from a whole trajectory.
pub fn learn_from(spec: &ProblemSpec, trajectory: &[Transition], tau: f64) -> Result<LearnedModel> {
    let mut model = LearnedModel::new(spec, InductionConfig::with_tau(tau));
    for tr in trajectory {
        model.observe(tr)?;
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub run: usize,
    pub tau: f64,
    pub model_nodes: usize,
    pub xi: Option<f64>,
    pub trajectory_hash: u64,
    pub seed: u64,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: [&str; 7] = ["run", "tau", "model_nodes", "xi", "trajectory_hash", "seed", "error"];

/// τ-sweep protocol: per replica one random trajectory, one model per τ
/// learned from it, and the ξ of the model's SVI policy.
pub fn run_tau_sweep(config: &ExperimentConfig, taus: &[f64]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if taus.is_empty() {
        return Err(Error::Validation("empty τ grid".into()));
    }
    let spec = Arc::new(config.evaluated_problem());
    let v_star = if config.xi { Some(reference_value(&spec, &config.planner)?.0) } else { None };
    let per_run: Vec<Vec<SweepRow>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let seed = config.run_seed(run);
            let trajectory = match random_trajectory(&spec, config.steps, seed) {
                Ok(t) => t,
                Err(e) => {
                    return vec![SweepRow {
                        run,
                        tau: taus[0],
                        model_nodes: 0,
                        xi: None,
                        trajectory_hash: 0,
                        seed,
                        error: Some(e.to_string()),
                    }]
                }
            };
            let hash = trajectory_hash(&trajectory);
            taus.iter()
                .map(|&tau| {
                    let outcome = (|| -> Result<(usize, Option<f64>)> {
                        let model = learn_from(&spec, &trajectory, tau)?;
                        let xi = match &v_star {
                            None => None,
                            Some(v) => {
                                let learned = model_to_spec(&model);
                                let policy = svi_solve(&learned, &config.planner)?.policy;
                                Some(policy_relative_error(&spec, &policy, v, &config.planner)?)
                            }
                        };
                        Ok((model.node_count(), xi))
                    })();
                    let (model_nodes, xi, error) = match outcome {
                        Ok((n, xi)) => (n, xi, None),
                        Err(e) => (0, None, Some(e.to_string())),
                    };
                    SweepRow { run, tau, model_nodes, xi, trajectory_hash: hash, seed, error }
                })
                .collect()
        })
        .collect();
    Ok(per_run.into_iter().flatten().collect())
}

pub fn write_sweep_csv(out: impl Write, rows: &[SweepRow]) -> Result<()> {
    write_rows(
        out,
        &SWEEP_HEADER,
        rows.iter().map(|r| {
            vec![
                r.run.to_string(),
                r.tau.to_string(),
                r.model_nodes.to_string(),
                cell(&r.xi),
                r.trajectory_hash.to_string(),
                r.seed.to_string(),
                cell(&r.error),
            ]
        }),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationRow {
    pub run: usize,
    pub problem: String,
    pub n: usize,
    pub state_action_pairs: u128,
    pub q_chi2: Option<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

pub const GENERALIZATION_HEADER: [&str; 7] = ["run", "problem", "n", "state_action_pairs", "q_chi2", "seed", "error"];

/// Generalization protocol: for each size, `runs` random trajectories on
/// Noisy(n, θ) and the accuracy of the model learned from each.
pub fn run_generalization(sizes: &[usize], theta: f64, config: &ExperimentConfig) -> Result<Vec<GeneralizationRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &n in sizes {
        let mut spec = generators::gen_noisy(n, theta)?;
        spec.discount = config.gamma;
        let spec = Arc::new(spec);
        let pairs = spec.state_action_pairs();
        let per_run: Vec<GeneralizationRow> = (0..config.runs)
            .into_par_iter()
            .map(|run| {
                let seed = config.run_seed(run);
                let outcome = (|| -> Result<f64> {
                    let trajectory = random_trajectory(&spec, config.steps, seed)?;
                    let model = learn_from(&spec, &trajectory, config.tau)?;
                    Ok(model_accuracy(&spec, &model_to_spec(&model), config.q_dof)?.q_overall)
                })();
                let (q_chi2, error) = match outcome {
                    Ok(q) => (Some(q), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                GeneralizationRow { run, problem: spec.name.clone(), n, state_action_pairs: pairs, q_chi2, seed, error }
            })
            .collect();
        rows.extend(per_run);
    }
    Ok(rows)
}

pub fn write_generalization_csv(out: impl Write, rows: &[GeneralizationRow]) -> Result<()> {
    write_rows(
        out,
        &GENERALIZATION_HEADER,
        rows.iter().map(|r| {
            vec![
                r.run.to_string(),
                r.problem.clone(),
                r.n.to_string(),
                r.state_action_pairs.to_string(),
                cell(&r.q_chi2),
                r.seed.to_string(),
                cell(&r.error),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names() {
        assert_eq!(resolve_problem("builtin:linear:4").unwrap().num_vars(), 4);
        assert_eq!(resolve_problem("builtin:noisy:8:0.2").unwrap().num_actions(), 8);
        assert!(matches!(resolve_problem("builtin:nope"), Err(Error::Validation(_))));
    }

    #[test]
    fn header_is_stable() {
        let mut buf = Vec::new();
        write_online_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "run,t,action,reward,r_disc,model_nodes,xi,q_chi2,seed,error\n");
    }

    #[test]
    fn same_trajectory_for_every_tau() {
        let mut config = ExperimentConfig::new(generators::gen_noisy(4, 0.2).unwrap(), AgentKind::Random);
        config.steps = 300;
        config.runs = 2;
        let rows = run_tau_sweep(&config, &[0.5, 7.88]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].trajectory_hash, rows[1].trajectory_hash);
        assert_ne!(rows[0].trajectory_hash, rows[2].trajectory_hash);
    }
}
