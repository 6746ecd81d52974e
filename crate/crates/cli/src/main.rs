use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use spiti_core::experiment::{
    learn_from, random_trajectory, resolve_problem, run_experiment, run_generalization, run_tau_sweep,
    write_generalization_csv, write_online_csv, write_sweep_csv, AgentKind, ExperimentConfig, DEFAULT_TAUS,
};
use spiti_core::metrics::{model_accuracy, policy_relative_error, reference_value};
use spiti_core::model::{model_to_spec, ProblemSpec};
use spiti_core::planner::{svi_solve, PlannerConfig};
use spiti_core::problem_file::{load_problem, parse_solution, problem_to_json, solution_to_json, Solution};
use spiti_core::{Error, Result};

#[derive(Parser)]
#[command(name = "spiti", about = "Structure learning and structured planning for factored MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Online runs of an agent; one CSV row per step.
    Run(RunArgs),
    /// Solve a problem offline and dump its value and policy trees.
    Solve(SolveArgs),
    /// Score a solution dump (xi) or a learned model file (qchi2).
    Eval(EvalArgs),
    /// Learn a model from a random trajectory and write it as a problem file.
    Learn(LearnArgs),
    /// Model size and policy error across chi-square thresholds.
    SweepTau(SweepArgs),
    /// Model accuracy on noisy problems of growing size.
    Generalize(GeneralizeArgs),
}

#[derive(Args)]
struct Common {
    /// Problem file or builtin:{linear:N|expon:N|noisy:N:THETA|coffee|process}
    #[arg(long)]
    problem: String,
    /// Discount used for planning and evaluation; defaults to the problem's.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    span_tolerance: f64,
    #[arg(long, default_value_t = 1e-10)]
    sup_tolerance: f64,
}

impl Common {
    fn load(&self) -> Result<ProblemSpec> {
        let mut spec = resolve_problem(&self.problem)?;
        if let Some(g) = self.gamma {
            spec.discount = g;
            spec.validate()?;
        }
        Ok(spec)
    }

    fn planner(&self, spec: &ProblemSpec) -> PlannerConfig {
        PlannerConfig::for_spec(spec).with_tolerances(self.span_tolerance, self.sup_tolerance)
    }
}

#[derive(Args)]
struct Schedule {
    #[arg(long, default_value_t = 7.88)]
    tau: f64,
    #[arg(long, default_value_t = 4000)]
    steps: usize,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    schedule: Schedule,
    #[arg(long, default_value = "spiti")]
    agent: String,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma_report: f64,
    /// Comma-separated subset of xi,qchi2.
    #[arg(long, default_value = "")]
    metrics: String,
    #[arg(long, default_value_t = 100)]
    metric_every: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Solution dump for xi, learned problem file for qchi2.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    metric: String,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 7.88)]
    tau: f64,
    #[arg(long, default_value_t = 4000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    schedule: Schedule,
    /// Comma-separated thresholds; defaults to a grid of common quantiles.
    #[arg(long)]
    taus: Option<String>,
    /// Skip the policy error column.
    #[arg(long)]
    no_xi: bool,
}

#[derive(Args)]
struct GeneralizeArgs {
    #[command(flatten)]
    schedule: Schedule,
    #[arg(long, default_value = "4,8,12,16,20")]
    sizes: String,
    #[arg(long, default_value_t = 0.2)]
    theta: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Validation(format!("bad {what} {s:?}")))
        })
        .collect()
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn experiment(common: &Common, schedule: &Schedule, agent: AgentKind) -> Result<ExperimentConfig> {
    let spec = common.load()?;
    let planner = common.planner(&spec);
    let mut config = ExperimentConfig::new(spec, agent);
    config.tau = schedule.tau;
    config.steps = schedule.steps;
    config.runs = schedule.runs;
    config.seed = schedule.seed;
    config.planner = planner;
    Ok(config)
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = experiment(&args.common, &args.schedule, args.agent.parse()?)?;
    config.epsilon = args.epsilon;
    config.gamma_report = args.gamma_report;
    config.metric_every = args.metric_every;
    for m in parse_list::<String>(&args.metrics, "metric")? {
        match m.as_str() {
            "xi" => config.xi = true,
            "qchi2" => config.q_chi2 = true,
            _ => return Err(Error::Validation(format!("unknown metric {m:?}"))),
        }
    }
    let rows = run_experiment(&config)?;
    write_online_csv(output(&args.schedule.out)?, &rows)
}

fn solve(args: SolveArgs) -> Result<()> {
    let spec = args.common.load()?;
    let solved = svi_solve(&spec, &args.common.planner(&spec))?;
    let dump = solution_to_json(&spec, &Solution { value: solved.value, policy: solved.policy });
    let mut out = output(&args.out)?;
    serde_json::to_writer_pretty(&mut out, &dump).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let spec = args.common.load()?;
    let value = match args.metric.as_str() {
        "xi" => {
            let solution = parse_solution(&std::fs::read_to_string(&args.model)?, &spec)?;
            let planner = args.common.planner(&spec);
            let (v_star, _) = reference_value(&spec, &planner)?;
            policy_relative_error(&spec, &solution.policy, &v_star, &planner)?
        }
        "qchi2" => model_accuracy(&spec, &load_problem(&args.model)?, 1)?.q_overall,
        other => return Err(Error::Validation(format!("unknown metric {other:?}"))),
    };
    println!("{value}");
    Ok(())
}

fn learn(args: LearnArgs) -> Result<()> {
    let spec = Arc::new(args.common.load()?);
    let trajectory = random_trajectory(&spec, args.steps, args.seed)?;
    let model = learn_from(&spec, &trajectory, args.tau)?;
    let mut learned = model_to_spec(&model);
    learned.name = format!("{}_learned", spec.name);
    learned.initial = spec.initial.clone();
    let mut out = output(&args.out)?;
    serde_json::to_writer_pretty(&mut out, &problem_to_json(&learned)).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = experiment(&args.common, &args.schedule, AgentKind::Random)?;
    config.xi = !args.no_xi;
    let taus = match &args.taus {
        Some(t) => parse_list(t, "threshold")?,
        None => DEFAULT_TAUS.to_vec(),
    };
    let rows = run_tau_sweep(&config, &taus)?;
    write_sweep_csv(output(&args.schedule.out)?, &rows)
}

fn generalize(args: GeneralizeArgs) -> Result<()> {
    let sizes: Vec<usize> = parse_list(&args.sizes, "size")?;
    // the problem is rebuilt per size; this one only carries the settings
    let mut config = ExperimentConfig::new(spiti_core::generators::gen_noisy(4, args.theta)?, AgentKind::Random);
    config.gamma = args.gamma;
    config.planner = PlannerConfig::new(args.gamma);
    config.tau = args.schedule.tau;
    config.steps = args.schedule.steps;
    config.runs = args.schedule.runs;
    config.seed = args.schedule.seed;
    let rows = run_generalization(&sizes, args.theta, &config)?;
    write_generalization_csv(output(&args.schedule.out)?, &rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Solve(a) => solve(a),
        Command::Eval(a) => eval(a),
        Command::Learn(a) => learn(a),
        Command::SweepTau(a) => sweep(a),
        Command::Generalize(a) => generalize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
