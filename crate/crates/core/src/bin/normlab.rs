use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use normlab::backend::BackendConfig;
use normlab::certify::{
    certify_convention_sensitivity, certify_reproduction, certify_sanction_sensitivity, classify_normative, ActionFrame,
    ConventionOptions, NormOptions, SanctionOptions,
};
use normlab::experiments::{critical_fraction, run_experiment, ExperimentConfig, ExperimentKind};
use normlab::lmae::{Engine, EngineOptions, Scenario, Verbosity};
use normlab::prefs::{detect_cycles, elicit_ranking, elicit_relation, polarization_experiment, ranking_discrepancies, PolarizationConfig};
use normlab::seq::{ActorId, Sequence, Valence};

#[derive(Parser)]
#[command(name = "normlab", version, about = "Simulate and certify conventions, sanctions and norms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace as JSON Lines.
    Run(RunArgs),
    /// Certify a property of one actor (or a population for `norm`).
    Certify(CertifyArgs),
    /// Elicit a preference relation from a backend under a context.
    Elicit(ElicitArgs),
    /// Run a scripted experiment and write long-format metrics.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ticks: Option<usize>,
    #[arg(long, value_enum, default_value_t = VerbosityArg::Actions)]
    verbosity: VerbosityArg,
    /// Comma-separated actor positions giving the in-tick stepping order.
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<usize>>,
    #[arg(long)]
    parallel: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerbosityArg {
    Actions,
    Assemblies,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum CertifyKind {
    Convention,
    Sanction,
    Reproduction,
    Norm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ValenceArg {
    Negative,
    Positive,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(value_enum)]
    kind: CertifyKind,
    #[arg(long)]
    scenario: PathBuf,
    /// Actor to certify; not used by `norm`, which takes every actor.
    #[arg(long)]
    actor: Option<String>,
    /// Frame JSON; for `norm`, a frame or a list of sanctioning frames.
    #[arg(long)]
    frame: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1.0")]
    f_grid: Vec<f64>,
    /// Overrides the frame's ε.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Reproduction threshold r.
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    /// Generic-scope threshold for `norm`.
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long)]
    sanctioner: Option<String>,
    #[arg(long)]
    signal: Option<String>,
    #[arg(long, value_enum, default_value_t = ValenceArg::Negative)]
    valence: ValenceArg,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    contextual: bool,
}

#[derive(Args)]
struct ElicitArgs {
    #[arg(long)]
    context_file: PathBuf,
    #[arg(long, value_delimiter = ',')]
    items: Vec<String>,
    #[arg(long)]
    symmetrize: bool,
    /// Backend config JSON; the weighted precedent backend when absent.
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    max_cycle: usize,
    /// Writes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    kind: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

type Failure = Box<dyn std::error::Error>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => write(p, text.as_bytes()),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let scenario = Scenario::load(&args.scenario)?;
    let verbosity = match args.verbosity {
        VerbosityArg::Actions => Verbosity::Actions,
        VerbosityArg::Assemblies => Verbosity::Assemblies,
        VerbosityArg::Full => Verbosity::Full,
    };
    let options = EngineOptions { verbosity, order: args.order, parallel: args.parallel, ticks: args.ticks };
    let (trace, _) = Engine::new(&scenario, args.seed, options)?.run();
    write(&args.out, trace.to_jsonl().as_bytes())?;
    if let Some(e) = &trace.error {
        return Err(format!("episode stopped at tick {}: {}", e.tick, e.error).into());
    }
    Ok(())
}

fn frames(path: &Path) -> Result<Vec<ActionFrame>, Failure> {
    let value: serde_json::Value = serde_json::from_str(&read(path)?)?;
    Ok(match value {
        serde_json::Value::Array(_) => serde_json::from_value(value)?,
        v => vec![serde_json::from_value(v)?],
    })
}

fn certify(args: CertifyArgs) -> Result<(), Failure> {
    let scenario = Scenario::load(&args.scenario)?;
    let actors = scenario.build_actors(&scenario.build_backends()?)?;
    let mut frames = frames(&args.frame)?;
    if let Some(eps) = args.epsilon {
        for f in &mut frames {
            f.epsilon = eps;
        }
    }
    let out = Some(args.out.as_path());
    if let CertifyKind::Norm = args.kind {
        let opts = NormOptions { generic_threshold: args.threshold, r: args.r, seed: args.seed, ..NormOptions::new(args.f_grid) };
        return write_json(out, &classify_normative(&actors, &frames, &opts)?);
    }
    let [frame] = frames.as_slice() else {
        return Err("expected exactly one frame".into());
    };
    let id = args.actor.ok_or("--actor is required")?;
    let actor = actors.iter().find(|a| a.id.as_str() == id).ok_or_else(|| format!("no actor {id:?} in scenario"))?;
    let opts = ConventionOptions::new(&args.f_grid, args.seed);
    match args.kind {
        CertifyKind::Convention => write_json(out, &certify_convention_sensitivity(actor, frame, &opts)?),
        CertifyKind::Reproduction => write_json(out, &certify_reproduction(actor, frame, args.r, &opts)?),
        CertifyKind::Sanction => {
            let opts = SanctionOptions {
                sanctioner: ActorId::new(args.sanctioner.ok_or("--sanctioner is required")?)?,
                signal: Sequence::new(args.signal.ok_or("--signal is required")?),
                valence: match args.valence {
                    ValenceArg::Negative => Valence::Negative,
                    ValenceArg::Positive => Valence::Positive,
                },
                count: args.count,
                contextual: args.contextual,
            };
            write_json(out, &certify_sanction_sensitivity(actor, frame, &opts, args.seed)?)
        }
        CertifyKind::Norm => unreachable!(),
    }
}

#[derive(Serialize)]
struct Elicitation {
    relation: normlab::prefs::PreferenceRelation,
    cycles: Vec<Vec<String>>,
    ranking: Vec<(String, f64)>,
    discrepancies: Vec<(String, String)>,
}

fn elicit(args: ElicitArgs) -> Result<(), Failure> {
    let config = match &args.backend {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => BackendConfig::weighted(),
    };
    let backend = config.build()?;
    let u = Sequence::new(read(&args.context_file)?);
    let relation = elicit_relation(backend.as_ref(), &u, &args.items, args.symmetrize)?;
    let ranking = elicit_ranking(backend.as_ref(), &u, &args.items)?;
    let result = Elicitation {
        cycles: detect_cycles(&relation, args.max_cycle),
        discrepancies: ranking_discrepancies(&relation, &ranking),
        relation,
        ranking,
    };
    write_json(args.out.as_deref(), &result)
}

fn experiment(args: ExperimentArgs) -> Result<(), Failure> {
    let kind: ExperimentKind = args.kind.parse()?;
    let mut value = match &args.config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => serde_json::json!({}),
    };
    let obj = value.as_object_mut().ok_or("experiment config must be a JSON object")?;
    match obj.get("kind") {
        None => {
            obj.insert("kind".into(), serde_json::to_value(kind)?);
        }
        Some(k) if k != &serde_json::to_value(kind)? => {
            return Err(format!("config is for {k}, not {}", kind.label()).into());
        }
        Some(_) => {}
    }
    let config = ExperimentConfig::from_json(&value.to_string())?;
    if kind == ExperimentKind::Polarization {
        return polarization_csv(&config, &args.out);
    }
    let table = run_experiment(&config, args.workers)?;
    write(&args.out, table.to_csv()?.as_bytes())?;
    if kind == ExperimentKind::TippingPoint {
        for &seed in &config.seeds {
            match critical_fraction(&table, "treatment", seed) {
                Some(q) => eprintln!("seed {seed}: critical fraction {q}"),
                None => eprintln!("seed {seed}: no swept fraction tips"),
            }
        }
    }
    Ok(())
}

fn polarization_csv(config: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "mode", "trial", "item", "probability", "bimodality"])?;
    for &seed in &config.seeds {
        let pc = PolarizationConfig { seed, ..config.polarization.clone() };
        for r in polarization_experiment(&pc)? {
            w.write_record([
                seed.to_string(),
                r.mode,
                r.trial.to_string(),
                r.item,
                r.probability.to_string(),
                r.bimodality.to_string(),
            ])?;
        }
    }
    write(out, &w.into_inner().map_err(|e| e.to_string())?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Certify(a) => certify(a),
        Command::Elicit(a) => elicit(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("normlab: {e}");
            ExitCode::FAILURE
        }
    }
}
