//! Command-line front door: scenario generation, scheduler runs, comparison
//! tables, bilevel weight evolution, prompt evolution and registry
//! inspection.
//!
//! Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime or
//! numeric error. Output files are byte-deterministic for a fixed manifest;
//! set `VERTEVO_OUT` to choose the default output directory.

mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use manifest::RunManifest;
use vertevo::bilevel::{evolve_weights, stratified_split, stratum_label, LabeledScenario, OuterGaParams};
use vertevo::ga::{ga_optimize, CostWeights, GaParams, Variant};
use vertevo::metrics::{compute_metrics, improvement_rate, MetricName, MetricVector};
use vertevo::prompt::{embed, evolve_prompts, mock_worker, Prompt, PromptRunSpec, EMBED_DIM};
use vertevo::registry::Registry;
use vertevo::rr::{rr_schedule, DEFAULT_QUANTUM};
use vertevo::scenario::{load_scenario, scenario_document, Scenario, ScenarioSpec};
use vertevo::schedule::Schedule;
use vertevo::Error;

const OUT_ENV: &str = "VERTEVO_OUT";

#[derive(Parser)]
#[command(
    name = "vertevo",
    about = "Vertiport take-off scheduling and evolutionary optimization toolkit",
    version,
    after_help = "The VERTEVO_OUT environment variable supplies the default --out directory."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file from a generation config.
    Generate(GenerateArgs),
    /// Run one scheduler on a scenario and write metrics and the schedule.
    Schedule(ScheduleArgs),
    /// Run RR plus GA variants and emit the comparison table.
    Compare(CompareArgs),
    /// Evolve cost weights over a scenario directory (stratified splits).
    Bilevel(BilevelArgs),
    /// Evolve prompts against the deterministic mock worker.
    PromptEvolve(PromptEvolveArgs),
    /// Inspect or distill a registry directory.
    Registry(RegistryArgs),
    /// Convert a trace CSV into a gnuplot-compatible data file.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generation config (scenario schema JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output scenario file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Scheduler: rr or ga.
    #[arg(long)]
    algo: String,
    /// GA fitness variant (v1..v5 or custom).
    #[arg(long, default_value = "v1")]
    variant: String,
    /// Cost-weight file overriding the variant preset (JSON).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// GA parameter file (JSON, partial fields allowed).
    #[arg(long)]
    params: Option<PathBuf>,
    /// RR service quantum in seconds.
    #[arg(long, default_value_t = DEFAULT_QUANTUM)]
    quantum: u64,
    /// GA seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated GA variants; empty for an RR-only table.
    #[arg(long, default_value = "")]
    variants: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BilevelArgs {
    /// Directory of scenario JSON files.
    #[arg(long)]
    scenarios: PathBuf,
    /// Outer GA parameter file (JSON, partial fields allowed).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Report path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PromptEvolveArgs {
    /// Task file: task spec, seed prompts, fitness params and GA controls.
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// GA seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RegistryArgs {
    /// Registry directory.
    #[arg(long)]
    dir: PathBuf,
    #[command(subcommand)]
    action: RegistryAction,
}

#[derive(Subcommand)]
enum RegistryAction {
    /// List every stored record.
    List,
    /// Exact top-k cosine query from a prompt or a stored vector.
    Query {
        #[arg(long)]
        prompt: Option<String>,
        /// JSON file holding a unit vector of dimension 256.
        #[arg(long)]
        vector_file: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-k triplets by fitness per domain with KU unions.
    Distill {
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PlotArgs {
    /// Trace CSV produced by schedule/prompt-evolve.
    #[arg(long)]
    trace: PathBuf,
    /// Output .dat file (whitespace-separated, '#' header).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// CLI failure carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    fn validation(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::Validation { .. } | Error::Schema { .. } | Error::Range(_) => 3,
            Error::Domain(_)
            | Error::Infeasible(_)
            | Error::NonConvergence { .. }
            | Error::Storage(_)
            | Error::Evaluation { .. } => 4,
        };
        CliError { code, message: e.to_string() }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Schedule(args) => cmd_schedule(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Bilevel(args) => cmd_bilevel(args),
        Command::PromptEvolve(args) => cmd_prompt_evolve(args),
        Command::Registry(args) => cmd_registry(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

/// Resolves an output directory from the flag or `VERTEVO_OUT`.
fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::usage(format!("--out is required (or set {OUT_ENV})")))
}

fn out_file(flag: Option<PathBuf>, default_name: &str) -> Result<PathBuf, CliError> {
    match flag {
        Some(p) => Ok(p),
        None => Ok(out_dir(None)?.join(default_name)),
    }
}

pub(crate) fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::validation(format!("{}: line {}: {e}", path.display(), e.line()))
    })
}

fn json_doc<T: serde::Serialize>(value: &T) -> String {
    let mut doc = serde_json::to_string_pretty(value).expect("serializable");
    doc.push('\n');
    doc
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut spec: ScenarioSpec = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let scenario = vertevo::scenario::generate_scenario(&spec)?;
    let out = out_file(args.out, "scenario.json")?;
    write_text(&out, &scenario_document(&scenario))?;
    let manifest = RunManifest::build(
        "generate",
        &[("config", args.config.display().to_string())],
        &[scenario.seed],
        &[args.config.as_path()],
        &[out.clone()],
    )?;
    manifest.write(&manifest_path(&out))?;
    println!(
        "generated scenario with {} requests -> {}",
        scenario.requests.len(),
        out.display()
    );
    Ok(())
}

fn manifest_path(primary_output: &Path) -> PathBuf {
    let stem = primary_output
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".into());
    primary_output.with_file_name(format!("{stem}.manifest.json"))
}

fn schedule_csv(scenario: &Scenario, schedule: &Schedule, waits: &[u64]) -> String {
    let mut rows: Vec<(u64, u32, String)> = schedule
        .slots
        .iter()
        .zip(waits)
        .map(|(s, &w)| {
            (
                s.start,
                s.request_id,
                format!(
                    "{},{},{},{},{},{}",
                    s.request_id, s.class_id, s.pad, s.start, s.service_end, w
                ),
            )
        })
        .collect();
    rows.sort();
    let mut out = String::from("request_id,class_id,pad,start,service_end,wait\n");
    for (_, _, row) in rows {
        out.push_str(&row);
        out.push('\n');
    }
    let _ = scenario;
    out
}

fn load_cost_weights(args: &ScheduleArgs) -> Result<CostWeights, CliError> {
    let weights = match &args.weights {
        Some(path) => read_json::<CostWeights>(path)?,
        None => CostWeights::for_variant(args.variant.parse::<Variant>()?),
    };
    weights.validate()?;
    Ok(weights)
}

fn cmd_schedule(args: ScheduleArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let dir = out_dir(args.out.clone())?;
    let mut outputs = Vec::new();
    let mut seeds = Vec::new();

    let (metrics, extra): (MetricVector, Option<String>) = match args.algo.as_str() {
        "rr" => {
            let (schedule, waits) = rr_schedule(&scenario, args.quantum)?;
            let metrics = compute_metrics(&waits, &schedule, &scenario)?;
            let csv = schedule_csv(&scenario, &schedule, &waits.waits);
            let path = dir.join("schedule.csv");
            write_text(&path, &csv)?;
            outputs.push(path);
            (metrics, None)
        }
        "ga" => {
            let weights = load_cost_weights(&args)?;
            let mut params = match &args.params {
                Some(path) => read_json::<GaParams>(path)?,
                None => GaParams::default(),
            };
            if let Some(seed) = args.seed {
                params.seed = seed;
            }
            seeds.push(params.seed);
            let outcome = ga_optimize(&scenario, &weights, &params)?;
            let path = dir.join("schedule.csv");
            write_text(&path, &schedule_csv(&scenario, &outcome.schedule, &outcome.waits.waits))?;
            outputs.push(path);
            let trace_path = dir.join("trace.csv");
            write_text(&trace_path, &outcome.trace.to_csv())?;
            outputs.push(trace_path);
            (outcome.metrics, Some(outcome.best_cost.to_string()))
        }
        other => return Err(CliError::usage(format!("unknown algorithm `{other}` (rr or ga)"))),
    };

    let metrics_path = dir.join("metrics.json");
    write_text(&metrics_path, &json_doc(&metrics))?;
    outputs.push(metrics_path);

    let mut arg_list = vec![
        ("scenario", args.scenario.display().to_string()),
        ("algo", args.algo.clone()),
        ("variant", args.variant.clone()),
        ("quantum", args.quantum.to_string()),
    ];
    if let Some(w) = &args.weights {
        arg_list.push(("weights", w.display().to_string()));
    }
    let mut inputs: Vec<&Path> = vec![args.scenario.as_path()];
    if let Some(w) = &args.weights {
        inputs.push(w.as_path());
    }
    if let Some(p) = &args.params {
        inputs.push(p.as_path());
    }
    RunManifest::build("schedule", &arg_list, &seeds, &inputs, &outputs)?
        .write(&manifest_path(&dir.join("metrics.json")))?;

    if let Some(cost) = extra {
        println!("best cost {cost}");
    }
    println!("avg {} max {} -> {}", metrics.avg_wait, metrics.max_wait, dir.display());
    Ok(())
}

fn parse_variants(list: &str) -> Result<Vec<Variant>, CliError> {
    if list.trim().is_empty() {
        return Ok(vec![]);
    }
    list.split(',')
        .map(|s| s.trim().parse::<Variant>().map_err(CliError::from))
        .collect()
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let variants = parse_variants(&args.variants)?;
    let dir = out_dir(args.out.clone())?;

    let (rr_schedule_out, rr_waits) = rr_schedule(&scenario, DEFAULT_QUANTUM)?;
    let rr_metrics = compute_metrics(&rr_waits, &rr_schedule_out, &scenario)?;

    let mut columns: Vec<(String, MetricVector)> = vec![("rr".into(), rr_metrics)];
    for variant in &variants {
        let weights = CostWeights::for_variant(*variant);
        let params = GaParams { seed: args.seed, ..Default::default() };
        let outcome = ga_optimize(&scenario, &weights, &params)?;
        columns.push((variant.label().to_string(), outcome.metrics));
    }

    // improvement rows relative to GA v1 (or the first variant when v1 is
    // absent); the RR column stays empty there
    let baseline = variants
        .iter()
        .position(|v| *v == Variant::V1)
        .or(if variants.is_empty() { None } else { Some(0) });

    let mut csv = String::from("metric");
    for (name, _) in &columns {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for metric in MetricName::ALL {
        csv.push_str(metric.label());
        for (_, m) in &columns {
            csv.push_str(&format!(",{}", metric.get(m)));
        }
        csv.push('\n');
    }
    if let Some(base_idx) = baseline {
        let base = columns[base_idx + 1].1;
        for metric in MetricName::ALL {
            csv.push_str(&format!("improvement_{}", metric.label()));
            csv.push(','); // RR column
            for (_, m) in &columns[1..] {
                match improvement_rate(&base, m, metric) {
                    Ok(rate) => csv.push_str(&format!(",{rate}")),
                    Err(_) => csv.push_str(",na"),
                }
            }
            csv.push('\n');
        }
    }

    let csv_path = dir.join("compare.csv");
    write_text(&csv_path, &csv)?;
    let json_path = dir.join("compare.json");
    let json_body: Vec<serde_json::Value> = columns
        .iter()
        .map(|(name, m)| serde_json::json!({ "column": name, "metrics": m }))
        .collect();
    write_text(&json_path, &json_doc(&json_body))?;

    RunManifest::build(
        "compare",
        &[
            ("scenario", args.scenario.display().to_string()),
            ("variants", args.variants.clone()),
        ],
        &[args.seed],
        &[args.scenario.as_path()],
        &[csv_path.clone(), json_path],
    )?
    .write(&manifest_path(&csv_path))?;

    println!("compared rr + {} variant(s) -> {}", variants.len(), dir.display());
    Ok(())
}

fn cmd_bilevel(args: BilevelArgs) -> Result<(), CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.scenarios)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.scenarios.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    if files.len() < 3 {
        return Err(CliError::usage(format!(
            "need at least 3 scenarios for a split, found {}",
            files.len()
        )));
    }
    let mut labeled = Vec::new();
    for f in &files {
        let scenario = load_scenario(f)?;
        labeled.push(LabeledScenario {
            stratum: stratum_label(&scenario),
            scenario,
        });
    }
    let split = stratified_split(labeled)?;
    let params = match &args.params {
        Some(p) => read_json::<OuterGaParams>(p)?,
        None => OuterGaParams::default(),
    };
    let outcome = evolve_weights(&split, &params)?;

    let out = out_file(args.out, "bilevel_report.json")?;
    write_text(&out, &json_doc(&outcome.report))?;
    let mut inputs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    if let Some(p) = &args.params {
        inputs.push(p.as_path());
    }
    RunManifest::build(
        "bilevel",
        &[("scenarios", args.scenarios.display().to_string())],
        &[params.seed],
        &inputs,
        &[out.clone()],
    )?
    .write(&manifest_path(&out))?;
    println!(
        "evolved weights over {} scenarios ({} strata on test) -> {}",
        files.len(),
        outcome.report.test_panels.len(),
        out.display()
    );
    Ok(())
}

fn cmd_prompt_evolve(args: PromptEvolveArgs) -> Result<(), CliError> {
    let mut run: PromptRunSpec = read_json(&args.task)?;
    if let Some(seed) = args.seed {
        run.ga.seed = seed;
    }
    let seed_pop: Vec<Prompt> = run
        .seed_prompts
        .iter()
        .map(|t| Prompt::parse(t))
        .collect::<Result<_, _>>()?;
    let worker = mock_worker(&run.task)?;
    let outcome = evolve_prompts(&run.task, &seed_pop, &run.params, &run.ga, &worker)?;

    let dir = out_dir(args.out)?;
    let trace_path = dir.join("trace.csv");
    write_text(&trace_path, &outcome.trace.to_csv())?;
    let result = serde_json::json!({
        "best_prompt": outcome.best.text(),
        "best_id": outcome.best.id,
        "best_fitness": outcome.best_fitness,
        "ku": outcome.kw.ku,
        "ki": outcome.kw.ki,
        "final_population": outcome.final_pop.iter().map(|p| p.text()).collect::<Vec<_>>(),
    });
    let result_path = dir.join("result.json");
    write_text(&result_path, &json_doc(&result))?;

    RunManifest::build(
        "prompt-evolve",
        &[("task", args.task.display().to_string())],
        &[run.ga.seed],
        &[args.task.as_path()],
        &[trace_path, result_path.clone()],
    )?
    .write(&manifest_path(&result_path))?;
    println!(
        "best fitness {} with |KU|={} -> {}",
        outcome.best_fitness,
        outcome.kw.ku.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_registry(args: RegistryArgs) -> Result<(), CliError> {
    match args.action {
        RegistryAction::List => {
            let reg = open_registry_readonly(&args.dir)?;
            for (id, t) in reg.triplets() {
                println!("{id}  triplet  fitness={}  user={}", t.fitness, t.user_id);
            }
            for (id, s) in reg.signatures() {
                println!("{id}  signature  user={}  domain={}  rho={}", s.user, s.domain, s.rho);
            }
            println!("{} record(s)", reg.len());
            Ok(())
        }
        RegistryAction::Query { prompt, vector_file, k, out } => {
            let reg = open_registry_readonly(&args.dir)?;
            let vector = match (prompt, vector_file) {
                (Some(text), None) => embed(&Prompt::parse(&text)?),
                (None, Some(path)) => {
                    let v: Vec<f64> = read_json(&path)?;
                    if v.len() != EMBED_DIM {
                        return Err(CliError::validation(format!(
                            "vector must have dimension {EMBED_DIM}, got {}",
                            v.len()
                        )));
                    }
                    v
                }
                _ => return Err(CliError::usage("provide exactly one of --prompt or --vector-file")),
            };
            let hits = reg.query_similar(&vector, k)?;
            for hit in &hits {
                println!("{}  {}  score={}", hit.id, hit.kind, hit.score);
            }
            if let Some(path) = out {
                write_text(&path, &json_doc(&hits))?;
            }
            Ok(())
        }
        RegistryAction::Distill { top_k, out } => {
            let reg = open_registry_readonly(&args.dir)?;
            let patterns = reg.distill(top_k)?;
            let doc = json_doc(&patterns);
            match out {
                Some(path) => write_text(&path, &doc)?,
                None => print!("{doc}"),
            }
            Ok(())
        }
    }
}

fn open_registry_readonly(dir: &Path) -> Result<Registry, CliError> {
    if !dir.exists() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(Registry::open(dir)?)
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.trace)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", args.trace.display())))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            out.push_str("# ");
            out.push_str(&line.replace(',', " "));
        } else {
            out.push_str(&line.replace(',', " "));
        }
        out.push('\n');
    }
    let path = out_file(args.out, "trace.dat")?;
    write_text(&path, &out)?;
    println!("wrote {}", path.display());
    Ok(())
}
