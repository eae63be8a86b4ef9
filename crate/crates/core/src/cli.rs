//! `inferometer` command-line interface.
//!
//! Commands only communicate through files. Exit codes: 0 on success, 1 on
//! I/O failure, 2 on validation or configuration failure.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{self, Metric, ModelInputs, RankingConfig, ReportRow};
use crate::estimator::{self, DEFAULT_OUTPUT_GRID, DEFAULT_TRIALS};
use crate::flops;
use crate::registry::{approx_param_count, HardwareProfile, ModelArchitecture, Registry};
use crate::runtime_model::{reference_params, RuntimeModelParams, Variant, DEFAULT_PROMPT_GRID};
use crate::simulator::{self, SimulatedProvider};

#[derive(Debug)]
pub enum Failure {
    /// Reading or writing a file failed.
    Io(anyhow::Error),
    /// Bad flags, bad input data, or an estimator/analysis error.
    Invalid(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Io(e) | Failure::Invalid(e) => e,
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn io_err(e: io::Error, what: impl std::fmt::Display) -> Failure {
    Failure::Io(anyhow::Error::new(e).context(what.to_string()))
}

#[derive(Debug, Parser)]
#[command(name = "inferometer", version, about = "Inference runtime, cost, energy and FLOP estimation for Transformer LLMs")]
pub struct Cli {
    /// Registry JSON; the shipped registry is used when unset.
    #[arg(long, global = true, env = "INFEROMETER_REGISTRY")]
    pub registry: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate profile samples from a simulated black-box provider.
    Simulate(SimulateArgs),
    /// Fit runtime parameters from profile samples.
    Fit(FitArgs),
    /// Predict runtime, cost, energy and FLOPs for one query.
    Predict(PredictArgs),
    /// FLOP counts for one query.
    Flops(FlopsArgs),
    /// Aggregate a query log into an efficiency report.
    Analyze(AnalyzeArgs),
    /// Compare one model under two fitted stacks.
    CompareStacks(CompareArgs),
    /// Minimum runtime versus number of parallel queries.
    LoadSweep(LoadSweepArgs),
    /// Check raw >= denoised >= idealized on profiled samples.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// accuracy / metric
    F1,
    /// accuracy / log(metric)
    F2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Idealized,
    Denoised,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Idealized => Variant::Idealized,
            VariantArg::Denoised => Variant::Denoised,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model whose reference parameters serve as hidden truth.
    #[arg(long, required_unless_present = "truth")]
    pub model: Option<String>,
    /// Explicit truth parameters (JSON), instead of --model.
    #[arg(long, conflicts_with = "model")]
    pub truth: Option<PathBuf>,
    /// Fixed API overhead added to the truth, in seconds (ignored with --truth).
    #[arg(long, default_value_t = 0.05)]
    pub overhead: f64,
    #[arg(long, default_value = "low-noise")]
    pub preset: String,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: u32,
    #[arg(long, value_delimiter = ',')]
    pub grid_p: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_o: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1)]
    pub parallelism: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: String,
    #[arg(long, value_delimiter = ',')]
    pub grid_p: Option<Vec<u64>>,
    #[arg(long, value_enum, default_value = "denoised")]
    pub variant: VariantArg,
    #[arg(long, default_value = "")]
    pub stack_label: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Diagnostics output; defaults to <out>.diagnostics.json.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: String,
    /// Fitted parameters (one object or an array); shipped reference
    /// parameters when unset.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Which parameter set to use; when unset, the only set for the model in
    /// --params, else idealized.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Hardware profile id; the model's default serving profile when unset.
    #[arg(long)]
    pub hardware: Option<String>,
    /// Accelerator count override for --hardware.
    #[arg(long)]
    pub accelerators: Option<u64>,
    #[arg(long, short = 'p')]
    pub prompt_tokens: u64,
    #[arg(long, short = 'o')]
    pub output_tokens: u64,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, short = 'p')]
    pub prompt_tokens: u64,
    #[arg(long, short = 'o', default_value_t = 1)]
    pub output_tokens: u64,
    /// Also print operator-level breakdowns of the prompt pass and the last
    /// generation pass.
    #[arg(long)]
    pub breakdown: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Query log (JSONL).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Fitted parameter files (objects or arrays). Shipped reference
    /// parameters are used when none are given.
    #[arg(long, num_args = 1..)]
    pub params: Vec<PathBuf>,
    /// Models to include; defaults to every model with idealized parameters.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Hardware profile override for every model (keeps each model's
    /// accelerator count).
    #[arg(long)]
    pub hardware: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Objective used to order the printed ranking.
    #[arg(long, value_enum, default_value = "f1")]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = std::f64::consts::E)]
    pub log_base: f64,
    /// Metric the objectives divide by.
    #[arg(long, default_value = "idealized_runtime")]
    pub metric: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub params_a: PathBuf,
    #[arg(long)]
    pub params_b: PathBuf,
    #[arg(long)]
    pub hardware_a: Option<String>,
    #[arg(long)]
    pub hardware_b: Option<String>,
    #[arg(long)]
    pub accelerators_a: Option<u64>,
    #[arg(long)]
    pub accelerators_b: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Per-query table output; only the summary is printed when unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LoadSweepArgs {
    #[arg(long, required_unless_present = "truth")]
    pub model: Option<String>,
    #[arg(long, conflicts_with = "model")]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub overhead: f64,
    #[arg(long, default_value = "low-noise")]
    pub preset: String,
    #[arg(long, short = 'p', default_value_t = 512)]
    pub prompt_tokens: u64,
    #[arg(long, value_delimiter = ',')]
    pub grid_o: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub parallelism: Vec<u32>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Raw profile samples (JSONL).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub denoised: PathBuf,
    #[arg(long)]
    pub idealized: PathBuf,
    /// Model to select when a params file holds several parameter sets.
    #[arg(long)]
    pub model: Option<String>,
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            failure.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CmdResult {
    let registry = match &cli.registry {
        Some(path) => Registry::from_path(path).map_err(|e| match e {
            crate::registry::RegistryError::Io { .. } => Failure::Io(e.into()),
            other => invalid(other),
        })?,
        None => Registry::shipped(),
    };
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&registry, args, out),
        Command::Fit(args) => cmd_fit(&registry, args, out),
        Command::Predict(args) => cmd_predict(&registry, args, out),
        Command::Flops(args) => cmd_flops(&registry, args, out),
        Command::Analyze(args) => cmd_analyze(&registry, args, out),
        Command::CompareStacks(args) => cmd_compare_stacks(&registry, args, out),
        Command::LoadSweep(args) => cmd_load_sweep(args, out),
        Command::Audit(args) => cmd_audit(args, out),
    }
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) -> CmdResult {
    writeln!(out, "{line}").map_err(|e| io_err(e, "writing to stdout"))
}

fn open(path: &Path) -> CmdResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(e, format!("opening {}", path.display())))
}

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(e, format!("creating {}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CmdResult {
    w.flush().map_err(|e| io_err(e, format!("writing {}", path.display())))
}

/// Reads a params file holding either one object or an array.
fn read_params(path: &Path) -> CmdResult<Vec<RuntimeModelParams>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(e, format!("reading {}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(invalid)?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|p| vec![p])
    };
    parsed.with_context(|| format!("parsing {}", path.display())).map_err(invalid)
}

fn model<'a>(registry: &'a Registry, id: &str) -> CmdResult<&'a ModelArchitecture> {
    registry.model(id).map_err(invalid)
}

fn hardware_for(
    registry: &Registry,
    arch: &ModelArchitecture,
    hardware: Option<&str>,
    accelerators: Option<u64>,
) -> CmdResult<HardwareProfile> {
    let profile = match hardware {
        Some(id) => registry
            .hardware(id)
            .map_err(invalid)?
            .with_accelerators(arch.default_serving.accelerator_count),
        None => registry.default_hardware(arch).map_err(invalid)?,
    };
    match accelerators {
        Some(0) => Err(invalid(anyhow!("accelerator count must be >= 1"))),
        Some(n) => Ok(profile.with_accelerators(n)),
        None => Ok(profile),
    }
}

fn reference_truth(model_id: &str, overhead: f64) -> CmdResult<RuntimeModelParams> {
    let ideal = reference_params()
        .into_iter()
        .find(|p| p.model_id() == model_id && p.variant() == Variant::Idealized)
        .ok_or_else(|| invalid(anyhow!("no reference parameters for model '{model_id}'; pass --truth")))?;
    RuntimeModelParams::new(
        model_id,
        Variant::Denoised,
        "simulated",
        ideal.knots().to_vec(),
        ideal.per_token_slope(),
        overhead,
    )
    .map_err(invalid)
}

fn resolve_truth(model: Option<&str>, truth: Option<&Path>, overhead: f64) -> CmdResult<RuntimeModelParams> {
    match (model, truth) {
        (_, Some(path)) => {
            let mut all = read_params(path)?;
            if all.len() != 1 {
                return Err(invalid(anyhow!("{} must hold exactly one parameter set", path.display())));
            }
            Ok(all.remove(0))
        }
        (Some(id), None) => reference_truth(id, overhead),
        (None, None) => Err(invalid(anyhow!("either --model or --truth is required"))),
    }
}

fn check_grid(name: &str, grid: &[u64]) -> CmdResult {
    if grid.is_empty() || grid.contains(&0) {
        return Err(invalid(anyhow!("{name} must be a nonempty list of values >= 1")));
    }
    Ok(())
}

fn cmd_simulate(registry: &Registry, args: SimulateArgs, out: &mut dyn Write) -> CmdResult {
    if let Some(id) = &args.model {
        model(registry, id)?;
    }
    let truth = resolve_truth(args.model.as_deref(), args.truth.as_deref(), args.overhead)?;
    let noise = simulator::preset(&args.preset, args.seed).map_err(invalid)?;
    let grid_p = args.grid_p.unwrap_or_else(|| DEFAULT_PROMPT_GRID.to_vec());
    let grid_o = args.grid_o.unwrap_or_else(|| DEFAULT_OUTPUT_GRID.to_vec());
    check_grid("--grid-p", &grid_p)?;
    check_grid("--grid-o", &grid_o)?;
    if args.trials == 0 || args.parallelism == 0 {
        return Err(invalid(anyhow!("--trials and --parallelism must be >= 1")));
    }
    let mut provider = SimulatedProvider::new(truth, noise).map_err(invalid)?;
    let samples = provider.run_trials(&grid_p, &grid_o, args.trials, args.parallelism);
    let mut w = create(&args.out)?;
    estimator::write_samples_jsonl(&mut w, &samples).map_err(|e| io_err(e, format!("writing {}", args.out.display())))?;
    finish(w, &args.out)?;
    say(
        out,
        format!("wrote {} samples to {} (seed {})", samples.len(), args.out.display(), args.seed),
    )
}

fn cmd_fit(registry: &Registry, args: FitArgs, out: &mut dyn Write) -> CmdResult {
    model(registry, &args.model)?;
    let samples = estimator::read_samples_jsonl(open(&args.input)?).map_err(|e| match e {
        estimator::EstimatorError::Io(io) => io_err(io, format!("reading {}", args.input.display())),
        other => invalid(other),
    })?;
    let grid = args.grid_p.unwrap_or_else(|| DEFAULT_PROMPT_GRID.to_vec());
    let (params, diag) =
        estimator::fit_runtime_model(&samples, &grid, args.variant.into(), &args.model, &args.stack_label)
            .map_err(invalid)?;
    for w in &diag.warnings {
        eprintln!("warning: {w}");
    }

    let mut f = create(&args.out)?;
    f.write_all(params.to_json().as_bytes())
        .map_err(|e| io_err(e, format!("writing {}", args.out.display())))?;
    finish(f, &args.out)?;
    let diag_path = args.diagnostics.unwrap_or_else(|| args.out.with_extension("diagnostics.json"));
    let mut f = create(&diag_path)?;
    let mut text = serde_json::to_string_pretty(&diag).expect("diagnostics serialize");
    text.push('\n');
    f.write_all(text.as_bytes())
        .map_err(|e| io_err(e, format!("writing {}", diag_path.display())))?;
    finish(f, &diag_path)?;

    say(out, format!("model {} ({}), {} samples", args.model, params.variant(), diag.sample_count))?;
    for (k, (p, r2)) in params.knots().iter().zip(&diag.per_prompt_r2) {
        say(out, format!("  p={p:<6} encoding_time={:.6} s  R2={r2:.3}", k.encoding_time))?;
    }
    say(out, format!("  g={:.6} s/token  R2={:.3}", params.per_token_slope(), diag.slope_r2))?;
    say(out, format!("  max residual {:.6} s", diag.residual_max))
}

fn select_params(
    all: Vec<RuntimeModelParams>,
    model_id: &str,
    variant: Variant,
) -> CmdResult<RuntimeModelParams> {
    all.into_iter()
        .find(|p| p.model_id() == model_id && p.variant() == variant)
        .ok_or_else(|| invalid(anyhow!("no {variant} parameters for model '{model_id}'")))
}

fn cmd_predict(registry: &Registry, args: PredictArgs, out: &mut dyn Write) -> CmdResult {
    let arch = model(registry, &args.model)?;
    let (p, o) = (args.prompt_tokens, args.output_tokens);
    let total_flops = flops::query_total_flops(arch, p, o).map_err(invalid)?;
    let all = match &args.params {
        Some(path) => read_params(path)?,
        None => reference_params(),
    };
    let variant = match args.variant {
        Some(v) => v.into(),
        None => {
            let mut found = all.iter().filter(|p| p.model_id() == args.model);
            match (found.next(), found.next()) {
                (Some(only), None) => only.variant(),
                _ => Variant::Idealized,
            }
        }
    };
    let params = select_params(all, &args.model, variant)?;
    let hw = hardware_for(registry, arch, args.hardware.as_deref(), args.accelerators)?;
    let t = params.evaluate(p, o);

    say(out, format!("model: {} ({}{})", arch.id, params.variant(), stack_suffix(&params)))?;
    say(out, format!("prompt_tokens: {p}"))?;
    say(out, format!("output_tokens: {o}"))?;
    say(out, format!("runtime_s: {t:.6}"))?;
    if params.variant() == Variant::Idealized {
        say(out, format!("hardware: {} x{}", hw.id, hw.accelerator_count))?;
        say(out, format!("cost: {:.8}", analysis::idealized_cost(t, &hw)))?;
        say(out, format!("energy_j: {:.4}", analysis::idealized_energy(t, &hw)))?;
    } else {
        say(out, "cost: n/a (denoised runtime has unknown hardware)")?;
        say(out, "energy_j: n/a (denoised runtime has unknown hardware)")?;
    }
    say(out, format!("flops: {total_flops}"))
}

fn stack_suffix(params: &RuntimeModelParams) -> String {
    if params.stack_label().is_empty() {
        String::new()
    } else {
        format!(", {}", params.stack_label())
    }
}

fn cmd_flops(registry: &Registry, args: FlopsArgs, out: &mut dyn Write) -> CmdResult {
    let arch = model(registry, &args.model)?;
    let (p, o) = (args.prompt_tokens, args.output_tokens);
    let total = flops::query_total_flops(arch, p, o).map_err(invalid)?;
    let (h, n, l) = (arch.hidden_size, arch.num_heads, arch.num_layers);
    say(out, format!("model: {}", arch.id))?;
    say(out, format!("prompt_encoding: {}", flops::prompt_encoding_flops(1, p, h, l, true)))?;
    say(out, format!("prompt_encoding_linear: {}", flops::prompt_encoding_flops(1, p, h, l, false)))?;
    say(out, format!("generation_passes: {}", o - 1))?;
    say(out, format!("total: {total}"))?;
    say(out, format!("approx_param_count: {}", approx_param_count(arch)))?;
    if args.breakdown {
        let enc = flops::operator_breakdown_training(1, p, h, n, l).map_err(invalid)?;
        say(out, format!("prompt_breakdown: {}", serde_json::to_string(&enc).expect("serialize")))?;
        if o > 1 {
            let last = flops::operator_breakdown_generation(1, p + o - 2, h, n, l).map_err(invalid)?;
            say(out, format!("last_generation_breakdown: {}", serde_json::to_string(&last).expect("serialize")))?;
        }
    }
    Ok(())
}

fn read_queries(path: &Path) -> CmdResult<Vec<analysis::QueryRecord>> {
    analysis::read_queries_jsonl(open(path)?).map_err(|e| match e {
        analysis::AnalysisError::Io(io) => io_err(io, format!("reading {}", path.display())),
        other => invalid(other),
    })
}

fn cmd_analyze(registry: &Registry, args: AnalyzeArgs, out: &mut dyn Write) -> CmdResult {
    let queries = read_queries(&args.input)?;
    if queries.is_empty() {
        return Err(invalid(analysis::AnalysisError::NoQueries));
    }
    let metric: Metric = args.metric.parse().map_err(invalid)?;
    if !(args.log_base > 0.0 && args.log_base != 1.0) {
        return Err(invalid(anyhow!("--log-base must be > 0 and != 1")));
    }

    let mut params = Vec::new();
    if args.params.is_empty() {
        params = reference_params();
    }
    for path in &args.params {
        params.extend(read_params(path)?);
    }
    let find = |id: &str, v: Variant| params.iter().rev().find(|p| p.model_id() == id && p.variant() == v).cloned();

    let model_ids: Vec<String> = match args.models {
        Some(ids) => ids,
        None => {
            let mut ids: Vec<String> = Vec::new();
            for p in params.iter().filter(|p| p.variant() == Variant::Idealized) {
                if !ids.iter().any(|i| i == p.model_id()) {
                    ids.push(p.model_id().to_string());
                }
            }
            ids
        }
    };
    let mut models = Vec::new();
    for id in &model_ids {
        let arch = model(registry, id)?;
        let Some(idealized) = find(id, Variant::Idealized) else {
            eprintln!("warning: skipping '{id}': {}", analysis::AnalysisError::MissingParams(id.clone()));
            continue;
        };
        models.push(ModelInputs {
            hardware: hardware_for(registry, arch, args.hardware.as_deref(), None)?,
            arch: arch.clone(),
            idealized,
            denoised: find(id, Variant::Denoised),
        });
    }
    if models.is_empty() {
        return Err(invalid(anyhow!("no listed model has idealized parameters")));
    }

    let ranking = RankingConfig {
        metric,
        log_base: args.log_base,
    };
    let reports = analysis::aggregate(&queries, &models, ranking).map_err(invalid)?;
    let mut w = create(&args.out)?;
    let written = match args.format {
        Format::Csv => analysis::write_report_csv(&mut w, &reports),
        Format::Json => analysis::write_report_json(&mut w, &reports),
    };
    written.map_err(|e| match e {
        analysis::AnalysisError::Io(io) => io_err(io, format!("writing {}", args.out.display())),
        other => Failure::Io(anyhow!(other).context(format!("writing {}", args.out.display()))),
    })?;
    finish(w, &args.out)?;

    for report in &reports {
        say(out, format!("scenario {} ({} models)", report.scenario, report.rows.len()))?;
        for id in &report.excluded_models {
            say(out, format!("  {id}: every query exceeds the context length"))?;
        }
        let mut rows: Vec<&ReportRow> = report.rows.iter().collect();
        let rank_of = |r: &ReportRow| match args.objective {
            ObjectiveArg::F1 => r.f1_rank,
            ObjectiveArg::F2 => r.f2_rank,
        };
        rows.sort_by_key(|r| (rank_of(r).unwrap_or(usize::MAX), r.model_id.clone()));
        for r in rows {
            let frontier: Vec<&str> = Metric::ALL
                .into_iter()
                .filter(|m| r.frontier(*m) == Some(true))
                .map(Metric::name)
                .collect();
            say(
                out,
                format!(
                    "  {:<3} {:<16} acc={} t_ideal={:.4}s cost={:.6} energy={:.1}J frontier=[{}]",
                    rank_of(r).map_or("-".to_string(), |k| format!("#{k}")),
                    r.model_id,
                    r.mean_accuracy.map_or("n/a".to_string(), |a| format!("{a:.3}")),
                    r.mean_idealized_runtime,
                    r.mean_idealized_cost,
                    r.mean_idealized_energy,
                    frontier.join(",")
                ),
            )?;
        }
    }
    say(out, format!("wrote {}", args.out.display()))
}

fn cmd_compare_stacks(registry: &Registry, args: CompareArgs, out: &mut dyn Write) -> CmdResult {
    let arch = model(registry, &args.model)?;
    let queries = read_queries(&args.input)?;
    let pick = |path: &Path| -> CmdResult<RuntimeModelParams> {
        let mut all = read_params(path)?;
        let idx = all
            .iter()
            .position(|p| p.model_id() == args.model)
            .unwrap_or(0);
        if all.is_empty() {
            return Err(invalid(anyhow!("{} holds no parameters", path.display())));
        }
        Ok(all.swap_remove(idx))
    };
    let params_a = pick(&args.params_a)?;
    let params_b = pick(&args.params_b)?;
    for p in [&params_a, &params_b] {
        if p.model_id() != args.model {
            return Err(invalid(analysis::AnalysisError::ModelMismatch(
                args.model.clone(),
                p.model_id().to_string(),
            )));
        }
    }
    let hw_a = hardware_for(registry, arch, args.hardware_a.as_deref(), args.accelerators_a)?;
    let hw_b = hardware_for(registry, arch, args.hardware_b.as_deref(), args.accelerators_b)?;
    let cmp = analysis::compare_stacks(&queries, arch, (&params_a, &hw_a), (&params_b, &hw_b)).map_err(invalid)?;

    if let Some(path) = &args.out {
        let mut w = create(path)?;
        let result = match args.format {
            Format::Csv => {
                let mut cw = csv::Writer::from_writer(&mut w);
                let mut r: Result<(), csv::Error> = Ok(());
                for row in &cmp.rows {
                    r = r.and(cw.serialize(row));
                }
                r.and(cw.flush().map_err(csv::Error::from))
                    .map_err(|e| io_err(io::Error::other(e), format!("writing {}", path.display())))
            }
            Format::Json => serde_json::to_writer_pretty(&mut w, &cmp)
                .map_err(io::Error::other)
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|e| io_err(e, format!("writing {}", path.display()))),
        };
        result?;
        finish(w, path)?;
    }
    say(out, format!("model {} over {} queries ({} skipped)", cmp.model_id, cmp.rows.len(), cmp.skipped_queries))?;
    say(out, format!("  A: {}  mean runtime {:.6} s  mean cost {:.8}", cmp.stack_a, cmp.mean_runtime_a, cmp.mean_cost_a))?;
    say(out, format!("  B: {}  mean runtime {:.6} s  mean cost {:.8}", cmp.stack_b, cmp.mean_runtime_b, cmp.mean_cost_b))?;
    say(out, format!("  runtime ratio B/A: {:.4}", cmp.runtime_ratio))?;
    say(out, format!("  cost ratio B/A: {:.4}", cmp.cost_ratio))?;
    say(out, format!("  verdict: B is {}", cmp.verdict))
}

fn cmd_load_sweep(args: LoadSweepArgs, out: &mut dyn Write) -> CmdResult {
    let truth = resolve_truth(args.model.as_deref(), args.truth.as_deref(), args.overhead)?;
    let noise = simulator::preset(&args.preset, args.seed).map_err(invalid)?;
    let grid_o = args.grid_o.unwrap_or_else(|| DEFAULT_OUTPUT_GRID.to_vec());
    check_grid("--grid-o", &grid_o)?;
    if args.parallelism.is_empty() || args.parallelism.contains(&0) || args.trials == 0 {
        return Err(invalid(anyhow!("--parallelism levels and --trials must be >= 1")));
    }
    let mut provider = SimulatedProvider::new(truth, noise).map_err(invalid)?;
    let rows = provider.load_sweep(args.prompt_tokens, &grid_o, &args.parallelism, args.trials);
    let mut w = create(&args.out)?;
    {
        let mut cw = csv::Writer::from_writer(&mut w);
        for row in &rows {
            cw.serialize(row)
                .map_err(|e| io_err(io::Error::other(e), format!("writing {}", args.out.display())))?;
        }
        cw.flush().map_err(|e| io_err(e, format!("writing {}", args.out.display())))?;
    }
    finish(w, &args.out)?;
    say(out, format!("wrote {} rows to {} (seed {})", rows.len(), args.out.display(), args.seed))
}

fn cmd_audit(args: AuditArgs, out: &mut dyn Write) -> CmdResult {
    let samples = estimator::read_samples_jsonl(open(&args.input)?).map_err(invalid)?;
    let one = |path: &Path, variant: Variant| -> CmdResult<RuntimeModelParams> {
        let mut all: Vec<RuntimeModelParams> = read_params(path)?
            .into_iter()
            .filter(|p| p.variant() == variant)
            .filter(|p| args.model.as_deref().is_none_or(|m| p.model_id() == m))
            .collect();
        if all.len() != 1 {
            return Err(invalid(anyhow!(
                "{} must hold exactly one matching {variant} parameter set (found {}); use --model",
                path.display(),
                all.len()
            )));
        }
        Ok(all.remove(0))
    };
    let denoised = one(&args.denoised, Variant::Denoised)?;
    let idealized = one(&args.idealized, Variant::Idealized)?;
    let audit = analysis::inequality_audit(&samples, &denoised, &idealized).map_err(invalid)?;
    say(out, format!("samples: {}", audit.samples))?;
    say(out, format!("raw >= denoised: {:.4}", audit.fraction_raw_ge_denoised))?;
    say(out, format!("denoised >= idealized: {:.4}", audit.fraction_denoised_ge_idealized))
}
