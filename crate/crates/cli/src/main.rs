mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tcu_core::amortised::AmortisedConfig;
use tcu_core::analysis::{
    insolvency_table, spearman_vs_offline, win_counts, win_stats, winners, winners_markdown, write_insolvency_csv,
    write_winners_csv, UtilityMatrix,
};
use tcu_core::continuous::ContinuousConfig;
use tcu_core::discrete::{utilisation_to_gamma, DiscreteConfig, Variant};
use tcu_core::manifest::RunManifest;
use tcu_core::oracle::{check_equivalence, OracleConfig};
use tcu_core::provider::{run_amortised, run_continuous, run_discrete, ExternalProvider, ProviderKind};
use tcu_core::sweep::{
    budget_points, read_cells_csv, run_sweep, synthetic_bundle, synthetic_seed, write_outputs, CellMetrics, CellResult,
    DiscreteGrid, ScenarioParam, SweepResult, SweepSpec, DEFAULT_BUDGETS_S, DEFAULT_RHOS, DEFAULT_THRESHOLDS_MS,
};
use tcu_core::trace::{
    load_bundles, write_frozen, write_trace, Format, Profile, TraceBundle, Weighting, CORRUPTIONS, PRESETS,
};
use tcu_core::{exec, Execution, Nanos};

/// Time-contingent utility evaluation of recorded adaptation traces.
#[derive(Debug, Parser)]
#[command(name = "tcu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score traces under the discrete, continuous and amortised protocols.
    Evaluate(EvaluateArgs),
    /// Winners, rank correlation, insolvency and budget frontier from a matrix.
    Analyze(AnalyzeArgs),
    /// Generate synthetic traces from latency presets.
    Gen(GenArgs),
    /// Cross-check the discrete scheduler against the time-stepped oracle.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Adapted trace files (glob, repeatable).
    #[arg(long, required = true)]
    traces: Vec<String>,
    /// Frozen run files (glob, repeatable), matched to traces by method and corruption.
    #[arg(long)]
    frozen: Vec<String>,
    /// Discrete utilisation levels.
    #[arg(long, value_delimiter = ',', conflicts_with = "gamma_ms")]
    rho: Option<Vec<f64>>,
    /// Discrete inter-arrival times in milliseconds.
    #[arg(long, value_delimiter = ',')]
    gamma_ms: Option<Vec<String>>,
    /// Continuous thresholds in milliseconds.
    #[arg(long, value_delimiter = ',')]
    threshold_ms: Option<Vec<String>>,
    /// Amortised budgets in seconds.
    #[arg(long, value_delimiter = ',')]
    budget_s: Option<Vec<String>>,
    /// Include offline accuracy rows when explicit grids are given.
    #[arg(long)]
    offline: bool,
    #[arg(long, default_value = "buffered")]
    variant: Variant,
    #[arg(long, default_value = "per-batch")]
    weighting: Weighting,
    /// Constant frozen accuracy used when no frozen run covers the cutoff.
    #[arg(long)]
    frozen_accuracy: Option<f64>,
    /// Overrides every trace's baseline latency.
    #[arg(long)]
    lambda_ms: Option<String>,
    /// External harness command; `{trace}` is replaced by each trace path.
    #[arg(long)]
    provider_cmd: Option<String>,
    /// Per-message timeout for the external harness.
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Recorded in the run manifest.
    #[arg(long)]
    seed: Option<u64>,
    /// Run cells one at a time.
    #[arg(long)]
    sequential: bool,
    /// Flat `key = value` file mirroring these flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Matrix CSV written by `evaluate`.
    #[arg(long)]
    matrix: PathBuf,
    /// Cells CSV written by `evaluate`; enables the insolvency table and latency tie-breaks.
    #[arg(long)]
    cells: Option<PathBuf>,
    /// Method to match in the insolvency table (default: most frequent winner).
    #[arg(long)]
    competitor: Option<String>,
    /// Baseline for win statistics (default: `Standard` when present).
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Preset name, or `all`.
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 781)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One trace per corruption instead of the corruption-averaged profile.
    #[arg(long)]
    corruptions: bool,
    /// Also write frozen runs at the cutoff of each budget, in seconds.
    #[arg(long, value_delimiter = ',')]
    budget_s: Vec<String>,
    #[arg(long, default_value = "jsonl")]
    format: Format,
    #[arg(long, default_value = "traces")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Number of random traces.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Batches per trace.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Oracle tick in microseconds.
    #[arg(long, default_value_t = 100)]
    tick_us: u64,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Bad flags, values or inputs; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn expand_globs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pattern in patterns {
        let before = paths.len();
        for entry in glob::glob(pattern).map_err(|e| usage(format!("bad glob `{pattern}`: {e}")))? {
            paths.push(entry?);
        }
        if paths.len() == before {
            return Err(usage(format!("no files match `{pattern}`")));
        }
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

fn parse_list(
    values: &[String],
    parse: fn(&str) -> std::result::Result<Nanos, tcu_core::time::DecimalError>,
    flag: &str,
) -> Result<Vec<Nanos>> {
    values.iter().map(|v| parse(v).map_err(|e| usage(format!("--{flag} `{v}`: {e}")))).collect()
}

fn sweep_spec(args: &EvaluateArgs) -> Result<SweepSpec> {
    let explicit =
        args.rho.is_some() || args.gamma_ms.is_some() || args.threshold_ms.is_some() || args.budget_s.is_some();
    let discrete = match (&args.rho, &args.gamma_ms) {
        (_, Some(g)) => DiscreteGrid::Gamma(parse_list(g, Nanos::parse_ms, "gamma-ms")?),
        (Some(r), None) => DiscreteGrid::Rho(r.clone()),
        (None, None) if explicit => DiscreteGrid::Rho(Vec::new()),
        (None, None) => DiscreteGrid::Rho(DEFAULT_RHOS.to_vec()),
    };
    let thresholds = match &args.threshold_ms {
        Some(t) => parse_list(t, Nanos::parse_ms, "threshold-ms")?,
        None if explicit => Vec::new(),
        None => DEFAULT_THRESHOLDS_MS.iter().map(|&t| Nanos::from_ms(t)).collect(),
    };
    let budgets = match &args.budget_s {
        Some(b) => parse_list(b, Nanos::parse_secs, "budget-s")?,
        None if explicit => Vec::new(),
        None => DEFAULT_BUDGETS_S.iter().map(|&b| Nanos::from_secs(b)).collect(),
    };
    let lambda_override = match &args.lambda_ms {
        Some(l) => Some(Nanos::parse_ms(l).map_err(|e| usage(format!("--lambda-ms `{l}`: {e}")))?),
        None => None,
    };
    let spec = SweepSpec {
        discrete,
        thresholds,
        budgets,
        variant: args.variant,
        weighting: args.weighting,
        frozen_fallback: args.frozen_accuracy,
        lambda_override,
        include_offline: !explicit || args.offline,
        execution: execution(args.sequential),
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn provider_argv(command: &str, trace: &Path) -> Result<Vec<String>> {
    let words = shlex::split(command).ok_or_else(|| usage(format!("cannot split provider command `{command}`")))?;
    if words.is_empty() {
        return Err(usage("empty provider command"));
    }
    let path = trace.display().to_string();
    Ok(words.into_iter().map(|w| w.replace("{trace}", &path)).collect())
}

fn provider_cell(
    bundle: &TraceBundle,
    argv: &[String],
    param: &ScenarioParam,
    spec: &SweepSpec,
    timeout_ms: u64,
) -> Result<CellMetrics> {
    let trace = bundle.adapted();
    let (method, n) = (trace.method(), trace.len());
    let lambda = spec.lambda_override.unwrap_or(trace.lambda());
    let mut provider = ExternalProvider::spawn(argv, timeout_ms)?;
    Ok(match *param {
        ScenarioParam::Rho(_) | ScenarioParam::Gamma(_) => {
            let gamma = match *param {
                ScenarioParam::Rho(rho) => utilisation_to_gamma(lambda, rho)?,
                ScenarioParam::Gamma(g) => g,
                _ => unreachable!(),
            };
            let cfg = DiscreteConfig::new(gamma, spec.variant, lambda)?;
            CellMetrics::Discrete(run_discrete(&mut provider, method, n, &cfg, spec.weighting)?.report.0)
        }
        ScenarioParam::Threshold(t) => {
            let cfg = ContinuousConfig::new(t, lambda)?;
            let mut report = run_continuous(&mut provider, method, n, &cfg)?.report;
            report.per_batch = None;
            CellMetrics::Continuous(report)
        }
        ScenarioParam::Budget(b) => {
            let mut cfg = AmortisedConfig::new(b, lambda).with_weighting(spec.weighting);
            cfg.frozen_fallback = spec.frozen_fallback;
            CellMetrics::Amortised(run_amortised(&mut provider, method, n, &cfg)?.report)
        }
        ScenarioParam::Offline => bail!("offline rows are not driven through a provider"),
    })
}

fn run_provider_sweep(
    bundles: &[(PathBuf, TraceBundle)],
    spec: &SweepSpec,
    command: &str,
    timeout_ms: u64,
) -> Result<SweepResult> {
    let params: Vec<ScenarioParam> = spec.params().into_iter().filter(|p| *p != ScenarioParam::Offline).collect();
    let mut jobs = Vec::new();
    for (path, bundle) in bundles {
        let argv = provider_argv(command, path)?;
        for p in &params {
            jobs.push((bundle, argv.clone(), *p));
        }
    }
    let cells = spec.execution.map(&jobs, |(bundle, argv, param)| CellResult {
        method: bundle.adapted().method().to_string(),
        corruption: bundle.adapted().corruption().unwrap_or("-").to_string(),
        scenario: param.scenario(),
        mean_delta_ms: bundle.adapted().mean_delta_ms(),
        provider: ProviderKind::External,
        outcome: provider_cell(bundle, argv, param, spec, timeout_ms).map_err(|e| format!("{e:#}")),
    });
    Ok(SweepResult { cells })
}

fn write_manifest(dir: &Path, config: String, seed: Option<u64>, inputs: &[PathBuf], outputs: &[&str]) -> Result<()> {
    let mut manifest = RunManifest::new(config, seed);
    for p in inputs {
        manifest.add_input(p)?;
    }
    for name in outputs {
        manifest.add_output(dir, name)?;
    }
    manifest.write(dir)?;
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let spec = sweep_spec(&args)?;
    let trace_paths = expand_globs(&args.traces)?;
    let frozen_paths = expand_globs(&args.frozen)?;
    let loaded = load_bundles(&trace_paths, &frozen_paths).map_err(|e| usage(format!("{e}")))?;

    let mut load_failures = 0;
    let mut bundles = Vec::new();
    for (path, bundle) in loaded {
        match bundle {
            Ok(b) => bundles.push((path, b)),
            Err(e) => {
                load_failures += 1;
                eprintln!("error: skipping {}: {e}", path.display());
            }
        }
    }
    if let Some(lambda) = spec.lambda_override {
        for (path, b) in &bundles {
            if b.adapted().lambda() != lambda {
                eprintln!(
                    "warning: {} records lambda {} ms; using {} ms",
                    path.display(),
                    b.adapted().lambda().to_ms_string(),
                    lambda.to_ms_string()
                );
            }
        }
    }

    let result = match &args.provider_cmd {
        Some(cmd) => {
            if spec.include_offline {
                eprintln!("note: offline rows are skipped when a provider command is given");
            }
            run_provider_sweep(&bundles, &spec, cmd, args.timeout_ms)?
        }
        None => {
            let plain: Vec<TraceBundle> = bundles.iter().map(|(_, b)| b.clone()).collect();
            run_sweep(&plain, &spec)?
        }
    };

    let names = write_outputs(&result, &args.out)?;
    let mut config = spec.canonical();
    if let Some(cmd) = &args.provider_cmd {
        config.push_str(&format!("|provider={cmd}"));
    }
    let inputs: Vec<PathBuf> = trace_paths.iter().chain(&frozen_paths).cloned().collect();
    write_manifest(&args.out, config, args.seed, &inputs, &names)?;

    let failed = result.failures().count();
    for c in result.failures() {
        eprintln!("failed: {} / {} / {}: {}", c.method, c.corruption, c.scenario, c.outcome.as_ref().unwrap_err());
    }
    println!("{} cells, {failed} failed, written to {}", result.cells.len(), args.out.display());
    Ok(if failed > 0 || load_failures > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn create(dir: &Path, name: &str) -> Result<fs::File> {
    let path = dir.join(name);
    fs::File::create(&path).with_context(|| format!("creating {}", path.display()))
}

fn analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let file = fs::File::open(&args.matrix).with_context(|| format!("opening {}", args.matrix.display()))?;
    let mut matrix = UtilityMatrix::read_csv(file).map_err(|e| usage(format!("{}: {e}", args.matrix.display())))?;
    let cells = match &args.cells {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let summary = read_cells_csv(f).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            for (m, d) in &summary.mean_delta_ms {
                matrix.set_mean_delta_ms(m, *d);
            }
            Some(summary)
        }
        None => None,
    };
    fs::create_dir_all(&args.out)?;
    let mut outputs = vec!["winners.csv", "winners.md", "win_stats.csv"];

    let grid = winners(&matrix);
    write_winners_csv(&grid, create(&args.out, "winners.csv")?)?;
    fs::write(args.out.join("winners.md"), winners_markdown(&matrix, &grid))?;

    let baseline = args.baseline.clone().or_else(|| matrix.methods().iter().find(|m| *m == "Standard").cloned());
    let mut w = csv::Writer::from_writer(create(&args.out, "win_stats.csv")?);
    for m in matrix.methods() {
        w.serialize(win_stats(&matrix, m, baseline.as_deref()).map_err(|e| usage(e.to_string()))?)?;
    }
    w.flush()?;

    if matrix.has_offline() && matrix.methods().len() >= 2 {
        let mut w = csv::Writer::from_writer(create(&args.out, "spearman.csv")?);
        w.write_record(["protocol", "parameter", "per_corruption_mean", "aggregated"])?;
        for row in spearman_vs_offline(&matrix)? {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                row.scenario.protocol.to_string(),
                row.scenario.parameter.clone(),
                fmt(row.per_corruption_mean),
                fmt(row.aggregated),
            ])?;
        }
        w.flush()?;
        outputs.push("spearman.csv");
    } else {
        eprintln!("note: no offline rows; skipping rank correlation");
    }

    let points = budget_points(&matrix);
    if !points.is_empty() {
        tcu_core::amortised::write_frontier_csv(&points, create(&args.out, "frontier.csv")?)?;
        outputs.push("frontier.csv");
    }

    if let Some(summary) = &cells {
        let competitor = match &args.competitor {
            Some(c) => c.clone(),
            None => win_counts(&grid)
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|(m, _)| m)
                .ok_or_else(|| anyhow!("no winners to pick a competitor from"))?,
        };
        let rows = insolvency_table(&matrix, &summary.factors, &competitor).map_err(|e| usage(e.to_string()))?;
        write_insolvency_csv(&rows, create(&args.out, "insolvency.csv")?)?;
        outputs.push("insolvency.csv");
        let flagged = rows.iter().filter(|r| r.insolvent).count();
        println!("insolvency against {competitor}: {} cells, {flagged} need more than 100%", rows.len());
    }

    let inputs: Vec<PathBuf> = std::iter::once(args.matrix.clone()).chain(args.cells.clone()).collect();
    let config = format!("competitor={:?}|baseline={:?}", args.competitor, baseline);
    write_manifest(&args.out, config, None, &inputs, &outputs)?;
    for (m, n) in win_counts(&grid) {
        println!("{m}: {n} wins");
    }
    Ok(ExitCode::SUCCESS)
}

fn slug(s: &str) -> String {
    s.to_lowercase().replace(' ', "-")
}

fn gen(args: GenArgs) -> Result<ExitCode> {
    let budgets = parse_list(&args.budget_s, Nanos::parse_secs, "budget-s")?;
    let presets: Vec<usize> = if args.preset == "all" {
        (0..PRESETS.len()).collect()
    } else {
        let i = PRESETS.iter().position(|p| p.name == args.preset);
        vec![i.ok_or_else(|| usage(Profile::preset(&args.preset).err().map(|e| e.to_string()).unwrap_or_default()))?]
    };
    if args.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let ext = match args.format {
        Format::Jsonl => "jsonl",
        Format::Csv => "csv",
    };
    fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    for p in presets {
        let name = PRESETS[p].name;
        let cells: Vec<(Profile, u64, String)> = if args.corruptions {
            (0..CORRUPTIONS.len())
                .map(|c| {
                    Ok((
                        Profile::preset_for_corruption(name, c)?,
                        synthetic_seed(args.seed, p, c),
                        format!("{name}__{}", slug(CORRUPTIONS[c])),
                    ))
                })
                .collect::<tcu_core::Result<_>>()?
        } else {
            vec![(Profile::preset(name)?, args.seed, name.to_string())]
        };
        for (profile, seed, stem) in cells {
            let bundle = synthetic_bundle(&profile, args.n, seed, &budgets)?;
            let file = format!("{stem}.{ext}");
            write_trace(bundle.adapted(), args.out.join(&file), args.format)?;
            outputs.push(file);
            for (m, run) in bundle.frozen_runs() {
                let dir = args.out.join("frozen");
                fs::create_dir_all(&dir)?;
                let file = format!("frozen/{stem}.m{m}.{ext}");
                write_frozen(bundle.adapted(), run, args.out.join(&file), args.format)?;
                outputs.push(file);
            }
        }
    }
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    let config =
        format!("preset={}|n={}|corruptions={}|budgets={:?}", args.preset, args.n, args.corruptions, args.budget_s);
    write_manifest(&args.out, config, Some(args.seed), &[], &names)?;
    println!("wrote {} files to {}", outputs.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn oracle_check(args: OracleArgs) -> Result<ExitCode> {
    let oracle = OracleConfig::new(Nanos(args.tick_us * 1_000)).map_err(|e| usage(e.to_string()))?;
    let started = std::time::Instant::now();
    let report = check_equivalence(args.count, args.n, args.seed, oracle, execution(args.sequential));
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("{} in {:.2?}", if report.passed() { "PASS" } else { "FAIL" }, started.elapsed());
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn exit_status(err: &anyhow::Error) -> u8 {
    use tcu_core::Error as E;
    if err.is::<Usage>() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidRho(_)
            | E::InvalidGamma
            | E::InvalidThreshold { .. }
            | E::InvalidSigma(_)
            | E::UnknownPreset { .. }
            | E::ZeroTick
            | E::Config(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args_os().map(|a| a.to_string_lossy().into_owned()).collect();
    let argv = match config::expand(raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(v) = std::env::var("TEMPORA_WORKERS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = exec::configure_workers(n) {
                    eprintln!("warning: TEMPORA_WORKERS: {e}");
                }
            }
            _ => eprintln!("warning: ignoring TEMPORA_WORKERS=`{v}`"),
        }
    }
    let result = match cli.command {
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => analyze(a),
        Command::Gen(a) => gen(a),
        Command::OracleCheck(a) => oracle_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
