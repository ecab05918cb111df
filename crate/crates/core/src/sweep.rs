//! Scenario sweeps over many traces, with CSV and Markdown output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amortised::{
    amortised_utility, cutoff, overheads, write_frontier_csv, AmortisedConfig, AmortisedReport, BudgetPoint,
};
use crate::analysis::{Protocol, Scenario, UtilityMatrix};
use crate::continuous::{continuous_utility_records, ContinuousConfig, ContinuousReport};
use crate::discrete::{discrete_utility, simulate, utilisation_to_gamma, DiscreteConfig, DiscreteReport, Variant};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::provider::ProviderKind;
use crate::time::Nanos;
use crate::trace::{accuracy_mean, gen_frozen, gen_synthetic, Profile, TraceBundle, Weighting, CORRUPTIONS, PRESETS};

pub const DEFAULT_RHOS: [f64; 5] = [1.00, 0.70, 0.50, 0.35, 0.25];
pub const DEFAULT_THRESHOLDS_MS: [u64; 5] = [50, 100, 200, 400, 1000];
pub const DEFAULT_BUDGETS_S: [u64; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiscreteGrid {
    /// Utilisation levels; `gamma = lambda / rho` per trace.
    Rho(Vec<f64>),
    Gamma(Vec<Nanos>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub discrete: DiscreteGrid,
    pub thresholds: Vec<Nanos>,
    pub budgets: Vec<Nanos>,
    pub variant: Variant,
    pub weighting: Weighting,
    pub frozen_fallback: Option<f64>,
    /// Replaces every trace's own lambda.
    pub lambda_override: Option<Nanos>,
    pub include_offline: bool,
    pub execution: Execution,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            discrete: DiscreteGrid::Rho(DEFAULT_RHOS.to_vec()),
            thresholds: DEFAULT_THRESHOLDS_MS.iter().map(|&t| Nanos::from_ms(t)).collect(),
            budgets: DEFAULT_BUDGETS_S.iter().map(|&b| Nanos::from_secs(b)).collect(),
            variant: Variant::Buffered,
            weighting: Weighting::PerBatch,
            frozen_fallback: None,
            lambda_override: None,
            include_offline: true,
            execution: Execution::Parallel,
        }
    }
}

/// One point of a protocol grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScenarioParam {
    Offline,
    Rho(f64),
    Gamma(Nanos),
    Threshold(Nanos),
    Budget(Nanos),
}

impl ScenarioParam {
    pub fn scenario(&self) -> Scenario {
        match *self {
            ScenarioParam::Offline => Scenario::offline(),
            ScenarioParam::Rho(r) => Scenario::new(Protocol::Discrete, format!("rho={r:.2}")),
            ScenarioParam::Gamma(g) => Scenario::new(Protocol::Discrete, format!("gamma_ms={}", g.to_ms_string())),
            ScenarioParam::Threshold(t) => Scenario::new(Protocol::Continuous, format!("T_ms={}", t.to_ms_string())),
            ScenarioParam::Budget(b) => Scenario::new(Protocol::Amortised, format!("B_s={}", b.to_secs_string())),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.discrete {
            DiscreteGrid::Rho(rhos) => {
                if let Some(r) = rhos.iter().find(|r| !(r.is_finite() && **r > 0.0 && **r <= 1.0)) {
                    return Err(Error::InvalidRho(*r));
                }
            }
            DiscreteGrid::Gamma(gs) => {
                if gs.contains(&Nanos::ZERO) {
                    return Err(Error::InvalidGamma);
                }
            }
        }
        if let Some(f) = self.frozen_fallback {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("frozen accuracy {f} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<ScenarioParam> {
        let mut out = Vec::new();
        if self.include_offline {
            out.push(ScenarioParam::Offline);
        }
        match &self.discrete {
            DiscreteGrid::Rho(rs) => out.extend(rs.iter().map(|&r| ScenarioParam::Rho(r))),
            DiscreteGrid::Gamma(gs) => out.extend(gs.iter().map(|&g| ScenarioParam::Gamma(g))),
        }
        out.extend(self.thresholds.iter().map(|&t| ScenarioParam::Threshold(t)));
        out.extend(self.budgets.iter().map(|&b| ScenarioParam::Budget(b)));
        out
    }

    /// Canonical text form used for hashing.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("spec serialises")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum CellMetrics {
    Offline { accuracy: f64 },
    Discrete(DiscreteReport),
    Continuous(ContinuousReport),
    Amortised(AmortisedReport),
}

impl CellMetrics {
    pub fn utility(&self) -> f64 {
        match self {
            CellMetrics::Offline { accuracy } => *accuracy,
            CellMetrics::Discrete(r) => r.utility,
            CellMetrics::Continuous(r) => r.utility,
            CellMetrics::Amortised(r) => r.utility,
        }
    }

    /// Scaling factor used for insolvency thresholds.
    pub fn factor(&self) -> Option<f64> {
        match self {
            CellMetrics::Discrete(r) => Some(r.availability),
            CellMetrics::Continuous(r) => Some(r.mean_responsiveness),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub corruption: String,
    pub scenario: Scenario,
    pub mean_delta_ms: f64,
    /// Source of the per-batch data.
    pub provider: ProviderKind,
    pub outcome: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }

    pub fn matrix(&self) -> UtilityMatrix {
        let mut m = UtilityMatrix::new();
        for c in &self.cells {
            m.insert(&c.method, c.scenario.clone(), &c.corruption, c.outcome.as_ref().ok().map(CellMetrics::utility));
            m.set_mean_delta_ms(&c.method, c.mean_delta_ms);
        }
        m
    }
}

fn corruption_label(bundle: &TraceBundle) -> String {
    bundle.adapted().corruption().unwrap_or("-").to_string()
}

/// Evaluates one cell.
pub fn evaluate_cell(bundle: &TraceBundle, param: &ScenarioParam, spec: &SweepSpec) -> Result<CellMetrics> {
    let trace = bundle.adapted();
    let lambda = spec.lambda_override.unwrap_or(trace.lambda());
    Ok(match *param {
        ScenarioParam::Offline => CellMetrics::Offline { accuracy: accuracy_mean(trace.records(), spec.weighting)? },
        ScenarioParam::Rho(rho) => {
            let cfg = DiscreteConfig::new(utilisation_to_gamma(lambda, rho)?, spec.variant, lambda)?;
            CellMetrics::Discrete(discrete_utility(&simulate(trace, &cfg), trace, spec.weighting)?)
        }
        ScenarioParam::Gamma(gamma) => {
            let cfg = DiscreteConfig::new(gamma, spec.variant, lambda)?;
            CellMetrics::Discrete(discrete_utility(&simulate(trace, &cfg), trace, spec.weighting)?)
        }
        ScenarioParam::Threshold(t) => {
            let cfg = ContinuousConfig::new(t, lambda)?;
            CellMetrics::Continuous(continuous_utility_records(trace.records(), &cfg, false)?)
        }
        ScenarioParam::Budget(b) => {
            let mut cfg = AmortisedConfig::new(b, lambda).with_weighting(spec.weighting);
            cfg.frozen_fallback = spec.frozen_fallback;
            CellMetrics::Amortised(amortised_utility(bundle, &cfg)?)
        }
    })
}

/// Runs every (trace, scenario) cell. Failures are isolated per cell and
/// output order is independent of the execution mode.
pub fn run_sweep(bundles: &[TraceBundle], spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let params = spec.params();
    let jobs: Vec<(usize, ScenarioParam)> =
        (0..bundles.len()).flat_map(|b| params.iter().map(move |p| (b, *p))).collect();
    let cells = spec.execution.map(&jobs, |(b, param)| {
        let bundle = &bundles[*b];
        CellResult {
            method: bundle.adapted().method().to_string(),
            corruption: corruption_label(bundle),
            scenario: param.scenario(),
            mean_delta_ms: bundle.adapted().mean_delta_ms(),
            provider: ProviderKind::Replay,
            outcome: evaluate_cell(bundle, param, spec).map_err(|e| e.to_string()),
        }
    });
    Ok(SweepResult { cells })
}

/// Seed of one preset/corruption cell of a synthetic corpus.
pub fn synthetic_seed(seed: u64, preset: usize, corruption: usize) -> u64 {
    seed.wrapping_add((preset * CORRUPTIONS.len() + corruption) as u64)
}

/// One synthetic trace with a frozen run at the exact cutoff of each budget.
pub fn synthetic_bundle(profile: &Profile, n: usize, seed: u64, budgets: &[Nanos]) -> Result<TraceBundle> {
    let trace = gen_synthetic(profile, n, seed)?;
    let c = overheads(&trace);
    let mut bundle = TraceBundle::new(trace);
    for &b in budgets {
        let m = cutoff(&c, b);
        if m < n && !bundle.frozen_runs().contains_key(&m) {
            bundle.insert_frozen(gen_frozen(profile, n, m, seed)?)?;
        }
    }
    Ok(bundle)
}

/// Synthetic bundles for every preset and corruption.
pub fn synthetic_bundles(n: usize, seed: u64, budgets: &[Nanos], exec: Execution) -> Result<Vec<TraceBundle>> {
    let jobs: Vec<(usize, usize)> =
        (0..PRESETS.len()).flat_map(|p| (0..CORRUPTIONS.len()).map(move |c| (p, c))).collect();
    exec.map(&jobs, |&(p, c)| {
        let profile = Profile::preset_for_corruption(PRESETS[p].name, c)?;
        synthetic_bundle(&profile, n, synthetic_seed(seed, p, c), budgets)
    })
    .into_iter()
    .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-cell decomposition terms at full precision.
pub fn write_cells_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "corruption",
        "protocol",
        "parameter",
        "status",
        "utility",
        "availability",
        "served_accuracy",
        "served_count",
        "mean_accuracy",
        "mean_responsiveness",
        "covariance",
        "alignment",
        "cutoff_m",
        "adapted_fraction",
        "adapt_accuracy",
        "frozen_accuracy",
        "budget_spent_s",
        "frozen_source",
        "mean_delta_ms",
        "provider",
        "detail",
    ])?;
    for c in &result.cells {
        let mut row = vec![String::new(); 22];
        row[20] = c.provider.to_string();
        row[0] = c.method.clone();
        row[1] = c.corruption.clone();
        row[2] = c.scenario.protocol.to_string();
        row[3] = c.scenario.parameter.clone();
        row[19] = c.mean_delta_ms.to_string();
        match &c.outcome {
            Err(e) => {
                row[4] = "failed".into();
                row[21] = e.clone();
            }
            Ok(m) => {
                row[4] = "ok".into();
                row[5] = m.utility().to_string();
                match m {
                    CellMetrics::Offline { .. } => {}
                    CellMetrics::Discrete(r) => {
                        row[6] = r.availability.to_string();
                        row[7] = opt(r.served_accuracy);
                        row[8] = r.served_count.to_string();
                    }
                    CellMetrics::Continuous(r) => {
                        row[9] = r.mean_accuracy.to_string();
                        row[10] = r.mean_responsiveness.to_string();
                        row[11] = r.covariance.to_string();
                        row[12] = opt(r.alignment);
                    }
                    CellMetrics::Amortised(r) => {
                        row[13] = r.cutoff_m.to_string();
                        row[14] = r.adapted_fraction.to_string();
                        row[15] = opt(r.adapt_accuracy);
                        row[16] = opt(r.frozen_accuracy);
                        row[17] = r.budget_spent.to_secs_string();
                        row[18] = r.frozen_source.to_string();
                        row[21] = r.warnings.join("; ");
                    }
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Factors and latencies recovered from a cells CSV for analysis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellsSummary {
    pub factors: BTreeMap<(String, Scenario, String), f64>,
    pub mean_delta_ms: BTreeMap<String, f64>,
}

pub fn read_cells_csv<R: std::io::Read>(input: R) -> Result<CellsSummary> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Matrix(format!("cells file lacks `{name}`")))
    };
    let (mi, ci, pi, ai, avail, resp, lat) = (
        col("method")?,
        col("corruption")?,
        col("protocol")?,
        col("parameter")?,
        col("availability")?,
        col("mean_responsiveness")?,
        col("mean_delta_ms")?,
    );
    let mut summary = CellsSummary::default();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let protocol: Protocol = get(pi).parse()?;
        let factor_col = match protocol {
            Protocol::Discrete => Some(avail),
            Protocol::Continuous => Some(resp),
            _ => None,
        };
        if let Some(text) = factor_col.map(get).filter(|t| !t.is_empty()) {
            let f: f64 = text.parse().map_err(|e| Error::Matrix(format!("factor `{text}`: {e}")))?;
            summary.factors.insert((get(mi).to_string(), Scenario::new(protocol, get(ai)), get(ci).to_string()), f);
        }
        if let Ok(d) = get(lat).parse::<f64>() {
            summary.mean_delta_ms.insert(get(mi).to_string(), d);
        }
    }
    Ok(summary)
}

/// Corruption-averaged amortised utility of every method at every budget.
pub fn budget_points(matrix: &UtilityMatrix) -> Vec<BudgetPoint> {
    let mut points = Vec::new();
    for s in matrix.scenarios().filter(|s| s.protocol == Protocol::Amortised) {
        let Some(budget) = s.parameter.strip_prefix("B_s=").and_then(|b| Nanos::parse_secs(b).ok()) else {
            continue;
        };
        for m in matrix.methods() {
            if let Some(u) = matrix.aggregate(m, s) {
                points.push(BudgetPoint::new(budget, u, m.as_str()));
            }
        }
    }
    points
}

pub const MATRIX_FILE: &str = "matrix.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const REPORT_FILE: &str = "report.md";
pub const FRONTIER_FILE: &str = "frontier.csv";

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::File { path: path.to_path_buf(), source: Box::new(e.into()) })
}

/// Writes the matrix, cells, frontier and Markdown report into `dir` and
/// returns the file names written.
pub fn write_outputs(result: &SweepResult, dir: &Path) -> Result<Vec<&'static str>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::File { path: dir.to_path_buf(), source: Box::new(e.into()) })?;
    let matrix = result.matrix();
    matrix.write_csv(create(&dir.join(MATRIX_FILE))?)?;
    write_cells_csv(result, create(&dir.join(CELLS_FILE))?)?;
    let mut names = vec![MATRIX_FILE, CELLS_FILE];
    let points = budget_points(&matrix);
    if !points.is_empty() {
        write_frontier_csv(&points, create(&dir.join(FRONTIER_FILE))?)?;
        names.push(FRONTIER_FILE);
    }
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, report_markdown(result)).map_err(|e| Error::File { path, source: Box::new(e.into()) })?;
    names.push(REPORT_FILE);
    Ok(names)
}

fn pct(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{:.*}", decimals, x * 100.0)).unwrap_or_else(|| "--".into())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Markdown report: offline accuracy per corruption, corruption-averaged
/// utility per protocol grid, and decomposition terms at the first grid
/// point of each protocol. Utilities are shown in percent with 2 decimals,
/// availability and responsiveness with 1.
pub fn report_markdown(result: &SweepResult) -> String {
    let matrix = result.matrix();
    let methods = matrix.methods().to_vec();
    let mut md = String::new();

    if matrix.has_offline() {
        md.push_str("## Offline accuracy (%)\n\n| Corruption |");
        for m in &methods {
            let _ = write!(md, " {m} |");
        }
        let _ = write!(md, "\n|---|{}\n", "---|".repeat(methods.len()));
        for c in matrix.corruptions() {
            let _ = write!(md, "| {c} |");
            for m in &methods {
                let _ = write!(md, " {} |", pct(matrix.offline(m, c), 2));
            }
            md.push('\n');
        }
        let _ = write!(md, "| **Mean** |");
        for m in &methods {
            let _ = write!(md, " {} |", pct(matrix.aggregate(m, &Scenario::offline()), 2));
        }
        md.push_str("\n\n");
    }

    for protocol in [Protocol::Discrete, Protocol::Continuous, Protocol::Amortised] {
        let scenarios: Vec<&Scenario> = matrix.scenarios().filter(|s| s.protocol == protocol).collect();
        if scenarios.is_empty() {
            continue;
        }
        let _ = write!(md, "## {} utility (%), mean over corruptions\n\n| Method |", capitalise(protocol.as_str()));
        for s in &scenarios {
            let _ = write!(md, " {} |", s.parameter);
        }
        let _ = write!(md, "\n|---|{}\n", "---|".repeat(scenarios.len()));
        for m in &methods {
            let _ = write!(md, "| {m} |");
            for s in &scenarios {
                let _ = write!(md, " {} |", pct(matrix.aggregate(m, s), 2));
            }
            md.push('\n');
        }
        md.push('\n');
        decomposition_table(&mut md, result, &methods, scenarios[0]);
    }

    let failed: Vec<&CellResult> = result.failures().collect();
    if !failed.is_empty() {
        let _ = write!(md, "## Failed cells ({})\n\n", failed.len());
        for c in failed {
            let _ =
                writeln!(md, "- {} / {} / {}: {}", c.method, c.corruption, c.scenario, c.outcome.as_ref().unwrap_err());
        }
    }
    md
}

fn capitalise(s: &str) -> String {
    let mut chars = s.chars();
    chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
}

fn decomposition_table(md: &mut String, result: &SweepResult, methods: &[String], scenario: &Scenario) {
    let cells = |m: &str| -> Vec<&CellMetrics> {
        result
            .cells
            .iter()
            .filter(|c| c.method == m && &c.scenario == scenario)
            .filter_map(|c| c.outcome.as_ref().ok())
            .collect()
    };
    let _ = write!(md, "### Decomposition at {}\n\n", scenario.parameter);
    match scenario.protocol {
        Protocol::Discrete => {
            md.push_str("| Method | α (%) | ā_served (%) | U (%) |\n|---|---|---|---|\n");
            for m in methods {
                let rs: Vec<&DiscreteReport> = cells(m)
                    .into_iter()
                    .filter_map(|c| match c {
                        CellMetrics::Discrete(r) => Some(r),
                        _ => None,
                    })
                    .collect();
                let _ = writeln!(
                    md,
                    "| {m} | {} | {} | {} |",
                    pct(mean(rs.iter().map(|r| r.availability)), 1),
                    pct(mean(rs.iter().filter_map(|r| r.served_accuracy)), 2),
                    pct(mean(rs.iter().map(|r| r.utility)), 2)
                );
            }
        }
        Protocol::Continuous => {
            md.push_str("| Method | ā (%) | κ̄ (%) | alignment | U (%) |\n|---|---|---|---|---|\n");
            for m in methods {
                let rs: Vec<&ContinuousReport> = cells(m)
                    .into_iter()
                    .filter_map(|c| match c {
                        CellMetrics::Continuous(r) => Some(r),
                        _ => None,
                    })
                    .collect();
                let _ = writeln!(
                    md,
                    "| {m} | {} | {} | {} | {} |",
                    pct(mean(rs.iter().map(|r| r.mean_accuracy)), 2),
                    pct(mean(rs.iter().map(|r| r.mean_responsiveness)), 1),
                    mean(rs.iter().filter_map(|r| r.alignment))
                        .map(|a| format!("{a:.3}"))
                        .unwrap_or_else(|| "--".into()),
                    pct(mean(rs.iter().map(|r| r.utility)), 2)
                );
            }
        }
        Protocol::Amortised => {
            md.push_str("| Method | β (%) | ā_adapt (%) | ā_frozen (%) | U (%) |\n|---|---|---|---|---|\n");
            for m in methods {
                let rs: Vec<&AmortisedReport> = cells(m)
                    .into_iter()
                    .filter_map(|c| match c {
                        CellMetrics::Amortised(r) => Some(r),
                        _ => None,
                    })
                    .collect();
                let _ = writeln!(
                    md,
                    "| {m} | {} | {} | {} | {} |",
                    pct(mean(rs.iter().map(|r| r.adapted_fraction)), 1),
                    pct(mean(rs.iter().filter_map(|r| r.adapt_accuracy)), 2),
                    pct(mean(rs.iter().filter_map(|r| r.frozen_accuracy)), 2),
                    pct(mean(rs.iter().map(|r| r.utility)), 2)
                );
            }
        }
        Protocol::Offline => {}
    }
    md.push('\n');
}
