//! Cross-method comparison: rankings, rank correlation, per-cell winners,
//! insolvency thresholds and win statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Offline,
    Discrete,
    Continuous,
    Amortised,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Offline => "offline",
            Protocol::Discrete => "discrete",
            Protocol::Continuous => "continuous",
            Protocol::Amortised => "amortised",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Protocol::Offline),
            "discrete" => Ok(Protocol::Discrete),
            "continuous" => Ok(Protocol::Continuous),
            "amortised" | "amortized" => Ok(Protocol::Amortised),
            other => Err(Error::Matrix(format!("unknown protocol `{other}`"))),
        }
    }
}

/// A protocol plus its parameter, e.g. `discrete` / `rho=1.00`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scenario {
    pub protocol: Protocol,
    pub parameter: String,
}

impl Scenario {
    pub fn new(protocol: Protocol, parameter: impl Into<String>) -> Self {
        Scenario { protocol, parameter: parameter.into() }
    }

    pub fn offline() -> Self {
        Scenario::new(Protocol::Offline, "-")
    }

    pub fn is_offline(&self) -> bool {
        self.protocol == Protocol::Offline
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_offline() {
            f.write_str("offline")
        } else {
            write!(f, "{} {}", self.protocol, self.parameter)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub method: String,
    pub scenario: Scenario,
    pub corruption: String,
    /// `None` marks a cell that was attempted but failed.
    pub utility: Option<f64>,
}

type CellKey = (String, Scenario, String);

/// Utilities over methods x scenarios x corruptions. The offline scenario
/// holds each method's offline accuracy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UtilityMatrix {
    methods: Vec<String>,
    scenarios: Vec<Scenario>,
    corruptions: Vec<String>,
    cells: HashMap<CellKey, Option<f64>>,
    mean_delta_ms: BTreeMap<String, f64>,
}

fn push_unique<T: PartialEq + Clone>(list: &mut Vec<T>, item: &T) {
    if !list.contains(item) {
        list.push(item.clone());
    }
}

impl UtilityMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a cell. Labels keep first-seen order.
    pub fn insert(&mut self, method: &str, scenario: Scenario, corruption: &str, utility: Option<f64>) {
        push_unique(&mut self.methods, &method.to_string());
        push_unique(&mut self.scenarios, &scenario);
        push_unique(&mut self.corruptions, &corruption.to_string());
        self.cells.insert((method.to_string(), scenario, corruption.to_string()), utility);
    }

    pub fn set_mean_delta_ms(&mut self, method: &str, ms: f64) {
        self.mean_delta_ms.insert(method.to_string(), ms);
    }

    pub fn mean_delta_ms(&self, method: &str) -> Option<f64> {
        self.mean_delta_ms.get(method).copied()
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    /// Temporal scenarios, excluding the offline column.
    pub fn scenarios(&self) -> impl Iterator<Item = &Scenario> {
        self.scenarios.iter().filter(|s| !s.is_offline())
    }

    pub fn corruptions(&self) -> &[String] {
        &self.corruptions
    }

    pub fn has_offline(&self) -> bool {
        self.scenarios.iter().any(Scenario::is_offline)
    }

    pub fn get(&self, method: &str, scenario: &Scenario, corruption: &str) -> Option<f64> {
        self.cells.get(&(method.to_string(), scenario.clone(), corruption.to_string())).copied().flatten()
    }

    pub fn offline(&self, method: &str, corruption: &str) -> Option<f64> {
        self.get(method, &Scenario::offline(), corruption)
    }

    /// Cells that are absent or marked failed.
    pub fn missing(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for m in &self.methods {
            for s in &self.scenarios {
                for c in &self.corruptions {
                    if self.get(m, s, c).is_none() {
                        out.push((m.clone(), s.clone(), c.clone()));
                    }
                }
            }
        }
        out
    }

    /// Mean over corruptions for one method and scenario, skipping absent cells.
    pub fn aggregate(&self, method: &str, scenario: &Scenario) -> Option<f64> {
        let vals: Vec<f64> = self.corruptions.iter().filter_map(|c| self.get(method, scenario, c)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn entries(&self) -> Vec<MatrixEntry> {
        let mut out = Vec::new();
        for m in &self.methods {
            for s in &self.scenarios {
                for c in &self.corruptions {
                    if let Some(u) = self.cells.get(&(m.clone(), s.clone(), c.clone())) {
                        out.push(MatrixEntry {
                            method: m.clone(),
                            scenario: s.clone(),
                            corruption: c.clone(),
                            utility: *u,
                        });
                    }
                }
            }
        }
        out
    }

    /// CSV with columns `method, protocol, parameter, corruption, utility`;
    /// failed cells have an empty utility.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "protocol", "parameter", "corruption", "utility"])?;
        for e in self.entries() {
            w.write_record([
                e.method.as_str(),
                e.scenario.protocol.as_str(),
                e.scenario.parameter.as_str(),
                e.corruption.as_str(),
                &e.utility.map(|u| u.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Matrix(format!("missing column `{name}`")))
        };
        let (mi, pi, ai, ci, ui) =
            (col("method")?, col("protocol")?, col("parameter")?, col("corruption")?, col("utility")?);
        let mut matrix = UtilityMatrix::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let protocol: Protocol = field(pi).parse()?;
            let utility = match field(ui) {
                "" => None,
                text => Some(text.parse::<f64>().map_err(|e| Error::Matrix(format!("row {}: utility: {e}", row + 1)))?),
            };
            if field(mi).is_empty() {
                return Err(Error::Matrix(format!("row {}: empty method", row + 1)));
            }
            matrix.insert(field(mi), Scenario::new(protocol, field(ai)), field(ci), utility);
        }
        Ok(matrix)
    }
}

/// Per-method ranks, 1 = best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVector {
    pub methods: Vec<String>,
    pub ranks: Vec<f64>,
}

impl RankVector {
    pub fn rank_of(&self, method: &str) -> Option<f64> {
        self.methods.iter().position(|m| m == method).map(|i| self.ranks[i])
    }
}

/// Descending ranks; tied scores share the average of their positions.
pub fn rank<S: AsRef<str>>(scores: &[(S, f64)]) -> Result<RankVector> {
    if scores.len() < 2 {
        return Err(Error::TooFewToRank(scores.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].1.total_cmp(&scores[a].1));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].1 == scores[order[i]].1 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    Ok(RankVector { methods: scores.iter().map(|s| s.0.as_ref().to_string()).collect(), ranks })
}

/// Pearson correlation of two rank vectors, matched by method label.
pub fn spearman(a: &RankVector, b: &RankVector) -> Result<f64> {
    if a.methods.len() != b.methods.len() {
        return Err(Error::MethodMismatch);
    }
    let paired: Vec<(f64, f64)> = a
        .methods
        .iter()
        .zip(&a.ranks)
        .map(|(m, &ra)| b.rank_of(m).map(|rb| (ra, rb)).ok_or(Error::MethodMismatch))
        .collect::<Result<_>>()?;
    let n = paired.len() as f64;
    let mx = paired.iter().map(|p| p.0).sum::<f64>() / n;
    let my = paired.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &paired {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateRanks);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanRow {
    pub scenario: Scenario,
    /// Mean of per-corruption coefficients.
    pub per_corruption_mean: Option<f64>,
    /// Coefficient between corruption-averaged offline and temporal scores.
    pub aggregated: Option<f64>,
    pub per_corruption: Vec<(String, Option<f64>)>,
}

fn column_ranks(matrix: &UtilityMatrix, scenario: &Scenario, corruption: Option<&str>) -> Option<RankVector> {
    let scores: Option<Vec<(String, f64)>> = matrix
        .methods()
        .iter()
        .map(|m| {
            let v = match corruption {
                Some(c) => matrix.get(m, scenario, c),
                None => matrix.aggregate(m, scenario),
            };
            v.map(|v| (m.clone(), v))
        })
        .collect();
    rank(&scores?).ok()
}

/// Rank correlation with the offline ranking for every temporal scenario,
/// computed both per corruption and on corruption-averaged utilities.
pub fn spearman_vs_offline(matrix: &UtilityMatrix) -> Result<Vec<SpearmanRow>> {
    if !matrix.has_offline() {
        return Err(Error::Matrix("no offline rows to rank against".into()));
    }
    let offline = Scenario::offline();
    let mut rows = Vec::new();
    for s in matrix.scenarios() {
        let per_corruption: Vec<(String, Option<f64>)> = matrix
            .corruptions()
            .iter()
            .map(|c| {
                let r = column_ranks(matrix, &offline, Some(c))
                    .zip(column_ranks(matrix, s, Some(c)))
                    .and_then(|(a, b)| spearman(&a, &b).ok());
                (c.clone(), r)
            })
            .collect();
        let known: Vec<f64> = per_corruption.iter().filter_map(|p| p.1).collect();
        let aggregated = column_ranks(matrix, &offline, None)
            .zip(column_ranks(matrix, s, None))
            .and_then(|(a, b)| spearman(&a, &b).ok());
        rows.push(SpearmanRow {
            scenario: s.clone(),
            per_corruption_mean: (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64),
            aggregated,
            per_corruption,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerCell {
    pub scenario: Scenario,
    pub corruption: String,
    pub winner: Option<String>,
    pub utility: Option<f64>,
    /// Another method matched the winning utility and the tie-break decided.
    pub tied: bool,
}

/// Highest utility per (scenario, corruption); ties go to the lower mean
/// latency, then the lexicographically smaller label.
pub fn winners(matrix: &UtilityMatrix) -> Vec<WinnerCell> {
    let mut out = Vec::new();
    for s in matrix.scenarios() {
        for c in matrix.corruptions() {
            out.push(cell_winner(matrix, s, c));
        }
    }
    out
}

fn cell_winner(matrix: &UtilityMatrix, scenario: &Scenario, corruption: &str) -> WinnerCell {
    let mut best: Option<(&str, f64)> = None;
    let mut tied = false;
    for m in matrix.methods() {
        let Some(u) = matrix.get(m, scenario, corruption) else { continue };
        match best {
            None => best = Some((m, u)),
            Some((bm, bu)) => {
                if u > bu {
                    best = Some((m, u));
                    tied = false;
                } else if u == bu {
                    tied = true;
                    if tie_break(matrix, m, bm) {
                        best = Some((m, u));
                    }
                }
            }
        }
    }
    WinnerCell {
        scenario: scenario.clone(),
        corruption: corruption.to_string(),
        winner: best.map(|b| b.0.to_string()),
        utility: best.map(|b| b.1),
        tied,
    }
}

/// Whether `challenger` beats `incumbent` on an exact utility tie.
fn tie_break(matrix: &UtilityMatrix, challenger: &str, incumbent: &str) -> bool {
    let lat = |m: &str| matrix.mean_delta_ms(m).unwrap_or(f64::INFINITY);
    match lat(challenger).total_cmp(&lat(incumbent)) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => challenger < incumbent,
    }
}

pub fn win_counts(cells: &[WinnerCell]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for w in cells.iter().filter_map(|c| c.winner.as_ref()) {
        *counts.entry(w.clone()).or_insert(0) += 1;
    }
    counts
}

pub fn write_winners_csv<W: Write>(cells: &[WinnerCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["protocol", "parameter", "corruption", "winner", "utility", "tied"])?;
    for c in cells {
        w.write_record([
            c.scenario.protocol.as_str(),
            c.scenario.parameter.as_str(),
            c.corruption.as_str(),
            c.winner.as_deref().unwrap_or(""),
            &c.utility.map(|u| u.to_string()).unwrap_or_default(),
            if c.tied { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Corruption rows by scenario columns, with win counts underneath.
pub fn winners_markdown(matrix: &UtilityMatrix, cells: &[WinnerCell]) -> String {
    let scenarios: Vec<&Scenario> = matrix.scenarios().collect();
    let mut md = String::from("| Corruption |");
    for s in &scenarios {
        md.push_str(&format!(" {s} |"));
    }
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(scenarios.len()));
    md.push('\n');
    for c in matrix.corruptions() {
        md.push_str(&format!("| {c} |"));
        for s in &scenarios {
            let cell = cells.iter().find(|w| &w.scenario == *s && &w.corruption == c);
            let label = cell.and_then(|w| w.winner.as_deref()).unwrap_or("-");
            let mark = if cell.is_some_and(|w| w.tied) { "*" } else { "" };
            md.push_str(&format!(" {label}{mark} |"));
        }
        md.push('\n');
    }
    md.push_str("\nWins: ");
    let counts = win_counts(cells);
    let legend: Vec<String> = counts.iter().map(|(m, n)| format!("{m} ({n})")).collect();
    md.push_str(&legend.join(", "));
    md.push('\n');
    md
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Insolvency {
    pub required: f64,
    /// The required accuracy exceeds 100%.
    pub insolvent: bool,
}

/// Accuracy a method scaled by `factor` must reach to match `a0`.
pub fn insolvency_threshold(a0: f64, factor: f64) -> Result<Insolvency> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::InvalidFactor(factor));
    }
    let required = a0 / factor;
    Ok(Insolvency { required, insolvent: required > 1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsolvencyRow {
    pub method: String,
    pub scenario: Scenario,
    pub corruption: String,
    pub competitor: String,
    pub competitor_utility: f64,
    pub factor: f64,
    pub required: f64,
    pub insolvent: bool,
}

/// Thresholds against `competitor` for every cell with a known factor
/// (availability for discrete cells, responsiveness for continuous ones).
pub fn insolvency_table(
    matrix: &UtilityMatrix,
    factors: &BTreeMap<CellKey, f64>,
    competitor: &str,
) -> Result<Vec<InsolvencyRow>> {
    if !matrix.methods().iter().any(|m| m == competitor) {
        return Err(Error::UnknownMethod(competitor.to_string()));
    }
    let mut rows = Vec::new();
    for ((method, scenario, corruption), &factor) in factors {
        if method == competitor || factor <= 0.0 {
            continue;
        }
        let Some(a0) = matrix.get(competitor, scenario, corruption) else { continue };
        let t = insolvency_threshold(a0, factor.min(1.0))?;
        rows.push(InsolvencyRow {
            method: method.clone(),
            scenario: scenario.clone(),
            corruption: corruption.clone(),
            competitor: competitor.to_string(),
            competitor_utility: a0,
            factor,
            required: t.required,
            insolvent: t.insolvent,
        });
    }
    Ok(rows)
}

pub fn write_insolvency_csv<W: Write>(rows: &[InsolvencyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "protocol",
        "parameter",
        "corruption",
        "competitor",
        "competitor_utility",
        "factor",
        "required",
        "insolvent",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.scenario.protocol.to_string(),
            r.scenario.parameter.clone(),
            r.corruption.clone(),
            r.competitor.clone(),
            r.competitor_utility.to_string(),
            r.factor.to_string(),
            r.required.to_string(),
            r.insolvent.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinStats {
    pub method: String,
    pub cells: usize,
    pub wins: usize,
    pub losses: usize,
    pub win_rate: f64,
    /// Mean of `(winner - focus) / winner` over lost cells.
    pub mean_yielded: Option<f64>,
    /// Cells where the focus method scores below the baseline.
    pub sub_baseline: usize,
}

pub fn win_stats(matrix: &UtilityMatrix, focus: &str, baseline: Option<&str>) -> Result<WinStats> {
    for m in std::iter::once(focus).chain(baseline) {
        if !matrix.methods().iter().any(|x| x == m) {
            return Err(Error::UnknownMethod(m.to_string()));
        }
    }
    let (mut cells, mut wins, mut sub_baseline) = (0, 0, 0);
    let mut yielded = Vec::new();
    for w in winners(matrix) {
        let Some(u) = matrix.get(focus, &w.scenario, &w.corruption) else { continue };
        cells += 1;
        if w.winner.as_deref() == Some(focus) {
            wins += 1;
        } else if let Some(best) = w.utility.filter(|b| *b > 0.0) {
            yielded.push((best - u) / best);
        }
        if let Some(b) = baseline.and_then(|b| matrix.get(b, &w.scenario, &w.corruption)) {
            if u < b {
                sub_baseline += 1;
            }
        }
    }
    Ok(WinStats {
        method: focus.to_string(),
        cells,
        wins,
        losses: cells - wins,
        win_rate: if cells > 0 { wins as f64 / cells as f64 } else { 0.0 },
        mean_yielded: (!yielded.is_empty()).then(|| yielded.iter().sum::<f64>() / yielded.len() as f64),
        sub_baseline,
    })
}
