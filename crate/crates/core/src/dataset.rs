//! Loss measurements, the validated dataset container, and grid extraction.
//!
//! A [`Dataset`] is immutable once built. Replay ratios are clipped into
//! `[R_MIN, R_MAX]` at ingestion so downstream code never has to worry about
//! `ln 0` in the replay terms.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const R_MIN: f64 = 1e-9;
pub const R_MAX: f64 = 1.0 - 1e-9;

/// Relative tolerance used when matching pre-training stages read from
/// different sources (CLI flags vs. CSV cells).
const STAGE_RTOL: f64 = 1e-9;

pub fn clip_ratio(r: f64) -> f64 {
    r.clamp(R_MIN, R_MAX)
}

pub fn same_stage(a: f64, b: f64) -> bool {
    (a - b).abs() <= STAGE_RTOL * a.abs().max(b.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Target,
    Source,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Target => "target",
            Domain::Source => "source",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "target" => Ok(Domain::Target),
            "source" => Ok(Domain::Source),
            other => Err(Error::Config(format!(
                "unknown domain `{other}` (expected target|source)"
            ))),
        }
    }
}

/// One observed validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub model_params: f64,
    pub adapt_tokens: f64,
    pub replay_ratio: f64,
    pub ptpp: f64,
    pub domain: Domain,
    pub loss: f64,
    #[serde(default)]
    pub is_anchor: bool,
}

impl Measurement {
    /// Validates the raw fields and clips the replay ratio.
    pub fn new(
        model_params: f64,
        adapt_tokens: f64,
        replay_ratio: f64,
        ptpp: f64,
        domain: Domain,
        loss: f64,
        is_anchor: bool,
    ) -> Result<Self> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Data(what.to_string()))
            }
        };
        check(model_params.is_finite() && model_params > 0.0, "model_params must be > 0")?;
        check(adapt_tokens.is_finite() && adapt_tokens >= 0.0, "adapt_tokens must be >= 0")?;
        check(replay_ratio.is_finite(), "replay_ratio must be finite")?;
        check(ptpp.is_finite() && ptpp > 0.0, "ptpp must be > 0")?;
        check(loss.is_finite() && loss > 0.0, "loss must be > 0")?;
        Ok(Self {
            model_params,
            adapt_tokens,
            replay_ratio: clip_ratio(replay_ratio),
            ptpp,
            domain,
            loss,
            is_anchor,
        })
    }

    /// Adaptation tokens per parameter, `D / N`.
    pub fn atpp(&self) -> f64 {
        self.adapt_tokens / self.model_params
    }

    pub(crate) fn key(&self) -> (u64, u64, u64, u64, Domain) {
        (
            self.model_params.to_bits(),
            self.adapt_tokens.to_bits(),
            self.replay_ratio.to_bits(),
            self.ptpp.to_bits(),
            self.domain,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// SHA-256 of the raw file bytes (or of the canonical CSV for in-memory data).
    pub content_hash: String,
}

/// Column names used when reading a CSV or JSON dataset.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub model_params: String,
    pub adapt_tokens: String,
    pub replay_ratio: String,
    pub ptpp: String,
    pub domain: String,
    pub loss: String,
    pub is_anchor: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            model_params: "model_params".into(),
            adapt_tokens: "adapt_tokens".into(),
            replay_ratio: "replay_ratio".into(),
            ptpp: "ptpp".into(),
            domain: "domain".into(),
            loss: "loss".into(),
            is_anchor: "is_anchor".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    measurements: Vec<Measurement>,
    provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset from already-validated measurements, rejecting empty
    /// input and duplicate `(N, D, r, ptpp, domain)` keys.
    pub fn new(measurements: Vec<Measurement>, source: impl Into<String>) -> Result<Self> {
        let hash = canonical_hash(&measurements);
        Self::with_provenance(
            measurements,
            Provenance {
                source: source.into(),
                content_hash: hash,
            },
        )
    }

    fn with_provenance(measurements: Vec<Measurement>, provenance: Provenance) -> Result<Self> {
        if measurements.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let mut seen = HashSet::with_capacity(measurements.len());
        for (i, m) in measurements.iter().enumerate() {
            if !seen.insert(m.key()) {
                return Err(Error::Row {
                    row: i,
                    message: "duplicate (model_params, adapt_tokens, replay_ratio, ptpp, domain) key"
                        .into(),
                });
            }
        }
        Ok(Self {
            measurements,
            provenance,
        })
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Hash of the canonical CSV rendering; stable across load/serialize cycles.
    pub fn canonical_hash(&self) -> String {
        canonical_hash(&self.measurements)
    }

    /// Measurements with the given domain tag, in dataset order.
    pub fn domain(&self, domain: Domain) -> Vec<Measurement> {
        self.measurements
            .iter()
            .filter(|m| m.domain == domain)
            .copied()
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        render_csv(&self.measurements)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn render_csv(measurements: &[Measurement]) -> String {
    let mut out = String::from("model_params,adapt_tokens,replay_ratio,ptpp,domain,loss,is_anchor\n");
    for m in measurements {
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e},{},{:e},{}\n",
            m.model_params,
            m.adapt_tokens,
            m.replay_ratio,
            m.ptpp,
            m.domain,
            m.loss,
            u8::from(m.is_anchor)
        ));
    }
    out
}

fn canonical_hash(measurements: &[Measurement]) -> String {
    hex::encode(Sha256::digest(render_csv(measurements).as_bytes()))
}

/// Loads a dataset from CSV, or from the JSON mirror when the extension is `.json`.
pub fn load_dataset(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let is_json = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
    let measurements = if is_json {
        parse_json(&bytes, columns)?
    } else {
        parse_csv(&bytes, columns)?
    };
    Dataset::with_provenance(
        measurements,
        Provenance {
            source: path.display().to_string(),
            content_hash: hex::encode(Sha256::digest(&bytes)),
        },
    )
}

fn row_err(row: usize, message: impl Into<String>) -> Error {
    Error::Row {
        row,
        message: message.into(),
    }
}

fn parse_num(row: usize, column: &str, cell: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| row_err(row, format!("column `{column}`: `{cell}` is not a number")))
}

fn parse_anchor(row: usize, cell: &str) -> Result<bool> {
    match cell.trim() {
        "" | "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(row_err(row, format!("is_anchor must be 0 or 1, got `{other}`"))),
    }
}

pub fn parse_csv(bytes: &[u8], columns: &ColumnMap) -> Result<Vec<Measurement>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        find(name).ok_or_else(|| Error::Data(format!("missing required column `{name}`")))
    };
    let i_n = required(&columns.model_params)?;
    let i_d = required(&columns.adapt_tokens)?;
    let i_r = required(&columns.replay_ratio)?;
    let i_p = required(&columns.ptpp)?;
    let i_dom = required(&columns.domain)?;
    let i_loss = required(&columns.loss)?;
    let i_anchor = find(&columns.is_anchor);

    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let domain: Domain = cell(i_dom).parse().map_err(|e: Error| row_err(row, e.to_string()))?;
        let m = Measurement::new(
            parse_num(row, &columns.model_params, cell(i_n))?,
            parse_num(row, &columns.adapt_tokens, cell(i_d))?,
            parse_num(row, &columns.replay_ratio, cell(i_r))?,
            parse_num(row, &columns.ptpp, cell(i_p))?,
            domain,
            parse_num(row, &columns.loss, cell(i_loss))?,
            match i_anchor {
                Some(i) => parse_anchor(row, cell(i))?,
                None => false,
            },
        )
        .map_err(|e| row_err(row, e.to_string()))?;
        out.push(m);
    }
    Ok(out)
}

pub fn parse_json(bytes: &[u8], columns: &ColumnMap) -> Result<Vec<Measurement>> {
    use serde_json::Value;
    let value: Value = serde_json::from_slice(bytes)?;
    let rows = value
        .as_array()
        .ok_or_else(|| Error::Data("JSON dataset must be an array of objects".into()))?;
    let mut out = Vec::with_capacity(rows.len());
    for (row, v) in rows.iter().enumerate() {
        let obj = v
            .as_object()
            .ok_or_else(|| row_err(row, "expected a JSON object"))?;
        let num = |name: &str| -> Result<f64> {
            match obj.get(name) {
                None => Err(row_err(row, format!("missing required column `{name}`"))),
                Some(Value::Number(n)) => n
                    .as_f64()
                    .ok_or_else(|| row_err(row, format!("column `{name}` is not a number"))),
                Some(Value::String(s)) => parse_num(row, name, s),
                Some(_) => Err(row_err(row, format!("column `{name}` is not a number"))),
            }
        };
        let domain = match obj.get(&columns.domain) {
            Some(Value::String(s)) => s.parse().map_err(|e: Error| row_err(row, e.to_string()))?,
            _ => return Err(row_err(row, format!("missing required column `{}`", columns.domain))),
        };
        let is_anchor = match obj.get(&columns.is_anchor) {
            None | Some(Value::Null) => false,
            Some(Value::Bool(b)) => *b,
            Some(Value::Number(n)) => parse_anchor(row, &n.to_string())?,
            Some(Value::String(s)) => parse_anchor(row, s)?,
            Some(_) => return Err(row_err(row, "is_anchor must be 0 or 1")),
        };
        let m = Measurement::new(
            num(&columns.model_params)?,
            num(&columns.adapt_tokens)?,
            num(&columns.replay_ratio)?,
            num(&columns.ptpp)?,
            domain,
            num(&columns.loss)?,
            is_anchor,
        )
        .map_err(|e| row_err(row, e.to_string()))?;
        out.push(m);
    }
    Ok(out)
}

/// Result of partitioning a dataset by pre-training stage.
#[derive(Debug, Clone)]
pub struct StageSplit {
    pub train: Dataset,
    pub eval: Dataset,
    /// Measurements whose stage is in neither set.
    pub dropped: usize,
}

pub fn split_by_ptpp(ds: &Dataset, train_stages: &[f64], eval_stages: &[f64]) -> Result<StageSplit> {
    if train_stages.is_empty() || eval_stages.is_empty() {
        return Err(Error::Config("stage sets must be non-empty".into()));
    }
    for &t in train_stages {
        if eval_stages.iter().any(|&e| same_stage(t, e)) {
            return Err(Error::Config(format!(
                "ptpp stage {t} appears in both train and eval sets"
            )));
        }
    }
    for &s in train_stages.iter().chain(eval_stages) {
        if !ds.measurements.iter().any(|m| same_stage(m.ptpp, s)) {
            return Err(Error::Data(format!("ptpp stage {s} is not present in the dataset")));
        }
    }
    let in_set = |set: &[f64], p: f64| set.iter().any(|&s| same_stage(s, p));
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut dropped = 0;
    for m in &ds.measurements {
        if in_set(train_stages, m.ptpp) {
            train.push(*m);
        } else if in_set(eval_stages, m.ptpp) {
            eval.push(*m);
        } else {
            dropped += 1;
        }
    }
    let source = &ds.provenance.source;
    Ok(StageSplit {
        train: Dataset::new(train, format!("{source}#train"))?,
        eval: Dataset::new(eval, format!("{source}#eval"))?,
        dropped,
    })
}

/// How `GridSpec::token_points` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenScale {
    /// Token points are raw adaptation token counts `D`.
    #[default]
    Absolute,
    /// Token points are tokens per parameter; `D = atpp * N` for each size.
    PerParameter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub model_sizes: Vec<f64>,
    pub replay_ratios: Vec<f64>,
    pub ptpp_stages: Vec<f64>,
    pub token_points: Vec<f64>,
    #[serde(default)]
    pub token_scale: TokenScale,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("model_sizes", &self.model_sizes),
            ("replay_ratios", &self.replay_ratios),
            ("ptpp_stages", &self.ptpp_stages),
            ("token_points", &self.token_points),
        ];
        for (name, axis) in axes {
            if axis.is_empty() {
                return Err(Error::Config(format!("grid axis `{name}` is empty")));
            }
            if axis.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config(format!("grid axis `{name}` must be strictly positive")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "grid axis `{name}` must be strictly increasing"
                )));
            }
        }
        Ok(())
    }

    /// Adaptation token count for a token point at model size `n`.
    pub fn tokens_at(&self, token_point: f64, n: f64) -> f64 {
        match self.token_scale {
            TokenScale::Absolute => token_point,
            TokenScale::PerParameter => token_point * n,
        }
    }
}

fn sorted_unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn extract_grid(ds: &Dataset) -> GridSpec {
    let ms = ds.measurements();
    GridSpec {
        model_sizes: sorted_unique(ms.iter().map(|m| m.model_params)),
        replay_ratios: sorted_unique(ms.iter().map(|m| m.replay_ratio)),
        ptpp_stages: sorted_unique(ms.iter().map(|m| m.ptpp)),
        token_points: sorted_unique(ms.iter().map(|m| m.adapt_tokens)),
        token_scale: TokenScale::Absolute,
    }
}
