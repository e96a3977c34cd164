//! Transfer experiments: fit on some pre-training stages, forecast others,
//! optionally calibrate with anchors, and compare candidate forms.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{same_stage, Dataset, Domain, GridSpec, Measurement};
use crate::error::{Error, Result};
use crate::fit::{fit, fit_with_anchors, FitConfig, FitResult};
use crate::law::{EvalPoint, LawForm};
use crate::metrics::{metrics_report, sci, MetricsReport, DEFAULT_Y_CLIP};

/// Which evaluation-stage measurements are added to the fit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum AnchorPolicy {
    #[default]
    None,
    /// Rows flagged `is_anchor` at the evaluation stage.
    FromFlags,
    /// A deterministic pick at one model size (the smallest when unset).
    Auto {
        n_anchors: usize,
        #[serde(default)]
        model_size: Option<f64>,
    },
}

impl AnchorPolicy {
    pub fn is_none(&self) -> bool {
        matches!(self, AnchorPolicy::None)
    }
}

impl FromStr for AnchorPolicy {
    type Err = Error;

    /// `none`, `flags`, `auto:<k>` or `auto:<k>@<model_size>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" => return Ok(AnchorPolicy::None),
            "flags" | "from-flags" => return Ok(AnchorPolicy::FromFlags),
            _ => {}
        }
        let bad = || Error::Config(format!("bad anchor policy `{s}` (expected none|flags|auto:<k>[@<N>])"));
        let rest = s.strip_prefix("auto:").ok_or_else(bad)?;
        let (k, size) = match rest.split_once('@') {
            Some((k, n)) => (k, Some(n.parse::<f64>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        let n_anchors = k.parse::<usize>().map_err(|_| bad())?;
        if n_anchors == 0 {
            return Err(Error::Config("auto anchor count must be >= 1".into()));
        }
        Ok(AnchorPolicy::Auto {
            n_anchors,
            model_size: size,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub train_stages: Vec<f64>,
    pub eval_stages: Vec<f64>,
    pub forms: Vec<LawForm>,
    pub domain: Domain,
    #[serde(default)]
    pub anchor_policy: AnchorPolicy,
    #[serde(default)]
    pub fit_config: FitConfig,
}

impl ExperimentSpec {
    /// Train on `{15, 31}`, evaluate at 279, all four forms.
    pub fn transfer_default(domain: Domain, fit_config: FitConfig) -> Self {
        Self {
            train_stages: vec![15.0, 31.0],
            eval_stages: vec![279.0],
            forms: LawForm::ALL.to_vec(),
            domain,
            anchor_policy: AnchorPolicy::None,
            fit_config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_stages.is_empty() || self.eval_stages.is_empty() {
            return Err(Error::Config("train and eval stage sets must be non-empty".into()));
        }
        for &t in &self.train_stages {
            if self.eval_stages.iter().any(|&e| same_stage(t, e)) {
                return Err(Error::Config(format!("stage {t} is both a train and an eval stage")));
            }
        }
        if self.forms.is_empty() {
            return Err(Error::Config("at least one form is required".into()));
        }
        for (i, f) in self.forms.iter().enumerate() {
            if self.forms[..i].contains(f) {
                return Err(Error::Config(format!("form `{f}` listed twice")));
            }
        }
        if let AnchorPolicy::Auto { n_anchors: 0, .. } = self.anchor_policy {
            return Err(Error::Config("auto anchor count must be >= 1".into()));
        }
        self.fit_config.validate()
    }
}

fn at_stage(data: &[Measurement], stage: f64) -> Vec<Measurement> {
    data.iter().copied().filter(|m| same_stage(m.ptpp, stage)).collect()
}

/// Evenly spaced ranks `0..m` for `k <= m` picks; the middle rank when `k == 1`.
fn spaced_ranks(m: usize, k: usize) -> Vec<usize> {
    match k {
        0 => vec![],
        1 => vec![(m - 1) / 2],
        _ => (0..k)
            .map(|j| ((j * (m - 1)) as f64 / (k - 1) as f64).round() as usize)
            .collect(),
    }
}

/// Anchors at `stage` under `policy`, ordered by replay ratio then tokens.
pub fn select_anchors(data: &[Measurement], stage: f64, policy: &AnchorPolicy) -> Result<Vec<Measurement>> {
    let slice = at_stage(data, stage);
    if slice.is_empty() {
        return Err(Error::Data(format!("stage {stage} is not present")));
    }
    match *policy {
        AnchorPolicy::None => Ok(vec![]),
        AnchorPolicy::FromFlags => {
            let mut out: Vec<Measurement> = slice.into_iter().filter(|m| m.is_anchor).collect();
            if out.is_empty() {
                return Err(Error::Data(format!("no rows flagged is_anchor at stage {stage}")));
            }
            out.sort_by(|a, b| {
                (a.model_params, a.replay_ratio, a.adapt_tokens)
                    .partial_cmp(&(b.model_params, b.replay_ratio, b.adapt_tokens))
                    .expect("finite")
            });
            Ok(out)
        }
        AnchorPolicy::Auto { n_anchors, model_size } => {
            if n_anchors == 0 {
                return Err(Error::Config("auto anchor count must be >= 1".into()));
            }
            let n = match model_size {
                Some(n) => n,
                None => slice.iter().map(|m| m.model_params).fold(f64::INFINITY, f64::min),
            };
            let mut cand: Vec<Measurement> = slice
                .into_iter()
                .filter(|m| (m.model_params - n).abs() <= 1e-9 * n)
                .collect();
            if cand.len() < n_anchors {
                return Err(Error::Data(format!(
                    "{n_anchors} anchors requested but only {} candidates at N={n}, stage {stage}",
                    cand.len()
                )));
            }
            cand.sort_by(|a, b| {
                (a.replay_ratio, a.adapt_tokens)
                    .partial_cmp(&(b.replay_ratio, b.adapt_tokens))
                    .expect("finite")
            });
            let mut groups: Vec<Vec<Measurement>> = Vec::new();
            for m in cand {
                match groups.last_mut() {
                    Some(g) if g[0].replay_ratio == m.replay_ratio => g.push(m),
                    _ => groups.push(vec![m]),
                }
            }
            // deal one pick at a time across ratios, skipping exhausted ones
            let mut quota = vec![0usize; groups.len()];
            let mut left = n_anchors;
            while left > 0 {
                for (q, g) in quota.iter_mut().zip(&groups) {
                    if left > 0 && *q < g.len() {
                        *q += 1;
                        left -= 1;
                    }
                }
            }
            Ok(groups
                .iter()
                .zip(&quota)
                .flat_map(|(g, &k)| spaced_ranks(g.len(), k).into_iter().map(move |i| g[i]))
                .collect())
        }
    }
}

pub const METRIC_COLUMNS: [&str; 6] = ["huber_log", "rmse_log", "mae_rel", "mape_clip", "intercept", "slope"];

/// Score used to pick the best cell of a column (lower is better).
pub fn column_score(m: &MetricsReport, column: &str) -> f64 {
    match column {
        "huber_log" => m.huber_log,
        "rmse_log" => m.rmse_log,
        "mae_rel" => m.mae_rel,
        "mape_clip" => m.mape_clip,
        "intercept" => m.intercept.abs(),
        "slope" => (m.slope - 1.0).abs(),
        other => panic!("unknown metric column {other}"),
    }
}

fn column_value(m: &MetricsReport, column: &str) -> f64 {
    match column {
        "intercept" => m.intercept,
        "slope" => m.slope,
        c => column_score(m, c),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub form: LawForm,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    /// Metric columns in which this row is best.
    pub best: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub title: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Builds the table and flags the argmin of every column (first row on ties).
    pub fn new(title: impl Into<String>, rows: Vec<(LawForm, MetricsReport)>) -> Self {
        let mut rows: Vec<ComparisonRow> = rows
            .into_iter()
            .map(|(form, metrics)| ComparisonRow {
                form,
                metrics,
                best: vec![],
            })
            .collect();
        for col in METRIC_COLUMNS {
            if let Some(i) = argmin_row(&rows, col) {
                rows[i].best.push(col.to_string());
            }
        }
        Self {
            title: title.into(),
            rows,
        }
    }

    pub fn row(&self, form: LawForm) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.form == form)
    }

    /// Form holding the best value of `column`.
    pub fn best_form(&self, column: &str) -> Option<LawForm> {
        argmin_row(&self.rows, column).map(|i| self.rows[i].form)
    }

    /// True when every stored flag equals the recomputed argmin.
    pub fn flags_consistent(&self) -> bool {
        METRIC_COLUMNS.iter().all(|col| {
            let want = argmin_row(&self.rows, col);
            self.rows
                .iter()
                .enumerate()
                .all(|(i, r)| r.best.iter().any(|b| b == col) == (Some(i) == want))
        })
    }

    pub fn render_text(&self) -> String {
        render_tables(&[self])
    }
}

fn argmin_row(rows: &[ComparisonRow], col: &str) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| column_score(&r.metrics, col).is_finite())
        .min_by(|(i, a), (j, b)| {
            column_score(&a.metrics, col)
                .total_cmp(&column_score(&b.metrics, col))
                .then(i.cmp(j))
        })
        .map(|(i, _)| i)
}

/// Aligned text; several tables over the same forms are rendered side by side.
/// Best cells carry a trailing `*`.
pub fn render_tables(tables: &[&ComparisonTable]) -> String {
    const W: usize = 11;
    let mut out = String::new();
    let Some(first) = tables.first() else {
        return out;
    };
    let form_w = first
        .rows
        .iter()
        .map(|r| r.form.name().len())
        .max()
        .unwrap_or(4)
        .max(4);
    let block_w = METRIC_COLUMNS.len() * W;
    let _ = write!(out, "{:form_w$}", "");
    for t in tables {
        let _ = write!(out, " | {:block_w$}", t.title);
    }
    let _ = write!(out, " | n\n{:form_w$}", "form");
    for _ in tables {
        out.push_str(" | ");
        for col in METRIC_COLUMNS {
            let _ = write!(out, "{col:W$}");
        }
    }
    out.push_str(" |\n");
    for (i, row) in first.rows.iter().enumerate() {
        let _ = write!(out, "{:form_w$}", row.form.name());
        for t in tables {
            out.push_str(" | ");
            let r = t.rows.get(i).filter(|r| r.form == row.form);
            for col in METRIC_COLUMNS {
                let cell = match r {
                    Some(r) => {
                        let star = if r.best.iter().any(|b| b == col) { "*" } else { "" };
                        format!("{}{star}", sci(column_value(&r.metrics, col)))
                    }
                    None => "-".into(),
                };
                let _ = write!(out, "{cell:W$}");
            }
        }
        let _ = writeln!(out, " | {}", row.metrics.n_points);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Transfer,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormOutcome {
    pub form: LawForm,
    pub fit: FitResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchored_fit: Option<FitResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub form: LawForm,
    pub model_params: f64,
    pub adapt_tokens: f64,
    pub replay_ratio: f64,
    pub ptpp: f64,
    pub observed: f64,
    pub predicted: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_anchored: Option<f64>,
}

/// What entered the fits and what was scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub train_points: usize,
    pub anchors: Vec<Measurement>,
    pub eval_points: usize,
    /// Evaluation-stage points that entered any fit; equals `anchors.len()`.
    pub eval_stage_points_in_fits: usize,
    /// Anchors found among the scored points; always zero.
    pub anchors_in_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: RunMode,
    pub spec: ExperimentSpec,
    pub table: ComparisonTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchored_table: Option<ComparisonTable>,
    pub outcomes: Vec<FormOutcome>,
    pub predictions: Vec<PredictionRow>,
    pub audit: Audit,
}

impl ExperimentReport {
    pub fn render_text(&self) -> String {
        match &self.anchored_table {
            Some(a) => render_tables(&[&self.table, a]),
            None => render_tables(&[&self.table]),
        }
    }
}

fn predict_all(fit: &FitResult, data: &[Measurement]) -> Result<Vec<f64>> {
    data.iter()
        .map(|m| Ok(fit.predict(&EvalPoint::new(m.model_params, m.adapt_tokens, m.replay_ratio, m.ptpp)?)))
        .collect()
}

fn slice_stages(data: &[Measurement], stages: &[f64], what: &str) -> Result<Vec<Measurement>> {
    for &s in stages {
        if !data.iter().any(|m| same_stage(m.ptpp, s)) {
            return Err(Error::Data(format!("{what} stage {s} has no measurements")));
        }
    }
    Ok(data
        .iter()
        .copied()
        .filter(|m| stages.iter().any(|&s| same_stage(m.ptpp, s)))
        .collect())
}

/// Fits every form on the train stages and scores it on the eval stages.
/// Anchors, when requested, enter the anchored fits and are removed from the
/// scored points of both tables.
pub fn run_experiment(ds: &Dataset, spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let data = ds.domain(spec.domain);
    if data.is_empty() {
        return Err(Error::Data(format!("no {} measurements", spec.domain)));
    }
    let train = slice_stages(&data, &spec.train_stages, "train")?;
    let eval_all = slice_stages(&data, &spec.eval_stages, "eval")?;

    let mut anchors = Vec::new();
    if !spec.anchor_policy.is_none() {
        for &s in &spec.eval_stages {
            anchors.extend(select_anchors(&data, s, &spec.anchor_policy)?);
        }
    }
    let anchor_keys: HashSet<_> = anchors.iter().map(Measurement::key).collect();
    let eval: Vec<Measurement> = eval_all
        .into_iter()
        .filter(|m| !anchor_keys.contains(&m.key()))
        .collect();
    if eval.is_empty() {
        return Err(Error::Data("evaluation slice is empty after removing anchors".into()));
    }
    let obs: Vec<f64> = eval.iter().map(|m| m.loss).collect();
    let cfg = &spec.fit_config;

    let outcomes: Vec<FormOutcome> = spec
        .forms
        .par_iter()
        .map(|&form| {
            let fit = fit(&train, form, cfg)?;
            let anchored_fit = if anchors.is_empty() {
                None
            } else {
                Some(fit_with_anchors(&train, &anchors, form, cfg)?)
            };
            Ok(FormOutcome {
                form,
                fit,
                anchored_fit,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut anchored_rows = Vec::new();
    let mut predictions = Vec::new();
    for o in &outcomes {
        let preds = predict_all(&o.fit, &eval)?;
        rows.push((o.form, metrics_report(&preds, &obs, cfg.huber_delta, DEFAULT_Y_CLIP)?));
        let anchored = match &o.anchored_fit {
            Some(f) => {
                let p = predict_all(f, &eval)?;
                anchored_rows.push((o.form, metrics_report(&p, &obs, cfg.huber_delta, DEFAULT_Y_CLIP)?));
                Some(p)
            }
            None => None,
        };
        for (i, m) in eval.iter().enumerate() {
            predictions.push(PredictionRow {
                form: o.form,
                model_params: m.model_params,
                adapt_tokens: m.adapt_tokens,
                replay_ratio: m.replay_ratio,
                ptpp: m.ptpp,
                observed: m.loss,
                predicted: preds[i],
                predicted_anchored: anchored.as_ref().map(|p| p[i]),
            });
        }
    }

    let in_eval_stage = |m: &Measurement| spec.eval_stages.iter().any(|&s| same_stage(m.ptpp, s));
    let audit = Audit {
        train_points: train.len(),
        eval_points: eval.len(),
        eval_stage_points_in_fits: train.iter().chain(&anchors).filter(|m| in_eval_stage(m)).count(),
        anchors_in_eval: eval.iter().filter(|m| anchor_keys.contains(&m.key())).count(),
        anchors,
    };
    let stages = |s: &[f64]| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let title = format!(
        "{} train ptpp {{{}}} -> eval ptpp {{{}}}",
        spec.domain,
        stages(&spec.train_stages),
        stages(&spec.eval_stages)
    );
    Ok(ExperimentReport {
        mode: RunMode::Transfer,
        spec: spec.clone(),
        anchored_table: (!anchored_rows.is_empty())
            .then(|| ComparisonTable::new(format!("{title}, {} anchors", audit.anchors.len()), anchored_rows)),
        table: ComparisonTable::new(format!("{title}, no anchors"), rows),
        outcomes,
        predictions,
        audit,
    })
}

/// In-sample fit at one stage: an upper bound for transfer, not a forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub mode: RunMode,
    pub form: LawForm,
    pub domain: Domain,
    pub stage: f64,
    pub fit: FitResult,
    pub metrics: MetricsReport,
}

impl OracleReport {
    pub fn table(&self) -> ComparisonTable {
        ComparisonTable::new(
            format!("{} oracle at ptpp {} (upper bound)", self.domain, self.stage),
            vec![(self.form, self.metrics)],
        )
    }
}

pub fn run_oracle(ds: &Dataset, stage: f64, form: LawForm, domain: Domain, cfg: &FitConfig) -> Result<OracleReport> {
    let slice = at_stage(&ds.domain(domain), stage);
    if slice.is_empty() {
        return Err(Error::Data(format!("no {domain} measurements at stage {stage}")));
    }
    let fit = fit(&slice, form, cfg)?;
    let preds = predict_all(&fit, &slice)?;
    let obs: Vec<f64> = slice.iter().map(|m| m.loss).collect();
    let metrics = metrics_report(&preds, &obs, cfg.huber_delta, DEFAULT_Y_CLIP)?;
    Ok(OracleReport {
        mode: RunMode::Oracle,
        form,
        domain,
        stage,
        fit,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPrediction {
    pub model_params: f64,
    pub adapt_tokens: f64,
    pub atpp: f64,
    pub replay_ratio: f64,
    pub ptpp: f64,
    pub loss: f64,
}

/// Dense predictions over `(N, r, D)` at one stage, ordered by size, ratio, then tokens.
pub fn predict_grid(fit: &FitResult, grid: &GridSpec, stage: f64) -> Result<Vec<GridPrediction>> {
    let check = GridSpec {
        ptpp_stages: vec![stage],
        ..grid.clone()
    };
    check.validate()?;
    let law = fit.law();
    let mut out = Vec::with_capacity(grid.model_sizes.len() * grid.replay_ratios.len() * grid.token_points.len());
    for &n in &grid.model_sizes {
        for &r in &grid.replay_ratios {
            for &tp in &grid.token_points {
                let d = grid.tokens_at(tp, n);
                let x = EvalPoint::new(n, d, r, stage)?;
                out.push(GridPrediction {
                    model_params: n,
                    adapt_tokens: d,
                    atpp: d / n,
                    replay_ratio: x.r,
                    ptpp: stage,
                    loss: law.eval(&x),
                });
            }
        }
    }
    Ok(out)
}

/// Writes serializable rows as a headed CSV file.
pub fn write_rows_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::{Law, LawParams};
    use crate::synth::{generate, paper_default_spec};

    fn m(n: f64, d: f64, r: f64, p: f64, anchor: bool) -> Measurement {
        Measurement::new(n, d, r, p, Domain::Target, 2.0, anchor).unwrap()
    }

    fn grid_slice() -> Vec<Measurement> {
        let mut v = Vec::new();
        for &n in &[2.41e8, 5.17e8] {
            for &r in &[0.1, 0.25, 0.5] {
                for k in 0..10 {
                    v.push(m(n, 1e8 * (k + 1) as f64, r, 279.0, n == 5.17e8 && k == 3));
                }
            }
        }
        v
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("none".parse::<AnchorPolicy>().unwrap(), AnchorPolicy::None);
        assert_eq!("flags".parse::<AnchorPolicy>().unwrap(), AnchorPolicy::FromFlags);
        assert_eq!(
            "auto:20".parse::<AnchorPolicy>().unwrap(),
            AnchorPolicy::Auto {
                n_anchors: 20,
                model_size: None
            }
        );
        assert_eq!(
            "auto:5@5.17e8".parse::<AnchorPolicy>().unwrap(),
            AnchorPolicy::Auto {
                n_anchors: 5,
                model_size: Some(5.17e8)
            }
        );
        assert!("auto:0".parse::<AnchorPolicy>().is_err());
        assert!("auto".parse::<AnchorPolicy>().is_err());
    }

    #[test]
    fn anchors_from_flags() {
        let a = select_anchors(&grid_slice(), 279.0, &AnchorPolicy::FromFlags).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|m| m.is_anchor));
        let mut unflagged = grid_slice();
        unflagged.iter_mut().for_each(|m| m.is_anchor = false);
        assert!(select_anchors(&unflagged, 279.0, &AnchorPolicy::FromFlags).is_err());
        assert!(select_anchors(&grid_slice(), 31.0, &AnchorPolicy::FromFlags).is_err());
    }

    #[test]
    fn auto_rule_round_robin() {
        let auto = |k| AnchorPolicy::Auto {
            n_anchors: k,
            model_size: None,
        };
        let a = select_anchors(&grid_slice(), 279.0, &auto(3)).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|m| m.model_params == 2.41e8));
        let ratios: Vec<f64> = a.iter().map(|m| m.replay_ratio).collect();
        assert_eq!(ratios, vec![0.1, 0.25, 0.5]);
        // single pick per ratio takes the middle rank of 10 (index 4)
        assert!(a.iter().all(|m| m.adapt_tokens == 5e8));

        let a = select_anchors(&grid_slice(), 279.0, &auto(7)).unwrap();
        let per = |r: f64| a.iter().filter(|m| m.replay_ratio == r).count();
        assert_eq!((per(0.1), per(0.25), per(0.5)), (3, 2, 2));
        let d01: Vec<f64> = a.iter().filter(|m| m.replay_ratio == 0.1).map(|m| m.adapt_tokens).collect();
        assert_eq!(d01, vec![1e8, 6e8, 1e9]);

        assert_eq!(select_anchors(&grid_slice(), 279.0, &auto(30)).unwrap().len(), 30);
        assert!(select_anchors(&grid_slice(), 279.0, &auto(50)).is_err());
        let a = select_anchors(
            &grid_slice(),
            279.0,
            &AnchorPolicy::Auto {
                n_anchors: 2,
                model_size: Some(5.17e8),
            },
        )
        .unwrap();
        assert!(a.iter().all(|m| m.model_params == 5.17e8));
    }

    #[test]
    fn spaced_ranks_distinct() {
        for m in 1..20 {
            for k in 1..=m {
                let r = spaced_ranks(m, k);
                assert_eq!(r.len(), k);
                assert!(r.windows(2).all(|w| w[0] < w[1]), "{m} {k} {r:?}");
                assert!(*r.last().unwrap() < m);
            }
        }
    }

    fn report(h: f64, a: f64, s: f64) -> MetricsReport {
        MetricsReport {
            huber_log: h,
            rmse_log: h.sqrt(),
            mae_rel: h * 10.0,
            mape_clip: h * 10.0,
            intercept: a,
            slope: s,
            n_points: 5,
        }
    }

    #[test]
    fn best_flags_follow_argmin() {
        let t = ComparisonTable::new(
            "t",
            vec![
                (LawForm::AdditiveFloor, report(3e-4, -0.2, 1.05)),
                (LawForm::GatedPlusFloor, report(1e-4, 0.3, 0.9)),
                (LawForm::DcptBaseline, report(1e-4, 0.1, 1.2)),
            ],
        );
        assert!(t.flags_consistent());
        assert_eq!(t.best_form("huber_log"), Some(LawForm::GatedPlusFloor));
        assert_eq!(t.best_form("intercept"), Some(LawForm::DcptBaseline));
        assert_eq!(t.best_form("slope"), Some(LawForm::AdditiveFloor));
        let text = t.render_text();
        assert!(text.contains("1.00e-4*"), "{text}");
        assert_eq!(text.lines().count(), 5);
        let back: ComparisonTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let mut bad = t.clone();
        bad.rows[0].best.push("mae_rel".into());
        assert!(!bad.flags_consistent());
    }

    fn small_cfg() -> FitConfig {
        FitConfig {
            n_starts: 8,
            ..FitConfig::with_seed(3)
        }
    }

    #[test]
    fn realizable_transfer_scores_zero() {
        let mut spec = paper_default_spec();
        spec.law = Law {
            form: LawForm::DcptBaseline,
            params: LawParams {
                e: 1.5,
                a: 60.0,
                alpha: 0.28,
                b: 8.0,
                beta: 0.3,
                nu: 0.3,
                c: 0.02,
                gamma: 0.4,
                ..LawParams::default()
            },
        };
        let ds = generate(&spec).unwrap();
        let exp = ExperimentSpec {
            forms: vec![LawForm::DcptBaseline],
            ..ExperimentSpec::transfer_default(Domain::Target, small_cfg())
        };
        let rep = run_experiment(&ds, &exp).unwrap();
        assert_eq!(rep.table.rows.len(), 1);
        assert!(rep.table.rows[0].metrics.huber_log <= 1e-8, "{:?}", rep.table.rows[0]);
        assert_eq!(rep.audit.eval_points, 192);
        assert_eq!(rep.audit.train_points, 384);
        assert_eq!(rep.audit.eval_stage_points_in_fits, 0);
    }

    #[test]
    fn anchors_never_scored() {
        let ds = generate(&paper_default_spec().with_noise(0.005, 1)).unwrap();
        let exp = ExperimentSpec {
            forms: vec![LawForm::DcptBaseline, LawForm::AdditiveFloor],
            anchor_policy: AnchorPolicy::Auto {
                n_anchors: 20,
                model_size: None,
            },
            ..ExperimentSpec::transfer_default(Domain::Target, small_cfg())
        };
        let rep = run_experiment(&ds, &exp).unwrap();
        assert_eq!(rep.audit.anchors.len(), 20);
        assert_eq!(rep.audit.eval_points, 192 - 20);
        assert_eq!(rep.audit.eval_stage_points_in_fits, 20);
        assert_eq!(rep.audit.anchors_in_eval, 0);
        let anchored = rep.anchored_table.as_ref().unwrap();
        assert_eq!(anchored.rows.len(), 2);
        assert!(anchored.rows.iter().all(|r| r.metrics.n_points == 172));
        assert!(rep.table.rows.iter().all(|r| r.metrics.n_points == 172));
        for o in &rep.outcomes {
            assert_eq!(o.fit.n_points, 384);
            assert_eq!(o.anchored_fit.as_ref().unwrap().n_points, 404);
        }
        let keys: HashSet<_> = rep.audit.anchors.iter().map(Measurement::key).collect();
        assert!(rep
            .predictions
            .iter()
            .all(|p| !keys.contains(&(p.model_params.to_bits(), p.adapt_tokens.to_bits(), p.replay_ratio.to_bits(), p.ptpp.to_bits(), Domain::Target))));
        let text = rep.render_text();
        assert!(text.contains("20 anchors") && text.contains("no anchors"));
    }

    #[test]
    fn spec_validation() {
        let mut s = ExperimentSpec::transfer_default(Domain::Target, FitConfig::default());
        assert!(s.validate().is_ok());
        s.eval_stages = vec![31.0];
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::transfer_default(Domain::Target, FitConfig::default());
        s.forms.clear();
        assert!(s.validate().is_err());
        let ds = generate(&paper_default_spec()).unwrap();
        let mut s = ExperimentSpec::transfer_default(Domain::Source, FitConfig::default());
        assert!(matches!(run_experiment(&ds, &s), Err(Error::Data(_))));
        s.domain = Domain::Target;
        s.eval_stages = vec![100.0];
        assert!(matches!(run_experiment(&ds, &s), Err(Error::Data(_))));
    }

    #[test]
    fn oracle_labels_mode() {
        let ds = generate(&paper_default_spec()).unwrap();
        let rep = run_oracle(&ds, 279.0, LawForm::DcptBaseline, Domain::Target, &small_cfg()).unwrap();
        assert_eq!(rep.metrics.n_points, 192);
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["mode"], "oracle");
        assert!(run_oracle(&ds, 100.0, LawForm::DcptBaseline, Domain::Target, &small_cfg()).is_err());
    }

    #[test]
    fn grid_predictions() {
        let spec = paper_default_spec();
        let fit = FitResult {
            form: spec.law.form,
            params: spec.law.params,
            objective: 0.0,
            converged: true,
            n_iters: 0,
            best_start_index: 0,
            seed: 0,
            projected_grad_norm: 0.0,
            n_points: 0,
            starts: vec![],
        };
        let grid = GridSpec {
            token_points: (0..50).map(|k| 0.5 * 1.1f64.powi(k)).collect(),
            ..spec.grid.clone()
        };
        let rows = predict_grid(&fit, &grid, 279.0).unwrap();
        assert_eq!(rows.len(), 600);
        for run in rows.chunks(50) {
            assert!(run.windows(2).all(|w| w[1].loss < w[0].loss));
        }
        // on the training grid the predictions are the generator's losses
        let ds = generate(&spec).unwrap();
        let at = predict_grid(&fit, &spec.grid, 31.0).unwrap();
        let truth: Vec<f64> = ds.measurements().iter().filter(|m| m.ptpp == 31.0).map(|m| m.loss).collect();
        let got: Vec<f64> = at.iter().map(|p| p.loss).collect();
        assert_eq!(got, truth);
        let empty = GridSpec {
            model_sizes: vec![],
            ..spec.grid
        };
        assert!(predict_grid(&fit, &empty, 279.0).is_err());
    }
}
