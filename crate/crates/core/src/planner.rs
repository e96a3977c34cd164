//! Smallest adaptation budget and replay ratio meeting a forgetting limit on
//! the source domain and a loss threshold on the target domain, at fixed
//! model size and pre-training stage.
//!
//! The replay ratio is searched on a grid uniform in `ln(r / (1 - r))`; for
//! each ratio the minimal tokens-per-parameter is found by bisection when both
//! laws decrease in `D`, and by a dense scan otherwise.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{R_MAX, R_MIN};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::law::{baseline_source_loss, eval_law, BaselineMode, EvalPoint, Law};

pub const FLOPS_PER_PARAM_TOKEN: f64 = 6.0;

/// Training cost `6 * N * D` with `D = atpp * N`.
pub fn flops(n: f64, atpp: f64) -> f64 {
    FLOPS_PER_PARAM_TOKEN * n * (atpp * n)
}

/// JSON for floats that may be infinite: numbers, or `"inf"` / `"-inf"` / `"nan"`.
mod json_float {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(decode).transpose()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceMode {
    /// `forgetting_tolerance` is in nats.
    Absolute,
    /// `forgetting_tolerance` is a fraction of the baseline source loss.
    #[default]
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConstraints {
    #[serde(with = "json_float")]
    pub forgetting_tolerance: f64,
    #[serde(with = "json_float")]
    pub target_threshold: f64,
    #[serde(default)]
    pub mode: ToleranceMode,
}

impl PlanConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.forgetting_tolerance >= 0.0) {
            return Err(Error::Config("forgetting tolerance must be >= 0".into()));
        }
        if !(self.target_threshold >= 0.0) {
            return Err(Error::Config("target threshold must be >= 0".into()));
        }
        Ok(())
    }

    /// Forgetting budget in nats for a given baseline source loss.
    pub fn allowed_forgetting(&self, baseline: f64) -> f64 {
        match self.mode {
            ToleranceMode::Absolute => self.forgetting_tolerance,
            ToleranceMode::Relative => self.forgetting_tolerance * baseline,
        }
    }
}

/// A forgetting tolerance as written on the command line: `2%` is relative,
/// a bare number is absolute nats, `inf` disables the constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub value: f64,
    pub mode: ToleranceMode,
}

impl FromStr for Tolerance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("bad forgetting tolerance `{s}` (e.g. `2%` or `0.05`)"));
        let (value, mode) = match s.strip_suffix('%') {
            Some(p) => (p.trim().parse::<f64>().map_err(|_| bad())? / 100.0, ToleranceMode::Relative),
            None => (s.parse::<f64>().map_err(|_| bad())?, ToleranceMode::Absolute),
        };
        if !(value >= 0.0) {
            return Err(bad());
        }
        Ok(Tolerance { value, mode })
    }
}

/// Search resolutions and bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub r_points: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub atpp_min: f64,
    pub atpp_max: f64,
    pub scan_points: usize,
    /// Relative bracket width at which bisection stops.
    pub rel_tol: f64,
    pub landscape_r_points: usize,
    pub landscape_atpp_points: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            r_points: 512,
            r_min: 1e-3,
            r_max: R_MAX,
            atpp_min: 1e-3,
            atpp_max: 1e3,
            scan_points: 4096,
            rel_tol: 1e-6,
            landscape_r_points: 64,
            landscape_atpp_points: 96,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_points >= 2
            && self.scan_points >= 2
            && self.landscape_r_points >= 2
            && self.landscape_atpp_points >= 2
            && self.r_min >= R_MIN
            && self.r_max <= R_MAX
            && self.r_min < self.r_max
            && self.atpp_min > 0.0
            && self.atpp_min < self.atpp_max
            && self.atpp_max.is_finite()
            && self.rel_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid planner search settings: {self:?}")))
        }
    }

    /// Ratios uniform in logit, ascending; dense near both `r = 0` and `r = 1`.
    pub fn r_grid(&self, points: usize) -> Vec<f64> {
        let (u0, u1) = (logit(self.r_min), logit(self.r_max));
        (0..points)
            .map(|k| match k {
                0 => self.r_min,
                k if k == points - 1 => self.r_max,
                k => 1.0 / (1.0 + (-(u0 + (u1 - u0) * k as f64 / (points - 1) as f64)).exp()),
            })
            .collect()
    }

    pub fn atpp_grid(&self, points: usize) -> Vec<f64> {
        log_grid(self.atpp_min, self.atpp_max, points)
    }
}

pub fn logit(r: f64) -> f64 {
    (r / (1.0 - r)).ln()
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| match k {
            0 => lo,
            k if k == points - 1 => hi,
            k => (a + (b - a) * k as f64 / (points - 1) as f64).exp(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanProblem {
    pub src: FitResult,
    pub tgt: FitResult,
    pub n: f64,
    pub ptpp: f64,
    #[serde(default = "law_limit")]
    pub baseline: BaselineMode,
    pub constraints: PlanConstraints,
    #[serde(default)]
    pub search: SearchSettings,
    /// Skip the convergence check on the two fits.
    #[serde(default)]
    pub allow_unconverged: bool,
}

fn law_limit() -> BaselineMode {
    BaselineMode::LawLimit
}

impl PlanProblem {
    pub fn new(src: FitResult, tgt: FitResult, n: f64, ptpp: f64, constraints: PlanConstraints) -> Self {
        Self {
            src,
            tgt,
            n,
            ptpp,
            baseline: BaselineMode::LawLimit,
            constraints,
            search: SearchSettings::default(),
            allow_unconverged: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        self.search.validate()?;
        if !(self.n.is_finite() && self.n > 0.0 && self.ptpp.is_finite() && self.ptpp > 0.0) {
            return Err(Error::Config("N and ptpp must be finite and > 0".into()));
        }
        for (name, f) in [("source", &self.src), ("target", &self.tgt)] {
            f.params.validate_for(f.form)?;
            if !f.converged && !self.allow_unconverged {
                return Err(Error::Plan(format!("{name} fit did not converge")));
            }
        }
        Ok(())
    }

    pub fn baseline_loss(&self) -> Result<f64> {
        baseline_source_loss(self.src.form, &self.src.params, self.n, self.ptpp, self.baseline)
    }
}

/// Increase of source loss at `x` over the unadapted baseline (may be negative).
pub fn forgetting(src: &FitResult, x: &EvalPoint, baseline: BaselineMode) -> Result<f64> {
    if !(x.d > 0.0) {
        return Err(Error::Law("forgetting needs D > 0; D = 0 is the baseline itself".into()));
    }
    let base = baseline_source_loss(src.form, &src.params, x.n, x.ptpp, baseline)?;
    Ok(eval_law(src.form, &src.params, x)? - base)
}

/// Constraint values at one `(r, atpp)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    pub forgetting: f64,
    pub target_loss: f64,
    /// `allowed - forgetting`; infinite when forgetting is unconstrained.
    #[serde(with = "json_float")]
    pub src_slack: f64,
    /// `tau - target_loss`.
    #[serde(with = "json_float")]
    pub tgt_slack: f64,
}

impl Slacks {
    pub fn feasible(&self) -> bool {
        self.src_slack >= 0.0 && self.tgt_slack >= 0.0
    }

    fn min(&self) -> f64 {
        self.src_slack.min(self.tgt_slack)
    }
}

struct Evaluator {
    src: Law,
    tgt: Law,
    n: f64,
    ptpp: f64,
    baseline: f64,
    allowed: f64,
    tau: f64,
    monotone: bool,
}

impl Evaluator {
    fn new(p: &PlanProblem) -> Result<Self> {
        let baseline = p.baseline_loss()?;
        let (src, tgt) = (p.src.law(), p.tgt.law());
        Ok(Self {
            monotone: src.strictly_decreasing_in_d() && tgt.strictly_decreasing_in_d(),
            src,
            tgt,
            n: p.n,
            ptpp: p.ptpp,
            baseline,
            allowed: p.constraints.allowed_forgetting(baseline),
            tau: p.constraints.target_threshold,
        })
    }

    fn slacks(&self, r: f64, atpp: f64) -> Slacks {
        let x = EvalPoint {
            n: self.n,
            d: atpp * self.n,
            r: r.clamp(R_MIN, R_MAX),
            ptpp: self.ptpp,
        };
        let forgetting = self.src.eval(&x) - self.baseline;
        let target_loss = self.tgt.eval(&x);
        Slacks {
            forgetting,
            target_loss,
            src_slack: self.allowed - forgetting,
            tgt_slack: self.tau - target_loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Bisection,
    Scan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    Forgetting,
    Target,
    Both,
}

/// Outcome of the per-ratio search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSolve {
    pub r: f64,
    pub method: SolveMethod,
    #[serde(default)]
    pub atpp: Option<f64>,
    /// Slacks at the returned budget, or at `atpp_max` when infeasible.
    pub slacks: Slacks,
    /// Constraints still violated at `atpp_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violated: Option<Violation>,
}

fn solve_ratio(ev: &Evaluator, r: f64, s: &SearchSettings) -> RatioSolve {
    let at_max = ev.slacks(r, s.atpp_max);
    let infeasible = |method| RatioSolve {
        r,
        method,
        atpp: None,
        slacks: at_max,
        violated: Some(match (at_max.src_slack >= 0.0, at_max.tgt_slack >= 0.0) {
            (false, false) => Violation::Both,
            (false, true) => Violation::Forgetting,
            _ => Violation::Target,
        }),
    };
    let found = |method, atpp| RatioSolve {
        r,
        method,
        atpp: Some(atpp),
        slacks: ev.slacks(r, atpp),
        violated: None,
    };
    if ev.monotone {
        if !at_max.feasible() {
            return infeasible(SolveMethod::Bisection);
        }
        if ev.slacks(r, s.atpp_min).feasible() {
            return found(SolveMethod::Bisection, s.atpp_min);
        }
        let (mut lo, mut hi) = (s.atpp_min, s.atpp_max);
        while hi / lo - 1.0 > s.rel_tol {
            let mid = (lo * hi).sqrt();
            if ev.slacks(r, mid).feasible() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        found(SolveMethod::Bisection, hi)
    } else {
        match s
            .atpp_grid(s.scan_points)
            .into_iter()
            .find(|&a| ev.slacks(r, a).feasible())
        {
            Some(a) => found(SolveMethod::Scan, a),
            None => infeasible(SolveMethod::Scan),
        }
    }
}

/// Smallest feasible tokens-per-parameter at one replay ratio.
pub fn min_feasible_atpp(r: f64, problem: &PlanProblem) -> Result<RatioSolve> {
    problem.validate()?;
    if !(R_MIN..=R_MAX).contains(&r) {
        return Err(Error::Config(format!("replay ratio {r} outside [{R_MIN}, {R_MAX}]")));
    }
    Ok(solve_ratio(&Evaluator::new(problem)?, r, &problem.search))
}

/// Which constraint holds the optimum in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BindingConstraint {
    Forgetting,
    Target,
    /// Both constraints hold with slack at the smallest searched budget.
    SearchFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub r: f64,
    pub atpp: f64,
    #[serde(flatten)]
    pub slacks: Slacks,
    pub feasible: bool,
}

/// Row-major `(r, atpp)` landscape of both constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityGrid {
    pub r: Vec<f64>,
    pub atpp: Vec<f64>,
    pub cells: Vec<GridCell>,
}

#[derive(Serialize)]
struct FeasibilityCsvRow {
    r: f64,
    atpp: f64,
    src_slack: f64,
    tgt_slack: f64,
    feasible: bool,
}

#[derive(Serialize)]
struct ForgettingCsvRow {
    r: f64,
    atpp: f64,
    adapt_tokens: f64,
    forgetting: f64,
    feasible: bool,
}

#[derive(Serialize)]
struct TargetCsvRow {
    r: f64,
    atpp: f64,
    adapt_tokens: f64,
    target_loss: f64,
    feasible: bool,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io)
}

impl FeasibilityGrid {
    /// `r,atpp,src_slack,tgt_slack,feasible`
    pub fn write_feasibility_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(
            path.as_ref(),
            self.cells.iter().map(|c| FeasibilityCsvRow {
                r: c.r,
                atpp: c.atpp,
                src_slack: c.slacks.src_slack,
                tgt_slack: c.slacks.tgt_slack,
                feasible: c.feasible,
            }),
        )
    }

    pub fn write_forgetting_csv(&self, path: impl AsRef<Path>, n: f64) -> Result<()> {
        write_csv(
            path.as_ref(),
            self.cells.iter().map(|c| ForgettingCsvRow {
                r: c.r,
                atpp: c.atpp,
                adapt_tokens: c.atpp * n,
                forgetting: c.slacks.forgetting,
                feasible: c.feasible,
            }),
        )
    }

    pub fn write_target_loss_csv(&self, path: impl AsRef<Path>, n: f64) -> Result<()> {
        write_csv(
            path.as_ref(),
            self.cells.iter().map(|c| TargetCsvRow {
                r: c.r,
                atpp: c.atpp,
                adapt_tokens: c.atpp * n,
                target_loss: c.slacks.target_loss,
                feasible: c.feasible,
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub feasible: bool,
    pub atpp_star: Option<f64>,
    pub r_star: Option<f64>,
    pub d_star: Option<f64>,
    pub flops: Option<f64>,
    pub binding_constraint: Option<BindingConstraint>,
    pub slacks_star: Option<Slacks>,
    pub n: f64,
    pub ptpp: f64,
    pub constraints: PlanConstraints,
    pub baseline_mode: BaselineMode,
    pub baseline_source_loss: f64,
    /// Forgetting budget in nats after resolving the tolerance mode.
    #[serde(with = "json_float")]
    pub forgetting_allowed: f64,
    pub per_r: Vec<RatioSolve>,
    pub feasibility_grid: FeasibilityGrid,
}

pub fn landscape(problem: &PlanProblem) -> Result<FeasibilityGrid> {
    problem.validate()?;
    Ok(landscape_with(&Evaluator::new(problem)?, &problem.search))
}

fn landscape_with(ev: &Evaluator, s: &SearchSettings) -> FeasibilityGrid {
    let rs = s.r_grid(s.landscape_r_points);
    let atpps = s.atpp_grid(s.landscape_atpp_points);
    let cells = rs
        .par_iter()
        .flat_map_iter(|&r| {
            atpps.iter().map(move |&a| {
                let slacks = ev.slacks(r, a);
                GridCell {
                    r,
                    atpp: a,
                    slacks,
                    feasible: slacks.feasible(),
                }
            })
        })
        .collect();
    FeasibilityGrid { r: rs, atpp: atpps, cells }
}

/// Golden-section search in logit between the grid neighbours of the best
/// ratio. Returns a strictly cheaper solve if there is one.
fn refine_ratio(ev: &Evaluator, per_r: &[RatioSolve], star: &RatioSolve, s: &SearchSettings) -> Option<RatioSolve> {
    let i = per_r.iter().position(|p| p.r == star.r)?;
    let lo = logit(per_r[i.saturating_sub(1)].r);
    let hi = logit(per_r[(i + 1).min(per_r.len() - 1)].r);
    let solve = |u: f64| solve_ratio(ev, 1.0 / (1.0 + (-u).exp()), s);
    let cost = |p: &RatioSolve| p.atpp.unwrap_or(f64::INFINITY);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (solve(c), solve(d));
    for _ in 0..40 {
        if cost(&fc) <= cost(&fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = solve(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = solve(d);
        }
    }
    let best = if cost(&fc) <= cost(&fd) { fc } else { fd };
    (cost(&best) < cost(star) * (1.0 - 1e-9)).then_some(best)
}

/// Global minimum of the per-ratio budgets. Budgets within `1e-9` relative of
/// the minimum tie; ties go to the larger minimum slack, then the smaller `r`.
/// The winning ratio is then refined between its grid neighbours.
pub fn plan(problem: &PlanProblem) -> Result<PlanResult> {
    problem.validate()?;
    let ev = Evaluator::new(problem)?;
    let s = &problem.search;
    let per_r: Vec<RatioSolve> = s
        .r_grid(s.r_points)
        .par_iter()
        .map(|&r| solve_ratio(&ev, r, s))
        .collect();

    let best_atpp = per_r.iter().filter_map(|p| p.atpp).fold(f64::INFINITY, f64::min);
    let star = per_r
        .iter()
        .filter(|p| p.atpp.is_some_and(|a| a <= best_atpp * (1.0 + 1e-9)))
        .min_by(|a, b| b.slacks.min().total_cmp(&a.slacks.min()).then(a.r.total_cmp(&b.r)))
        .copied();
    let star = star.map(|p| refine_ratio(&ev, &per_r, &p, s).unwrap_or(p));

    let binding = star.map(|p| {
        if p.atpp == Some(s.atpp_min) && p.slacks.min() > 0.0 {
            BindingConstraint::SearchFloor
        } else if p.slacks.src_slack < p.slacks.tgt_slack {
            BindingConstraint::Forgetting
        } else {
            BindingConstraint::Target
        }
    });
    let atpp_star = star.and_then(|p| p.atpp);
    Ok(PlanResult {
        feasible: star.is_some(),
        atpp_star,
        r_star: star.map(|p| p.r),
        d_star: atpp_star.map(|a| a * problem.n),
        flops: atpp_star.map(|a| flops(problem.n, a)),
        binding_constraint: binding,
        slacks_star: star.map(|p| p.slacks),
        n: problem.n,
        ptpp: problem.ptpp,
        constraints: problem.constraints,
        baseline_mode: problem.baseline,
        baseline_source_loss: ev.baseline,
        forgetting_allowed: ev.allowed,
        per_r,
        feasibility_grid: landscape_with(&ev, s),
    })
}

/// Independent re-check of a plan through the public law evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCheck {
    pub ok: bool,
    #[serde(with = "json_float::option")]
    pub src_slack: Option<f64>,
    #[serde(with = "json_float::option")]
    pub tgt_slack: Option<f64>,
}

pub const VERIFY_SLACK_TOL: f64 = 1e-6;

pub fn verify_plan(problem: &PlanProblem, result: &PlanResult) -> Result<PlanCheck> {
    problem.validate()?;
    let baseline = problem.baseline_loss()?;
    let allowed = problem.constraints.allowed_forgetting(baseline);
    let tau = problem.constraints.target_threshold;
    if !result.feasible {
        // every ratio must really be infeasible at the largest budget
        let mut ok = true;
        for p in &result.per_r {
            let x = EvalPoint::new(problem.n, problem.search.atpp_max * problem.n, p.r, problem.ptpp)?;
            let f = forgetting(&problem.src, &x, problem.baseline)?;
            let t = eval_law(problem.tgt.form, &problem.tgt.params, &x)?;
            ok &= f > allowed || t > tau;
        }
        return Ok(PlanCheck {
            ok,
            src_slack: None,
            tgt_slack: None,
        });
    }
    let (Some(a), Some(r)) = (result.atpp_star, result.r_star) else {
        return Ok(PlanCheck {
            ok: false,
            src_slack: None,
            tgt_slack: None,
        });
    };
    let x = EvalPoint::new(problem.n, a * problem.n, r, problem.ptpp)?;
    let src_slack = allowed - forgetting(&problem.src, &x, problem.baseline)?;
    let tgt_slack = tau - eval_law(problem.tgt.form, &problem.tgt.params, &x)?;
    let d_ok = result.d_star.is_some_and(|d| (d - a * problem.n).abs() <= 1e-12 * d);
    let f_ok = result.flops.is_some_and(|f| (f - flops(problem.n, a)).abs() <= 1e-12 * f);
    Ok(PlanCheck {
        ok: src_slack >= -VERIFY_SLACK_TOL && tgt_slack >= -VERIFY_SLACK_TOL && d_ok && f_ok,
        src_slack: Some(src_slack),
        tgt_slack: Some(tgt_slack),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::{LawForm, LawParams};
    use approx::assert_relative_eq;

    fn fitted(form: LawForm, params: LawParams) -> FitResult {
        FitResult {
            form,
            params,
            objective: 0.0,
            converged: true,
            n_iters: 0,
            best_start_index: 0,
            seed: 0,
            projected_grad_norm: 0.0,
            n_points: 0,
            starts: vec![],
        }
    }

    fn src_params() -> LawParams {
        crate::synth::source_fixture_params()
    }

    fn tgt_params() -> LawParams {
        crate::synth::fixture_params()
    }

    fn problem(tau: f64, forget: f64, mode: ToleranceMode) -> PlanProblem {
        let mut p = PlanProblem::new(
            fitted(LawForm::AdditiveFloor, src_params()),
            fitted(LawForm::GatedPlusFloor, tgt_params()),
            8.1e9,
            279.0,
            PlanConstraints {
                forgetting_tolerance: forget,
                target_threshold: tau,
                mode,
            },
        );
        p.search.r_points = 128;
        p
    }

    #[test]
    fn flops_examples() {
        assert_eq!(flops(8.1e9, 0.0), 0.0);
        assert_relative_eq!(flops(8.1e9, 8.9), 3.504e21, max_relative = 1e-3);
        assert_relative_eq!(flops(8.1e9, 8.9), 6.0 * 8.1e9 * 8.9 * 8.1e9, max_relative = 1e-15);
        assert_eq!(flops(1e9, 4.0), 2.0 * flops(1e9, 2.0));
    }

    #[test]
    fn tolerance_parsing() {
        let t: Tolerance = "2%".parse().unwrap();
        assert_relative_eq!(t.value, 0.02);
        assert_eq!(t.mode, ToleranceMode::Relative);
        let t: Tolerance = "0.05".parse().unwrap();
        assert_eq!((t.value, t.mode), (0.05, ToleranceMode::Absolute));
        assert_eq!("inf".parse::<Tolerance>().unwrap().value, f64::INFINITY);
        assert!("-1".parse::<Tolerance>().is_err());
        assert!("x%".parse::<Tolerance>().is_err());
    }

    #[test]
    fn forgetting_examples() {
        let src = fitted(LawForm::AdditiveFloor, src_params());
        let x = EvalPoint::new(8.1e9, 1e10, 0.25, 279.0).unwrap();
        let at_x = src.predict(&x);
        assert_eq!(forgetting(&src, &x, BaselineMode::Measured(at_x)).unwrap(), 0.0);
        let mut x0 = x;
        x0.d = 0.0;
        assert!(forgetting(&src, &x0, BaselineMode::LawLimit).is_err());
        // baseline 3.0, eval 3.06
        let flat = fitted(
            LawForm::DcptBaseline,
            LawParams {
                e: 3.06,
                alpha: 1.0,
                beta: 1.0,
                nu: 1.0,
                gamma: 1.0,
                ..LawParams::default()
            },
        );
        let df = forgetting(&flat, &x, BaselineMode::Measured(3.0)).unwrap();
        assert_relative_eq!(df, 0.06, max_relative = 1e-12);
        let rel = PlanConstraints {
            forgetting_tolerance: 0.02,
            target_threshold: 1.0,
            mode: ToleranceMode::Relative,
        };
        assert_relative_eq!(df / 3.0, rel.forgetting_tolerance, max_relative = 1e-12);
        assert_relative_eq!(rel.allowed_forgetting(3.0), 0.06, max_relative = 1e-12);
    }

    #[test]
    fn r_grid_shape() {
        let s = SearchSettings::default();
        let g = s.r_grid(512);
        assert_eq!(g.len(), 512);
        assert_eq!((g[0], g[511]), (1e-3, R_MAX));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let steps: Vec<f64> = g.windows(2).map(|w| logit(w[1]) - logit(w[0])).collect();
        // 1 - r loses digits near r = 1
        assert!(steps.iter().all(|d| (d - steps[0]).abs() < 1e-4 * steps[0]));
    }

    #[test]
    fn unreachable_floor_is_infeasible() {
        // target loss cannot go below E + A/N^alpha + C-term + floor
        let p = problem(1.0, f64::INFINITY, ToleranceMode::Absolute);
        let res = plan(&p).unwrap();
        assert!(!res.feasible);
        assert!(res.per_r.iter().all(|s| s.violated == Some(Violation::Target)));
        assert!(verify_plan(&p, &res).unwrap().ok);
        let zero = plan(&problem(0.0, 0.02, ToleranceMode::Relative)).unwrap();
        assert!(!zero.feasible && zero.atpp_star.is_none());
    }

    #[test]
    fn feasible_plan_satisfies_constraints() {
        let p = problem(1.8, 0.02, ToleranceMode::Relative);
        let res = plan(&p).unwrap();
        assert!(res.feasible, "{:?}", res.per_r[0]);
        let check = verify_plan(&p, &res).unwrap();
        assert!(check.ok, "{check:?}");
        let a = res.atpp_star.unwrap();
        assert_eq!(res.d_star.unwrap(), a * 8.1e9);
        assert!(res.per_r.iter().filter_map(|s| s.atpp).all(|b| b >= a * (1.0 - 1e-9)));
        assert!(res.per_r.iter().all(|s| s.method == SolveMethod::Bisection));
        // bisection agrees with a dense scan within one scan step
        let r = res.r_star.unwrap();
        let ev = Evaluator::new(&p).unwrap();
        let dense = p.search;
        let scan = dense.atpp_grid(dense.scan_points);
        let first = scan.into_iter().find(|&b| ev.slacks(r, b).feasible()).unwrap();
        let step = (dense.atpp_max / dense.atpp_min).ln() / (dense.scan_points - 1) as f64;
        assert!((first.ln() - a.ln()).abs() <= step + 1e-9);
    }

    #[test]
    fn dropping_forgetting_matches_target_only() {
        let p = problem(1.8, f64::INFINITY, ToleranceMode::Absolute);
        let res = plan(&p).unwrap();
        assert!(res.feasible);
        let ev = Evaluator::new(&p).unwrap();
        for s in &res.per_r {
            let Some(a) = s.atpp else {
                assert_eq!(s.violated, Some(Violation::Target));
                continue;
            };
            assert!(ev.slacks(s.r, a).tgt_slack >= 0.0);
            assert!(a == p.search.atpp_min || ev.slacks(s.r, a * (1.0 - 2e-6)).tgt_slack < 0.0);
        }
        assert_eq!(res.binding_constraint, Some(BindingConstraint::Target));
    }

    #[test]
    fn tighter_tau_never_cheaper() {
        let mut last = 0.0;
        for k in 0..8 {
            let tau = 2.2 - 0.05 * k as f64;
            let res = plan(&problem(tau, 0.02, ToleranceMode::Relative)).unwrap();
            match res.atpp_star {
                Some(a) => {
                    assert!(a >= last, "tau {tau}: {a} < {last}");
                    last = a;
                }
                None => last = f64::INFINITY,
            }
        }
    }

    #[test]
    fn json_round_trip_with_infinite_tolerance() {
        let mut p = problem(1.8, f64::INFINITY, ToleranceMode::Absolute);
        p.search.landscape_r_points = 4;
        p.search.landscape_atpp_points = 5;
        let res = plan(&p).unwrap();
        assert_eq!(res.feasibility_grid.cells.len(), 20);
        let text = serde_json::to_string(&res).unwrap();
        assert!(text.contains("\"inf\""));
        let back: PlanResult = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        let pt = serde_json::to_string(&p).unwrap();
        let back: PlanProblem = serde_json::from_str(&pt).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn unconverged_fit_rejected() {
        let mut p = problem(1.8, 0.02, ToleranceMode::Relative);
        p.tgt.converged = false;
        assert!(matches!(plan(&p), Err(Error::Plan(_))));
        p.allow_unconverged = true;
        assert!(plan(&p).is_ok());
    }
}
