//! Robust multistart fitting of adaptation laws.
//!
//! The objective is the mean Huber penalty of log residuals
//! `ln(pred) - ln(obs)`. Each start is minimized with [`BoxLbfgs`] inside the
//! parameter box. Positive parameters are optimized in log coordinates (the
//! box maps to a box), the gate amplitude and sharpness in linear ones.

mod optimizer;

pub use optimizer::{projected_gradient_norm, BoxLbfgs, Minimum, Termination, CONVERGED_PG};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, Measurement};
use crate::error::{Error, Result};
use crate::law::{value_and_grad, ActiveParams, EvalPoint, Law, LawForm, LawParams, Param, PointLogs};
use crate::metrics::{huber, huber_grad, DEFAULT_HUBER_DELTA};

/// Inclusive `[lo, hi]` box for every parameter, indexed by [`Param::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds(pub [(f64, f64); 12]);

impl Default for ParamBounds {
    fn default() -> Self {
        let mut b = [(1e-9, 1e6); 12];
        b[Param::E.index()] = (1e-9, 20.0);
        b[Param::Lambda.index()] = (0.0, 1.0 - 1e-6);
        b[Param::Zeta.index()] = (-20.0, 20.0);
        ParamBounds(b)
    }
}

impl ParamBounds {
    pub fn get(&self, p: Param) -> (f64, f64) {
        self.0[p.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub huber_delta: f64,
    pub bounds: ParamBounds,
    pub n_starts: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub objective_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            huber_delta: DEFAULT_HUBER_DELTA,
            bounds: ParamBounds::default(),
            n_starts: 64,
            seed: 0,
            max_iters: 2000,
            grad_tol: 1e-10,
            objective_tol: 1e-14,
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config("huber_delta must be > 0".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Config("n_starts must be >= 1".into()));
        }
        for p in Param::ALL {
            let (lo, hi) = self.bounds.get(p);
            if !(lo < hi) {
                return Err(Error::Config(format!("bounds for {} must satisfy lo < hi", p.symbol())));
            }
            if p != Param::Zeta && lo < 0.0 {
                return Err(Error::Config(format!("lower bound of {} must be >= 0", p.symbol())));
            }
            if p != Param::Zeta && p != Param::Lambda && lo <= 0.0 {
                return Err(Error::Config(format!("lower bound of {} must be > 0", p.symbol())));
            }
        }
        if self.bounds.get(Param::Lambda).1 >= 1.0 {
            return Err(Error::Config("upper bound of lambda must be < 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub initial: Option<f64>,
    #[serde(rename = "final")]
    pub final_objective: Option<f64>,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub form: LawForm,
    pub params: LawParams,
    pub objective: f64,
    pub converged: bool,
    pub n_iters: usize,
    pub best_start_index: usize,
    pub seed: u64,
    /// Projected-gradient infinity norm at the optimum, in optimizer coordinates.
    pub projected_grad_norm: f64,
    pub n_points: usize,
    pub starts: Vec<StartTrace>,
}

impl FitResult {
    pub fn law(&self) -> Law {
        Law {
            form: self.form,
            params: self.params,
        }
    }

    pub fn predict(&self, x: &EvalPoint) -> f64 {
        self.law().eval(x)
    }
}

#[derive(Serialize)]
struct FitResultOut<'a> {
    form: LawForm,
    params: ActiveParams,
    objective: f64,
    converged: bool,
    n_iters: usize,
    best_start_index: usize,
    seed: u64,
    projected_grad_norm: f64,
    n_points: usize,
    starts: &'a [StartTrace],
}

#[derive(Deserialize)]
struct FitResultIn {
    form: LawForm,
    params: std::collections::BTreeMap<String, f64>,
    objective: f64,
    converged: bool,
    n_iters: usize,
    best_start_index: usize,
    seed: u64,
    #[serde(default)]
    projected_grad_norm: f64,
    #[serde(default)]
    n_points: usize,
    #[serde(default)]
    starts: Vec<StartTrace>,
}

impl Serialize for FitResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FitResultOut {
            form: self.form,
            params: ActiveParams {
                form: self.form,
                params: self.params,
            },
            objective: self.objective,
            converged: self.converged,
            n_iters: self.n_iters,
            best_start_index: self.best_start_index,
            seed: self.seed,
            projected_grad_norm: self.projected_grad_norm,
            n_points: self.n_points,
            starts: &self.starts,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FitResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = FitResultIn::deserialize(d)?;
        let params = crate::law::active_params_from_map(raw.form, raw.params)
            .map_err(serde::de::Error::custom)?;
        Ok(FitResult {
            form: raw.form,
            params,
            objective: raw.objective,
            converged: raw.converged,
            n_iters: raw.n_iters,
            best_start_index: raw.best_start_index,
            seed: raw.seed,
            projected_grad_norm: raw.projected_grad_norm,
            n_points: raw.n_points,
            starts: raw.starts,
        })
    }
}

/// Precomputed per-point logs for the fitting loop.
struct Prepared {
    logs: Vec<PointLogs>,
    ln_obs: Vec<f64>,
}

fn check_slice(data: &[Measurement]) -> Result<Domain> {
    let first = data
        .first()
        .ok_or_else(|| Error::Data("cannot fit an empty slice".into()))?;
    if data.iter().any(|m| m.domain != first.domain) {
        return Err(Error::Data("fit slice mixes target and source measurements".into()));
    }
    if let Some(i) = data.iter().position(|m| !(m.adapt_tokens > 0.0)) {
        return Err(Error::Row {
            row: i,
            message: "adapt_tokens must be > 0 for fitting".into(),
        });
    }
    Ok(first.domain)
}

fn prepare(data: &[Measurement]) -> Result<Prepared> {
    let mut logs = Vec::with_capacity(data.len());
    for m in data {
        logs.push(PointLogs::of(&EvalPoint::new(
            m.model_params,
            m.adapt_tokens,
            m.replay_ratio,
            m.ptpp,
        )?));
    }
    Ok(Prepared {
        logs,
        ln_obs: data.iter().map(|m| m.loss.ln()).collect(),
    })
}

/// Mean Huber penalty and its gradient with respect to all twelve raw parameters.
fn objective_raw(form: LawForm, p: &LawParams, data: &Prepared, delta: f64, grad: Option<&mut [f64; 12]>) -> f64 {
    let n = data.logs.len() as f64;
    let mut total = 0.0;
    match grad {
        None => {
            for (x, ln_y) in data.logs.iter().zip(&data.ln_obs) {
                let pred = value_and_grad(form, p, x, None);
                total += huber(pred.ln() - ln_y, delta);
            }
        }
        Some(out) => {
            *out = [0.0; 12];
            let mut g = [0.0; 12];
            for (x, ln_y) in data.logs.iter().zip(&data.ln_obs) {
                let pred = value_and_grad(form, p, x, Some(&mut g));
                let r = pred.ln() - ln_y;
                total += huber(r, delta);
                let w = huber_grad(r, delta) / pred;
                for (o, gi) in out.iter_mut().zip(&g) {
                    *o += w * gi;
                }
            }
            out.iter_mut().for_each(|v| *v /= n);
        }
    }
    total / n
}

/// Mean Huber loss of log residuals of `form` over `data`.
pub fn objective(p: &LawParams, form: LawForm, data: &[Measurement], delta: f64) -> Result<f64> {
    check_slice(data)?;
    p.validate_for(form)?;
    let prepared = prepare(data)?;
    let v = objective_raw(form, p, &prepared, delta, None);
    assert!(v.is_finite(), "objective must be finite for valid parameters");
    Ok(v)
}

/// Objective value and its gradient with respect to the form's active
/// parameters (raw coordinates, in [`LawForm::active`] order).
pub fn objective_gradient(
    p: &LawParams,
    form: LawForm,
    data: &[Measurement],
    delta: f64,
) -> Result<(f64, Vec<(Param, f64)>)> {
    check_slice(data)?;
    p.validate_for(form)?;
    let prepared = prepare(data)?;
    let mut g = [0.0; 12];
    let v = objective_raw(form, p, &prepared, delta, Some(&mut g));
    Ok((v, form.active().iter().map(|&q| (q, g[q.index()])).collect()))
}

fn log_coordinate(p: Param) -> bool {
    !matches!(p, Param::Lambda | Param::Zeta)
}

/// Maps between the law parameters and the optimizer's coordinate vector.
struct Coordinates {
    form: LawForm,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Coordinates {
    fn new(form: LawForm, bounds: &ParamBounds) -> Self {
        let (lo, hi) = form
            .active()
            .iter()
            .map(|&p| {
                let (l, h) = bounds.get(p);
                if log_coordinate(p) {
                    (l.ln(), h.ln())
                } else {
                    (l, h)
                }
            })
            .unzip();
        Self { form, lo, hi }
    }

    fn to_vec(&self, p: &LawParams) -> Vec<f64> {
        self.form
            .active()
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                let v = if log_coordinate(q) { p.get(q).ln() } else { p.get(q) };
                v.clamp(self.lo[i], self.hi[i])
            })
            .collect()
    }

    fn to_params(&self, u: &[f64]) -> LawParams {
        let mut p = LawParams::default();
        for (&q, &v) in self.form.active().iter().zip(u) {
            p.set(q, if log_coordinate(q) { v.exp() } else { v });
        }
        p
    }
}

/// Deterministic start points drawn from `cfg.seed`.
pub fn multistart_init(cfg: &FitConfig, form: LawForm, data: &[Measurement]) -> Vec<LawParams> {
    let min_loss = data
        .iter()
        .map(|m| m.loss)
        .fold(f64::INFINITY, f64::min);
    let min_loss = if min_loss.is_finite() { min_loss } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        rng.random_range(lo.ln()..=hi.ln()).exp()
    };
    (0..cfg.n_starts)
        .map(|_| {
            let mut p = LawParams::default();
            for &q in form.active() {
                let v = match q {
                    Param::E => rng.random_range(0.5 * min_loss..=min_loss),
                    Param::Lambda => rng.random_range(0.0..=0.95),
                    Param::Zeta => rng.random_range(-5.0..=5.0),
                    q if q.is_coefficient() => log_uniform(&mut rng, 1e-3, 1e3),
                    _ => log_uniform(&mut rng, 0.05, 1.5),
                };
                let (lo, hi) = cfg.bounds.get(q);
                p.set(q, v.clamp(lo, hi));
            }
            p
        })
        .collect()
}

/// Fits `form` to a single-domain slice from `cfg.n_starts` starts and keeps
/// the lowest final objective (ties go to the lower start index).
pub fn fit(data: &[Measurement], form: LawForm, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_slice(data)?;
    let prepared = prepare(data)?;
    let coords = Coordinates::new(form, &cfg.bounds);
    let starts = multistart_init(cfg, form, data);
    let optimizer = BoxLbfgs {
        memory: 10,
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        f_tol: cfg.objective_tol,
    };
    let active = form.active();
    let delta = cfg.huber_delta;

    let minima: Vec<Minimum> = starts
        .par_iter()
        .map(|start| {
            let func = |u: &[f64], grad: &mut [f64]| -> f64 {
                let p = coords.to_params(u);
                let mut g = [0.0; 12];
                let f = objective_raw(form, &p, &prepared, delta, Some(&mut g));
                for (i, &q) in active.iter().enumerate() {
                    // chain rule through theta = exp(u) for log coordinates
                    let scale = if log_coordinate(q) { p.get(q) } else { 1.0 };
                    grad[i] = g[q.index()] * scale;
                }
                f
            };
            optimizer.minimize(func, &coords.to_vec(start), &coords.lo, &coords.hi)
        })
        .collect();

    let finite = |v: f64| v.is_finite().then_some(v);
    let traces: Vec<StartTrace> = minima
        .iter()
        .map(|m| StartTrace {
            initial: finite(m.f_initial),
            final_objective: finite(m.f),
            iters: m.iters,
            converged: m.converged(),
        })
        .collect();

    let best = minima
        .iter()
        .enumerate()
        .filter(|(_, m)| m.f.is_finite())
        .min_by(|(i, a), (j, b)| a.f.total_cmp(&b.f).then(i.cmp(j)))
        .map(|(i, _)| i);
    let Some(best) = best else {
        return Err(Error::Fit {
            message: format!("all {} starts diverged", minima.len()),
            per_start: minima.iter().map(|m| m.f).collect(),
        });
    };
    let m = &minima[best];
    Ok(FitResult {
        form,
        params: coords.to_params(&m.x),
        objective: m.f,
        converged: m.converged(),
        n_iters: m.iters,
        best_start_index: best,
        seed: cfg.seed,
        projected_grad_norm: m.pg_norm,
        n_points: data.len(),
        starts: traces,
    })
}

/// Fit over `train` followed by `anchors`, each point weighted equally.
pub fn fit_with_anchors(
    train: &[Measurement],
    anchors: &[Measurement],
    form: LawForm,
    cfg: &FitConfig,
) -> Result<FitResult> {
    if anchors.is_empty() {
        return Err(Error::Config("fit_with_anchors requires at least one anchor".into()));
    }
    if let (Some(t), Some(a)) = (train.first(), anchors.first()) {
        if t.domain != a.domain {
            return Err(Error::Data("anchors and training data have different domains".into()));
        }
    }
    let mut all = Vec::with_capacity(train.len() + anchors.len());
    all.extend_from_slice(train);
    all.extend_from_slice(anchors);
    fit(&all, form, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn point(loss: f64) -> Measurement {
        Measurement::new(2.41e8, 1e9, 0.25, 31.0, Domain::Target, loss, false).unwrap()
    }

    fn flat_params(e: f64) -> LawParams {
        LawParams {
            e,
            alpha: 0.3,
            beta: 0.3,
            nu: 0.2,
            gamma: 0.5,
            ..LawParams::default()
        }
    }

    #[test]
    fn objective_examples() {
        let form = LawForm::DcptBaseline;
        let p = flat_params(2.0);
        assert_eq!(objective(&p, form, &[point(2.0)], 0.02).unwrap(), 0.0);
        let obs = 2.0 / 0.01f64.exp();
        assert_relative_eq!(objective(&p, form, &[point(obs)], 0.02).unwrap(), 5e-5, max_relative = 1e-9);
        let obs = 2.0 / 0.05f64.exp();
        assert_relative_eq!(objective(&p, form, &[point(obs)], 0.02).unwrap(), 8e-4, max_relative = 1e-9);
        assert!(objective(&p, form, &[], 0.02).is_err());
    }

    #[test]
    fn objective_rejects_mixed_domains() {
        let mut src = point(2.0);
        src.domain = Domain::Source;
        src.adapt_tokens = 2e9;
        let p = flat_params(2.0);
        assert!(objective(&p, LawForm::DcptBaseline, &[point(2.0), src], 0.02).is_err());
    }

    #[test]
    fn starts_deterministic_and_bounded() {
        let cfg = FitConfig {
            n_starts: 1000,
            seed: 11,
            ..FitConfig::default()
        };
        let data = [point(2.5), point(3.0)];
        let a = multistart_init(&cfg, LawForm::GatedPlusFloor, &data);
        let b = multistart_init(&cfg, LawForm::GatedPlusFloor, &data);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        for p in &a {
            for q in Param::ALL {
                let (lo, hi) = cfg.bounds.get(q);
                assert!(p.get(q) >= lo && p.get(q) <= hi, "{q:?} = {}", p.get(q));
            }
            assert!(p.e >= 1.25 && p.e <= 2.5);
        }
        let one = multistart_init(&FitConfig { n_starts: 1, ..cfg.clone() }, LawForm::DcptBaseline, &data);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].f, 0.0);
        assert_eq!(one[0].lambda, 0.0);
    }

    #[test]
    fn single_point_fit_interpolates() {
        let cfg = FitConfig {
            n_starts: 8,
            seed: 3,
            ..FitConfig::default()
        };
        let res = fit(&[point(2.7)], LawForm::DcptBaseline, &cfg).unwrap();
        assert!(res.objective <= 1e-12, "{}", res.objective);
        assert!(res.converged);
        assert_eq!(res.starts.len(), 8);
    }

    #[test]
    fn anchors_required() {
        let cfg = FitConfig::with_seed(1);
        assert!(matches!(
            fit_with_anchors(&[point(2.0)], &[], LawForm::DcptBaseline, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::default();
        cfg.validate().unwrap();
        cfg.n_starts = 0;
        assert!(cfg.validate().is_err());
        let cfg = FitConfig {
            huber_delta: 0.0,
            ..FitConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = FitConfig::default();
        cfg.bounds.0[Param::A.index()] = (1.0, 1.0);
        assert!(cfg.validate().is_err());
    }
}
