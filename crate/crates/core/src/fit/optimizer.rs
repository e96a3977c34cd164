//! Box-constrained limited-memory BFGS.
//!
//! Each iteration fixes the variables sitting on a bound whose gradient
//! pushes outward, builds the two-loop L-BFGS direction over the remaining
//! free variables, and then searches along the projected path
//! `P(x + alpha * d)`. When the unit step stays inside the box the search
//! enforces the strong Wolfe conditions; otherwise it backtracks along the
//! projection arc under an Armijo test.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct BoxLbfgs {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub grad_tol: f64,
    /// Stop when `(f_k - f_{k+1}) <= f_tol * max(|f_k|, |f_{k+1}|, 1)`.
    pub f_tol: f64,
}

impl Default for BoxLbfgs {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 2000,
            grad_tol: 1e-10,
            f_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ProjectedGradient,
    ObjectiveStall,
    MaxIters,
    LineSearch,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_initial: f64,
    pub iters: usize,
    pub evals: usize,
    pub pg_norm: f64,
    pub termination: Termination,
}

/// Projected-gradient norm below which a stalled run still counts as converged.
pub const CONVERGED_PG: f64 = 1e-6;

impl Minimum {
    pub fn converged(&self) -> bool {
        match self.termination {
            Termination::ProjectedGradient => true,
            Termination::NonFinite => false,
            _ => self.pg_norm <= CONVERGED_PG,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// `|| P(x - g) - x ||_inf`
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, h))| ((xi - gi).clamp(*l, *h) - xi).abs())
        .fold(0.0, f64::max)
}

struct Problem<'a, F> {
    func: F,
    lo: &'a [f64],
    hi: &'a [f64],
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Problem<'_, F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        (self.func)(x, g)
    }
}

struct Trial {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LS_EVALS: usize = 40;

impl BoxLbfgs {
    /// Minimizes `func` over the box `[lo, hi]` starting from `x0`.
    ///
    /// `func(x, grad)` returns the objective and writes the gradient.
    pub fn minimize<F>(&self, func: F, x0: &[f64], lo: &[f64], hi: &[f64]) -> Minimum
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        let n = x0.len();
        assert!(lo.len() == n && hi.len() == n, "bound length mismatch");
        let mut prob = Problem {
            func,
            lo,
            hi,
            evals: 0,
        };

        let mut x = x0.to_vec();
        project(&mut x, lo, hi);
        let mut g = vec![0.0; n];
        let mut f = prob.eval(&x, &mut g);
        let f_initial = f;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Minimum {
                x,
                f,
                f_initial,
                iters: 0,
                evals: prob.evals,
                pg_norm: f64::INFINITY,
                termination: Termination::NonFinite,
            };
        }

        let mut s_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(self.memory);
        let mut y_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(self.memory);
        let mut termination = Termination::MaxIters;
        let mut iters = 0;

        while iters < self.max_iters {
            let pg = projected_gradient_norm(&x, &g, lo, hi);
            if pg <= self.grad_tol {
                termination = Termination::ProjectedGradient;
                break;
            }
            iters += 1;

            let free: Vec<bool> = (0..n)
                .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
                .collect();

            let mut d = two_loop(&g, &free, &s_hist, &y_hist);
            let mut gd = dot(&g, &d);
            if !(gd < 0.0) || d.iter().any(|v| !v.is_finite()) {
                s_hist.clear();
                y_hist.clear();
                d = g.iter().zip(&free).map(|(gi, &fr)| if fr { -gi } else { 0.0 }).collect();
                gd = dot(&g, &d);
            }
            if s_hist.is_empty() {
                // first step (or restart): unit step of size at most 1 in the inf-norm
                let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if dmax > 1.0 {
                    d.iter_mut().for_each(|v| *v /= dmax);
                    gd /= dmax;
                }
            }

            let trial = match self.line_search(&mut prob, &x, f, &g, &d, gd) {
                Some(t) => t,
                None if !s_hist.is_empty() => {
                    // memory produced a poor direction; retry once from steepest descent
                    s_hist.clear();
                    y_hist.clear();
                    continue;
                }
                None => {
                    termination = Termination::LineSearch;
                    break;
                }
            };
            if !trial.f.is_finite() {
                termination = Termination::NonFinite;
                break;
            }

            let s: Vec<f64> = trial.x.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = trial.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > f64::EPSILON * dot(&y, &y) && sy > 0.0 {
                if s_hist.len() == self.memory {
                    s_hist.pop_front();
                    y_hist.pop_front();
                }
                s_hist.push_back(s);
                y_hist.push_back(y);
            }

            let f_old = f;
            x = trial.x;
            f = trial.f;
            g = trial.g;
            if f_old - f <= self.f_tol * f_old.abs().max(f.abs()).max(1.0) {
                termination = Termination::ObjectiveStall;
                break;
            }
        }

        Minimum {
            pg_norm: projected_gradient_norm(&x, &g, lo, hi),
            x,
            f,
            f_initial,
            iters,
            evals: prob.evals,
            termination,
        }
    }

    fn line_search<F>(
        &self,
        prob: &mut Problem<'_, F>,
        x: &[f64],
        f0: f64,
        g0: &[f64],
        d: &[f64],
        gd0: f64,
    ) -> Option<Trial>
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        let alpha_bound = max_step(x, d, prob.lo, prob.hi);
        if alpha_bound >= 1.0 {
            if let Some(t) = wolfe_search(prob, x, f0, d, gd0, alpha_bound) {
                return Some(t);
            }
        }
        projected_backtrack(prob, x, f0, g0, d)
    }
}

/// Largest step keeping `x + alpha * d` inside the box.
fn max_step(x: &[f64], d: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut a = f64::INFINITY;
    for i in 0..x.len() {
        if d[i] > 0.0 {
            a = a.min((hi[i] - x[i]) / d[i]);
        } else if d[i] < 0.0 {
            a = a.min((lo[i] - x[i]) / d[i]);
        }
    }
    a.max(0.0)
}

fn two_loop(g: &[f64], free: &[bool], s_hist: &VecDeque<Vec<f64>>, y_hist: &VecDeque<Vec<f64>>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(free).map(|(a, &fr)| if fr { *a } else { 0.0 }).collect()
    };
    let mut q = mask(g);
    let m = s_hist.len();
    let mut alphas = vec![0.0; m];
    let mut rhos = vec![0.0; m];
    for i in (0..m).rev() {
        let s = &s_hist[i];
        let y = &y_hist[i];
        rhos[i] = 1.0 / dot(s, y);
        alphas[i] = rhos[i] * dot(s, &q);
        for (qj, yj) in q.iter_mut().zip(y) {
            *qj -= alphas[i] * yj;
        }
    }
    if let (Some(s), Some(y)) = (s_hist.back(), y_hist.back()) {
        let h0 = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= h0);
    }
    for i in 0..m {
        let s = &s_hist[i];
        let y = &y_hist[i];
        let beta = rhos[i] * dot(y, &q);
        for (qj, sj) in q.iter_mut().zip(s) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    let mut d = mask(&q);
    d.iter_mut().for_each(|v| *v = -*v);
    d
}

fn trial_at<F>(prob: &mut Problem<'_, F>, x: &[f64], d: &[f64], alpha: f64) -> Trial
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    // inside the box this only guards against rounding past a bound
    project(&mut xt, prob.lo, prob.hi);
    let mut gt = vec![0.0; x.len()];
    let ft = prob.eval(&xt, &mut gt);
    Trial {
        x: xt,
        f: ft,
        g: gt,
    }
}

/// Strong Wolfe line search (bracketing + zoom with cubic interpolation),
/// restricted to `alpha <= alpha_max`.
fn wolfe_search<F>(
    prob: &mut Problem<'_, F>,
    x: &[f64],
    f0: f64,
    d: &[f64],
    gd0: f64,
    alpha_max: f64,
) -> Option<Trial>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let alpha_max = alpha_max.min(1e10);
    let mut evals = 0;
    let mut prev = (0.0, f0, gd0);
    let mut alpha = 1.0f64.min(alpha_max);
    let mut best: Option<Trial> = None;
    loop {
        let t = trial_at(prob, x, d, alpha);
        evals += 1;
        let gd = dot(&t.g, d);
        if !t.f.is_finite() {
            // step into a non-finite region: shrink towards the last good point
            if evals >= MAX_LS_EVALS {
                return best;
            }
            alpha = 0.5 * (prev.0 + alpha);
            continue;
        }
        let armijo = t.f <= f0 + C1 * alpha * gd0;
        if !armijo || (evals > 1 && t.f >= prev.1) {
            return zoom(prob, x, f0, d, gd0, prev, (alpha, t.f, gd), evals, best);
        }
        if gd.abs() <= -C2 * gd0 {
            return Some(t);
        }
        if gd >= 0.0 {
            return zoom(prob, x, f0, d, gd0, (alpha, t.f, gd), prev, evals, Some(t));
        }
        if alpha >= alpha_max || evals >= MAX_LS_EVALS {
            // sufficient decrease holds; accept even without the curvature condition
            return Some(t);
        }
        prev = (alpha, t.f, gd);
        best = Some(t);
        alpha = (2.0 * alpha).min(alpha_max);
    }
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    prob: &mut Problem<'_, F>,
    x: &[f64],
    f0: f64,
    d: &[f64],
    gd0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    mut evals: usize,
    mut best: Option<Trial>,
) -> Option<Trial>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    while evals < MAX_LS_EVALS {
        let alpha = interpolate(lo, hi);
        let t = trial_at(prob, x, d, alpha);
        evals += 1;
        if !t.f.is_finite() {
            hi = (alpha, f64::INFINITY, 0.0);
            continue;
        }
        let gd = dot(&t.g, d);
        if t.f > f0 + C1 * alpha * gd0 || t.f >= lo.1 {
            hi = (alpha, t.f, gd);
        } else {
            if gd.abs() <= -C2 * gd0 {
                return Some(t);
            }
            if gd * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (alpha, t.f, gd);
            best = Some(t);
        }
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    best.filter(|t| t.f < f0)
}

/// Minimizer of the cubic through both bracket ends, safeguarded into the
/// middle 80% of the bracket; falls back to bisection.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, g0) = lo;
    let (a1, f1, g1) = hi;
    let (left, right) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let width = right - left;
    let mid = 0.5 * (a0 + a1);
    if !f1.is_finite() {
        return mid;
    }
    let d1 = g0 + g1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = d1 * d1 - g0 * g1;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let a = a1 - (a1 - a0) * (g1 + d2 - d1) / (g1 - g0 + 2.0 * d2);
    if a.is_finite() && a > left + 0.1 * width && a < right - 0.1 * width {
        a
    } else {
        mid
    }
}

/// Armijo backtracking along the projection arc `P(x + alpha * d)`.
fn projected_backtrack<F>(prob: &mut Problem<'_, F>, x: &[f64], f0: f64, g0: &[f64], d: &[f64]) -> Option<Trial>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut alpha = 1.0;
    for _ in 0..MAX_LS_EVALS {
        let t = trial_at(prob, x, d, alpha);
        let decrease: f64 = t.x.iter().zip(x).zip(g0).map(|((a, b), g)| g * (a - b)).sum();
        if t.f.is_finite() && decrease < 0.0 && t.f <= f0 + C1 * decrease {
            return Some(t);
        }
        alpha *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let opt = BoxLbfgs::default();
        for start in [[-2.0, 2.0], [2.0, 2.0], [2.0, -2.0], [-1.2, 1.0], [0.0, 0.0]] {
            let m = opt.minimize(rosenbrock, &start, &[-10.0, -10.0], &[10.0, 10.0]);
            assert!(m.converged(), "{start:?}: {:?}", m.termination);
            assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
        }
    }

    #[test]
    fn active_bound_rosenbrock() {
        // optimum with x0 <= 0.5 lies on the bound: x = (0.5, 0.25)
        let opt = BoxLbfgs::default();
        let m = opt.minimize(rosenbrock, &[-1.0, 2.0], &[-2.0, -2.0], &[0.5, 2.0]);
        assert!(m.converged());
        assert!((m.x[0] - 0.5).abs() < 1e-9 && (m.x[1] - 0.25).abs() < 1e-6, "{:?}", m.x);
        assert!(m.pg_norm <= CONVERGED_PG);
    }

    #[test]
    fn bound_constrained_quadratic() {
        // min sum (x_i - c_i)^2 with c outside the box on some coordinates
        let c = [3.0, -2.0, 0.5, 10.0];
        let f = |x: &[f64], g: &mut [f64]| {
            let mut s = 0.0;
            for i in 0..4 {
                g[i] = 2.0 * (x[i] - c[i]);
                s += (x[i] - c[i]).powi(2);
            }
            s
        };
        let m = BoxLbfgs::default().minimize(f, &[0.0; 4], &[-1.0; 4], &[1.0; 4]);
        for (xi, want) in m.x.iter().zip([1.0, -1.0, 0.5, 1.0]) {
            assert!((xi - want).abs() < 1e-12, "{:?}", m.x);
        }
        assert!(m.converged());
        assert!(m.f <= m.f_initial);
    }

    #[test]
    fn nonfinite_start_reported() {
        let f = |_: &[f64], _: &mut [f64]| f64::NAN;
        let m = BoxLbfgs::default().minimize(f, &[0.0], &[-1.0], &[1.0]);
        assert_eq!(m.termination, Termination::NonFinite);
        assert!(!m.converged());
    }
}
