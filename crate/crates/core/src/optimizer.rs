//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Directions come from the two-loop recursion over the last `history_size`
//! curvature pairs, scaled by `sᵀy / yᵀy` of the newest pair. The first
//! direction (and any restart) is steepest descent normalized by `‖g‖∞`.
//! The line search brackets a step and zooms with safeguarded cubic
//! interpolation (quadratic when the cubic is undefined).

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{BattraeError, Result};
use crate::linalg::{axpy, dot, inf_norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub history_size: usize,
    pub max_iterations: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Stop once `‖g‖∞` falls to this value.
    pub grad_tolerance: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history_size: 10,
            max_iterations: 100,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            grad_tolerance: 1e-5,
            max_line_search_steps: 40,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(BattraeError::Input(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if self.history_size == 0 {
            return Err(BattraeError::Input("history size must be >= 1".into()));
        }
        if self.max_line_search_steps == 0 {
            return Err(BattraeError::Input(
                "line search needs at least one step".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

/// One accepted iterate. Record 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub step: f64,
    /// Directional derivative `dᵀg` at the start of the line search.
    pub slope: f64,
    pub evaluations: usize,
}

impl IterationRecord {
    /// One JSON object per line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub skipped_updates: usize,
}

impl OptimizationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn initial_value(&self) -> f64 {
        self.records[0].value
    }

    pub fn final_value(&self) -> f64 {
        self.records
            .last()
            .expect("at least the start record")
            .value
    }

    pub fn line_search_failed(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }

    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].value <= w[0].value)
    }

    pub fn write_json_lines<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(w, "{}", r.to_json_line())?;
        }
        Ok(())
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Probe {
    alpha: f64,
    f: f64,
    slope: f64,
}

/// Outcome, evaluations used, and the best Armijo point seen.
type SearchResult = (Outcome, usize, Option<(f64, Point)>);

struct LineSearch<'a, F> {
    eval: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    cfg: &'a LbfgsConfig,
    evaluations: usize,
    best: Option<(f64, Point)>,
}

enum Outcome {
    Accepted(f64, Point),
    Failed,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn probe(&mut self, alpha: f64) -> Result<(Probe, Point)> {
        let mut x = self.x.to_vec();
        axpy(alpha, self.dir, &mut x);
        let (f, g) = checked_eval(self.eval, &x)?;
        self.evaluations += 1;
        let slope = dot(&g, self.dir);
        let point = Point { x, f, g };
        let armijo = f <= self.f0 + self.cfg.wolfe_c1 * alpha * self.slope0;
        if armijo && f < self.f0 && self.best.as_ref().is_none_or(|(_, b)| f < b.f) {
            self.best = Some((
                alpha,
                Point {
                    x: point.x.clone(),
                    f,
                    g: point.g.clone(),
                },
            ));
        }
        Ok((Probe { alpha, f, slope }, point))
    }

    fn sufficient(&self, p: &Probe) -> bool {
        p.f <= self.f0 + self.cfg.wolfe_c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.slope.abs() <= -self.cfg.wolfe_c2 * self.slope0
    }

    fn budget_left(&self) -> bool {
        self.evaluations < self.cfg.max_line_search_steps
    }

    fn run(mut self, alpha_init: f64) -> Result<SearchResult> {
        let mut prev = Probe {
            alpha: 0.0,
            f: self.f0,
            slope: self.slope0,
        };
        let mut alpha = alpha_init;
        let mut first = true;
        while self.budget_left() {
            let (cur, point) = self.probe(alpha)?;
            if !self.sufficient(&cur) || (!first && cur.f >= prev.f) {
                return self.finish_zoom(prev, cur);
            }
            if self.curvature(&cur) {
                let a = cur.alpha;
                return Ok((Outcome::Accepted(a, point), self.evaluations, None));
            }
            if cur.slope >= 0.0 {
                return self.finish_zoom(cur, prev);
            }
            first = false;
            prev = cur;
            alpha *= 2.0;
        }
        let best = self.best.take();
        Ok((Outcome::Failed, self.evaluations, best))
    }

    fn finish_zoom(mut self, lo: Probe, hi: Probe) -> Result<SearchResult> {
        let outcome = self.zoom(lo, hi)?;
        let best = self.best.take();
        Ok((outcome, self.evaluations, best))
    }

    fn zoom(&mut self, mut lo: Probe, mut hi: Probe) -> Result<Outcome> {
        while self.budget_left() {
            let alpha = interpolate(&lo, &hi);
            if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
                break;
            }
            let (cur, point) = self.probe(alpha)?;
            if !self.sufficient(&cur) || cur.f >= lo.f {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Ok(Outcome::Accepted(cur.alpha, point));
                }
                if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        Ok(Outcome::Failed)
    }
}

/// Minimizer of the cubic through both ends (quadratic fallback), kept at
/// least 10% of the interval away from either end.
fn interpolate(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let width = right - left;
    let guard_lo = left + 0.1 * width;
    let guard_hi = right - 0.1 * width;

    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mut t = f64::NAN;
    if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        let denom = hi.slope - lo.slope + 2.0 * d2;
        if denom != 0.0 {
            t = b - (b - a) * (hi.slope + d2 - d1) / denom;
        }
    }
    if !t.is_finite() {
        let curv = hi.f - lo.f - lo.slope * (b - a);
        if curv > 0.0 {
            t = a - lo.slope * (b - a) * (b - a) / (2.0 * curv);
        }
    }
    if t.is_finite() && t >= guard_lo && t <= guard_hi {
        t
    } else if t.is_finite() {
        t.clamp(guard_lo, guard_hi)
    } else {
        0.5 * (left + right)
    }
}

fn checked_eval<F>(eval: &mut F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (f, g) = eval(x)?;
    if g.len() != x.len() {
        return Err(BattraeError::Dimension {
            expected: x.len(),
            found: g.len(),
            context: "gradient length".into(),
        });
    }
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(BattraeError::numeric("optimizer objective evaluation"));
    }
    Ok((f, g))
}

struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl History {
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let Some((s_new, y_new, _)) = self.pairs.back() else {
            let scale = inf_norm(g);
            return g.iter().map(|v| -v / scale).collect();
        };
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push(a);
        }
        let gamma = dot(s_new, y_new) / dot(y_new, y_new);
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// Stores the pair unless `sᵀy ≤ 1e−10 ‖s‖‖y‖`. Returns whether it was kept.
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if sy <= 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }
}

/// Minimizes `eval` from `x0`.
pub fn minimize<F>(
    eval: F,
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
) -> Result<(Vec<f64>, OptimizationTrace)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_with_observer(eval, x0, cfg, |_| {})
}

/// As [`minimize`], calling `observer` on every accepted iterate as it happens.
pub fn minimize_with_observer<F, O>(
    mut eval: F,
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
    mut observer: O,
) -> Result<(Vec<f64>, OptimizationTrace)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&IterationRecord),
{
    cfg.validate()?;
    let (f, g) = checked_eval(&mut eval, &x0)?;
    let mut cur = Point { x: x0, f, g };
    let start = IterationRecord {
        iteration: 0,
        value: cur.f,
        grad_inf_norm: inf_norm(&cur.g),
        step: 0.0,
        slope: 0.0,
        evaluations: 1,
    };
    observer(&start);
    let mut records = vec![start];
    let mut history = History {
        pairs: VecDeque::with_capacity(cfg.history_size),
        capacity: cfg.history_size,
    };
    let mut skipped = 0;
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=cfg.max_iterations {
        if inf_norm(&cur.g) <= cfg.grad_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut dir = history.direction(&cur.g);
        let mut slope = dot(&dir, &cur.g);
        if slope.is_nan() || slope >= 0.0 {
            history.pairs.clear();
            dir = history.direction(&cur.g);
            slope = dot(&dir, &cur.g);
        }
        let search = LineSearch {
            eval: &mut eval,
            x: &cur.x,
            dir: &dir,
            f0: cur.f,
            slope0: slope,
            cfg,
            evaluations: 0,
            best: None,
        };
        let (outcome, evaluations, best) = search.run(1.0)?;
        let (step, next, failed) = match (outcome, best) {
            (Outcome::Accepted(a, p), _) => (a, p, false),
            (Outcome::Failed, Some((a, p))) => (a, p, true),
            (Outcome::Failed, None) => {
                termination = Termination::LineSearchFailed;
                break;
            }
        };

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        if !history.push(s, y) {
            skipped += 1;
        }
        cur = next;
        let record = IterationRecord {
            iteration,
            value: cur.f,
            grad_inf_norm: inf_norm(&cur.g),
            step,
            slope,
            evaluations,
        };
        observer(&record);
        records.push(record);
        if failed {
            termination = Termination::LineSearchFailed;
            break;
        }
        if inf_norm(&cur.g) <= cfg.grad_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }
    }
    Ok((
        cur.x,
        OptimizationTrace {
            records,
            termination,
            skipped_updates: skipped,
        },
    ))
}
