//! Limited-memory BFGS with a projected backtracking (Armijo) line search.
//!
//! The search direction comes from the standard two-loop recursion over the
//! last `memory` curvature pairs. Candidates are projected onto optional box
//! bounds before they are evaluated, and a step is only accepted when the
//! objective does not increase, so the accepted losses are non-increasing.

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub const DEFAULT_MEMORY: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchParams {
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        LineSearchParams {
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 20,
        }
    }
}

/// Loss and gradient at a point, with whatever extra data the caller wants
/// carried alongside the accepted iterate.
#[derive(Clone, Debug)]
pub struct Evaluation<A> {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub aux: A,
}

#[derive(Clone, Debug)]
struct CurvaturePair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// A candidate satisfied the line search and was accepted.
    Accepted,
    /// The gradient vanished (or the projected direction was empty).
    Stationary,
    /// The line search ran out of backtracks; the point is unchanged.
    Stalled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub kind: StepKind,
    pub step_length: f64,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct LbfgsState<A> {
    memory: usize,
    history: VecDeque<CurvaturePair>,
    point: Vec<f64>,
    current: Evaluation<A>,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
    params: LineSearchParams,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<A: Clone> LbfgsState<A> {
    /// Evaluates the starting point.
    pub fn new<F>(start: Vec<f64>, evaluate: &mut F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Evaluation<A>>,
    {
        let current = evaluate(&start)?;
        check_evaluation(&current, start.len())?;
        Ok(LbfgsState {
            memory: DEFAULT_MEMORY,
            history: VecDeque::with_capacity(DEFAULT_MEMORY),
            point: start,
            current,
            bounds: None,
            params: LineSearchParams::default(),
        })
    }

    pub fn with_memory(mut self, memory: usize) -> Self {
        self.memory = memory.max(1);
        self
    }

    pub fn with_line_search(mut self, params: LineSearchParams) -> Self {
        self.params = params;
        self
    }

    /// Box constraints applied to every candidate. The current point is
    /// assumed to be feasible.
    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), self.point.len());
        assert_eq!(upper.len(), self.point.len());
        self.bounds = Some((lower, upper));
        self
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn loss(&self) -> f64 {
        self.current.loss
    }

    pub fn gradient(&self) -> &[f64] {
        &self.current.grad
    }

    pub fn current(&self) -> &Evaluation<A> {
        &self.current
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// `-H·g` by two-loop recursion. With an empty history the steepest
    /// descent direction is scaled to have unit ℓ1 length at most.
    fn direction(&self) -> Vec<f64> {
        let g = &self.current.grad;
        if self.history.is_empty() {
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            let scale = (1.0 / l1).min(1.0);
            return g.iter().map(|v| -scale * v).collect();
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(self.history.len());
        for pair in self.history.iter().rev() {
            let alpha = pair.rho * dot(&pair.s, &q);
            q.iter_mut().zip(&pair.y).for_each(|(q, y)| *q -= alpha * y);
            alphas.push(alpha);
        }
        let last = self.history.back().expect("non-empty history");
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
        for (pair, alpha) in self.history.iter().zip(alphas.into_iter().rev()) {
            let beta = pair.rho * dot(&pair.y, &q);
            q.iter_mut()
                .zip(&pair.s)
                .for_each(|(r, s)| *r += (alpha - beta) * s);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn project(&self, x: &mut [f64]) {
        if let Some((lo, hi)) = &self.bounds {
            for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
                *v = v.clamp(*l, *h);
            }
        }
    }

    /// Takes one L-BFGS iteration. A failed line search leaves the point
    /// unchanged, clears the curvature history and reports
    /// [`StepKind::Stalled`].
    pub fn step<F>(&mut self, evaluate: &mut F) -> Result<StepOutcome>
    where
        F: FnMut(&[f64]) -> Result<Evaluation<A>>,
    {
        let stationary = StepOutcome {
            kind: StepKind::Stationary,
            step_length: 0.0,
            evaluations: 0,
        };
        if self.current.grad.iter().all(|&g| g == 0.0) {
            return Ok(stationary);
        }
        let mut direction = self.direction();
        if dot(&direction, &self.current.grad) >= 0.0 {
            self.history.clear();
            direction = self.direction();
        }

        let f0 = self.current.loss;
        let mut t = 1.0;
        let mut evaluations = 0;
        let mut candidate = vec![0.0; self.point.len()];
        for _ in 0..=self.params.max_backtracks {
            for ((c, x), d) in candidate.iter_mut().zip(&self.point).zip(&direction) {
                *c = x + t * d;
            }
            self.project(&mut candidate);
            let step: Vec<f64> = candidate
                .iter()
                .zip(&self.point)
                .map(|(c, x)| c - x)
                .collect();
            if step.iter().all(|&s| s == 0.0) {
                // Fully blocked by the bounds, or t underflowed.
                if evaluations == 0 && t == 1.0 {
                    return Ok(stationary);
                }
                break;
            }
            let trial = evaluate(&candidate)?;
            check_evaluation(&trial, candidate.len())?;
            evaluations += 1;
            let slope = dot(&self.current.grad, &step);
            if trial.loss <= f0 + self.params.armijo * slope.min(0.0) {
                let y: Vec<f64> = trial
                    .grad
                    .iter()
                    .zip(&self.current.grad)
                    .map(|(a, b)| a - b)
                    .collect();
                let sy = dot(&step, &y);
                if sy > f64::EPSILON * dot(&y, &y).max(f64::MIN_POSITIVE) {
                    if self.history.len() == self.memory {
                        self.history.pop_front();
                    }
                    self.history.push_back(CurvaturePair {
                        s: step,
                        y,
                        rho: 1.0 / sy,
                    });
                }
                std::mem::swap(&mut self.point, &mut candidate);
                self.current = trial;
                return Ok(StepOutcome {
                    kind: StepKind::Accepted,
                    step_length: t,
                    evaluations,
                });
            }
            t *= self.params.shrink;
        }
        self.history.clear();
        Ok(StepOutcome {
            kind: StepKind::Stalled,
            step_length: 0.0,
            evaluations,
        })
    }
}

fn check_evaluation<A>(e: &Evaluation<A>, len: usize) -> Result<()> {
    if e.grad.len() != len {
        return Err(Error::ShapeMismatch {
            op: "lbfgs evaluation",
            lhs: vec![len],
            rhs: vec![e.grad.len()],
        });
    }
    if !e.loss.is_finite() || e.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("lbfgs objective".into()));
    }
    Ok(())
}
