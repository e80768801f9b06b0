//! Quasi-Newton minimization with an inverse-Hessian BFGS update and
//! Armijo backtracking.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Threshold on `gradient_scale · ‖g‖∞`.
    pub grad_tol: f64,
    pub step_tol: f64,
    pub armijo_c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub gradient_scale: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            armijo_c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            gradient_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
    LineSearch,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl BfgsOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::Step)
    }
}

/// Minimizes `f` starting at `x0`. `eval` returns the value and gradient;
/// `h0` is an optional initial inverse Hessian.
pub fn minimize<F>(mut eval: F, x0: DVector<f64>, h0: Option<DMatrix<f64>>, opts: &BfgsOptions) -> BfgsOutcome
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let identity = DMatrix::<f64>::identity(n, n);
    let mut h = h0.unwrap_or_else(|| identity.clone());
    let mut x = x0;
    let (mut f, mut g) = eval(&x);
    let stationary = |g: &DVector<f64>| opts.gradient_scale * g.amax() < opts.grad_tol;

    let mut iterations = 0;
    let termination = loop {
        if stationary(&g) {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut direction = -(&h * &g);
        let mut slope = g.dot(&direction);
        if !(slope < 0.0) {
            h = identity.clone();
            direction = -g.clone();
            slope = g.dot(&direction);
        }

        let mut accepted = line_search(&mut eval, &x, f, slope, &direction, opts);
        if accepted.is_none() && h != identity {
            h = identity.clone();
            direction = -g.clone();
            slope = g.dot(&direction);
            accepted = line_search(&mut eval, &x, f, slope, &direction, opts);
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break Termination::LineSearch;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H' = H - ρ(s (Hy)ᵀ + Hy sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        let step = s.amax();
        x = x_new;
        f = f_new;
        g = g_new;
        if stationary(&g) {
            break Termination::Gradient;
        }
        if step < opts.step_tol {
            break Termination::Step;
        }
    };

    BfgsOutcome {
        x,
        value: f,
        gradient: g,
        iterations,
        termination,
    }
}

fn line_search<F>(
    eval: &mut F,
    x: &DVector<f64>,
    f: f64,
    slope: f64,
    direction: &DVector<f64>,
    opts: &BfgsOptions,
) -> Option<(DVector<f64>, f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let slack = 4.0 * f64::EPSILON * f.abs();
    let mut alpha = 1.0;
    for _ in 0..opts.max_backtracks {
        let candidate = x + direction * alpha;
        let (fc, gc) = eval(&candidate);
        if fc.is_finite() && gc.iter().all(|v| v.is_finite()) && fc <= f + opts.armijo_c1 * alpha * slope + slack {
            return Some((candidate, fc, gc));
        }
        alpha *= opts.shrink;
    }
    None
}
