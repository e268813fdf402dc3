use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the projected gradient's largest entry falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease stays below this.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, memory: 7, grad_tol: 1e-6, f_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(lower[i], upper[i]))
}

fn projected_gradient_norm(x: &DVector<f64>, g: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> f64 {
    (project(&(x - g), lower, upper) - x).amax()
}

/// Minimises `f` over the box `[lower, upper]` with a projected limited-memory BFGS.
///
/// `f` returns the value and gradient; a non-finite value is treated as an infeasible point
/// and the line search backs off from it. Returns `None` only if `f` is not finite at the
/// projected start.
pub fn minimize_box<F>(mut f: F, x0: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>, opts: &LbfgsOptions) -> Option<Minimum>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = project(x0, lower, upper);
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut small_steps = 0;
    for iter in 0..opts.max_iter {
        if projected_gradient_norm(&x, &g, lower, upper) < opts.grad_tol {
            return Some(Minimum { x, value: fx, grad: g, iterations: iter, converged: true });
        }
        // Variables held at a bound by the gradient are frozen for this step.
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &DVector<f64>| DVector::from_fn(n, |i, _| if free[i] { v[i] } else { 0.0 });

        let mut q = mask(&g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * mask(s).dot(&q);
            q.axpy(-a, &mask(y), 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let (ms, my) = (mask(s), mask(y));
            let yy = my.dot(&my);
            if yy > 0.0 && ms.dot(&my) > 0.0 {
                q *= ms.dot(&my) / yy;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * mask(y).dot(&q);
            q.axpy(a - b, &mask(s), 1.0);
        }
        let mut direction = -q;
        if direction.dot(&g) >= 0.0 {
            history.clear();
            direction = -mask(&g);
        }

        let mut step = if history.is_empty() { 1.0 / mask(&g).amax().max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial = project(&(&x + &direction * step), lower, upper);
            let (ft, gt) = f(&trial);
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + 1e-4 * g.dot(&(&trial - &x)) {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            let converged = projected_gradient_norm(&x, &g, lower, upper) < opts.grad_tol.sqrt();
            return Some(Minimum { x, value: fx, grad: g, iterations: iter, converged });
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        let decrease = fx - fnew;
        x = xn;
        g = gn;
        fx = fnew;
        if decrease <= opts.f_tol * fx.abs().max(1.0) {
            small_steps += 1;
            if small_steps >= 3 {
                return Some(Minimum { x, value: fx, grad: g, iterations: iter + 1, converged: true });
            }
        } else {
            small_steps = 0;
        }
    }
    Some(Minimum { x, value: fx, grad: g, iterations: opts.max_iter, converged: false })
}
