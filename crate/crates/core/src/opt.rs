//! Limited-memory BFGS with Armijo backtracking, the workhorse behind the
//! modified log-Sobolev estimate and the Benamou–Brenier action solver.
//! Two-loop recursion in the manner of Nocedal (1980).

use std::collections::VecDeque;

use crate::scalar::Scalar;

pub(crate) struct LbfgsOptions<T> {
    pub memory: usize,
    pub max_iter: usize,
    /// absolute ∞-norm target for the gradient
    pub grad_tol: T,
    pub c1: T,
    pub max_line_search: usize,
}

impl<T: Scalar> Default for LbfgsOptions<T> {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iter: 500,
            grad_tol: T::of(1e-9),
            c1: T::of(1e-4),
            max_line_search: 50,
        }
    }
}

pub(crate) struct LbfgsResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub converged: bool,
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn lbfgs<T, F, G>(x0: Vec<T>, f: F, grad: G, opts: &LbfgsOptions<T>) -> LbfgsResult<T>
where
    T: Scalar,
    F: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::new(); // (s, y, rho)
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let gnorm = inf_norm(&g);
        if gnorm <= opts.grad_tol || !fx.is_finite() {
            return LbfgsResult { x, value: fx, converged: gnorm <= opts.grad_tol };
        }
        // two-loop recursion
        let mut d: Vec<T> = g.iter().map(|&v| -v).collect();
        if !history.is_empty() {
            let mut alphas = Vec::with_capacity(history.len());
            for (s, y, rho) in history.iter().rev() {
                let a = *rho * dot(s, &d);
                for i in 0..n {
                    d[i] = d[i] - a * y[i];
                }
                alphas.push(a);
            }
            let (s_last, y_last, _) = history.back().expect("non-empty history");
            let gamma = dot(s_last, y_last) / dot(y_last, y_last).max(T::min_positive_value());
            for v in d.iter_mut() {
                *v = *v * gamma;
            }
            for ((s, y, rho), &a) in history.iter().zip(alphas.iter().rev()) {
                let b = *rho * dot(y, &d);
                for i in 0..n {
                    d[i] = d[i] + (a - b) * s[i];
                }
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            // not a descent direction; fall back to steepest descent
            d = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &d);
            history.clear();
        }

        // Armijo backtracking
        let mut step = T::one();
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        for _ in 0..opts.max_line_search {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = f(&x_new);
            if f_new.is_finite() && f_new <= fx + opts.c1 * step * slope {
                accepted = true;
                break;
            }
            step = step * T::of(0.5);
        }
        if !accepted {
            return LbfgsResult { x, value: fx, converged: false };
        }
        let g_new = grad(&x_new);
        let s: Vec<T> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<T> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        let curvature_ok =
            sy > T::of(1e-12) * inf_norm(&s).max(T::min_positive_value()) * inf_norm(&y).max(T::min_positive_value());
        if curvature_ok {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
    }
    let gnorm = inf_norm(&g);
    LbfgsResult { x, value: fx, converged: gnorm <= opts.grad_tol }
}
