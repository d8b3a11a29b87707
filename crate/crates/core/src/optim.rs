//! Deterministic BFGS minimizer used for hyperparameter search in log space.
//!
//! The objective may decline to evaluate a point (failed factorization,
//! overflow); the line search treats such points as infinitely bad and
//! backtracks. Everything is seeded by the caller, nothing here draws
//! random numbers.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Step-norm cap per iteration; log-space moves larger than this are scaled down.
    pub max_step_norm: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 80,
            grad_tol: 1e-5,
            max_step_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimize `f` starting from `x0`. Returns `None` when the initial point is
/// not evaluable; otherwise the best point seen.
pub fn minimize<F>(mut f: F, x0: &DVector<f64>, opts: &BfgsOptions) -> Option<BfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let mut x = x0.clone();
    let (mut fx, mut gx) = f(&x)?;
    if !fx.is_finite() || gx.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        iterations = iter;
        if gx.norm() < opts.grad_tol {
            converged = true;
            break;
        }

        let mut p = -(&h_inv * &gx);
        // fall back to steepest descent if the direction stopped being a descent direction
        if p.dot(&gx) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            p = -gx.clone();
        }
        let pnorm = p.norm();
        if pnorm > opts.max_step_norm {
            p *= opts.max_step_norm / pnorm;
        }

        // backtracking Armijo line search
        let dir_deriv = p.dot(&gx);
        let c1 = 1e-4;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &x + alpha * &p;
            if let Some((fc, gc)) = f(&cand) {
                if fc.is_finite() && fc <= fx + c1 * alpha * dir_deriv {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break; // cannot make progress along this direction
        };

        let s = &x_new - &x;
        let y = &g_new - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // BFGS inverse-Hessian update
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let ss = &s * s.transpose();
            let hys = &hy * s.transpose();
            h_inv += (sy + yhy) * rho * rho * &ss - rho * (&hys + hys.transpose());
        }

        x = x_new;
        fx = f_new;
        gx = g_new;
    }

    Some(BfgsOutcome {
        x,
        value: fx,
        converged,
        iterations,
    })
}
