//! Small derivative-free and least-squares optimisers used by the model fits.

use crate::linalg::{least_squares, Matrix};
use crate::scalar::Scalar;

/// Result of a one-dimensional minimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum1d<T> {
    pub x: T,
    pub fx: T,
}

/// Brent's method (golden section with parabolic steps) on `[lo, hi]`.
///
/// Terminates when the bracket half-width falls below `tol·|x| + tol`.
pub fn brent_minimize<T: Scalar, F: FnMut(T) -> T>(
    mut f: F,
    lo: T,
    hi: T,
    tol: T,
) -> Minimum1d<T> {
    let golden = T::lit(0.381_966_011_250_105_1);
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d = T::zero();
    let mut e = T::zero();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    for _ in 0..500 {
        let xm = half * (a + b);
        let tol1 = tol * x.abs() + tol;
        let tol2 = two * tol1;
        if (x - xm).abs() <= tol2 - half * (b - a) {
            break;
        }
        let mut golden_step = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = two * (q - r);
            if q > T::zero() {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (half * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= xm { a - x } else { b - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d >= T::zero() {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum1d { x, fx }
}

/// Outcome of a multivariate minimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimumNd {
    pub x: Vec<f64>,
    pub fx: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Nelder–Mead simplex search.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    max_evals: usize,
    ftol: f64,
) -> MinimumNd {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    let mut converged = false;

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[n]);
        if (worst - best).abs() <= ftol * (best.abs() + worst.abs()) + 1e-300 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, p)| b + 0.5 * (p - b))
                        .collect();
                    values[i] = f(&shrunk);
                    simplex[i] = shrunk;
                }
                evals += n;
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    MinimumNd {
        x: simplex[best].clone(),
        fx: values[best],
        converged,
        evaluations: evals,
    }
}

/// Levenberg–Marquardt on a residual vector with a forward-difference
/// Jacobian. `residuals` returns `false` when the parameters are infeasible.
pub fn levenberg_marquardt<F>(
    mut residuals: F,
    x0: &[f64],
    n_res: usize,
    max_iter: usize,
    rtol: f64,
) -> MinimumNd
where
    F: FnMut(&[f64], &mut [f64]) -> bool,
{
    let p = x0.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n_res];
    let mut evals = 1;
    if !residuals(&x, &mut r) {
        return MinimumNd {
            x,
            fx: f64::INFINITY,
            converged: false,
            evaluations: evals,
        };
    }
    let mut sse: f64 = r.iter().map(|v| v * v).sum();
    let mut mu: f64 = 1e-3;
    let mut converged = false;
    let mut jac = Matrix::<f64>::zeros(n_res + p, p);
    let mut r_trial = vec![0.0; n_res];

    for _ in 0..max_iter {
        for j in 0..p {
            let h = 1e-7 * x[j].abs().max(1e-3);
            let mut xp = x.clone();
            xp[j] += h;
            evals += 1;
            if !residuals(&xp, &mut r_trial) {
                xp[j] = x[j] - h;
                evals += 1;
                if !residuals(&xp, &mut r_trial) {
                    return MinimumNd {
                        x,
                        fx: sse,
                        converged: false,
                        evaluations: evals,
                    };
                }
                for i in 0..n_res {
                    jac.set(i, j, (r[i] - r_trial[i]) / h);
                }
            } else {
                for i in 0..n_res {
                    jac.set(i, j, (r_trial[i] - r[i]) / h);
                }
            }
        }
        let mut improved = false;
        for _ in 0..12 {
            // Damped Gauss-Newton step via the augmented system [J; sqrt(mu) I].
            let sq = mu.sqrt();
            for j in 0..p {
                for k in 0..p {
                    jac.set(n_res + j, k, if j == k { sq } else { 0.0 });
                }
            }
            let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            rhs.extend(std::iter::repeat(0.0).take(p));
            let step = match least_squares(&jac, &rhs) {
                Ok(ls) => ls.coefficients,
                Err(_) => {
                    mu *= 10.0;
                    continue;
                }
            };
            let xt: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            evals += 1;
            if residuals(&xt, &mut r_trial) {
                let sse_t: f64 = r_trial.iter().map(|v| v * v).sum();
                if sse_t.is_finite() && sse_t <= sse {
                    let rel = (sse - sse_t) / sse.max(1e-300);
                    x = xt;
                    std::mem::swap(&mut r, &mut r_trial);
                    sse = sse_t;
                    mu = (mu * 0.3).max(1e-12);
                    improved = true;
                    if rel < rtol {
                        converged = true;
                    }
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: stationary to working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    MinimumNd {
        x,
        fx: sse,
        converged,
        evaluations: evals,
    }
}
