//! Nonlinear regression for the empirical curves: a closed-form logarithmic
//! saturation fit and exponential-decay fits via separable least squares
//! (decay rates on a multistart grid, amplitudes solved linearly) refined
//! with Levenberg-damped Gauss-Newton.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("xs and ys must have equal length")]
    LengthMismatch,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Model parameters (see each fit function for the ordering).
    pub params: Vec<f64>,
    pub rss: f64,
    pub r_squared: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn r_squared(ys: &[f64], rss: f64) -> f64 {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let tss: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
    if tss <= 1e-300 {
        // Constant data: perfect iff residuals vanish.
        if rss < 1e-18 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - rss / tss
    }
}

/// Dense Gaussian elimination with partial pivoting; returns None for a
/// singular system.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// y = alpha * ln(x + 1) + gamma, solved in closed form.
/// Parameters: `[alpha, gamma]`.
pub fn fit_log_saturation(xs: &[f64], ys: &[f64]) -> Result<FitResult, FitError> {
    if xs.len() != ys.len() {
        return Err(FitError::LengthMismatch);
    }
    if xs.len() < 2 {
        return Err(FitError::TooFewPoints { need: 2, got: xs.len() });
    }
    let n = xs.len() as f64;
    let ls: Vec<f64> = xs.iter().map(|x| (x + 1.0).ln()).collect();
    let sum_l: f64 = ls.iter().sum();
    let sum_y: f64 = ys.iter().sum();
    let sum_ll: f64 = ls.iter().map(|l| l * l).sum();
    let sum_ly: f64 = ls.iter().zip(ys).map(|(l, y)| l * y).sum();
    let denom = n * sum_ll - sum_l * sum_l;
    let (alpha, gamma) = if denom.abs() < 1e-300 {
        (0.0, sum_y / n)
    } else {
        let alpha = (n * sum_ly - sum_l * sum_y) / denom;
        (alpha, (sum_y - alpha * sum_l) / n)
    };
    let rss: f64 = ls
        .iter()
        .zip(ys)
        .map(|(l, y)| {
            let r = y - (alpha * l + gamma);
            r * r
        })
        .sum();
    Ok(FitResult {
        params: vec![alpha, gamma],
        rss,
        r_squared: r_squared(ys, rss),
        iterations: 0,
        converged: true,
    })
}

/// Shared machinery: a sum of `k` decaying exponentials plus a constant,
///   y = sum_i a_i exp(-b_i x) + e.
/// `rates` fixes the decay rates; amplitudes and the offset are solved by
/// linear least squares. Returns (full params, rss) with params laid out as
/// [a_1, b_1, ..., a_k, b_k, e].
fn solve_amplitudes(xs: &[f64], ys: &[f64], rates: &[f64]) -> Option<(Vec<f64>, f64)> {
    let k = rates.len();
    let dim = k + 1;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for &b in rates {
        basis.push(xs.iter().map(|x| (-b * x).exp()).collect());
    }
    basis.push(vec![1.0; xs.len()]);
    let mut ata = vec![vec![0.0; dim]; dim];
    let mut aty = vec![0.0; dim];
    for i in 0..dim {
        for j in 0..dim {
            ata[i][j] = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
        }
        aty[i] = basis[i].iter().zip(ys).map(|(a, y)| a * y).sum();
    }
    // Tiny ridge keeps nearly-collinear exponentials solvable.
    for (i, row) in ata.iter_mut().enumerate() {
        row[i] += 1e-12;
    }
    let amps = solve(ata, aty)?;
    let mut params = Vec::with_capacity(2 * k + 1);
    for i in 0..k {
        params.push(amps[i]);
        params.push(rates[i]);
    }
    params.push(amps[k]);
    let rss = residual_ss(xs, ys, &params, k);
    Some((params, rss))
}

fn model_eval(x: f64, params: &[f64], k: usize) -> f64 {
    let mut y = params[2 * k];
    for i in 0..k {
        y += params[2 * i] * (-params[2 * i + 1] * x).exp();
    }
    y
}

fn residual_ss(xs: &[f64], ys: &[f64], params: &[f64], k: usize) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - model_eval(x, params, k);
            r * r
        })
        .sum()
}

/// Levenberg-damped Gauss-Newton on all 2k+1 parameters.
fn refine(xs: &[f64], ys: &[f64], mut params: Vec<f64>, k: usize) -> (Vec<f64>, f64, usize, bool) {
    let dim = 2 * k + 1;
    let mut lambda = 1e-3;
    let mut rss = residual_ss(xs, ys, &params, k);
    let mut converged = false;
    let max_iter = 200;
    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        // J^T J and J^T r with analytic partials.
        let mut jtj = vec![vec![0.0; dim]; dim];
        let mut jtr = vec![0.0; dim];
        for (&x, &y) in xs.iter().zip(ys) {
            let mut row = vec![0.0; dim];
            for i in 0..k {
                let a = params[2 * i];
                let b = params[2 * i + 1];
                let e = (-b * x).exp();
                row[2 * i] = e;
                row[2 * i + 1] = -a * x * e;
            }
            row[dim - 1] = 1.0;
            let r = y - model_eval(x, params.as_slice(), k);
            for i in 0..dim {
                jtr[i] += row[i] * r;
                for j in 0..dim {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let mut damped = jtj.clone();
        for (i, row) in damped.iter_mut().enumerate() {
            row[i] += lambda * (jtj[i][i].max(1e-12));
        }
        let Some(step) = solve(damped, jtr.clone()) else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
            continue;
        };
        let candidate: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p + s).collect();
        let new_rss = residual_ss(xs, ys, &candidate, k);
        if new_rss.is_finite() && new_rss < rss {
            let rel = (rss - new_rss) / rss.max(1e-300);
            params = candidate;
            rss = new_rss;
            lambda = (lambda * 0.3).max(1e-12);
            if rel < 1e-12 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true;
                break;
            }
        }
    }
    (params, rss, iter, converged)
}

const RATE_GRID: [f64; 7] = [1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1, 3.16e-1, 1.0];

/// y = a * exp(-b x) + c. Parameters: `[a, b, c]`.
pub fn fit_single_exponential(xs: &[f64], ys: &[f64]) -> Result<FitResult, FitError> {
    if xs.len() != ys.len() {
        return Err(FitError::LengthMismatch);
    }
    if xs.len() < 4 {
        return Err(FitError::TooFewPoints { need: 4, got: xs.len() });
    }
    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    for &b in &RATE_GRID {
        let Some((p0, _)) = solve_amplitudes(xs, ys, &[b]) else { continue };
        let (p, rss, it, conv) = refine(xs, ys, p0, 1);
        if best.as_ref().map_or(true, |(_, brss, _, _)| rss < *brss) {
            best = Some((p, rss, it, conv));
        }
    }
    let (params, rss, iterations, converged) = best.expect("grid nonempty");
    Ok(FitResult {
        params: vec![params[0], params[1], params[2]],
        rss,
        r_squared: r_squared(ys, rss),
        iterations,
        converged,
    })
}

/// y = a * exp(-b x) + c * exp(-d x) + e, canonicalized so b >= d.
/// Parameters: `[a, b, c, d, e]`.
pub fn fit_double_exponential(xs: &[f64], ys: &[f64]) -> Result<FitResult, FitError> {
    if xs.len() != ys.len() {
        return Err(FitError::LengthMismatch);
    }
    if xs.len() < 6 {
        return Err(FitError::TooFewPoints { need: 6, got: xs.len() });
    }
    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    for (i, &b) in RATE_GRID.iter().enumerate() {
        for &d in &RATE_GRID[..=i] {
            let Some((p0, _)) = solve_amplitudes(xs, ys, &[b, d]) else { continue };
            let (p, rss, it, conv) = refine(xs, ys, p0, 2);
            if best.as_ref().map_or(true, |(_, brss, _, _)| rss < *brss) {
                best = Some((p, rss, it, conv));
            }
        }
    }
    let (mut params, rss, iterations, converged) = best.expect("grid nonempty");
    // Canonical branch order: faster decay first.
    if params[1] < params[3] {
        params.swap(0, 2);
        params.swap(1, 3);
    }
    Ok(FitResult {
        params: vec![params[0], params[1], params[2], params[3], params[4]],
        rss,
        r_squared: r_squared(ys, rss),
        iterations,
        converged,
    })
}
