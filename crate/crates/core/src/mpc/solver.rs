//! Projected quasi-Newton (BFGS) minimization over a box with finite-difference
//! gradients. Meant for a handful of variables with cheap objective calls.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSolverConfig {
    pub max_iter: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub f_tol: f64,
    pub fd_step: f64,
}

impl Default for BoxSolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            f_tol: 1e-8,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxSolverResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Central differences, one-sided at the bounds so no evaluation leaves the box.
fn fd_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], fx: f64, lo: &[f64], hi: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let up = (x[i] + h).min(hi[i]);
        let down = (x[i] - h).max(lo[i]);
        let f_up = if up > x[i] {
            probe[i] = up;
            f(&probe)
        } else {
            fx
        };
        let f_down = if down < x[i] {
            probe[i] = down;
            f(&probe)
        } else {
            fx
        };
        probe[i] = x[i];
        g[i] = if up > down { (f_up - f_down) / (up - down) } else { 0.0 };
    }
    g
}

/// Indices pinned at a bound with the gradient pushing outward.
fn active_set(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, h))| (*xi <= *l && *gi > 0.0) || (*xi >= *h && *gi < 0.0))
        .collect()
}

/// Minimizes `f` over `[lo, hi]` starting from the projection of `x0`. The
/// returned value never exceeds `f(proj(x0))`.
pub fn minimize_box(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    cfg: BoxSolverConfig,
) -> BoxSolverResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut fx = f(&x);
    let mut g = fd_gradient(&mut f, &x, fx, lo, hi, cfg.fd_step);
    let mut h_inv = identity(n);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iter {
        iterations += 1;
        let active = active_set(&x, &g, lo, hi);
        let g_free: Vec<f64> = g.iter().zip(&active).map(|(v, a)| if *a { 0.0 } else { *v }).collect();
        if g_free.iter().all(|v| v.abs() < 1e-12) {
            converged = true;
            break;
        }
        let mut d: Vec<f64> = (0..n)
            .map(|i| if active[i] { 0.0 } else { -(0..n).map(|j| h_inv[i][j] * g_free[j]).sum::<f64>() })
            .collect();
        if dot(&d, &g_free) >= 0.0 {
            h_inv = identity(n);
            d = g_free.iter().map(|v| -v).collect();
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            project(&mut xt, lo, hi);
            let ft = f(&xt);
            let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            if ft <= fx + 1e-4 * dot(&g, &step) && ft <= fx {
                accepted = Some((xt, ft, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, s)) = accepted else {
            if is_identity(&h_inv) {
                converged = true;
                break;
            }
            h_inv = identity(n);
            continue;
        };
        let gn = fd_gradient(&mut f, &xn, fn_, lo, hi, cfg.fd_step);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let decrease = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;

        let sy = dot(&s, &y);
        if sy > 1e-14 {
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        if decrease < cfg.f_tol {
            converged = true;
            break;
        }
    }
    BoxSolverResult {
        x,
        f: fx,
        iterations,
        converged,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn is_identity(h: &[Vec<f64>]) -> bool {
    h.iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, v)| *v == if i == j { 1.0 } else { 0.0 }))
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
