//! Terminal controller and cost from a linearization of the GP predictor at the
//! reference.
//!
//! The pair `(k, P)` comes from the max-log-det problem
//!
//! ```text
//! max  log det G
//! s.t. [ G           (A G + b sᵀ)ᵀ ]
//!      [ A G + b sᵀ  G             ] ⪰ 0
//!      [ G     G qᵢ ]               [ G     s vₗ ]
//!      [ qᵢᵀG  rᵢ²  ] ⪰ 0,          [ vₗsᵀ  tₗ²  ] ⪰ 0
//! ```
//!
//! with `P = G⁻¹` and `k = P s`, solved here by a log-barrier interior-point
//! method over the entries of `G` and `s`.

use crate::chol::CholFactor;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::narx::{NarxModel, NarxState};

/// Companion-form model `x⁺ = A x + b u` in deviation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl LinearModel {
    /// Builds the companion form from the first-row coefficients for
    /// `n_y` outputs and `n_u` past inputs.
    pub fn companion(first_row: &[f64], b1: f64, n_y: usize, n_u: usize) -> Result<Self> {
        let n = n_y + n_u;
        check_dim(n, first_row.len())?;
        let mut a = Matrix::zeros(n, n);
        a.row_mut(0).copy_from_slice(first_row);
        for i in 1..n_y {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = vec![0.0; n];
        b[0] = b1;
        if n_u > 0 {
            b[n_y] = 1.0;
            for j in 1..n_u {
                a[(n_y + j, n_y + j - 1)] = 1.0;
            }
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn closed_loop(&self, k: &[f64]) -> Matrix {
        Matrix::from_fn(self.n(), self.n(), |i, j| self.a[(i, j)] + self.b[i] * k[j])
    }
}

/// Linearizes the GP predictor at `(x_ref, u_ref)` in the model's normalized
/// coordinates: the first row and `b₁` are the posterior-mean gradient.
pub fn linearize(model: &NarxModel, x_ref: &NarxState, u_ref: f64) -> Result<LinearModel> {
    let g = model.mean_gradient_normalized(x_ref, u_ref)?;
    let n = x_ref.n_x();
    LinearModel::companion(&g[..n], g[n], x_ref.outputs.len(), x_ref.inputs.len())
}

/// Half-space `qᵀx ≤ r` (state) or `v u ≤ t` (input) in deviation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

/// Half-spaces for `lo ≤ xᵢ ≤ hi` on every coordinate, with `lo < 0 < hi`.
pub fn box_halfspaces(bounds: &[(f64, f64)]) -> Result<Vec<HalfSpace>> {
    let n = bounds.len();
    let mut out = Vec::with_capacity(2 * n);
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if !(*lo < 0.0 && *hi > 0.0) {
            return Err(Error::Infeasible(format!("reference not strictly inside bounds on coordinate {i}")));
        }
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        out.push(HalfSpace {
            normal: e.clone(),
            bound: *hi,
        });
        e[i] = -1.0;
        out.push(HalfSpace {
            normal: e,
            bound: -lo,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalPair {
    pub k: Vec<f64>,
    pub p: Matrix,
    pub g: Matrix,
    pub s: Vec<f64>,
}

impl TerminalPair {
    pub fn log_det_g(&self) -> f64 {
        self.g.symmetric_eigenvalues().iter().map(|v| v.ln()).sum()
    }

    /// Rebuilds `G` and `s` from `(k, P)`.
    pub fn from_gain_and_cost(k: Vec<f64>, p: Matrix) -> Result<Self> {
        check_dim(k.len(), p.rows())?;
        if !p.is_symmetric(1e-9) || p.symmetric_eigenvalues()[0] <= 0.0 {
            return Err(Error::InvalidParameter("terminal matrix must be symmetric positive definite".into()));
        }
        let g = p.inverse().ok_or_else(|| Error::InvalidParameter("singular terminal matrix".into()))?;
        let s = g.matvec(&k);
        Ok(Self { k, p, g, s })
    }
}

/// `key=value` text: `k1..k{n}` and `p{i}{j}` (1-based).
pub fn write_terminal(pair: &TerminalPair) -> String {
    let mut out = String::new();
    for (i, k) in pair.k.iter().enumerate() {
        out.push_str(&format!("k{}={:e}\n", i + 1, k));
    }
    for i in 0..pair.p.rows() {
        for j in 0..pair.p.cols() {
            out.push_str(&format!("p{}{}={:e}\n", i + 1, j + 1, pair.p[(i, j)]));
        }
    }
    out
}

pub fn parse_terminal(text: &str) -> Result<TerminalPair> {
    let kv = crate::gp::parse_key_values(text)?;
    let mut k = Vec::new();
    while let Some(v) = kv.get(&format!("k{}", k.len() + 1)) {
        k.push(*v);
    }
    let n = k.len();
    if n == 0 || n > 9 {
        return Err(Error::Parse("terminal file needs k1..kn with 1 <= n <= 9".into()));
    }
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let key = format!("p{}{}", i + 1, j + 1);
            p[(i, j)] = *kv.get(&key).ok_or_else(|| Error::Parse(format!("missing key `{key}`")))?;
        }
    }
    TerminalPair::from_gain_and_cost(k, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalReport {
    pub spectral_radius: f64,
    /// Largest eigenvalue of `A_clᵀ P A_cl − P`.
    pub lyapunov_max_eig: f64,
    pub p_min_eig: f64,
    /// `maxᵢ √(qᵢᵀ G qᵢ) − rᵢ`; non-positive when the ellipsoid fits the state box.
    pub state_margin: f64,
    /// Same for the input half-spaces under `u = kᵀx`.
    pub input_margin: f64,
}

impl TerminalReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.spectral_radius < 1.0
            && self.lyapunov_max_eig <= tol
            && self.p_min_eig > 0.0
            && self.state_margin <= tol
            && self.input_margin <= tol
    }
}

pub fn verify(pair: &TerminalPair, lin: &LinearModel, x_cons: &[HalfSpace], u_cons: &[HalfSpace]) -> TerminalReport {
    let acl = lin.closed_loop(&pair.k);
    let lyap = acl.transpose().matmul(&pair.p).matmul(&acl).sub(&pair.p);
    let support = |q: &[f64]| pair.g.quad_form(q).sqrt();
    let state_margin = x_cons
        .iter()
        .map(|h| support(&h.normal) - h.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let input_margin = u_cons
        .iter()
        .map(|h| h.normal[0].abs() * support(&pair.k) - h.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    TerminalReport {
        spectral_radius: acl.spectral_radius(),
        lyapunov_max_eig: *lyap.symmetric_eigenvalues().last().unwrap(),
        p_min_eig: pair.p.symmetric_eigenvalues()[0],
        state_margin,
        input_margin,
    }
}

/// Affine matrix-valued map `F(z) = F₀ + Σ zᵢ Fᵢ`.
struct Lmi {
    f0: Matrix,
    fi: Vec<Matrix>,
}

impl Lmi {
    fn from_builder(n_vars: usize, build: impl Fn(&[f64]) -> Matrix) -> Self {
        let zero = vec![0.0; n_vars];
        let f0 = build(&zero);
        let fi = (0..n_vars)
            .map(|i| {
                let mut e = zero.clone();
                e[i] = 1.0;
                build(&e).sub(&f0)
            })
            .collect();
        Self { f0, fi }
    }

    fn eval(&self, z: &[f64]) -> Matrix {
        let mut f = self.f0.clone();
        for (zi, fi) in z.iter().zip(&self.fi) {
            if *zi != 0.0 {
                f = f.add(&fi.scale(*zi));
            }
        }
        f
    }

    fn dim(&self) -> usize {
        self.f0.rows()
    }
}

/// Unpacks `z = [upper triangle of G (row-major); s]`.
fn unpack(z: &[f64], n: usize) -> (Matrix, Vec<f64>) {
    let mut g = Matrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            g[(i, j)] = z[idx];
            g[(j, i)] = z[idx];
            idx += 1;
        }
    }
    (g, z[idx..idx + n].to_vec())
}

fn pack(g: &Matrix, s: &[f64]) -> Vec<f64> {
    let n = s.len();
    let mut z = Vec::with_capacity(n * (n + 1) / 2 + n);
    for i in 0..n {
        for j in i..n {
            z.push(0.5 * (g[(i, j)] + g[(j, i)]));
        }
    }
    z.extend_from_slice(s);
    z
}

fn stack(tl: &Matrix, tr: &Matrix, bl: &Matrix, br: &Matrix) -> Matrix {
    let (r1, c1) = (tl.rows(), tl.cols());
    Matrix::from_fn(r1 + bl.rows(), c1 + tr.cols(), |i, j| match (i < r1, j < c1) {
        (true, true) => tl[(i, j)],
        (true, false) => tr[(i, j - c1)],
        (false, true) => bl[(i - r1, j)],
        (false, false) => br[(i - r1, j - c1)],
    })
}

fn column(v: &[f64]) -> Matrix {
    Matrix::from_fn(v.len(), 1, |i, _| v[i])
}

fn build_lmis(lin: &LinearModel, x_cons: &[HalfSpace], u_cons: &[HalfSpace]) -> Vec<Lmi> {
    let n = lin.n();
    let n_vars = n * (n + 1) / 2 + n;
    let mut lmis = Vec::new();
    lmis.push(Lmi::from_builder(n_vars, |z| unpack(z, n).0));
    lmis.push(Lmi::from_builder(n_vars, |z| {
        let (g, s) = unpack(z, n);
        let m = lin.a.matmul(&g).add(&column(&lin.b).matmul(&column(&s).transpose()));
        stack(&g, &m.transpose(), &m, &g)
    }));
    for h in x_cons {
        lmis.push(Lmi::from_builder(n_vars, |z| {
            let (g, _) = unpack(z, n);
            let gq = column(&g.matvec(&h.normal));
            stack(&g, &gq, &gq.transpose(), &Matrix::from_diag(&[h.bound * h.bound]))
        }));
    }
    for h in u_cons {
        lmis.push(Lmi::from_builder(n_vars, |z| {
            let (g, s) = unpack(z, n);
            let sv = column(&s.iter().map(|v| v * h.normal[0]).collect::<Vec<_>>());
            stack(&g, &sv, &sv.transpose(), &Matrix::from_diag(&[h.bound * h.bound]))
        }));
    }
    lmis
}

/// Stabilizing gain from iterating the discrete Riccati recursion with unit weights.
fn stabilizing_gain(lin: &LinearModel) -> Result<Vec<f64>> {
    let n = lin.n();
    if lin.a.spectral_radius() < 0.95 {
        return Ok(vec![0.0; n]);
    }
    let a = &lin.a;
    let b = column(&lin.b);
    let mut p = Matrix::identity(n);
    let mut k = vec![0.0; n];
    for _ in 0..5000 {
        let bp = b.transpose().matmul(&p);
        let denom = 1.0 + bp.matmul(&b)[(0, 0)];
        let bpa = bp.matmul(a);
        k = bpa.row(0).iter().map(|v| -v / denom).collect();
        let acl = lin.closed_loop(&k);
        let kk = column(&k).matmul(&column(&k).transpose());
        let next = Matrix::identity(n).add(&kk).add(&acl.transpose().matmul(&p).matmul(&acl));
        let done = next.rel_frobenius_err(&p) < 1e-12;
        p = next;
        if done || !p.frobenius().is_finite() {
            break;
        }
    }
    if lin.closed_loop(&k).spectral_radius() < 1.0 {
        Ok(k)
    } else {
        Err(Error::Infeasible("linear model is not stabilizable".into()))
    }
}

/// `Σ A^j (A^j)ᵀ`, the solution of `A G Aᵀ − G = −I` for stable `A`.
fn controllability_like_gramian(acl: &Matrix) -> Matrix {
    let n = acl.rows();
    let mut g = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for _ in 0..10_000 {
        term = acl.matmul(&term).matmul(&acl.transpose());
        g = g.add(&term);
        if term.frobenius() < 1e-15 * g.frobenius() {
            break;
        }
    }
    g
}

fn lmi_factors(lmis: &[Lmi], z: &[f64]) -> Option<Vec<(Matrix, CholFactor)>> {
    lmis.iter()
        .map(|l| {
            let f = l.eval(z);
            CholFactor::factorize(&f).ok().map(|c| (f, c))
        })
        .collect()
}

fn inverse_from_factor(c: &CholFactor) -> Matrix {
    let n = c.n();
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = c.solve(&e).expect("dimensions agree");
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    inv
}

/// `−t log det G − Σ log det Fⱼ`, or `None` outside the interior.
fn barrier_value(lmis: &[Lmi], z: &[f64], t: f64) -> Option<f64> {
    let facs = lmi_factors(lmis, z)?;
    let mut v = -t * facs[0].1.log_det();
    for (_, c) in &facs {
        v -= c.log_det();
    }
    Some(v)
}

#[derive(Debug, Clone, Copy)]
pub struct SdpConfig {
    /// Final duality-gap bound `m / t`.
    pub gap_tol: f64,
    pub growth: f64,
    pub newton_tol: f64,
}

impl Default for SdpConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-10,
            growth: 10.0,
            newton_tol: 1e-12,
        }
    }
}

/// Solves the log-det terminal design problem.
pub fn design_terminal(lin: &LinearModel, x_cons: &[HalfSpace], u_cons: &[HalfSpace]) -> Result<TerminalPair> {
    design_terminal_with(lin, x_cons, u_cons, SdpConfig::default())
}

pub fn design_terminal_with(
    lin: &LinearModel,
    x_cons: &[HalfSpace],
    u_cons: &[HalfSpace],
    cfg: SdpConfig,
) -> Result<TerminalPair> {
    let n = lin.n();
    check_dim(n, lin.a.rows())?;
    for h in x_cons {
        check_dim(n, h.normal.len())?;
        if !(h.bound > 0.0) {
            return Err(Error::Infeasible("state bound excludes the reference".into()));
        }
    }
    for h in u_cons {
        check_dim(1, h.normal.len())?;
        if !(h.bound > 0.0) {
            return Err(Error::Infeasible("input bound excludes the reference".into()));
        }
    }

    let k0 = stabilizing_gain(lin)?;
    let g0 = controllability_like_gramian(&lin.closed_loop(&k0));
    let s0 = g0.matvec(&k0);
    let mut alpha: f64 = 1.0;
    for h in x_cons {
        alpha = alpha.min(h.bound * h.bound / g0.quad_form(&h.normal));
    }
    let p0 = g0.inverse().ok_or_else(|| Error::Infeasible("singular initial ellipsoid".into()))?;
    let sps = p0.quad_form(&s0);
    if sps > 0.0 {
        for h in u_cons {
            alpha = alpha.min(h.bound * h.bound / (h.normal[0] * h.normal[0] * sps));
        }
    }
    alpha *= 0.5;
    let mut z = pack(&g0.scale(alpha), &s0.iter().map(|v| v * alpha).collect::<Vec<_>>());

    let lmis = build_lmis(lin, x_cons, u_cons);
    if lmi_factors(&lmis, &z).is_none() {
        return Err(Error::Infeasible("no strictly feasible starting point".into()));
    }
    let m: f64 = lmis.iter().skip(1).map(|l| l.dim() as f64).sum();
    let n_vars = z.len();
    let mut t = 1.0;
    loop {
        for _ in 0..200 {
            let facs = lmi_factors(&lmis, &z).expect("iterate stays interior");
            let mut grad = vec![0.0; n_vars];
            let mut hess = Matrix::zeros(n_vars, n_vars);
            for (j, (l, (_, c))) in lmis.iter().zip(&facs).enumerate() {
                let w = if j == 0 { t + 1.0 } else { 1.0 };
                let inv = inverse_from_factor(c);
                let prods: Vec<Matrix> = l.fi.iter().map(|fi| inv.matmul(fi)).collect();
                for i in 0..n_vars {
                    grad[i] -= w * trace(&prods[i]);
                    for k in 0..=i {
                        let v = w * trace_of_product(&prods[i], &prods[k]);
                        hess[(i, k)] += v;
                        if k != i {
                            hess[(k, i)] += v;
                        }
                    }
                }
            }
            let hc = CholFactor::factorize_with_jitter(&hess, 1e-14 * hess.frobenius())?;
            let step = hc.solve(&grad.iter().map(|g| -g).collect::<Vec<_>>())?;
            let decrement: f64 = -grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
            if decrement / 2.0 < cfg.newton_tol {
                break;
            }
            let f0 = barrier_value(&lmis, &z, t).expect("interior");
            let mut h = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let zt: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + h * b).collect();
                if let Some(ft) = barrier_value(&lmis, &zt, t) {
                    if ft <= f0 - 0.25 * h * decrement {
                        z = zt;
                        moved = true;
                        break;
                    }
                }
                h *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if m / t < cfg.gap_tol {
            break;
        }
        t *= cfg.growth;
    }

    let (g, s) = unpack(&z, n);
    let p = g.inverse().ok_or_else(|| Error::Infeasible("optimal ellipsoid is degenerate".into()))?;
    let p = p.add(&p.transpose()).scale(0.5);
    let k = p.matvec(&s);
    Ok(TerminalPair { k, p, g, s })
}

fn trace(m: &Matrix) -> f64 {
    (0..m.rows()).map(|i| m[(i, i)]).sum()
}

/// `tr(A B)` without forming the product.
fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}
