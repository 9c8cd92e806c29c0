//! Entropic optimal transport between equal-size point sets.
//!
//! Solves `min_π ⟨π, C⟩ + ε̃ Σ π (log π − 1)` over couplings with uniform
//! marginals `1/ℓ` by Sinkhorn-Knopp scaling, so that
//! `π = diag(μ̃) · exp(−C/ε̃) · diag(ν̃)`.

use std::cmp::Ordering;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numcore::{Matrix, Real};

/// `C_ij = ‖a_i − b_j‖²`.
pub fn cost_matrix<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    ensure_len("cost matrix point count", a.rows(), b.rows())?;
    ensure_len("cost matrix point dimension", a.cols(), b.cols())?;
    if a.rows() == 0 {
        return Err(Error::EmptyInput("cost matrix point set"));
    }
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        crate::numcore::scalar::squared_distance(a.row(i), b.row(j))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SinkhornConfig<T> {
    pub entropic_eps: T,
    pub max_iters: usize,
    pub marginal_tol: T,
    /// Skip the plain iterations and go straight to the log domain.
    pub stabilized: bool,
}

impl<T: Real> Default for SinkhornConfig<T> {
    fn default() -> Self {
        Self {
            entropic_eps: T::lit(0.05),
            max_iters: 1000,
            marginal_tol: T::lit(1e-8),
            stabilized: false,
        }
    }
}

impl<T: Real> SinkhornConfig<T> {
    pub fn with_eps(entropic_eps: T) -> Self {
        Self {
            entropic_eps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.entropic_eps > T::zero() && self.entropic_eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "entropic regularization must be positive, got {}",
                self.entropic_eps
            )));
        }
        if !(self.marginal_tol > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "marginal tolerance must be positive, got {}",
                self.marginal_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("sinkhorn needs max_iters >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TransportPlan<T> {
    pub pi: Matrix<T>,
    /// `log μ̃`; kept in log form so tiny regularizations cannot overflow it.
    pub log_row_scaling: Vec<T>,
    /// `log ν̃`.
    pub log_col_scaling: Vec<T>,
    pub converged: bool,
    pub iterations_used: usize,
    pub log_domain: bool,
}

impl<T: Real> TransportPlan<T> {
    pub fn size(&self) -> usize {
        self.pi.rows()
    }

    /// Largest deviation of any row or column sum from `1/ℓ`.
    pub fn marginal_violation(&self) -> T {
        marginal_violation(&self.pi)
    }
}

fn marginal_violation<T: Real>(pi: &Matrix<T>) -> T {
    let target = T::from_usize_lossy(pi.rows()).recip();
    pi.row_sums()
        .into_iter()
        .chain(pi.col_sums())
        .map(|s| (s - target).abs())
        .fold(T::zero(), |m, d| if d > m { d } else { m })
}

/// Row-sum deviation only; columns are exact right after a column update.
fn row_violation<T: Real>(pi: &Matrix<T>, target: T) -> T {
    pi.row_iter()
        .map(|r| (r.iter().copied().sum::<T>() - target).abs())
        .fold(T::zero(), |m, d| if d.is_nan() || d > m { d } else { m })
}

/// Sinkhorn-Knopp on a square cost matrix.
///
/// Plain scaling is tried first. If the Gibbs kernel underflows, the scalings
/// leave the finite range, or the tolerance is not reached, the solve is
/// repeated with log-domain updates and ε̃-annealing.
pub fn sinkhorn<T: Real>(cost: &Matrix<T>, cfg: &SinkhornConfig<T>) -> Result<TransportPlan<T>> {
    cfg.validate()?;
    let n = cost.rows();
    if n == 0 {
        return Err(Error::EmptyInput("sinkhorn cost matrix"));
    }
    ensure_len("sinkhorn cost matrix columns", n, cost.cols())?;
    cost.check_finite("sinkhorn cost matrix")?;

    let mut spent = 0;
    if !cfg.stabilized {
        match sinkhorn_plain(cost, cfg) {
            Attempt::Done(plan) => return Ok(plan),
            Attempt::Escalate { iterations } => spent = iterations,
        }
    }
    let mut plan = sinkhorn_log(cost, cfg)?;
    plan.iterations_used += spent;
    Ok(plan)
}

enum Attempt<T> {
    Done(TransportPlan<T>),
    Escalate { iterations: usize },
}

fn sinkhorn_plain<T: Real>(cost: &Matrix<T>, cfg: &SinkhornConfig<T>) -> Attempt<T> {
    let n = cost.rows();
    let inv_n = T::from_usize_lossy(n).recip();
    let kernel = cost.map(|c| (-c / cfg.entropic_eps).exp());
    let has_empty_line = kernel.row_sums().iter().chain(kernel.col_sums().iter()).any(|&s| !(s > T::zero()));
    if has_empty_line {
        return Attempt::Escalate { iterations: 0 };
    }
    let mut mu = vec![inv_n; n];
    let mut nu = vec![inv_n; n];
    let mut pi = Matrix::zeros(n, n);
    for it in 1..=cfg.max_iters {
        for (i, m) in mu.iter_mut().enumerate() {
            let s: T = kernel.row(i).iter().zip(&nu).map(|(&k, &v)| k * v).sum();
            *m = inv_n / s;
        }
        let mut col = vec![T::zero(); n];
        for (i, &m) in mu.iter().enumerate() {
            for (c, &k) in col.iter_mut().zip(kernel.row(i)) {
                *c += m * k;
            }
        }
        for (v, &c) in nu.iter_mut().zip(&col) {
            *v = inv_n / c;
        }
        if !(crate::numcore::scalar::all_finite(&mu) && crate::numcore::scalar::all_finite(&nu))
            || mu.iter().chain(&nu).any(|&s| s == T::zero())
        {
            return Attempt::Escalate { iterations: it };
        }
        for i in 0..n {
            let m = mu[i];
            for ((p, &k), &v) in pi.row_mut(i).iter_mut().zip(kernel.row(i)).zip(&nu) {
                *p = m * k * v;
            }
        }
        if row_violation(&pi, inv_n) <= cfg.marginal_tol {
            return Attempt::Done(TransportPlan {
                pi,
                log_row_scaling: mu.iter().map(|m| m.ln()).collect(),
                log_col_scaling: nu.iter().map(|v| v.ln()).collect(),
                converged: true,
                iterations_used: it,
                log_domain: false,
            });
        }
    }
    Attempt::Escalate {
        iterations: cfg.max_iters,
    }
}

/// Scalings outside `[1/ABSORB_LIMIT, ABSORB_LIMIT]` are folded into the
/// dual potentials and the kernel is rebuilt.
const ABSORB_LIMIT: f64 = 1e50;

/// Iterations spent at each intermediate regularization while annealing.
const ANNEAL_STAGE_ITERS: usize = 50;

/// Sinkhorn scaling on a kernel stabilized by dual potentials `f`, `g`:
/// `π_ij = u_i exp((f_i + g_j − C_ij)/ε) v_j`.
struct Stabilized<'a, T> {
    cost: &'a Matrix<T>,
    inv_n: T,
    f: Vec<T>,
    g: Vec<T>,
    u: Vec<T>,
    v: Vec<T>,
    kernel: Matrix<T>,
    kv: Vec<T>,
    ktu: Vec<T>,
}

impl<'a, T: Real> Stabilized<'a, T> {
    fn new(cost: &'a Matrix<T>) -> Self {
        let n = cost.rows();
        Self {
            cost,
            inv_n: T::from_usize_lossy(n).recip(),
            f: vec![T::zero(); n],
            g: vec![T::zero(); n],
            u: vec![T::one(); n],
            v: vec![T::one(); n],
            kernel: Matrix::zeros(n, n),
            kv: vec![T::zero(); n],
            ktu: vec![T::zero(); n],
        }
    }

    fn absorb(&mut self, eps: T) {
        for (f, u) in self.f.iter_mut().zip(self.u.iter_mut()) {
            *f += eps * u.ln();
            *u = T::one();
        }
        for (g, v) in self.g.iter_mut().zip(self.v.iter_mut()) {
            *g += eps * v.ln();
            *v = T::one();
        }
        self.rebuild(eps);
    }

    fn rebuild(&mut self, eps: T) {
        let n = self.f.len();
        for i in 0..n {
            let fi = self.f[i];
            let crow = self.cost.row(i);
            for ((k, &c), &gj) in self.kernel.row_mut(i).iter_mut().zip(crow).zip(&self.g) {
                *k = ((fi + gj - c) / eps).exp();
            }
        }
    }

    /// One exact log-domain update of both potentials.
    fn log_update(&mut self, eps: T) {
        let n = self.f.len();
        let log_inv_n = self.inv_n.ln();
        self.absorb_scalings_only(eps);
        for i in 0..n {
            let row = self.cost.row(i);
            let max = row
                .iter()
                .zip(&self.g)
                .map(|(&c, &gj)| (gj - c) / eps)
                .fold(T::neg_infinity(), T::max);
            let s: T = row.iter().zip(&self.g).map(|(&c, &gj)| ((gj - c) / eps - max).exp()).sum();
            self.f[i] = eps * (log_inv_n - max - s.ln());
        }
        for j in 0..n {
            let max = (0..n)
                .map(|i| (self.f[i] - self.cost[(i, j)]) / eps)
                .fold(T::neg_infinity(), T::max);
            let s: T = (0..n).map(|i| ((self.f[i] - self.cost[(i, j)]) / eps - max).exp()).sum();
            self.g[j] = eps * (log_inv_n - max - s.ln());
        }
        self.rebuild(eps);
    }

    fn absorb_scalings_only(&mut self, eps: T) {
        for (f, u) in self.f.iter_mut().zip(self.u.iter_mut()) {
            if u.is_finite() && *u > T::zero() {
                *f += eps * u.ln();
            }
            *u = T::one();
        }
        for (g, v) in self.g.iter_mut().zip(self.v.iter_mut()) {
            if v.is_finite() && *v > T::zero() {
                *g += eps * v.ln();
            }
            *v = T::one();
        }
    }

    fn kernel_times_v(&mut self) -> bool {
        for (out, row) in self.kv.iter_mut().zip(self.kernel.row_iter()) {
            *out = row.iter().zip(&self.v).map(|(&k, &v)| k * v).sum();
        }
        self.kv.iter().all(|&s| s > T::zero() && s.is_finite())
    }

    fn kernel_t_times_u(&mut self) -> bool {
        self.ktu.iter_mut().for_each(|s| *s = T::zero());
        for (row, &u) in self.kernel.row_iter().zip(&self.u) {
            for (s, &k) in self.ktu.iter_mut().zip(row) {
                *s += u * k;
            }
        }
        self.ktu.iter().all(|&s| s > T::zero() && s.is_finite())
    }

    /// Runs up to `max_iters` iterations at regularization `eps`.
    fn run(&mut self, eps: T, max_iters: usize, tol: T) -> Result<(usize, bool)> {
        let hi = T::lit(ABSORB_LIMIT);
        let lo = hi.recip();
        let mut fallbacks = 0usize;
        for it in 1..=max_iters {
            if !self.kernel_times_v() {
                fallbacks += 1;
                self.log_update(eps);
                continue;
            }
            for (u, &s) in self.u.iter_mut().zip(&self.kv) {
                *u = self.inv_n / s;
            }
            if !self.kernel_t_times_u() {
                fallbacks += 1;
                self.log_update(eps);
                continue;
            }
            for (v, &s) in self.v.iter_mut().zip(&self.ktu) {
                *v = self.inv_n / s;
            }
            if self.u.iter().chain(&self.v).any(|&s| !(s > lo && s < hi)) {
                self.absorb(eps);
            }
            if !self.kernel_times_v() {
                continue;
            }
            let worst = self
                .u
                .iter()
                .zip(&self.kv)
                .map(|(&u, &s)| (u * s - self.inv_n).abs())
                .fold(T::zero(), |m, d| if d.is_nan() || d > m { d } else { m });
            if worst <= tol {
                return Ok((it, true));
            }
        }
        if fallbacks == max_iters {
            return Err(Error::Sinkhorn(format!(
                "kernel stayed degenerate at ε̃ = {eps}"
            )));
        }
        Ok((max_iters, false))
    }
}

fn sinkhorn_log<T: Real>(cost: &Matrix<T>, cfg: &SinkhornConfig<T>) -> Result<TransportPlan<T>> {
    let n = cost.rows();
    let target = cfg.entropic_eps;
    let mut state = Stabilized::new(cost);
    let mut used = 0;

    // Anneal from the cost scale down to the target regularization.
    let two = T::lit(2.0);
    let stage_tol = T::lit(1e-3) * state.inv_n;
    let mut eps = cost.max_abs().max(target);
    state.rebuild(eps);
    while eps > target * two {
        used += state.run(eps, ANNEAL_STAGE_ITERS, stage_tol)?.0;
        eps /= two;
        state.absorb(eps);
    }
    state.absorb(target);
    let (it, converged) = state.run(target, cfg.max_iters, cfg.marginal_tol)?;
    used += it;

    let mut pi = state.kernel.clone();
    for i in 0..n {
        let u = state.u[i];
        for (p, &v) in pi.row_mut(i).iter_mut().zip(&state.v) {
            *p = u * *p * v;
        }
    }
    if !pi.is_finite() || pi.sum() == T::zero() {
        return Err(Error::Sinkhorn(format!(
            "log-domain iterations degenerated (ε̃ = {target})"
        )));
    }
    Ok(TransportPlan {
        pi,
        log_row_scaling: state
            .f
            .iter()
            .zip(&state.u)
            .map(|(&f, &u)| f / target + u.ln())
            .collect(),
        log_col_scaling: state
            .g
            .iter()
            .zip(&state.v)
            .map(|(&g, &v)| g / target + v.ln())
            .collect(),
        converged,
        iterations_used: used,
        log_domain: true,
    })
}

/// `⟨π, C⟩`.
pub fn ot_cost<T: Real>(plan: &TransportPlan<T>, cost: &Matrix<T>) -> Result<T> {
    plan.pi.frobenius_dot(cost)
}

/// `⟨π, C⟩ + ε̃ Σ π (log π − 1)`, with `0 log 0 = 0`.
pub fn entropic_objective<T: Real>(plan: &TransportPlan<T>, cost: &Matrix<T>, eps: T) -> Result<T> {
    let transport = ot_cost(plan, cost)?;
    let entropy: T = plan
        .pi
        .as_slice()
        .iter()
        .map(|&p| if p > T::zero() { p * (p.ln() - T::one()) } else { T::zero() })
        .sum();
    Ok(transport + eps * entropy)
}

/// Gradient of the transport objective with respect to the predictions:
/// row `j` is `−2 Σ_i π_ij (z_i − ẑ_j)`.
pub fn envelope_grad_predictions<T: Real>(
    plan: &TransportPlan<T>,
    targets: &Matrix<T>,
    predictions: &Matrix<T>,
) -> Result<Matrix<T>> {
    let n = plan.size();
    ensure_len("envelope gradient targets", n, targets.rows())?;
    ensure_len("envelope gradient predictions", n, predictions.rows())?;
    ensure_len("envelope gradient dimension", targets.cols(), predictions.cols())?;
    let d = targets.cols();
    let two = T::lit(2.0);
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let z = targets.row(i);
        for j in 0..n {
            let p = plan.pi[(i, j)];
            if p == T::zero() {
                continue;
            }
            let zhat = predictions.row(j);
            for ((o, &zi), &zh) in out.row_mut(j).iter_mut().zip(z).zip(zhat) {
                *o -= two * p * (zi - zh);
            }
        }
    }
    Ok(out)
}

fn sorted_finite<T: Real>(values: &[T], what: &'static str) -> Result<Vec<T>> {
    if values.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    if !crate::numcore::scalar::all_finite(values) {
        return Err(Error::NonFinite(what));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(v)
}

/// Exact `W₂` between two empirical 1-D distributions.
///
/// Integrates the squared difference of the two quantile functions, which
/// reduces to sorted matching when the sample counts agree.
pub fn wasserstein2_1d_exact<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    let a = sorted_finite(a, "first sample set")?;
    let b = sorted_finite(b, "second sample set")?;
    let (n, m) = (a.len(), b.len());
    if n == m {
        let total: T = a.iter().zip(&b).map(|(&x, &y)| (x - y) * (x - y)).sum();
        return Ok((total / T::from_usize_lossy(n)).sqrt());
    }
    // Quantile breakpoints k/n and k/m, compared on the common grid 1/(n·m).
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0usize;
    let mut total = T::zero();
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        total += T::from_usize_lossy(next - t) * d * d;
        t = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok((total / (T::from_usize_lossy(n) * T::from_usize_lossy(m))).sqrt())
}

/// Columns `i,j,pi_ij`.
pub fn write_plan_csv<T: Real, W: Write>(out: &mut W, plan: &TransportPlan<T>) -> io::Result<()> {
    writeln!(out, "i,j,pi_ij")?;
    for (i, row) in plan.pi.row_iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            writeln!(out, "{i},{j},{p}")?;
        }
    }
    Ok(())
}
