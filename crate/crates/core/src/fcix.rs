//! Financial Chaos Index.
//!
//! Each period's gross-return vector `r` defines a reciprocal pairwise
//! comparison matrix `A = r (1/r)ᵀ`; stacking them over time gives a positive
//! N × N × T tensor. The tensor is never formed: every quantity the rank-one
//! alternating least-squares fit needs reduces to per-period dot products with
//! `r` and `1/r`, so a sweep costs O(N·T).
//!
//! The fitted model is `z_t · x yᵀ` with `‖x‖ = ‖y‖ = 1` and all scale in `z`.
//! FCIX at `t` is `(λ_t − N) / (N − 1)`, where `λ_t = z_t ⟨x, y⟩` is the Perron
//! root of the fitted slice.

use chrono::NaiveDate;
use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{gross_returns, PricePanel, ReturnPanel};

/// Periods per parallel work unit. Fixed so reductions never depend on the
/// thread count.
const CHUNK: usize = 256;

/// The reciprocal pairwise comparison tensor of a return panel, held as the
/// time-major return and inverse-return grids only.
#[derive(Debug, Clone)]
pub struct ImplicitRpct {
    n: usize,
    t: usize,
    /// T × N, row `t` is `r^(t)`.
    r: Vec<f64>,
    /// T × N, row `t` is `1 / r^(t)`.
    rinv: Vec<f64>,
    /// Σ_i r_i² per period.
    r_sq: Vec<f64>,
    /// Σ_j r_j⁻² per period.
    rinv_sq: Vec<f64>,
}

impl ImplicitRpct {
    pub fn new(returns: &ReturnPanel) -> Self {
        let (n, t) = returns.returns().dim();
        let grid = returns.returns();
        let mut r = Vec::with_capacity(n * t);
        for p in 0..t {
            r.extend(grid.column(p).iter().copied());
        }
        let rinv: Vec<f64> = r.iter().map(|v| 1.0 / v).collect();
        let r_sq = r.chunks(n).map(|row| dot(row, row)).collect();
        let rinv_sq = rinv.chunks(n).map(|row| dot(row, row)).collect();
        ImplicitRpct {
            n,
            t,
            r,
            rinv,
            r_sq,
            rinv_sq,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.n
    }

    pub fn n_periods(&self) -> usize {
        self.t
    }

    pub fn returns_at(&self, t: usize) -> &[f64] {
        &self.r[t * self.n..(t + 1) * self.n]
    }

    pub fn inverse_returns_at(&self, t: usize) -> &[f64] {
        &self.rinv[t * self.n..(t + 1) * self.n]
    }

    /// Materialises slice `t`. Only for inspection and small problems.
    pub fn slice(&self, t: usize) -> Result<Array2<f64>> {
        if t >= self.t {
            return Err(Error::Contract(format!("slice index {t} out of range 0..{}", self.t)));
        }
        let r = self.returns_at(t);
        Ok(Array2::from_shape_fn((self.n, self.n), |(i, j)| r[i] / r[j]))
    }
}

/// Reciprocal pairwise comparison matrix at period `t`: entry `(i, j)` is `r_i / r_j`.
pub fn rpcm_slice(panel: &ReturnPanel, t: usize) -> Result<Array2<f64>> {
    if t >= panel.n_periods() {
        return Err(Error::Contract(format!(
            "slice index {t} out of range 0..{}",
            panel.n_periods()
        )));
    }
    let r = panel.period(t);
    let n = r.len();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| r[i] / r[j]))
}

/// `‖A‖_F² = Σ_t (Σ_i r_i²)(Σ_j r_j⁻²)`.
pub fn frobenius_norm_sq(rpct: &ImplicitRpct) -> f64 {
    let terms: Vec<f64> = rpct.r_sq.iter().zip(&rpct.rinv_sq).map(|(a, b)| a * b).collect();
    tree_sum(&terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AlsInit {
    /// Normalised mean of `r` (for x) and of `1/r` (for y) over all periods.
    ModeMeans,
    /// Caller-supplied positive starting vectors.
    Given { x: Vec<f64>, y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsOptions {
    pub max_sweeps: usize,
    /// Relative objective change that counts as converged.
    pub tol: f64,
    pub init: AlsInit,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions {
            max_sweeps: 500,
            tol: 1e-10,
            init: AlsInit::ModeMeans,
        }
    }
}

/// Rank-one fit `z ∘ (x yᵀ)` of the comparison tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneFactors {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Squared Frobenius residual after initialisation and after each of the
    /// three block updates of every sweep.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl RankOneFactors {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

pub fn fit_rank_one(rpct: &ImplicitRpct, opts: &AlsOptions) -> Result<RankOneFactors> {
    let (n, t) = (rpct.n, rpct.t);
    if n < 2 || t < 1 {
        return Err(Error::Contract(format!("rank-one fit needs N >= 2 and T >= 1, got N={n}, T={t}")));
    }
    if !(opts.tol >= 0.0) || opts.max_sweeps == 0 {
        return Err(Error::Contract("ALS needs tol >= 0 and max_sweeps >= 1".into()));
    }
    let norm_sq = frobenius_norm_sq(rpct);

    let (mut x, mut y) = match &opts.init {
        AlsInit::ModeMeans => (
            normalized(column_mean(&rpct.r, n)),
            normalized(column_mean(&rpct.rinv, n)),
        ),
        AlsInit::Given { x, y } => {
            if x.len() != n || y.len() != n || x.iter().chain(y).any(|v| !(*v > 0.0)) {
                return Err(Error::Contract("initial x and y must be positive N-vectors".into()));
            }
            (normalized(x.clone()), normalized(y.clone()))
        }
    };
    let mut u = row_dots(&rpct.r, n, &x);
    let mut s = row_dots(&rpct.rinv, n, &y);
    let mut z = z_update(&u, &s, &x, &y);
    check_positive("z", &z)?;

    let mut trace = vec![objective(rpct, &x, &y, &z)];
    let mut converged = false;
    let mut sweeps = 0;
    let floor = 1e-20 * norm_sq;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let prev = *trace.last().unwrap();

        // x: least squares with y, z fixed
        let zz = tree_sum(&z.iter().map(|v| v * v).collect::<Vec<_>>());
        let w: Vec<f64> = z.iter().zip(&s).map(|(a, b)| a * b).collect();
        let denom = dot(&y, &y) * zz;
        x = weighted_row_sum(&rpct.r, n, &w).into_iter().map(|v| v / denom).collect();
        check_positive("x", &x)?;
        rescale_into(&mut x, &mut z);
        trace.push(objective(rpct, &x, &y, &z));

        // y
        u = row_dots(&rpct.r, n, &x);
        let zz = tree_sum(&z.iter().map(|v| v * v).collect::<Vec<_>>());
        let w: Vec<f64> = z.iter().zip(&u).map(|(a, b)| a * b).collect();
        let denom = dot(&x, &x) * zz;
        y = weighted_row_sum(&rpct.rinv, n, &w).into_iter().map(|v| v / denom).collect();
        check_positive("y", &y)?;
        rescale_into(&mut y, &mut z);
        trace.push(objective(rpct, &x, &y, &z));

        // z
        s = row_dots(&rpct.rinv, n, &y);
        z = z_update(&u, &s, &x, &y);
        check_positive("z", &z)?;
        let cur = objective(rpct, &x, &y, &z);
        trace.push(cur);

        if (prev - cur).abs() <= opts.tol * prev.max(floor) {
            converged = true;
            break;
        }
    }

    let final_obj = *trace.last().unwrap();
    let relative_residual = if norm_sq > 0.0 {
        (final_obj.max(0.0) / norm_sq).sqrt().min(1.0)
    } else {
        0.0
    };
    Ok(RankOneFactors {
        x,
        y,
        z,
        relative_residual,
        iterations: sweeps,
        converged,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-12,
            max_iters: 10_000,
        }
    }
}

/// Perron root and unit eigenvector of a positive square matrix by power
/// iteration with L2 normalisation.
pub fn dominant_eigenvalue(matrix: ArrayView2<'_, f64>, opts: PowerOptions) -> Result<(f64, Array1<f64>)> {
    let (n, m) = matrix.dim();
    if n != m || n == 0 {
        return Err(Error::Contract(format!("expected a non-empty square matrix, got {n}x{m}")));
    }
    if matrix.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Contract("power iteration here requires a strictly positive matrix".into()));
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = f64::NAN;
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let w = matrix.dot(&v);
        let next = w.dot(&w).sqrt();
        v = w / next;
        change = (next - lambda).abs();
        lambda = next;
        if change <= opts.tol {
            return Ok((lambda, v));
        }
    }
    Err(Error::NonConvergence {
        what: "power iteration",
        iterations: opts.max_iters,
        last_change: change,
        last_iterate: v.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FcixSeries {
    pub timestamps: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub lambda_max: Vec<f64>,
}

/// FCIX from fitted factors. `timestamps` must have one entry per period.
pub fn fcix_series(factors: &RankOneFactors, n_assets: usize, timestamps: &[NaiveDate]) -> Result<FcixSeries> {
    if timestamps.len() != factors.z.len() {
        return Err(Error::Contract(format!(
            "{} timestamps for {} periods",
            timestamps.len(),
            factors.z.len()
        )));
    }
    if n_assets < 2 || factors.x.len() != n_assets || factors.y.len() != n_assets {
        return Err(Error::Contract("factor length does not match the asset count".into()));
    }
    let xy = dot(&factors.x, &factors.y);
    let n = n_assets as f64;
    let lambda_max: Vec<f64> = factors.z.iter().map(|z| z * xy).collect();
    let values = lambda_max.iter().map(|l| (l - n) / (n - 1.0)).collect();
    Ok(FcixSeries {
        timestamps: timestamps.to_vec(),
        values,
        lambda_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcixOptions {
    pub als: AlsOptions,
    /// Sliding window length in return periods. Each window is fitted
    /// separately and contributes the FCIX of its last period.
    pub window: Option<usize>,
}

impl Default for FcixOptions {
    fn default() -> Self {
        FcixOptions {
            als: AlsOptions::default(),
            window: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FcixRun {
    pub series: FcixSeries,
    /// One entry for a full-sample fit, one per window otherwise.
    pub factors: Vec<RankOneFactors>,
}

/// Prices to FCIX: gross returns, rank-one fit, eigenvalue map.
/// Fails with [`Error::NonConvergence`] if any fit exhausts its sweeps.
pub fn fcix_pipeline(panel: &PricePanel, opts: &FcixOptions) -> Result<FcixRun> {
    let returns = gross_returns(panel)?;
    let n = returns.n_assets();
    let fit = |ret: &ReturnPanel| -> Result<RankOneFactors> {
        let f = fit_rank_one(&ImplicitRpct::new(ret), &opts.als)?;
        if !f.converged {
            return Err(Error::NonConvergence {
                what: "rank-one ALS",
                iterations: f.iterations,
                last_change: trace_change(&f.objective_trace),
                last_iterate: f.z.clone(),
            });
        }
        Ok(f)
    };
    match opts.window {
        None => {
            let f = fit(&returns)?;
            let series = fcix_series(&f, n, returns.timestamps())?;
            Ok(FcixRun { series, factors: vec![f] })
        }
        Some(w) => {
            let total = returns.n_periods();
            if w == 0 || w > total {
                return Err(Error::Contract(format!("window {w} must be in 1..={total}")));
            }
            let mut series = FcixSeries {
                timestamps: Vec::new(),
                values: Vec::new(),
                lambda_max: Vec::new(),
            };
            let mut factors = Vec::new();
            for end in w..=total {
                let win = returns.window(end - w, end)?;
                let f = fit(&win)?;
                let s = fcix_series(&f, n, win.timestamps())?;
                series.timestamps.push(*s.timestamps.last().unwrap());
                series.values.push(*s.values.last().unwrap());
                series.lambda_max.push(*s.lambda_max.last().unwrap());
                factors.push(f);
            }
            Ok(FcixRun { series, factors })
        }
    }
}

fn trace_change(trace: &[f64]) -> f64 {
    match trace.len() {
        0..=3 => f64::NAN,
        k => (trace[k - 4] - trace[k - 1]).abs(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|e| *e /= norm);
    v
}

/// Moves the norm of `v` into `z`, leaving `v` at unit length.
fn rescale_into(v: &mut [f64], z: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    v.iter_mut().for_each(|e| *e /= norm);
    z.iter_mut().for_each(|e| *e *= norm);
}

fn check_positive(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|e| !(*e > 0.0) || !e.is_finite()) {
        Some(i) => Err(Error::Internal(format!("{name}[{i}] = {} is not positive", v[i]))),
        None => Ok(()),
    }
}

fn z_update(u: &[f64], s: &[f64], x: &[f64], y: &[f64]) -> Vec<f64> {
    let denom = dot(x, x) * dot(y, y);
    u.iter().zip(s).map(|(a, b)| a * b / denom).collect()
}

/// Mean of the rows of a row-major `? × n` grid.
fn column_mean(grid: &[f64], n: usize) -> Vec<f64> {
    let t = grid.len() / n;
    let w = vec![1.0 / t as f64; t];
    weighted_row_sum(grid, n, &w)
}

/// Dot product of every row of a row-major grid with `v`.
fn row_dots(grid: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    grid.par_chunks(n * CHUNK)
        .flat_map_iter(|block| block.chunks(n).map(|row| dot(row, v)).collect::<Vec<_>>())
        .collect()
}

/// `Σ_t w_t · row_t`, summed per fixed chunk then tree-reduced.
fn weighted_row_sum(grid: &[f64], n: usize, w: &[f64]) -> Vec<f64> {
    let partials: Vec<Vec<f64>> = grid
        .par_chunks(n * CHUNK)
        .zip(w.par_chunks(CHUNK))
        .map(|(block, wb)| {
            let mut acc = vec![0.0; n];
            for (row, &wt) in block.chunks(n).zip(wb) {
                for (a, r) in acc.iter_mut().zip(row) {
                    *a += wt * r;
                }
            }
            acc
        })
        .collect();
    tree_reduce(partials, |mut a, b| {
        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        a
    })
    .unwrap_or_else(|| vec![0.0; n])
}

fn tree_sum(v: &[f64]) -> f64 {
    let partials: Vec<f64> = v.par_chunks(CHUNK).map(|c| c.iter().sum()).collect();
    tree_reduce(partials, |a, b| a + b).unwrap_or(0.0)
}

/// Pairwise reduction in fixed order.
fn tree_reduce<T, F: Fn(T, T) -> T>(mut items: Vec<T>, f: F) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(f(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Squared residual `Σ_t ‖r_t (1/r_t)ᵀ − z_t x yᵀ‖²`.
///
/// Each slice residual is the difference of two rank-one matrices. Splitting
/// `z_t x` and `y` into components along and orthogonal to `r_t` and `1/r_t`
/// turns the norm into a sum of non-negative terms, which stays accurate when
/// the fit is nearly exact (the naive expansion loses everything below
/// ~1e-16 · ‖A‖²).
fn objective(rpct: &ImplicitRpct, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    let n = rpct.n;
    let yy = dot(y, y);
    let per_period: Vec<f64> = (0..rpct.t)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|t| {
            let a = &rpct.r[t * n..(t + 1) * n];
            let b = &rpct.rinv[t * n..(t + 1) * n];
            let (aa, bb) = (rpct.r_sq[t], rpct.rinv_sq[t]);
            let zt = z[t];
            let alpha = zt * dot(x, a) / aa;
            let beta = dot(y, b) / bb;
            let mut c_perp = 0.0;
            let mut d_perp = 0.0;
            for i in 0..n {
                let c = zt * x[i] - alpha * a[i];
                let d = y[i] - beta * b[i];
                c_perp += c * c;
                d_perp += d * d;
            }
            let k = 1.0 - alpha * beta;
            aa * (k * k * bb + alpha * alpha * d_perp) + c_perp * yy
        })
        .collect();
    tree_sum(&per_period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::daily_dates;
    use ndarray::array;

    fn panel(returns: Array2<f64>) -> ReturnPanel {
        let (n, t) = returns.dim();
        ReturnPanel::new(
            (0..n).map(|i| format!("A{i}")).collect(),
            daily_dates(NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(), t),
            returns,
        )
        .unwrap()
    }

    #[test]
    fn slices_by_definition() {
        let p = panel(array![[1.0, 2.0], [1.0, 1.0]]);
        assert_eq!(rpcm_slice(&p, 0).unwrap(), array![[1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(rpcm_slice(&p, 1).unwrap(), array![[1.0, 2.0], [0.5, 1.0]]);
        assert!(rpcm_slice(&p, 2).is_err());
    }

    #[test]
    fn norm_small_cases() {
        let ones = panel(Array2::ones((3, 2)));
        assert_eq!(frobenius_norm_sq(&ImplicitRpct::new(&ones)), 18.0);
        let p = panel(array![[2.0], [1.0]]);
        assert_eq!(frobenius_norm_sq(&ImplicitRpct::new(&p)), 6.25);
    }

    #[test]
    fn eigen_small_cases() {
        let (l, v) = dominant_eigenvalue(array![[1.0, 2.0], [0.5, 1.0]].view(), PowerOptions::default()).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
        assert!(v.iter().all(|e| *e > 0.0));
        let (l, _) = dominant_eigenvalue(Array2::ones((3, 3)).view(), PowerOptions::default()).unwrap();
        assert!((l - 3.0).abs() < 1e-12);
        assert!(dominant_eigenvalue(array![[1.0, 0.0], [1.0, 1.0]].view(), PowerOptions::default()).is_err());
    }

    #[test]
    fn single_period_is_exact() {
        let p = panel(array![[1.02], [0.97], [1.10], [0.88]]);
        let f = fit_rank_one(&ImplicitRpct::new(&p), &AlsOptions::default()).unwrap();
        assert!(f.converged);
        assert!(f.relative_residual <= 1e-10, "{}", f.relative_residual);
        let s = fcix_series(&f, 4, p.timestamps()).unwrap();
        assert!((s.lambda_max[0] - 4.0).abs() < 1e-10);
        assert!(s.values[0].abs() < 1e-10);
    }

    #[test]
    fn two_assets_share_code_path() {
        let p = panel(array![[1.1, 0.9, 1.3], [0.95, 1.05, 1.0]]);
        let f = fit_rank_one(&ImplicitRpct::new(&p), &AlsOptions::default()).unwrap();
        assert!(f.converged);
        assert!(f.x.iter().chain(&f.y).chain(&f.z).all(|v| *v > 0.0));
        assert!((dot(&f.x, &f.x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_init() {
        let p = panel(array![[1.1, 0.9], [0.95, 1.05]]);
        let opts = AlsOptions {
            init: AlsInit::Given { x: vec![1.0, -1.0], y: vec![1.0, 1.0] },
            ..AlsOptions::default()
        };
        assert!(matches!(fit_rank_one(&ImplicitRpct::new(&p), &opts), Err(Error::Contract(_))));
    }

    #[test]
    fn tree_reduce_fixed_order() {
        assert_eq!(tree_reduce(vec![1, 2, 3, 4, 5], |a, b| a * 10 + b), Some(((12 * 10 + 34) * 10) + 5));
        assert_eq!(tree_reduce(Vec::<i32>::new(), |a, b| a + b), None);
    }
}
