//! Seeded ground-truth generators: structural VARs with known lagged and
//! lag-0 coupling, and positive price panels with a scheduled cross-sectional
//! dispersion.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::egc::{CausalNetwork, EgcKind};
use crate::error::{Error, Result};
use crate::panel::{daily_dates, PricePanel, SeriesTable};
use crate::seed;

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")
}

/// `Y_t = B_0 Y_t + Σ_{k=1..p} B_k Y_{t−k} + ε_t` with independent Gaussian
/// innovations. Matrices are indexed `[target][source]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TruthDoc", into = "TruthDoc")]
pub struct VarGroundTruth {
    names: Vec<String>,
    /// `lags[k−1]` is `B_k`.
    lags: Vec<Array2<f64>>,
    instantaneous: Array2<f64>,
    noise_sd: Vec<f64>,
    /// Order in which lag-0 terms can be resolved (parents first).
    order: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    lags: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instantaneous: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_sd: Option<Vec<f64>>,
}

fn to_array(rows: &[Vec<f64>], k: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(Error::invalid(format!("{what} must be {k}x{k}")));
    }
    Ok(Array2::from_shape_fn((k, k), |(i, j)| rows[i][j]))
}

impl TryFrom<TruthDoc> for VarGroundTruth {
    type Error = Error;

    fn try_from(doc: TruthDoc) -> Result<Self> {
        let k = doc
            .lags
            .first()
            .map(|m| m.len())
            .or_else(|| doc.instantaneous.as_ref().map(|m| m.len()))
            .ok_or_else(|| Error::invalid("truth needs at least one lag matrix"))?;
        let lags = doc
            .lags
            .iter()
            .enumerate()
            .map(|(i, m)| to_array(m, k, &format!("lag matrix {}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let b0 = match &doc.instantaneous {
            Some(m) => to_array(m, k, "instantaneous matrix")?,
            None => Array2::zeros((k, k)),
        };
        VarGroundTruth::new(
            doc.names.unwrap_or_else(|| default_names(k)),
            lags,
            b0,
            doc.noise_sd.unwrap_or_else(|| vec![1.0; k]),
        )
    }
}

impl From<VarGroundTruth> for TruthDoc {
    fn from(t: VarGroundTruth) -> Self {
        let rows = |m: &Array2<f64>| m.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        TruthDoc {
            lags: t.lags.iter().map(rows).collect(),
            instantaneous: Some(rows(&t.instantaneous)),
            noise_sd: Some(t.noise_sd),
            names: Some(t.names),
        }
    }
}

fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("X{i}")).collect()
}

impl VarGroundTruth {
    /// Validates shapes, a zero lag-0 diagonal, acyclic lag-0 structure and
    /// positive noise scales. Stability is checked separately by
    /// [`VarGroundTruth::check_stable`].
    pub fn new(names: Vec<String>, lags: Vec<Array2<f64>>, instantaneous: Array2<f64>, noise_sd: Vec<f64>) -> Result<Self> {
        let k = instantaneous.nrows();
        if k == 0 || lags.is_empty() {
            return Err(Error::invalid("truth needs K >= 1 and p >= 1"));
        }
        if instantaneous.ncols() != k || lags.iter().any(|m| m.dim() != (k, k)) {
            return Err(Error::invalid("all coefficient matrices must be KxK"));
        }
        if names.len() != k || noise_sd.len() != k {
            return Err(Error::invalid(format!("need {k} names and {k} noise scales")));
        }
        if noise_sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise standard deviations must be positive"));
        }
        if lags.iter().chain(std::iter::once(&instantaneous)).flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        if (0..k).any(|i| instantaneous[[i, i]] != 0.0) {
            return Err(Error::invalid("the lag-0 matrix must have a zero diagonal"));
        }
        let order = topological_order(&instantaneous)
            .ok_or_else(|| Error::invalid("lag-0 coupling must be acyclic (triangular under some ordering)"))?;
        Ok(VarGroundTruth {
            names,
            lags,
            instantaneous,
            noise_sd,
            order,
        })
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn p(&self) -> usize {
        self.lags.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lag_matrix(&self, lag: usize) -> &Array2<f64> {
        &self.lags[lag - 1]
    }

    pub fn instantaneous(&self) -> &Array2<f64> {
        &self.instantaneous
    }

    pub fn noise_sd(&self) -> &[f64] {
        &self.noise_sd
    }

    /// Reduced-form lag matrices `(I − B_0)⁻¹ B_k`.
    pub fn reduced_form(&self) -> Vec<Array2<f64>> {
        let k = self.k();
        let i_minus_b0 = DMatrix::from_fn(k, k, |i, j| f64::from(u8::from(i == j)) - self.instantaneous[[i, j]]);
        // unit-triangular under a permutation, hence always invertible
        let inv = i_minus_b0.try_inverse().expect("I - B0 is invertible for acyclic B0");
        self.lags
            .iter()
            .map(|b| {
                let bm = DMatrix::from_fn(k, k, |i, j| b[[i, j]]);
                let a = &inv * bm;
                Array2::from_shape_fn((k, k), |(i, j)| a[(i, j)])
            })
            .collect()
    }

    /// Spectral radius of the reduced-form companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let k = self.k();
        let p = self.p();
        let a = self.reduced_form();
        let companion = DMatrix::from_fn(k * p, k * p, |r, c| {
            if r < k {
                a[c / k][[r, c % k]]
            } else if r - k == c {
                1.0
            } else {
                0.0
            }
        });
        companion.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn check_stable(&self) -> Result<f64> {
        let rho = self.spectral_radius();
        if rho >= 1.0 {
            return Err(Error::Unstable { spectral_radius: rho });
        }
        Ok(rho)
    }

    /// True `(source, target)` pairs of one kind. Lagged: any nonzero
    /// `B_k[target][source]`, k >= 1, off the diagonal; instantaneous:
    /// nonzero `B_0[target][source]`.
    pub fn true_edges(&self, kind: EgcKind) -> BTreeSet<(usize, usize)> {
        let k = self.k();
        let mut set = BTreeSet::new();
        for target in 0..k {
            for source in (0..k).filter(|&s| s != target) {
                let hit = match kind {
                    EgcKind::Lagged => self.lags.iter().any(|b| b[[target, source]] != 0.0),
                    EgcKind::Instantaneous => self.instantaneous[[target, source]] != 0.0,
                    _ => false,
                };
                if hit {
                    set.insert((source, target));
                }
            }
        }
        set
    }
}

/// Kahn's algorithm on the lag-0 graph (edge source → target when
/// `B_0[target][source] != 0`). `None` when cyclic.
fn topological_order(b0: &Array2<f64>) -> Option<Vec<usize>> {
    let k = b0.nrows();
    let mut indeg: Vec<usize> = (0..k).map(|t| (0..k).filter(|&s| b0[[t, s]] != 0.0).count()).collect();
    let mut ready: BTreeSet<usize> = (0..k).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(k);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for t in 0..k {
            if b0[[t, v]] != 0.0 {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.insert(t);
                }
            }
        }
    }
    (order.len() == k).then_some(order)
}

/// Simulates `length` observations after discarding `burn_in`, starting from
/// zero. Innovations are drawn in time order from one stream keyed on `seed`.
pub fn simulate_var(truth: &VarGroundTruth, length: usize, burn_in: usize, seed: u64) -> Result<SeriesTable> {
    truth.check_stable()?;
    if length < 2 {
        return Err(Error::Contract("simulate at least 2 observations".into()));
    }
    let k = truth.k();
    let p = truth.p();
    let total = burn_in + length;
    let mut rng = seed::stream(seed, &[0x56_4152]);
    let mut y = Array2::<f64>::zeros((total + p, k));
    for t in p..total + p {
        for (v, sd) in truth.noise_sd.iter().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[[t, v]] = sd * e;
        }
        for &v in &truth.order {
            let mut acc = y[[t, v]];
            for (lag, b) in truth.lags.iter().enumerate() {
                for s in 0..k {
                    acc += b[[v, s]] * y[[t - lag - 1, s]];
                }
            }
            for s in 0..k {
                acc += truth.instantaneous[[v, s]] * y[[t, s]];
            }
            y[[t, v]] = acc;
        }
    }
    let values = y.slice(ndarray::s![p + burn_in.., ..]).t().to_owned();
    SeriesTable::new(truth.names.clone(), daily_dates(epoch(), length), values)
}

/// Per-period cross-sectional dispersion of log returns plus a common
/// market factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionSchedule {
    /// One entry per return period (`n_dates − 1`).
    pub dispersion: Vec<f64>,
    /// Standard deviation of the common log-return shock.
    pub market_vol: f64,
}

impl DispersionSchedule {
    pub fn constant(periods: usize, dispersion: f64, market_vol: f64) -> Self {
        DispersionSchedule {
            dispersion: vec![dispersion; periods],
            market_vol,
        }
    }
}

/// JSON description of a synthetic price panel: a base dispersion overridden
/// on half-open ranges of return periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub assets: usize,
    #[serde(default = "default_vol")]
    pub market_vol: f64,
    #[serde(default = "default_vol")]
    pub base_dispersion: f64,
    #[serde(default)]
    pub regimes: Vec<DispersionRegime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionRegime {
    pub start: usize,
    pub end: usize,
    pub dispersion: f64,
}

fn default_vol() -> f64 {
    0.01
}

impl PanelSpec {
    /// Per-period schedule for a panel with `n_dates` price dates.
    pub fn schedule(&self, n_dates: usize) -> Result<DispersionSchedule> {
        let periods = n_dates.saturating_sub(1);
        let mut s = DispersionSchedule::constant(periods, self.base_dispersion, self.market_vol);
        for r in &self.regimes {
            if r.start >= r.end || r.end > periods {
                return Err(Error::invalid(format!(
                    "regime [{}, {}) is empty or outside the {periods} return periods",
                    r.start, r.end
                )));
            }
            s.dispersion[r.start..r.end].fill(r.dispersion);
        }
        Ok(s)
    }
}

/// Prices start at 100; log return of asset `i` in period `t` is
/// `m_t + σ_t ε_{i,t}` with `m_t ~ N(0, market_vol²)`, `ε ~ N(0, 1)`.
pub fn simulate_price_panel(n_assets: usize, n_dates: usize, schedule: &DispersionSchedule, seed: u64) -> Result<PricePanel> {
    if n_assets < 2 || n_dates < 2 {
        return Err(Error::Contract("a panel needs N >= 2 and T >= 2".into()));
    }
    if schedule.dispersion.len() != n_dates - 1 {
        return Err(Error::invalid(format!(
            "dispersion schedule has {} entries, expected {} (one per return period)",
            schedule.dispersion.len(),
            n_dates - 1
        )));
    }
    if schedule.dispersion.iter().chain(std::iter::once(&schedule.market_vol)).any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid("dispersion and market volatility must be finite and >= 0"));
    }
    let mut rng = seed::stream(seed, &[0x50_414e]);
    let market = Normal::new(0.0, schedule.market_vol).map_err(|e| Error::invalid(e.to_string()))?;
    let mut prices = Array2::<f64>::zeros((n_assets, n_dates));
    prices.column_mut(0).fill(100.0);
    for t in 1..n_dates {
        let m = market.sample(&mut rng);
        let sd = schedule.dispersion[t - 1];
        for i in 0..n_assets {
            let e: f64 = StandardNormal.sample(&mut rng);
            prices[[i, t]] = prices[[i, t - 1]] * (m + sd * e).exp();
        }
    }
    PricePanel::new(
        (0..n_assets).map(|i| format!("A{i:04}")).collect(),
        daily_dates(epoch(), n_dates),
        prices,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    /// 1 with `empty_inferred` set when nothing was inferred.
    pub precision: f64,
    /// 1 with `empty_truth` set when the truth has no edges.
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub empty_inferred: bool,
    pub empty_truth: bool,
}

pub fn score_sets(truth: &BTreeSet<(usize, usize)>, inferred: &BTreeSet<(usize, usize)>) -> RecoveryScore {
    let tp = truth.intersection(inferred).count();
    let fp = inferred.len() - tp;
    let fnn = truth.len() - tp;
    RecoveryScore {
        precision: if inferred.is_empty() { 1.0 } else { tp as f64 / inferred.len() as f64 },
        recall: if truth.is_empty() { 1.0 } else { tp as f64 / truth.len() as f64 },
        true_positives: tp,
        false_positives: fp,
        false_negatives: fnn,
        empty_inferred: inferred.is_empty(),
        empty_truth: truth.is_empty(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecovery {
    pub lagged: RecoveryScore,
    pub instantaneous: RecoveryScore,
}

pub fn edge_recovery_score(truth: &VarGroundTruth, inferred: &CausalNetwork) -> EdgeRecovery {
    let of_kind = |kind| -> BTreeSet<(usize, usize)> {
        inferred.edges_of_kind(kind).map(|e| (e.source, e.target)).collect()
    };
    EdgeRecovery {
        lagged: score_sets(&truth.true_edges(EgcKind::Lagged), &of_kind(EgcKind::Lagged)),
        instantaneous: score_sets(&truth.true_edges(EgcKind::Instantaneous), &of_kind(EgcKind::Instantaneous)),
    }
}
