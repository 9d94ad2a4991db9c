//! Vector autoregressions with an optional contemporaneous (lag-0) block.
//!
//! Each equation regresses one series on an intercept, its own lags 1..p, the
//! lags 1..p of every other series and, when enabled, the current value of
//! every other series. A series' own lag-0 value is never a regressor in its
//! own equation. Equations are fitted one at a time by pivoted-QR least squares.

use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::PivotedQr;
use crate::panel::SeriesTable;

/// Extra rows required beyond the regressor count.
pub const MIN_SPARE_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarSpec {
    pub p: usize,
    pub include_instantaneous: bool,
    pub include_intercept: bool,
}

impl VarSpec {
    pub fn new(p: usize) -> Self {
        VarSpec {
            p,
            include_instantaneous: true,
            include_intercept: true,
        }
    }

    /// Regressors in the unrestricted equation of a K-variable system.
    pub fn regressor_count(&self, k: usize) -> usize {
        usize::from(self.include_intercept) + k * self.p + if self.include_instantaneous { k - 1 } else { 0 }
    }
}

/// Whether a term enters at lags 1..p or at lag 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagKind {
    Lagged,
    Instantaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    Intercept,
    Lag { variable: usize, lag: usize },
}

impl fmt::Display for Regressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regressor::Intercept => write!(f, "const"),
            Regressor::Lag { variable, lag: 0 } => write!(f, "y{variable}[t]"),
            Regressor::Lag { variable, lag } => write!(f, "y{variable}[t-{lag}]"),
        }
    }
}

/// Regressor matrix and response for one equation on rows `p..T`.
#[derive(Debug, Clone)]
pub struct Design {
    pub target: usize,
    pub regressors: Vec<Regressor>,
    /// T_eff × regressors.
    pub matrix: Array2<f64>,
    pub response: Array1<f64>,
    /// Index in the table of the first response row.
    pub first_row: usize,
}

impl Design {
    pub fn t_eff(&self) -> usize {
        self.response.len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquationFit {
    pub target_index: usize,
    pub regressors: Vec<Regressor>,
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub residuals: Array1<f64>,
    /// Sum of squared residuals divided by T_eff.
    pub residual_variance: f64,
    pub t_eff: usize,
}

impl EquationFit {
    pub fn coefficient(&self, r: Regressor) -> Option<f64> {
        self.regressors.iter().position(|x| *x == r).map(|i| self.coefficients[i])
    }
}

/// Builds the design for `target`, leaving out every `(variable, kind)` in
/// `exclusions`: `Lagged` drops lags 1..p of the variable, `Instantaneous`
/// drops its lag-0 term.
pub fn build_design(
    table: &SeriesTable,
    target: usize,
    spec: &VarSpec,
    exclusions: &[(usize, LagKind)],
) -> Result<Design> {
    let k = table.n_series();
    if target >= k {
        return Err(Error::Contract(format!("target {target} out of range 0..{k}")));
    }
    if spec.p == 0 {
        return Err(Error::Contract("lag order p must be >= 1".into()));
    }
    for &(v, kind) in exclusions {
        if v >= k {
            return Err(Error::Contract(format!("excluded variable {v} out of range 0..{k}")));
        }
        if kind == LagKind::Instantaneous && v == target {
            return Err(Error::Contract("the target's own lag-0 term is never a regressor".into()));
        }
        if kind == LagKind::Instantaneous && !spec.include_instantaneous {
            return Err(Error::Contract("cannot exclude a lag-0 term when the instantaneous block is off".into()));
        }
    }
    let t = table.len();
    let full = spec.regressor_count(k);
    if t <= spec.p || t - spec.p < full + MIN_SPARE_ROWS {
        return Err(Error::InsufficientData(format!(
            "{} usable rows for {full} regressors (need {} spare)",
            t.saturating_sub(spec.p),
            MIN_SPARE_ROWS
        )));
    }
    let excluded = |v: usize, kind: LagKind| exclusions.contains(&(v, kind));

    let mut regressors = Vec::with_capacity(full);
    if spec.include_intercept {
        regressors.push(Regressor::Intercept);
    }
    let lag_order = std::iter::once(target).chain((0..k).filter(|&v| v != target));
    for v in lag_order {
        if !excluded(v, LagKind::Lagged) {
            regressors.extend((1..=spec.p).map(|lag| Regressor::Lag { variable: v, lag }));
        }
    }
    if spec.include_instantaneous {
        for v in (0..k).filter(|&v| v != target) {
            if !excluded(v, LagKind::Instantaneous) {
                regressors.push(Regressor::Lag { variable: v, lag: 0 });
            }
        }
    }

    let rows = t - spec.p;
    let values = table.values();
    let matrix = Array2::from_shape_fn((rows, regressors.len()), |(r, c)| match regressors[c] {
        Regressor::Intercept => 1.0,
        Regressor::Lag { variable, lag } => values[[variable, spec.p + r - lag]],
    });
    let response = values.row(target).slice(ndarray::s![spec.p..]).to_owned();
    Ok(Design {
        target,
        regressors,
        matrix,
        response,
        first_row: spec.p,
    })
}

/// Least-squares fit of one equation.
pub fn ols_fit(design: &Design) -> Result<EquationFit> {
    let qr = PivotedQr::new(design.matrix.view());
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient {
            columns: qr
                .dependent_columns()
                .into_iter()
                .map(|c| design.regressors[c].to_string())
                .collect(),
        });
    }
    let (coef, residuals) = qr.solve(design.response.view());
    let t_eff = design.t_eff();
    let residual_variance = residuals.dot(&residuals) / t_eff as f64;
    Ok(EquationFit {
        target_index: design.target,
        regressors: design.regressors.clone(),
        coefficients: coef.to_vec(),
        residuals,
        residual_variance,
        t_eff,
    })
}

/// BIC of the reduced-form VAR(p), p = 1..=p_max, all on rows `p_max..T`.
pub fn lag_criteria(table: &SeriesTable, p_max: usize, include_intercept: bool) -> Result<Vec<f64>> {
    if p_max == 0 {
        return Err(Error::Contract("p_max must be >= 1".into()));
    }
    let k = table.n_series();
    let t = table.len();
    let widest = usize::from(include_intercept) + k * p_max;
    if t <= p_max || t - p_max < widest + MIN_SPARE_ROWS {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot support a VAR({p_max}) with {k} series",
            t
        )));
    }
    let t_eff = t - p_max;
    let values = table.values();
    (1..=p_max)
        .map(|p| {
            let cols = usize::from(include_intercept) + k * p;
            let x = Array2::from_shape_fn((t_eff, cols), |(r, c)| {
                if include_intercept && c == 0 {
                    return 1.0;
                }
                let c = c - usize::from(include_intercept);
                let (v, lag) = (c / p, c % p + 1);
                values[[v, p_max + r - lag]]
            });
            let qr = PivotedQr::new(x.view());
            if !qr.is_full_rank() {
                return Err(Error::RankDeficient {
                    columns: qr.dependent_columns().iter().map(|c| format!("column {c}")).collect(),
                });
            }
            let mut resid = Array2::zeros((k, t_eff));
            for j in 0..k {
                let y = values.row(j).slice(ndarray::s![p_max..]).to_owned();
                let (_, e) = qr.solve(y.view());
                resid.row_mut(j).assign(&e);
            }
            let sigma = resid.dot(&resid.t()) / t_eff as f64;
            let log_det = log_det_spd(&sigma)?;
            let n_params = (k * cols) as f64;
            Ok(log_det + n_params * (t_eff as f64).ln() / t_eff as f64)
        })
        .collect()
}

/// Lag order in 1..=p_max minimising BIC (ties go to the smaller order).
pub fn select_lag(table: &SeriesTable, p_max: usize, include_intercept: bool) -> Result<usize> {
    let bic = lag_criteria(table, p_max, include_intercept)?;
    let (best, _) = bic
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &b)| if b < acc.1 { (i, b) } else { acc });
    Ok(best + 1)
}

fn log_det_spd(m: &Array2<f64>) -> Result<f64> {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let chol = nalgebra::Cholesky::new(dm)
        .ok_or_else(|| Error::Internal("residual covariance is not positive definite".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::daily_dates;
    use chrono::NaiveDate;

    fn table(k: usize, t: usize) -> SeriesTable {
        let values = Array2::from_shape_fn((k, t), |(i, j)| ((i * 7 + j * 13) % 17) as f64 + (j as f64 * 0.37 + i as f64).sin());
        SeriesTable::new(
            (0..k).map(|i| format!("S{i}")).collect(),
            daily_dates(NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(), t),
            values,
        )
        .unwrap()
    }

    #[test]
    fn bivariate_regressor_set() {
        let tb = table(2, 40);
        let d = build_design(&tb, 0, &VarSpec::new(1), &[]).unwrap();
        assert_eq!(
            d.regressors,
            vec![
                Regressor::Intercept,
                Regressor::Lag { variable: 0, lag: 1 },
                Regressor::Lag { variable: 1, lag: 1 },
                Regressor::Lag { variable: 1, lag: 0 },
            ]
        );
        let d = build_design(&tb, 0, &VarSpec::new(1), &[(1, LagKind::Lagged)]).unwrap();
        assert_eq!(
            d.regressors,
            vec![Regressor::Intercept, Regressor::Lag { variable: 0, lag: 1 }, Regressor::Lag { variable: 1, lag: 0 }]
        );
        // response and lagged columns line up with the table
        assert_eq!(d.response[0], tb.values()[[0, 1]]);
        assert_eq!(d.matrix[[0, 1]], tb.values()[[0, 0]]);
        assert_eq!(d.matrix[[0, 2]], tb.values()[[1, 1]]);
    }

    #[test]
    fn own_lag_zero_exclusion_is_a_contract_error() {
        let tb = table(2, 40);
        assert!(matches!(
            build_design(&tb, 0, &VarSpec::new(1), &[(0, LagKind::Instantaneous)]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn short_sample_rejected() {
        let tb = table(4, 20);
        assert!(matches!(build_design(&tb, 0, &VarSpec::new(3), &[]), Err(Error::InsufficientData(_))));
        assert!(matches!(select_lag(&tb, 5, true), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn collinear_columns_named() {
        let mut tb = table(3, 60);
        let mut v = tb.values().clone();
        let row0 = v.row(0).to_owned();
        v.row_mut(2).assign(&(&row0 * 2.0));
        tb = SeriesTable::new(tb.names().to_vec(), tb.timestamps().to_vec(), v).unwrap();
        let d = build_design(&tb, 1, &VarSpec::new(1), &[]).unwrap();
        match ols_fit(&d) {
            Err(Error::RankDeficient { columns }) => {
                assert_eq!(columns.len(), 2, "{columns:?}");
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }
}
