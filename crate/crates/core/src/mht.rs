//! Joint tests over several component p-values.
//!
//! Two combination rules are offered: Bonferroni's min-p rule and Fisher's
//! `T_F = −2 Σ ln p_k` referred to a chi-square law with `2m` degrees of
//! freedom. Fisher's rule assumes independent components; the report says so.

use serde::{Deserialize, Serialize};

use crate::egc::{bootstrap_p, BootstrapOptions, EgcKind};
use crate::error::{Error, Result};
use crate::panel::SeriesTable;
use crate::varmodel::VarSpec;

const MAX_ITER: usize = 100_000;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Lanczos coefficients for g = 7, n = 9.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(a)` for `a > 0`.
pub fn ln_gamma(a: f64) -> f64 {
    if a < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * a).sin()).ln() - ln_gamma(1.0 - a);
    }
    let a = a - 1.0;
    let mut sum = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (a + i as f64);
    }
    let t = a + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (a + 0.5) * t.ln() - t + sum.ln()
}

/// Regularized upper incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
///
/// Series for `P` below `x = a + 1`, Lentz continued fraction for `Q` above.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !(x >= 0.0) || !a.is_finite() {
        return Err(Error::Contract(format!("gamma_q needs a > 0 and x >= 0, got a={a}, x={x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                return Ok((1.0 - sum * log_prefactor.exp()).clamp(0.0, 1.0));
            }
        }
        Err(Error::NonConvergence {
            what: "incomplete gamma series",
            iterations: MAX_ITER,
            last_change: term,
            last_iterate: vec![sum],
        })
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                return Ok((h * log_prefactor.exp()).clamp(0.0, 1.0));
            }
        }
        Err(Error::NonConvergence {
            what: "incomplete gamma continued fraction",
            iterations: MAX_ITER,
            last_change: f64::NAN,
            last_iterate: vec![h],
        })
    }
}

/// Upper tail `P(χ²_k > x)`.
pub fn chisq_sf(x: f64, k: f64) -> Result<f64> {
    if !(k >= 1.0) || !(x >= 0.0) {
        return Err(Error::Contract(format!("chisq_sf needs x >= 0 and k >= 1, got x={x}, k={k}")));
    }
    gamma_q(k / 2.0, x / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMethod {
    Bonferroni,
    Fisher,
}

impl std::str::FromStr for JointMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonferroni" => Ok(JointMethod::Bonferroni),
            "fisher" => Ok(JointMethod::Fisher),
            other => Err(Error::invalid(format!("unknown joint method {other:?} (expected bonferroni or fisher)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    FailToReject,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Reject => "reject",
            Decision::FailToReject => "fail_to_reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTest {
    pub label: String,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub components: Vec<ComponentTest>,
    pub method: JointMethod,
    pub alpha: f64,
    /// Bonferroni: `alpha / m`, compared against the smallest p-value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degrees_of_freedom: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_p: Option<f64>,
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

fn check_components(components: &[ComponentTest], alpha: f64) -> Result<()> {
    if components.is_empty() {
        return Err(Error::Contract("a joint test needs at least one p-value".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Contract(format!("alpha must be in (0, 1), got {alpha}")));
    }
    for c in components {
        if !(c.p_value > 0.0 && c.p_value <= 1.0) {
            return Err(Error::Contract(format!(
                "p-value for {:?} must be in (0, 1], got {}",
                c.label, c.p_value
            )));
        }
    }
    Ok(())
}

/// Rejects when `min p <= alpha / m`.
pub fn bonferroni_joint(components: Vec<ComponentTest>, alpha: f64) -> Result<HypothesisReport> {
    check_components(&components, alpha)?;
    let threshold = alpha / components.len() as f64;
    let min_p = components.iter().map(|c| c.p_value).fold(f64::INFINITY, f64::min);
    Ok(HypothesisReport {
        method: JointMethod::Bonferroni,
        alpha,
        threshold: Some(threshold),
        statistic: None,
        degrees_of_freedom: None,
        joint_p: None,
        decision: if min_p <= threshold { Decision::Reject } else { Decision::FailToReject },
        caveat: None,
        components,
    })
}

/// Fisher's combination: rejects when `P(χ²_{2m} > T_F) <= alpha`.
pub fn fisher_joint(components: Vec<ComponentTest>, alpha: f64) -> Result<HypothesisReport> {
    check_components(&components, alpha)?;
    // sort so the statistic does not depend on input order
    let mut logs: Vec<f64> = components.iter().map(|c| c.p_value.ln()).collect();
    logs.sort_by(f64::total_cmp);
    let statistic = -2.0 * logs.iter().sum::<f64>();
    let df = 2 * components.len();
    let joint_p = chisq_sf(statistic.max(0.0), df as f64)?;
    Ok(HypothesisReport {
        method: JointMethod::Fisher,
        alpha,
        threshold: None,
        statistic: Some(statistic),
        degrees_of_freedom: Some(df),
        joint_p: Some(joint_p),
        decision: if joint_p <= alpha { Decision::Reject } else { Decision::FailToReject },
        caveat: Some("Fisher's combination assumes independent component p-values; no dependence correction is applied".into()),
        components,
    })
}

pub fn joint_test(components: Vec<ComponentTest>, alpha: f64, method: JointMethod) -> Result<HypothesisReport> {
    match method {
        JointMethod::Bonferroni => bonferroni_joint(components, alpha),
        JointMethod::Fisher => fisher_joint(components, alpha),
    }
}

/// Tests whether any news series strictly lag-causes the target within the
/// full joint VAR, one bootstrap p-value per news series.
pub fn emh_test(
    table: &SeriesTable,
    target: &str,
    news: &[String],
    spec: &VarSpec,
    alpha: f64,
    opts: &BootstrapOptions,
    method: JointMethod,
) -> Result<HypothesisReport> {
    if news.is_empty() {
        return Err(Error::Contract("the news set is empty".into()));
    }
    let find = |name: &str| {
        table
            .index_of(name)
            .ok_or_else(|| Error::invalid(format!("series {name:?} not found in table")))
    };
    let t = find(target)?;
    let mut components = Vec::with_capacity(news.len());
    for name in news {
        let s = find(name)?;
        if s == t {
            return Err(Error::Contract(format!("news series {name:?} is the target itself")));
        }
        let r = bootstrap_p(table, s, t, spec, EgcKind::Lagged, opts)?;
        components.push(ComponentTest {
            label: format!("H0: {name} -/-> {target} (h>0)"),
            p_value: r.p_value.expect("bootstrap result has a p-value"),
        });
    }
    joint_test(components, alpha, method)
}
