//! Extended Granger causality.
//!
//! For a source `i` and target `j` the unrestricted equation is the full
//! lag-0-augmented regression of `j`. The restricted equation drops, depending
//! on the kind, the lags 1..p of `i`, the lag-0 term of `i`, both, or (for
//! self-dependence) the target's own lags. The measure is
//! `ln(σ²_restricted / σ²_unrestricted)`, which is non-negative because the
//! restricted design is nested in the unrestricted one.
//!
//! Significance comes from a fixed-design residual bootstrap under the null:
//! surrogate responses are the restricted fitted values plus resampled
//! restricted residuals, and the measure is recomputed against the same two
//! designs.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::PivotedQr;
use crate::panel::SeriesTable;
use crate::seed;
use crate::varmodel::{build_design, Design, LagKind, VarSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgcKind {
    /// Strictly lagged influence (h > 0).
    Lagged,
    /// Contemporaneous influence (h = 0).
    Instantaneous,
    /// Lagged and contemporaneous together.
    Total,
    /// The target's dependence on its own past.
    #[serde(rename = "self")]
    SelfDependence,
}

impl EgcKind {
    fn code(self) -> u64 {
        match self {
            EgcKind::Lagged => 1,
            EgcKind::Instantaneous => 2,
            EgcKind::Total => 3,
            EgcKind::SelfDependence => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EgcKind::Lagged => "lagged",
            EgcKind::Instantaneous => "instantaneous",
            EgcKind::Total => "total",
            EgcKind::SelfDependence => "self",
        }
    }

    pub fn parse(s: &str) -> Option<EgcKind> {
        match s.trim() {
            "lagged" => Some(EgcKind::Lagged),
            "instantaneous" => Some(EgcKind::Instantaneous),
            "total" => Some(EgcKind::Total),
            "self" => Some(EgcKind::SelfDependence),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgcResult {
    pub source: usize,
    pub target: usize,
    pub kind: EgcKind,
    /// Nats.
    pub measure: f64,
    pub p_value: Option<f64>,
    pub bootstrap_count: usize,
    pub restricted_variance: f64,
    pub unrestricted_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapScheme {
    /// Residuals drawn with replacement.
    Residual,
    /// Residuals randomly permuted.
    Permutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replications: usize,
    pub seed: u64,
    pub scheme: BootstrapScheme,
}

impl BootstrapOptions {
    pub fn new(replications: usize, seed: u64) -> Self {
        BootstrapOptions {
            replications,
            seed,
            scheme: BootstrapScheme::Residual,
        }
    }
}

fn exclusions(source: usize, target: usize, kind: EgcKind, spec: &VarSpec) -> Result<Vec<(usize, LagKind)>> {
    match kind {
        EgcKind::SelfDependence if source != target => {
            Err(Error::Contract("self-dependence needs source == target".into()))
        }
        EgcKind::SelfDependence => Ok(vec![(target, LagKind::Lagged)]),
        _ if source == target => Err(Error::Contract(format!(
            "{} causality needs distinct source and target",
            kind.as_str()
        ))),
        EgcKind::Instantaneous | EgcKind::Total if !spec.include_instantaneous => Err(Error::Contract(format!(
            "{} causality needs the instantaneous block enabled",
            kind.as_str()
        ))),
        EgcKind::Lagged => Ok(vec![(source, LagKind::Lagged)]),
        EgcKind::Instantaneous => Ok(vec![(source, LagKind::Instantaneous)]),
        EgcKind::Total => Ok(vec![(source, LagKind::Lagged), (source, LagKind::Instantaneous)]),
    }
}

/// Both designs of one (source, target, kind) comparison, factored once.
struct PairTest {
    source: usize,
    target: usize,
    kind: EgcKind,
    unrestricted: PivotedQr,
    restricted: PivotedQr,
    t_eff: usize,
    rss_u: f64,
    rss_r: f64,
    restricted_fitted: Array1<f64>,
    restricted_resid: Array1<f64>,
}

fn factor(design: &Design) -> Result<PivotedQr> {
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
    Ok(qr)
}

fn log_ratio(rss_r: f64, rss_u: f64) -> f64 {
    if rss_u <= 0.0 {
        return if rss_r <= 0.0 { 0.0 } else { f64::INFINITY };
    }
    // nesting guarantees rss_r >= rss_u; clamp rounding noise
    (rss_r / rss_u).ln().max(0.0)
}

impl PairTest {
    fn new(table: &SeriesTable, source: usize, target: usize, spec: &VarSpec, kind: EgcKind) -> Result<Self> {
        let k = table.n_series();
        if source >= k || target >= k {
            return Err(Error::Contract(format!("series index out of range 0..{k}")));
        }
        let excl = exclusions(source, target, kind, spec)?;
        let full = build_design(table, target, spec, &[])?;
        let reduced = build_design(table, target, spec, &excl)?;
        let unrestricted = factor(&full)?;
        let restricted = factor(&reduced)?;
        let rss_u = unrestricted.rss(full.response.view());
        let (_, restricted_resid) = restricted.solve(reduced.response.view());
        let rss_r = restricted_resid.dot(&restricted_resid);
        let restricted_fitted = &reduced.response - &restricted_resid;
        Ok(PairTest {
            source,
            target,
            kind,
            unrestricted,
            restricted,
            t_eff: full.t_eff(),
            rss_u,
            rss_r,
            restricted_fitted,
            restricted_resid,
        })
    }

    fn measure(&self) -> f64 {
        log_ratio(self.rss_r, self.rss_u)
    }

    fn result(&self, p_value: Option<f64>, bootstrap_count: usize) -> EgcResult {
        let t = self.t_eff as f64;
        EgcResult {
            source: self.source,
            target: self.target,
            kind: self.kind,
            measure: self.measure(),
            p_value,
            bootstrap_count,
            restricted_variance: self.rss_r / t,
            unrestricted_variance: self.rss_u / t,
        }
    }

    fn replicate(&self, opts: &BootstrapOptions, rep: usize) -> f64 {
        let mut rng = seed::stream(
            opts.seed,
            &[self.source as u64, self.target as u64, self.kind.code(), rep as u64],
        );
        let e = &self.restricted_resid;
        let n = e.len();
        let noise: Array1<f64> = match opts.scheme {
            BootstrapScheme::Residual => (0..n).map(|_| e[rng.random_range(0..n)]).collect(),
            BootstrapScheme::Permutation => {
                let mut v = e.to_vec();
                v.shuffle(&mut rng);
                Array1::from(v)
            }
        };
        let y = &self.restricted_fitted + &noise;
        log_ratio(self.restricted.rss(y.view()), self.unrestricted.rss(y.view()))
    }

    fn p_value(&self, opts: &BootstrapOptions) -> f64 {
        let observed = self.measure();
        let exceed = (0..opts.replications)
            .into_par_iter()
            .filter(|&rep| self.replicate(opts, rep) >= observed)
            .count();
        (1 + exceed) as f64 / (opts.replications + 1) as f64
    }
}

/// eGC measure from `source` to `target` without a p-value.
pub fn egc_measure(table: &SeriesTable, source: usize, target: usize, spec: &VarSpec, kind: EgcKind) -> Result<EgcResult> {
    Ok(PairTest::new(table, source, target, spec, kind)?.result(None, 0))
}

/// eGC measure with the bootstrap p-value `(1 + #{m* >= m}) / (B + 1)`.
pub fn bootstrap_p(
    table: &SeriesTable,
    source: usize,
    target: usize,
    spec: &VarSpec,
    kind: EgcKind,
    opts: &BootstrapOptions,
) -> Result<EgcResult> {
    if opts.replications == 0 {
        return Err(Error::Contract("bootstrap needs at least one replication".into()));
    }
    let test = PairTest::new(table, source, target, spec, kind)?;
    let p = test.p_value(opts);
    Ok(test.result(Some(p), opts.replications))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalEdge {
    pub source: usize,
    pub target: usize,
    pub kind: EgcKind,
    pub measure: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfLoop {
    pub node: usize,
    pub measure: f64,
    pub p_value: f64,
}

/// Significant eGC relations. Edges are lagged or instantaneous only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkDoc", try_from = "NetworkDoc")]
pub struct CausalNetwork {
    pub nodes: Vec<String>,
    pub alpha: f64,
    pub edges: Vec<CausalEdge>,
    pub self_loops: Vec<SelfLoop>,
}

impl CausalNetwork {
    /// Validates labels, edge kinds, uniqueness and the significance level.
    pub fn new(nodes: Vec<String>, alpha: f64, edges: Vec<CausalEdge>, self_loops: Vec<SelfLoop>) -> Result<Self> {
        let n = nodes.len();
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1], got {alpha}")));
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.source >= n || e.target >= n || e.source == e.target {
                return Err(Error::invalid(format!("bad edge {} -> {}", e.source, e.target)));
            }
            if !matches!(e.kind, EgcKind::Lagged | EgcKind::Instantaneous) {
                return Err(Error::invalid("network edges must be lagged or instantaneous"));
            }
            if !seen.insert((e.source, e.target, e.kind)) {
                return Err(Error::invalid(format!("duplicate edge {} -> {}", nodes[e.source], nodes[e.target])));
            }
            if !(e.p_value <= alpha) {
                return Err(Error::invalid(format!("edge p-value {} exceeds alpha {alpha}", e.p_value)));
            }
        }
        let mut loops = BTreeSet::new();
        for s in &self_loops {
            if s.node >= n || !loops.insert(s.node) {
                return Err(Error::invalid(format!("bad or duplicate self-loop on node {}", s.node)));
            }
        }
        Ok(CausalNetwork {
            nodes,
            alpha,
            edges,
            self_loops,
        })
    }

    pub fn edges_of_kind(&self, kind: EgcKind) -> impl Iterator<Item = &CausalEdge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeDoc {
    src: String,
    dst: String,
    kind: EgcKind,
    measure: f64,
    p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SelfDoc {
    node: String,
    measure: f64,
    p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDoc {
    nodes: Vec<String>,
    alpha: f64,
    edges: Vec<EdgeDoc>,
    #[serde(rename = "self", default)]
    self_loops: Vec<SelfDoc>,
}

impl From<CausalNetwork> for NetworkDoc {
    fn from(net: CausalNetwork) -> Self {
        let label = |i: usize| net.nodes[i].clone();
        NetworkDoc {
            edges: net
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    src: label(e.source),
                    dst: label(e.target),
                    kind: e.kind,
                    measure: e.measure,
                    p: e.p_value,
                })
                .collect(),
            self_loops: net
                .self_loops
                .iter()
                .map(|s| SelfDoc {
                    node: label(s.node),
                    measure: s.measure,
                    p: s.p_value,
                })
                .collect(),
            alpha: net.alpha,
            nodes: net.nodes,
        }
    }
}

impl TryFrom<NetworkDoc> for CausalNetwork {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        let index = |name: &str| {
            doc.nodes
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::invalid(format!("edge references unknown node {name:?}")))
        };
        let edges = doc
            .edges
            .iter()
            .map(|e| {
                Ok(CausalEdge {
                    source: index(&e.src)?,
                    target: index(&e.dst)?,
                    kind: e.kind,
                    measure: e.measure,
                    p_value: e.p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let self_loops = doc
            .self_loops
            .iter()
            .map(|s| {
                Ok(SelfLoop {
                    node: index(&s.node)?,
                    measure: s.measure,
                    p_value: s.p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if doc.nodes.iter().collect::<BTreeSet<_>>().len() != doc.nodes.len() {
            return Err(Error::invalid("duplicate node labels"));
        }
        CausalNetwork::new(doc.nodes, doc.alpha, edges, self_loops)
    }
}

/// Every test evaluated for a network, plus the significant subset.
#[derive(Debug, Clone)]
pub struct NetworkRun {
    pub network: CausalNetwork,
    /// Lagged and instantaneous results for every ordered pair and a
    /// self-dependence result per node, ordered by (target, source, kind).
    pub results: Vec<EgcResult>,
}

/// Tests every ordered pair (lagged, and instantaneous when enabled) and
/// every node's self-dependence; keeps those with `p <= alpha`.
pub fn egc_network(table: &SeriesTable, spec: &VarSpec, alpha: f64, opts: &BootstrapOptions) -> Result<NetworkRun> {
    let k = table.n_series();
    if k < 2 {
        return Err(Error::Contract("a network needs at least 2 series".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Contract(format!("alpha must be in (0, 1], got {alpha}")));
    }
    if opts.replications == 0 {
        return Err(Error::Contract("bootstrap needs at least one replication".into()));
    }
    let mut tasks = Vec::new();
    for target in 0..k {
        for source in 0..k {
            if source == target {
                tasks.push((source, target, EgcKind::SelfDependence));
                continue;
            }
            tasks.push((source, target, EgcKind::Lagged));
            if spec.include_instantaneous {
                tasks.push((source, target, EgcKind::Instantaneous));
            }
        }
    }
    let results = tasks
        .par_iter()
        .map(|&(s, t, kind)| bootstrap_p(table, s, t, spec, kind, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut edges = Vec::new();
    let mut self_loops = Vec::new();
    for r in &results {
        let p = r.p_value.expect("bootstrap results carry p-values");
        if p > alpha {
            continue;
        }
        match r.kind {
            EgcKind::SelfDependence => self_loops.push(SelfLoop {
                node: r.target,
                measure: r.measure,
                p_value: p,
            }),
            kind => edges.push(CausalEdge {
                source: r.source,
                target: r.target,
                kind,
                measure: r.measure,
                p_value: p,
            }),
        }
    }
    let network = CausalNetwork::new(table.names().to_vec(), alpha, edges, self_loops)?;
    Ok(NetworkRun { network, results })
}

/// K × K matrices with cell `(i, j)` describing the influence of `j` on `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmaps {
    pub measure: Array2<f64>,
    /// `1 − p`; zero where no p-value is available.
    pub probability: Array2<f64>,
}

/// Heatmaps of one edge kind from raw results; the diagonal carries the
/// self-dependence results.
pub fn egc_heatmaps(results: &[EgcResult], k: usize, kind: EgcKind) -> Heatmaps {
    let mut measure = Array2::zeros((k, k));
    let mut probability = Array2::zeros((k, k));
    for r in results {
        let keep = if r.source == r.target {
            r.kind == EgcKind::SelfDependence
        } else {
            r.kind == kind
        };
        if keep && r.source < k && r.target < k {
            measure[[r.target, r.source]] = r.measure;
            probability[[r.target, r.source]] = r.p_value.map(|p| 1.0 - p).unwrap_or(0.0);
        }
    }
    Heatmaps { measure, probability }
}

/// Heatmaps of the retained relations of one kind.
pub fn network_heatmaps(net: &CausalNetwork, kind: EgcKind) -> Heatmaps {
    let k = net.nodes.len();
    let mut measure = Array2::zeros((k, k));
    let mut probability = Array2::zeros((k, k));
    for e in net.edges_of_kind(kind) {
        measure[[e.target, e.source]] = e.measure;
        probability[[e.target, e.source]] = 1.0 - e.p_value;
    }
    for s in &net.self_loops {
        measure[[s.node, s.node]] = s.measure;
        probability[[s.node, s.node]] = 1.0 - s.p_value;
    }
    Heatmaps { measure, probability }
}
