//! Graph diagnostics for a significant eGC network.
//!
//! Metrics are topological unless a weighted variant is requested; self-loops
//! are kept aside and never enter a metric.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::egc::{CausalNetwork, EgcKind};
use crate::error::{Error, Result};
use crate::panel::format_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    labels: Vec<String>,
    /// Sorted, unique, no self-loops.
    edges: Vec<(usize, usize)>,
    /// Aligned with `edges` when present.
    weights: Option<Vec<f64>>,
    self_loops: Vec<usize>,
}

impl DirectedGraph {
    /// Builds a simple digraph. Duplicate edges are an error; self-loops are
    /// moved to side storage.
    pub fn new(labels: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::with_weights(labels, edges.into_iter().map(|e| (e, 1.0)).collect(), false)
    }

    pub fn weighted(labels: Vec<String>, edges: Vec<((usize, usize), f64)>) -> Result<Self> {
        Self::with_weights(labels, edges, true)
    }

    fn with_weights(labels: Vec<String>, edges: Vec<((usize, usize), f64)>, keep: bool) -> Result<Self> {
        let n = labels.len();
        let mut map = BTreeMap::new();
        let mut loops = BTreeSet::new();
        for ((s, t), w) in edges {
            if s >= n || t >= n {
                return Err(Error::invalid(format!("edge ({s}, {t}) outside 0..{n}")));
            }
            if s == t {
                loops.insert(s);
            } else if map.insert((s, t), w).is_some() {
                return Err(Error::invalid(format!("duplicate edge {} -> {}", labels[s], labels[t])));
            }
        }
        let (edges, w): (Vec<_>, Vec<_>) = map.into_iter().unzip();
        Ok(DirectedGraph {
            labels,
            edges,
            weights: keep.then_some(w),
            self_loops: loops.into_iter().collect(),
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn self_loops(&self) -> &[usize] {
        &self.self_loops
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    fn weight(&self, e: usize, weighted: bool) -> f64 {
        match (&self.weights, weighted) {
            (Some(w), true) => w[e],
            _ => 1.0,
        }
    }

    fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for &(s, t) in &self.edges {
            adj[s].push(t);
        }
        adj
    }
}

/// Collapses the retained edges of the selected kinds into a simple digraph.
/// Parallel edges of different kinds merge; the weight is the larger measure.
pub fn from_causal_network(net: &CausalNetwork, kinds: &[EgcKind]) -> DirectedGraph {
    let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for e in net.edges.iter().filter(|e| kinds.contains(&e.kind)) {
        let w = map.entry((e.source, e.target)).or_insert(e.measure);
        *w = w.max(e.measure);
    }
    let mut g = DirectedGraph::weighted(net.nodes.clone(), map.into_iter().collect())
        .expect("a validated network collapses to a valid graph");
    g.self_loops = net.self_loops.iter().map(|s| s.node).collect::<BTreeSet<_>>().into_iter().collect();
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for IterOptions {
    fn default() -> Self {
        IterOptions {
            tol: 1e-12,
            max_iters: 10_000,
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Authority and hub scores, each with unit Euclidean norm.
pub fn hits(g: &DirectedGraph, opts: IterOptions, weighted: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = g.n_nodes();
    if g.edges.is_empty() {
        log::warn!("HITS on an edgeless graph: all scores are zero");
        return Ok((vec![0.0; n], vec![0.0; n]));
    }
    let mut hub = vec![1.0; n];
    normalize(&mut hub);
    let mut auth = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let mut a = vec![0.0; n];
        for (e, &(s, t)) in g.edges.iter().enumerate() {
            a[t] += g.weight(e, weighted) * hub[s];
        }
        normalize(&mut a);
        let mut h = vec![0.0; n];
        for (e, &(s, t)) in g.edges.iter().enumerate() {
            h[s] += g.weight(e, weighted) * a[t];
        }
        normalize(&mut h);
        change = max_diff(&a, &auth).max(max_diff(&h, &hub));
        auth = a;
        hub = h;
        if change <= opts.tol {
            return Ok((auth, hub));
        }
    }
    Err(Error::NonConvergence {
        what: "HITS",
        iterations: opts.max_iters,
        last_change: change,
        last_iterate: auth,
    })
}

/// Damped random-surfer PageRank; dangling mass is spread uniformly.
pub fn pagerank(g: &DirectedGraph, damping: f64, opts: IterOptions, weighted: bool) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::Contract(format!("damping must be in [0, 1), got {damping}")));
    }
    let n = g.n_nodes();
    if n == 0 {
        return Ok(Vec::new());
    }
    let nf = n as f64;
    let mut out_weight = vec![0.0; n];
    for (e, &(s, _)) in g.edges.iter().enumerate() {
        out_weight[s] += g.weight(e, weighted);
    }
    let mut x = vec![1.0 / nf; n];
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let dangling: f64 = (0..n).filter(|&i| out_weight[i] == 0.0).map(|i| x[i]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        let mut next = vec![base; n];
        for (e, &(s, t)) in g.edges.iter().enumerate() {
            next[t] += damping * x[s] * g.weight(e, weighted) / out_weight[s];
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if change <= opts.tol {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence {
        what: "PageRank",
        iterations: opts.max_iters,
        last_change: change,
        last_iterate: x,
    })
}

/// Shortest-path betweenness (Brandes), splitting evenly over equal-length
/// paths. Normalised by `(n−1)(n−2)` when requested.
pub fn betweenness(g: &DirectedGraph, normalized: bool) -> Vec<f64> {
    let n = g.n_nodes();
    let adj = g.out_adjacency();
    let per_source: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut stack = Vec::with_capacity(n);
            let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut sigma = vec![0.0f64; n];
            let mut dist = vec![usize::MAX; n];
            sigma[s] = 1.0;
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                stack.push(v);
                for &w in &adj[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                    if dist[w] == dist[v] + 1 {
                        sigma[w] += sigma[v];
                        preds[w].push(v);
                    }
                }
            }
            let mut delta = vec![0.0; n];
            while let Some(w) = stack.pop() {
                for &v in &preds[w] {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
            }
            delta[s] = 0.0;
            delta
        })
        .collect();
    let mut bc = vec![0.0; n];
    for d in &per_source {
        bc.iter_mut().zip(d).for_each(|(b, x)| *b += x);
    }
    if normalized && n > 2 {
        let scale = ((n - 1) * (n - 2)) as f64;
        bc.iter_mut().for_each(|b| *b /= scale);
    }
    bc
}

/// Undirected neighbour sets with edge direction and multiplicity dropped.
fn undirected_neighbours(g: &DirectedGraph) -> Vec<BTreeSet<usize>> {
    let mut nb = vec![BTreeSet::new(); g.n_nodes()];
    for &(s, t) in &g.edges {
        nb[s].insert(t);
        nb[t].insert(s);
    }
    nb
}

/// `BC(v) = (1/d(v)) / Σ_{w ∈ N(v)} 1/d(w)` on the undirected projection;
/// isolated nodes score 0.
pub fn bridging_coefficient(g: &DirectedGraph) -> Vec<f64> {
    let nb = undirected_neighbours(g);
    nb.iter()
        .map(|set| {
            if set.is_empty() {
                return 0.0;
            }
            let inv: f64 = set.iter().map(|&w| 1.0 / nb[w].len() as f64).sum();
            (1.0 / set.len() as f64) / inv
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    /// Longest finite shortest-path distance; 0 when no pair is reachable.
    pub diameter: usize,
    /// Mean distance over ordered reachable pairs; `None` when there are none.
    pub average_path_length: Option<f64>,
    pub density: f64,
    pub reachable_pairs: usize,
    pub unreachable_pairs: usize,
    pub nodes: usize,
    pub edges: usize,
}

/// BFS distances from `s`.
fn distances_from(adj: &[Vec<usize>], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap();
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

pub fn global_stats(g: &DirectedGraph) -> GlobalStats {
    let n = g.n_nodes();
    let adj = g.out_adjacency();
    let rows: Vec<Vec<Option<usize>>> = (0..n).into_par_iter().map(|s| distances_from(&adj, s)).collect();
    let mut diameter = 0;
    let mut total = 0usize;
    let mut reachable = 0usize;
    for (s, row) in rows.iter().enumerate() {
        for (t, d) in row.iter().enumerate() {
            if s == t {
                continue;
            }
            if let Some(d) = d {
                diameter = diameter.max(*d);
                total += d;
                reachable += 1;
            }
        }
    }
    let pairs = n * n.saturating_sub(1);
    GlobalStats {
        diameter,
        average_path_length: (reachable > 0).then(|| total as f64 / reachable as f64),
        density: if pairs > 0 { g.edges.len() as f64 / pairs as f64 } else { 0.0 },
        reachable_pairs: reachable,
        unreachable_pairs: pairs - reachable,
        nodes: n,
        edges: g.edges.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub authority: f64,
    pub hub: f64,
    pub pagerank: f64,
    pub betweenness: f64,
    pub bridging: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeStatsOptions {
    pub iter: IterOptions,
    pub damping: f64,
    /// Use eGC measures as edge weights in HITS and PageRank.
    pub weighted: bool,
}

impl Default for NodeStatsOptions {
    fn default() -> Self {
        NodeStatsOptions {
            iter: IterOptions::default(),
            damping: 0.85,
            weighted: false,
        }
    }
}

/// The five per-node columns: authority, hub, PageRank, normalised
/// betweenness and bridging coefficient.
pub fn node_stats(g: &DirectedGraph, opts: &NodeStatsOptions) -> Result<Vec<NodeStats>> {
    let (auth, hub) = hits(g, opts.iter, opts.weighted)?;
    let pr = pagerank(g, opts.damping, opts.iter, opts.weighted)?;
    let bc = betweenness(g, true);
    let br = bridging_coefficient(g);
    Ok((0..g.n_nodes())
        .map(|i| NodeStats {
            authority: auth[i],
            hub: hub[i],
            pagerank: pr[i],
            betweenness: bc[i],
            bridging: br[i],
        })
        .collect())
}

/// `node,authority,hub,pagerank,betweenness,bridging`.
pub fn write_node_stats<W: Write>(g: &DirectedGraph, stats: &[NodeStats], writer: W, metadata: Option<&str>) -> Result<()> {
    let mut writer = writer;
    if let Some(meta) = metadata {
        writeln!(writer, "# {meta}").map_err(|e| Error::io(std::path::Path::new("<writer>"), e))?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["node", "authority", "hub", "pagerank", "betweenness", "bridging"])?;
    for (label, s) in g.labels.iter().zip(stats) {
        w.write_record([
            label.clone(),
            format_f64(s.authority),
            format_f64(s.hub),
            format_f64(s.pagerank),
            format_f64(s.betweenness),
            format_f64(s.bridging),
        ])?;
    }
    w.flush().map_err(|e| Error::io(std::path::Path::new("<writer>"), e))?;
    Ok(())
}

/// Graphviz rendering of a causal network; instantaneous edges solid,
/// lagged edges and self-loops dashed.
pub fn to_dot(net: &CausalNetwork, kinds: &[EgcKind]) -> String {
    let quote = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
    let mut out = String::from("digraph egc {\n");
    for n in &net.nodes {
        out.push_str(&format!("  {};\n", quote(n)));
    }
    for e in net.edges.iter().filter(|e| kinds.contains(&e.kind)) {
        let style = if e.kind == EgcKind::Lagged { "dashed" } else { "solid" };
        out.push_str(&format!(
            "  {} -> {} [label=\"{:.3}\", style={style}];\n",
            quote(&net.nodes[e.source]),
            quote(&net.nodes[e.target]),
            e.measure
        ));
    }
    for s in &net.self_loops {
        let node = quote(&net.nodes[s.node]);
        out.push_str(&format!("  {node} -> {node} [label=\"{:.3}\", style=dashed];\n", s.measure));
    }
    out.push_str("}\n");
    out
}
