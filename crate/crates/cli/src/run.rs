use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fcixnet::egc::{egc_heatmaps, egc_network, BootstrapOptions, BootstrapScheme, CausalNetwork, EgcKind};
use fcixnet::fcix::{fcix_pipeline, AlsOptions, FcixOptions};
use fcixnet::mht::{emh_test, joint_test, ComponentTest, HypothesisReport, JointMethod};
use fcixnet::netstats::{from_causal_network, global_stats, node_stats, to_dot, write_node_stats, IterOptions, NodeStatsOptions};
use fcixnet::panel::{
    align_and_join, format_date, format_f64, load_price_panel, load_series_table, write_price_panel, write_series_table,
    CsvFormat, SeriesTable,
};
use fcixnet::synth::{edge_recovery_score, simulate_price_panel, simulate_var, PanelSpec, VarGroundTruth};
use fcixnet::varmodel::{build_design, ols_fit, select_lag, VarSpec};
use fcixnet::{Error, Result};
use log::info;
use ndarray::Array2;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::{Command, EgcArgs, EmhArgs, FcixArgs, Lags, ModelArgs, NetstatsArgs, Scheme, ScoreArgs, SynthCommand, SynthPanelArgs, SynthVarArgs};

pub fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Fcix(a) => fcix(a),
        Command::Egc(a) => egc(a),
        Command::Emh(a) => emh(a),
        Command::Netstats(a) => netstats(a),
        Command::Synth(SynthCommand::Var(a)) => synth_var(a),
        Command::Synth(SynthCommand::Panel(a)) => synth_panel(a),
        Command::Score(a) => score(a),
    }
}

/// `{tool, version, command, config, seed}` plus any resolved values.
fn meta(command: &str, config: &impl Serialize, seed: Option<u64>, resolved: Value) -> Result<Value> {
    let mut m = Map::new();
    m.insert("tool".into(), json!("fcixnet"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(command));
    m.insert("config".into(), serde_json::to_value(config)?);
    m.insert("seed".into(), json!(seed));
    if !resolved.is_null() {
        m.insert("resolved".into(), resolved);
    }
    Ok(Value::Object(m))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, meta: &Value, body: impl Serialize) -> Result<()> {
    let mut v = serde_json::to_value(body)?;
    match &mut v {
        Value::Object(m) => {
            m.insert("meta".into(), meta.clone());
        }
        other => {
            v = json!({ "meta": meta, "data": other.take() });
        }
    }
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &v)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

fn fcix(a: &FcixArgs) -> Result<()> {
    let panel = load_price_panel(&a.prices, CsvFormat::default())?;
    info!("loaded {} assets x {} dates", panel.n_assets(), panel.n_dates());
    let opts = FcixOptions {
        als: AlsOptions {
            max_sweeps: a.max_sweeps,
            tol: a.tol,
            ..AlsOptions::default()
        },
        window: a.window,
    };
    let run = fcix_pipeline(&panel, &opts)?;
    let m = meta("fcix", a, None, Value::Null)?;
    let s = &run.series;
    let values = Array2::from_shape_fn((2, s.values.len()), |(k, t)| if k == 0 { s.values[t] } else { s.lambda_max[t] });
    let table = SeriesTable::new(vec!["FCIX".into(), "lambda_max".into()], s.timestamps.clone(), values)?;
    let w = create(&a.out)?;
    write_series_table(&table, w, Some(&m.to_string()))?;
    if let Some(path) = &a.factors {
        write_json(path, &m, json!({ "factors": run.factors }))?;
    }
    Ok(())
}

fn load_model_table(m: &ModelArgs) -> Result<SeriesTable> {
    if m.series.is_empty() {
        return Err(Error::invalid("at least one --series file is required"));
    }
    let tables = m
        .series
        .iter()
        .map(|p| load_series_table(p, CsvFormat::default()))
        .collect::<Result<Vec<_>>>()?;
    let mut table = if tables.len() == 1 {
        tables.into_iter().next().unwrap()
    } else {
        align_and_join(&tables)?
    };
    if let Some(cols) = &m.columns {
        let order = cols
            .iter()
            .map(|c| {
                table
                    .index_of(c)
                    .ok_or_else(|| Error::invalid(format!("column {c:?} not found (have {})", table.names().join(", "))))
            })
            .collect::<Result<Vec<_>>>()?;
        table = table.reorder(&order)?;
    }
    if m.log {
        table = table.log_transform()?;
    }
    if m.diff {
        table = table.difference()?;
    }
    info!("series table: {} series x {} observations", table.n_series(), table.len());
    Ok(table)
}

fn var_spec(m: &ModelArgs, table: &SeriesTable) -> Result<VarSpec> {
    let p = match m.lags {
        Lags::Fixed(p) => p,
        Lags::Auto => {
            let p = select_lag(table, m.max_lags, !m.no_intercept)?;
            info!("BIC selected lag order {p}");
            p
        }
    };
    Ok(VarSpec {
        p,
        include_instantaneous: !m.no_instantaneous,
        include_intercept: !m.no_intercept,
    })
}

fn bootstrap_options(m: &ModelArgs, seed: u64) -> BootstrapOptions {
    BootstrapOptions {
        replications: m.bootstrap,
        seed,
        scheme: match m.scheme {
            Scheme::Residual => BootstrapScheme::Residual,
            Scheme::Permutation => BootstrapScheme::Permutation,
        },
    }
}

fn egc(a: &EgcArgs) -> Result<()> {
    if a.model.bootstrap == 0 {
        return Err(Error::Contract("--bootstrap must be at least 1".into()));
    }
    let table = load_model_table(&a.model)?;
    let spec = var_spec(&a.model, &table)?;
    let run = egc_network(&table, &spec, a.alpha, &bootstrap_options(&a.model, a.seed))?;
    let m = meta("egc", a, Some(a.seed), json!({ "lags": spec.p }))?;
    write_json(&a.out, &m, &run.network)?;
    info!("{} edges, {} self-loops", run.network.edges.len(), run.network.self_loops.len());

    if let Some(path) = &a.coefficients {
        let fits = (0..table.n_series())
            .map(|t| {
                let fit = ols_fit(&build_design(&table, t, &spec, &[])?)?;
                Ok(json!({
                    "target": table.names()[t],
                    "regressors": fit.regressors.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
                    "coefficients": fit.coefficients,
                    "residual_variance": fit.residual_variance,
                    "t_eff": fit.t_eff,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        write_json(path, &m, json!({ "equations": fits }))?;
    }

    if let Some(prefix) = &a.heatmaps {
        let mut kinds = vec![EgcKind::Lagged];
        if spec.include_instantaneous {
            kinds.push(EgcKind::Instantaneous);
        }
        let names = table.names();
        for kind in kinds {
            let h = egc_heatmaps(&run.results, names.len(), kind);
            for (suffix, grid) in [("measure", &h.measure), ("prob", &h.probability)] {
                let path = PathBuf::from(format!("{prefix}_{}_{suffix}.csv", kind.as_str()));
                write_heatmap(&path, names, grid, &m)?;
            }
        }
    }
    Ok(())
}

/// Rows are targets, columns sources.
fn write_heatmap(path: &Path, names: &[String], grid: &Array2<f64>, meta: &Value) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {meta}").map_err(|e| Error::io(path, e))?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(std::iter::once("target").chain(names.iter().map(String::as_str)))?;
    for (i, row) in grid.outer_iter().enumerate() {
        c.write_record(std::iter::once(names[i].clone()).chain(row.iter().map(|v| format_f64(*v))))?;
    }
    let w = c.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    finish(w, path)
}

fn read_pvalues(path: &Path, replications: usize) -> Result<Vec<ComponentTest>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let loc = format!("{} row {}", path.display(), i + 2);
        if rec.len() < 2 {
            return Err(Error::invalid(format!("{loc}: expected `label,p`")));
        }
        let p: f64 = rec[1]
            .parse()
            .map_err(|_| Error::invalid(format!("{loc}: cannot parse p-value {:?}", &rec[1])))?;
        let p = if p <= 0.0 {
            if replications == 0 {
                return Err(Error::Contract("--bootstrap must be at least 1 to resolve zero p-values".into()));
            }
            1.0 / (replications + 1) as f64
        } else {
            p
        };
        out.push(ComponentTest {
            label: rec[0].to_string(),
            p_value: p,
        });
    }
    Ok(out)
}

fn verdict(r: &HypothesisReport) -> String {
    match r.method {
        JointMethod::Bonferroni => {
            let min_p = r.components.iter().map(|c| c.p_value).fold(f64::INFINITY, f64::min);
            format!(
                "bonferroni: min p = {min_p:.6} vs alpha/m = {:.6} (m = {}) -> {} at alpha = {}",
                r.threshold.unwrap_or(f64::NAN),
                r.components.len(),
                r.decision.as_str(),
                r.alpha
            )
        }
        JointMethod::Fisher => format!(
            "fisher: T_F = {:.4}, df = {}, p = {:.6} -> {} at alpha = {}",
            r.statistic.unwrap_or(f64::NAN),
            r.degrees_of_freedom.unwrap_or(0),
            r.joint_p.unwrap_or(f64::NAN),
            r.decision.as_str(),
            r.alpha
        ),
    }
}

fn emh(a: &EmhArgs) -> Result<()> {
    let method: JointMethod = a.method.parse()?;
    let (report, resolved) = match &a.pvalues_file {
        Some(path) => (joint_test(read_pvalues(path, a.model.bootstrap)?, a.alpha, method)?, Value::Null),
        None => {
            if a.model.bootstrap == 0 {
                return Err(Error::Contract("--bootstrap must be at least 1".into()));
            }
            let seed = a.seed.ok_or_else(|| Error::invalid("--seed is required"))?;
            let target = a.target.as_deref().ok_or_else(|| Error::invalid("--target is required"))?;
            let table = load_model_table(&a.model)?;
            let spec = var_spec(&a.model, &table)?;
            let r = emh_test(&table, target, &a.news, &spec, a.alpha, &bootstrap_options(&a.model, seed), method)?;
            (r, json!({ "lags": spec.p }))
        }
    };
    println!("{}", verdict(&report));
    if let Some(out) = &a.out {
        let m = meta("emh", a, a.seed.filter(|_| a.pvalues_file.is_none()), resolved)?;
        write_json(out, &m, &report)?;
    }
    Ok(())
}

fn netstats(a: &NetstatsArgs) -> Result<()> {
    let net: CausalNetwork = read_json(&a.network)?;
    let kinds = a
        .kinds
        .iter()
        .map(|k| match EgcKind::parse(k) {
            Some(kind @ (EgcKind::Lagged | EgcKind::Instantaneous)) => Ok(kind),
            _ => Err(Error::invalid(format!("unknown edge kind {k:?} (expected lagged or instantaneous)"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let g = from_causal_network(&net, &kinds);
    let opts = NodeStatsOptions {
        iter: IterOptions {
            tol: a.tol,
            max_iters: a.max_iters,
        },
        damping: a.damping,
        weighted: a.weighted,
    };
    let stats = node_stats(&g, &opts)?;
    let m = meta("netstats", a, None, Value::Null)?;
    let w = create(&a.out)?;
    write_node_stats(&g, &stats, w, Some(&m.to_string()))?;

    let global = a.global.clone().unwrap_or_else(|| sibling(&a.out, "global.json"));
    write_json(&global, &m, global_stats(&g))?;

    if let Some(path) = &a.dot {
        let mut w = create(path)?;
        write!(w, "// {m}\n{}", to_dot(&net, &kinds)).map_err(|e| Error::io(path, e))?;
        finish(w, path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LabelledEdge<'a> {
    src: &'a str,
    dst: &'a str,
}

fn synth_var(a: &SynthVarArgs) -> Result<()> {
    let truth: VarGroundTruth = read_json(&a.spec)?;
    let rho = truth.check_stable()?;
    let table = simulate_var(&truth, a.length, a.burn_in, a.seed)?;
    let m = meta("synth var", a, Some(a.seed), json!({ "spectral_radius": rho }))?;
    let w = create(&a.out)?;
    write_series_table(&table, w, Some(&m.to_string()))?;

    let names = truth.names();
    let edges = |kind| -> Vec<LabelledEdge<'_>> {
        truth
            .true_edges(kind)
            .into_iter()
            .map(|(s, t)| LabelledEdge {
                src: &names[s],
                dst: &names[t],
            })
            .collect()
    };
    let doc = json!({
        "nodes": names,
        "spectral_radius": rho,
        "lagged": edges(EgcKind::Lagged),
        "instantaneous": edges(EgcKind::Instantaneous),
        "model": &truth,
    });
    let path = a.truth.clone().unwrap_or_else(|| sibling(&a.out, "truth.json"));
    write_json(&path, &m, doc)
}

fn synth_panel(a: &SynthPanelArgs) -> Result<()> {
    let spec: PanelSpec = read_json(&a.spec)?;
    let schedule = spec.schedule(a.length)?;
    let panel = simulate_price_panel(spec.assets, a.length, &schedule, a.seed)?;
    let m = meta("synth panel", a, Some(a.seed), Value::Null)?;
    let w = create(&a.out)?;
    write_price_panel(&panel, w, Some(&m.to_string()))?;

    // period t spans dates t..t+1 and is stamped with the later date
    let peak = schedule
        .dispersion
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (t, &d)| if d > best.1 { (t, d) } else { best })
        .0;
    let doc = json!({
        "market_vol": schedule.market_vol,
        "dispersion": schedule.dispersion,
        "peak_period": peak,
        "peak_date": format_date(panel.timestamps()[peak + 1]),
    });
    let path = a.truth.clone().unwrap_or_else(|| sibling(&a.out, "truth.json"));
    write_json(&path, &m, doc)
}

fn score(a: &ScoreArgs) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct TruthFile {
        model: VarGroundTruth,
    }
    let truth: TruthFile = read_json(&a.truth)?;
    let net: CausalNetwork = read_json(&a.network)?;
    if truth.model.names() != net.nodes.as_slice() {
        return Err(Error::invalid(format!(
            "node labels differ: truth has [{}], network has [{}]",
            truth.model.names().join(", "),
            net.nodes.join(", ")
        )));
    }
    let s = edge_recovery_score(&truth.model, &net);
    let text = serde_json::to_string_pretty(&s)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}").map_err(|e| Error::io(path, e))?;
            finish(w, path)
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
