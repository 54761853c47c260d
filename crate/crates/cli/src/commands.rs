use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use eqgnn::model::synthetic::{synthetic_basis, synthetic_structure, toy_hamiltonian, SyntheticSpec};
use eqgnn::model::{checkpoint, loss, outputs_to_matrix, reconstruct_uncoupled, BlockMatrix, ModelConfig, ModelParams};
use eqgnn::partition::{
    compute_metrics, lownn_partition, mincut_partition, topology_dot, PartitionAssignment, PartitionMetrics,
};
use eqgnn::runtime::{build_comm_plan, decode_outputs, encode_outputs, rank_forward, timings_csv, RankReport, Trainer};
use eqgnn::structures::{self, load_structure, node_degrees, tile as tile_structure, write_extxyz, AtomGraph, AtomicStructure, BasisSpec};
use eqgnn::Real;
use serde_json::json;

use crate::config::{Method, Precision, RunConfig};
use crate::launch::{frame, run_ranks, unframe};
use crate::{CliError, CliResult, SynthArgs, TileArgs};

fn out_dir(cfg: &RunConfig) -> CliResult<&Path> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

fn load_graph(cfg: &RunConfig, r_cut: f64) -> CliResult<(AtomicStructure, AtomGraph)> {
    let s = load_structure(cfg.require("structure", &cfg.structure)?)?;
    let g = structures::build_graph(&s, r_cut)?;
    Ok((s, g))
}

/// Parameters from the checkpoint if one is given, else a fresh seeded
/// initialisation from the config and basis.
fn load_params<T: Real>(cfg: &RunConfig) -> CliResult<ModelParams<T>> {
    if let Some(path) = &cfg.checkpoint {
        return Ok(checkpoint::load(path)?);
    }
    let basis = BasisSpec::load(cfg.require("basis", &cfg.basis)?)?;
    let mc = ModelConfig {
        l_max: cfg.l_max,
        width: cfg.width,
        layers: cfg.layers,
        n_gaussians: cfg.n_gaussians,
        r_cut: cfg.r_cut,
        seed: cfg.seed,
        gates: true,
        basis,
    };
    Ok(ModelParams::init(&mc)?)
}

fn assign(cfg: &RunConfig, s: &AtomicStructure, g: &AtomGraph, method: Method) -> CliResult<PartitionAssignment> {
    let n = cfg.n_parts(method)?;
    Ok(match method {
        Method::LowNn => lownn_partition(s, g, n.trailing_zeros(), g.r_cut())?,
        Method::MinCut => mincut_partition(g, n, cfg.seed)?,
        Method::Both => unreachable!("resolved by the caller"),
    })
}

fn single_method(cfg: &RunConfig) -> CliResult<Method> {
    match cfg.method {
        Method::Both => Err(CliError::Usage("forward/train need a single partition method".into())),
        m => Ok(m),
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::LowNn => "lownn",
        Method::MinCut => "mincut",
        Method::Both => "both",
    }
}

fn report_json(r: &RankReport) -> serde_json::Value {
    json!({
        "rank": r.rank,
        "exchanges": r.exchanges,
        "reverses": r.reverses,
        "sends": r.counts.sends,
        "recvs": r.counts.recvs,
        "bytes_sent": r.counts.bytes_sent,
        "bytes_received": r.counts.bytes_received,
        "aggregate_violations": r.aggregate_violations,
    })
}

/// Per-rank timing CSVs merged under a single header.
fn merge_timings(csvs: &[&[u8]]) -> String {
    let mut out = String::from("rank,layer,phase,seconds\n");
    for c in csvs {
        for line in String::from_utf8_lossy(c).lines().skip(1) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn build_graph(cfg: &RunConfig) -> CliResult<()> {
    let (s, g) = load_graph(cfg, cfg.r_cut)?;
    let dir = out_dir(cfg)?;
    let mut csv = String::from("src,dst,ix,iy,iz,distance\n");
    for e in g.edges() {
        let [ix, iy, iz] = e.image;
        let _ = writeln!(csv, "{},{},{ix},{iy},{iz},{:.10}", e.src, e.dst, e.distance);
    }
    fs::write(dir.join("graph.csv"), csv)?;
    let deg = node_degrees(&g);
    let summary = json!({
        "atoms": s.n_atoms(),
        "edges": g.n_edges(),
        "r_cut": g.r_cut(),
        "mean_degree": g.n_edges() as f64 / g.n_nodes().max(1) as f64,
        "max_degree": deg.iter().max().copied().unwrap_or(0),
    });
    println!("{summary}");
    Ok(())
}

pub fn tile(cfg: &RunConfig, a: &TileArgs) -> CliResult<()> {
    let s = load_structure(cfg.require("structure", &cfg.structure)?)?;
    let t = tile_structure(&s, a.nx, a.ny, a.nz)?;
    let path = match &a.out {
        Some(p) => p.clone(),
        None => out_dir(cfg)?.join("tiled.xyz"),
    };
    write_extxyz(&path, &t)?;
    println!("{}", json!({ "atoms": t.n_atoms(), "path": path.display().to_string() }));
    Ok(())
}

fn partition_summary(name: &str, m: &PartitionMetrics, seconds: f64) -> String {
    format!(
        "{name}: parts {} node_imbalance {:.4} edge_imbalance {:.4} mean_neighbors {:.3} max_neighbors {} seconds {seconds:.3}",
        m.n_parts, m.node_imbalance, m.edge_imbalance, m.mean_neighbors, m.max_neighbors
    )
}

pub fn partition(cfg: &RunConfig) -> CliResult<()> {
    let (s, g) = load_graph(cfg, cfg.r_cut)?;
    let methods = match cfg.method {
        Method::Both => vec![Method::LowNn, Method::MinCut],
        m => vec![m],
    };
    // Validate every method's part count before doing any work.
    for &m in &methods {
        cfg.n_parts(m)?;
    }
    let dir = out_dir(cfg)?;
    for m in methods {
        let name = method_name(m);
        let t0 = Instant::now();
        let p = assign(cfg, &s, &g, m)?;
        let seconds = t0.elapsed().as_secs_f64();
        let metrics = compute_metrics(&g, &p);
        fs::write(dir.join(format!("{name}.parts")), p.to_text())?;
        fs::write(dir.join(format!("{name}.metrics.json")), metrics.to_json()?)?;
        fs::write(dir.join(format!("{name}.dot")), topology_dot(&g, &p))?;
        println!("{}", partition_summary(name, &metrics, seconds));
    }
    Ok(())
}

pub fn forward(cfg: &RunConfig) -> CliResult<()> {
    match cfg.precision {
        Precision::Single => forward_as::<f32>(cfg),
        Precision::Double => forward_as::<f64>(cfg),
    }
}

fn forward_as<T: Real>(cfg: &RunConfig) -> CliResult<()> {
    let method = single_method(cfg)?;
    let params = load_params::<T>(cfg)?;
    let (s, g) = load_graph(cfg, params.config.r_cut)?;
    let target = match &cfg.target {
        Some(p) => Some(BlockMatrix::read_text(p, &params.config.basis, g.species())?),
        None => None,
    };
    let p = assign(cfg, &s, &g, method)?;
    let plan = build_comm_plan(&g, &p)?;
    let world = plan.world_size();
    let Some(res) = run_ranks(cfg.transport, world, |t| {
        let (out, rep) = rank_forward(t, &plan, &g, &params)?;
        let rep_json = report_json(&rep).to_string();
        Ok(((), frame(&[&encode_outputs(&out), timings_csv(&rep.timings).as_bytes(), rep_json.as_bytes()])))
    })?
    else {
        return Ok(());
    };

    let mut outputs = Vec::new();
    let mut csvs = Vec::new();
    let mut ranks = Vec::new();
    for bytes in &res.shared {
        let parts = unframe(bytes)?;
        let [out, csv, rep] = parts[..] else {
            return Err(CliError::Data(eqgnn::Error::Invalid("rank payload has the wrong shape".into())));
        };
        outputs.extend(decode_outputs(out)?);
        csvs.push(csv);
        ranks.push(serde_json::from_slice::<serde_json::Value>(rep)?);
    }
    let coupled = outputs_to_matrix(&params, g.species(), outputs)?;
    let mut uncoupled = reconstruct_uncoupled(&coupled)?;
    if cfg.symmetrize {
        uncoupled = uncoupled.symmetrized()?;
    }
    let dir = out_dir(cfg)?;
    coupled.write_text(dir.join("pred_coupled.txt"))?;
    uncoupled.write_text(dir.join("pred_uncoupled.txt"))?;
    fs::write(dir.join("timings.csv"), merge_timings(&csvs))?;
    let loss = match &target {
        Some(t) => Some(loss(&coupled, &t.to_coupled()?)?.value),
        None => None,
    };
    let report = json!({
        "method": method_name(method),
        "world_size": world,
        "blocks": coupled.len(),
        "loss": loss,
        "ranks": ranks,
    });
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{}", json!({ "world_size": world, "blocks": coupled.len(), "loss": loss }));
    Ok(())
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    match cfg.precision {
        Precision::Single => train_as::<f32>(cfg),
        Precision::Double => train_as::<f64>(cfg),
    }
}

fn train_as<T: Real>(cfg: &RunConfig) -> CliResult<()> {
    let method = single_method(cfg)?;
    let target_path = cfg.require("target", &cfg.target)?;
    let params = load_params::<T>(cfg)?;
    let (s, g) = load_graph(cfg, params.config.r_cut)?;
    let target = BlockMatrix::read_text(target_path, &params.config.basis, g.species())?;
    let p = assign(cfg, &s, &g, method)?;
    let plan = build_comm_plan(&g, &p)?;
    let world = plan.world_size();
    let Some(res) = run_ranks(cfg.transport, world, |t| {
        let mut tr = Trainer::new(&plan, t.rank(), &g, &target, params.clone(), cfg.lr)?;
        let history = (0..cfg.steps).map(|_| tr.step(t)).collect::<eqgnn::Result<Vec<_>>>()?;
        let rep_json = report_json(&tr.report).to_string();
        let shared = frame(&[timings_csv(&tr.report.timings).as_bytes(), rep_json.as_bytes()]);
        Ok(((history, tr.params), shared))
    })?
    else {
        return Ok(());
    };

    let (history, trained) = res.local;
    let mut csvs = Vec::new();
    let mut ranks = Vec::new();
    for bytes in &res.shared {
        let parts = unframe(bytes)?;
        let [csv, rep] = parts[..] else {
            return Err(CliError::Data(eqgnn::Error::Invalid("rank payload has the wrong shape".into())));
        };
        csvs.push(csv);
        ranks.push(serde_json::from_slice::<serde_json::Value>(rep)?);
    }
    let dir = out_dir(cfg)?;
    let mut curve = String::from("step,loss,lr\n");
    for (i, h) in history.iter().enumerate() {
        let _ = writeln!(curve, "{i},{:.12e},{:.6e}", h.loss, h.lr);
    }
    fs::write(dir.join("loss.csv"), curve)?;
    fs::write(dir.join("timings.csv"), merge_timings(&csvs))?;
    checkpoint::save(dir.join("checkpoint.bin"), &trained)?;
    let report = json!({
        "method": method_name(method),
        "world_size": world,
        "steps": history.len(),
        "initial_loss": history.first().map(|h| h.loss),
        "final_loss": history.last().map(|h| h.loss),
        "ranks": ranks,
    });
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "{}",
        json!({
            "world_size": world,
            "steps": history.len(),
            "initial_loss": history.first().map(|h| h.loss),
            "final_loss": history.last().map(|h| h.loss),
        })
    );
    Ok(())
}

pub fn gen_synthetic(cfg: &RunConfig, a: &SynthArgs) -> CliResult<()> {
    let spec = SyntheticSpec { cells: [a.nx, a.ny, a.nz], spacing: a.spacing, jitter: a.jitter, seed: cfg.seed };
    let s = synthetic_structure(&spec)?;
    let basis = synthetic_basis();
    let g = structures::build_graph(&s, cfg.r_cut)?;
    let h = toy_hamiltonian(&g, &basis, a.spacing)?;
    let dir = out_dir(cfg)?;
    write_extxyz(dir.join("structure.xyz"), &s)?;
    fs::write(dir.join("basis.txt"), basis.to_config_string())?;
    h.write_text(dir.join("target.txt"))?;
    // Paths relative to the config file, so the directory can be moved.
    let run = format!("structure = structure.xyz\nbasis = basis.txt\ntarget = target.txt\nr_cut = {}\n", cfg.r_cut);
    fs::write(dir.join("run.cfg"), run)?;
    println!("{}", json!({ "atoms": s.n_atoms(), "edges": g.n_edges(), "blocks": h.len() }));
    Ok(())
}
