//! Message-throughput sweep of the SO(2) block.

use std::fmt::Write as _;
use std::fs;
use std::hint::black_box;
use std::time::Instant;

use eqgnn::model::synthetic::synthetic_basis;
use eqgnn::model::{message_values, so2_block, Frames, MessageBatch, ModelConfig, ModelParams};
use eqgnn::Real;
use ndarray::Array4;
use serde_json::json;

use crate::config::{Precision, RunConfig};
use crate::{BenchArgs, CliError, CliResult};

/// Bytes of one message: three `(l_max+1)² × E` embeddings.
pub fn message_bytes(l_max: usize, width: usize, value_bytes: usize) -> usize {
    message_values(l_max, width) * value_bytes
}

/// Directions spread over the sphere on a golden-angle spiral.
fn directions(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), y, r * phi.sin()]
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median seconds per call of the SO(2) block on `batch` messages.
fn time_batch<T: Real>(params: &ModelParams<T>, batch: usize, repeats: usize, warmup: usize) -> CliResult<f64> {
    let (l_max, e) = (params.config.l_max, params.config.width);
    let h = (l_max + 1) * (l_max + 1);
    let data = Array4::from_shape_fn((batch, 3, h, e), |(k, s, i, c)| {
        T::of(((k * 131 + s * 17 + i * 7 + c) as f64 * 0.618).sin())
    });
    let msgs = MessageBatch { l_max, data };
    let frames = Frames::from_displacements(l_max, &directions(batch))?;
    let w = &params.layers[0].edge;
    for _ in 0..warmup {
        black_box(so2_block(&msgs, &frames, w, true)?);
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        black_box(so2_block(&msgs, &frames, w, true)?);
        samples.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(samples))
}

fn sweep<T: Real>(cfg: &RunConfig, a: &BenchArgs) -> CliResult<()> {
    if a.batches.is_empty() || a.batches.contains(&0) || a.repeats == 0 {
        return Err(CliError::Usage("need non-empty positive batch sizes and at least one repeat".into()));
    }
    let mut mc = ModelConfig::new(synthetic_basis(), cfg.r_cut);
    mc.l_max = cfg.l_max;
    mc.width = cfg.width;
    mc.layers = 1;
    mc.n_gaussians = cfg.n_gaussians;
    mc.seed = cfg.seed;
    let params = ModelParams::<T>::init(&mc)?;
    let bytes = message_bytes(cfg.l_max, cfg.width, T::BYTES);
    let mut csv = String::from("batch,messages_per_sec,median_seconds,message_bytes\n");
    for &b in &a.batches {
        let t = time_batch(&params, b, a.repeats, a.warmup)?;
        let rate = b as f64 / t;
        let _ = writeln!(csv, "{b},{rate:.6e},{t:.9e},{bytes}");
        eprintln!("batch {b}: {rate:.3e} messages/s");
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("throughput.csv");
    fs::write(&path, csv)?;
    println!(
        "{}",
        json!({
            "l_max": cfg.l_max,
            "width": cfg.width,
            "precision": T::NAME,
            "message_bytes": bytes,
            "repeats": a.repeats,
            "warmup": a.warmup,
            "csv": path.display().to_string(),
        })
    );
    Ok(())
}

pub fn run(cfg: &RunConfig, a: &BenchArgs) -> CliResult<()> {
    match cfg.precision {
        Precision::Single => sweep::<f32>(cfg, a),
        Precision::Double => sweep::<f64>(cfg, a),
    }
}
