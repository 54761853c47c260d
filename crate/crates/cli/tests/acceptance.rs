//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs with `cargo test --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use eqgnn::harmonics::{cg_transform, real_sph_harm, wigner_blocks, wigner_d, WignerBlock};
use eqgnn::linalg::{axis_angle, mat_vec, matmul, Mat3, Vec3};
use eqgnn::model::synthetic::{synthetic_basis, synthetic_structure, toy_hamiltonian, SyntheticSpec};
use eqgnn::model::{
    create_messages, forward, message_values, run_backward, run_forward, BlockKey, BlockMatrix, ModelConfig,
    ModelInput, ModelParams, NoHalo, SphericalTensor,
};
use eqgnn::partition::{compute_metrics, lownn_partition, mincut_partition, PartitionAssignment};
use eqgnn::runtime::{build_comm_plan, distributed_forward, train_distributed, InProcOptions};
use eqgnn::structures::{build_graph, tile, AtomicStructure, BasisSpec};
use eqgnn::Real;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    axis_angle(&axis, rng.random_range(0.0..std::f64::consts::TAU))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn oxide_basis() -> BasisSpec {
    BasisSpec::new().with(8, &[0, 1]).with(22, &[0, 1, 2])
}

fn random_structure(n: usize, seed: u64) -> AtomicStructure {
    let mut r = rng(seed);
    let cell = [[5.0, 0.3, 0.0], [0.2, 5.5, 0.1], [0.0, -0.4, 6.0]];
    let positions = (0..n)
        .map(|_| {
            let f: Vec3 = [r.random(), r.random(), r.random()];
            let mut p = [0.0; 3];
            for d in 0..3 {
                for k in 0..3 {
                    p[d] += f[k] * cell[k][d];
                }
            }
            p
        })
        .collect();
    let species = (0..n).map(|i| if i % 3 == 0 { 22 } else { 8 }).collect();
    AtomicStructure::new(positions, species, cell, [true; 3]).unwrap()
}

// ---------------------------------------------------------------- 1

/// Apply `D^L(R)` to every coupled segment of a coupled prediction.
fn rotate_coupled(m: &BlockMatrix, r: &Mat3) -> BlockMatrix {
    let d = wigner_blocks(2 * m.basis.max_l(), r);
    let mut out = m.clone();
    for (key, b) in out.blocks.iter_mut() {
        let (zs, zd) = (m.species[key.i], m.species[key.j]);
        let mut seg = 0;
        for &la in m.basis.shells(zs).unwrap() {
            for &lb in m.basis.shells(zd).unwrap() {
                let t = cg_transform(la, lb);
                for &(l, off) in &t.blocks {
                    let s = seg + off;
                    let v = d[l].apply(&b.data[s..s + 2 * l + 1]);
                    b.data[s..s + 2 * l + 1].copy_from_slice(&v);
                }
                seg += t.dim();
            }
        }
    }
    out
}

fn equivariance_error<T: Real>(s: &AtomicStructure, l_max: usize, rotations: u64) -> f64 {
    let mut cfg = ModelConfig::new(oxide_basis(), 3.2);
    cfg.l_max = l_max;
    cfg.width = 8;
    cfg.layers = 2;
    cfg.seed = 17;
    let params = ModelParams::<T>::init(&cfg).unwrap();
    let base = forward(&build_graph(s, 3.2).unwrap(), &params).unwrap();
    let scale = base.blocks.values().flat_map(|b| b.data.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for seed in 0..rotations {
        let r = random_rotation(&mut rng(1000 + seed));
        let rotated = forward(&build_graph(&s.rotated(&r), 3.2).unwrap(), &params).unwrap();
        let (diff, unmatched) = rotated.max_abs_diff(&rotate_coupled(&base, &r));
        assert_eq!(unmatched, 0, "rotation changed the block set");
        worst = worst.max(diff / scale);
    }
    worst
}

fn equivariance() -> Check {
    let s = random_structure(20, 3);
    let mut ok = true;
    let mut parts = Vec::new();
    for l_max in [2, 4] {
        let single = equivariance_error::<f32>(&s, l_max, 20);
        let double = equivariance_error::<f64>(&s, l_max, 20);
        ok &= single < 1e-4 && double < 1e-10;
        parts.push(format!("l_max {l_max}: single {single:.2e}, double {double:.2e}"));
    }
    verdict(ok, format!("{} (limits 1e-4 / 1e-10, 20 rotations)", parts.join("; ")))
}

// ---------------------------------------------------------------- 2

fn binom(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

fn fact(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Orthonormal real harmonics from the explicit solid-harmonic polynomials,
/// polar axis +y, index `l² + l + m`.
fn polynomial_harmonics(l_max: usize, v: &Vec3) -> Vec<f64> {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (x, y, z) = (v[2] / r, v[0] / r, v[1] / r);
    let mut out = vec![0.0; (l_max + 1) * (l_max + 1)];
    for l in 0..=l_max {
        for m in 0..=l {
            let mut pi = 0.0;
            for k in 0..=(l - m) / 2 {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                pi += sign * 2f64.powi(-(l as i32)) * binom(l, k) * binom(2 * l - 2 * k, l) * fact(l - 2 * k)
                    / fact(l - 2 * k - m)
                    * z.powi((l - 2 * k - m) as i32);
            }
            pi *= (fact(l - m) / fact(l + m)).sqrt();
            let (mut a, mut b) = (0.0, 0.0);
            for p in 0..=m {
                let term = binom(m, p) * x.powi(p as i32) * y.powi((m - p) as i32);
                match (m - p) % 4 {
                    0 => a += term,
                    1 => b += term,
                    2 => a -= term,
                    _ => b -= term,
                }
            }
            let norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).sqrt();
            let base = l * l + l;
            if m == 0 {
                out[base] = norm * pi;
            } else {
                out[base + m] = norm * std::f64::consts::SQRT_2 * pi * a;
                out[base - m] = norm * std::f64::consts::SQRT_2 * pi * b;
            }
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn harmonics() -> Check {
    const L: usize = 6;
    let mut r = rng(2);
    let (mut poly, mut homo, mut ortho, mut rep) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut dirs: Vec<Vec3> = vec![[0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    dirs.extend((0..200).map(|_| random_unit(&mut r)));
    for v in &dirs {
        poly = poly.max(max_diff(&real_sph_harm(L, v), &polynomial_harmonics(L, v)));
    }
    for _ in 0..50 {
        let (r1, r2) = (random_rotation(&mut r), random_rotation(&mut r));
        let v = random_unit(&mut r);
        let (y, yr) = (polynomial_harmonics(L, &v), polynomial_harmonics(L, &mat_vec(&r1, &v)));
        let r12 = matmul(&r1, &r2);
        for l in 0..=L {
            let (d1, d2, d12) = (wigner_d(l, &r1).unwrap(), wigner_d(l, &r2).unwrap(), wigner_d(l, &r12).unwrap());
            homo = homo.max(max_diff(&d12.matrix, &d1.matmul(&d2).matrix));
            ortho = ortho.max(max_diff(&d1.matmul(&d1.transpose()).matrix, &WignerBlock::identity(l).matrix));
            let s = l * l..(l + 1) * (l + 1);
            rep = rep.max(max_diff(&d1.apply(&y[s.clone()]), &yr[s]));
        }
    }
    let (mut round, mut equi) = (0.0f64, 0.0f64);
    for la in 0..=4 {
        for lb in 0..=4 {
            let t = cg_transform(la, lb);
            let (na, nb) = (2 * la + 1, 2 * lb + 1);
            for _ in 0..5 {
                let block: Vec<f64> = (0..na * nb).map(|_| r.random_range(-1.0..1.0)).collect();
                let coupled = t.to_coupled(&block).unwrap();
                round = round.max(max_diff(&t.to_uncoupled(&coupled).unwrap(), &block));
                // D^la · B · D^lbᵀ in the uncoupled basis is ⊕ D^L in the coupled one.
                let rot = random_rotation(&mut r);
                let d = wigner_blocks(la + lb, &rot);
                let mut rotated = vec![0.0; na * nb];
                for i in 0..na {
                    for j in 0..nb {
                        let mut acc = 0.0;
                        for p in 0..na {
                            for q in 0..nb {
                                acc += d[la].matrix[i * na + p] * block[p * nb + q] * d[lb].matrix[j * nb + q];
                            }
                        }
                        rotated[i * nb + j] = acc;
                    }
                }
                let mut expect = coupled.clone();
                for &(l, off) in &t.blocks {
                    let seg = d[l].apply(&coupled[off..off + 2 * l + 1]);
                    expect[off..off + 2 * l + 1].copy_from_slice(&seg);
                }
                equi = equi.max(max_diff(&t.to_coupled(&rotated).unwrap(), &expect));
            }
        }
    }
    let ok = poly < 1e-9 && homo < 1e-9 && ortho < 1e-9 && rep < 1e-9 && round < 1e-12 && equi < 1e-9;
    verdict(
        ok,
        format!(
            "l ≤ {L}: polynomial {poly:.1e}, homomorphism {homo:.1e}, orthogonality {ortho:.1e}, \
             D·Y(v) = Y(Rv) {rep:.1e} (limit 1e-9); C-G l_a,l_b ≤ 4: round trip {round:.1e} (limit 1e-12), \
             coupled rotation {equi:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn serial_vs_distributed() -> Check {
    const R_CUT: f64 = 3.0;
    let s = synthetic_structure(&SyntheticSpec { cells: [5, 5, 8], seed: 10, ..Default::default() }).unwrap();
    let g = build_graph(&s, R_CUT).unwrap();
    let mut cfg = ModelConfig::new(synthetic_basis(), R_CUT);
    cfg.l_max = 2;
    cfg.width = 8;
    cfg.layers = 2;
    cfg.seed = 5;
    let m = cfg.layers;
    let params = ModelParams::<f32>::init(&cfg).unwrap();
    let target = toy_hamiltonian(&g, &synthetic_basis(), 2.0).unwrap();
    let serial = forward(&g, &params).unwrap();
    let single = PartitionAssignment::single(g.n_nodes());
    let step_ref = train_distributed(&g, &target, &params, &single, 1, 1e-3, InProcOptions::default()).unwrap();
    let ref_flat = step_ref.params.to_flat();

    let mut ok = g.n_nodes() == 200;
    let mut parts = Vec::new();
    for depth in 1..=3u32 {
        let p = lownn_partition(&s, &g, depth, R_CUT).unwrap();
        let plan = build_comm_plan(&g, &p).unwrap();
        let (dist, reports) = distributed_forward(&g, &params, &p, InProcOptions::default()).unwrap();
        let (fwd, unmatched) = dist.max_abs_diff(&serial);
        let mut counts_ok = unmatched == 0;
        for rep in &reports {
            let rp = &plan.ranks[rep.rank];
            counts_ok &= rep.exchanges == 2 * m
                && rep.counts.sends == rp.sends.len() * 2 * m
                && rep.counts.recvs == rp.recvs.len() * 2 * m
                && rep.aggregate_violations == 0;
        }
        let run = train_distributed(&g, &target, &params, &p, 1, 1e-3, InProcOptions::default()).unwrap();
        let dloss = (run.history[0].loss - step_ref.history[0].loss).abs();
        let dparam = run.params.to_flat().iter().zip(&ref_flat).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        ok &= fwd <= 1e-5 && dloss <= 1e-5 && f64::from(dparam) <= 1e-5 && counts_ok;
        parts.push(format!(
            "{} ranks: forward {fwd:.1e}, step loss {dloss:.1e}, params {dparam:.1e}, counts {}",
            1 << depth,
            if counts_ok { "ok" } else { "WRONG" }
        ));
    }
    verdict(ok, format!("{} atoms, f32, M = {m}: {} (limit 1e-5; 2M exchanges, one send per neighbour)", g.n_nodes(), parts.join("; ")))
}

// ---------------------------------------------------------------- 4

fn gradient_check() -> Check {
    let s = random_structure(12, 10);
    let g = build_graph(&s, 3.2).unwrap();
    let mut cfg = ModelConfig::new(oxide_basis(), 3.2);
    cfg.l_max = 4;
    cfg.width = 4;
    cfg.layers = 2;
    cfg.seed = 17;
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let input = ModelInput::serial(&g, &params).unwrap();
    let (_, tape) = run_forward(&params, &input, &mut NoHalo, true).unwrap();
    let base = forward(&g, &params).unwrap();
    let mut r = rng(2);
    let probe: std::collections::BTreeMap<BlockKey, Vec<f64>> = base
        .blocks
        .iter()
        .map(|(k, b)| (*k, (0..b.data.len()).map(|_| r.random_range(-1.0..1.0)).collect()))
        .collect();
    let functional = |pred: &BlockMatrix| -> f64 {
        pred.blocks.iter().map(|(k, b)| b.data.iter().zip(&probe[k]).map(|(x, y)| x * y).sum::<f64>()).sum()
    };
    let grad = run_backward(&params, &input, &tape.unwrap(), &probe, &mut NoHalo).unwrap().to_flat();
    let flat = params.to_flat();
    let n = 500;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in sample(&mut rng(3), flat.len(), n) {
        let eval = |delta: f64| {
            let mut p = params.clone();
            let mut f = flat.clone();
            f[i] += delta;
            p.set_flat(&f).unwrap();
            functional(&forward(&g, &p).unwrap())
        };
        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-7);
        worst = worst.max(err);
    }
    verdict(
        worst < 1e-5,
        format!("{n} of {} parameters, f64, l_max 4: max relative error {worst:.2e} (limit 1e-5)", flat.len()),
    )
}

// ---------------------------------------------------------------- 5

fn cubic_lattice(n: usize) -> AtomicStructure {
    let mut positions = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                positions.push([i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5]);
            }
        }
    }
    let l = n as f64;
    AtomicStructure::new(positions, vec![14; n * n * n], [[l, 0.0, 0.0], [0.0, l, 0.0], [0.0, 0.0, l]], [true; 3])
        .unwrap()
}

fn lownn_properties() -> Check {
    const R_CUT: f64 = 1.05;
    let s = cubic_lattice(16);
    let g = build_graph(&s, R_CUT).unwrap();
    let mut ok = g.n_nodes() >= 4096;
    let d1 = compute_metrics(&g, &lownn_partition(&s, &g, 1, R_CUT).unwrap());
    let one_neighbor = d1.parts.iter().all(|p| p.neighbors == 1);
    ok &= one_neighbor;
    let mut worst_imb = 0.0f64;
    for depth in 1..=5 {
        let m = compute_metrics(&g, &lownn_partition(&s, &g, depth, R_CUT).unwrap());
        worst_imb = worst_imb.max(m.edge_imbalance);
    }
    ok &= worst_imb <= 1.15;
    let mut parts = Vec::new();
    for depth in 5..=7u32 {
        let low = compute_metrics(&g, &lownn_partition(&s, &g, depth, R_CUT).unwrap());
        let min = compute_metrics(&g, &mincut_partition(&g, 1 << depth, 0).unwrap());
        ok &= low.n_parts == 1 << depth && low.mean_neighbors <= min.mean_neighbors;
        parts.push(format!(
            "depth {depth}: {} parts, mean neighbours {:.2} vs min-cut {:.2}",
            low.n_parts, low.mean_neighbors, min.mean_neighbors
        ));
    }
    verdict(
        ok,
        format!(
            "{} nodes, r_cut {R_CUT}: depth 1 one neighbour each: {one_neighbor}; max edge imbalance (depth ≤ 5) {worst_imb:.3} \
             (limit 1.15); {}",
            g.n_nodes(),
            parts.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 6

fn counting() -> Check {
    let szv = BasisSpec::parse("Hf = 0 0 1 2\nO = 0 1\n").unwrap();
    let mut species = vec![72u32; 1000];
    species.extend(std::iter::repeat_n(8u32, 2000));
    let n_orb = szv.total_orbitals(&species).unwrap();

    let mut r = rng(6);
    let side = 33.5;
    let positions: Vec<Vec3> = (0..3000).map(|_| [0.0; 3].map(|_: f64| r.random_range(0.0..side))).collect();
    let cell = [[side, 0.0, 0.0], [0.0, side, 0.0], [0.0, 0.0, side]];
    let hafnia = AtomicStructure::new(positions, species, cell, [true; 3]).unwrap();
    let tiled = tile(&hafnia, 2, 2, 2).unwrap();
    let nodes = build_graph(&tiled, 3.0).unwrap().n_nodes();

    let (l_max, width) = (4, 16);
    let values = message_values(l_max, width);
    let t = SphericalTensor::<f32>::zeros(2, l_max, width);
    let e = SphericalTensor::<f32>::zeros(1, l_max, width);
    let batch = create_messages(&t, &e, &[(0, 1)]).unwrap();
    let bytes = batch.data.len() * std::mem::size_of::<f32>();

    let dzvp = BasisSpec::parse("Ge = 0 0 1 1 2\nSb = 0 0 1 1 2\nTe = 0 0 1 1 2\n").unwrap();
    let gst: Vec<u32> = (0..8064).map(|i| [32, 51, 52][i % 3]).collect();
    let gst_dim = dzvp.total_orbitals(&gst).unwrap();

    let ok = n_orb == 18_000 && nodes == 24_000 && values == 1_200 && bytes == 4_800 && gst_dim == 104_832;
    verdict(
        ok,
        format!(
            "SZV HfO2 N_orb {n_orb} (18,000); 2x2x2 tiling {nodes} nodes (24,000); message {values} values = {bytes} bytes \
             (4,800); DZVP 8,064 atoms {gst_dim} orbitals (104,832)"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn toy_training() -> Check {
    const R_CUT: f64 = 3.0;
    const STEPS: usize = 500;
    let s = synthetic_structure(&SyntheticSpec::default()).unwrap();
    let g = build_graph(&s, R_CUT).unwrap();
    let target = toy_hamiltonian(&g, &synthetic_basis(), 2.0).unwrap();
    let mut cfg = ModelConfig::new(synthetic_basis(), R_CUT);
    cfg.l_max = 2;
    cfg.width = 16;
    cfg.layers = 2;
    cfg.seed = 5;
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let lr = 1e-2;
    let single = PartitionAssignment::single(g.n_nodes());
    let serial = train_distributed(&g, &target, &params, &single, STEPS, lr, InProcOptions::default()).unwrap();
    let p4 = lownn_partition(&s, &g, 2, R_CUT).unwrap();
    let four = train_distributed(&g, &target, &params, &p4, STEPS, lr, InProcOptions::default()).unwrap();

    let (first, last) = (serial.history[0].loss, serial.history[STEPS - 1].loss);
    let reduction = first / last;
    let loss_drift =
        serial.history.iter().zip(&four.history).map(|(a, b)| (a.loss - b.loss).abs()).fold(0.0, f64::max);
    let param_drift = max_diff(&serial.params.to_flat(), &four.params.to_flat());
    let ok = g.n_nodes() == 50 && reduction >= 10.0 && loss_drift <= 1e-5 && param_drift <= 1e-5;
    verdict(
        ok,
        format!(
            "{} atoms, f64, {STEPS} steps at lr {lr}: loss {first:.3e} -> {last:.3e} ({reduction:.0}x, need 10x); \
             serial vs 4 ranks: loss drift {loss_drift:.1e}, parameter drift {param_drift:.1e} (limit 1e-5)",
            g.n_nodes()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn throughput() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let batches = [1usize, 4, 64, 1024, 16384];
    let list = batches.map(|b| b.to_string()).join(",");
    let out = Command::new(env!("CARGO_BIN_EXE_eqgnn"))
        .args(["bench-throughput", "--l-max", "2", "--width", "8", "--batches", &list, "--repeats", "120"])
        .args(["--warmup", "20", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    if !out.status.success() {
        return Err(format!("bench-throughput failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("throughput.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or("");
    let rows: Vec<(usize, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    let got: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let (small, large) = (rows[0].1, rows[rows.len() - 1].1);
    let ok = header.starts_with("batch,messages_per_sec")
        && got == batches
        && summary["repeats"] == 120
        && summary["warmup"] == 20
        && small <= 1.1 * large;
    verdict(
        ok,
        format!(
            "{} rows, median of 120 after 20 warm-ups; {small:.3e} msg/s at batch 1 vs {large:.3e} at batch 16384 \
             (need batch 1 ≤ 1.1x batch 16384)",
            rows.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("equivariance", equivariance),
        ("harmonics oracles", harmonics),
        ("serial = distributed", serial_vs_distributed),
        ("gradient check", gradient_check),
        ("Low-NN structure", lownn_properties),
        ("counting identities", counting),
        ("toy training", toy_training),
        ("throughput harness", throughput),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| *x == n.to_string() || name.contains(x.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("PASS criterion {n} ({name}, {secs:.1} s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}, {secs:.1} s): {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
