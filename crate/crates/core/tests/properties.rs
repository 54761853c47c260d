use std::collections::BTreeSet;
use std::path::Path;

use eqgnn::harmonics::{cg_transform, real_sph_harm, wigner_d, WignerBlock};
use eqgnn::linalg::{axis_angle, mat_vec, matmul};
use eqgnn::model::synthetic::{synthetic_basis, synthetic_structure, toy_hamiltonian, SyntheticSpec};
use eqgnn::model::{loss, BlockMatrix};
use eqgnn::partition::{compute_metrics, lownn_partition, mincut_partition, topology_dot};
use eqgnn::runtime::build_comm_plan;
use eqgnn::structures::{build_graph, parse_extxyz, tile, write_extxyz_string, AtomicStructure};
use proptest::prelude::*;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn axis() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0..1.0f64).prop_filter("non-zero axis", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-3)
}

fn lattice(cells: [usize; 3], seed: u64) -> AtomicStructure {
    synthetic_structure(&SyntheticSpec { cells, seed, ..Default::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wigner_is_an_orthogonal_representation(a in axis(), t in 0.0..6.3f64, b in axis(), u in 0.0..6.3f64, l in 0usize..=6) {
        let (r1, r2) = (axis_angle(&a, t), axis_angle(&b, u));
        let (d1, d2) = (wigner_d(l, &r1).unwrap(), wigner_d(l, &r2).unwrap());
        let d12 = wigner_d(l, &matmul(&r1, &r2)).unwrap();
        prop_assert!(max_diff(&d12.matrix, &d1.matmul(&d2).matrix) < 1e-10);
        prop_assert!(max_diff(&d1.matmul(&d1.transpose()).matrix, &WignerBlock::identity(l).matrix) < 1e-10);
    }

    #[test]
    fn harmonics_rotate_with_their_argument(a in axis(), t in 0.0..6.3f64, v in axis()) {
        let r = axis_angle(&a, t);
        let (y, yr) = (real_sph_harm(4, &v), real_sph_harm(4, &mat_vec(&r, &v)));
        for l in 0..=4 {
            let s = l * l..(l + 1) * (l + 1);
            prop_assert!(max_diff(&wigner_d(l, &r).unwrap().apply(&y[s.clone()]), &yr[s]) < 1e-10);
        }
    }

    #[test]
    fn coupling_is_orthogonal(la in 0usize..=4, lb in 0usize..=4, seed in any::<u64>()) {
        let t = cg_transform(la, lb);
        let n = (2 * la + 1) * (2 * lb + 1);
        let block: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64 * 7919)) % 1000) as f64 / 500.0 - 1.0).collect();
        let coupled = t.to_coupled(&block).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        prop_assert!((norm(&coupled) - norm(&block)).abs() < 1e-12 * norm(&block).max(1.0));
        prop_assert!(max_diff(&t.to_uncoupled(&coupled).unwrap(), &block) < 1e-12);
        prop_assert_eq!(t.dim(), n);
    }

    #[test]
    fn extxyz_round_trip(cells in prop::array::uniform3(1usize..4), seed in any::<u64>()) {
        let s = lattice(cells, seed);
        let back = parse_extxyz(&write_extxyz_string(&s), Path::new("mem")).unwrap();
        prop_assert_eq!(back.species(), s.species());
        prop_assert_eq!(back.pbc(), s.pbc());
        for (p, q) in s.positions().iter().zip(back.positions()) {
            prop_assert!(max_diff(p, q) < 1e-9);
        }
    }

    #[test]
    fn tiling_multiplies_atoms_and_edges(n in prop::array::uniform3(1usize..3), seed in any::<u64>()) {
        let s = lattice([3, 3, 3], seed);
        let t = tile(&s, n[0], n[1], n[2]).unwrap();
        let k = n[0] * n[1] * n[2];
        prop_assert_eq!(t.n_atoms(), k * s.n_atoms());
        let (g, gt) = (build_graph(&s, 2.5).unwrap(), build_graph(&t, 2.5).unwrap());
        prop_assert_eq!(gt.n_edges(), k * g.n_edges());
    }

    #[test]
    fn loss_is_zero_only_on_the_target(seed in any::<u64>(), shift in 1e-3..1.0f64) {
        let s = lattice([2, 2, 2], seed);
        let g = build_graph(&s, 3.0).unwrap();
        let h = toy_hamiltonian(&g, &synthetic_basis(), 2.0).unwrap().to_coupled().unwrap();
        prop_assert_eq!(loss(&h, &h).unwrap().value, 0.0);
        let mut moved = h.clone();
        for b in moved.blocks.values_mut() {
            for v in &mut b.data {
                *v += shift;
            }
        }
        let expect = shift + shift * shift;
        prop_assert!((loss(&moved, &h).unwrap().value - expect).abs() < 1e-12);
    }

    #[test]
    fn block_text_round_trip(seed in any::<u64>()) {
        let s = lattice([2, 2, 2], seed);
        let g = build_graph(&s, 3.0).unwrap();
        let h = toy_hamiltonian(&g, &synthetic_basis(), 2.0).unwrap();
        let back = BlockMatrix::parse_text(&h.to_text(), Path::new("mem"), &h.basis, &h.species).unwrap();
        let (diff, unmatched) = back.max_abs_diff(&h);
        prop_assert_eq!(unmatched, 0);
        prop_assert!(diff < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_match_a_brute_force_recount(
        cells in prop::array::uniform3(2usize..5),
        seed in any::<u64>(),
        parts in 1usize..7,
        depth in 0u32..4,
    ) {
        let s = lattice(cells, seed);
        let g = build_graph(&s, 2.5).unwrap();
        for p in [mincut_partition(&g, parts.min(g.n_nodes()), seed).unwrap(), lownn_partition(&s, &g, depth, 2.5).unwrap()] {
            let m = compute_metrics(&g, &p);
            prop_assert_eq!(p.node_to_part.len(), g.n_nodes());
            prop_assert!(p.node_to_part.iter().all(|&q| q < p.n_parts));
            let mut total_volume = 0;
            for q in 0..p.n_parts {
                let senders: BTreeSet<usize> = g
                    .edges()
                    .iter()
                    .filter(|e| p.part(e.dst) == q && p.part(e.src) != q)
                    .map(|e| p.part(e.src))
                    .collect();
                let remote: BTreeSet<usize> = g
                    .edges()
                    .iter()
                    .filter(|e| p.part(e.dst) == q && p.part(e.src) != q)
                    .map(|e| e.src)
                    .collect();
                prop_assert_eq!(m.parts[q].neighbors, senders.len());
                prop_assert_eq!(m.parts[q].recv_volume, remote.len());
                prop_assert_eq!(m.parts[q].edges, g.edges().iter().filter(|e| p.part(e.dst) == q).count());
                total_volume += remote.len();
            }
            prop_assert_eq!(m.total_volume, total_volume);
            let dot = topology_dot(&g, &p);
            prop_assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), m.parts.iter().map(|x| x.neighbors).sum::<usize>());
            let plan = build_comm_plan(&g, &p).unwrap();
            prop_assert_eq!(plan.total_volume(), total_volume);
        }
    }

    #[test]
    fn lownn_makes_two_to_the_depth_parts(cells in prop::array::uniform3(3usize..6), seed in any::<u64>(), depth in 0u32..5) {
        let s = lattice(cells, seed);
        let g = build_graph(&s, 2.5).unwrap();
        let p = lownn_partition(&s, &g, depth, 2.5).unwrap();
        prop_assert_eq!(p.n_parts, 1 << depth);
        let used: BTreeSet<usize> = p.node_to_part.iter().copied().collect();
        prop_assert!(used.len() <= p.n_parts);
    }
}
