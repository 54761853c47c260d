use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PartitionAssignment;
use crate::structures::{node_degrees, AtomGraph};
use crate::{Error, Result};

const TRIES: usize = 4;
const MAX_PASSES: usize = 8;
/// FM passes stop after this many moves without a new best cut.
const PATIENCE: usize = 200;

struct Graph {
    adj: Vec<Vec<(usize, i64)>>,
    weight: Vec<i64>,
}

impl Graph {
    fn new(g: &AtomGraph) -> Self {
        let n = g.n_nodes();
        let mut pairs: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .filter(|e| e.src != e.dst)
            .map(|e| (e.src.min(e.dst), e.src.max(e.dst)))
            .collect();
        pairs.sort_unstable();
        let mut adj = vec![Vec::new(); n];
        let mut i = 0;
        while i < pairs.len() {
            let mut j = i;
            while j < pairs.len() && pairs[j] == pairs[i] {
                j += 1;
            }
            let (a, b) = pairs[i];
            let w = (j - i) as i64;
            adj[a].push((b, w));
            adj[b].push((a, w));
            i = j;
        }
        let weight = node_degrees(g).into_iter().map(|d| d.max(1) as i64).collect();
        Graph { adj, weight }
    }
}

/// Recursive bisection by greedy graph growing plus Fiduccia-Mattheyses
/// refinement of the edge cut, nodes weighted by degree. Deterministic for
/// a given seed; any part count.
pub fn mincut_partition(g: &AtomGraph, n_parts: usize, seed: u64) -> Result<PartitionAssignment> {
    let n = g.n_nodes();
    if n_parts == 0 {
        return Err(Error::Partition("need at least one part".into()));
    }
    if n_parts > n.max(1) {
        return Err(Error::Partition(format!("{n_parts} parts for {n} nodes")));
    }
    let graph = Graph::new(g);
    let mut parts = vec![0usize; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut local = vec![usize::MAX; n];
    recurse(&graph, (0..n).collect(), n_parts, 0, &mut parts, &mut local, &mut rng);
    PartitionAssignment::new(n_parts, parts)
}

fn recurse(
    g: &Graph,
    nodes: Vec<usize>,
    k: usize,
    first: usize,
    out: &mut [usize],
    local: &mut [usize],
    rng: &mut ChaCha8Rng,
) {
    if k == 1 {
        for &v in &nodes {
            out[v] = first;
        }
        return;
    }
    let k1 = k / 2;
    let (a, b) = bisect(g, &nodes, k1 as f64 / k as f64, k1, k - k1, local, rng);
    recurse(g, a, k1, first, out, local, rng);
    recurse(g, b, k - k1, first + k1, out, local, rng);
}

/// Split `nodes` so that side 0 carries about `frac` of the weight and each
/// side keeps at least `min_a` / `min_b` nodes.
fn bisect(
    g: &Graph,
    nodes: &[usize],
    frac: f64,
    min_a: usize,
    min_b: usize,
    local: &mut [usize],
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    let n = nodes.len();
    let sub: Vec<Vec<(usize, i64)>> = nodes
        .iter()
        .map(|&v| {
            g.adj[v]
                .iter()
                .filter(|(u, _)| local[*u] != usize::MAX && nodes.get(local[*u]) == Some(u))
                .map(|&(u, w)| (local[u], w))
                .collect()
        })
        .collect();
    let weight: Vec<i64> = nodes.iter().map(|&v| g.weight[v]).collect();
    let total: i64 = weight.iter().sum();
    let target = (total as f64 * frac).round() as i64;
    let max_w = weight.iter().copied().max().unwrap_or(1);
    let tol = ((total as f64) * 0.02).ceil() as i64 + max_w;

    let mut best: Option<(i64, Vec<u8>)> = None;
    for _ in 0..TRIES {
        let start = rng.random_range(0..n);
        let mut side = grow(&sub, &weight, target, start);
        fix_counts(&mut side, min_a, min_b);
        refine(&sub, &weight, &mut side, target, tol, min_a, min_b);
        let c = cut(&sub, &side);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, side));
        }
    }
    for &v in nodes {
        local[v] = usize::MAX;
    }
    let side = best.expect("at least one try").1;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, &v) in nodes.iter().enumerate() {
        if side[i] == 0 {
            a.push(v);
        } else {
            b.push(v);
        }
    }
    (a, b)
}

fn cut(adj: &[Vec<(usize, i64)>], side: &[u8]) -> i64 {
    let mut c = 0;
    for (v, list) in adj.iter().enumerate() {
        for &(u, w) in list {
            if u > v && side[u] != side[v] {
                c += w;
            }
        }
    }
    c
}

fn farthest(adj: &[Vec<(usize, i64)>], start: usize) -> usize {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut q = VecDeque::from([start]);
    dist[start] = 0;
    let mut last = start;
    while let Some(v) = q.pop_front() {
        last = v;
        for &(u, _) in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                q.push_back(u);
            }
        }
    }
    last
}

/// Greedy growing of side 0 from a pseudo-peripheral node: repeatedly add
/// the frontier node with the most weight connecting it to the region.
fn grow(adj: &[Vec<(usize, i64)>], weight: &[i64], target: i64, start: usize) -> Vec<u8> {
    let n = adj.len();
    let mut side = vec![1u8; n];
    let mut conn = vec![0i64; n];
    let mut heap = BinaryHeap::new();
    let mut filled = 0i64;
    let mut next_seed = 0usize;
    let seed = farthest(adj, start);
    heap.push((0i64, std::cmp::Reverse(seed)));
    while filled < target {
        let v = match heap.pop() {
            Some((c, std::cmp::Reverse(v))) => {
                if side[v] == 0 || c != conn[v] {
                    continue;
                }
                v
            }
            None => {
                // disconnected remainder: continue from the next free node
                while next_seed < n && side[next_seed] == 0 {
                    next_seed += 1;
                }
                if next_seed == n {
                    break;
                }
                next_seed
            }
        };
        side[v] = 0;
        filled += weight[v];
        for &(u, w) in &adj[v] {
            if side[u] == 1 {
                conn[u] += w;
                heap.push((conn[u], std::cmp::Reverse(u)));
            }
        }
    }
    side
}

/// Make sure each side has its minimum node count.
fn fix_counts(side: &mut [u8], min_a: usize, min_b: usize) {
    let count_a = side.iter().filter(|&&s| s == 0).count();
    if count_a < min_a {
        let mut need = min_a - count_a;
        for s in side.iter_mut() {
            if need == 0 {
                break;
            }
            if *s == 1 {
                *s = 0;
                need -= 1;
            }
        }
    }
    let count_b = side.iter().filter(|&&s| s == 1).count();
    if count_b < min_b {
        let mut need = min_b - count_b;
        for s in side.iter_mut().rev() {
            if need == 0 {
                break;
            }
            if *s == 0 {
                *s = 1;
                need -= 1;
            }
        }
    }
}

fn gain_of(adj: &[Vec<(usize, i64)>], side: &[u8], v: usize) -> i64 {
    adj[v].iter().map(|&(u, w)| if side[u] != side[v] { w } else { -w }).sum()
}

/// Fiduccia-Mattheyses passes with rollback to the best prefix.
fn refine(
    adj: &[Vec<(usize, i64)>],
    weight: &[i64],
    side: &mut [u8],
    target: i64,
    tol: i64,
    min_a: usize,
    min_b: usize,
) {
    let n = adj.len();
    for _ in 0..MAX_PASSES {
        let mut wa: i64 = (0..n).filter(|&v| side[v] == 0).map(|v| weight[v]).sum();
        let mut na = side.iter().filter(|&&s| s == 0).count();
        let mut gain: Vec<i64> = (0..n).map(|v| gain_of(adj, side, v)).collect();
        let mut locked = vec![false; n];
        let mut heap: BinaryHeap<(i64, std::cmp::Reverse<usize>)> =
            (0..n).map(|v| (gain[v], std::cmp::Reverse(v))).collect();
        let mut moves = Vec::new();
        let mut acc = 0i64;
        let mut best = (0i64, 0usize);
        let start_dev = (wa - target).abs();
        while let Some((gv, std::cmp::Reverse(v))) = heap.pop() {
            if locked[v] || gv != gain[v] {
                continue;
            }
            let (new_wa, new_na) = if side[v] == 0 { (wa - weight[v], na - 1) } else { (wa + weight[v], na + 1) };
            let dev = (new_wa - target).abs();
            if (dev > tol && dev >= (wa - target).abs()) || new_na < min_a || n - new_na < min_b {
                locked[v] = true;
                continue;
            }
            locked[v] = true;
            side[v] ^= 1;
            wa = new_wa;
            na = new_na;
            acc += gv;
            moves.push(v);
            for &(u, w) in &adj[v] {
                if locked[u] {
                    continue;
                }
                // v changed side: edge (u, v) flipped between cut and uncut
                gain[u] += if side[u] == side[v] { -2 * w } else { 2 * w };
                heap.push((gain[u], std::cmp::Reverse(u)));
            }
            let balanced = (wa - target).abs() <= tol.max(start_dev);
            if balanced && (acc > best.0 || (acc == best.0 && moves.len() < best.1)) {
                best = (acc, moves.len());
            }
            if moves.len() - best.1 > PATIENCE {
                break;
            }
        }
        for &v in &moves[best.1..] {
            side[v] ^= 1;
        }
        if best.0 <= 0 {
            break;
        }
    }
}
