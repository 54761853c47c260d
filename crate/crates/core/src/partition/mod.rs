//! Graph partitioning under incoming-edge ownership: every edge belongs to
//! the part that owns its destination node.

mod lownn;
mod mincut;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::structures::AtomGraph;
use crate::{Error, Result};

pub use lownn::{lownn_partition, lownn_partition_with, FirstBranch, LowNnOptions};
pub use mincut::mincut_partition;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionAssignment {
    pub n_parts: usize,
    pub node_to_part: Vec<usize>,
}

impl PartitionAssignment {
    pub fn new(n_parts: usize, node_to_part: Vec<usize>) -> Result<Self> {
        if n_parts == 0 {
            return Err(Error::Partition("need at least one part".into()));
        }
        if let Some(p) = node_to_part.iter().find(|&&p| p >= n_parts) {
            return Err(Error::Partition(format!("part id {p} out of range for {n_parts} parts")));
        }
        Ok(PartitionAssignment { n_parts, node_to_part })
    }

    pub fn single(n_nodes: usize) -> Self {
        PartitionAssignment { n_parts: 1, node_to_part: vec![0; n_nodes] }
    }

    pub fn part(&self, node: usize) -> usize {
        self.node_to_part[node]
    }

    /// Nodes of one part in ascending id order.
    pub fn nodes_of(&self, part: usize) -> Vec<usize> {
        (0..self.node_to_part.len()).filter(|&i| self.node_to_part[i] == part).collect()
    }

    /// One `node_id part_id` line per node.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, p) in self.node_to_part.iter().enumerate() {
            let _ = writeln!(s, "{i} {p}");
        }
        s
    }

    pub fn parse_text(text: &str, n_parts: usize) -> Result<Self> {
        let mut map = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(i)), Some(Ok(p)), None) if i == map.len() => map.push(p),
                _ => return Err(Error::Partition(format!("line {}: expected `node_id part_id` in order", n + 1))),
            }
        }
        Self::new(n_parts, map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMetrics {
    pub part: usize,
    pub nodes: usize,
    pub edges: usize,
    /// Parts this part receives node embeddings from.
    pub neighbors: usize,
    /// Distinct remote node embeddings received per exchange.
    pub recv_volume: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetrics {
    pub n_parts: usize,
    pub parts: Vec<PartMetrics>,
    pub node_imbalance: f64,
    pub edge_imbalance: f64,
    pub mean_neighbors: f64,
    pub max_neighbors: usize,
    pub total_volume: usize,
}

fn imbalance(values: impl Iterator<Item = usize> + Clone) -> f64 {
    let n = values.clone().count();
    let max = values.clone().max().unwrap_or(0);
    let sum: usize = values.sum();
    if sum == 0 {
        return 1.0;
    }
    max as f64 / (sum as f64 / n as f64)
}

/// For every receiving part `q`, the sending part of each remote source
/// node, keyed `(sender, receiver)` → sorted node list.
pub fn halo_sets(g: &AtomGraph, p: &PartitionAssignment) -> BTreeMap<(usize, usize), BTreeSet<usize>> {
    let mut sets: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for e in g.edges() {
        let (ps, pd) = (p.part(e.src), p.part(e.dst));
        if ps != pd {
            sets.entry((ps, pd)).or_default().insert(e.src);
        }
    }
    sets
}

pub fn compute_metrics(g: &AtomGraph, p: &PartitionAssignment) -> PartitionMetrics {
    let mut parts: Vec<PartMetrics> = (0..p.n_parts)
        .map(|part| PartMetrics { part, nodes: 0, edges: 0, neighbors: 0, recv_volume: 0 })
        .collect();
    for &q in &p.node_to_part {
        parts[q].nodes += 1;
    }
    for e in g.edges() {
        parts[p.part(e.dst)].edges += 1;
    }
    for ((_, q), nodes) in halo_sets(g, p) {
        parts[q].neighbors += 1;
        parts[q].recv_volume += nodes.len();
    }
    let total_volume = parts.iter().map(|x| x.recv_volume).sum();
    let mean_neighbors = parts.iter().map(|x| x.neighbors).sum::<usize>() as f64 / p.n_parts as f64;
    PartitionMetrics {
        n_parts: p.n_parts,
        node_imbalance: imbalance(parts.iter().map(|x| x.nodes)),
        edge_imbalance: imbalance(parts.iter().map(|x| x.edges)),
        mean_neighbors,
        max_neighbors: parts.iter().map(|x| x.neighbors).max().unwrap_or(0),
        total_volume,
        parts,
    }
}

impl PartitionMetrics {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Communication topology: one vertex per part, an arc `p -> q` weighted by
/// the number of node embeddings `p` sends to `q` per exchange.
pub fn topology_dot(g: &AtomGraph, p: &PartitionAssignment) -> String {
    let mut s = String::from("digraph partitions {\n");
    for q in 0..p.n_parts {
        let _ = writeln!(s, "  p{q};");
    }
    for ((from, to), nodes) in halo_sets(g, p) {
        let _ = writeln!(s, "  p{from} -> p{to} [weight={}];", nodes.len());
    }
    s.push_str("}\n");
    s
}
