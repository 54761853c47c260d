use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use crate::model::{BlockKey, LocalEdge, LocalGraph};
use crate::partition::{halo_sets, PartitionAssignment};
use crate::structures::AtomGraph;
use crate::{Error, Result};

/// Owned nodes whose embeddings go to one neighbouring rank, as local
/// indices in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendList {
    pub peer: usize,
    pub nodes: Vec<usize>,
}

/// Remote-table slots filled by one neighbouring rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecvSlots {
    pub peer: usize,
    pub slots: Range<usize>,
}

/// What one rank owns, receives and sends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPlan {
    pub rank: usize,
    /// Global ids in local order: nodes nobody else needs first, then the
    /// boundary nodes that are sent somewhere.
    pub owned: Vec<usize>,
    pub n_interior: usize,
    /// Global ids of the remote table. Slot `s` is local index
    /// `owned.len() + s`.
    pub remote: Vec<usize>,
    pub sends: Vec<SendList>,
    pub recvs: Vec<RecvSlots>,
}

impl RankPlan {
    /// Ranks this one sends to or receives from, ascending.
    pub fn neighbors(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.sends.iter().map(|s| s.peer).chain(self.recvs.iter().map(|r| r.peer)).collect();
        set.into_iter().collect()
    }

    pub fn boundary(&self) -> &[usize] {
        &self.owned[self.n_interior..]
    }

    /// Local view of `g`: owned and remote nodes plus every edge whose
    /// destination is owned. Incoming edges of a node keep their global
    /// order so aggregation sums in the same order as a serial run.
    pub fn local_graph(&self, g: &AtomGraph) -> Result<LocalGraph> {
        let global: Vec<usize> = self.owned.iter().chain(&self.remote).copied().collect();
        let local: HashMap<usize, usize> = global.iter().enumerate().map(|(l, &n)| (n, l)).collect();
        let mut edges = Vec::new();
        for (dst_local, &dst) in self.owned.iter().enumerate() {
            for e in &g.edges()[g.incoming_range(dst)] {
                let Some(&src) = local.get(&e.src) else {
                    return Err(Error::Invalid(format!("rank {}: source {} of an owned edge is unknown", self.rank, e.src)));
                };
                edges.push(LocalEdge {
                    src,
                    dst: dst_local,
                    displacement: e.displacement,
                    distance: e.distance,
                    key: BlockKey { i: e.src, j: e.dst, image: e.image },
                });
            }
        }
        let species = global.iter().map(|&n| g.species()[n]).collect();
        LocalGraph::new(self.owned.len(), species, global, edges)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommPlan {
    pub n_nodes: usize,
    pub ranks: Vec<RankPlan>,
}

impl CommPlan {
    pub fn world_size(&self) -> usize {
        self.ranks.len()
    }

    /// Embeddings received per exchange, summed over ranks.
    pub fn total_volume(&self) -> usize {
        self.ranks.iter().map(|r| r.remote.len()).sum()
    }

    /// Point-to-point messages per exchange, summed over ranks.
    pub fn messages_per_exchange(&self) -> usize {
        self.ranks.iter().map(|r| r.sends.len()).sum()
    }
}

/// Plan for incoming-edge ownership: rank `p` owns its nodes and every
/// edge ending in them, and receives the sources of those edges it does not
/// own. Receive slots are ordered by (sending rank, sender-local index).
pub fn build_comm_plan(g: &AtomGraph, p: &PartitionAssignment) -> Result<CommPlan> {
    if p.node_to_part.len() != g.n_nodes() {
        return Err(Error::Partition(format!("{} assignments for {} nodes", p.node_to_part.len(), g.n_nodes())));
    }
    let sets = halo_sets(g, p);
    let mut boundary = vec![false; g.n_nodes()];
    for ((_, _), nodes) in &sets {
        for &n in nodes {
            boundary[n] = true;
        }
    }
    let mut local_of = vec![usize::MAX; g.n_nodes()];
    let mut ranks: Vec<RankPlan> = (0..p.n_parts)
        .map(|q| {
            let mine = p.nodes_of(q);
            let mut owned: Vec<usize> = mine.iter().copied().filter(|&n| !boundary[n]).collect();
            let n_interior = owned.len();
            owned.extend(mine.iter().copied().filter(|&n| boundary[n]));
            for (l, &n) in owned.iter().enumerate() {
                local_of[n] = l;
            }
            RankPlan { rank: q, owned, n_interior, remote: Vec::new(), sends: Vec::new(), recvs: Vec::new() }
        })
        .collect();
    // BTreeMap order is (sender, receiver), so each receiver sees its
    // senders in ascending rank order.
    for ((from, to), nodes) in &sets {
        let mut locals: Vec<usize> = nodes.iter().map(|&n| local_of[n]).collect();
        locals.sort_unstable();
        let owners = &ranks[*from].owned;
        let globals: Vec<usize> = locals.iter().map(|&l| owners[l]).collect();
        ranks[*from].sends.push(SendList { peer: *to, nodes: locals });
        let dst = &mut ranks[*to];
        let start = dst.remote.len();
        dst.remote.extend(globals);
        dst.recvs.push(RecvSlots { peer: *from, slots: start..dst.remote.len() });
    }
    for r in &mut ranks {
        r.sends.sort_by_key(|s| s.peer);
    }
    Ok(CommPlan { n_nodes: g.n_nodes(), ranks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::Edge;

    /// Nodes 0, 1, 2 on ranks 0, 1, 2; node 1 feeds both others.
    fn fan_out() -> (AtomGraph, PartitionAssignment) {
        let e = |src: usize, dst: usize, x: f64| Edge {
            src,
            dst,
            displacement: [x, 0.0, 0.0],
            distance: x.abs(),
            image: [0; 3],
        };
        let g = AtomGraph::from_edges(vec![1, 1, 1], vec![e(1, 0, -1.0), e(1, 2, 1.0)], 2.0).unwrap();
        (g, PartitionAssignment::new(3, vec![0, 1, 2]).unwrap())
    }

    #[test]
    fn one_rank_has_no_traffic() {
        let (g, _) = fan_out();
        let plan = build_comm_plan(&g, &PartitionAssignment::single(3)).unwrap();
        let r = &plan.ranks[0];
        assert!(r.sends.is_empty() && r.recvs.is_empty() && r.remote.is_empty());
        assert_eq!(r.n_interior, 3);
    }

    #[test]
    fn shared_source_goes_to_both_ranks() {
        let (g, p) = fan_out();
        let plan = build_comm_plan(&g, &p).unwrap();
        assert_eq!(plan.ranks[1].sends, vec![SendList { peer: 0, nodes: vec![0] }, SendList { peer: 2, nodes: vec![0] }]);
        assert_eq!(plan.ranks[0].remote, vec![1]);
        assert_eq!(plan.ranks[2].remote, vec![1]);
        assert_eq!(plan.ranks[1].remote, Vec::<usize>::new());
        assert_eq!(plan.messages_per_exchange(), 2);
        assert_eq!(plan.ranks[0].neighbors(), vec![1]);
        assert_eq!(plan.ranks[1].neighbors(), vec![0, 2]);
    }

    #[test]
    fn boundary_nodes_sit_at_the_tail() {
        let (g, _) = fan_out();
        let p = PartitionAssignment::new(2, vec![0, 0, 1]).unwrap();
        let plan = build_comm_plan(&g, &p).unwrap();
        assert_eq!(plan.ranks[0].owned, vec![0, 1]);
        assert_eq!(plan.ranks[0].n_interior, 1);
        assert_eq!(plan.ranks[0].boundary(), &[1]);
        let lg = plan.ranks[2 - 1].local_graph(&g).unwrap();
        assert_eq!(lg.n_owned, 1);
        assert_eq!(lg.global, vec![2, 1]);
        assert_eq!(lg.edges.len(), 1);
        assert_eq!((lg.edges[0].src, lg.edges[0].dst), (1, 0));
    }
}
