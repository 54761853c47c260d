use super::PartitionAssignment;
use crate::structures::{node_degrees, AtomGraph, AtomicStructure};
use crate::{Error, Result};

/// Handling of dimensions that have not been cut yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstBranch {
    /// Cut the lowest-index uncut dimension, consuming one level.
    SplitUncut,
    /// Only mark every uncut dimension as cut once, then apply the
    /// neighbour-count rule.
    MarkOnly,
    /// Always apply the neighbour-count rule.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LowNnOptions {
    pub first_branch: FirstBranch,
}

impl Default for LowNnOptions {
    fn default() -> Self {
        LowNnOptions { first_branch: FirstBranch::Skip }
    }
}

/// Recursive bisection into `2^depth` parts that balances total node degree
/// and picks cut dimensions adding the fewest neighbouring parts.
pub fn lownn_partition(s: &AtomicStructure, g: &AtomGraph, depth: u32, r_cut: f64) -> Result<PartitionAssignment> {
    lownn_partition_with(s, g, depth, r_cut, LowNnOptions::default())
}

struct Ctx<'a> {
    coords: Vec<[f64; 3]>,
    degree: Vec<usize>,
    pbc: [bool; 3],
    r_cut: f64,
    options: LowNnOptions,
    out: &'a mut [usize],
}

pub fn lownn_partition_with(
    s: &AtomicStructure,
    g: &AtomGraph,
    depth: u32,
    r_cut: f64,
    options: LowNnOptions,
) -> Result<PartitionAssignment> {
    let n = s.n_atoms();
    if g.n_nodes() != n {
        return Err(Error::Partition(format!("graph has {} nodes, structure {n}", g.n_nodes())));
    }
    if depth >= usize::BITS || (1usize << depth) > n {
        return Err(Error::Partition(format!("depth {depth} needs at least 2^{depth} atoms, have {n}")));
    }
    // Coordinates along each lattice direction scaled to Å, so that the
    // periodic cell spans [0, width) in every periodic dimension.
    let (coords, root_extent) = match (s.fractional(), s.perpendicular_widths()) {
        (Some(frac), Some(w)) if s.is_periodic() => {
            let coords: Vec<[f64; 3]> = frac.iter().map(|f| [f[0] * w[0], f[1] * w[1], f[2] * w[2]]).collect();
            let bbox = extent(&coords, &(0..n).collect::<Vec<_>>());
            let root = [0, 1, 2].map(|d| if s.pbc()[d] { w[d] } else { bbox[d] });
            (coords, root)
        }
        _ => {
            let coords = s.positions().to_vec();
            let bbox = extent(&coords, &(0..n).collect::<Vec<_>>());
            (coords, bbox)
        }
    };
    let mut parts = vec![0usize; n];
    let mut ctx = Ctx {
        coords,
        degree: node_degrees(g),
        pbc: s.pbc(),
        r_cut,
        options,
        out: &mut parts,
    };
    let atoms: Vec<usize> = (0..n).collect();
    cut_domain(&mut ctx, atoms, depth, [0; 3], Some(root_extent), 0);
    PartitionAssignment::new(1 << depth, parts)
}

fn extent(coords: &[[f64; 3]], atoms: &[usize]) -> [f64; 3] {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &a in atoms {
        for d in 0..3 {
            lo[d] = lo[d].min(coords[a][d]);
            hi[d] = hi[d].max(coords[a][d]);
        }
    }
    [0, 1, 2].map(|d| (hi[d] - lo[d]).max(0.0))
}

/// Dimension to cut next.
fn choose_dim(ctx: &Ctx, cuts: [u32; 3], extent: [f64; 3]) -> usize {
    if ctx.options.first_branch == FirstBranch::SplitUncut {
        if let Some(d) = (0..3).find(|&d| cuts[d] == 0) {
            return d;
        }
    }
    let nn: Vec<f64> = (0..3)
        .map(|d| {
            if cuts[d] == 1 && ctx.pbc[d] {
                1.0
            } else if extent[d] > 0.0 {
                (2.0 * ctx.r_cut / extent[d]).ceil()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let best = nn.iter().copied().fold(f64::INFINITY, f64::min);
    // ties go to the largest dimension index
    (0..3).rev().find(|&d| nn[d] == best).unwrap_or(2)
}

fn cut_domain(ctx: &mut Ctx, mut atoms: Vec<usize>, level: u32, mut cuts: [u32; 3], root: Option<[f64; 3]>, first_part: usize) {
    if level == 0 {
        for &a in &atoms {
            ctx.out[a] = first_part;
        }
        return;
    }
    let ext = root.unwrap_or_else(|| extent(&ctx.coords, &atoms));
    if ctx.options.first_branch == FirstBranch::MarkOnly {
        for c in &mut cuts {
            if *c == 0 {
                *c = 1;
            }
        }
    }
    let dim = choose_dim(ctx, cuts, ext);
    atoms.sort_by(|&a, &b| ctx.coords[a][dim].total_cmp(&ctx.coords[b][dim]).then(a.cmp(&b)));

    // each side must still hold enough atoms for its remaining levels
    let min_side = 1usize << (level - 1);
    let total: usize = atoms.iter().map(|&a| ctx.degree[a]).sum();
    let mut best = (usize::MAX, min_side);
    let mut left = 0usize;
    for (i, &a) in atoms.iter().enumerate() {
        left += ctx.degree[a];
        let p = i + 1;
        if p < min_side || atoms.len() - p < min_side {
            continue;
        }
        let diff = left.abs_diff(total - left);
        if diff < best.0 {
            best = (diff, p);
        }
    }
    let right = atoms.split_off(best.1);
    cuts[dim] += 1;
    let half = 1usize << (level - 1);
    cut_domain(ctx, atoms, level - 1, cuts, None, first_part);
    cut_domain(ctx, right, level - 1, cuts, None, first_part + half);
}
