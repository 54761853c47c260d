use std::cmp::Ordering;

use super::AtomicStructure;
use crate::linalg::{self, Mat3, Vec3, IDENTITY};
use crate::{Error, Result};

/// Directed edge `src → dst`. `displacement = r_dst + image·cell − r_src`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub displacement: Vec3,
    pub distance: f64,
    /// Lattice translation (in cell vectors) applied to `dst`.
    pub image: [i32; 3],
}

impl Edge {
    fn canonical_cmp(&self, other: &Edge) -> Ordering {
        self.dst
            .cmp(&other.dst)
            .then(self.src.cmp(&other.src))
            .then_with(|| {
                (0..3)
                    .map(|d| self.displacement[d].total_cmp(&other.displacement[d]))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
    }
}

/// Radius graph with edges in canonical `(dst, src, displacement)` order, so
/// the incoming edges of every node form one contiguous range.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomGraph {
    n_nodes: usize,
    species: Vec<u32>,
    edges: Vec<Edge>,
    r_cut: f64,
    /// `incoming[j]..incoming[j + 1]` indexes the edges with `dst == j`.
    incoming: Vec<usize>,
}

impl AtomGraph {
    /// Build a graph from an explicit edge list. Edges are put in canonical
    /// order; distances must agree with the displacement vectors.
    pub fn from_edges(species: Vec<u32>, mut edges: Vec<Edge>, r_cut: f64) -> Result<Self> {
        let n_nodes = species.len();
        for e in &edges {
            if e.src >= n_nodes || e.dst >= n_nodes {
                return Err(Error::Invalid(format!(
                    "edge {}→{} out of range for {n_nodes} nodes",
                    e.src, e.dst
                )));
            }
            let len = linalg::norm(&e.displacement);
            if !(e.distance > 0.0) || (len - e.distance).abs() > 1e-9 * e.distance.max(1.0) {
                return Err(Error::Invalid(format!(
                    "edge {}→{} has distance {} but |displacement| = {len}",
                    e.src, e.dst, e.distance
                )));
            }
        }
        edges.sort_by(Edge::canonical_cmp);
        let mut incoming = vec![0usize; n_nodes + 1];
        for e in &edges {
            incoming[e.dst + 1] += 1;
        }
        for j in 0..n_nodes {
            incoming[j + 1] += incoming[j];
        }
        Ok(AtomGraph {
            n_nodes,
            species,
            edges,
            r_cut,
            incoming,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn species(&self) -> &[u32] {
        &self.species
    }

    pub fn r_cut(&self) -> f64 {
        self.r_cut
    }

    /// Index range of the edges whose destination is `node`.
    pub fn incoming_range(&self, node: usize) -> std::ops::Range<usize> {
        self.incoming[node]..self.incoming[node + 1]
    }
}

/// Per-node in-degree `N_D`.
pub fn node_degrees(g: &AtomGraph) -> Vec<usize> {
    (0..g.n_nodes()).map(|j| g.incoming_range(j).len()).collect()
}

struct Frame {
    cell: Mat3,
    frac: Vec<Vec3>,
    widths: Vec3,
    pbc: [bool; 3],
}

impl Frame {
    fn new(s: &AtomicStructure) -> Frame {
        if s.is_periodic() {
            Frame {
                cell: *s.cell(),
                frac: s.fractional().expect("periodic cell is non-singular"),
                widths: s.perpendicular_widths().expect("periodic cell is non-singular"),
                pbc: s.pbc(),
            }
        } else {
            // plain Cartesian binning
            Frame {
                cell: IDENTITY,
                frac: s.positions().to_vec(),
                widths: [1.0; 3],
                pbc: [false; 3],
            }
        }
    }
}

struct Bins {
    n: [i64; 3],
    reach: [i64; 3],
    cells: Vec<Vec<usize>>,
    atom_bin: Vec<[i64; 3]>,
}

impl Bins {
    fn new(frame: &Frame, r_cut: f64) -> Bins {
        let n_atoms = frame.frac.len();
        let mut origin = [0.0; 3];
        let mut extent = [1.0; 3];
        let mut n = [1i64; 3];
        for d in 0..3 {
            if !frame.pbc[d] {
                let lo = frame.frac.iter().map(|f| f[d]).fold(f64::INFINITY, f64::min);
                let hi = frame.frac.iter().map(|f| f[d]).fold(f64::NEG_INFINITY, f64::max);
                origin[d] = lo;
                extent[d] = (hi - lo).max(0.0);
            }
            let physical = extent[d] * frame.widths[d];
            n[d] = ((physical / r_cut).floor() as i64).max(1);
        }
        // keep the bin count proportional to the atom count
        let limit = (8 * n_atoms as i64).max(64);
        while n[0] * n[1] * n[2] > limit {
            let d = (0..3).max_by_key(|&d| n[d]).unwrap();
            n[d] = (n[d] / 2).max(1);
        }
        let mut size = [0.0; 3];
        let mut reach = [0i64; 3];
        for d in 0..3 {
            size[d] = extent[d] / n[d] as f64;
            let physical = size[d] * frame.widths[d];
            reach[d] = if physical > 0.0 {
                (r_cut / physical).ceil() as i64
            } else {
                0
            };
            if !frame.pbc[d] {
                reach[d] = reach[d].min(n[d] - 1);
            }
        }
        let mut cells = vec![Vec::new(); (n[0] * n[1] * n[2]) as usize];
        let mut atom_bin = Vec::with_capacity(n_atoms);
        for (i, f) in frame.frac.iter().enumerate() {
            let mut b = [0i64; 3];
            for d in 0..3 {
                b[d] = if size[d] > 0.0 {
                    (((f[d] - origin[d]) / size[d]).floor() as i64).clamp(0, n[d] - 1)
                } else {
                    0
                };
            }
            cells[((b[0] * n[1] + b[1]) * n[2] + b[2]) as usize].push(i);
            atom_bin.push(b);
        }
        Bins {
            n,
            reach,
            cells,
            atom_bin,
        }
    }
}

/// All directed pairs (periodic images included) with `0 < distance ≤ r_cut`.
pub fn build_graph(s: &AtomicStructure, r_cut: f64) -> Result<AtomGraph> {
    if !(r_cut > 0.0) || !r_cut.is_finite() {
        return Err(Error::Invalid(format!("r_cut must be positive, got {r_cut}")));
    }
    let frame = Frame::new(s);
    let bins = Bins::new(&frame, r_cut);
    let pos = s.positions();
    let r2 = r_cut * r_cut;
    let mut edges = Vec::new();

    for i in 0..s.n_atoms() {
        let bi = bins.atom_bin[i];
        for ox in -bins.reach[0]..=bins.reach[0] {
            for oy in -bins.reach[1]..=bins.reach[1] {
                for oz in -bins.reach[2]..=bins.reach[2] {
                    let off = [ox, oy, oz];
                    let mut cell_idx = [0i64; 3];
                    let mut image = [0i32; 3];
                    let mut inside = true;
                    for d in 0..3 {
                        let v = bi[d] + off[d];
                        if frame.pbc[d] {
                            cell_idx[d] = v.rem_euclid(bins.n[d]);
                            image[d] = v.div_euclid(bins.n[d]) as i32;
                        } else if (0..bins.n[d]).contains(&v) {
                            cell_idx[d] = v;
                        } else {
                            inside = false;
                        }
                    }
                    if !inside {
                        continue;
                    }
                    let shift = linalg::vec_mat(
                        &[image[0] as f64, image[1] as f64, image[2] as f64],
                        &frame.cell,
                    );
                    let flat = ((cell_idx[0] * bins.n[1] + cell_idx[1]) * bins.n[2] + cell_idx[2]) as usize;
                    for &j in &bins.cells[flat] {
                        if j == i && image == [0, 0, 0] {
                            continue;
                        }
                        let disp = linalg::sub(&linalg::add(&pos[j], &shift), &pos[i]);
                        let d2 = linalg::dot(&disp, &disp);
                        if d2 <= r2 && d2 > 0.0 {
                            edges.push(Edge {
                                src: i,
                                dst: j,
                                displacement: disp,
                                distance: d2.sqrt(),
                                image,
                            });
                        }
                    }
                }
            }
        }
    }
    AtomGraph::from_edges(s.species().to_vec(), edges, r_cut)
}
