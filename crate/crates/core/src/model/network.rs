use std::collections::BTreeMap;

use ndarray::{s, Array2, Array3};

use super::blocks::{BasisMode, Block, BlockKey, BlockMatrix};
use super::params::{LayerParams, ModelParams};
use super::so2::{so2_backward, so2_forward, So2Cache};
use super::tensor::{create_messages, Frames, SphericalTensor};
use crate::harmonics::n_harmonics;
use crate::linalg::Vec3;
use crate::structures::AtomGraph;
use crate::{Error, Real, Result};

/// An edge owned by this scope; `dst` is always an owned node.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEdge {
    pub src: usize,
    pub dst: usize,
    pub displacement: Vec3,
    pub distance: f64,
    pub key: BlockKey,
}

/// The part of a graph one rank computes on: owned nodes first, then
/// remote nodes whose embeddings arrive by halo exchange, and the edges
/// whose destination is owned, grouped by destination.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub n_owned: usize,
    pub species: Vec<u32>,
    /// Local index → global node id.
    pub global: Vec<usize>,
    pub edges: Vec<LocalEdge>,
    incoming: Vec<usize>,
}

impl LocalGraph {
    pub fn new(n_owned: usize, species: Vec<u32>, global: Vec<usize>, edges: Vec<LocalEdge>) -> Result<Self> {
        let n_local = species.len();
        if global.len() != n_local || n_owned > n_local {
            return Err(Error::Shape(format!(
                "{n_owned} owned of {n_local} local nodes with {} global ids",
                global.len()
            )));
        }
        let mut incoming = vec![0usize; n_owned + 1];
        let mut last = 0;
        for e in &edges {
            if e.dst >= n_owned || e.src >= n_local {
                return Err(Error::Invalid(format!("local edge {}→{} out of range", e.src, e.dst)));
            }
            if e.dst < last {
                return Err(Error::Invalid("local edges must be grouped by destination".into()));
            }
            last = e.dst;
            incoming[e.dst + 1] += 1;
        }
        for i in 0..n_owned {
            incoming[i + 1] += incoming[i];
        }
        Ok(LocalGraph { n_owned, species, global, edges, incoming })
    }

    /// Whole graph on one rank.
    pub fn serial(g: &AtomGraph) -> Self {
        let edges = g
            .edges()
            .iter()
            .map(|e| LocalEdge {
                src: e.src,
                dst: e.dst,
                displacement: e.displacement,
                distance: e.distance,
                key: BlockKey { i: e.src, j: e.dst, image: e.image },
            })
            .collect();
        let n = g.n_nodes();
        LocalGraph::new(n, g.species().to_vec(), (0..n).collect(), edges).expect("canonical graph")
    }

    pub fn n_local(&self) -> usize {
        self.species.len()
    }

    pub fn n_remote(&self) -> usize {
        self.n_local() - self.n_owned
    }

    pub fn incoming_range(&self, node: usize) -> std::ops::Range<usize> {
        self.incoming[node]..self.incoming[node + 1]
    }
}

/// Stage markers emitted by the forward pass so that a runtime can time
/// compute and check that no communication happens while aggregating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ComputeBegin,
    AggregateBegin,
    AggregateEnd,
    ComputeEnd,
}

/// Moves node embeddings between ranks. `exchange` fills the remote rows of
/// the node table from their owners; `reverse` sends the gradient held in
/// remote rows back to the owners, adds it there and zeroes the remote rows.
pub trait Halo<T: Real> {
    fn exchange(&mut self, step: usize, table: &mut Array3<T>) -> Result<()>;
    fn reverse(&mut self, step: usize, grads: &mut Array3<T>) -> Result<()>;
    fn marker(&mut self, _step: usize, _phase: Phase) {}
}

/// Single-rank halo: nothing is remote.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHalo;

impl<T: Real> Halo<T> for NoHalo {
    fn exchange(&mut self, _: usize, _: &mut Array3<T>) -> Result<()> {
        Ok(())
    }
    fn reverse(&mut self, _: usize, _: &mut Array3<T>) -> Result<()> {
        Ok(())
    }
}

/// Gaussian distance features: `N_G` centres evenly spaced on `[0, r_cut]`,
/// width equal to the spacing.
pub fn gaussian_features(distance: f64, r_cut: f64, n: usize) -> Vec<f64> {
    let step = r_cut / (n - 1) as f64;
    (0..n)
        .map(|g| {
            let t = (distance - g as f64 * step) / step;
            (-0.5 * t * t).exp()
        })
        .collect()
}

/// Everything about a [`LocalGraph`] that does not depend on the weights.
#[derive(Debug, Clone)]
pub struct ModelInput<T> {
    pub graph: LocalGraph,
    pub frames: Frames<T>,
    /// `k × N_G`.
    pub gaussians: Array2<T>,
    species_index: Vec<usize>,
    pairs: Vec<(usize, usize)>,
}

impl<T: Real> ModelInput<T> {
    pub fn new(graph: LocalGraph, params: &ModelParams<T>) -> Result<Self> {
        let c = &params.config;
        let species_index = graph
            .species
            .iter()
            .map(|&z| params.species_index(z))
            .collect::<Result<Vec<_>>>()?;
        let disp: Vec<Vec3> = graph.edges.iter().map(|e| e.displacement).collect();
        let frames = Frames::from_displacements(c.l_max, &disp)?;
        let mut gaussians = Array2::zeros((graph.edges.len(), c.n_gaussians));
        for (k, e) in graph.edges.iter().enumerate() {
            for (g, v) in gaussian_features(e.distance, c.r_cut, c.n_gaussians).into_iter().enumerate() {
                gaussians[[k, g]] = T::of(v);
            }
        }
        let pairs = graph.edges.iter().map(|e| (e.src, e.dst)).collect();
        Ok(ModelInput { graph, frames, gaussians, species_index, pairs })
    }

    pub fn serial(g: &AtomGraph, params: &ModelParams<T>) -> Result<Self> {
        Self::new(LocalGraph::serial(g), params)
    }
}

struct NodeTape<T> {
    cache: So2Cache<T>,
    messages: Array3<T>,
    alpha: Vec<T>,
}

struct LayerTape<T> {
    node: NodeTape<T>,
    edge: So2Cache<T>,
}

/// Values recorded by a forward pass for the reverse pass.
pub struct Tape<T> {
    layers: Vec<LayerTape<T>>,
    nodes: Array3<T>,
    edges: Array3<T>,
}

/// Initial node and edge embeddings (all `l > 0` planes zero).
fn initial<T: Real>(params: &ModelParams<T>, input: &ModelInput<T>) -> (SphericalTensor<T>, SphericalTensor<T>) {
    let c = &params.config;
    let mut x = SphericalTensor::zeros(input.graph.n_local(), c.l_max, c.width);
    for (i, &si) in input.species_index.iter().enumerate() {
        x.data.slice_mut(s![i, 0, ..]).assign(&params.embedding.row(si));
    }
    let mut y = SphericalTensor::zeros(input.graph.edges.len(), c.l_max, c.width);
    if !input.graph.edges.is_empty() {
        let lifted = input.gaussians.dot(&params.radial.t());
        y.data.slice_mut(s![.., 0, ..]).assign(&lifted);
    }
    (x, y)
}

fn node_block<T: Real>(
    lp: &LayerParams<T>,
    gates: bool,
    input: &ModelInput<T>,
    x: &mut SphericalTensor<T>,
    y: &SphericalTensor<T>,
    halo: &mut dyn Halo<T>,
    step: usize,
) -> Result<NodeTape<T>> {
    let msgs = create_messages(x, y, &input.pairs)?;
    let (u, cache) = so2_forward(&lp.node, &msgs, &input.frames, gates)?;
    halo.marker(step, Phase::AggregateBegin);
    let e = x.width();
    let mut alpha = vec![T::zero(); u.shape()[0]];
    let logits: Vec<T> = (0..u.shape()[0])
        .map(|k| (0..e).map(|f| lp.attention[f] * u[[k, 0, f]]).sum())
        .collect();
    for j in 0..input.graph.n_owned {
        let r = input.graph.incoming_range(j);
        if r.is_empty() {
            continue;
        }
        let top = logits[r.clone()].iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for k in r.clone() {
            alpha[k] = (logits[k] - top).exp();
            total += alpha[k];
        }
        let mut acc = Array2::<T>::zeros((u.shape()[1], e));
        for k in r {
            alpha[k] = alpha[k] / total;
            acc.scaled_add(alpha[k], &u.slice(s![k, .., ..]));
        }
        let mut row = x.data.slice_mut(s![j, .., ..]);
        row += &acc;
    }
    halo.marker(step, Phase::AggregateEnd);
    Ok(NodeTape { cache, messages: u, alpha })
}

fn edge_block<T: Real>(
    lp: &LayerParams<T>,
    gates: bool,
    input: &ModelInput<T>,
    x: &SphericalTensor<T>,
    y: &mut SphericalTensor<T>,
) -> Result<So2Cache<T>> {
    let msgs = create_messages(x, y, &input.pairs)?;
    let (v, cache) = so2_forward(&lp.edge, &msgs, &input.frames, gates)?;
    y.data += &v;
    Ok(cache)
}

fn scatter_message_grads<T: Real>(g_msgs: &ndarray::Array4<T>, pairs: &[(usize, usize)], gx: &mut Array3<T>, gy: &mut Array3<T>) {
    for (k, &(src, dst)) in pairs.iter().enumerate() {
        let mut row = gx.slice_mut(s![src, .., ..]);
        row += &g_msgs.slice(s![k, 0, .., ..]);
        let mut row = gx.slice_mut(s![dst, .., ..]);
        row += &g_msgs.slice(s![k, 1, .., ..]);
        let mut row = gy.slice_mut(s![k, .., ..]);
        row += &g_msgs.slice(s![k, 2, .., ..]);
    }
}

/// Coupled prediction of every owned node and edge block, in that order.
pub type Outputs = Vec<(BlockKey, Vec<f64>)>;

fn heads<T: Real>(params: &ModelParams<T>, input: &ModelInput<T>, x: &Array3<T>, y: &Array3<T>) -> Result<Outputs> {
    let basis = &params.config.basis;
    let g = &input.graph;
    let mut out = Vec::with_capacity(g.n_owned + g.edges.len());
    let mut emit = |key: BlockKey, onsite: bool, zs: u32, zd: u32, emb: ndarray::ArrayView2<T>| -> Result<()> {
        let n = basis.n_orb(zs)? * basis.n_orb(zd)?;
        let mut v = vec![0.0; n];
        for entry in params.layout.entries(onsite, zs, zd)? {
            let Some(slot) = entry.slot else { continue };
            let w = params.heads.row(slot);
            for mm in 0..2 * entry.l + 1 {
                let h = entry.l * entry.l + mm;
                v[entry.offset + mm] = emb.row(h).dot(&w).f64();
            }
        }
        out.push((key, v));
        Ok(())
    };
    for i in 0..g.n_owned {
        let z = g.species[i];
        emit(BlockKey::onsite(g.global[i]), true, z, z, x.slice(s![i, .., ..]))?;
    }
    for (k, e) in g.edges.iter().enumerate() {
        emit(e.key, false, g.species[e.src], g.species[e.dst], y.slice(s![k, .., ..]))?;
    }
    Ok(out)
}

/// Forward pass over one scope. With `record`, also returns the tape for
/// [`run_backward`].
pub fn run_forward<T: Real>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
    halo: &mut dyn Halo<T>,
    record: bool,
) -> Result<(Outputs, Option<Tape<T>>)> {
    let gates = params.config.gates;
    let (mut x, mut y) = initial(params, input);
    let mut layers = Vec::new();
    for (t, lp) in params.layers.iter().enumerate() {
        halo.exchange(2 * t, &mut x.data)?;
        halo.marker(2 * t, Phase::ComputeBegin);
        let node = node_block(lp, gates, input, &mut x, &y, halo, 2 * t)?;
        halo.marker(2 * t, Phase::ComputeEnd);
        halo.exchange(2 * t + 1, &mut x.data)?;
        halo.marker(2 * t + 1, Phase::ComputeBegin);
        let edge = edge_block(lp, gates, input, &x, &mut y)?;
        halo.marker(2 * t + 1, Phase::ComputeEnd);
        if record {
            layers.push(LayerTape { node, edge });
        }
    }
    let out = heads(params, input, &x.data, &y.data)?;
    let tape = record.then(|| Tape { layers, nodes: x.data, edges: y.data });
    Ok((out, tape))
}

/// Reverse pass: parameter gradients of `Σ seed · prediction` summed over
/// this scope's outputs. Blocks missing from `seed` contribute nothing.
pub fn run_backward<T: Real>(
    params: &ModelParams<T>,
    input: &ModelInput<T>,
    tape: &Tape<T>,
    seed: &BTreeMap<BlockKey, Vec<f64>>,
    halo: &mut dyn Halo<T>,
) -> Result<ModelParams<T>> {
    if tape.layers.len() != params.layers.len() {
        return Err(Error::Invalid("tape was recorded for a different model".into()));
    }
    let c = &params.config;
    let g = &input.graph;
    let gates = c.gates;
    let mut grad = params.zeros_like();
    let mut gx = Array3::<T>::zeros(tape.nodes.dim());
    let mut gy = Array3::<T>::zeros(tape.edges.dim());
    let basis = &c.basis;

    let mut head_back = |key: &BlockKey, onsite: bool, zs: u32, zd: u32, emb: ndarray::ArrayView2<T>, mut gemb: ndarray::ArrayViewMut2<T>| -> Result<()> {
        let Some(sv) = seed.get(key) else { return Ok(()) };
        if sv.len() != basis.n_orb(zs)? * basis.n_orb(zd)? {
            return Err(Error::Shape(format!("seed for {key:?} has {} values", sv.len())));
        }
        for entry in params.layout.entries(onsite, zs, zd)? {
            let Some(slot) = entry.slot else { continue };
            for mm in 0..2 * entry.l + 1 {
                let s = T::of(sv[entry.offset + mm]);
                if s == T::zero() {
                    continue;
                }
                let h = entry.l * entry.l + mm;
                grad.heads.row_mut(slot).scaled_add(s, &emb.row(h));
                gemb.row_mut(h).scaled_add(s, &params.heads.row(slot));
            }
        }
        Ok(())
    };
    for i in 0..g.n_owned {
        let z = g.species[i];
        head_back(
            &BlockKey::onsite(g.global[i]),
            true,
            z,
            z,
            tape.nodes.slice(s![i, .., ..]),
            gx.slice_mut(s![i, .., ..]),
        )?;
    }
    for (k, e) in g.edges.iter().enumerate() {
        head_back(
            &e.key,
            false,
            g.species[e.src],
            g.species[e.dst],
            tape.edges.slice(s![k, .., ..]),
            gy.slice_mut(s![k, .., ..]),
        )?;
    }

    for (t, lp) in params.layers.iter().enumerate().rev() {
        let lt = &tape.layers[t];
        let lg = &mut grad.layers[t];

        let g_msgs = so2_backward(&lp.edge, &lt.edge, &input.frames, &gy.clone(), gates, &mut lg.edge);
        scatter_message_grads(&g_msgs, &input.pairs, &mut gx, &mut gy);
        halo.reverse(2 * t + 1, &mut gx)?;

        let u = &lt.node.messages;
        let alpha = &lt.node.alpha;
        let mut g_u = Array3::<T>::zeros(u.dim());
        for j in 0..g.n_owned {
            let r = g.incoming_range(j);
            if r.is_empty() {
                continue;
            }
            let g_agg = gx.slice(s![j, .., ..]);
            let g_alpha: Vec<T> = r.clone().map(|k| (&u.slice(s![k, .., ..]) * &g_agg).sum()).collect();
            let mean: T = r.clone().zip(&g_alpha).map(|(k, &ga)| alpha[k] * ga).sum();
            for (k, &ga) in r.zip(&g_alpha) {
                g_u.slice_mut(s![k, .., ..]).scaled_add(alpha[k], &g_agg);
                let gs = alpha[k] * (ga - mean);
                g_u.slice_mut(s![k, 0, ..]).scaled_add(gs, &lp.attention);
                lg.attention.scaled_add(gs, &u.slice(s![k, 0, ..]));
            }
        }
        let g_msgs = so2_backward(&lp.node, &lt.node.cache, &input.frames, &g_u, gates, &mut lg.node);
        scatter_message_grads(&g_msgs, &input.pairs, &mut gx, &mut gy);
        halo.reverse(2 * t, &mut gx)?;
    }

    for i in 0..g.n_owned {
        let si = input.species_index[i];
        grad.embedding.row_mut(si).scaled_add(T::one(), &gx.slice(s![i, 0, ..]));
    }
    if !g.edges.is_empty() {
        let gy0 = gy.slice(s![.., 0, ..]);
        ndarray::linalg::general_mat_mul(T::one(), &gy0.t(), &input.gaussians, T::one(), &mut grad.radial);
    }
    Ok(grad)
}

fn to_block_matrix<T: Real>(params: &ModelParams<T>, species: &[u32], out: Outputs) -> Result<BlockMatrix> {
    let basis = &params.config.basis;
    let mut m = BlockMatrix::new(basis.clone(), BasisMode::Coupled, species.to_vec());
    for (key, data) in out {
        let (rows, cols) = m.block_shape(&key)?;
        m.insert(key, Block { rows, cols, data })?;
    }
    Ok(m)
}

/// Serial forward pass: coupled-basis blocks for every node and edge.
pub fn forward<T: Real>(g: &AtomGraph, params: &ModelParams<T>) -> Result<BlockMatrix> {
    let input = ModelInput::serial(g, params)?;
    let (out, _) = run_forward(params, &input, &mut NoHalo, false)?;
    to_block_matrix(params, g.species(), out)
}

/// Wrap per-scope outputs (possibly gathered from several ranks) into one
/// block matrix over the full structure.
pub fn outputs_to_matrix<T: Real>(params: &ModelParams<T>, species: &[u32], out: Outputs) -> Result<BlockMatrix> {
    to_block_matrix(params, species, out)
}

/// Initial node and edge embeddings of a whole graph.
pub fn init_embeddings<T: Real>(
    g: &AtomGraph,
    params: &ModelParams<T>,
) -> Result<(SphericalTensor<T>, SphericalTensor<T>)> {
    let input = ModelInput::serial(g, params)?;
    Ok(initial(params, &input))
}

fn check_layer<T: Real>(params: &ModelParams<T>, layer: usize, x: &SphericalTensor<T>, y: &SphericalTensor<T>, g: &AtomGraph) -> Result<()> {
    if layer >= params.layers.len() {
        return Err(Error::Invalid(format!("layer {layer} of {}", params.layers.len())));
    }
    let h = n_harmonics(params.config.l_max);
    if x.len() != g.n_nodes() || y.len() != g.n_edges() || x.data.shape()[1] != h {
        return Err(Error::Shape("tensors do not match the graph".into()));
    }
    Ok(())
}

/// One node-update block on a whole graph.
pub fn node_update<T: Real>(
    nodes: &SphericalTensor<T>,
    edges: &SphericalTensor<T>,
    g: &AtomGraph,
    params: &ModelParams<T>,
    layer: usize,
) -> Result<SphericalTensor<T>> {
    check_layer(params, layer, nodes, edges, g)?;
    let input = ModelInput::serial(g, params)?;
    let mut x = nodes.clone();
    node_block(&params.layers[layer], params.config.gates, &input, &mut x, edges, &mut NoHalo, 0)?;
    Ok(x)
}

/// One edge-update block on a whole graph.
pub fn edge_update<T: Real>(
    nodes: &SphericalTensor<T>,
    edges: &SphericalTensor<T>,
    g: &AtomGraph,
    params: &ModelParams<T>,
    layer: usize,
) -> Result<SphericalTensor<T>> {
    check_layer(params, layer, nodes, edges, g)?;
    let input = ModelInput::serial(g, params)?;
    let mut y = edges.clone();
    edge_block(&params.layers[layer], params.config.gates, &input, nodes, &mut y)?;
    Ok(y)
}
