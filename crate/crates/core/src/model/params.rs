use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::harmonics::{cg_transform, n_harmonics};
use crate::structures::BasisSpec;
use crate::{Error, Real, Result};

/// Hyper-parameters of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub l_max: usize,
    /// Channels per `(l, m)` component (`E`).
    pub width: usize,
    /// Message-passing layers (`M`), each a node block then an edge block.
    pub layers: usize,
    pub n_gaussians: usize,
    pub r_cut: f64,
    pub seed: u64,
    /// Gated nonlinearity inside the SO(2) blocks; off gives a linear model.
    pub gates: bool,
    pub basis: BasisSpec,
}

impl ModelConfig {
    pub fn new(basis: BasisSpec, r_cut: f64) -> Self {
        ModelConfig {
            l_max: 4,
            width: 16,
            layers: 2,
            n_gaussians: 32,
            r_cut,
            seed: 0,
            gates: true,
            basis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_max > 6 {
            return Err(Error::Invalid(format!("l_max = {} exceeds 6", self.l_max)));
        }
        if self.width == 0 {
            return Err(Error::Invalid("width must be at least 1".into()));
        }
        if self.n_gaussians < 2 {
            return Err(Error::Invalid("need at least 2 Gaussians".into()));
        }
        if !(self.r_cut > 0.0 && self.r_cut.is_finite()) {
            return Err(Error::Invalid(format!("r_cut = {} must be positive", self.r_cut)));
        }
        if self.basis.species().next().is_none() {
            return Err(Error::Invalid("basis has no species".into()));
        }
        Ok(())
    }

    pub fn n_harmonics(&self) -> usize {
        n_harmonics(self.l_max)
    }
}

/// One output coefficient group: the coupled block `L` of one shell pair,
/// written at `offset` of the block's coupled vector. `slot` is the head
/// row, or `None` when `L > l_max` (predicted as zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadEntry {
    pub slot: Option<usize>,
    pub l: usize,
    pub offset: usize,
}

/// Maps every `(on-site?, Z_src, Z_dst)` block type to its head entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLayout {
    pub n_slots: usize,
    plans: BTreeMap<(bool, u32, u32), Vec<HeadEntry>>,
}

impl HeadLayout {
    pub fn new(basis: &BasisSpec, l_max: usize) -> Result<Self> {
        let species: Vec<u32> = basis.species().collect();
        let mut plans = BTreeMap::new();
        let mut n_slots = 0;
        for onsite in [true, false] {
            for &zs in &species {
                for &zd in &species {
                    if onsite && zs != zd {
                        continue;
                    }
                    let mut entries = Vec::new();
                    let mut seg = 0;
                    for &la in basis.shells(zs)? {
                        for &lb in basis.shells(zd)? {
                            let t = cg_transform(la, lb);
                            for &(l, off) in &t.blocks {
                                let slot = (l <= l_max).then(|| {
                                    n_slots += 1;
                                    n_slots - 1
                                });
                                entries.push(HeadEntry { slot, l, offset: seg + off });
                            }
                            seg += t.dim();
                        }
                    }
                    plans.insert((onsite, zs, zd), entries);
                }
            }
        }
        Ok(HeadLayout { n_slots, plans })
    }

    pub fn entries(&self, onsite: bool, zs: u32, zd: u32) -> Result<&[HeadEntry]> {
        self.plans
            .get(&(onsite, zs, zd))
            .map(Vec::as_slice)
            .ok_or(Error::UnknownSpecies(if self.plans.keys().any(|k| k.1 == zs) { zd } else { zs }))
    }
}

/// Per-`m` linear map of the SO(2) block, acting on the degrees
/// `l = m..=l_max` times `c_in` channels. For `m > 0` the `(+m, −m)` pair is
/// mixed as a complex multiplication by `a + i·b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MLinear<T> {
    pub m: usize,
    pub n_deg: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// `(n_deg·c_out) × (n_deg·c_in)`, row index `(l − m)·c_out + c`.
    pub a: Array2<T>,
    pub b: Option<Array2<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct So2Weights<T> {
    pub lin1: Vec<MLinear<T>>,
    pub lin2: Vec<MLinear<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub node: So2Weights<T>,
    /// Attention projection applied to the `l = 0` channels.
    pub attention: Array1<T>,
    pub edge: So2Weights<T>,
}

/// All learnable weights plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub species: Vec<u32>,
    /// `n_species × E`, rows follow `species`.
    pub embedding: Array2<T>,
    /// `E × N_G` lift of the Gaussian distance features.
    pub radial: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    /// `n_slots × E`.
    pub heads: Array2<T>,
    pub layout: HeadLayout,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::of(rng.random_range(-bound..=bound)))
}

fn m_linear<T: Real>(rng: &mut ChaCha8Rng, l_max: usize, m: usize, c_in: usize, c_out: usize) -> MLinear<T> {
    let n_deg = l_max - m + 1;
    let fan_in = (n_deg * c_in) as f64 * if m == 0 { 1.0 } else { 2.0 };
    let bound = (3.0 / fan_in).sqrt();
    let a = uniform(rng, n_deg * c_out, n_deg * c_in, bound);
    let b = (m > 0).then(|| uniform(rng, n_deg * c_out, n_deg * c_in, bound));
    MLinear { m, n_deg, c_in, c_out, a, b }
}

fn so2_weights<T: Real>(rng: &mut ChaCha8Rng, l_max: usize, e: usize) -> So2Weights<T> {
    So2Weights {
        lin1: (0..=l_max).map(|m| m_linear(rng, l_max, m, 3 * e, 2 * e)).collect(),
        lin2: (0..=l_max).map(|m| m_linear(rng, l_max, m, 2 * e, e)).collect(),
    }
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialisation; identical on every rank for the same config.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let e = config.width;
        let species: Vec<u32> = config.basis.species().collect();
        let mut embedding = Array2::zeros((species.len(), e));
        for (row, &z) in species.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (u64::from(z)).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            for f in 0..e {
                embedding[[row, f]] = T::of(rng.random_range(-1.0..=1.0));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let radial = uniform(&mut rng, e, config.n_gaussians, (3.0 / config.n_gaussians as f64).sqrt());
        let layers = (0..config.layers)
            .map(|_| {
                let node = so2_weights(&mut rng, config.l_max, e);
                let attention = Array1::from_shape_fn(e, |_| T::of(rng.random_range(-1.0..=1.0) / (e as f64).sqrt()));
                let edge = so2_weights(&mut rng, config.l_max, e);
                LayerParams { node, attention, edge }
            })
            .collect();
        let layout = HeadLayout::new(&config.basis, config.l_max)?;
        let heads = uniform(&mut rng, layout.n_slots, e, (3.0 / e as f64).sqrt());
        Ok(ModelParams {
            config: config.clone(),
            species,
            embedding,
            radial,
            layers,
            heads,
            layout,
        })
    }

    pub fn species_index(&self, z: u32) -> Result<usize> {
        self.species.binary_search(&z).map_err(|_| Error::UnknownSpecies(z))
    }

    /// Every array with its name and shape, in a fixed order.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, &[T])> {
        fn push2<T>(name: String, a: &Array2<T>) -> (String, Vec<usize>, &[T]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        out.push(push2("embedding".into(), &self.embedding));
        out.push(push2("radial".into(), &self.radial));
        for (t, layer) in self.layers.iter().enumerate() {
            for (block, w) in [("node", &layer.node), ("edge", &layer.edge)] {
                for (lin, list) in [("lin1", &w.lin1), ("lin2", &w.lin2)] {
                    for ml in list {
                        out.push(push2(format!("layer{t}.{block}.{lin}.m{}.a", ml.m), &ml.a));
                        if let Some(b) = &ml.b {
                            out.push(push2(format!("layer{t}.{block}.{lin}.m{}.b", ml.m), b));
                        }
                    }
                }
                if block == "node" {
                    out.push((
                        format!("layer{t}.attention"),
                        vec![layer.attention.len()],
                        layer.attention.as_slice().expect("standard layout"),
                    ));
                }
            }
        }
        out.push(push2("heads".into(), &self.heads));
        out
    }

    /// Mutable views in the same order as [`named_arrays`](Self::named_arrays).
    pub fn arrays_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.embedding.as_slice_mut().expect("standard layout"));
        out.push(self.radial.as_slice_mut().expect("standard layout"));
        fn push_so2<'a, T>(out: &mut Vec<&'a mut [T]>, w: &'a mut So2Weights<T>) {
            for list in [&mut w.lin1, &mut w.lin2] {
                for ml in list.iter_mut() {
                    out.push(ml.a.as_slice_mut().expect("standard layout"));
                    if let Some(b) = &mut ml.b {
                        out.push(b.as_slice_mut().expect("standard layout"));
                    }
                }
            }
        }
        for layer in &mut self.layers {
            let LayerParams { node, attention, edge } = layer;
            push_so2(&mut out, node);
            out.push(attention.as_slice_mut().expect("standard layout"));
            push_so2(&mut out, edge);
        }
        out.push(self.heads.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_arrays().iter().map(|a| a.2.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.named_arrays().into_iter().flat_map(|a| a.2.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut off = 0;
        for a in self.arrays_mut() {
            a.copy_from_slice(&flat[off..off + a.len()]);
            off += a.len();
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for a in z.arrays_mut() {
            a.fill(T::zero());
        }
        z
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::init(&self.config).expect("config already validated");
        let flat: Vec<U> = self.to_flat().into_iter().map(|v| U::of(v.f64())).collect();
        out.set_flat(&flat).expect("same layout");
        out
    }

    /// Stable 64-bit digest of all values; equal across ranks iff the
    /// parameters are bitwise equal.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, _, data) in self.named_arrays() {
            h.update(name.as_bytes());
            buf.clear();
            for &v in data {
                v.put_le(&mut buf);
            }
            h.update(&buf);
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
    }
}
