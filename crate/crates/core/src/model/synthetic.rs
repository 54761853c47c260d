//! Synthetic training data: a jittered two-species lattice and a
//! tight-binding-like Hamiltonian with exponentially decaying s/p hoppings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{BasisMode, Block, BlockKey, BlockMatrix};
use crate::structures::{AtomGraph, AtomicStructure, BasisSpec};
use crate::{Error, Result};

/// Species with an s and a p shell.
pub const HEAVY: u32 = 14;
/// Species with a single s shell.
pub const LIGHT: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub cells: [usize; 3],
    pub spacing: f64,
    /// Uniform random displacement amplitude per coordinate (Å).
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { cells: [5, 5, 2], spacing: 2.0, jitter: 0.15, seed: 0 }
    }
}

pub fn synthetic_basis() -> BasisSpec {
    BasisSpec::new().with(HEAVY, &[0, 1]).with(LIGHT, &[0])
}

/// Periodic simple-cubic lattice, species alternating like a rock-salt
/// pattern, each site randomly displaced.
pub fn synthetic_structure(spec: &SyntheticSpec) -> Result<AtomicStructure> {
    if spec.cells.contains(&0) || spec.spacing <= 0.0 {
        return Err(Error::Invalid("synthetic lattice needs positive counts and spacing".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [nx, ny, nz] = spec.cells;
    let mut positions = Vec::new();
    let mut species = Vec::new();
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let mut p = [ix as f64, iy as f64, iz as f64].map(|v| v * spec.spacing);
                if spec.jitter > 0.0 {
                    for v in &mut p {
                        *v += rng.random_range(-spec.jitter..spec.jitter);
                    }
                }
                positions.push(p);
                species.push(if (ix + iy + iz) % 2 == 0 { HEAVY } else { LIGHT });
            }
        }
    }
    let s = spec.spacing;
    let cell = [[nx as f64 * s, 0.0, 0.0], [0.0, ny as f64 * s, 0.0], [0.0, 0.0, nz as f64 * s]];
    AtomicStructure::new(positions, species, cell, [true; 3])
}

struct Params {
    onsite_s: f64,
    onsite_p: f64,
}

fn onsite(z: u32) -> Result<Params> {
    match z {
        HEAVY => Ok(Params { onsite_s: -1.2, onsite_p: 0.4 }),
        LIGHT => Ok(Params { onsite_s: -0.6, onsite_p: 0.0 }),
        other => Err(Error::UnknownSpecies(other)),
    }
}

const V_SS: f64 = -0.9;
const V_SP: f64 = 0.7;
const V_PP_SIGMA: f64 = 0.8;
const V_PP_PI: f64 = -0.25;

/// Distance decay with a smooth cutoff at `r_cut`.
fn decay(r: f64, r0: f64, r_cut: f64) -> f64 {
    let envelope = 0.5 * ((std::f64::consts::PI * r / r_cut).cos() + 1.0);
    (-(r - r0) / 0.6).exp() * envelope
}

/// Uncoupled toy Hamiltonian with an on-site block per atom and a hopping
/// block per graph edge. `r0` is the reference bond length.
pub fn toy_hamiltonian(g: &AtomGraph, basis: &BasisSpec, r0: f64) -> Result<BlockMatrix> {
    let species = g.species().to_vec();
    let mut h = BlockMatrix::new(basis.clone(), BasisMode::Uncoupled, species.clone());
    for (i, &z) in species.iter().enumerate() {
        let p = onsite(z)?;
        let n = basis.n_orb(z)?;
        let mut b = Block::zeros(n, n);
        let offs = basis.shell_offsets(z)?;
        for (shell, &l) in basis.shells(z)?.iter().enumerate() {
            let e = if l == 0 { p.onsite_s } else { p.onsite_p };
            for o in 0..2 * l + 1 {
                let d = offs[shell] + o;
                b.data[d * n + d] = e;
            }
        }
        h.insert(BlockKey::onsite(i), b)?;
    }
    for e in g.edges() {
        let (zs, zd) = (species[e.src], species[e.dst]);
        let (rows, cols) = (basis.n_orb(zs)?, basis.n_orb(zd)?);
        let f = decay(e.distance, r0, g.r_cut());
        let u = e.displacement.map(|v| v / e.distance);
        let mut b = Block::zeros(rows, cols);
        let (os, od) = (basis.shell_offsets(zs)?, basis.shell_offsets(zd)?);
        for (a, &la) in basis.shells(zs)?.iter().enumerate() {
            for (c, &lc) in basis.shells(zd)?.iter().enumerate() {
                for i in 0..2 * la + 1 {
                    for j in 0..2 * lc + 1 {
                        let v = match (la, lc) {
                            (0, 0) => V_SS,
                            (0, 1) => V_SP * u[j],
                            (1, 0) => -V_SP * u[i],
                            (1, 1) => {
                                let d = if i == j { 1.0 } else { 0.0 };
                                V_PP_SIGMA * u[i] * u[j] + V_PP_PI * (d - u[i] * u[j])
                            }
                            _ => return Err(Error::Invalid("toy Hamiltonian supports s and p shells".into())),
                        };
                        b.data[(os[a] + i) * cols + od[c] + j] = v * f;
                    }
                }
            }
        }
        h.insert(BlockKey { i: e.src, j: e.dst, image: e.image }, b)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::build_graph;

    #[test]
    fn fifty_atoms_and_hermitian_pairs() {
        let s = synthetic_structure(&SyntheticSpec::default()).unwrap();
        assert_eq!(s.n_atoms(), 50);
        let g = build_graph(&s, 3.0).unwrap();
        let h = toy_hamiltonian(&g, &synthetic_basis(), 2.0).unwrap();
        assert_eq!(h.len(), 50 + g.n_edges());
        let sym = h.symmetrized().unwrap();
        let (d, _) = sym.max_abs_diff(&h);
        assert!(d < 1e-12, "H_ji != H_ijᵀ: {d}");
    }
}
