//! Periodic atomic structures, radius graphs and tiling.

mod basis;
pub mod elements;
mod extxyz;
mod graph;

pub use basis::BasisSpec;
pub use extxyz::{load_structure, parse_extxyz, write_extxyz, write_extxyz_string};
pub use graph::{build_graph, node_degrees, AtomGraph, Edge};

use crate::linalg::{self, Mat3, Vec3};
use crate::{Error, Result};

/// Smallest |det(cell)| (Å³) accepted when any dimension is periodic.
pub const MIN_CELL_VOLUME: f64 = 1e-10;

/// Atoms with positions (Å), atomic numbers and a cell whose rows are lattice
/// vectors. Periodic coordinates are kept canonically wrapped into `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicStructure {
    positions: Vec<Vec3>,
    species: Vec<u32>,
    cell: Mat3,
    pbc: [bool; 3],
}

impl AtomicStructure {
    pub fn new(positions: Vec<Vec3>, species: Vec<u32>, cell: Mat3, pbc: [bool; 3]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Structure("structure has no atoms".into()));
        }
        if positions.len() != species.len() {
            return Err(Error::Structure(format!(
                "{} positions but {} species",
                positions.len(),
                species.len()
            )));
        }
        if positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Structure("non-finite coordinate".into()));
        }
        if pbc.iter().any(|&p| p) && linalg::det(&cell).abs() <= MIN_CELL_VOLUME {
            return Err(Error::Structure(format!(
                "singular cell (|det| = {:e}) with periodic boundaries",
                linalg::det(&cell).abs()
            )));
        }
        let mut s = AtomicStructure {
            positions,
            species,
            cell,
            pbc,
        };
        s.wrap();
        Ok(s)
    }

    /// Structure without periodic boundaries in any direction.
    pub fn molecule(positions: Vec<Vec3>, species: Vec<u32>) -> Result<Self> {
        Self::new(positions, species, [[0.0; 3]; 3], [false; 3])
    }

    fn wrap(&mut self) {
        if !self.is_periodic() {
            return;
        }
        let inv = linalg::inverse(&self.cell).expect("checked non-singular");
        for r in &mut self.positions {
            let mut f = linalg::vec_mat(r, &inv);
            let mut changed = false;
            for d in 0..3 {
                if self.pbc[d] {
                    let w = wrap_unit(f[d]);
                    if w != f[d] {
                        f[d] = w;
                        changed = true;
                    }
                }
            }
            if changed {
                *r = linalg::vec_mat(&f, &self.cell);
            }
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn species(&self) -> &[u32] {
        &self.species
    }

    pub fn cell(&self) -> &Mat3 {
        &self.cell
    }

    pub fn pbc(&self) -> [bool; 3] {
        self.pbc
    }

    pub fn is_periodic(&self) -> bool {
        self.pbc.iter().any(|&p| p)
    }

    /// Fractional coordinates of every atom (`r = f · cell`). Only meaningful
    /// when the cell is non-singular.
    pub fn fractional(&self) -> Option<Vec<Vec3>> {
        let inv = linalg::inverse(&self.cell)?;
        Some(self.positions.iter().map(|r| linalg::vec_mat(r, &inv)).collect())
    }

    /// Width of the cell perpendicular to the plane spanned by the other two
    /// lattice vectors, per lattice direction.
    pub fn perpendicular_widths(&self) -> Option<Vec3> {
        let vol = linalg::det(&self.cell).abs();
        if vol <= MIN_CELL_VOLUME {
            return None;
        }
        let c = &self.cell;
        Some([
            vol / linalg::norm(&linalg::cross(&c[1], &c[2])),
            vol / linalg::norm(&linalg::cross(&c[2], &c[0])),
            vol / linalg::norm(&linalg::cross(&c[0], &c[1])),
        ])
    }

    /// Rigid rotation of positions and cell by the orthogonal matrix `r`.
    pub fn rotated(&self, r: &Mat3) -> Self {
        let positions = self.positions.iter().map(|p| linalg::mat_vec(r, p)).collect();
        let mut cell = self.cell;
        for row in &mut cell {
            *row = linalg::mat_vec(r, row);
        }
        let mut s = AtomicStructure {
            positions,
            species: self.species.clone(),
            cell,
            pbc: self.pbc,
        };
        s.wrap();
        s
    }

    /// Rigid translation, re-wrapped into the cell.
    pub fn translated(&self, t: &Vec3) -> Self {
        let mut s = self.clone();
        for p in &mut s.positions {
            *p = linalg::add(p, t);
        }
        s.wrap();
        s
    }

    /// Relabel atoms: atom `k` of the result is atom `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_atoms());
        AtomicStructure {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            species: perm.iter().map(|&i| self.species[i]).collect(),
            cell: self.cell,
            pbc: self.pbc,
        }
    }

    /// Replace one atom's position (re-wrapped).
    pub fn with_position(&self, atom: usize, position: Vec3) -> Self {
        let mut s = self.clone();
        s.positions[atom] = position;
        s.wrap();
        s
    }
}

/// Wrap a fractional coordinate into `[0, 1)`.
fn wrap_unit(f: f64) -> f64 {
    let w = f - f.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Repeat the structure `nx × ny × nz` times along its lattice vectors.
///
/// Replica order is `(ix, iy, iz, original index)`; cell rows are scaled by
/// the repeat counts. Every tiled direction must be periodic.
pub fn tile(s: &AtomicStructure, nx: usize, ny: usize, nz: usize) -> Result<AtomicStructure> {
    let reps = [nx, ny, nz];
    if reps.contains(&0) {
        return Err(Error::Invalid("tiling counts must be >= 1".into()));
    }
    for d in 0..3 {
        if reps[d] > 1 && !s.pbc[d] {
            return Err(Error::Structure(format!(
                "cannot tile non-periodic lattice direction {d}"
            )));
        }
    }
    if reps == [1, 1, 1] {
        return Ok(s.clone());
    }
    let n = s.n_atoms() * nx * ny * nz;
    let mut positions = Vec::with_capacity(n);
    let mut species = Vec::with_capacity(n);
    let c = &s.cell;
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let shift = [
                    ix as f64 * c[0][0] + iy as f64 * c[1][0] + iz as f64 * c[2][0],
                    ix as f64 * c[0][1] + iy as f64 * c[1][1] + iz as f64 * c[2][1],
                    ix as f64 * c[0][2] + iy as f64 * c[1][2] + iz as f64 * c[2][2],
                ];
                for (p, &z) in s.positions.iter().zip(&s.species) {
                    positions.push(linalg::add(p, &shift));
                    species.push(z);
                }
            }
        }
    }
    let mut cell = s.cell;
    for d in 0..3 {
        cell[d] = linalg::scale(&cell[d], reps[d] as f64);
    }
    AtomicStructure::new(positions, species, cell, s.pbc)
}
