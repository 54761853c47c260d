//! Rotation mathematics for the equivariant model.
//!
//! Real spherical harmonics in this crate use **+y as the polar axis**: the
//! degree-`l` harmonic `Y_lm(v)` equals the textbook (z-polar, orthonormal,
//! no Condon-Shortley phase) real harmonic evaluated at `(v.z, v.x, v.y)`.
//! With this choice the `l = 1` components are proportional to `(x, y, z)`,
//! so `D¹(R) = R`, and rotations about +y only mix the `(m, −m)` pairs. All
//! Wigner-D matrices are active: `Y(R·v) = D(R)·Y(v)`.
//!
//! Flattened index of `(l, m)` is `h = l² + l + m`.

mod align;
mod cg;
mod sph;
mod wigner;

pub use align::{align_matrix, align_rotation, EdgeRotation, ALIGN_AXIS};
pub use cg::{cg_transform, CgTransform, MAX_CG_DEGREE};
pub use sph::real_sph_harm;
pub use wigner::{wigner_blocks, wigner_d, WignerBlock};

/// Number of `(l, m)` components for degrees `0..=l_max`.
#[inline]
pub const fn n_harmonics(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Flattened index of `(l, m)`.
#[inline]
pub const fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}
