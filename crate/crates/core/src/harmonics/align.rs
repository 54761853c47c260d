use super::wigner::{wigner_blocks, WignerBlock};
use crate::linalg::{self, Mat3, Vec3};
use crate::{Error, Result};

/// Direction every edge is rotated onto before the per-`m` linear maps.
pub const ALIGN_AXIS: Vec3 = [0.0, 1.0, 0.0];

/// Rotation `A` with `A·d̂ = +y` for a nonzero direction `d`.
///
/// `A = R_x(−θ)·R_y(−φ)` where `φ` is the azimuth of `d̂` in the z-x plane
/// and `θ` its polar angle from +y. Directions on the y axis use `φ = 0`,
/// so `−y` maps through a half turn about x.
pub fn align_matrix(dir: &Vec3) -> Mat3 {
    let n = linalg::norm(dir);
    let [x, y, z] = linalg::scale(dir, 1.0 / n);
    let rho = x.hypot(z);
    let (cp, sp) = if rho == 0.0 { (1.0, 0.0) } else { (z / rho, x / rho) };
    let (ct, st) = (y, rho);
    let ry: Mat3 = [[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]];
    let rx: Mat3 = [[1.0, 0.0, 0.0], [0.0, ct, st], [0.0, -st, ct]];
    linalg::matmul(&rx, &ry)
}

/// Per-edge Wigner blocks for the alignment rotation and its inverse.
#[derive(Debug, Clone)]
pub struct EdgeRotation {
    pub matrix: Mat3,
    pub forward: Vec<WignerBlock>,
    pub inverse: Vec<WignerBlock>,
}

impl EdgeRotation {
    pub fn l_max(&self) -> usize {
        self.forward.len() - 1
    }

    /// Rotate a flattened `(l, m)` vector (length `(l_max+1)²`) into the
    /// edge frame.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        apply_blocks(&self.forward, x)
    }

    pub fn apply_inverse(&self, x: &[f64]) -> Vec<f64> {
        apply_blocks(&self.inverse, x)
    }
}

fn apply_blocks(blocks: &[WignerBlock], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for b in blocks {
        let off = b.l * b.l;
        out.extend(b.apply(&x[off..off + b.dim()]));
    }
    out
}

/// Alignment rotation for a unit edge direction `r̂`.
pub fn align_rotation(r_hat: &Vec3, l_max: usize) -> Result<EdgeRotation> {
    let n = linalg::norm(r_hat);
    if !n.is_finite() || n == 0.0 {
        return Err(Error::Invalid("edge direction is zero".into()));
    }
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::Invalid(format!("edge direction not unit (|r| = {n})")));
    }
    let matrix = align_matrix(r_hat);
    let forward = wigner_blocks(l_max, &matrix);
    let inverse = forward.iter().map(WignerBlock::transpose).collect();
    Ok(EdgeRotation {
        matrix,
        forward,
        inverse,
    })
}
