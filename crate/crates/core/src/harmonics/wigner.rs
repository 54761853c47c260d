use crate::linalg::{self, Mat3};
use crate::{Error, Result};

/// Real Wigner-D matrix of one degree, row-major `(2l+1) × (2l+1)`,
/// indexed by `(m + l, m' + l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerBlock {
    pub l: usize,
    pub matrix: Vec<f64>,
}

impl WignerBlock {
    pub fn dim(&self) -> usize {
        2 * self.l + 1
    }

    #[inline]
    pub fn get(&self, m: i64, mp: i64) -> f64 {
        let l = self.l as i64;
        self.matrix[((m + l) * (2 * l + 1) + mp + l) as usize]
    }

    pub fn identity(l: usize) -> Self {
        let n = 2 * l + 1;
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        WignerBlock { l, matrix }
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                matrix[j * n + i] = self.matrix[i * n + j];
            }
        }
        WignerBlock { l: self.l, matrix }
    }

    /// `y = D · x` for a vector of length `2l + 1`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.matrix[i * n + j] * x[j]).sum())
            .collect()
    }

    pub fn matmul(&self, other: &WignerBlock) -> WignerBlock {
        assert_eq!(self.l, other.l);
        let n = self.dim();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.matrix[i * n + k];
                for j in 0..n {
                    matrix[i * n + j] += a * other.matrix[k * n + j];
                }
            }
        }
        WignerBlock { l: self.l, matrix }
    }
}

/// Wigner-D matrix of degree `l` for a proper rotation `r`, such that
/// `Y^l(r·v) = D^l(r)·Y^l(v)`.
pub fn wigner_d(l: usize, r: &Mat3) -> Result<WignerBlock> {
    let (defect, det) = linalg::orthogonality_defect(r);
    if defect > 1e-8 || (det - 1.0).abs() > 1e-8 {
        return Err(Error::Invalid(format!(
            "not a proper rotation (|RRᵀ − I| = {defect:e}, det = {det})"
        )));
    }
    Ok(wigner_blocks(l, r).pop().expect("at least degree 0"))
}

/// Wigner-D blocks for every degree `0..=l_max`, built by the
/// Ivanic-Ruedenberg recursion from the 3×3 rotation. No validity check.
pub fn wigner_blocks(l_max: usize, r: &Mat3) -> Vec<WignerBlock> {
    let mut blocks = Vec::with_capacity(l_max + 1);
    blocks.push(WignerBlock {
        l: 0,
        matrix: vec![1.0],
    });
    if l_max == 0 {
        return blocks;
    }
    // the degree-1 harmonics are (x, y, z) in that order
    blocks.push(WignerBlock {
        l: 1,
        matrix: r.iter().flatten().copied().collect(),
    });
    for l in 2..=l_max {
        let next = band(l, &blocks[1], &blocks[l - 1]);
        blocks.push(next);
    }
    blocks
}

fn band(l: usize, r1: &WignerBlock, prev: &WignerBlock) -> WignerBlock {
    let li = l as i64;
    let n = 2 * l + 1;
    let mut matrix = vec![0.0; n * n];

    // P(i, a, b) of the recursion, i ∈ {−1, 0, 1}
    let p = |i: i64, a: i64, b: i64| -> f64 {
        if b == li {
            r1.get(i, 1) * prev.get(a, li - 1) - r1.get(i, -1) * prev.get(a, -li + 1)
        } else if b == -li {
            r1.get(i, 1) * prev.get(a, -li + 1) + r1.get(i, -1) * prev.get(a, li - 1)
        } else {
            r1.get(i, 0) * prev.get(a, b)
        }
    };

    for m in -li..=li {
        for mp in -li..=li {
            let d = if m == 0 { 1.0 } else { 0.0 };
            let denom = if mp.abs() == li {
                (2 * li * (2 * li - 1)) as f64
            } else {
                ((li + mp) * (li - mp)) as f64
            };
            let am = m.abs();
            let u = (((li + m) * (li - m)) as f64 / denom).sqrt();
            let v = 0.5 * ((1.0 + d) * ((li + am - 1) * (li + am)) as f64 / denom).sqrt() * (1.0 - 2.0 * d);
            let w = -0.5 * (((li - am - 1) * (li - am)) as f64 / denom).max(0.0).sqrt() * (1.0 - d);

            let mut value = 0.0;
            if u != 0.0 {
                value += u * p(0, m, mp);
            }
            if v != 0.0 {
                let vv = if m == 0 {
                    p(1, 1, mp) + p(-1, -1, mp)
                } else if m > 0 {
                    let k: f64 = if m == 1 { 1.0 } else { 0.0 };
                    p(1, m - 1, mp) * (1.0 + k).sqrt() - p(-1, -m + 1, mp) * (1.0 - k)
                } else {
                    let k: f64 = if m == -1 { 1.0 } else { 0.0 };
                    p(1, m + 1, mp) * (1.0 - k) + p(-1, -m - 1, mp) * (1.0 + k).sqrt()
                };
                value += v * vv;
            }
            if w != 0.0 {
                let ww = if m > 0 {
                    p(1, m + 1, mp) + p(-1, -m - 1, mp)
                } else {
                    p(1, m - 1, mp) - p(-1, -m + 1, mp)
                };
                value += w * ww;
            }
            matrix[((m + li) as usize) * n + (mp + li) as usize] = value;
        }
    }
    WignerBlock { l, matrix }
}
