use ndarray::{s, Array3, Array4};

use crate::harmonics::{align_rotation, n_harmonics, EdgeRotation};
use crate::linalg::Vec3;
use crate::{Error, Real, Result};

/// A stack of `(l_max+1)² × E` embeddings, one per node or edge. The middle
/// axis flattens `(l, m)` as `h = l² + l + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalTensor<T> {
    pub l_max: usize,
    pub data: Array3<T>,
}

impl<T: Real> SphericalTensor<T> {
    pub fn zeros(n: usize, l_max: usize, width: usize) -> Self {
        SphericalTensor {
            l_max,
            data: Array3::zeros((n, n_harmonics(l_max), width)),
        }
    }

    pub fn from_array(l_max: usize, data: Array3<T>) -> Result<Self> {
        if data.shape()[1] != n_harmonics(l_max) {
            return Err(Error::Shape(format!(
                "harmonic axis has {} entries, l_max = {l_max} needs {}",
                data.shape()[1],
                n_harmonics(l_max)
            )));
        }
        Ok(SphericalTensor { l_max, data })
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Apply one Wigner-D set (degrees `0..=l_max`) to every item.
    pub fn rotated(&self, d: &[crate::harmonics::WignerBlock]) -> Self {
        let mut out = self.clone();
        let (h, e) = (self.data.shape()[1], self.width());
        let flat: Vec<T> = d.iter().flat_map(|b| b.matrix.iter().map(|&v| T::of(v))).collect();
        for i in 0..self.len() {
            let src = self.data.slice(s![i, .., ..]).to_owned();
            let mut dst = out.data.slice_mut(s![i, .., ..]);
            let dst = dst.as_slice_mut().expect("standard layout");
            rotate(&flat, self.l_max, src.as_slice().unwrap(), e, dst, e, e, false);
            debug_assert_eq!(dst.len(), h * e);
        }
        out
    }
}

/// Per-edge message `(source node, target node, edge)` embeddings, shape
/// `k × 3 × (l_max+1)² × E`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageBatch<T> {
    pub l_max: usize,
    pub data: Array4<T>,
}

impl<T: Real> MessageBatch<T> {
    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }
}

/// Gather `(n_src, n_dst, e_k)` for every `(src, dst)` pair (edge `k` is the
/// pair's position).
pub fn create_messages<T: Real>(
    nodes: &SphericalTensor<T>,
    edges: &SphericalTensor<T>,
    pairs: &[(usize, usize)],
) -> Result<MessageBatch<T>> {
    if edges.len() != pairs.len() {
        return Err(Error::Shape(format!("{} edge tensors for {} edges", edges.len(), pairs.len())));
    }
    if nodes.l_max != edges.l_max || nodes.width() != edges.width() {
        return Err(Error::Shape("node and edge tensors disagree in l_max or width".into()));
    }
    let n = nodes.len();
    if let Some(&(s, d)) = pairs.iter().find(|&&(s, d)| s >= n || d >= n) {
        return Err(Error::Invalid(format!("edge {s}→{d} references a node outside 0..{n}")));
    }
    let (h, e) = (nodes.data.shape()[1], nodes.width());
    let mut data = Array4::zeros((pairs.len(), 3, h, e));
    for (k, &(src, dst)) in pairs.iter().enumerate() {
        data.slice_mut(s![k, 0, .., ..]).assign(&nodes.data.slice(s![src, .., ..]));
        data.slice_mut(s![k, 1, .., ..]).assign(&nodes.data.slice(s![dst, .., ..]));
        data.slice_mut(s![k, 2, .., ..]).assign(&edges.data.slice(s![k, .., ..]));
    }
    Ok(MessageBatch { l_max: nodes.l_max, data })
}

/// Alignment rotations of a list of edges, stored as concatenated Wigner
/// blocks in model precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames<T> {
    pub l_max: usize,
    per_edge: usize,
    data: Vec<T>,
}

impl<T: Real> Frames<T> {
    pub fn from_rotations(l_max: usize, rots: &[EdgeRotation]) -> Result<Self> {
        let per_edge = (0..=l_max).map(|l| (2 * l + 1) * (2 * l + 1)).sum();
        let mut data = Vec::with_capacity(per_edge * rots.len());
        for r in rots {
            if r.l_max() < l_max {
                return Err(Error::Shape(format!("rotation has l_max {} < {l_max}", r.l_max())));
            }
            for b in &r.forward[..=l_max] {
                data.extend(b.matrix.iter().map(|&v| T::of(v)));
            }
        }
        Ok(Frames { l_max, per_edge, data })
    }

    /// Frames for edge displacement vectors (need not be normalised).
    pub fn from_displacements(l_max: usize, disp: &[Vec3]) -> Result<Self> {
        let rots = disp
            .iter()
            .map(|d| {
                let n = crate::linalg::norm(d);
                align_rotation(&crate::linalg::scale(d, 1.0 / n), l_max)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rotations(l_max, &rots)
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.per_edge).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn edge(&self, k: usize) -> &[T] {
        &self.data[k * self.per_edge..(k + 1) * self.per_edge]
    }
}

/// `dst[h, c] (+)= Σ_h' D[h, h'] src[h', c]` blockwise over degrees, for
/// `c < width`; row strides given separately so that channel sub-ranges of
/// wider arrays can be addressed. With `transpose`, uses `Dᵀ`. Overwrites
/// `dst` rows.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rotate<T: Real>(
    blocks: &[T],
    l_max: usize,
    src: &[T],
    src_stride: usize,
    dst: &mut [T],
    dst_stride: usize,
    width: usize,
    transpose: bool,
) {
    let mut boff = 0;
    for l in 0..=l_max {
        let n = 2 * l + 1;
        let base = l * l;
        let d = &blocks[boff..boff + n * n];
        for i in 0..n {
            let out = &mut dst[(base + i) * dst_stride..(base + i) * dst_stride + width];
            out.fill(T::zero());
            for j in 0..n {
                let coef = if transpose { d[j * n + i] } else { d[i * n + j] };
                if coef == T::zero() {
                    continue;
                }
                let inp = &src[(base + j) * src_stride..(base + j) * src_stride + width];
                for (o, &v) in out.iter_mut().zip(inp) {
                    *o += coef * v;
                }
            }
        }
        boff += n * n;
    }
}
