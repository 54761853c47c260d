use std::fmt::Write as _;
use std::sync::OnceLock;

use crate::{Error, Result};

/// Largest degree with a cached coupling transform.
pub const MAX_CG_DEGREE: usize = 6;

/// Orthogonal change of basis from the uncoupled product `l_a ⊗ l_b`
/// (row-major `(m_a, m_b)` vectorisation of a real block) to the direct sum
/// of coupled degrees `L = |l_a − l_b| ..= l_a + l_b`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CgTransform {
    pub la: usize,
    pub lb: usize,
    /// Row-major `n × n`, rows are coupled components `(L, M)`.
    pub matrix: Vec<f64>,
    /// `(L, offset)` of every coupled block in the output vector.
    pub blocks: Vec<(usize, usize)>,
}

impl CgTransform {
    pub fn dim(&self) -> usize {
        (2 * self.la + 1) * (2 * self.lb + 1)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape(format!(
                "{}⊗{} transform needs {} values, got {len}",
                self.la,
                self.lb,
                self.dim()
            )));
        }
        Ok(())
    }

    /// Uncoupled `(2l_a+1) × (2l_b+1)` row-major block → coupled vector.
    pub fn to_coupled(&self, block: &[f64]) -> Result<Vec<f64>> {
        self.check(block.len())?;
        let n = self.dim();
        Ok((0..n)
            .map(|i| {
                let row = &self.matrix[i * n..(i + 1) * n];
                row.iter().zip(block).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    /// Coupled vector → uncoupled row-major block (the transpose map).
    pub fn to_uncoupled(&self, coupled: &[f64]) -> Result<Vec<f64>> {
        self.check(coupled.len())?;
        let n = self.dim();
        let mut out = vec![0.0; n];
        for (i, &c) in coupled.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &self.matrix[i * n..(i + 1) * n];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * c;
            }
        }
        Ok(out)
    }

    /// Plain-text dump: a header line then one `L M m_a m_b value` line per
    /// non-zero coefficient.
    pub fn to_text(&self) -> String {
        let n = self.dim();
        let nb = 2 * self.lb + 1;
        let mut out = format!("# cg la={} lb={} dim={}\n", self.la, self.lb, n);
        for &(big_l, off) in &self.blocks {
            for mm in 0..(2 * big_l + 1) {
                let row = off + mm;
                for col in 0..n {
                    let v = self.matrix[row * n + col];
                    if v.abs() > 1e-15 {
                        let ma = (col / nb) as i64 - self.la as i64;
                        let mb = (col % nb) as i64 - self.lb as i64;
                        let _ = writeln!(out, "{big_l} {} {ma} {mb} {v:.17e}", mm as i64 - big_l as i64);
                    }
                }
            }
        }
        out
    }
}

/// Cached coupling transform for `l_a, l_b ≤ MAX_CG_DEGREE`; larger degrees
/// are computed on demand.
pub fn cg_transform(la: usize, lb: usize) -> &'static CgTransform {
    static TABLE: OnceLock<Vec<OnceLock<&'static CgTransform>>> = OnceLock::new();
    let n = MAX_CG_DEGREE + 1;
    if la >= n || lb >= n {
        return Box::leak(Box::new(build(la, lb)));
    }
    let table = TABLE.get_or_init(|| (0..n * n).map(|_| OnceLock::new()).collect());
    table[la * n + lb].get_or_init(|| Box::leak(Box::new(build(la, lb))))
}

fn factorial(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Complex Clebsch-Gordan ⟨l1 m1; l2 m2 | L M⟩ by the Racah formula.
fn clebsch_gordan(l1: i64, m1: i64, l2: i64, m2: i64, big_l: i64, big_m: i64) -> f64 {
    if m1 + m2 != big_m || m1.abs() > l1 || m2.abs() > l2 || big_m.abs() > big_l {
        return 0.0;
    }
    if big_l < (l1 - l2).abs() || big_l > l1 + l2 {
        return 0.0;
    }
    let pre = ((2 * big_l + 1) as f64 * factorial(big_l + l1 - l2) * factorial(big_l - l1 + l2)
        * factorial(l1 + l2 - big_l)
        / factorial(l1 + l2 + big_l + 1))
    .sqrt();
    let norm = (factorial(big_l + big_m)
        * factorial(big_l - big_m)
        * factorial(l1 - m1)
        * factorial(l1 + m1)
        * factorial(l2 - m2)
        * factorial(l2 + m2))
    .sqrt();
    let mut sum = 0.0;
    for k in 0..=(l1 + l2 + big_l) {
        let den = [
            k,
            l1 + l2 - big_l - k,
            l1 - m1 - k,
            l2 + m2 - k,
            big_l - l2 + m1 + k,
            big_l - l1 - m2 + k,
        ];
        if den.iter().any(|&d| d < 0) {
            continue;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / den.iter().map(|&d| factorial(d)).product::<f64>();
    }
    pre * norm * sum
}

/// Complex → real change of basis: real `Y_m = Σ_μ U[m][μ] Y^μ`, stored as
/// `(re, im)` pairs row-major.
fn real_basis(l: i64) -> Vec<(f64, f64)> {
    let n = (2 * l + 1) as usize;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = vec![(0.0, 0.0); n * n];
    let idx = |m: i64, mu: i64| ((m + l) as usize) * n + (mu + l) as usize;
    for m in -l..=l {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        if m > 0 {
            u[idx(m, m)] = (sign * h, 0.0);
            u[idx(m, -m)] = (h, 0.0);
        } else if m == 0 {
            u[idx(0, 0)] = (1.0, 0.0);
        } else {
            u[idx(m, m)] = (0.0, h);
            u[idx(m, -m)] = (0.0, -sign * h);
        }
    }
    u
}

fn build(la: usize, lb: usize) -> CgTransform {
    let (a, b) = (la as i64, lb as i64);
    let na = (2 * a + 1) as usize;
    let nb = (2 * b + 1) as usize;
    let n = na * nb;
    let ua = real_basis(a);
    let ub = real_basis(b);
    let mut matrix = vec![0.0; n * n];
    let mut blocks = Vec::new();
    let mut row = 0usize;
    for big_l in (a - b).abs()..=(a + b) {
        let nl = (2 * big_l + 1) as usize;
        let ul = real_basis(big_l);
        blocks.push((big_l as usize, row));
        // Q[(L,M),(ma,mb)] = Σ U_L[M][μ] C conj(U_a[ma][μa]) conj(U_b[mb][μb])
        let mut re = vec![0.0; nl * n];
        let mut im = vec![0.0; nl * n];
        for bm in -big_l..=big_l {
            for ma in -a..=a {
                for mb in -b..=b {
                    let (mut sr, mut si) = (0.0, 0.0);
                    for mua in -a..=a {
                        let (ar, ai) = ua[((ma + a) as usize) * na + (mua + a) as usize];
                        if ar == 0.0 && ai == 0.0 {
                            continue;
                        }
                        for mub in -b..=b {
                            let (br, bi) = ub[((mb + b) as usize) * nb + (mub + b) as usize];
                            if br == 0.0 && bi == 0.0 {
                                continue;
                            }
                            let mu = mua + mub;
                            if mu.abs() > big_l {
                                continue;
                            }
                            let c = clebsch_gordan(a, mua, b, mub, big_l, mu);
                            if c == 0.0 {
                                continue;
                            }
                            let (lr, li) = ul[((bm + big_l) as usize) * nl + (mu + big_l) as usize];
                            // U_L · conj(U_a) · conj(U_b)
                            let (xr, xi) = cmul((lr, li), (ar, -ai));
                            let (yr, yi) = cmul((xr, xi), (br, -bi));
                            sr += c * yr;
                            si += c * yi;
                        }
                    }
                    let col = ((ma + a) as usize) * nb + (mb + b) as usize;
                    re[((bm + big_l) as usize) * n + col] = sr;
                    im[((bm + big_l) as usize) * n + col] = si;
                }
            }
        }
        // each coupled block is either purely real or purely imaginary
        let mr = re.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mi = im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let chosen = if mr >= mi { re } else { im };
        matrix[row * n..(row + nl) * n].copy_from_slice(&chosen);
        row += nl;
    }
    debug_assert_eq!(row, n);
    CgTransform {
        la,
        lb,
        matrix,
        blocks,
    }
}

#[inline]
fn cmul(x: (f64, f64), y: (f64, f64)) -> (f64, f64) {
    (x.0 * y.0 - x.1 * y.1, x.0 * y.1 + x.1 * y.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::wigner_blocks;
    use crate::linalg::axis_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn known_complex_coefficients() {
        // ⟨1 1; 1 −1 | 0 0⟩ = 1/√3, ⟨1/2-free⟩ integer checks
        assert!((clebsch_gordan(1, 1, 1, -1, 0, 0) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((clebsch_gordan(1, 0, 1, 0, 0, 0) + 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((clebsch_gordan(1, 1, 1, 1, 2, 2) - 1.0).abs() < 1e-15);
        assert!((clebsch_gordan(2, 0, 1, 0, 1, 0) + (2.0f64 / 5.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn zero_zero_is_identity() {
        let t = cg_transform(0, 0);
        assert_eq!(t.matrix, vec![1.0]);
        assert_eq!(t.blocks, vec![(0, 0)]);
    }

    #[test]
    fn one_one_block_layout() {
        let t = cg_transform(1, 1);
        assert_eq!(t.dim(), 9);
        assert_eq!(t.blocks, vec![(0, 0), (1, 1), (2, 4)]);
        // δ_{mm'} lands only in L = 0 with magnitude √3
        let mut id = vec![0.0; 9];
        for m in 0..3 {
            id[m * 3 + m] = 1.0;
        }
        let c = t.to_coupled(&id).unwrap();
        assert!((c[0].abs() - 3f64.sqrt()).abs() < 1e-14);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn orthogonal_round_trip_and_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for la in 0..=4 {
            for lb in 0..=4 {
                let t = cg_transform(la, lb);
                let n = t.dim();
                for i in 0..n {
                    for j in 0..n {
                        let dot: f64 = (0..n).map(|k| t.matrix[i * n + k] * t.matrix[j * n + k]).sum();
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - e).abs() < 1e-12, "{la}⊗{lb} ({i},{j}) {dot}");
                    }
                }
                let block: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let back = t.to_uncoupled(&t.to_coupled(&block).unwrap()).unwrap();
                for (a, b) in back.iter().zip(&block) {
                    assert!((a - b).abs() < 1e-12);
                }

                let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.3];
                let r = axis_angle(&axis, rng.random_range(0.0..6.28));
                let d = wigner_blocks(la.max(lb) + la + lb, &r);
                let (na, nb) = (2 * la + 1, 2 * lb + 1);
                // D_a · B · D_bᵀ
                let mut rotated = vec![0.0; n];
                for i in 0..na {
                    for j in 0..nb {
                        let mut s = 0.0;
                        for p in 0..na {
                            for q in 0..nb {
                                s += d[la].matrix[i * na + p] * block[p * nb + q] * d[lb].matrix[j * nb + q];
                            }
                        }
                        rotated[i * nb + j] = s;
                    }
                }
                let lhs = t.to_coupled(&rotated).unwrap();
                let c = t.to_coupled(&block).unwrap();
                for &(big_l, off) in &t.blocks {
                    let k = 2 * big_l + 1;
                    let rhs = d[big_l].apply(&c[off..off + k]);
                    for (a, b) in lhs[off..off + k].iter().zip(&rhs) {
                        assert!((a - b).abs() < 1e-10, "{la}⊗{lb} L={big_l}");
                    }
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let t = cg_transform(2, 3);
        assert!(t.to_coupled(&[0.0; 34]).is_err());
        assert!(t.to_uncoupled(&[0.0; 36]).is_err());
        assert_eq!(t.to_coupled(&[0.0; 35]).unwrap(), vec![0.0; 35]);
    }

    #[test]
    fn text_dump_lists_coefficients() {
        let txt = cg_transform(1, 0).to_text();
        assert!(txt.starts_with("# cg la=1 lb=0 dim=3"));
        assert_eq!(txt.lines().count(), 4);
    }
}
