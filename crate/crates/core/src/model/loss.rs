use std::collections::BTreeMap;

use super::blocks::{BlockKey, BlockMatrix};
use crate::{Error, Result};

/// Partial sums of the L1 and L2 terms over the blocks present in both
/// prediction and target, plus the differences needed for the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub sum_abs: f64,
    pub sum_sq: f64,
    pub count: usize,
    diffs: BTreeMap<BlockKey, Vec<f64>>,
}

impl LossTerms {
    /// Differences `pred − target` over the shared keys, compared in the
    /// prediction's basis.
    pub fn new(pred: &BlockMatrix, target: &BlockMatrix) -> Result<Self> {
        let target = if target.mode == pred.mode {
            std::borrow::Cow::Borrowed(target)
        } else {
            std::borrow::Cow::Owned(match pred.mode {
                super::blocks::BasisMode::Coupled => target.to_coupled()?,
                super::blocks::BasisMode::Uncoupled => super::blocks::reconstruct_uncoupled(target)?,
            })
        };
        let mut terms = LossTerms { sum_abs: 0.0, sum_sq: 0.0, count: 0, diffs: BTreeMap::new() };
        for (key, p) in &pred.blocks {
            let Some(t) = target.blocks.get(key) else { continue };
            if p.data.len() != t.data.len() {
                return Err(Error::Shape(format!("block {key:?}: {} vs {} values", p.data.len(), t.data.len())));
            }
            let d: Vec<f64> = p.data.iter().zip(&t.data).map(|(a, b)| a - b).collect();
            for v in &d {
                terms.sum_abs += v.abs();
                terms.sum_sq += v * v;
            }
            terms.count += d.len();
            terms.diffs.insert(*key, d);
        }
        Ok(terms)
    }

    /// `d loss / d pred` for a loss normalised by `total` elements
    /// (the global count when the matched elements are spread over ranks).
    pub fn seed(&self, total: usize) -> BTreeMap<BlockKey, Vec<f64>> {
        let n = total as f64;
        self.diffs
            .iter()
            .map(|(k, d)| {
                let g = d.iter().map(|&v| (sign(v) + 2.0 * v) / n).collect();
                (*k, g)
            })
            .collect()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean |pred − target| + mean (pred − target)²` over matched elements.
pub fn loss_from_sums(sum_abs: f64, sum_sq: f64, count: usize) -> Result<f64> {
    if count == 0 {
        return Err(Error::Invalid("prediction and target share no blocks".into()));
    }
    Ok((sum_abs + sum_sq) / count as f64)
}

#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub count: usize,
    pub seed: BTreeMap<BlockKey, Vec<f64>>,
}

/// Combined L1 + L2 loss with unit weights and its gradient seed.
pub fn loss(pred: &BlockMatrix, target: &BlockMatrix) -> Result<LossValue> {
    let terms = LossTerms::new(pred, target)?;
    let value = loss_from_sums(terms.sum_abs, terms.sum_sq, terms.count)?;
    Ok(LossValue { value, count: terms.count, seed: terms.seed(terms.count) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::blocks::{BasisMode, Block};
    use crate::structures::BasisSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(vals: &[(usize, usize, Vec<f64>)]) -> BlockMatrix {
        let basis = BasisSpec::new().with(1, &[0]).with(8, &[1]);
        let mut m = BlockMatrix::new(basis, BasisMode::Coupled, vec![1, 8, 8]);
        for (i, j, v) in vals {
            let (r, c) = m.block_shape(&BlockKey { i: *i, j: *j, image: [0; 3] }).unwrap();
            m.insert(BlockKey { i: *i, j: *j, image: [0; 3] }, Block { rows: r, cols: c, data: v.clone() }).unwrap();
        }
        m
    }

    #[test]
    fn identical_is_zero_and_constant_offset_closed_form() {
        let a = matrix(&[(0, 0, vec![0.5]), (1, 2, vec![1.0; 9])]);
        assert_eq!(loss(&a, &a).unwrap().value, 0.0);
        let c = -0.3;
        let b = matrix(&[(0, 0, vec![0.5 + c]), (1, 2, vec![1.0 + c; 9])]);
        let l = loss(&b, &a).unwrap();
        assert!((l.value - (c.abs() + c * c)).abs() < 1e-15);
        assert_eq!(l.count, 10);
    }

    #[test]
    fn extra_predictions_are_masked_and_disjoint_rejected() {
        let pred = matrix(&[(0, 0, vec![1.0]), (1, 1, vec![2.0; 9])]);
        let target = matrix(&[(0, 0, vec![0.0])]);
        assert_eq!(loss(&pred, &target).unwrap().value, 2.0);
        let other = matrix(&[(2, 2, vec![0.0; 9])]);
        assert!(loss(&pred, &other).is_err());
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let pred = matrix(&[(0, 0, r(1)), (1, 1, r(9)), (1, 2, r(9)), (0, 1, r(3))]);
        let target = matrix(&[(0, 0, r(1)), (1, 1, r(9)), (1, 2, r(9)), (0, 1, r(3))]);
        let mut a = 0.0;
        let mut q = 0.0;
        let mut n = 0;
        for (k, p) in &pred.blocks {
            let t = &target.blocks[k];
            for i in 0..p.data.len() {
                let d = p.data[i] - t.data[i];
                a += d.abs();
                q += d * d;
                n += 1;
            }
        }
        let want = a / n as f64 + q / n as f64;
        let got = loss(&pred, &target).unwrap();
        assert!((got.value - want).abs() < 1e-12);
        // seed is the derivative of the loss
        let key = BlockKey { i: 1, j: 2, image: [0; 3] };
        let mut bumped = pred.clone();
        bumped.blocks.get_mut(&key).unwrap().data[4] += 1e-7;
        let fd = (loss(&bumped, &target).unwrap().value - got.value) / 1e-7;
        assert!((fd - got.seed[&key][4]).abs() < 1e-6);
    }
}
