use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, Array4};

use super::params::{MLinear, So2Weights};
use super::tensor::{rotate, Frames, MessageBatch, SphericalTensor};
use crate::harmonics::{lm_index, n_harmonics};
use crate::{Error, Real, Result};

/// Intermediate values of one SO(2) block needed by the reverse pass.
#[derive(Debug, Clone)]
pub struct So2Cache<T> {
    /// Messages in the edge frame, `k × H × 3E`.
    pub rotated: Array3<T>,
    /// Hidden layer before the gate, `k × H × 2E`.
    pub pre_gate: Array3<T>,
    pub hidden: Array3<T>,
}

fn gather<T: Real>(x: &Array3<T>, l_max: usize, m: i64, c: usize) -> Array2<T> {
    let (k, h, stride) = x.dim();
    let am = m.unsigned_abs() as usize;
    let nd = l_max - am + 1;
    let mut out = Array2::zeros((k, nd * c));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for e in 0..k {
        for l in am..=l_max {
            let src = (e * h + lm_index(l, m)) * stride;
            let dst = e * nd * c + (l - am) * c;
            os[dst..dst + c].copy_from_slice(&xs[src..src + c]);
        }
    }
    out
}

fn scatter<T: Real>(y: &Array2<T>, l_max: usize, m: i64, c: usize, out: &mut Array3<T>) {
    let am = m.unsigned_abs() as usize;
    let nd = l_max - am + 1;
    let (k, h, stride) = out.dim();
    let ys = y.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for e in 0..k {
        for l in am..=l_max {
            let dst = (e * h + lm_index(l, m)) * stride;
            let src = e * nd * c + (l - am) * c;
            os[dst..dst + c].copy_from_slice(&ys[src..src + c]);
        }
    }
}

fn linear_forward<T: Real>(ml: &MLinear<T>, l_max: usize, x: &Array3<T>, out: &mut Array3<T>) {
    let m = ml.m as i64;
    let p = gather(x, l_max, m, ml.c_in);
    let yp = p.dot(&ml.a.t());
    match &ml.b {
        None => scatter(&yp, l_max, 0, ml.c_out, out),
        Some(b) => {
            let n = gather(x, l_max, -m, ml.c_in);
            let mut yp = yp;
            general_mat_mul(-T::one(), &n, &b.t(), T::one(), &mut yp);
            let mut yn = p.dot(&b.t());
            general_mat_mul(T::one(), &n, &ml.a.t(), T::one(), &mut yn);
            scatter(&yp, l_max, m, ml.c_out, out);
            scatter(&yn, l_max, -m, ml.c_out, out);
        }
    }
}

fn linear_backward<T: Real>(
    ml: &MLinear<T>,
    l_max: usize,
    x: &Array3<T>,
    g_out: &Array3<T>,
    g_in: &mut Array3<T>,
    grad: &mut MLinear<T>,
) {
    let m = ml.m as i64;
    let one = T::one();
    let p = gather(x, l_max, m, ml.c_in);
    let gp = gather(g_out, l_max, m, ml.c_out);
    general_mat_mul(one, &gp.t(), &p, one, &mut grad.a);
    let mut g_p = gp.dot(&ml.a);
    if let Some(b) = &ml.b {
        let n = gather(x, l_max, -m, ml.c_in);
        let gn = gather(g_out, l_max, -m, ml.c_out);
        general_mat_mul(one, &gn.t(), &n, one, &mut grad.a);
        let gb = grad.b.as_mut().expect("matching layout");
        general_mat_mul(one, &gn.t(), &p, one, gb);
        general_mat_mul(-one, &gp.t(), &n, one, gb);
        general_mat_mul(one, &gn, b, one, &mut g_p);
        let mut g_n = gn.dot(&ml.a);
        general_mat_mul(-one, &gp, b, one, &mut g_n);
        scatter(&g_n, l_max, -m, ml.c_in, g_in);
    }
    scatter(&g_p, l_max, m, ml.c_in, g_in);
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn gate_forward<T: Real>(pre: &Array3<T>) -> Array3<T> {
    let mut out = pre.clone();
    let (k, h, c) = pre.dim();
    let ps = pre.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for e in 0..k {
        let base = e * h * c;
        for ch in 0..c {
            let s0 = ps[base + ch];
            let sg = sigmoid(s0);
            os[base + ch] = s0 * sg;
            for hh in 1..h {
                os[base + hh * c + ch] = ps[base + hh * c + ch] * sg;
            }
        }
    }
    out
}

fn gate_backward<T: Real>(pre: &Array3<T>, g_out: &Array3<T>) -> Array3<T> {
    let mut g = Array3::zeros(pre.dim());
    let (k, h, c) = pre.dim();
    let one = T::one();
    let ps = pre.as_slice().expect("standard layout");
    let gs_out = g_out.as_slice().expect("standard layout");
    let gs_in = g.as_slice_mut().expect("standard layout");
    for e in 0..k {
        let base = e * h * c;
        for ch in 0..c {
            let s0 = ps[base + ch];
            let sg = sigmoid(s0);
            let mut gs = gs_out[base + ch] * sg * (one + s0 * (one - sg));
            let dsg = sg * (one - sg);
            for hh in 1..h {
                let i = base + hh * c + ch;
                gs += gs_out[i] * ps[i] * dsg;
                gs_in[i] = gs_out[i] * sg;
            }
            gs_in[base + ch] = gs;
        }
    }
    g
}

fn check<T: Real>(w: &So2Weights<T>, msgs: &MessageBatch<T>, frames: &Frames<T>) -> Result<()> {
    let l_max = msgs.l_max;
    if w.lin1.len() != l_max + 1 || w.lin2.len() != l_max + 1 {
        return Err(Error::Shape(format!("weights cover {} orders, l_max = {l_max}", w.lin1.len())));
    }
    if w.lin1[0].c_in != 3 * msgs.width() {
        return Err(Error::Shape(format!(
            "weights expect {} input channels, messages have 3×{}",
            w.lin1[0].c_in,
            msgs.width()
        )));
    }
    if frames.len() != msgs.len() || frames.l_max < l_max {
        return Err(Error::Shape(format!("{} frames for {} messages", frames.len(), msgs.len())));
    }
    Ok(())
}

/// Rotate each message into its edge frame, apply the per-`m` linear maps
/// `3E → 2E`, the gate, the per-`m` maps `2E → E`, and rotate back.
pub fn so2_forward<T: Real>(
    w: &So2Weights<T>,
    msgs: &MessageBatch<T>,
    frames: &Frames<T>,
    gates: bool,
) -> Result<(Array3<T>, So2Cache<T>)> {
    check(w, msgs, frames)?;
    let l_max = msgs.l_max;
    let (k, e) = (msgs.len(), msgs.width());
    let h = n_harmonics(l_max);
    let mut rotated = Array3::zeros((k, h, 3 * e));
    let data = msgs.data.as_slice().expect("standard layout");
    let rs = rotated.as_slice_mut().expect("standard layout");
    for edge in 0..k {
        let d = frames.edge(edge);
        for g in 0..3 {
            let src = &data[(edge * 3 + g) * h * e..(edge * 3 + g + 1) * h * e];
            let dst = &mut rs[edge * h * 3 * e + g * e..(edge + 1) * h * 3 * e];
            rotate(d, l_max, src, e, dst, 3 * e, e, false);
        }
    }
    let mut pre_gate = Array3::zeros((k, h, 2 * e));
    for ml in &w.lin1 {
        linear_forward(ml, l_max, &rotated, &mut pre_gate);
    }
    let hidden = if gates { gate_forward(&pre_gate) } else { pre_gate.clone() };
    let mut z = Array3::zeros((k, h, e));
    for ml in &w.lin2 {
        linear_forward(ml, l_max, &hidden, &mut z);
    }
    let mut out = Array3::zeros((k, h, e));
    let zs = z.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for edge in 0..k {
        let r = edge * h * e..(edge + 1) * h * e;
        rotate(frames.edge(edge), l_max, &zs[r.clone()], e, &mut os[r], e, e, true);
    }
    Ok((out, So2Cache { rotated, pre_gate, hidden }))
}

/// Reverse pass: accumulates weight gradients into `grad` and returns the
/// gradient with respect to the messages.
pub fn so2_backward<T: Real>(
    w: &So2Weights<T>,
    cache: &So2Cache<T>,
    frames: &Frames<T>,
    g_out: &Array3<T>,
    gates: bool,
    grad: &mut So2Weights<T>,
) -> Array4<T> {
    let (k, h, e) = g_out.dim();
    let l_max = frames.l_max.min(w.lin1.len() - 1);
    let mut g_z = Array3::zeros((k, h, e));
    let gs = g_out.as_slice().expect("standard layout");
    let zs = g_z.as_slice_mut().expect("standard layout");
    for edge in 0..k {
        let r = edge * h * e..(edge + 1) * h * e;
        rotate(frames.edge(edge), l_max, &gs[r.clone()], e, &mut zs[r], e, e, false);
    }
    let mut g_hidden = Array3::zeros((k, h, 2 * e));
    for (ml, gm) in w.lin2.iter().zip(grad.lin2.iter_mut()) {
        linear_backward(ml, l_max, &cache.hidden, &g_z, &mut g_hidden, gm);
    }
    let g_pre = if gates { gate_backward(&cache.pre_gate, &g_hidden) } else { g_hidden };
    let mut g_rot = Array3::zeros((k, h, 3 * e));
    for (ml, gm) in w.lin1.iter().zip(grad.lin1.iter_mut()) {
        linear_backward(ml, l_max, &cache.rotated, &g_pre, &mut g_rot, gm);
    }
    let mut g_msgs = Array4::zeros((k, 3, h, e));
    let rs = g_rot.as_slice().expect("standard layout");
    let ms = g_msgs.as_slice_mut().expect("standard layout");
    for edge in 0..k {
        let d = frames.edge(edge);
        for g in 0..3 {
            let src = &rs[edge * h * 3 * e + g * e..(edge + 1) * h * 3 * e];
            let dst = &mut ms[(edge * 3 + g) * h * e..(edge * 3 + g + 1) * h * e];
            rotate(d, l_max, src, 3 * e, dst, e, e, true);
        }
    }
    g_msgs
}

/// Transform a message batch into per-edge tensors of width `E`.
pub fn so2_block<T: Real>(
    msgs: &MessageBatch<T>,
    frames: &Frames<T>,
    w: &So2Weights<T>,
    gates: bool,
) -> Result<SphericalTensor<T>> {
    let (out, _) = so2_forward(w, msgs, frames, gates)?;
    SphericalTensor::from_array(msgs.l_max, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::wigner_blocks;
    use crate::linalg::{axis_angle, mat_vec};
    use crate::model::params::{ModelConfig, ModelParams};
    use crate::structures::BasisSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(l_max: usize, e: usize, seed: u64) -> (So2Weights<f64>, MessageBatch<f64>, Vec<[f64; 3]>) {
        let mut c = ModelConfig::new(BasisSpec::new().with(1, &[0]), 3.0);
        c.l_max = l_max;
        c.width = e;
        c.layers = 1;
        c.seed = seed;
        let p = ModelParams::<f64>::init(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 9;
        let data = Array4::from_shape_fn((k, 3, n_harmonics(l_max), e), |_| rng.random_range(-1.0..1.0));
        let disp = (0..k)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        (p.layers[0].node.clone(), MessageBatch { l_max, data }, disp)
    }

    fn rotate_batch(m: &MessageBatch<f64>, d: &[crate::harmonics::WignerBlock]) -> MessageBatch<f64> {
        let (k, _, h, e) = m.data.dim();
        let flat = m.data.clone().into_shape_with_order((k * 3, h, e)).unwrap();
        let t = SphericalTensor::from_array(m.l_max, flat).unwrap().rotated(d);
        MessageBatch { l_max: m.l_max, data: t.data.into_shape_with_order((k, 3, h, e)).unwrap() }
    }

    #[test]
    fn equivariant_under_global_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for l_max in [0, 1, 2, 4] {
            let (w, msgs, disp) = setup(l_max, 3, l_max as u64);
            let frames = Frames::from_displacements(l_max, &disp).unwrap();
            let out = so2_block(&msgs, &frames, &w, true).unwrap();
            for _ in 0..5 {
                let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let r = axis_angle(&axis, rng.random_range(0.0..6.0));
                let d = wigner_blocks(l_max, &r);
                let rdisp: Vec<_> = disp.iter().map(|v| mat_vec(&r, v)).collect();
                let rframes = Frames::from_displacements(l_max, &rdisp).unwrap();
                let lhs = so2_block(&rotate_batch(&msgs, &d), &rframes, &w, true).unwrap();
                let rhs = out.rotated(&d);
                let err = (&lhs.data - &rhs.data).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                assert!(err < 1e-10, "l_max {l_max}: {err}");
            }
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let (w, msgs, disp) = setup(2, 2, 1);
        let mut z = w.clone();
        for ml in z.lin1.iter_mut().chain(z.lin2.iter_mut()) {
            ml.a.fill(0.0);
            if let Some(b) = &mut ml.b {
                b.fill(0.0);
            }
        }
        let frames = Frames::from_displacements(2, &disp).unwrap();
        let out = so2_block(&msgs, &frames, &z, true).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case_is_dense_layer_with_gate() {
        let (w, msgs, disp) = setup(0, 2, 2);
        let frames = Frames::from_displacements(0, &disp).unwrap();
        let out = so2_block(&msgs, &frames, &w, true).unwrap();
        for k in 0..msgs.len() {
            let x: Vec<f64> = (0..3).flat_map(|g| (0..2).map(move |f| (g, f))).map(|(g, f)| msgs.data[[k, g, 0, f]]).collect();
            let hid: Vec<f64> = (0..4)
                .map(|o| {
                    let s: f64 = (0..6).map(|i| w.lin1[0].a[[o, i]] * x[i]).sum();
                    s / (1.0 + (-s).exp())
                })
                .collect();
            for o in 0..2 {
                let y: f64 = (0..4).map(|i| w.lin2[0].a[[o, i]] * hid[i]).sum();
                assert!((y - out.data[[k, 0, o]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (w, msgs, disp) = setup(2, 2, 3);
        let frames = Frames::from_displacements(2, &disp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (out, cache) = so2_forward(&w, &msgs, &frames, true).unwrap();
        let probe = Array3::from_shape_fn(out.dim(), |_| rng.random_range(-1.0..1.0));
        let f = |m: &MessageBatch<f64>, w: &So2Weights<f64>| -> f64 {
            let (o, _) = so2_forward(w, m, &frames, true).unwrap();
            (&o * &probe).sum()
        };
        let mut grad = w.clone();
        for ml in grad.lin1.iter_mut().chain(grad.lin2.iter_mut()) {
            ml.a.fill(0.0);
            if let Some(b) = &mut ml.b {
                b.fill(0.0);
            }
        }
        let g_msgs = so2_backward(&w, &cache, &frames, &probe, true, &mut grad);
        let eps = 1e-6;
        for _ in 0..30 {
            let idx = [rng.random_range(0..msgs.len()), rng.random_range(0..3), rng.random_range(0..9), rng.random_range(0..2)];
            let (mut a, mut b) = (msgs.clone(), msgs.clone());
            a.data[idx] += eps;
            b.data[idx] -= eps;
            let fd = (f(&a, &w) - f(&b, &w)) / (2.0 * eps);
            assert!((fd - g_msgs[idx]).abs() < 1e-7 * (1.0 + fd.abs()), "{fd} vs {}", g_msgs[idx]);
        }
        for which in 0..2 {
            for m in 0..=2usize {
                let (a_shape, has_b) = {
                    let ml = if which == 0 { &w.lin1[m] } else { &w.lin2[m] };
                    (ml.a.dim(), ml.b.is_some())
                };
                for use_b in [false, true] {
                    if use_b && !has_b {
                        continue;
                    }
                    let i = (rng.random_range(0..a_shape.0), rng.random_range(0..a_shape.1));
                    let bump = |delta: f64| {
                        let mut ww = w.clone();
                        let ml = if which == 0 { &mut ww.lin1[m] } else { &mut ww.lin2[m] };
                        let arr = if use_b { ml.b.as_mut().unwrap() } else { &mut ml.a };
                        arr[[i.0, i.1]] += delta;
                        f(&msgs, &ww)
                    };
                    let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                    let gml = if which == 0 { &grad.lin1[m] } else { &grad.lin2[m] };
                    let an = if use_b { gml.b.as_ref().unwrap()[[i.0, i.1]] } else { gml.a[[i.0, i.1]] };
                    assert!((fd - an).abs() < 1e-7 * (1.0 + fd.abs()), "lin{} m{m} b={use_b}: {fd} vs {an}", which + 1);
                }
            }
        }
    }
}
