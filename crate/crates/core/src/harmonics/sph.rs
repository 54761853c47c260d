use std::f64::consts::PI;

use crate::linalg::Vec3;

/// Orthonormal real spherical harmonics `Y_lm(v̂)` for `l = 0..=l_max`,
/// flattened as `h = l² + l + m`. `v` need not be normalised (it must be
/// non-zero).
pub fn real_sph_harm(l_max: usize, v: &Vec3) -> Vec<f64> {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    // textbook frame: (x, y, z)_std = (v.z, v.x, v.y)
    let (x, y, z) = (v[2] / r, v[0] / r, v[1] / r);
    let n = (l_max + 1) * (l_max + 1);
    let mut out = vec![0.0; n];

    // cos(mφ)·sinᵐθ and sin(mφ)·sinᵐθ via powers of (x + iy)
    let mut re = vec![1.0; l_max + 1];
    let mut im = vec![0.0; l_max + 1];
    for m in 1..=l_max {
        re[m] = re[m - 1] * x - im[m - 1] * y;
        im[m] = re[m - 1] * y + im[m - 1] * x;
    }

    for m in 0..=l_max {
        // q[l] = P̃_l^m(z) / sinᵐθ, without Condon-Shortley phase
        let mut q = vec![0.0; l_max + 1];
        q[m] = (1..=m).map(|k| (2 * k - 1) as f64).product();
        if m < l_max {
            q[m + 1] = (2 * m + 1) as f64 * z * q[m];
        }
        for l in m + 2..=l_max {
            q[l] = ((2 * l - 1) as f64 * z * q[l - 1] - (l + m - 1) as f64 * q[l - 2]) / (l - m) as f64;
        }
        for l in m..=l_max {
            // K = sqrt((2l+1)/4π · (l−m)!/(l+m)!)
            let ratio: f64 = ((l - m + 1)..=(l + m)).map(|k| 1.0 / k as f64).product();
            let k = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
            let base = l * l + l;
            if m == 0 {
                out[base] = k * q[l];
            } else {
                let s = std::f64::consts::SQRT_2 * k * q[l];
                out[base + m] = s * re[m];
                out[base - m] = s * im[m];
            }
        }
    }
    out
}
