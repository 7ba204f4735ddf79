//! Central finite-difference gradient checking.
//!
//! The numeric side evaluates an independent naive f64 reference (see
//! [`reference`]) rather than the production f32 kernels, so it shares no
//! code with the backward passes it verifies and its own noise floor
//! (~1e-12) sits far below the tolerances. Tolerances follow one rule
//! everywhere: components with `|analytic| > 1e-6` must agree to `1e-3`
//! relative error, all others to `1e-5` absolute.

use crate::tensor::Tensor;

/// Step used for central differences.
pub const DEFAULT_H: f64 = 1e-3;
/// Relative tolerance for components with `|analytic| > ABS_FLOOR`.
pub const REL_TOL: f64 = 1e-3;
/// Absolute tolerance for components at or below `ABS_FLOOR`.
pub const ABS_TOL: f64 = 1e-5;
/// Magnitude below which the absolute tolerance applies.
pub const ABS_FLOOR: f64 = 1e-6;

/// Central-difference gradient of scalar objective `f` at `x`, perturbing
/// one entry at a time.
pub fn numerical_gradient<F>(x: &[f64], mut f: F, h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0f64; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        probe[i] = orig + h;
        let f_hi = f(&probe);
        probe[i] = orig - h;
        let f_lo = f(&probe);
        probe[i] = orig;
        grad[i] = (f_hi - f_lo) / (2.0 * h);
    }
    grad
}

/// Widens a tensor to f64 for reference evaluation.
pub fn widen(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Compares an analytic f32 gradient against a numeric f64 one under the
/// standard tolerances, reporting the worst offending component on failure.
pub fn check_gradients(analytic: &Tensor, numeric: &[f64]) -> Result<(), String> {
    check_gradients_with(analytic, numeric, REL_TOL, ABS_TOL, ABS_FLOOR)
}

pub fn check_gradients_with(
    analytic: &Tensor,
    numeric: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    abs_floor: f64,
) -> Result<(), String> {
    if analytic.numel() != numeric.len() {
        return Err(format!(
            "gradient sizes differ: {} vs {}",
            analytic.numel(),
            numeric.len()
        ));
    }
    let mut worst: Option<(usize, f64, f64, f64)> = None;
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric).enumerate() {
        let a = a as f64;
        let err = (a - n).abs();
        let score = if a.abs() > abs_floor {
            err / a.abs() / rel_tol
        } else {
            err / abs_tol
        };
        if score > 1.0 {
            match worst {
                Some((_, _, _, s)) if s >= score => {}
                _ => worst = Some((i, a, n, score)),
            }
        }
    }
    match worst {
        None => Ok(()),
        Some((i, a, n, _)) => Err(format!(
            "gradient mismatch at flat index {i}: analytic {a:e} vs numeric {n:e}"
        )),
    }
}

/// Naive f64 reference implementations of the forward maps, used as the
/// independent oracle side of every finite-difference check. These are
/// deliberately written as plain quadruple loops with no shared code with
/// the f32 kernels.
pub mod reference {
    /// [C_in,H,W] x [C_out,C_in,k,k] (+bias) -> [C_out,H',W'], stride 1.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        input: &[f64],
        (c_in, h, w): (usize, usize, usize),
        weight: &[f64],
        c_out: usize,
        k: usize,
        bias: &[f64],
        padding: usize,
    ) -> (Vec<f64>, (usize, usize, usize)) {
        let p = padding as i64;
        let oh = (h as i64 + 2 * p - k as i64 + 1) as usize;
        let ow = (w as i64 + 2 * p - k as i64 + 1) as usize;
        let mut out = vec![0.0f64; c_out * oh * ow];
        for oc in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..c_in {
                        for kr in 0..k {
                            for kc in 0..k {
                                let iy = oy as i64 + kr as i64 - p;
                                let ix = ox as i64 + kc as i64 - p;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    acc += weight[((oc * c_in + ic) * k + kr) * k + kc]
                                        * input[(ic * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        (out, (c_out, oh, ow))
    }

    pub fn relu(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| v.max(0.0)).collect()
    }

    pub fn maxpool2d(
        x: &[f64],
        (c, h, w): (usize, usize, usize),
        size: usize,
    ) -> (Vec<f64>, (usize, usize, usize)) {
        let (oh, ow) = (h / size, w / size);
        let mut out = vec![0.0f64; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..size {
                        for dx in 0..size {
                            let v = x[(ch * h + oy * size + dy) * w + ox * size + dx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[(ch * oh + oy) * ow + ox] = best;
                }
            }
        }
        (out, (c, oh, ow))
    }

    /// [n_in] x [n_out,n_in] (+bias) -> [n_out].
    pub fn linear(x: &[f64], weight: &[f64], bias: &[f64], n_out: usize) -> Vec<f64> {
        let n_in = x.len();
        (0..n_out)
            .map(|o| {
                let mut acc = bias[o];
                for i in 0..n_in {
                    acc += weight[o * n_in + i] * x[i];
                }
                acc
            })
            .collect()
    }

    pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> f64 {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
        sum.ln() - (logits[label] - max)
    }
}
