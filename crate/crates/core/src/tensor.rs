//! Dense row-major f32 tensors and the explicit forward/backward kernels for
//! the five layer kinds a VGG-style network needs, plus a momentum SGD step.
//!
//! Conventions fixed here and relied on by the rest of the crate:
//! stride is always 1, kernels are odd and square, padding is explicit zeros,
//! maxpool routes gradient to the first row-major maximum of each window,
//! relu propagates zero gradient at exactly 0, and [`flatten`] is
//! channel-major (channel 0 occupies the contiguous prefix of the output).
//! Every operation is a pure, deterministic function of its inputs; any
//! non-finite output value is reported as an error rather than propagated.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank {expected}, got shape of rank {got}")]
    WrongRank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: kernel size {kernel} must be odd and positive")]
    BadKernel { op: &'static str, kernel: usize },
    #[error("{op}: output extent {extent} is not positive")]
    BadOutputExtent { op: &'static str, extent: i64 },
    #[error("{op}: window size {size} does not divide extent {extent}")]
    NonDivisible {
        op: &'static str,
        size: usize,
        extent: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{what} must be {constraint}, got {value}")]
    BadHyperparam {
        what: &'static str,
        constraint: &'static str,
        value: f32,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
}

/// Dense n-dimensional array of 32-bit floats, row-major (last index fastest).
///
/// Invariant: `data.len() == product(shape)` and every stored value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking the length invariant and rejecting
    /// non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        let t = Tensor { shape, data };
        t.ensure_finite("Tensor::new")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Errors if any stored value is NaN or infinite.
    pub fn ensure_finite(&self, op: &'static str) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::WrongRank {
                op,
                expected: 3,
                got: self.rank(),
            }),
        }
    }

    fn dims1(&self, op: &'static str) -> Result<usize, TensorError> {
        match self.shape[..] {
            [n] => Ok(n),
            _ => Err(TensorError::WrongRank {
                op,
                expected: 1,
                got: self.rank(),
            }),
        }
    }
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

fn conv_dims(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize), TensorError> {
    let (c_in, h, w) = input.dims3(op)?;
    let (c_out, wc_in, kh, kw) = match weight.shape[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(TensorError::WrongRank {
                op,
                expected: 4,
                got: weight.rank(),
            })
        }
    };
    if kh != kw || kh == 0 || kh % 2 == 0 {
        return Err(TensorError::BadKernel { op, kernel: kh });
    }
    if wc_in != c_in {
        return Err(mismatch(
            op,
            format!("input has {c_in} channels but weight expects {wc_in}"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(mismatch(
            op,
            format!("bias shape {:?} does not match {c_out} output channels", bias.shape()),
        ));
    }
    let k = kh;
    let oh = h as i64 + 2 * padding as i64 - k as i64 + 1;
    let ow = w as i64 + 2 * padding as i64 - k as i64 + 1;
    if oh < 1 || ow < 1 {
        return Err(TensorError::BadOutputExtent {
            op,
            extent: oh.min(ow),
        });
    }
    Ok((c_in, h, w, c_out, k, oh as usize, ow as usize))
}

/// 2D cross-correlation with stride 1 and explicit zero padding, plus a
/// per-output-channel bias. Input `[C_in,H,W]`, weight `[C_out,C_in,k,k]`,
/// bias `[C_out]`; output `[C_out, H+2p-k+1, W+2p-k+1]`.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let op = "conv2d_forward";
    let (c_in, h, w, c_out, k, oh, ow) = conv_dims(op, input, weight, bias, padding)?;
    let mut out = vec![0.0f32; c_out * oh * ow];
    for oc in 0..c_out {
        out[oc * oh * ow..(oc + 1) * oh * ow].fill(bias.data[oc]);
    }
    let p = padding;
    for oc in 0..c_out {
        for ic in 0..c_in {
            for kr in 0..k {
                // oy + kr - p must land in [0, h)
                let oy_lo = p.saturating_sub(kr);
                let oy_hi = oh.min((h + p).saturating_sub(kr));
                for kc in 0..k {
                    let wv = weight.data[((oc * c_in + ic) * k + kr) * k + kc];
                    let ox_lo = p.saturating_sub(kc);
                    let ox_hi = ow.min((w + p).saturating_sub(kc));
                    for oy in oy_lo..oy_hi {
                        let iy = oy + kr - p;
                        let in_row = &input.data[(ic * h + iy) * w..(ic * h + iy + 1) * w];
                        let out_row = &mut out[(oc * oh + oy) * ow..(oc * oh + oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            out_row[ox] += wv * in_row[ox + kc - p];
                        }
                    }
                }
            }
        }
    }
    let t = Tensor {
        shape: vec![c_out, oh, ow],
        data: out,
    };
    t.ensure_finite(op)?;
    Ok(t)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weight, and
/// bias, given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let op = "conv2d_backward";
    let (c_in, h, w) = input.dims3(op)?;
    let (c_out, _, k, _) = match weight.shape[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(TensorError::WrongRank {
                op,
                expected: 4,
                got: weight.rank(),
            })
        }
    };
    let bias_probe = Tensor::zeros(vec![c_out]);
    let (_, _, _, _, _, oh, ow) = conv_dims(op, input, weight, &bias_probe, padding)?;
    if grad_out.shape() != [c_out, oh, ow] {
        return Err(mismatch(
            op,
            format!(
                "grad_out shape {:?} does not match forward output [{c_out}, {oh}, {ow}]",
                grad_out.shape()
            ),
        ));
    }

    let p = padding;
    let mut grad_input = vec![0.0f32; c_in * h * w];
    let mut grad_weight = vec![0.0f32; weight.numel()];
    let mut grad_bias = vec![0.0f32; c_out];

    for oc in 0..c_out {
        let g_chan = &grad_out.data[oc * oh * ow..(oc + 1) * oh * ow];
        grad_bias[oc] = g_chan.iter().sum();
        for ic in 0..c_in {
            for kr in 0..k {
                let oy_lo = p.saturating_sub(kr);
                let oy_hi = oh.min((h + p).saturating_sub(kr));
                for kc in 0..k {
                    let ox_lo = p.saturating_sub(kc);
                    let ox_hi = ow.min((w + p).saturating_sub(kc));
                    let wv = weight.data[((oc * c_in + ic) * k + kr) * k + kc];
                    let mut gw = 0.0f32;
                    for oy in oy_lo..oy_hi {
                        let iy = oy + kr - p;
                        let g_row = &g_chan[oy * ow..(oy + 1) * ow];
                        let in_row = &input.data[(ic * h + iy) * w..(ic * h + iy + 1) * w];
                        let gi_row = &mut grad_input[(ic * h + iy) * w..(ic * h + iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            let ix = ox + kc - p;
                            gw += g_row[ox] * in_row[ix];
                            gi_row[ix] += wv * g_row[ox];
                        }
                    }
                    grad_weight[((oc * c_in + ic) * k + kr) * k + kc] += gw;
                }
            }
        }
    }

    let gi = Tensor {
        shape: input.shape.clone(),
        data: grad_input,
    };
    let gw = Tensor {
        shape: weight.shape.clone(),
        data: grad_weight,
    };
    let gb = Tensor {
        shape: vec![c_out],
        data: grad_bias,
    };
    gi.ensure_finite(op)?;
    gw.ensure_finite(op)?;
    gb.ensure_finite(op)?;
    Ok((gi, gw, gb))
}

/// Elementwise `max(x, 0)`.
pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Backward of relu: gradient passes where `x > 0`; a tie at exactly 0
/// propagates zero gradient.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    if x.shape != grad_out.shape {
        return Err(mismatch(
            "relu_backward",
            format!("x {:?} vs grad_out {:?}", x.shape, grad_out.shape),
        ));
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    })
}

/// Non-overlapping per-channel window maxima. `size` must divide both
/// spatial extents.
pub fn maxpool2d_forward(x: &Tensor, size: usize) -> Result<Tensor, TensorError> {
    let op = "maxpool2d_forward";
    let (c, h, w) = x.dims3(op)?;
    if size == 0 || h % size != 0 {
        return Err(TensorError::NonDivisible {
            op,
            size,
            extent: h,
        });
    }
    if w % size != 0 {
        return Err(TensorError::NonDivisible {
            op,
            size,
            extent: w,
        });
    }
    let (oh, ow) = (h / size, w / size);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..size {
                    let iy = oy * size + dy;
                    for dx in 0..size {
                        let v = x.data[(ch * h + iy) * w + ox * size + dx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    Ok(Tensor {
        shape: vec![c, oh, ow],
        data: out,
    })
}

/// Backward of maxpool: each window's gradient goes entirely to its first
/// (row-major) maximal position.
pub fn maxpool2d_backward(x: &Tensor, size: usize, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    let op = "maxpool2d_backward";
    let (c, h, w) = x.dims3(op)?;
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(TensorError::NonDivisible {
            op,
            size,
            extent: if size == 0 || h % size != 0 { h } else { w },
        });
    }
    let (oh, ow) = (h / size, w / size);
    if grad_out.shape() != [c, oh, ow] {
        return Err(mismatch(
            op,
            format!("grad_out {:?} vs pooled [{c}, {oh}, {ow}]", grad_out.shape()),
        ));
    }
    let mut grad_in = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..size {
                    let iy = oy * size + dy;
                    for dx in 0..size {
                        let idx = (ch * h + iy) * w + ox * size + dx;
                        let v = x.data[idx];
                        // strict > keeps the first row-major maximum
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                grad_in[best_idx] += grad_out.data[(ch * oh + oy) * ow + ox];
            }
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: grad_in,
    })
}

/// Affine map `weight @ x + bias`. `x: [n_in]`, `weight: [n_out, n_in]`,
/// `bias: [n_out]`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let op = "linear_forward";
    let n_in = x.dims1(op)?;
    let (n_out, w_in) = match weight.shape[..] {
        [a, b] => (a, b),
        _ => {
            return Err(TensorError::WrongRank {
                op,
                expected: 2,
                got: weight.rank(),
            })
        }
    };
    if w_in != n_in {
        return Err(mismatch(
            op,
            format!("input has {n_in} features but weight expects {w_in}"),
        ));
    }
    if bias.shape() != [n_out] {
        return Err(mismatch(
            op,
            format!("bias shape {:?} vs {n_out} outputs", bias.shape()),
        ));
    }
    let mut out = vec![0.0f32; n_out];
    for o in 0..n_out {
        let row = &weight.data[o * n_in..(o + 1) * n_in];
        let mut acc = 0.0f32;
        for i in 0..n_in {
            acc += row[i] * x.data[i];
        }
        out[o] = acc + bias.data[o];
    }
    let t = Tensor {
        shape: vec![n_out],
        data: out,
    };
    t.ensure_finite(op)?;
    Ok(t)
}

/// Exact gradients of [`linear_forward`].
pub fn linear_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let op = "linear_backward";
    let n_in = x.dims1(op)?;
    let (n_out, w_in) = match weight.shape[..] {
        [a, b] => (a, b),
        _ => {
            return Err(TensorError::WrongRank {
                op,
                expected: 2,
                got: weight.rank(),
            })
        }
    };
    if w_in != n_in || grad_out.shape() != [n_out] {
        return Err(mismatch(
            op,
            format!(
                "x {:?}, weight {:?}, grad_out {:?} are inconsistent",
                x.shape, weight.shape, grad_out.shape
            ),
        ));
    }
    let mut grad_in = vec![0.0f32; n_in];
    let mut grad_w = vec![0.0f32; n_out * n_in];
    for o in 0..n_out {
        let g = grad_out.data[o];
        let row = &weight.data[o * n_in..(o + 1) * n_in];
        let gw_row = &mut grad_w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grad_in[i] += row[i] * g;
            gw_row[i] = g * x.data[i];
        }
    }
    let gi = Tensor {
        shape: vec![n_in],
        data: grad_in,
    };
    let gw = Tensor {
        shape: weight.shape.clone(),
        data: grad_w,
    };
    let gb = Tensor {
        shape: vec![n_out],
        data: grad_out.data.clone(),
    };
    gi.ensure_finite(op)?;
    gw.ensure_finite(op)?;
    Ok((gi, gw, gb))
}

/// Channel-major flatten of a `[C,H,W]` tensor: output index
/// `i = c*H*W + h*W + w`, so channel 0 occupies the contiguous prefix.
pub fn flatten(x: &Tensor) -> Result<Tensor, TensorError> {
    let (c, h, w) = x.dims3("flatten")?;
    Ok(Tensor {
        shape: vec![c * h * w],
        data: x.data.clone(),
    })
}

/// Inverse of [`flatten`] for a known `[C,H,W]` target shape.
pub fn unflatten(x: &Tensor, dims: (usize, usize, usize)) -> Result<Tensor, TensorError> {
    let op = "unflatten";
    let n = x.dims1(op)?;
    let (c, h, w) = dims;
    if c * h * w != n {
        return Err(mismatch(
            op,
            format!("cannot reshape {n} values into [{c}, {h}, {w}]"),
        ));
    }
    Ok(Tensor {
        shape: vec![c, h, w],
        data: x.data.clone(),
    })
}

/// Numerically stabilized softmax cross-entropy against a class index.
/// Returns the scalar loss and the gradient w.r.t. the logits
/// (`softmax(logits) - one_hot(label)`).
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f32, Tensor), TensorError> {
    let op = "softmax_cross_entropy";
    let k = logits.dims1(op)?;
    if label >= k {
        return Err(TensorError::LabelOutOfRange { label, classes: k });
    }
    let max = logits.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    let mut exps = vec![0.0f32; k];
    for i in 0..k {
        let e = (logits.data[i] - max).exp();
        exps[i] = e;
        sum += e;
    }
    let loss = sum.ln() - (logits.data[label] - max);
    let mut grad = vec![0.0f32; k];
    for i in 0..k {
        grad[i] = exps[i] / sum - if i == label { 1.0 } else { 0.0 };
    }
    if !loss.is_finite() {
        return Err(TensorError::NonFinite { op });
    }
    let g = Tensor {
        shape: vec![k],
        data: grad,
    };
    g.ensure_finite(op)?;
    Ok((loss, g))
}

/// Momentum SGD state. Velocity buffers mirror the parameter shapes exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: Vec<Tensor>,
}

impl OptimState {
    pub fn new(learning_rate: f32, momentum: f32, params: &[Tensor]) -> Result<Self, TensorError> {
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(TensorError::BadHyperparam {
                what: "learning_rate",
                constraint: "finite and non-negative",
                value: learning_rate,
            });
        }
        if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
            return Err(TensorError::BadHyperparam {
                what: "momentum",
                constraint: "in [0, 1)",
                value: momentum,
            });
        }
        Ok(OptimState {
            learning_rate,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape.clone())).collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// One momentum SGD step, in place:
/// `v <- momentum*v + grad; p <- p - lr*v`.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimState,
) -> Result<(), TensorError> {
    let op = "sgd_step";
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(mismatch(
            op,
            format!(
                "{} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                state.velocity.len()
            ),
        ));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if p.shape != g.shape || p.shape != v.shape {
            return Err(mismatch(
                op,
                format!(
                    "param {:?}, grad {:?}, velocity {:?}",
                    p.shape, g.shape, v.shape
                ),
            ));
        }
        let lr = state.learning_rate;
        let m = state.momentum;
        for i in 0..p.data.len() {
            v.data[i] = m * v.data[i] + g.data[i];
            p.data[i] -= lr * v.data[i];
        }
        p.ensure_finite(op)?;
    }
    Ok(())
}
