//! Reference forward/backward implementations of the detection and language
//! heads, in f64, for numerical verification rather than throughput.

mod gradcheck;

pub use gradcheck::{grad_check, GradCase, GradOp, GradReport};

use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::DimMismatch {
                axis: "values".into(),
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor { dims, data: vec![0.0; n] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.dims.len() != rank {
            return Err(Error::DimMismatch {
                axis: format!("{what} rank"),
                expected: rank,
                actual: self.dims.len(),
            });
        }
        Ok(())
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &Tensor, b: f64) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::invalid(format!("shape {:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Tensor { dims: self.dims.clone(), data })
    }
}

fn dim_check(axis: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimMismatch {
            axis: axis.into(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Validated deconvolution geometry.
struct DeconvShape {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl DeconvShape {
    fn of(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Self> {
        input.expect_rank(3, "input")?;
        kernel.expect_rank(4, "kernel")?;
        if stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        let (cin, h, w) = (input.dims[0], input.dims[1], input.dims[2]);
        dim_check("kernel input channels", cin, kernel.dims[0])?;
        let (cout, k) = (kernel.dims[1], kernel.dims[2]);
        dim_check("kernel width", k, kernel.dims[3])?;
        if h == 0 || w == 0 || k == 0 {
            return Err(Error::invalid("deconvolution extents must be positive"));
        }
        Ok(DeconvShape {
            cin,
            cout,
            h,
            w,
            k,
            stride,
            oh: (h - 1) * stride + k,
            ow: (w - 1) * stride + k,
        })
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        // (input index, kernel index, output index)
        for c in 0..self.cin {
            for i in 0..self.h {
                for j in 0..self.w {
                    let xi = (c * self.h + i) * self.w + j;
                    for o in 0..self.cout {
                        for p in 0..self.k {
                            for q in 0..self.k {
                                let ki = ((c * self.cout + o) * self.k + p) * self.k + q;
                                let oi = (o * self.oh + i * self.stride + p) * self.ow + j * self.stride + q;
                                f(xi, ki, oi);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution of `[Cin, H, W]` by `[Cin, Cout, k, k]` into
/// `[Cout, (H-1)*stride + k, (W-1)*stride + k]`.
pub fn deconv2d(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let s = DeconvShape::of(input, kernel, stride)?;
    let mut out = Tensor::zeros(vec![s.cout, s.oh, s.ow]);
    s.for_each(|xi, ki, oi| out.data[oi] += input.data[xi] * kernel.data[ki]);
    Ok(out)
}

/// Gradients of a scalar loss with respect to the deconvolution input and
/// kernel, given the gradient with respect to its output.
pub fn deconv2d_backward(input: &Tensor, kernel: &Tensor, stride: usize, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = DeconvShape::of(input, kernel, stride)?;
    if grad_out.dims != [s.cout, s.oh, s.ow] {
        return Err(Error::invalid(format!("output gradient has shape {:?}", grad_out.dims)));
    }
    let mut gx = Tensor::zeros(input.dims.clone());
    let mut gk = Tensor::zeros(kernel.dims.clone());
    s.for_each(|xi, ki, oi| {
        gx.data[xi] += grad_out.data[oi] * kernel.data[ki];
        gk.data[ki] += grad_out.data[oi] * input.data[xi];
    });
    Ok((gx, gk))
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn layer_norm_check(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<usize> {
    let n = *x.dims.last().ok_or_else(|| Error::invalid("layer norm needs at least one axis"))?;
    dim_check("gamma length", n, gamma.len())?;
    dim_check("beta length", n, beta.len())?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("eps must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("layer norm over an empty axis"));
    }
    Ok(n)
}

/// Mean and inverse standard deviation of one row.
fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Normalizes over the last axis to zero mean and unit (biased) variance,
/// then applies `gamma * x + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let n = layer_norm_check(x, gamma, beta, eps)?;
    let mut out = x.clone();
    for row in out.data.chunks_mut(n) {
        let (mean, inv_std) = row_stats(row, eps);
        for (i, v) in row.iter_mut().enumerate() {
            *v = gamma.data[i] * (*v - mean) * inv_std + beta.data[i];
        }
    }
    Ok(out)
}

/// Returns `(d_x, d_gamma, d_beta)`.
pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = layer_norm_check(x, gamma, beta, eps)?;
    if grad_out.dims != x.dims {
        return Err(Error::invalid(format!("output gradient has shape {:?}", grad_out.dims)));
    }
    let mut gx = Tensor::zeros(x.dims.clone());
    let mut gg = Tensor::zeros(gamma.dims.clone());
    let mut gb = Tensor::zeros(beta.dims.clone());
    let nf = n as f64;
    for ((row, g_row), gx_row) in x.data.chunks(n).zip(grad_out.data.chunks(n)).zip(gx.data.chunks_mut(n)) {
        let (mean, inv_std) = row_stats(row, eps);
        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
        let g: Vec<f64> = g_row.iter().zip(&gamma.data).map(|(a, b)| a * b).collect();
        let g_mean = g.iter().sum::<f64>() / nf;
        let gx_mean = g.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
        for i in 0..n {
            gx_row[i] = inv_std * (g[i] - g_mean - xhat[i] * gx_mean);
            gg.data[i] += g_row[i] * xhat[i];
            gb.data[i] += g_row[i];
        }
    }
    Ok((gx, gg, gb))
}

/// Spatial mean of each channel of `[C, H, W]`.
pub fn global_average_pool(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(3, "pool input")?;
    let (c, hw) = (x.dims[0], x.dims[1] * x.dims[2]);
    if hw == 0 {
        return Err(Error::invalid("pooling needs H, W >= 1"));
    }
    let data = x.data.chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect();
    Tensor::new(vec![c], data)
}

/// Every cell of channel `c` receives `grad_out[c] / (H * W)`.
pub fn global_average_pool_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.expect_rank(3, "pool input")?;
    let hw = x.dims[1] * x.dims[2];
    dim_check("pool output gradient", x.dims[0], grad_out.len())?;
    let mut gx = Tensor::zeros(x.dims.clone());
    for (ch, g) in gx.data.chunks_mut(hw).zip(&grad_out.data) {
        ch.fill(g / hw as f64);
    }
    Ok(gx)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let z = &logits.data;
    let arg = (0..z.len()).fold(0, |best, i| if z[i] > z[best] { i } else { best });
    let rest: f64 = (0..z.len()).filter(|&i| i != arg).map(|i| (z[i] - z[arg]).exp()).sum();
    let loss = (z[arg] - z[label]) + rest.ln_1p();
    let mut grad = softmax(z);
    grad[label] -= 1.0;
    Ok((loss, Tensor::new(logits.dims.clone(), grad)?))
}

/// One embedding vector per transformer layer, `[L, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: usize,
    width: usize,
    values: Vec<f64>,
}

impl LayerStack {
    pub fn new(layers: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if layers == 0 || width == 0 {
            return Err(Error::invalid("a layer stack needs L >= 1 and D >= 1"));
        }
        dim_check("layer stack values", layers * width, values.len())?;
        Ok(LayerStack { layers, width, values })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.values[l * self.width..(l + 1) * self.width]
    }

    /// The final `n` layers.
    pub fn last(&self, n: usize) -> Result<LayerStack> {
        if n == 0 || n > self.layers {
            return Err(Error::invalid(format!("cannot take {n} of {} layers", self.layers)));
        }
        LayerStack::new(n, self.width, self.values[(self.layers - n) * self.width..].to_vec())
    }

    /// Element-wise mean of all layer vectors.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for l in 0..self.layers {
            for (o, v) in out.iter_mut().zip(self.layer(l)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.layers as f64);
        out
    }
}

fn window_starts(layers: usize, taps: usize, stride: usize) -> Result<Vec<usize>> {
    if taps == 0 {
        return Err(Error::invalid("kernel must have at least one tap"));
    }
    if taps > layers {
        return Err(Error::invalid(format!(
            "kernel of length {taps} is longer than the {layers}-layer stack"
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    Ok((0..=layers - taps).step_by(stride).collect())
}

/// Convolves along the layer axis (independently per embedding dimension)
/// and averages the window outputs into one `D`-vector.
pub fn conv1d_layer_select(stack: &LayerStack, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let starts = window_starts(stack.layers, kernel.len(), stride)?;
    let mut out = vec![0.0; stack.width];
    for &p in &starts {
        for (j, k) in kernel.data.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(stack.layer(p + j)) {
                *o += k * v;
            }
        }
    }
    let n = starts.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Tensor::from_vec(out)
}

/// Returns `(d_stack, d_kernel)`; `d_stack` is laid out like the stack values.
pub fn conv1d_layer_select_backward(
    stack: &LayerStack,
    kernel: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<(Vec<f64>, Tensor)> {
    let starts = window_starts(stack.layers, kernel.len(), stride)?;
    dim_check("layer select output gradient", stack.width, grad_out.len())?;
    let n = starts.len() as f64;
    let mut gs = vec![0.0; stack.values.len()];
    let mut gk = Tensor::zeros(kernel.dims.clone());
    for &p in &starts {
        for (j, k) in kernel.data.iter().enumerate() {
            let l = p + j;
            for d in 0..stack.width {
                gs[l * stack.width + d] += grad_out.data[d] * k / n;
                gk.data[j] += grad_out.data[d] * stack.values[l * stack.width + d] / n;
            }
        }
    }
    Ok((gs, gk))
}

/// L2-normalizes `lang` and concatenates it to every cell of `spatial`
/// along the channel axis. A zero vector stays zero.
pub fn fuse_language_spatial(spatial: &Tensor, lang: &Tensor) -> Result<Tensor> {
    spatial.expect_rank(3, "spatial features")?;
    let (c, h, w) = (spatial.dims[0], spatial.dims[1], spatial.dims[2]);
    let norm = lang.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit: Vec<f64> = if norm > 0.0 {
        lang.data.iter().map(|v| v / norm).collect()
    } else {
        lang.data.clone()
    };
    let mut data = Vec::with_capacity((c + unit.len()) * h * w);
    data.extend_from_slice(&spatial.data);
    for v in &unit {
        data.extend(std::iter::repeat_n(*v, h * w));
    }
    Tensor::new(vec![c + unit.len(), h, w], data)
}
