//! Central-difference verification of the analytic backward passes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradOp {
    Deconv,
    LayerNorm,
    Pool,
    CrossEntropy,
    LayerSelect,
}

impl GradOp {
    pub const ALL: [GradOp; 5] = [
        GradOp::Deconv,
        GradOp::LayerNorm,
        GradOp::Pool,
        GradOp::CrossEntropy,
        GradOp::LayerSelect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GradOp::Deconv => "deconv",
            GradOp::LayerNorm => "layernorm",
            GradOp::Pool => "gap",
            GradOp::CrossEntropy => "ce",
            GradOp::LayerSelect => "conv1d",
        }
    }

    /// Linear ops are held to a tighter bound since central differences are
    /// exact for them up to rounding.
    pub fn tolerance(self) -> f64 {
        match self {
            GradOp::Deconv | GradOp::Pool => 1e-9,
            _ => 1e-6,
        }
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradOp::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown op '{s}' (expected deconv, layernorm, gap, ce or conv1d)")))
    }
}

/// Inputs for one check. `inputs` are the differentiated tensors; `seed_grad`
/// is the fixed upstream gradient that turns tensor outputs into a scalar.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub op: GradOp,
    pub inputs: Vec<Tensor>,
    pub stride: usize,
    pub label: usize,
    pub eps: f64,
    pub layers: usize,
    pub seed_grad: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, dims: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(dims, data).expect("finite sample")
}

impl GradCase {
    /// A random, well-conditioned case. Shapes vary with the seed.
    pub fn random(op: GradOp, seed: u64) -> GradCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((op as u64) << 56));
        let mut case = GradCase {
            op,
            inputs: Vec::new(),
            stride: 1,
            label: 0,
            eps: LAYER_NORM_EPS,
            layers: 0,
            seed_grad: Vec::new(),
        };
        match op {
            GradOp::Deconv => {
                let cin = rng.random_range(1..=3);
                let cout = rng.random_range(1..=3);
                let h = rng.random_range(1..=4);
                let w = rng.random_range(1..=4);
                let k = rng.random_range(1..=3);
                case.stride = rng.random_range(1..=2);
                case.inputs = vec![
                    uniform(&mut rng, vec![cin, h, w], -1.0, 1.0),
                    uniform(&mut rng, vec![cin, cout, k, k], -1.0, 1.0),
                ];
            }
            GradOp::LayerNorm => {
                let rows = rng.random_range(1..=3);
                let n = rng.random_range(2..=6);
                case.inputs = vec![
                    uniform(&mut rng, vec![rows, n], -2.0, 2.0),
                    uniform(&mut rng, vec![n], 0.5, 1.5),
                    uniform(&mut rng, vec![n], -0.5, 0.5),
                ];
            }
            GradOp::Pool => {
                let dims = vec![rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4)];
                case.inputs = vec![uniform(&mut rng, dims, -1.0, 1.0)];
            }
            GradOp::CrossEntropy => {
                let k = rng.random_range(2..=6);
                case.label = rng.random_range(0..k);
                case.inputs = vec![uniform(&mut rng, vec![k], -3.0, 3.0)];
            }
            GradOp::LayerSelect => {
                case.layers = rng.random_range(1..=6);
                let width = rng.random_range(1..=4);
                let taps = rng.random_range(1..=case.layers);
                case.stride = rng.random_range(1..=2);
                case.inputs = vec![
                    uniform(&mut rng, vec![case.layers, width], -1.0, 1.0),
                    uniform(&mut rng, vec![taps], -1.0, 1.0),
                ];
            }
        }
        let out_len = case.forward(&case.inputs).expect("generated case is valid").len();
        case.seed_grad = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        case
    }

    fn stack(&self, t: &Tensor) -> Result<LayerStack> {
        LayerStack::new(self.layers, t.dims()[1], t.data().to_vec())
    }

    /// The op output, flattened. Cross-entropy yields its scalar loss.
    fn forward(&self, x: &[Tensor]) -> Result<Vec<f64>> {
        Ok(match self.op {
            GradOp::Deconv => deconv2d(&x[0], &x[1], self.stride)?.data,
            GradOp::LayerNorm => layer_norm(&x[0], &x[1], &x[2], self.eps)?.data,
            GradOp::Pool => global_average_pool(&x[0])?.data,
            GradOp::CrossEntropy => vec![cross_entropy(&x[0], self.label)?.0],
            GradOp::LayerSelect => conv1d_layer_select(&self.stack(&x[0])?, &x[1], self.stride)?.data,
        })
    }

    fn analytic(&self) -> Result<Vec<Tensor>> {
        let x = &self.inputs;
        let out = self.forward(x)?;
        let g = Tensor::new(vec![out.len()], self.seed_grad.clone())?;
        Ok(match self.op {
            GradOp::Deconv => {
                let g = Tensor::new(deconv2d(&x[0], &x[1], self.stride)?.dims, g.data)?;
                let (a, b) = deconv2d_backward(&x[0], &x[1], self.stride, &g)?;
                vec![a, b]
            }
            GradOp::LayerNorm => {
                let g = Tensor::new(x[0].dims.clone(), g.data)?;
                let (a, b, c) = layer_norm_backward(&x[0], &x[1], &x[2], self.eps, &g)?;
                vec![a, b, c]
            }
            GradOp::Pool => vec![global_average_pool_backward(&x[0], &g)?],
            GradOp::CrossEntropy => {
                let (_, grad) = cross_entropy(&x[0], self.label)?;
                let s = self.seed_grad[0];
                vec![Tensor::new(grad.dims, grad.data.iter().map(|v| v * s).collect())?]
            }
            GradOp::LayerSelect => {
                let (a, b) = conv1d_layer_select_backward(&self.stack(&x[0])?, &x[1], self.stride, &g)?;
                vec![Tensor::new(x[0].dims.clone(), a)?, b]
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op: GradOp,
    /// max over coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub coordinates: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.op.tolerance()
    }
}

/// Compares analytic gradients with central differences at step `h`.
///
/// The difference is taken per output element and weighted afterwards, and
/// divided by the step actually realized in floating point, which keeps the
/// linear ops at rounding level.
pub fn grad_check(case: &GradCase, h: f64) -> Result<GradReport> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::invalid(format!("step {h} outside [1e-7, 1e-3]")));
    }
    let analytic = case.analytic()?;
    let mut max_rel = 0.0f64;
    let mut coordinates = 0;
    let mut inputs = case.inputs.clone();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let x0 = inputs[t].data[i];
            let (xp, xm) = (x0 + h, x0 - h);
            inputs[t].data[i] = xp;
            let plus = case.forward(&inputs)?;
            inputs[t].data[i] = xm;
            let minus = case.forward(&inputs)?;
            inputs[t].data[i] = x0;
            let step = xp - xm;
            let numeric: f64 = plus
                .iter()
                .zip(&minus)
                .zip(&case.seed_grad)
                .map(|((p, m), r)| r * ((p - m) / step))
                .sum();
            let rel = (grad.data[i] - numeric).abs() / numeric.abs().max(1.0);
            max_rel = max_rel.max(rel);
            coordinates += 1;
        }
    }
    Ok(GradReport {
        op: case.op,
        max_rel_error: max_rel,
        coordinates,
    })
}
