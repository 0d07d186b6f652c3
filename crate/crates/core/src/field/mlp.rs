//! Fully-connected layers over row-major point batches.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// tanh approximation
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Linear,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            _ => Err(Error::InvalidArgument(format!("unknown activation {s:?}"))),
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Gelu => 0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh()),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
            }
        }
    }
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "linear" => Ok(OutputActivation::Linear),
            _ => Err(Error::InvalidArgument(format!("unknown output activation {s:?}"))),
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            OutputActivation::Linear => z,
        }
    }

    /// Derivative expressed through the output value `y = apply(z)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            OutputActivation::Sigmoid => y * (1.0 - y),
            OutputActivation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of the row-major `fan_out x fan_in` weight matrix.
    pub weight: usize,
    pub bias: usize,
}

/// `c (m x n) = beta * c + a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted extents bound every index touched by dgemm and
    // `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Activations kept from a batch forward pass: pre-activations and outputs
/// of every layer.
pub(crate) struct Tape {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

pub(crate) struct Mlp {
    pub layers: Vec<Layer>,
    pub hidden: Activation,
    pub output: OutputActivation,
}

impl Mlp {
    /// Forward pass over `batch` rows of `input` (row-major, `fan_in` wide).
    pub fn forward(&self, params: &[f64], input: &[f64], batch: usize) -> Tape {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let x: &[f64] = if li == 0 { input } else { &post[li - 1] };
            let w = &params[layer.weight..layer.weight + layer.fan_in * layer.fan_out];
            let bias = &params[layer.bias..layer.bias + layer.fan_out];
            let mut z = Vec::with_capacity(batch * layer.fan_out);
            for _ in 0..batch {
                z.extend_from_slice(bias);
            }
            // z += x * w^T
            gemm(batch, layer.fan_in, layer.fan_out, x, layer.fan_in, 1, w, 1, layer.fan_in, 1.0, &mut z);
            let last = li + 1 == self.layers.len();
            let a: Vec<f64> = if last {
                z.iter().map(|&v| self.output.apply(v)).collect()
            } else {
                z.iter().map(|&v| self.hidden.apply(v)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        Tape { pre, post }
    }

    /// Backward pass: adds parameter gradients into `grad`, whose index 0
    /// corresponds to parameter `grad_base`, and returns `dL/dinput`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        tape: &Tape,
        upstream: &[f64],
        batch: usize,
        grad: &mut [f64],
        grad_base: usize,
    ) -> Vec<f64> {
        let n = self.layers.len();
        let out = &tape.post[n - 1];
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(out)
            .map(|(g, &y)| g * self.output.derivative_from_output(y))
            .collect();
        for li in (0..n).rev() {
            let layer = self.layers[li];
            let x: &[f64] = if li == 0 { input } else { &tape.post[li - 1] };
            let (fi, fo) = (layer.fan_in, layer.fan_out);
            let (wo, bo) = (layer.weight - grad_base, layer.bias - grad_base);
            // dW += delta^T x
            gemm(fo, batch, fi, &delta, 1, fo, x, fi, 1, 1.0, &mut grad[wo..wo + fi * fo]);
            let gb = &mut grad[bo..bo + fo];
            for row in delta.chunks_exact(fo) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            // dx = delta W
            let w = &params[layer.weight..layer.weight + fi * fo];
            let mut dx = vec![0.0; batch * fi];
            gemm(batch, fo, fi, &delta, fo, 1, w, fi, 1, 0.0, &mut dx);
            if li > 0 {
                let z = &tape.pre[li - 1];
                for (d, &zv) in dx.iter_mut().zip(z) {
                    *d *= self.hidden.derivative(zv);
                }
            }
            delta = dx;
        }
        delta
    }
}
