//! The coordinate network `p -> I`: an encoder followed by an MLP, with all
//! trainable values packed into one flat parameter vector.

mod encoding;
mod mlp;

use std::hash::{DefaultHasher, Hash, Hasher};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use encoding::{
    fourier_encode, hash_encode, EncoderSpec, FourierConfig, FourierEncoder, HashGrid,
    HashGridConfig, HASH_PRIMES,
};
pub use mlp::{Activation, OutputActivation};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::par::{fixed_chunks, Exec};
use crate::projector::{DifferentiableField, ScalarField};
use encoding::Corners;
use mlp::{Layer, Mlp};

/// Points per internal batch; chunk boundaries are fixed so reductions are
/// reproducible.
const POINT_CHUNK: usize = 512;

/// Encoder plus layer widths and activations.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldArch {
    pub encoder: EncoderSpec,
    /// Hidden layer widths; the output layer (width 1) is implicit.
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
}

impl FieldArch {
    pub fn hash_default() -> Self {
        Self::with_encoder(EncoderSpec::Hash(HashGridConfig::default()))
    }

    pub fn fourier_default() -> Self {
        Self::with_encoder(EncoderSpec::Fourier(FourierConfig::default()))
    }

    /// Two hidden layers of width 64, ReLU, sigmoid output.
    pub fn with_encoder(encoder: EncoderSpec) -> Self {
        Self {
            encoder,
            hidden: vec![64, 64],
            hidden_activation: Activation::Relu,
            output_activation: OutputActivation::Sigmoid,
        }
    }
}

/// A named contiguous range of the parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl ParamSlice {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ParamLayout {
    pub slices: Vec<ParamSlice>,
}

impl ParamLayout {
    fn push(&mut self, name: String, len: usize) -> usize {
        let offset = self.len();
        self.slices.push(ParamSlice { name, offset, len });
        offset
    }

    pub fn len(&self) -> usize {
        self.slices.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&ParamSlice> {
        self.slices.iter().find(|s| s.name == name)
    }

    /// Slice containing flat index `i`.
    pub fn slice_of(&self, i: usize) -> Option<&ParamSlice> {
        self.slices.iter().find(|s| s.range().contains(&i))
    }
}

/// Flat parameters together with their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn unpack(&self) -> Vec<(&str, &[f64])> {
        self.layout
            .slices
            .iter()
            .map(|s| (s.name.as_str(), &self.values[s.range()]))
            .collect()
    }

    /// Inverse of [`unpack`](Self::unpack): parts must come in layout order
    /// with matching lengths.
    pub fn pack(layout: &ParamLayout, parts: &[(&str, &[f64])]) -> Result<Self> {
        if parts.len() != layout.slices.len() {
            return Err(Error::Shape("wrong number of parameter slices".into()));
        }
        let mut values = Vec::with_capacity(layout.len());
        for (slice, (name, data)) in layout.slices.iter().zip(parts) {
            if slice.name != *name || slice.len != data.len() {
                return Err(Error::Shape(format!("slice {name} does not match layout")));
            }
            values.extend_from_slice(data);
        }
        Ok(Self {
            values,
            layout: layout.clone(),
        })
    }
}

#[derive(Clone, Debug)]
enum Encoder {
    Hash(HashGrid),
    Fourier(FourierEncoder),
    Identity,
}

/// Compiled architecture: knows the parameter layout and evaluates the
/// network for a given parameter vector.
#[derive(Clone, Debug)]
pub struct FieldModel {
    arch: FieldArch,
    layout: ParamLayout,
    encoder: Encoder,
    layers: Vec<Layer>,
    enc_dim: usize,
    /// Per-level multipliers on the hash features; empty means all ones.
    level_weights: Vec<f64>,
}

impl FieldModel {
    pub fn new(arch: FieldArch) -> Result<Self> {
        let mut layout = ParamLayout::default();
        let (encoder, enc_dim) = match &arch.encoder {
            EncoderSpec::Hash(cfg) => {
                let grid = HashGrid::new(cfg, 0)?;
                for (l, lv) in grid.levels.iter().enumerate() {
                    layout.push(format!("hash.level{l}"), lv.table_len * grid.features);
                }
                let d = grid.output_dim();
                (Encoder::Hash(grid), d)
            }
            EncoderSpec::Fourier(cfg) => {
                let enc = FourierEncoder::new(cfg)?;
                let d = enc.output_dim();
                (Encoder::Fourier(enc), d)
            }
            EncoderSpec::Identity => (Encoder::Identity, 2),
        };
        if arch.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        let mut widths = vec![enc_dim];
        widths.extend(&arch.hidden);
        widths.push(1);
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            let weight = layout.push(format!("mlp.{i}.weight"), w[0] * w[1]);
            let bias = layout.push(format!("mlp.{i}.bias"), w[1]);
            layers.push(Layer {
                fan_in: w[0],
                fan_out: w[1],
                weight,
                bias,
            });
        }
        Ok(Self {
            arch,
            layout,
            encoder,
            layers,
            enc_dim,
            level_weights: Vec::new(),
        })
    }

    /// Scales each hash level's features by `weights[l]` in both passes.
    /// An empty slice restores full weight. Other encoders ignore it.
    pub fn set_level_weights(&mut self, weights: &[f64]) -> Result<()> {
        if !weights.is_empty() && weights.len() != self.n_levels() {
            return Err(Error::Shape(format!(
                "{} level weights for {} levels",
                weights.len(),
                self.n_levels()
            )));
        }
        self.level_weights = if weights.iter().all(|&w| w == 1.0) { Vec::new() } else { weights.to_vec() };
        Ok(())
    }

    pub fn level_weights(&self) -> &[f64] {
        &self.level_weights
    }

    fn apply_level_weights(&self, rows: &mut [f64]) {
        if self.level_weights.is_empty() {
            return;
        }
        let f = self.enc_dim / self.level_weights.len();
        for row in rows.chunks_exact_mut(self.enc_dim) {
            for (part, &w) in row.chunks_exact_mut(f).zip(&self.level_weights) {
                for v in part {
                    *v *= w;
                }
            }
        }
    }

    /// Replaces the Fourier projection matrix (used when reloading a
    /// checkpoint that stored it explicitly).
    pub fn with_fourier_matrix(mut self, b: Vec<Vec2>) -> Result<Self> {
        match &self.encoder {
            Encoder::Fourier(e) if e.b.len() == b.len() => {
                self.encoder = Encoder::Fourier(FourierEncoder::from_matrix(b));
                Ok(self)
            }
            _ => Err(Error::Shape("Fourier matrix does not fit this model".into())),
        }
    }

    pub fn arch(&self) -> &FieldArch {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn encoding_dim(&self) -> usize {
        self.enc_dim
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.enc_dim];
        w.extend(self.layers.iter().map(|l| l.fan_out));
        w
    }

    pub fn hash_grid(&self) -> Option<&HashGrid> {
        match &self.encoder {
            Encoder::Hash(g) => Some(g),
            _ => None,
        }
    }

    pub fn fourier_encoder(&self) -> Option<&FourierEncoder> {
        match &self.encoder {
            Encoder::Fourier(e) => Some(e),
            _ => None,
        }
    }

    /// Hash tables `U(-1e-4, 1e-4)`, weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// biases zero.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.n_params()];
        if let Encoder::Hash(g) = &self.encoder {
            for v in &mut values[..g.n_params()] {
                *v = rng.random_range(-1e-4..1e-4);
            }
        }
        for layer in &self.layers {
            let bound = (6.0 / layer.fan_in as f64).sqrt();
            for v in &mut values[layer.weight..layer.weight + layer.fan_in * layer.fan_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }

    fn mlp(&self) -> Mlp {
        Mlp {
            layers: self.layers.clone(),
            hidden: self.arch.hidden_activation,
            output: self.arch.output_activation,
        }
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                params.len(),
                self.n_params()
            )));
        }
        Ok(())
    }

    fn encode_batch(&self, params: &[f64], points: &[Vec2], feats: &mut [f64], corners: &mut [Corners]) {
        let d = self.enc_dim;
        match &self.encoder {
            Encoder::Hash(g) => {
                let nl = g.n_levels();
                for (i, p) in points.iter().enumerate() {
                    g.encode(params, *p, &mut feats[i * d..(i + 1) * d], &mut corners[i * nl..(i + 1) * nl]);
                }
                self.apply_level_weights(feats);
            }
            Encoder::Fourier(e) => {
                for (i, p) in points.iter().enumerate() {
                    e.encode(*p, &mut feats[i * d..(i + 1) * d]);
                }
            }
            Encoder::Identity => {
                for (i, p) in points.iter().enumerate() {
                    feats[2 * i] = p[0];
                    feats[2 * i + 1] = p[1];
                }
            }
        }
    }

    fn n_levels(&self) -> usize {
        self.hash_grid().map_or(0, |g| g.n_levels())
    }

    fn forward_chunk(&self, params: &[f64], points: &[Vec2], out: &mut [f64]) {
        let b = points.len();
        let mut feats = vec![0.0; b * self.enc_dim];
        let mut corners = vec![Corners::default(); b * self.n_levels()];
        self.encode_batch(params, points, &mut feats, &mut corners);
        let tape = self.mlp().forward(params, &feats, b);
        out.copy_from_slice(tape.post.last().expect("at least one layer"));
    }

    /// Evaluates the field at every point.
    pub fn forward_batch(&self, params: &[f64], points: &[Vec2], out: &mut [f64], exec: Exec) -> Result<()> {
        self.check_len(params)?;
        if out.len() != points.len() {
            return Err(Error::Shape("output buffer length differs from point count".into()));
        }
        exec.for_each_chunk_mut(out, POINT_CHUNK, |ci, o| {
            let start = ci * POINT_CHUNK;
            self.forward_chunk(params, &points[start..start + o.len()], o);
        });
        Ok(())
    }

    /// Reverse-mode pass for `L = sum_k upstream[k] * F(points[k])`: adds
    /// `dL/dparams` into `param_grad` and writes `dL/dpoints` into
    /// `coord_grad`. Hash-table gradients are scattered in point order.
    pub fn backward_batch(
        &self,
        params: &[f64],
        points: &[Vec2],
        upstream: &[f64],
        param_grad: &mut [f64],
        coord_grad: &mut [Vec2],
        exec: Exec,
    ) -> Result<()> {
        self.check_len(params)?;
        if param_grad.len() != self.n_params() {
            return Err(Error::Shape("gradient buffer has the wrong length".into()));
        }
        if upstream.len() != points.len() || coord_grad.len() != points.len() {
            return Err(Error::Shape("upstream/coordinate buffers differ from point count".into()));
        }
        if let Some(index) = upstream.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "upstream gradient".into(),
                index,
            });
        }
        let mlp = self.mlp();
        let mlp_start = self.layers[0].weight;
        let d = self.enc_dim;
        let nl = self.n_levels();
        let chunks = fixed_chunks(points.len(), POINT_CHUNK);
        let results = exec.map(chunks.len(), |ci| {
            let range = chunks[ci].clone();
            let pts = &points[range.clone()];
            let b = pts.len();
            let mut feats = vec![0.0; b * d];
            let mut corners = vec![Corners::default(); b * nl];
            self.encode_batch(params, pts, &mut feats, &mut corners);
            let tape = mlp.forward(params, &feats, b);
            let mut grad = vec![0.0; self.n_params() - mlp_start];
            let mut dfeat = mlp.backward(params, &feats, &tape, &upstream[range], b, &mut grad, mlp_start);
            self.apply_level_weights(&mut dfeat);
            let mut cg = vec![[0.0; 2]; b];
            for i in 0..b {
                let df = &dfeat[i * d..(i + 1) * d];
                cg[i] = self.encoding_vjp(params, pts[i], df, &corners[i * nl..(i + 1) * nl]);
            }
            (grad, dfeat, corners, cg)
        });
        for (ci, (grad, dfeat, corners, cg)) in results.into_iter().enumerate() {
            for (acc, g) in param_grad[mlp_start..].iter_mut().zip(&grad) {
                *acc += g;
            }
            coord_grad[chunks[ci].clone()].copy_from_slice(&cg);
            if let Encoder::Hash(g) = &self.encoder {
                let f = g.features;
                for i in 0..chunks[ci].len() {
                    for l in 0..nl {
                        let c = &corners[i * nl + l];
                        let df = &dfeat[i * d + l * f..i * d + (l + 1) * f];
                        for k in 0..4 {
                            for (acc, v) in param_grad[c.base[k]..c.base[k] + f].iter_mut().zip(df) {
                                *acc += c.w[k] * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn encoding_vjp(&self, params: &[f64], p: Vec2, dfeat: &[f64], corners: &[Corners]) -> Vec2 {
        let mut g = [0.0, 0.0];
        match &self.encoder {
            Encoder::Hash(grid) => {
                let f = grid.features;
                for (l, c) in corners.iter().enumerate() {
                    let df = &dfeat[l * f..(l + 1) * f];
                    for k in 0..4 {
                        let dot: f64 = params[c.base[k]..c.base[k] + f]
                            .iter()
                            .zip(df)
                            .map(|(e, d)| e * d)
                            .sum();
                        g[0] += c.dwdx[k] * dot;
                        g[1] += c.dwdy[k] * dot;
                    }
                }
            }
            Encoder::Fourier(e) => e.vjp(p, dfeat, &mut g),
            Encoder::Identity => g = [dfeat[0], dfeat[1]],
        }
        g
    }

    /// Fingerprint of the piecewise structure at `points`: hash cell
    /// indices (and clamping) per level and the ReLU on/off pattern. Two
    /// parameter/point configurations with equal fingerprints lie in the
    /// same smooth piece.
    pub fn kink_signature(&self, params: &[f64], points: &[Vec2]) -> u64 {
        let mut h = DefaultHasher::new();
        if let Encoder::Hash(g) = &self.encoder {
            for p in points {
                g.cell_ids(*p).hash(&mut h);
            }
        }
        if self.arch.hidden_activation == Activation::Relu && self.layers.len() > 1 {
            let b = points.len();
            let mut feats = vec![0.0; b * self.enc_dim];
            let mut corners = vec![Corners::default(); b * self.n_levels()];
            self.encode_batch(params, points, &mut feats, &mut corners);
            let tape = self.mlp().forward(params, &feats, b);
            for z in &tape.pre[..tape.pre.len() - 1] {
                for &v in z {
                    (v > 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Distance from the nearest ReLU kink over all hidden units at `points`.
    pub fn min_abs_preactivation(&self, params: &[f64], points: &[Vec2]) -> f64 {
        if self.layers.len() < 2 || self.arch.hidden_activation != Activation::Relu {
            return f64::INFINITY;
        }
        let b = points.len();
        let mut feats = vec![0.0; b * self.enc_dim];
        let mut corners = vec![Corners::default(); b * self.n_levels()];
        self.encode_batch(params, points, &mut feats, &mut corners);
        let tape = self.mlp().forward(params, &feats, b);
        tape.pre[..tape.pre.len() - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn bind<'a>(&'a self, params: &'a [f64]) -> BoundField<'a> {
        BoundField {
            model: self,
            params,
            exec: Exec::default(),
        }
    }
}

/// A model paired with concrete parameters, usable by the projector.
#[derive(Clone, Copy)]
pub struct BoundField<'a> {
    pub model: &'a FieldModel,
    pub params: &'a [f64],
    pub exec: Exec,
}

impl BoundField<'_> {
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

impl ScalarField for BoundField<'_> {
    fn eval_batch(&self, points: &[Vec2], out: &mut [f64]) {
        self.model
            .forward_batch(self.params, points, out, self.exec)
            .expect("bound field parameters match the model");
    }
}

impl DifferentiableField for BoundField<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn backward_batch(
        &self,
        points: &[Vec2],
        upstream: &[f64],
        param_grad: &mut [f64],
        coord_grad: &mut [Vec2],
    ) -> Result<()> {
        self.model
            .backward_batch(self.params, points, upstream, param_grad, coord_grad, self.exec)
    }
}

/// `I = F(p)` for one coordinate.
pub fn field_forward(model: &FieldModel, params: &[f64], p: Vec2) -> Result<f64> {
    let mut out = [0.0];
    model.forward_batch(params, &[p], &mut out, Exec::Sequential)?;
    Ok(out[0])
}

/// Gradients of `sum_k upstream[k] * F(points[k])` with respect to the
/// parameters and to every coordinate.
pub fn field_backward(
    model: &FieldModel,
    params: &[f64],
    points: &[Vec2],
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<Vec2>)> {
    let mut pg = vec![0.0; model.n_params()];
    let mut cg = vec![[0.0; 2]; points.len()];
    model.backward_batch(params, points, upstream, &mut pg, &mut cg, Exec::default())?;
    Ok((pg, cg))
}
