//! Neural X-ray field: frequency positional encoding followed by a residual
//! MLP. In multi-head mode a 2D axial coordinate maps to a full column of
//! voxel intensities (head `j` is z-slice `j`); in single-head mode a 3D
//! coordinate maps to one intensity.
//!
//! Parameters live in one flat `Vec<f64>` so the optimizer and checkpoint
//! code can treat them uniformly. Activations are row-major
//! `[samples x features]` matrices.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const COORD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Multi,
    Single,
}

impl HeadMode {
    pub fn name(&self) -> &'static str {
        match self {
            HeadMode::Multi => "multi",
            HeadMode::Single => "single",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(HeadMode::Multi),
            "single" => Ok(HeadMode::Single),
            other => Err(Error::InvalidArgument(format!("unknown head mode `{other}`"))),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            HeadMode::Multi => 2,
            HeadMode::Single => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub frequencies: usize,
    pub include_raw: bool,
    pub input_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frequencies: 32,
            include_raw: true,
            input_dim: 2,
        }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        self.input_dim * (2 * self.frequencies + usize::from(self.include_raw))
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies == 0 || self.input_dim == 0 {
            return Err(Error::InvalidArgument(
                "encoder needs at least one frequency and one input dimension".into(),
            ));
        }
        Ok(())
    }

    /// Writes the encoding of `p` into `out`: raw coordinates (optional),
    /// then `sin(2^k pi p_d), cos(2^k pi p_d)` for each coordinate and band.
    pub fn encode_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        if p.len() != self.input_dim || out.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "encoder expects {} coords into {} slots, got {} into {}",
                self.input_dim,
                self.output_dim(),
                p.len(),
                out.len()
            )));
        }
        if let Some(c) = p.iter().find(|c| !(c.abs() <= 1.0 + COORD_TOLERANCE)) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {c} outside [-1, 1]"
            )));
        }
        let mut k = 0;
        if self.include_raw {
            out[..p.len()].copy_from_slice(p);
            k = p.len();
        }
        for &c in p {
            let mut freq = PI;
            for _ in 0..self.frequencies {
                let (s, co) = (freq * c).sin_cos();
                out[k] = s;
                out[k + 1] = co;
                k += 2;
                freq *= 2.0;
            }
        }
        Ok(())
    }

    pub fn encode(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(p, &mut out)?;
        Ok(out)
    }

    /// Encodes a batch of points into a row-major matrix.
    pub fn encode_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim;
        if !points.len().is_multiple_of(d) {
            return Err(Error::Shape(format!("{} coords is not a multiple of {d}", points.len())));
        }
        let e = self.output_dim();
        let mut out = vec![0.0; points.len() / d * e];
        for (p, row) in points.chunks_exact(d).zip(out.chunks_exact_mut(e)) {
            self.encode_into(p, row)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    /// Hidden fully connected layers (rectified-linear).
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    /// Skip-add every this many layers; 0 disables residuals.
    pub residual_period: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            layers: 12,
            width: 256,
            heads: 160,
            residual_period: 2,
        }
    }
}

/// `v = offset + scale * y` applied to raw network outputs `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputMap {
    pub offset: f64,
    pub scale: f64,
}

impl OutputMap {
    pub const IDENTITY: OutputMap = OutputMap {
        offset: 0.0,
        scale: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    pub mode: HeadMode,
    pub encoder: EncoderConfig,
    pub shape: ModelShape,
    pub output: OutputMap,
    /// Initial scale of the output layer weights.
    pub output_init_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    in_dim: usize,
    out_dim: usize,
    weight: usize,
    bias: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

fn layout(config: &FieldConfig) -> Vec<Block> {
    let s = &config.shape;
    let mut blocks = Vec::with_capacity(s.layers + 1);
    let mut offset = 0;
    let mut push = |in_dim: usize, out_dim: usize| {
        let b = Block {
            in_dim,
            out_dim,
            weight: offset,
            bias: offset + in_dim * out_dim,
        };
        offset += b.len();
        blocks.push(b);
    };
    push(config.encoder.output_dim(), s.width);
    for _ in 1..s.layers {
        push(s.width, s.width);
    }
    push(s.width, s.heads);
    blocks
}

/// Whether hidden layer `i` adds the hidden state from `period` layers back.
#[inline]
fn has_skip(i: usize, period: usize) -> bool {
    period > 0 && i >= period && i.is_multiple_of(period)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    config: FieldConfig,
    blocks: Vec<Block>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    input: Vec<f64>,
    /// Post-activation of each hidden layer, before the skip-add.
    activations: Vec<Vec<f64>>,
    /// Hidden state after each layer's skip-add.
    hidden: Vec<Vec<f64>>,
}

/// `c[m x n] = a[m x k] * b^T` where `b` is `[n x k]`, plus `beta * c`.
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: slice lengths are checked above and the strides describe
    // row-major matrices that fit inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m x n] += a^T * b` where `a` is `[k x m]`, `b` is `[k x n]`.
fn gemm_tn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: as in `gemm_nt`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m x n] = a[m x k] * b[k x n]`.
fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: as in `gemm_nt`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl FieldModel {
    /// He-uniform hidden layers, output layer uniform in
    /// `[-output_init_scale, output_init_scale] / sqrt(width)`, zero biases.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        let s = &config.shape;
        if s.layers == 0 || s.width == 0 || s.heads == 0 {
            return Err(Error::InvalidArgument(format!("degenerate model shape {s:?}")));
        }
        if config.encoder.input_dim != config.mode.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "{} mode needs {}-D encoder input, got {}",
                config.mode.name(),
                config.mode.input_dim(),
                config.encoder.input_dim
            )));
        }
        if config.mode == HeadMode::Single && s.heads != 1 {
            return Err(Error::InvalidArgument("single-head mode needs heads = 1".into()));
        }
        let blocks = layout(&config);
        let total = blocks.last().map(|b| b.bias + b.out_dim).unwrap_or(0);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = blocks.len() - 1;
        for (i, b) in blocks.iter().enumerate() {
            let bound = if i == last {
                config.output_init_scale / (b.in_dim as f64).sqrt()
            } else {
                (6.0 / b.in_dim as f64).sqrt()
            };
            for w in &mut params[b.weight..b.bias] {
                *w = if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 };
            }
        }
        Ok(Self {
            config,
            blocks,
            params,
        })
    }

    pub fn from_params(config: FieldConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(
            FieldConfig {
                output_init_scale: 0.0,
                ..config
            },
            0,
        )?;
        model.config = config;
        if params.len() != model.params.len() {
            return Err(Error::SizeMismatch {
                expected: model.params.len(),
                found: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn mode(&self) -> HeadMode {
        self.config.mode
    }

    pub fn heads(&self) -> usize {
        self.config.shape.heads
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Name of the parameter block holding flat index `index`.
    pub fn block_name(&self, index: usize) -> String {
        let last = self.blocks.len() - 1;
        for (i, b) in self.blocks.iter().enumerate() {
            if index < b.bias + b.out_dim {
                let layer = if i == last { "output".to_string() } else { format!("layer{i}") };
                let kind = if index < b.bias { "weight" } else { "bias" };
                return format!("{layer}.{kind}");
            }
        }
        format!("index {index} out of range")
    }

    /// Layer shapes `(in, out)` in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|b| (b.in_dim, b.out_dim)).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.config.encoder.output_dim()
    }

    /// Forward pass on `rows` encoded inputs; returns mapped outputs
    /// `[rows x heads]` and the cache for [`FieldModel::backward`].
    pub fn forward_cached(&self, encoded: &[f64], rows: usize) -> Result<(Vec<f64>, ForwardCache)> {
        let e = self.input_dim();
        if encoded.len() != rows * e {
            return Err(Error::Shape(format!(
                "expected {rows} x {e} encoded inputs, got {} values",
                encoded.len()
            )));
        }
        let hidden_layers = self.blocks.len() - 1;
        let period = self.config.shape.residual_period;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(hidden_layers);
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(hidden_layers);
        for (i, b) in self.blocks[..hidden_layers].iter().enumerate() {
            let x = if i == 0 { encoded } else { &hidden[i - 1][..] };
            let mut a = self.affine(b, x, rows);
            a.iter_mut().for_each(|v| *v = v.max(0.0));
            let h = if has_skip(i, period) {
                a.iter().zip(&hidden[i - period]).map(|(p, q)| p + q).collect()
            } else {
                a.clone()
            };
            activations.push(a);
            hidden.push(h);
        }
        let out_block = &self.blocks[hidden_layers];
        let mut out = self.affine(out_block, &hidden[hidden_layers - 1], rows);
        let map = self.config.output;
        out.iter_mut().for_each(|v| *v = map.offset + map.scale * *v);
        Ok((
            out,
            ForwardCache {
                rows,
                input: encoded.to_vec(),
                activations,
                hidden,
            },
        ))
    }

    pub fn forward(&self, encoded: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.forward_cached(encoded, rows).map(|(out, _)| out)
    }

    fn affine(&self, b: &Block, x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(rows * b.out_dim);
        let bias = &self.params[b.bias..b.bias + b.out_dim];
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        gemm_nt(
            rows,
            b.in_dim,
            b.out_dim,
            x,
            &self.params[b.weight..b.bias],
            1.0,
            &mut y,
        );
        y
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(outputs)
    /// for the mapped outputs `[rows x heads]`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) -> Result<()> {
        let rows = cache.rows;
        let heads = self.heads();
        if d_out.len() != rows * heads || grad.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "backward expects {} output grads and {} param grads, got {} and {}",
                rows * heads,
                self.params.len(),
                d_out.len(),
                grad.len()
            )));
        }
        let hidden_layers = self.blocks.len() - 1;
        let period = self.config.shape.residual_period;
        let scale = self.config.output.scale;
        let dy: Vec<f64> = d_out.iter().map(|g| g * scale).collect();

        // pending[i] accumulates d(loss)/d(hidden[i])
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; hidden_layers];
        let out_block = &self.blocks[hidden_layers];
        pending[hidden_layers - 1] =
            Some(self.backprop_affine(out_block, &dy, &cache.hidden[hidden_layers - 1], rows, grad, true));

        for i in (0..hidden_layers).rev() {
            let mut dz = pending[i].take().expect("gradient reaches every hidden layer");
            if has_skip(i, period) {
                add_into(&mut pending[i - period], &dz);
            }
            for (g, a) in dz.iter_mut().zip(&cache.activations[i]) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let b = &self.blocks[i];
            if i == 0 {
                self.backprop_affine(b, &dz, &cache.input, rows, grad, false);
            } else {
                let dx = self.backprop_affine(b, &dz, &cache.hidden[i - 1], rows, grad, true);
                add_into(&mut pending[i - 1], &dx);
            }
        }
        Ok(())
    }

    /// Given dY for `Y = X W^T + b`, accumulates dW and db; returns dX when asked.
    fn backprop_affine(
        &self,
        b: &Block,
        dy: &[f64],
        x: &[f64],
        rows: usize,
        grad: &mut [f64],
        want_dx: bool,
    ) -> Vec<f64> {
        gemm_tn_acc(b.out_dim, rows, b.in_dim, dy, x, &mut grad[b.weight..b.bias]);
        let db = &mut grad[b.bias..b.bias + b.out_dim];
        for row in dy.chunks_exact(b.out_dim) {
            for (g, d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        if !want_dx {
            return Vec::new();
        }
        let mut dx = vec![0.0; rows * b.in_dim];
        gemm_nn(rows, b.out_dim, b.in_dim, dy, &self.params[b.weight..b.bias], &mut dx);
        dx
    }

    /// Encodes `points` (`input_dim` coords each) and runs the forward pass.
    pub fn query(&self, points: &[f64]) -> Result<Vec<f64>> {
        let encoded = self.config.encoder.encode_batch(points)?;
        let rows = points.len() / self.config.encoder.input_dim;
        self.forward(&encoded, rows)
    }

    /// Column of `heads` intensities at axial position `xy`; head `j` is z-slice `j`.
    pub fn query_column(&self, xy: [f64; 2]) -> Result<Vec<f64>> {
        if self.mode() != HeadMode::Multi {
            return Err(Error::InvalidArgument(
                "column queries need a multi-head model".into(),
            ));
        }
        self.query(&xy)
    }

    /// Text header plus little-endian f32 parameter payload.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut header = String::new();
        header.push_str("format: nexf-checkpoint-v1\n");
        header.push_str(&format!("mode: {}\n", c.mode.name()));
        header.push_str(&format!("encoder.frequencies: {}\n", c.encoder.frequencies));
        header.push_str(&format!("encoder.include_raw: {}\n", c.encoder.include_raw));
        header.push_str(&format!("encoder.input_dim: {}\n", c.encoder.input_dim));
        header.push_str(&format!("model.layers: {}\n", c.shape.layers));
        header.push_str(&format!("model.width: {}\n", c.shape.width));
        header.push_str(&format!("model.heads: {}\n", c.shape.heads));
        header.push_str(&format!("model.residual_period: {}\n", c.shape.residual_period));
        header.push_str(&format!("model.output_offset: {}\n", c.output.offset));
        header.push_str(&format!("model.output_scale: {}\n", c.output.scale));
        let shapes: Vec<String> = self
            .layer_shapes()
            .iter()
            .map(|(i, o)| format!("{o}x{i}+{o}"))
            .collect();
        header.push_str(&format!("layers: {}\n", shapes.join(" ")));
        header.push_str(&format!("params: {}\n", self.params.len()));
        header.push_str("dtype: f32le\n\n");
        let mut out = header.into_bytes();
        out.reserve(self.params.len() * 4);
        for p in &self.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::Header("checkpoint header not terminated".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Header("checkpoint header is not utf-8".into()))?;
        let mut map = std::collections::HashMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Header(format!("bad checkpoint line `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Header(format!("checkpoint missing `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Header(format!("bad checkpoint value `{k}: {v}`")))
        }
        if get("format")? != "nexf-checkpoint-v1" || get("dtype")? != "f32le" {
            return Err(Error::Header("unsupported checkpoint format".into()));
        }
        let config = FieldConfig {
            mode: HeadMode::parse(&get("mode")?)?,
            encoder: EncoderConfig {
                frequencies: num("encoder.frequencies", get("encoder.frequencies")?)?,
                include_raw: num("encoder.include_raw", get("encoder.include_raw")?)?,
                input_dim: num("encoder.input_dim", get("encoder.input_dim")?)?,
            },
            shape: ModelShape {
                layers: num("model.layers", get("model.layers")?)?,
                width: num("model.width", get("model.width")?)?,
                heads: num("model.heads", get("model.heads")?)?,
                residual_period: num("model.residual_period", get("model.residual_period")?)?,
            },
            output: OutputMap {
                offset: num("model.output_offset", get("model.output_offset")?)?,
                scale: num("model.output_scale", get("model.output_scale")?)?,
            },
            output_init_scale: 0.0,
        };
        let declared: usize = num("params", get("params")?)?;
        let payload = &bytes[split + 2..];
        if payload.len() != declared * 4 {
            return Err(Error::SizeMismatch {
                expected: declared,
                found: payload.len() / 4,
            });
        }
        let params = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_params(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, v: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
        None => *slot = Some(v.to_vec()),
    }
}
