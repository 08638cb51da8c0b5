//! Differentiable pipeline (encoder -> MLP -> renderer), Adam, the training
//! loop and full-volume reconstruction.
//!
//! The gradient engine is a fixed-topology reverse pass: the renderer's
//! per-sample derivatives feed [`FieldModel::backward`].

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FieldModel, HeadMode};
use crate::geometry::Ray;
use crate::render::{render_with_grad, row_z, ProjectionImage, RenderParams};
use crate::sampling::{plan_ray, stream, SamplerConfig};
use crate::volume::{Dims, Volume};

/// Rays per parallel work unit. Fixed so the gradient reduction order does
/// not depend on the thread count.
const RAYS_PER_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub after: f64,
    pub switch_iteration: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            after: 1e-4,
            switch_iteration: 20_000,
        }
    }
}

impl LrSchedule {
    /// Learning rate used for (0-based) `iteration`.
    pub fn at(&self, iteration: usize) -> f64 {
        if iteration < self.switch_iteration {
            self.initial
        } else {
            self.after
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub lr: LrSchedule,
    pub sampler: SamplerConfig,
    pub render: RenderParams,
    /// Detector rows supervised per ray by a single-head model; 0 means all.
    pub single_head_rows: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            batch_rays: 64,
            lr: LrSchedule::default(),
            sampler: SamplerConfig::default(),
            render: RenderParams::default(),
            single_head_rows: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_rays == 0 {
            return Err(Error::InvalidArgument(
                "iterations and batch rays must be positive".into(),
            ));
        }
        if !(self.lr.initial > 0.0 && self.lr.after > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.lr.switch_iteration > self.iterations {
            return Err(Error::InvalidArgument(format!(
                "lr switch iteration {} exceeds iterations {}",
                self.lr.switch_iteration, self.iterations
            )));
        }
        self.sampler.validate()?;
        self.render.validate()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Applies one update. A non-finite gradient leaves everything untouched
    /// and reports the offending flat index.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> std::result::Result<(), usize> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.first.len());
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(i);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Sample positions and rate for one ray occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub rate: f64,
    pub positions: Vec<[f64; 2]>,
}

/// Builds the field inputs for a ray: one 2D point per sample in multi-head
/// mode, or one `(x, y, z_row)` point per (row, sample) in single-head mode.
fn field_inputs(model: &FieldModel, samples: &RaySamples, rows: &[usize], nz: usize) -> Vec<f64> {
    match model.mode() {
        HeadMode::Multi => samples.positions.iter().flat_map(|p| [p[0], p[1]]).collect(),
        HeadMode::Single => rows
            .iter()
            .flat_map(|&r| {
                let z = row_z(r, nz);
                samples.positions.iter().flat_map(move |p| [p[0], p[1], z])
            })
            .collect(),
    }
}

/// Intensity of sample `i` on detector row slot `k` from the forward output.
#[inline]
fn output_index(mode: HeadMode, n: usize, heads: usize, i: usize, k: usize, row: usize) -> usize {
    match mode {
        HeadMode::Multi => i * heads + row,
        HeadMode::Single => k * n + i,
    }
}

/// Renders the predicted pixels of `rows` for one ray.
pub fn render_rows(
    model: &FieldModel,
    samples: &RaySamples,
    rows: &[usize],
    nz: usize,
    params: &RenderParams,
) -> Result<Vec<f64>> {
    let n = samples.positions.len();
    let out = model.query(&field_inputs(model, samples, rows, nz))?;
    let mut column = vec![0.0; n];
    let mut grad = vec![0.0; n];
    Ok(rows
        .iter()
        .enumerate()
        .map(|(k, &row)| {
            for (i, c) in column.iter_mut().enumerate() {
                *c = out[output_index(model.mode(), n, model.heads(), i, k, row)];
            }
            render_with_grad(&column, samples.rate, params, &mut grad)
        })
        .collect())
}

/// Squared error of one ray averaged over `rows`, with its parameter gradient
/// scaled by `weight` accumulated into `grad`. Returns the unweighted loss.
#[allow(clippy::too_many_arguments)]
pub fn ray_loss_into(
    model: &FieldModel,
    samples: &RaySamples,
    target: &[f64],
    rows: &[usize],
    nz: usize,
    params: &RenderParams,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let n = samples.positions.len();
    if n == 0 {
        return Err(Error::InvalidArgument("ray has no samples".into()));
    }
    if rows.is_empty() || target.len() != nz {
        return Err(Error::Shape(format!(
            "target column has {} rows for nz = {nz}",
            target.len()
        )));
    }
    if model.mode() == HeadMode::Multi && model.heads() != nz {
        return Err(Error::Shape(format!(
            "model has {} heads but the detector has {nz} rows",
            model.heads()
        )));
    }
    let mode = model.mode();
    let heads = model.heads();
    let inputs = field_inputs(model, samples, rows, nz);
    let encoded = model.config().encoder.encode_batch(&inputs)?;
    let batch = inputs.len() / model.config().encoder.input_dim;
    let (out, cache) = model.forward_cached(&encoded, batch)?;

    let mut d_out = vec![0.0; out.len()];
    let mut column = vec![0.0; n];
    let mut pixel_grad = vec![0.0; n];
    let mut loss = 0.0;
    let inv_rows = 1.0 / rows.len() as f64;
    for (k, &row) in rows.iter().enumerate() {
        for (i, c) in column.iter_mut().enumerate() {
            *c = out[output_index(mode, n, heads, i, k, row)];
        }
        let pixel = render_with_grad(&column, samples.rate, params, &mut pixel_grad);
        let residual = pixel - target[row];
        loss += residual * residual * inv_rows;
        let scale = weight * 2.0 * residual * inv_rows;
        for (i, g) in pixel_grad.iter().enumerate() {
            d_out[output_index(mode, n, heads, i, k, row)] += scale * g;
        }
    }
    model.backward(&cache, &d_out, grad)?;
    Ok(loss)
}

/// Loss and full parameter gradient of one ray over all detector rows.
pub fn ray_loss(
    model: &FieldModel,
    samples: &RaySamples,
    target: &[f64],
    params: &RenderParams,
) -> Result<(f64, Vec<f64>)> {
    let nz = target.len();
    let rows: Vec<usize> = (0..nz).collect();
    let mut grad = vec![0.0; model.param_count()];
    let loss = ray_loss_into(model, samples, target, &rows, nz, params, 1.0, &mut grad)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: FieldModel,
    pub history: Vec<LossRecord>,
}

/// Training problem: rays, their ground-truth columns, and the voxel pitch.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub rays: &'a [Ray],
    pub image: &'a ProjectionImage,
    /// Normalized length of one sampling unit.
    pub unit: f64,
}

struct Slot {
    ray: usize,
    samples: RaySamples,
    rows: Vec<usize>,
}

fn plan_slot(cfg: &TrainConfig, set: &TrainSet, model: &FieldModel, iteration: usize, slot: usize, ray: usize) -> Result<Slot> {
    let mut rng = stream(cfg.seed, iteration as u64, slot as u64);
    let (rate, positions) = plan_ray(&cfg.sampler, &mut rng, &set.rays[ray], set.unit)?;
    let nz = set.image.height;
    let rows = match model.mode() {
        HeadMode::Single if cfg.single_head_rows > 0 && cfg.single_head_rows < nz => {
            let mut r = sample_indices(&mut rng, nz, cfg.single_head_rows).into_vec();
            r.sort_unstable();
            r
        }
        _ => (0..nz).collect(),
    };
    Ok(Slot {
        ray,
        samples: RaySamples { rate, positions },
        rows,
    })
}

/// Mean loss and mean gradient of one batch, reduced in a fixed order.
fn batch_gradient(model: &FieldModel, set: &TrainSet, cfg: &TrainConfig, slots: &[Slot]) -> Result<(f64, Vec<f64>)> {
    let weight = 1.0 / slots.len() as f64;
    let nz = set.image.height;
    let partials: Vec<(f64, Vec<f64>)> = slots
        .par_chunks(RAYS_PER_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; model.param_count()];
            let mut loss = 0.0;
            for slot in chunk {
                let target = set.image.column(slot.ray);
                loss += ray_loss_into(
                    model,
                    &slot.samples,
                    &target,
                    &slot.rows,
                    nz,
                    &cfg.render,
                    weight,
                    &mut grad,
                )? * weight;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut grad) = iter.next().expect("batch is nonempty");
    for (l, g) in iter {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

/// Trains `model` in place of a fresh copy. `on_iteration` sees the model
/// after each update and may stop the run by returning an error.
pub fn train(
    mut model: FieldModel,
    set: &TrainSet,
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&LossRecord, &FieldModel) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if set.rays.len() != set.image.width {
        return Err(Error::Shape(format!(
            "{} rays for a {}-column image",
            set.rays.len(),
            set.image.width
        )));
    }
    if model.mode() == HeadMode::Multi && model.heads() != set.image.height {
        return Err(Error::Shape(format!(
            "model has {} heads but the image has {} rows",
            model.heads(),
            set.image.height
        )));
    }
    let mut adam = AdamState::new(model.param_count());
    let mut history = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let mut pick = stream(cfg.seed, iteration as u64, u64::MAX);
        let chosen: Vec<usize> = (0..cfg.batch_rays)
            .map(|_| pick.gen_range(0..set.rays.len()))
            .collect();
        let slots = chosen
            .iter()
            .enumerate()
            .map(|(slot, &ray)| plan_slot(cfg, set, &model, iteration, slot, ray))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = batch_gradient(&model, set, cfg, &slots)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                message: format!("loss is {loss}"),
            });
        }
        let lr = cfg.lr.at(iteration);
        adam.step(model.params_mut(), &grad, lr)
            .map_err(|i| Error::Divergence {
                iteration,
                message: format!("non-finite gradient in {}", model.block_name(i)),
            })?;
        let record = LossRecord { iteration, loss, lr };
        history.push(record);
        on_iteration(&record, &model)?;
    }
    Ok(TrainOutput { model, history })
}

/// Anything that maps batches of coordinates to intensities.
pub trait Field: Sync {
    fn mode(&self) -> HeadMode;
    fn heads(&self) -> usize;
    /// Points are packed 2 (multi) or 3 (single) coords each; returns `heads`
    /// values per point.
    fn query(&self, points: &[f64]) -> Result<Vec<f64>>;
}

impl Field for FieldModel {
    fn mode(&self) -> HeadMode {
        FieldModel::mode(self)
    }

    fn heads(&self) -> usize {
        FieldModel::heads(self)
    }

    fn query(&self, points: &[f64]) -> Result<Vec<f64>> {
        FieldModel::query(self, points)
    }
}

/// Evaluates the field on every voxel center of `dims`.
pub fn reconstruct<F: Field>(field: &F, dims: Dims) -> Result<Volume> {
    if field.mode() == HeadMode::Multi && field.heads() != dims.nz {
        return Err(Error::Shape(format!(
            "model has {} heads but the volume has {} slices",
            field.heads(),
            dims.nz
        )));
    }
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    // One row of x for each y; slices are filled per row.
    let rows: Vec<Vec<f64>> = (0..ny)
        .into_par_iter()
        .map(|y| {
            let yc = Volume::voxel_center(y, ny);
            let mut values = vec![0.0; nx * nz];
            match field.mode() {
                HeadMode::Multi => {
                    let points: Vec<f64> = (0..nx).flat_map(|x| [Volume::voxel_center(x, nx), yc]).collect();
                    let out = field.query(&points)?;
                    for x in 0..nx {
                        for z in 0..nz {
                            values[z * nx + x] = out[x * nz + z];
                        }
                    }
                }
                HeadMode::Single => {
                    let points: Vec<f64> = (0..nz)
                        .flat_map(|z| {
                            let zc = Volume::voxel_center(z, nz);
                            (0..nx).flat_map(move |x| [Volume::voxel_center(x, nx), yc, zc])
                        })
                        .collect();
                    values = field.query(&points)?;
                }
            }
            Ok(values)
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0f32; dims.len()];
    for (y, row) in rows.iter().enumerate() {
        for z in 0..nz {
            for x in 0..nx {
                data[x + nx * (y + ny * z)] = row[z * nx + x] as f32;
            }
        }
    }
    Volume::new(dims, [1.0; 3], data)
}
