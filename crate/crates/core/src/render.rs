//! Projection rendering: the soft log-sum-exp law, the Beer–Lambert variant,
//! trilinear volume sampling and the ground-truth projector.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Ray;
use crate::sampling::{ray_unit, sample_positions};
use crate::volume::{Dims, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderLaw {
    Soft,
    BeerLambert,
}

impl RenderLaw {
    pub fn name(&self) -> &'static str {
        match self {
            RenderLaw::Soft => "soft",
            RenderLaw::BeerLambert => "beer_lambert",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(RenderLaw::Soft),
            "beer_lambert" | "beer-lambert" => Ok(RenderLaw::BeerLambert),
            other => Err(Error::InvalidArgument(format!("unknown render law `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    /// Bias `C`.
    pub bias: f64,
    /// Scale `S`.
    pub scale: f64,
    pub law: RenderLaw,
    /// Intensity of air for the Beer–Lambert attenuation map.
    pub air: f64,
    /// Intensity span mapped to unit attenuation.
    pub attenuation_normalizer: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            bias: 1000.0,
            scale: 1200.0,
            law: RenderLaw::Soft,
            air: -1000.0,
            attenuation_normalizer: 2000.0,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite() && self.bias.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "render scale must be positive and bias finite, got S={} C={}",
                self.scale, self.bias
            )));
        }
        if !(self.attenuation_normalizer > 0.0) {
            return Err(Error::InvalidArgument("attenuation normalizer must be positive".into()));
        }
        Ok(())
    }
}

/// `S * (log sum_i exp((v_i - C) / S) - log rate)`, evaluated with the
/// maximum exponent factored out.
pub fn render_soft(samples: &[f64], rate: f64, params: &RenderParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to render".into()));
    }
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {rate}")));
    }
    Ok(soft_value(samples, rate, params))
}

fn soft_value(samples: &[f64], rate: f64, params: &RenderParams) -> f64 {
    let inv_s = 1.0 / params.scale;
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = samples.iter().map(|&v| ((v - max) * inv_s).exp()).sum();
    (max - params.bias) + params.scale * (sum.ln() - rate.ln())
}

/// Attenuation line integral `sum_i mu(v_i) * step` with
/// `mu(v) = max(v - air, 0) / normalizer`.
pub fn render_beer_lambert(samples: &[f64], step: f64, params: &RenderParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to render".into()));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    Ok(beer_lambert_value(samples, step, params))
}

fn beer_lambert_value(samples: &[f64], step: f64, params: &RenderParams) -> f64 {
    samples
        .iter()
        .map(|&v| (v - params.air).max(0.0) / params.attenuation_normalizer)
        .sum::<f64>()
        * step
}

/// Renders one detector pixel with the configured law; for Beer–Lambert the
/// step is `1 / rate` voxel units.
pub fn render(samples: &[f64], rate: f64, params: &RenderParams) -> Result<f64> {
    match params.law {
        RenderLaw::Soft => render_soft(samples, rate, params),
        RenderLaw::BeerLambert => render_beer_lambert(samples, 1.0 / rate, params),
    }
}

/// Renders a pixel and writes d(pixel)/d(sample) into `grad`.
pub fn render_with_grad(samples: &[f64], rate: f64, params: &RenderParams, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(samples.len(), grad.len());
    match params.law {
        RenderLaw::Soft => {
            let inv_s = 1.0 / params.scale;
            let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (g, &v) in grad.iter_mut().zip(samples) {
                *g = ((v - max) * inv_s).exp();
                sum += *g;
            }
            let inv_sum = 1.0 / sum;
            grad.iter_mut().for_each(|g| *g *= inv_sum);
            (max - params.bias) + params.scale * (sum.ln() - rate.ln())
        }
        RenderLaw::BeerLambert => {
            let step = 1.0 / rate;
            let slope = step / params.attenuation_normalizer;
            for (g, &v) in grad.iter_mut().zip(samples) {
                *g = if v > params.air { slope } else { 0.0 };
            }
            beer_lambert_value(samples, step, params)
        }
    }
}

/// Continuous voxel index of a normalized coordinate, clamped to the grid.
#[inline]
fn grid_coord(p: f64, n: usize) -> (usize, usize, f64) {
    let c = ((p + 1.0) * 0.5 * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

/// Trilinear interpolation at a normalized position; voxel centers sit at
/// `-1 + (2i + 1) / n`. Positions outside the grid clamp to the boundary.
pub fn trilinear(volume: &Volume, p: [f64; 3]) -> f64 {
    let d = volume.dims();
    let (x0, x1, fx) = grid_coord(p[0], d.nx);
    let (y0, y1, fy) = grid_coord(p[1], d.ny);
    let (z0, z1, fz) = grid_coord(p[2], d.nz);
    let v = |x, y, z| volume.get(x, y, z) as f64;
    let c00 = v(x0, y0, z0) * (1.0 - fx) + v(x1, y0, z0) * fx;
    let c10 = v(x0, y1, z0) * (1.0 - fx) + v(x1, y1, z0) * fx;
    let c01 = v(x0, y0, z1) * (1.0 - fx) + v(x1, y0, z1) * fx;
    let c11 = v(x0, y1, z1) * (1.0 - fx) + v(x1, y1, z1) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Detector image; one column per ray, one row per z slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl ProjectionImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::SizeMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.height).map(|row| self.get(col, row)).collect()
    }

    /// Raw variant: volume file with dims `width x height x 1`.
    pub fn to_volume(&self) -> Result<Volume> {
        Volume::new(
            Dims::new(self.width, self.height, 1),
            [1.0; 3],
            self.pixels.iter().map(|&p| p as f32).collect(),
        )
    }

    pub fn from_volume(volume: &Volume) -> Result<Self> {
        let d = volume.dims();
        if d.nz != 1 {
            return Err(Error::Dimension(format!("projection image needs nz = 1, got {d}")));
        }
        Self::new(d.nx, d.ny, volume.data().iter().map(|&v| v as f64).collect())
    }

    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_volume()?.save(path)
    }

    pub fn load_raw(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_volume(&Volume::load(path)?)
    }

    /// 16-bit binary PGM, min-max scaled to the full range.
    pub fn to_pgm(&self) -> (Vec<u8>, f64, f64) {
        let (lo, hi) = self
            .pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for &p in &self.pixels {
            let q = ((p - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        (out, lo, hi)
    }

    /// Writes `<path>` as PGM and `<path>.scale` with the value mapping.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (bytes, lo, hi) = self.to_pgm();
        fs::write(path, bytes)?;
        let mut sidecar = fs::File::create(path.with_extension("pgm.scale"))?;
        writeln!(sidecar, "min: {lo}")?;
        writeln!(sidecar, "max: {hi}")?;
        writeln!(sidecar, "maxval: 65535")?;
        Ok(())
    }
}

/// Normalized z of detector row `row`.
#[inline]
pub fn row_z(row: usize, nz: usize) -> f64 {
    Volume::voxel_center(row, nz)
}

/// Renders one column per ray; each of the `nz` rows samples the volume on its
/// own slice at the ray's sample positions.
pub fn project_volume(
    volume: &Volume,
    rays: &[Ray],
    rate: f64,
    params: &RenderParams,
) -> Result<ProjectionImage> {
    params.validate()?;
    if rays.is_empty() {
        return Err(Error::InvalidArgument("no rays to project".into()));
    }
    let dims = volume.dims();
    let unit = ray_unit(dims);
    let columns: Vec<Vec<f64>> = rays
        .par_iter()
        .enumerate()
        .map(|(k, ray)| {
            let positions = sample_positions(ray, rate, unit)?;
            if positions.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "ray {k} has no samples at rate {rate}"
                )));
            }
            let mut samples = vec![0.0; positions.len()];
            (0..dims.nz)
                .map(|row| {
                    let z = row_z(row, dims.nz);
                    for (s, p) in samples.iter_mut().zip(&positions) {
                        *s = trilinear(volume, [p[0], p[1], z]);
                    }
                    render(&samples, rate, params)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let (width, height) = (rays.len(), dims.nz);
    let mut pixels = vec![0.0; width * height];
    for (col, column) in columns.iter().enumerate() {
        for (row, &v) in column.iter().enumerate() {
            pixels[row * width + col] = v;
        }
    }
    ProjectionImage::new(width, height, pixels)
}
