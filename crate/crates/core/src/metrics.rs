//! Volume-to-volume quality metrics.
//!
//! SSIM uses a 7x7x7 uniform window over valid (fully interior) positions,
//! `K1 = 0.01`, `K2 = 0.03` and sample covariance, matching scikit-image's
//! `structural_similarity(..., gaussian_weights=False, win_size=7)`.

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_DICE_THRESHOLD: f64 = 1000.0;
/// PSNR at which the Overall score saturates.
pub const OVERALL_PSNR_CAP: f64 = 40.0;

fn same_dims(a: &Volume, b: &Volume) -> Result<Dims> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "metric inputs differ in shape: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(a.dims())
}

fn mse_masked(a: &Volume, b: &Volume, mask: Option<&[bool]>) -> Result<(f64, usize)> {
    same_dims(a, b)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            let d = x as f64 - y as f64;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    Ok((sum / count as f64, count))
}

fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    }
}

/// `10 log10(range^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr(a: &Volume, b: &Volume, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!("data range must be positive, got {data_range}")));
    }
    let (mse, _) = mse_masked(a, b, None)?;
    Ok(psnr_from_mse(mse, data_range))
}

/// PSNR restricted to voxels where `mask` is set.
pub fn psnr_masked(a: &Volume, b: &Volume, mask: &[bool], data_range: f64) -> Result<f64> {
    if mask.len() != a.dims().len() {
        return Err(Error::Shape("mask size differs from volume".into()));
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!("data range must be positive, got {data_range}")));
    }
    let (mse, _) = mse_masked(a, b, Some(mask))?;
    Ok(psnr_from_mse(mse, data_range))
}

/// Sums over every valid window along one axis of a row-major (x-fastest) grid.
fn window_sum_axis(src: &[f64], dims: [usize; 3], axis: usize, w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] + 1 - w;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let base = x + dims[0] * (y + dims[1] * z);
                let mut s = 0.0;
                for k in 0..w {
                    s += src[base + k * stride];
                }
                out[x + out_dims[0] * (y + out_dims[1] * z)] = s;
            }
        }
    }
    (out, out_dims)
}

fn window_mean(src: &[f64], dims: Dims, w: usize) -> Vec<f64> {
    let d = [dims.nx, dims.ny, dims.nz];
    let (s, d) = window_sum_axis(src, d, 0, w);
    let (s, d) = window_sum_axis(&s, d, 1, w);
    let (s, _) = window_sum_axis(&s, d, 2, w);
    let inv = 1.0 / (w * w * w) as f64;
    s.into_iter().map(|v| v * inv).collect()
}

/// Mean local SSIM over all valid 7x7x7 windows.
pub fn ssim(a: &Volume, b: &Volume, data_range: f64) -> Result<f64> {
    let dims = same_dims(a, b)?;
    let w = SSIM_WINDOW;
    if dims.nx < w || dims.ny < w || dims.nz < w {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {w} voxels per axis, got {dims}"
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!("data range must be positive, got {data_range}")));
    }
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let ux = window_mean(&x, dims, w);
    let uy = window_mean(&y, dims, w);
    let uxx = window_mean(&xx, dims, w);
    let uyy = window_mean(&yy, dims, w);
    let uxy = window_mean(&xy, dims, w);
    let n = (w * w * w) as f64;
    let cov_norm = n / (n - 1.0);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    for i in 0..ux.len() {
        let vx = cov_norm * (uxx[i] - ux[i] * ux[i]);
        let vy = cov_norm * (uyy[i] - uy[i] * uy[i]);
        let vxy = cov_norm * (uxy[i] - ux[i] * uy[i]);
        let num = (2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2);
        let den = (ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / ux.len() as f64)
}

/// `2|A ∩ B| / (|A| + |B|)` with masks `v > threshold`; two empty masks give 1.
pub fn dice(a: &Volume, b: &Volume, threshold: f64) -> Result<f64> {
    same_dims(a, b)?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ia, ib) = (x as f64 > threshold, y as f64 > threshold);
        na += usize::from(ia);
        nb += usize::from(ib);
        both += usize::from(ia && ib);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mean of the three percentage-scaled scores, PSNR capped at 40 dB.
pub fn overall(psnr: f64, ssim: f64, dice: f64) -> f64 {
    let p = psnr.min(OVERALL_PSNR_CAP) / OVERALL_PSNR_CAP * 100.0;
    (p + ssim * 100.0 + dice * 100.0) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub dice: f64,
    pub overall: f64,
    pub threshold: f64,
    pub data_range: f64,
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_value(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        other => other
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad metric value `{other}`"))),
    }
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "psnr,ssim,dice,overall,threshold,data_range";

    /// Compares `recon` against ground truth `gt`; the PSNR range is the
    /// ground truth's max - min.
    pub fn evaluate(recon: &Volume, gt: &Volume, threshold: f64) -> Result<Self> {
        let (lo, hi) = gt.min_max();
        let data_range = if hi > lo { (hi - lo) as f64 } else { 1.0 };
        let psnr = psnr(recon, gt, data_range)?;
        let ssim = ssim(recon, gt, data_range)?;
        let dice = dice(recon, gt, threshold)?;
        Ok(Self {
            psnr,
            ssim,
            dice,
            overall: overall(psnr, ssim, dice),
            threshold,
            data_range,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "psnr: {}\nssim: {}\ndice: {}\noverall: {}\nthreshold: {}\ndata_range: {}\n",
            fmt_value(self.psnr),
            fmt_value(self.ssim),
            fmt_value(self.dice),
            fmt_value(self.overall),
            fmt_value(self.threshold),
            fmt_value(self.data_range)
        )
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut r = MetricReport {
            psnr: f64::NAN,
            ssim: f64::NAN,
            dice: f64::NAN,
            overall: f64::NAN,
            threshold: f64::NAN,
            data_range: f64::NAN,
        };
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("bad report line `{line}`")))?;
            let v = parse_value(v)?;
            match k.trim() {
                "psnr" => r.psnr = v,
                "ssim" => r.ssim = v,
                "dice" => r.dice = v,
                "overall" => r.overall = v,
                "threshold" => r.threshold = v,
                "data_range" => r.data_range = v,
                other => return Err(Error::InvalidArgument(format!("unknown report key `{other}`"))),
            }
        }
        Ok(r)
    }

    pub fn csv_row(&self) -> String {
        [
            self.psnr,
            self.ssim,
            self.dice,
            self.overall,
            self.threshold,
            self.data_range,
        ]
        .iter()
        .map(|&v| fmt_value(v))
        .collect::<Vec<_>>()
        .join(",")
    }
}
