//! Dynamic sampling: per-ray random sampling rates and the sample positions
//! they induce along a ray.
//!
//! Rates are expressed per voxel pitch: `t` is measured in units of
//! `unit` normalized lengths (one voxel step), so a rate of 1 places roughly
//! one sample per voxel along the ray.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Ray;
use crate::volume::Dims;

/// Lower bound of the rate redraw used when a ray would otherwise get no samples.
pub const ESCALATED_RATE_MIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Dynamic,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub rate_min: f64,
    pub rate_max: f64,
    pub fixed_rate: f64,
    pub mode: SamplingMode,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            rate_min: 0.25,
            rate_max: 1.25,
            fixed_rate: 1.0,
            mode: SamplingMode::Dynamic,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_min > 0.0 && self.rate_min <= self.rate_max && self.rate_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < rate min <= rate max, got [{}, {}]",
                self.rate_min, self.rate_max
            )));
        }
        if !(self.fixed_rate > 0.0 && self.fixed_rate.is_finite()) {
            return Err(Error::InvalidArgument("fixed rate must be positive".into()));
        }
        Ok(())
    }
}

/// Normalized length of one `t` unit (one voxel pitch) for an axial grid.
pub fn ray_unit(dims: Dims) -> f64 {
    2.0 / dims.nx.max(dims.ny) as f64
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic rng stream for one (seed, iteration, slot) triple.
pub fn stream(seed: u64, iteration: u64, slot: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(iteration)) ^ slot))
}

pub fn draw_rate<R: Rng + ?Sized>(config: &SamplerConfig, rng: &mut R) -> f64 {
    match config.mode {
        SamplingMode::Fixed => config.fixed_rate,
        SamplingMode::Dynamic => {
            if config.rate_min == config.rate_max {
                config.rate_min
            } else {
                rng.gen_range(config.rate_min..=config.rate_max)
            }
        }
    }
}

/// `floor(rate * (t_far - t_near))` with `t` in voxel units.
pub fn sample_count(ray: &Ray, rate: f64, unit: f64) -> usize {
    let n = (rate * ray.chord() / unit).floor();
    if n > 0.0 {
        n as usize
    } else {
        0
    }
}

/// Ray parameters `t_near + i * unit / rate` for `i = 1..=count`.
pub fn sample_ts(ray: &Ray, rate: f64, unit: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {rate}")));
    }
    if !(ray.chord() > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "nonpositive ray interval [{}, {}]",
            ray.t_near, ray.t_far
        )));
    }
    let step = unit / rate;
    Ok((1..=sample_count(ray, rate, unit))
        .map(|i| ray.t_near + i as f64 * step)
        .collect())
}

/// Axial sample positions along the ray. Empty when the rate is too low for
/// the chord; see [`plan_ray`] for escalation.
pub fn sample_positions(ray: &Ray, rate: f64, unit: f64) -> Result<Vec<[f64; 2]>> {
    Ok(sample_ts(ray, rate, unit)?
        .into_iter()
        .map(|t| ray.at(t))
        .collect())
}

/// Draws a rate for `ray` and returns it with the sample positions.
///
/// When the drawn rate yields no samples, the rate is redrawn from
/// `[ESCALATED_RATE_MIN, rate_max]`; rays shorter than one sample step at
/// that rate get the smallest rate that places exactly one sample.
pub fn plan_ray<R: Rng + ?Sized>(
    config: &SamplerConfig,
    rng: &mut R,
    ray: &Ray,
    unit: f64,
) -> Result<(f64, Vec<[f64; 2]>)> {
    let mut rate = draw_rate(config, rng);
    if sample_count(ray, rate, unit) == 0 {
        let hi = config.rate_max.max(ESCALATED_RATE_MIN);
        rate = rng.gen_range(ESCALATED_RATE_MIN..=hi);
        if sample_count(ray, rate, unit) == 0 {
            rate = unit / ray.chord();
            while sample_count(ray, rate, unit) == 0 {
                rate = rate * (1.0 + 1e-12) + f64::MIN_POSITIVE;
            }
        }
    }
    let positions = sample_positions(ray, rate, unit)?;
    Ok((rate, positions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(t_far: f64) -> Ray {
        Ray {
            origin: [-1.0, 0.0],
            direction: [1.0, 0.0],
            t_near: 0.0,
            t_far,
            segment: 0,
            angle: std::f64::consts::FRAC_PI_2,
        }
    }

    #[test]
    fn fixed_mode_returns_fixed_rate() {
        let cfg = SamplerConfig {
            mode: SamplingMode::Fixed,
            ..SamplerConfig::default()
        };
        let mut rng = stream(1, 2, 3);
        for _ in 0..100 {
            assert_eq!(draw_rate(&cfg, &mut rng), 1.0);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = SamplerConfig::default();
        let a: Vec<f64> = {
            let mut r = stream(7, 0, 0);
            (0..50).map(|_| draw_rate(&cfg, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream(7, 0, 0);
            (0..50).map(|_| draw_rate(&cfg, &mut r)).collect()
        };
        assert_eq!(a, b);
        let mut other = stream(7, 0, 1);
        assert_ne!(a[0], draw_rate(&cfg, &mut other));
    }

    #[test]
    fn positions_at_integer_steps() {
        let ray = line(2.0);
        assert_eq!(sample_ts(&ray, 1.0, 1.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(sample_positions(&ray, 1.0, 1.0).unwrap(), vec![[0.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn low_rate_gives_no_samples_then_escalates() {
        let ray = line(2.0);
        assert!(sample_ts(&ray, 0.25, 1.0).unwrap().is_empty());
        let cfg = SamplerConfig {
            mode: SamplingMode::Fixed,
            fixed_rate: 0.25,
            ..SamplerConfig::default()
        };
        let (rate, pos) = plan_ray(&cfg, &mut stream(0, 0, 0), &ray, 1.0).unwrap();
        assert!((1.0..=1.25).contains(&rate));
        assert_eq!(pos.len(), sample_count(&ray, rate, 1.0));
        assert!(!pos.is_empty());
    }

    #[test]
    fn tiny_chord_still_gets_one_sample() {
        let ray = line(0.3);
        let (rate, pos) = plan_ray(&SamplerConfig::default(), &mut stream(0, 0, 0), &ray, 1.0).unwrap();
        assert_eq!(pos.len(), 1);
        assert!(rate * 0.3 >= 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(sample_ts(&line(2.0), 0.0, 1.0).is_err());
        assert!(sample_ts(&line(0.0), 1.0, 1.0).is_err());
        let bad = SamplerConfig {
            rate_min: 2.0,
            rate_max: 1.0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unit_is_voxel_pitch() {
        assert_eq!(ray_unit(Dims::new(64, 32, 8)), 2.0 / 64.0);
    }
}
