//! Procedural dental-arch phantoms used as ground-truth volumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{ArcLengthTable, FocalCurve};
use crate::volume::{Dims, Volume};

const CURVE_POLYLINE_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub curve: FocalCurve,
    pub teeth: usize,
    /// Tooth ellipsoid semi-axes in voxels, before per-tooth jitter.
    pub tooth_axes: [f64; 3],
    /// Relative per-axis jitter of tooth semi-axes, drawn from the seed.
    pub tooth_jitter: f64,
    pub jaw_intensity: f32,
    pub tooth_intensity: f32,
    pub soft_tissue_intensity: f32,
    pub background_intensity: f32,
    /// Half-widths of the jaw and soft-tissue bands around the curve (normalized units).
    pub jaw_half_width: f64,
    pub soft_half_width: f64,
    /// Jaw slab as fractions of the z extent.
    pub jaw_z: [f64; 2],
    /// Tooth center height as a fraction of the z extent.
    pub tooth_z: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            curve: FocalCurve::default(),
            teeth: 14,
            tooth_axes: [2.5, 2.5, 5.0],
            tooth_jitter: 0.1,
            jaw_intensity: 1400.0,
            tooth_intensity: 2200.0,
            soft_tissue_intensity: 300.0,
            background_intensity: -1000.0,
            jaw_half_width: 0.09,
            soft_half_width: 0.2,
            jaw_z: [0.15, 0.6],
            tooth_z: 0.62,
            seed: 0,
        }
    }
}

/// Axis-aligned tooth ellipsoid in voxel index coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tooth {
    pub center: [f64; 3],
    pub axes: [f64; 3],
}

impl Tooth {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.curve.validate()?;
        let ordered = self.background_intensity < self.soft_tissue_intensity
            && self.soft_tissue_intensity < self.jaw_intensity
            && self.jaw_intensity < self.tooth_intensity;
        if !ordered {
            return Err(Error::InvalidArgument(
                "intensities must satisfy background < soft tissue < jaw < tooth".into(),
            ));
        }
        if self.tooth_axes.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidArgument("tooth semi-axes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.tooth_jitter) {
            return Err(Error::InvalidArgument("tooth jitter must be in [0, 1)".into()));
        }
        if !(self.jaw_half_width > 0.0 && self.soft_half_width >= self.jaw_half_width) {
            return Err(Error::InvalidArgument(
                "need 0 < jaw half-width <= soft-tissue half-width".into(),
            ));
        }
        Ok(())
    }

    /// Tooth ellipsoids centered on the curve at equal arc-length spacing.
    pub fn teeth(&self, dims: Dims) -> Result<Vec<Tooth>> {
        check_dims(dims)?;
        let table = ArcLengthTable::new(&self.curve);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.teeth;
        Ok((0..n)
            .map(|k| {
                let u = table.u_at((k as f64 + 0.5) * table.total() / n as f64);
                let p = self.curve.point(u).expect("u in range");
                let mut axes = self.tooth_axes;
                for a in &mut axes {
                    *a *= 1.0 + self.tooth_jitter * rng.gen_range(-1.0..=1.0);
                }
                Tooth {
                    center: [
                        to_index(p[0], dims.nx),
                        to_index(p[1], dims.ny),
                        self.tooth_z * dims.nz as f64 - 0.5,
                    ],
                    axes,
                }
            })
            .collect())
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.nx < 8 || dims.ny < 8 || dims.nz < 8 {
        return Err(Error::Dimension(format!(
            "phantom dims must be at least 8 per axis, got {dims}"
        )));
    }
    Ok(())
}

/// Normalized coordinate to continuous voxel index.
fn to_index(p: f64, n: usize) -> f64 {
    (p + 1.0) * 0.5 * n as f64 - 0.5
}

fn distance_to_polyline(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    poly.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let ap = [p[0] - a[0], p[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if len2 > 0.0 {
                ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Renders the phantom. Pure function of `(spec, dims)`.
pub fn generate_phantom(spec: &PhantomSpec, dims: Dims) -> Result<Volume> {
    check_dims(dims)?;
    spec.validate()?;
    let teeth = spec.teeth(dims)?;
    let poly: Vec<[f64; 2]> = (0..CURVE_POLYLINE_POINTS)
        .map(|k| {
            spec.curve
                .point(k as f64 / (CURVE_POLYLINE_POINTS - 1) as f64)
                .expect("u in range")
        })
        .collect();

    let mut dist = vec![0.0; dims.nx * dims.ny];
    for y in 0..dims.ny {
        for x in 0..dims.nx {
            let p = [Volume::voxel_center(x, dims.nx), Volume::voxel_center(y, dims.ny)];
            dist[x + dims.nx * y] = distance_to_polyline(p, &poly);
        }
    }
    let jaw_lo = spec.jaw_z[0] * dims.nz as f64;
    let jaw_hi = spec.jaw_z[1] * dims.nz as f64;

    Volume::from_fn(dims, |x, y, z| {
        if teeth.iter().any(|t| t.contains(x, y, z)) {
            return spec.tooth_intensity;
        }
        let d = dist[x + dims.nx * y];
        let zc = z as f64 + 0.5;
        if d <= spec.jaw_half_width && zc >= jaw_lo && zc <= jaw_hi {
            spec.jaw_intensity
        } else if d <= spec.soft_half_width {
            spec.soft_tissue_intensity
        } else {
            spec.background_intensity
        }
    })
}

/// Voxels that are not background.
pub fn arch_mask(spec: &PhantomSpec, volume: &Volume) -> Vec<bool> {
    volume
        .data()
        .iter()
        .map(|&v| v != spec.background_intensity)
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn no_teeth_gives_jaw_and_soft_tissue_only() {
        let spec = PhantomSpec {
            teeth: 0,
            ..PhantomSpec::default()
        };
        let vol = generate_phantom(&spec, Dims::new(16, 16, 8)).unwrap();
        let levels: BTreeSet<u32> = vol
            .data()
            .iter()
            .filter(|&&v| v != spec.background_intensity)
            .map(|v| v.to_bits())
            .collect();
        let expected: BTreeSet<u32> = [spec.jaw_intensity, spec.soft_tissue_intensity]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(levels, expected);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = PhantomSpec {
            seed: 42,
            ..PhantomSpec::default()
        };
        let a = generate_phantom(&spec, Dims::new(32, 32, 16)).unwrap();
        let b = generate_phantom(&spec, Dims::new(32, 32, 16)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = generate_phantom(&PhantomSpec { seed: 43, ..spec }, Dims::new(32, 32, 16)).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn only_spec_intensities_appear() {
        let spec = PhantomSpec::default();
        let vol = generate_phantom(&spec, Dims::new(24, 20, 12)).unwrap();
        let allowed = [
            spec.background_intensity,
            spec.soft_tissue_intensity,
            spec.jaw_intensity,
            spec.tooth_intensity,
        ];
        assert!(vol.data().iter().all(|v| allowed.contains(v)));
        assert!(vol.data().contains(&spec.tooth_intensity));
        assert!(vol.data().contains(&spec.jaw_intensity));
    }

    #[test]
    fn rejects_small_dims_and_bad_ordering() {
        let spec = PhantomSpec::default();
        assert!(matches!(
            generate_phantom(&spec, Dims::new(7, 16, 16)),
            Err(Error::Dimension(_))
        ));
        let bad = PhantomSpec {
            jaw_intensity: 3000.0,
            ..PhantomSpec::default()
        };
        assert!(generate_phantom(&bad, Dims::new(16, 16, 8)).is_err());
    }

    #[test]
    fn polyline_distance_of_point_on_segment_is_zero() {
        let poly = [[0.0, 0.0], [1.0, 0.0]];
        assert_eq!(distance_to_polyline([0.5, 0.0], &poly), 0.0);
        assert_eq!(distance_to_polyline([0.5, 0.25], &poly), 0.25);
        assert_eq!(distance_to_polyline([2.0, 0.0], &poly), 1.0);
    }
}
