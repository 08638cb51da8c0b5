//! Panoramic imaging geometry: a beta-function focal curve in the axial plane,
//! equal-arc-length segmentation, and projection rays clipped to the volume.
//!
//! All coordinates are normalized axial coordinates; the volume footprint is
//! the square [-1, 1]².

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::error::{Error, Result};

/// Knots in the cumulative arc-length table.
pub const ARC_TABLE_KNOTS: usize = 4096;

pub const MIN_ANGLE: f64 = FRAC_PI_4;
pub const MAX_ANGLE: f64 = 3.0 * FRAC_PI_4;

/// Beta-function focal curve.
///
/// `x(u) = offset.x + scale.x * (2u - 1)` and
/// `y(u) = offset.y + scale.y * p(u)` where `p` is the beta density shape
/// `u^(alpha-1) (1-u)^(beta-1)` normalized to a peak of 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalCurve {
    pub alpha: f64,
    pub beta: f64,
    pub scale: [f64; 2],
    pub offset: [f64; 2],
}

impl Default for FocalCurve {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 2.0,
            scale: [0.65, 0.95],
            offset: [0.0, -0.5],
        }
    }
}

impl FocalCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0 && self.beta >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta-function shape parameters must be >= 1 for a bounded curve, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.scale.iter().chain(&self.offset).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite curve parameter".into()));
        }
        // The curve's extreme points: both ends, and the profile peak.
        for u in [0.0, self.peak_u(), 1.0] {
            let p = self.eval(u);
            if p.iter().any(|c| c.abs() >= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "focal curve leaves the volume footprint at u={u}: {p:?}"
                )));
            }
        }
        Ok(())
    }

    /// Same curve traversed from the other end.
    pub fn reversed(&self) -> Self {
        Self {
            alpha: self.beta,
            beta: self.alpha,
            scale: [-self.scale[0], self.scale[1]],
            offset: self.offset,
        }
    }

    fn peak_u(&self) -> f64 {
        let (a, b) = (self.alpha - 1.0, self.beta - 1.0);
        if a + b == 0.0 {
            0.5
        } else {
            a / (a + b)
        }
    }

    fn raw_profile(&self, u: f64) -> f64 {
        u.powf(self.alpha - 1.0) * (1.0 - u).powf(self.beta - 1.0)
    }

    /// Beta shape normalized to peak 1.
    pub fn profile(&self, u: f64) -> f64 {
        self.raw_profile(u) / self.raw_profile(self.peak_u())
    }

    fn profile_derivative(&self, u: f64) -> f64 {
        let (a, b) = (self.alpha - 1.0, self.beta - 1.0);
        let left = if a == 0.0 {
            0.0
        } else {
            a * u.powf(a - 1.0) * (1.0 - u).powf(b)
        };
        let right = if b == 0.0 {
            0.0
        } else {
            b * u.powf(a) * (1.0 - u).powf(b - 1.0)
        };
        (left - right) / self.raw_profile(self.peak_u())
    }

    fn eval(&self, u: f64) -> [f64; 2] {
        [
            self.offset[0] + self.scale[0] * (2.0 * u - 1.0),
            self.offset[1] + self.scale[1] * self.profile(u),
        ]
    }

    pub fn point(&self, u: f64) -> Result<[f64; 2]> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!(
                "curve parameter {u} outside [0, 1]"
            )));
        }
        Ok(self.eval(u))
    }

    /// dP/du.
    pub fn derivative(&self, u: f64) -> [f64; 2] {
        [2.0 * self.scale[0], self.scale[1] * self.profile_derivative(u)]
    }

    /// Unit normal pointing toward the concave (lingual) side of the arch.
    fn inward_normal(&self, tangent: [f64; 2]) -> [f64; 2] {
        let n = [-tangent[1], tangent[0]];
        let toward_base = if self.scale[1] >= 0.0 { -1.0 } else { 1.0 };
        let flip = if n[1] * toward_base < 0.0 {
            true
        } else if n[1] == 0.0 {
            // vertical tangent: point toward the arch's midline
            n[0] * (self.offset[0] - self.eval(0.5)[0]).signum() < 0.0
        } else {
            false
        };
        if flip {
            [-n[0], -n[1]]
        } else {
            n
        }
    }
}

/// Cumulative arc length of the chord polyline through a uniform `u` grid.
/// Inside a knot interval `u` is found by bisection on the chord length from
/// the knot, which stays accurate where `dP/du` is singular at an end (for
/// `1 < alpha < 2` or `1 < beta < 2`) and plain linear inversion is not.
#[derive(Debug, Clone)]
pub struct ArcLengthTable {
    curve: FocalCurve,
    knots: Vec<f64>,
}

impl ArcLengthTable {
    pub fn new(curve: &FocalCurve) -> Self {
        let n = ARC_TABLE_KNOTS;
        let mut knots = Vec::with_capacity(n);
        let mut prev = curve.eval(0.0);
        let mut total = 0.0;
        knots.push(0.0);
        for k in 1..n {
            let p = curve.eval(k as f64 / (n - 1) as f64);
            total += (p[0] - prev[0]).hypot(p[1] - prev[1]);
            knots.push(total);
            prev = p;
        }
        Self { curve: *curve, knots }
    }

    pub fn total(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Parameter `u` at arc length `s` from the start.
    pub fn u_at(&self, s: f64) -> f64 {
        let n = self.knots.len();
        let s = s.clamp(0.0, self.total());
        let k = self.knots.partition_point(|&v| v < s).clamp(1, n - 1);
        let want = s - self.knots[k - 1];
        let (mut lo, mut hi) = ((k - 1) as f64 / (n - 1) as f64, k as f64 / (n - 1) as f64);
        if !(want > 0.0) {
            return lo;
        }
        let start = self.curve.eval(lo);
        let chord = |u: f64| {
            let p = self.curve.eval(u);
            (p[0] - start[0]).hypot(p[1] - start[1])
        };
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if chord(mid) < want {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub u: f64,
    pub point: [f64; 2],
    pub tangent: [f64; 2],
}

/// Splits the curve into `n` pieces of equal arc length and returns the
/// center of each piece with its unit tangent.
pub fn segment_curve(curve: &FocalCurve, n: usize) -> Result<Vec<Segment>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 segments, got {n}"
        )));
    }
    let table = ArcLengthTable::new(curve);
    let length = table.total();
    if !(length > 1e-12) {
        return Err(Error::InvalidArgument("degenerate focal curve (zero length)".into()));
    }
    (0..n)
        .map(|k| {
            let u = table.u_at((k as f64 + 0.5) * length / n as f64);
            let mut d = curve.derivative(u);
            if !(d[0].is_finite() && d[1].is_finite()) {
                // singular end of the profile: use a short chord instead
                let (a, b) = (curve.eval((u - 1e-9).max(0.0)), curve.eval((u + 1e-9).min(1.0)));
                d = [b[0] - a[0], b[1] - a[1]];
            }
            let norm = d[0].hypot(d[1]);
            if !(norm > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "curve has no tangent at u={u}"
                )));
            }
            Ok(Segment {
                u,
                point: curve.eval(u),
                tangent: [d[0] / norm, d[1] / norm],
            })
        })
        .collect()
}

/// Axial projection ray; the chord `[t_near, t_far]` is its intersection with
/// the volume footprint, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 2],
    pub direction: [f64; 2],
    pub t_near: f64,
    pub t_far: f64,
    pub segment: usize,
    pub angle: f64,
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> [f64; 2] {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
        ]
    }

    pub fn chord(&self) -> f64 {
        self.t_far - self.t_near
    }
}

/// Slab clip of the line `p + s d` against [-1, 1]²; returns the entry and
/// exit parameters.
pub fn clip_to_square(p: [f64; 2], d: [f64; 2]) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if p[axis].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let a = (-1.0 - p[axis]) / d[axis];
        let b = (1.0 - p[axis]) / d[axis];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (hi > lo).then_some((lo, hi))
}

pub fn default_angles() -> Vec<f64> {
    vec![FRAC_PI_2]
}

/// One ray per (segment, angle), ordered segment-major. Each ray crosses the
/// curve at the segment center, making `angle` with the segment tangent and
/// heading toward the concave side of the arch. The origin sits where the
/// ray enters the footprint, so `t_near` is 0.
pub fn generate_rays(curve: &FocalCurve, n_segments: usize, angles: &[f64]) -> Result<Vec<Ray>> {
    if angles.is_empty() {
        return Err(Error::InvalidArgument("no ray angles given".into()));
    }
    for &a in angles {
        if !(MIN_ANGLE - 1e-12..=MAX_ANGLE + 1e-12).contains(&a) {
            return Err(Error::InvalidArgument(format!(
                "ray angle {a} outside [pi/4, 3pi/4]"
            )));
        }
    }
    let segments = segment_curve(curve, n_segments)?;
    let mut rays = Vec::with_capacity(segments.len() * angles.len());
    for (index, seg) in segments.iter().enumerate() {
        let normal = curve.inward_normal(seg.tangent);
        for &angle in angles {
            let (c, s) = (angle.cos(), angle.sin());
            let d = [c * seg.tangent[0] + s * normal[0], c * seg.tangent[1] + s * normal[1]];
            let norm = d[0].hypot(d[1]);
            let d = [d[0] / norm, d[1] / norm];
            let (enter, exit) = clip_to_square(seg.point, d).ok_or_else(|| {
                Error::InvalidArgument(format!("ray for segment {index} misses the volume"))
            })?;
            rays.push(Ray {
                origin: [seg.point[0] + enter * d[0], seg.point[1] + enter * d[1]],
                direction: d,
                t_near: 0.0,
                t_far: exit - enter,
                segment: index,
                angle,
            });
        }
    }
    Ok(rays)
}

/// Evenly spaced fan of `count` angles covering [pi/4, 3pi/4]; one angle gives pi/2.
pub fn angle_fan(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => default_angles(),
        _ => (0..count)
            .map(|k| MIN_ANGLE + (MAX_ANGLE - MIN_ANGLE) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
        a[0] * b[0] + a[1] * b[1]
    }

    #[test]
    fn symmetric_curve_peaks_at_midpoint() {
        let c = FocalCurve {
            scale: [1.0, 1.0],
            offset: [0.0, 0.0],
            ..FocalCurve::default()
        };
        assert_eq!(c.profile(0.5), 1.0);
        let p = c.point(0.5).unwrap();
        assert_eq!(p, [0.0, 1.0]);
    }

    #[test]
    fn symmetric_curve_mirrors() {
        let c = FocalCurve::default();
        for k in 0..=20 {
            let u = k as f64 / 20.0;
            let a = c.point(u).unwrap();
            let b = c.point(1.0 - u).unwrap();
            assert!((a[0] + b[0] - 2.0 * c.offset[0]).abs() < 1e-12);
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn point_rejects_out_of_range() {
        let c = FocalCurve::default();
        assert!(c.point(-0.01).is_err());
        assert!(c.point(1.01).is_err());
    }

    #[test]
    fn default_curve_is_valid() {
        FocalCurve::default().validate().unwrap();
        let bad = FocalCurve {
            scale: [1.2, 0.5],
            ..FocalCurve::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn straight_line_segments_are_evenly_spaced() {
        let c = FocalCurve {
            scale: [0.8, 0.0],
            offset: [0.0, 0.1],
            ..FocalCurve::default()
        };
        let segs = segment_curve(&c, 4).unwrap();
        let xs: Vec<f64> = segs.iter().map(|s| s.point[0]).collect();
        for w in xs.windows(2) {
            assert!((w[1] - w[0] - 0.4).abs() < 1e-9, "{xs:?}");
        }
        for s in &segs {
            assert!((s.point[1] - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn reversal_reverses_order() {
        let c = FocalCurve {
            alpha: 2.0,
            beta: 3.0,
            ..FocalCurve::default()
        };
        let fwd = segment_curve(&c, 17).unwrap();
        let rev = segment_curve(&c.reversed(), 17).unwrap();
        for (a, b) in fwd.iter().zip(rev.iter().rev()) {
            assert!((a.point[0] - b.point[0]).abs() < 1e-6);
            assert!((a.point[1] - b.point[1]).abs() < 1e-6);
            assert!((dot(a.tangent, b.tangent) + 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_segments_or_zero_length() {
        assert!(segment_curve(&FocalCurve::default(), 1).is_err());
        let point = FocalCurve {
            scale: [0.0, 0.0],
            ..FocalCurve::default()
        };
        assert!(segment_curve(&point, 4).is_err());
    }

    #[test]
    fn normal_rays_are_perpendicular_to_tangent() {
        let c = FocalCurve::default();
        let segs = segment_curve(&c, 32).unwrap();
        let rays = generate_rays(&c, 32, &default_angles()).unwrap();
        assert_eq!(rays.len(), 32);
        for (r, s) in rays.iter().zip(&segs) {
            assert!(dot(r.direction, s.tangent).abs() < 1e-9);
            assert!((r.direction[0].hypot(r.direction[1]) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fan_edges_mirror_about_normal() {
        let c = FocalCurve::default();
        let segs = segment_curve(&c, 8).unwrap();
        let rays = generate_rays(&c, 8, &[MIN_ANGLE, FRAC_PI_2, MAX_ANGLE]).unwrap();
        assert_eq!(rays.len(), 24);
        for (k, s) in segs.iter().enumerate() {
            let (lo, mid, hi) = (rays[3 * k], rays[3 * k + 1], rays[3 * k + 2]);
            // tangential components flip, normal components agree
            assert!((dot(lo.direction, s.tangent) + dot(hi.direction, s.tangent)).abs() < 1e-9);
            assert!((dot(lo.direction, mid.direction) - dot(hi.direction, mid.direction)).abs() < 1e-9);
        }
    }

    #[test]
    fn normal_rays_point_into_the_arch() {
        let c = FocalCurve::default();
        let segs = segment_curve(&c, 9).unwrap();
        let rays = generate_rays(&c, 9, &default_angles()).unwrap();
        // at the incisor segment the arch interior is below the curve
        assert!(rays[4].direction[1] < -0.99);
        // the segment center lies on the chord
        let s = &segs[4];
        let t = dot([s.point[0] - rays[4].origin[0], s.point[1] - rays[4].origin[1]], rays[4].direction);
        assert!(t > 0.0 && t < rays[4].t_far);
    }

    #[test]
    fn rejects_angles_outside_fan() {
        let c = FocalCurve::default();
        assert!(generate_rays(&c, 4, &[0.1]).is_err());
        assert!(generate_rays(&c, 4, &[3.0]).is_err());
        assert!(generate_rays(&c, 4, &[]).is_err());
    }

    #[test]
    fn angle_fan_spans_range() {
        let f = angle_fan(5);
        assert_eq!(f.len(), 5);
        assert_eq!(f[0], MIN_ANGLE);
        assert!((f[4] - MAX_ANGLE).abs() < 1e-15);
        assert_eq!(angle_fan(1), vec![FRAC_PI_2]);
    }
}
