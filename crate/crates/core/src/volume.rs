//! Dense voxel volumes and the on-disk volume format.
//!
//! A volume file is a short text header followed by a blank line and a raw
//! payload of little-endian `f32` values in x-fastest order:
//!
//! ```text
//! dims: 64 64 32
//! spacing: 1 1 1
//! dtype: f32le
//!
//! <nx*ny*nz * 4 bytes>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses `NXxNYxNZ`, e.g. `288x256x160`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        if parts.len() != 3 {
            return Err(Error::Dimension(format!("expected NXxNYxNZ, got `{s}`")));
        }
        let mut v = [0usize; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .trim()
                .parse()
                .map_err(|_| Error::Dimension(format!("bad extent `{p}` in `{s}`")))?;
        }
        Ok(Self::new(v[0], v[1], v[2]))
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Scalar voxel grid. Intensities are HU-like, stored x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension(format!("empty volume {dims}")));
        }
        if data.len() != dims.len() {
            return Err(Error::SizeMismatch {
                expected: dims.len(),
                found: data.len(),
            });
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Self::new(dims, [1.0; 3], vec![value; dims.len()])
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, [1.0; 3], data)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.nx * (y + self.dims.ny * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Normalized coordinate in [-1, 1] of voxel center `i` along an axis of `n` voxels.
    #[inline]
    pub fn voxel_center(i: usize, n: usize) -> f64 {
        -1.0 + (2 * i + 1) as f64 / n as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "dims: {} {} {}\nspacing: {} {} {}\ndtype: {}\n\n",
            self.dims.nx,
            self.dims.ny,
            self.dims.nz,
            self.spacing[0],
            self.spacing[1],
            self.spacing[2],
            DTYPE_F32LE
        );
        let mut out = Vec::with_capacity(header.len() + 4 * self.data.len());
        out.extend_from_slice(header.as_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::Header("missing blank line after header".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Header("header is not utf-8".into()))?;
        let payload = &bytes[split + 2..];

        let mut dims = None;
        let mut spacing = None;
        let mut dtype = None;
        for line in header.lines() {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::Header(format!("expected `key: value`, got `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "dims" => {
                    let v = parse_triple::<usize>(value, "dims")?;
                    dims = Some(Dims::new(v[0], v[1], v[2]));
                }
                "spacing" => spacing = Some(parse_triple::<f64>(value, "spacing")?),
                "dtype" => dtype = Some(value.to_string()),
                other => return Err(Error::Header(format!("unknown key `{other}`"))),
            }
        }
        let dims = dims.ok_or_else(|| Error::Header("missing `dims`".into()))?;
        let spacing = spacing.ok_or_else(|| Error::Header("missing `spacing`".into()))?;
        match dtype.as_deref() {
            Some(DTYPE_F32LE) => {}
            Some(other) => return Err(Error::Header(format!("unsupported dtype `{other}`"))),
            None => return Err(Error::Header("missing `dtype`".into())),
        }
        if !payload.len().is_multiple_of(4) {
            return Err(Error::Header(format!(
                "payload length {} is not a multiple of 4",
                payload.len()
            )));
        }
        let found = payload.len() / 4;
        if found != dims.len() {
            return Err(Error::SizeMismatch {
                expected: dims.len(),
                found,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(dims, spacing, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn parse_triple<T: std::str::FromStr>(value: &str, key: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|p| p.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Header(format!("bad `{key}` value `{value}`")))?;
    <[T; 3]>::try_from(parts).map_err(|_| Error::Header(format!("`{key}` needs 3 values")))
}
