//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers. `#` starts a comment. Every key has a default; a file only needs
//! the keys it changes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{EncoderConfig, FieldConfig, HeadMode, ModelShape, OutputMap};
use crate::geometry::{angle_fan, generate_rays, FocalCurve, Ray};
use crate::phantom::PhantomSpec;
use crate::render::{RenderLaw, RenderParams};
use crate::sampling::{SamplerConfig, SamplingMode};
use crate::training::{LrSchedule, TrainConfig};
use crate::volume::Dims;

/// Which components are switched off, by letter: M (multi-head),
/// D (dynamic sampling), S (soft rendering).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub single_head: bool,
    pub fixed_sampling: bool,
    pub beer_lambert: bool,
}

impl Ablation {
    pub fn from_letter(c: char) -> Result<Self> {
        let mut a = Self::default();
        match c.to_ascii_uppercase() {
            'M' => a.single_head = true,
            'D' => a.fixed_sampling = true,
            'S' => a.beer_lambert = true,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown ablation `{other}` (expected M, D or S)"
                )))
            }
        }
        Ok(a)
    }

    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.single_head {
            s.push('M');
        }
        if self.fixed_sampling {
            s.push('D');
        }
        if self.beer_lambert {
            s.push('S');
        }
        if s.is_empty() {
            s.push_str("full");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub phantom: PhantomSpec,
    pub segments: usize,
    pub angles: Vec<f64>,
    pub render: RenderParams,
    /// Sampling rate used to simulate ground-truth projections.
    pub simulation_rate: f64,
    pub sampler: SamplerConfig,
    pub encoder_frequencies: usize,
    pub encoder_include_raw: bool,
    pub shape: ModelShape,
    pub output_init_scale: f64,
    pub train: TrainConfig,
    pub checkpoint_every: usize,
    pub ablation: Ablation,
    pub dice_threshold: f64,
}

impl Default for RunConfig {
    /// Full-scale settings.
    fn default() -> Self {
        Self {
            dims: Dims::new(288, 256, 160),
            spacing: [1.0; 3],
            phantom: PhantomSpec {
                tooth_axes: [6.0, 6.0, 16.0],
                ..PhantomSpec::default()
            },
            segments: 576,
            angles: crate::geometry::default_angles(),
            render: RenderParams::default(),
            simulation_rate: 2.0,
            sampler: SamplerConfig::default(),
            encoder_frequencies: 32,
            encoder_include_raw: true,
            shape: ModelShape::default(),
            output_init_scale: 1e-2,
            train: TrainConfig::default(),
            checkpoint_every: 0,
            ablation: Ablation::default(),
            dice_threshold: crate::metrics::DEFAULT_DICE_THRESHOLD,
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.trim().parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true/false, got `{other}`")),
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split([',', ' '])
        .filter(|p| !p.trim().is_empty())
        .map(parse_num)
        .collect()
}

fn parse_array<const N: usize>(v: &str) -> std::result::Result<[f64; N], String> {
    let list = parse_list(v)?;
    <[f64; N]>::try_from(list).map_err(|l| format!("expected {N} values, got {}", l.len()))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl RunConfig {
    /// Desk-scale profile: 64x64x32 volume, 144 segments, 10k iterations.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.dims = Dims::new(64, 64, 32);
        c.phantom.tooth_axes = [2.5, 2.5, 5.0];
        c.segments = 144;
        // one view per segment leaves the arch depth unobserved
        c.angles = angle_fan(17);
        c.encoder_frequencies = 8;
        c.shape.width = 32;
        c.shape.heads = 32;
        c.train.iterations = 10_000;
        c.train.lr.switch_iteration = 8_000;
        c.train.batch_rays = 64;
        c.train.single_head_rows = 1;
        c
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        match (section, key) {
            ("volume", "dims") => self.dims = Dims::parse(v).map_err(|e| e.to_string())?,
            ("volume", "spacing") => self.spacing = parse_array(v)?,

            ("phantom", "teeth") => self.phantom.teeth = parse_num(v)?,
            ("phantom", "tooth_axes") => self.phantom.tooth_axes = parse_array(v)?,
            ("phantom", "tooth_jitter") => self.phantom.tooth_jitter = parse_num(v)?,
            ("phantom", "jaw_intensity") => self.phantom.jaw_intensity = parse_num(v)?,
            ("phantom", "tooth_intensity") => self.phantom.tooth_intensity = parse_num(v)?,
            ("phantom", "soft_tissue_intensity") => self.phantom.soft_tissue_intensity = parse_num(v)?,
            ("phantom", "background_intensity") => self.phantom.background_intensity = parse_num(v)?,
            ("phantom", "jaw_half_width") => self.phantom.jaw_half_width = parse_num(v)?,
            ("phantom", "soft_half_width") => self.phantom.soft_half_width = parse_num(v)?,
            ("phantom", "jaw_z") => self.phantom.jaw_z = parse_array(v)?,
            ("phantom", "tooth_z") => self.phantom.tooth_z = parse_num(v)?,
            ("phantom", "seed") => self.phantom.seed = parse_num(v)?,

            ("geometry", "alpha") => self.phantom.curve.alpha = parse_num(v)?,
            ("geometry", "beta") => self.phantom.curve.beta = parse_num(v)?,
            ("geometry", "scale") => self.phantom.curve.scale = parse_array(v)?,
            ("geometry", "offset") => self.phantom.curve.offset = parse_array(v)?,
            ("geometry", "segments") => self.segments = parse_num(v)?,
            ("geometry", "angles") => self.angles = parse_list(v)?,

            ("render", "bias") => self.render.bias = parse_num(v)?,
            ("render", "scale") => self.render.scale = parse_num(v)?,
            ("render", "air") => self.render.air = parse_num(v)?,
            ("render", "attenuation_normalizer") => self.render.attenuation_normalizer = parse_num(v)?,
            ("render", "simulation_rate") => self.simulation_rate = parse_num(v)?,

            ("sampler", "rate_min") => self.sampler.rate_min = parse_num(v)?,
            ("sampler", "rate_max") => self.sampler.rate_max = parse_num(v)?,
            ("sampler", "fixed_rate") => self.sampler.fixed_rate = parse_num(v)?,

            ("encoder", "frequencies") => self.encoder_frequencies = parse_num(v)?,
            ("encoder", "include_raw") => self.encoder_include_raw = parse_bool(v)?,

            ("model", "layers") => self.shape.layers = parse_num(v)?,
            ("model", "width") => self.shape.width = parse_num(v)?,
            ("model", "heads") => self.shape.heads = parse_num(v)?,
            ("model", "residual_period") => self.shape.residual_period = parse_num(v)?,
            ("model", "output_init_scale") => self.output_init_scale = parse_num(v)?,

            ("train", "iterations") => self.train.iterations = parse_num(v)?,
            ("train", "batch_rays") => self.train.batch_rays = parse_num(v)?,
            ("train", "lr_initial") => self.train.lr.initial = parse_num(v)?,
            ("train", "lr_after") => self.train.lr.after = parse_num(v)?,
            ("train", "lr_switch") => self.train.lr.switch_iteration = parse_num(v)?,
            ("train", "single_head_rows") => self.train.single_head_rows = parse_num(v)?,
            ("train", "seed") => self.train.seed = parse_num(v)?,
            ("train", "checkpoint_every") => self.checkpoint_every = parse_num(v)?,

            ("ablation", "multi_head") => self.ablation.single_head = !parse_bool(v)?,
            ("ablation", "dynamic_sampling") => self.ablation.fixed_sampling = !parse_bool(v)?,
            ("ablation", "soft_rendering") => self.ablation.beer_lambert = !parse_bool(v)?,

            ("eval", "dice_threshold") => self.dice_threshold = parse_num(v)?,
            _ => return Err(format!("unknown key `{key}` in section [{section}]")),
        }
        Ok(())
    }

    /// Parses `text` over `base`.
    pub fn parse_over(mut self, text: &str) -> Result<Self> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                    line: line_no,
                    message: format!("unterminated section header `{line}`"),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(&section, key.trim(), value.trim())
                .map_err(|message| Error::Config {
                    line: line_no,
                    message,
                })?;
        }
        self.validate().map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::default().parse_over(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if self.shape.heads != self.dims.nz {
            return Err(Error::InvalidArgument(format!(
                "model heads ({}) must equal volume nz ({})",
                self.shape.heads, self.dims.nz
            )));
        }
        if !(self.simulation_rate > 0.0) {
            return Err(Error::InvalidArgument("simulation rate must be positive".into()));
        }
        self.train_config().validate()?;
        self.field_config().encoder.validate()
    }

    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        Self {
            ablation,
            ..self.clone()
        }
    }

    pub fn curve(&self) -> FocalCurve {
        self.phantom.curve
    }

    pub fn rays(&self) -> Result<Vec<Ray>> {
        generate_rays(&self.curve(), self.segments, &self.angles)
    }

    pub fn render_params(&self) -> RenderParams {
        RenderParams {
            law: if self.ablation.beer_lambert {
                RenderLaw::BeerLambert
            } else {
                RenderLaw::Soft
            },
            ..self.render
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            mode: if self.ablation.fixed_sampling {
                SamplingMode::Fixed
            } else {
                SamplingMode::Dynamic
            },
            seed: self.train.seed,
            ..self.sampler
        }
    }

    pub fn field_config(&self) -> FieldConfig {
        let mode = if self.ablation.single_head {
            HeadMode::Single
        } else {
            HeadMode::Multi
        };
        FieldConfig {
            mode,
            encoder: EncoderConfig {
                frequencies: self.encoder_frequencies,
                include_raw: self.encoder_include_raw,
                input_dim: mode.input_dim(),
            },
            shape: ModelShape {
                heads: if mode == HeadMode::Single { 1 } else { self.shape.heads },
                ..self.shape
            },
            output: OutputMap {
                offset: self.render.bias,
                scale: self.render.scale,
            },
            output_init_scale: self.output_init_scale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: LrSchedule { ..self.train.lr },
            sampler: self.sampler_config(),
            render: self.render_params(),
            ..self.train.clone()
        }
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let p = &self.phantom;
        let c = &p.curve;
        let mut s = String::new();
        let _ = writeln!(s, "[volume]\ndims = {}\nspacing = {}\n", self.dims, join(&self.spacing));
        let _ = writeln!(
            s,
            "[phantom]\nteeth = {}\ntooth_axes = {}\ntooth_jitter = {}\njaw_intensity = {}\ntooth_intensity = {}\nsoft_tissue_intensity = {}\nbackground_intensity = {}\njaw_half_width = {}\nsoft_half_width = {}\njaw_z = {}\ntooth_z = {}\nseed = {}\n",
            p.teeth,
            join(&p.tooth_axes),
            p.tooth_jitter,
            p.jaw_intensity,
            p.tooth_intensity,
            p.soft_tissue_intensity,
            p.background_intensity,
            p.jaw_half_width,
            p.soft_half_width,
            join(&p.jaw_z),
            p.tooth_z,
            p.seed
        );
        let _ = writeln!(
            s,
            "[geometry]\nalpha = {}\nbeta = {}\nscale = {}\noffset = {}\nsegments = {}\nangles = {}\n",
            c.alpha,
            c.beta,
            join(&c.scale),
            join(&c.offset),
            self.segments,
            self.angles.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
        );
        let r = &self.render;
        let _ = writeln!(
            s,
            "[render]\nbias = {}\nscale = {}\nair = {}\nattenuation_normalizer = {}\nsimulation_rate = {}\n",
            r.bias, r.scale, r.air, r.attenuation_normalizer, self.simulation_rate
        );
        let _ = writeln!(
            s,
            "[sampler]\nrate_min = {}\nrate_max = {}\nfixed_rate = {}\n",
            self.sampler.rate_min, self.sampler.rate_max, self.sampler.fixed_rate
        );
        let _ = writeln!(
            s,
            "[encoder]\nfrequencies = {}\ninclude_raw = {}\n",
            self.encoder_frequencies, self.encoder_include_raw
        );
        let _ = writeln!(
            s,
            "[model]\nlayers = {}\nwidth = {}\nheads = {}\nresidual_period = {}\noutput_init_scale = {}\n",
            self.shape.layers, self.shape.width, self.shape.heads, self.shape.residual_period, self.output_init_scale
        );
        let t = &self.train;
        let _ = writeln!(
            s,
            "[train]\niterations = {}\nbatch_rays = {}\nlr_initial = {}\nlr_after = {}\nlr_switch = {}\nsingle_head_rows = {}\nseed = {}\ncheckpoint_every = {}\n",
            t.iterations, t.batch_rays, t.lr.initial, t.lr.after, t.lr.switch_iteration, t.single_head_rows, t.seed, self.checkpoint_every
        );
        let a = &self.ablation;
        let _ = writeln!(
            s,
            "[ablation]\nmulti_head = {}\ndynamic_sampling = {}\nsoft_rendering = {}\n",
            !a.single_head, !a.fixed_sampling, !a.beer_lambert
        );
        let _ = writeln!(s, "[eval]\ndice_threshold = {}", self.dice_threshold);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.dims, Dims::new(288, 256, 160));
        assert_eq!(c.segments, 576);
        assert_eq!((c.render.bias, c.render.scale), (1000.0, 1200.0));
        assert_eq!((c.sampler.rate_min, c.sampler.rate_max), (0.25, 1.25));
        assert_eq!(c.encoder_frequencies, 32);
        assert_eq!((c.shape.layers, c.shape.heads), (12, 160));
        assert_eq!((c.train.iterations, c.train.batch_rays), (100_000, 64));
        assert_eq!(c.train.lr, LrSchedule::default());
        c.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        for c in [RunConfig::default(), RunConfig::desk().with_ablation(Ablation::from_letter('D').unwrap())] {
            assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "[train]\niterations = 10\nbogus = 3\n";
        match RunConfig::desk().parse_over(text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected config error, got {other:?}"),
        }
        match RunConfig::parse("[train]\niterations 10\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn heads_must_match_depth() {
        assert!(RunConfig::parse("[model]\nheads = 12\n").is_err());
    }

    #[test]
    fn ablation_switches_reach_components() {
        let c = RunConfig::desk().parse_over("[ablation]\nmulti_head = false\nsoft_rendering = false\n").unwrap();
        assert_eq!(c.field_config().mode, HeadMode::Single);
        assert_eq!(c.field_config().shape.heads, 1);
        assert_eq!(c.field_config().encoder.input_dim, 3);
        assert_eq!(c.render_params().law, RenderLaw::BeerLambert);
        assert_eq!(c.sampler_config().mode, SamplingMode::Dynamic);
        assert_eq!(c.ablation.label(), "MS");
        assert!(Ablation::from_letter('X').is_err());
    }
}
