//! End-to-end runs: phantom -> projection -> training -> reconstruction -> metrics.

use crate::config::{Ablation, RunConfig};
use crate::error::Result;
use crate::field::FieldModel;
use crate::geometry::Ray;
use crate::metrics::MetricReport;
use crate::phantom::generate_phantom;
use crate::render::{project_volume, ProjectionImage};
use crate::sampling::ray_unit;
use crate::training::{reconstruct, train, LossRecord, TrainSet};
use crate::volume::Volume;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: FieldModel,
    pub history: Vec<LossRecord>,
    pub reconstruction: Volume,
    pub report: MetricReport,
}

/// Ground-truth projections of `volume` under the config's geometry and law.
pub fn simulate(config: &RunConfig, volume: &Volume) -> Result<(Vec<Ray>, ProjectionImage)> {
    let rays = config.rays()?;
    let image = project_volume(volume, &rays, config.simulation_rate, &config.render_params())?;
    Ok((rays, image))
}

/// Trains on `volume`'s simulated projections and evaluates the reconstruction.
pub fn run_on_volume(
    config: &RunConfig,
    volume: &Volume,
    on_iteration: impl FnMut(&LossRecord, &FieldModel) -> Result<()>,
) -> Result<RunOutcome> {
    config.validate()?;
    let (rays, image) = simulate(config, volume)?;
    let model = FieldModel::new(config.field_config(), config.train.seed)?;
    let set = TrainSet {
        rays: &rays,
        image: &image,
        unit: ray_unit(volume.dims()),
    };
    let out = train(model, &set, &config.train_config(), on_iteration)?;
    let reconstruction = reconstruct(&out.model, volume.dims())?;
    let report = MetricReport::evaluate(&reconstruction, volume, config.dice_threshold)?;
    Ok(RunOutcome {
        model: out.model,
        history: out.history,
        reconstruction,
        report,
    })
}

pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let volume = generate_phantom(&config.phantom, config.dims)?;
    run_on_volume(config, &volume, |_, _| Ok(()))
}

/// Parses a set of ablation letters such as `"MDS"`; empty means none.
pub fn parse_ablations(which: &str) -> Result<Vec<Ablation>> {
    let mut out: Vec<Ablation> = Vec::new();
    for c in which.chars().filter(|c| !c.is_whitespace() && *c != ',') {
        let a = Ablation::from_letter(c)?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: MetricReport,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str = "variant,M,D,S,psnr,ssim,dice,overall";

    /// Columns mark components that are kept, as in an ablation table.
    pub fn csv_row(&self) -> String {
        let mark = |off: bool| if off { "0" } else { "1" };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.ablation.label(),
            mark(self.ablation.single_head),
            mark(self.ablation.fixed_sampling),
            mark(self.ablation.beer_lambert),
            self.report.psnr,
            self.report.ssim,
            self.report.dice,
            self.report.overall
        )
    }
}

/// Baseline plus each requested ablation, all with the base config's seeds.
pub fn ablation_sweep(
    base: &RunConfig,
    ablations: &[Ablation],
    mut on_done: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let volume = generate_phantom(&base.phantom, base.dims)?;
    let mut rows = Vec::with_capacity(ablations.len() + 1);
    for ablation in std::iter::once(Ablation::default()).chain(ablations.iter().copied()) {
        let config = base.with_ablation(ablation);
        let outcome = run_on_volume(&config, &volume, |_, _| Ok(()))?;
        let row = AblationRow {
            ablation,
            report: outcome.report,
        };
        on_done(&row);
        rows.push(row);
    }
    Ok(rows)
}
