mod manifest;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nexf_core::config::RunConfig;
use nexf_core::error::Error;
use nexf_core::field::FieldModel;
use nexf_core::geometry::generate_rays;
use nexf_core::metrics::MetricReport;
use nexf_core::pipeline::{ablation_sweep, parse_ablations, AblationRow};
use nexf_core::render::{project_volume, RenderLaw};
use nexf_core::sampling::ray_unit;
use nexf_core::training::{reconstruct, train, TrainSet};
use nexf_core::volume::{Dims, Volume};
use nexf_core::generate_phantom;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "nexf", version, about = "Neural X-ray field reconstruction from panoramic projections")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Config file; the built-in desk profile when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom volume.
    Phantom {
        #[arg(long)]
        dims: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render panoramic projections of a volume.
    Simulate {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        law: Option<String>,
        /// Output path stem; writes `<stem>.raw`, `<stem>.pgm`, `<stem>.pgm.scale`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a field on a volume's simulated projections.
    Train {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a voxel grid.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dims: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a reconstruction with ground truth.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append a CSV row to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the baseline and the requested ablations (letters from M, D, S).
    Ablate {
        #[arg(long, default_value = "")]
        which: String,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn out_root() -> PathBuf {
    std::env::var_os("NEXF_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("nexf-out"))
}

fn resolve(out: Option<PathBuf>, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| out_root().join(default_name))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_config(global: &Global) -> CliResult<RunConfig> {
    let mut config = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::desk(),
    };
    if let Some(seed) = global.seed {
        config.train.seed = seed;
    }
    Ok(config)
}

fn revalidate(config: &RunConfig) -> CliResult<()> {
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn threads(global: &Global) -> usize {
    global.threads.unwrap_or_else(rayon::current_num_threads)
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn cmd_phantom(global: &Global, dims: Option<String>, out: Option<PathBuf>) -> CliResult<()> {
    let mut config = load_config(global)?;
    if let Some(d) = dims {
        config.dims = Dims::parse(&d).map_err(|e| CliError::Config(e.to_string()))?;
        config.shape.heads = config.dims.nz;
    }
    revalidate(&config)?;
    let out = resolve(out, "phantom.vol");
    ensure_parent(&out)?;
    let volume = generate_phantom(&config.phantom, config.dims)?.with_spacing(config.spacing)?;
    volume.save(&out)?;
    let mut m = Manifest::start(&command_line(), threads(global));
    m.outputs.push(out.clone());
    m.write(&parent_dir(&out), &config)?;
    println!("wrote {} ({})", out.display(), config.dims);
    Ok(())
}

fn cmd_simulate(
    global: &Global,
    volume_path: &Path,
    segments: Option<usize>,
    law: Option<String>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let mut config = load_config(global)?;
    if let Some(n) = segments {
        config.segments = n;
    }
    if let Some(l) = law {
        config.ablation.beer_lambert =
            RenderLaw::parse(&l).map_err(|e| CliError::Config(e.to_string()))? == RenderLaw::BeerLambert;
    }
    let volume = Volume::load(volume_path)?;
    let rays = generate_rays(&config.curve(), config.segments, &config.angles)?;
    let image = project_volume(&volume, &rays, config.simulation_rate, &config.render_params())?;
    let stem = resolve(out, "projection");
    ensure_parent(&stem)?;
    let raw = stem.with_extension("raw");
    let pgm = stem.with_extension("pgm");
    image.save_raw(&raw)?;
    image.save_pgm(&pgm)?;
    let mut m = Manifest::start(&command_line(), threads(global));
    m.inputs.push(volume_path.to_path_buf());
    m.outputs.extend([raw.clone(), pgm.clone()]);
    m.write(&parent_dir(&raw), &config)?;
    println!("wrote {} and {} ({}x{})", raw.display(), pgm.display(), image.width, image.height);
    Ok(())
}

fn cmd_train(global: &Global, volume_path: &Path, iterations: Option<usize>, out: Option<PathBuf>) -> CliResult<()> {
    let mut config = load_config(global)?;
    if let Some(n) = iterations {
        config.train.iterations = n;
        config.train.lr.switch_iteration = config.train.lr.switch_iteration.min(n);
    }
    let volume = Volume::load(volume_path)?;
    if config.dims != volume.dims() {
        config.dims = volume.dims();
        config.shape.heads = volume.dims().nz;
    }
    revalidate(&config)?;
    let dir = resolve(out, "train");
    fs::create_dir_all(&dir)?;

    let rays = config.rays()?;
    let image = project_volume(&volume, &rays, config.simulation_rate, &config.render_params())?;
    let model = FieldModel::new(config.field_config(), config.train.seed)?;
    let set = TrainSet {
        rays: &rays,
        image: &image,
        unit: ray_unit(volume.dims()),
    };

    let mut csv = fs::File::create(dir.join("loss.csv"))?;
    writeln!(csv, "iteration,loss,lr")?;
    let mut last_good: Vec<f64> = model.params().to_vec();
    let mut checkpoints = Vec::new();
    let every = config.checkpoint_every;
    let result = train(model, &set, &config.train_config(), |record, model| {
        writeln!(csv, "{},{},{}", record.iteration, record.loss, record.lr)?;
        last_good.clear();
        last_good.extend_from_slice(model.params());
        if every > 0 && (record.iteration + 1) % every == 0 {
            let path = dir.join(format!("checkpoint_{:07}.ckpt", record.iteration + 1));
            model.save(&path)?;
            checkpoints.push(path);
        }
        Ok(())
    });
    let output = match result {
        Ok(o) => o,
        Err(e @ Error::Divergence { .. }) => {
            let dump = FieldModel::from_params(config.field_config(), last_good)?;
            dump.save(dir.join("diverged.ckpt"))?;
            fs::write(dir.join("diverged.txt"), format!("{e}\n"))?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    csv.flush()?;
    let ckpt = dir.join("model.ckpt");
    output.model.save(&ckpt)?;
    let mut m = Manifest::start(&command_line(), threads(global));
    m.inputs.push(volume_path.to_path_buf());
    m.outputs.push(ckpt.clone());
    m.outputs.push(dir.join("loss.csv"));
    m.outputs.extend(checkpoints);
    m.write(&dir, &config)?;
    let last = output.history.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("wrote {} (final loss {last})", ckpt.display());
    Ok(())
}

fn cmd_reconstruct(global: &Global, checkpoint: &Path, dims: &str, out: Option<PathBuf>) -> CliResult<()> {
    let dims = Dims::parse(dims).map_err(|e| CliError::Config(e.to_string()))?;
    let model = FieldModel::load(checkpoint)?;
    let volume = reconstruct(&model, dims)?;
    let out = resolve(out, "recon.vol");
    ensure_parent(&out)?;
    volume.save(&out)?;
    let config = load_config(global)?;
    let mut m = Manifest::start(&command_line(), threads(global));
    m.inputs.push(checkpoint.to_path_buf());
    m.outputs.push(out.clone());
    m.write(&parent_dir(&out), &config)?;
    println!("wrote {} ({dims})", out.display());
    Ok(())
}

fn append_line(path: &Path, header: &str, line: &str) -> CliResult<()> {
    ensure_parent(path)?;
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

fn cmd_evaluate(
    global: &Global,
    recon: &Path,
    gt: &Path,
    threshold: Option<f64>,
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
) -> CliResult<()> {
    let config = load_config(global)?;
    let threshold = threshold.unwrap_or(config.dice_threshold);
    let report = MetricReport::evaluate(&Volume::load(recon)?, &Volume::load(gt)?, threshold)?;
    let out = resolve(out, "report.txt");
    ensure_parent(&out)?;
    fs::write(&out, report.to_text())?;
    if let Some(csv) = csv {
        append_line(&csv, MetricReport::CSV_HEADER, &report.csv_row())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_ablate(global: &Global, which: &str, iterations: Option<usize>, out: Option<PathBuf>) -> CliResult<()> {
    let ablations = parse_ablations(which).map_err(|e| CliError::Config(e.to_string()))?;
    let mut config = load_config(global)?;
    if let Some(n) = iterations {
        config.train.iterations = n;
        config.train.lr.switch_iteration = config.train.lr.switch_iteration.min(n);
    }
    revalidate(&config)?;
    let dir = resolve(out, "ablation");
    fs::create_dir_all(&dir)?;
    let csv = dir.join("ablation.csv");
    let mut failed = None;
    ablation_sweep(&config, &ablations, |row: &AblationRow| {
        println!("{}", row.csv_row());
        if let Err(e) = append_line(&csv, AblationRow::CSV_HEADER, &row.csv_row()) {
            failed = Some(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    let mut m = Manifest::start(&command_line(), threads(global));
    m.outputs.push(csv);
    m.write(&dir, &config)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let g = &cli.global;
    match cli.command {
        Command::Phantom { dims, out } => cmd_phantom(g, dims, out),
        Command::Simulate {
            volume,
            segments,
            law,
            out,
        } => cmd_simulate(g, &volume, segments, law, out),
        Command::Train { volume, iterations, out } => cmd_train(g, &volume, iterations, out),
        Command::Reconstruct { checkpoint, dims, out } => cmd_reconstruct(g, &checkpoint, &dims, out),
        Command::Evaluate {
            recon,
            gt,
            threshold,
            out,
            csv,
        } => cmd_evaluate(g, &recon, &gt, threshold, out, csv),
        Command::Ablate { which, iterations, out } => cmd_ablate(g, &which, iterations, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
