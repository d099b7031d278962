//! `bbvel`: fit priors, generate synthetic tracks, train, predict and evaluate.

mod stats;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use bbvel::dataset::{self, PredictionRecord, RecordFailure};
use bbvel::eval::{compare, e_v, BucketSpec, DistanceConvention, Truth};
use bbvel::geometry::{geometric_velocity, Camera};
use bbvel::priors::{fit_priors, DepthSource, FitConfig, Jitter, PriorModel, SizeBasis};
use bbvel::regressor::{self, DecayUnit, Optimizer, TrainConfig};
use bbvel::synth::{generate_dataset, GenConfig, Manifest};
use bbvel::track::{gaussian_smooth, NoiseConfig, SmoothingConfig, Track};
use bbvel::Velocity2D;
use clap::{Args, Parser, Subcommand, ValueEnum};

const FORMATS: &str = "\
File formats:
  camera.json    {\"f\": 1000, \"H\": 1.5, \"img_w\": 1280, \"img_h\": 720}
  tracks JSONL   one object per line: {\"id\": \"..\", \"fps\": 20, \"boxes\": [[x, y, w, h], ...]}
                 boxes are pixels, top-left corner plus size; labeled records add
                 \"velocity\": [vx, vz] (m/s, final frame) and \"distance\": d (m)
  priors.json    prior model written by fit-priors (versioned)
  model.json     checkpoint written by train (versioned, checksummed)
  preds JSONL    {\"id\": \"..\", \"velocity\": [vx, vz]}

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.";

#[derive(Parser)]
#[command(name = "bbvel", version, about = "Relative vehicle velocity from bounding-box tracks", after_help = FORMATS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a prior model (locations, size vs depth, velocity) from labeled tracks.
    #[command(after_help = FORMATS)]
    FitPriors(FitPriorsArgs),
    /// Generate labeled synthetic tracks from a prior model.
    #[command(after_help = FORMATS)]
    Generate(GenerateArgs),
    /// Train the regressor on labeled tracks.
    #[command(after_help = FORMATS)]
    Train(TrainArgs),
    /// Predict velocities with a trained model.
    #[command(after_help = FORMATS)]
    Predict(PredictArgs),
    /// Predict velocities by geometric back-projection.
    #[command(after_help = FORMATS)]
    Baseline(BaselineArgs),
    /// Score predictions against labeled tracks per distance bucket.
    #[command(after_help = FORMATS)]
    Eval(EvalArgs),
    /// Export per-sample position/size data and velocity histograms for plotting.
    #[command(after_help = STATS_HELP)]
    ExportStats(ExportStatsArgs),
}

const STATS_HELP: &str = "\
Scatter CSV columns (one row per track, final frame):
  id,x_px,y_px,w_px,h_px,x_m,z_m,w_m,h_m,vx,vz
  x_px, y_px  bottom-center of the box in pixels
  x_m, z_m    back-projected ground position
  w_m, h_m    physical size implied by the box at depth z_m
  vx, vz      labeled velocity, empty when the record has none
Histogram CSV columns: component,bin_lo,bin_hi,count (component is vx or vz).

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.";

#[derive(Args)]
struct CameraArg {
    /// Camera JSON; omitted means f=1000, H=1.5, 1280x720.
    #[arg(long)]
    camera: Option<PathBuf>,
}

impl CameraArg {
    fn load(&self) -> Result<Camera> {
        match &self.camera {
            Some(p) => Ok(dataset::read_json(p)?),
            None => Ok(Camera::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    InvZ,
    Z,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthArg {
    BackProjected,
    Label,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Euclidean,
    Longitudinal,
}

impl From<DistanceArg> for DistanceConvention {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Euclidean => DistanceConvention::Euclidean,
            DistanceArg::Longitudinal => DistanceConvention::Longitudinal,
        }
    }
}

#[derive(Args)]
struct FitPriorsArgs {
    /// Labeled tracks JSONL.
    #[arg(long)]
    annotations: PathBuf,
    #[command(flatten)]
    camera: CameraArg,
    /// Output priors JSON.
    #[arg(long, short)]
    out: PathBuf,
    /// Size-vs-depth regressor: inv-z fits h = a/Z + b, z fits a polynomial in Z.
    #[arg(long, value_enum, default_value = "inv-z")]
    basis: BasisArg,
    /// Polynomial degree; defaults to 1 for inv-z and 2 for z.
    #[arg(long)]
    degree: Option<usize>,
    /// Depth paired with box sizes.
    #[arg(long, value_enum, default_value = "back-projected")]
    depth_source: DepthArg,
}

#[derive(Args)]
struct NoiseArgs {
    /// Add simulated tracker noise to the boxes (labels stay clean).
    #[arg(long)]
    noise: bool,
    /// Noise std-dev on box position, pixels.
    #[arg(long, default_value_t = 2.0)]
    noise_xy: f64,
    /// Noise std-dev on box size, pixels.
    #[arg(long, default_value_t = 1.0)]
    noise_wh: f64,
    /// Linear drift added to box size, pixels per frame.
    #[arg(long, default_value_t = 0.0)]
    noise_drift: f64,
}

impl NoiseArgs {
    fn config(&self) -> Option<NoiseConfig> {
        self.noise.then_some(NoiseConfig {
            sigma_xy: self.noise_xy,
            sigma_wh: self.noise_wh,
            drift_wh: self.noise_drift,
        })
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Prior model JSON; omitted means the built-in motorway prior.
    #[arg(long)]
    priors: Option<PathBuf>,
    #[command(flatten)]
    camera: CameraArg,
    /// Number of samples (at least 1).
    #[arg(long, short, default_value_t = 11_536, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// RNG seed; required so runs are reproducible.
    #[arg(long)]
    seed: u64,
    /// Output tracks JSONL. A manifest is written next to it as <out>.manifest.json.
    #[arg(long, short)]
    out: PathBuf,
    /// Frames per track.
    #[arg(long, default_value_t = 40)]
    frames: usize,
    /// Frame rate, Hz.
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
    /// Lateral jitter around seed points, m.
    #[arg(long, default_value_t = 0.5)]
    jitter_lateral: f64,
    /// Longitudinal jitter around seed points, m.
    #[arg(long, default_value_t = 2.0)]
    jitter_longitudinal: f64,
    /// Scenario draws per sample before it is skipped.
    #[arg(long, default_value_t = 100)]
    max_retries: usize,
    /// Convention for the distance label.
    #[arg(long, value_enum, default_value = "euclidean")]
    distance: DistanceArg,
    /// Std-dev of a constant per-axis acceleration, m/s^2.
    #[arg(long, default_value_t = 0.0)]
    accel_std: f64,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecayArg {
    Epoch,
    Step,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled tracks JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint JSON. The loss trace goes to <out>.loss.csv (epoch,lr,loss).
    #[arg(long, short)]
    out: PathBuf,
    /// RNG seed for initialization, shuffling and dropout.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 6e-4)]
    lr: f64,
    /// Learning-rate decay factor per decay unit.
    #[arg(long, default_value_t = 0.99)]
    decay: f64,
    #[arg(long, value_enum, default_value = "epoch")]
    decay_unit: DecayArg,
    /// Dropout probability after each hidden activation.
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptimizerArg,
    /// Hidden layer widths, comma separated (each is doubled by the activation).
    #[arg(long, value_delimiter = ',', default_value = "70,70,70,70")]
    hidden: Vec<usize>,
    /// Gaussian sigma in frames applied to training tracks; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    train_smoothing: f64,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint JSON.
    #[arg(long)]
    model: PathBuf,
    /// Tracks JSONL.
    #[arg(long)]
    tracks: PathBuf,
    /// Output predictions JSONL.
    #[arg(long, short)]
    out: PathBuf,
    /// Gaussian sigma in frames applied before prediction; 0 disables.
    #[arg(long, default_value_t = 5.0)]
    smoothing: f64,
}

#[derive(Args)]
struct BaselineArgs {
    /// Tracks JSONL.
    #[arg(long)]
    tracks: PathBuf,
    #[command(flatten)]
    camera: CameraArg,
    /// Output predictions JSONL.
    #[arg(long, short)]
    out: PathBuf,
    /// Gaussian sigma in frames applied before back-projection; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
    /// Fit the slope over the last K frames only.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions JSONL.
    #[arg(long)]
    preds: PathBuf,
    /// Labeled tracks JSONL (needs velocity and distance).
    #[arg(long)]
    truth: PathBuf,
    /// Near bucket upper bound, m.
    #[arg(long, default_value_t = 20.0)]
    near: f64,
    /// Far bucket lower bound, m.
    #[arg(long, default_value_t = 45.0)]
    far: f64,
    /// Method name used in the CSV row.
    #[arg(long, default_value = "model")]
    label: String,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also write a one-row comparison CSV (method,e_v,e_v_near,e_v_medium,e_v_far).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportStatsArgs {
    /// Tracks JSONL.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    camera: CameraArg,
    /// Output scatter CSV.
    #[arg(long, short)]
    out: PathBuf,
    /// Velocity histogram CSV.
    #[arg(long)]
    hist: Option<PathBuf>,
    /// Histogram bins per component.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    bins: u64,
    /// SVG scatter of box height against depth.
    #[arg(long)]
    svg: Option<PathBuf>,
}

/// A command-line mistake that clap cannot catch.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<bbvel::Error>() {
        Some(bbvel::Error::Numeric(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let res = match cli.command {
        Command::FitPriors(a) => cmd_fit_priors(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::ExportStats(a) => stats::cmd_export_stats(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn smoothing(sigma: f64) -> Result<SmoothingConfig> {
    if sigma == 0.0 {
        Ok(SmoothingConfig::identity())
    } else {
        Ok(SmoothingConfig::new(sigma)?)
    }
}

fn cmd_fit_priors(a: &FitPriorsArgs) -> Result<()> {
    let cam = a.camera.load()?;
    let samples = dataset::read_samples(&a.annotations)?;
    let basis = match a.basis {
        BasisArg::InvZ => SizeBasis::InvZ,
        BasisArg::Z => SizeBasis::Z,
    };
    let cfg = FitConfig {
        basis,
        degree: a.degree.unwrap_or(basis.default_degree()),
        depth_source: match a.depth_source {
            DepthArg::BackProjected => DepthSource::BackProjected,
            DepthArg::Label => DepthSource::Label,
        },
        ..FitConfig::default()
    };
    let fit = fit_priors(&samples, &cam, &cfg)?;
    dataset::write_json(&a.out, &fit.model)?;
    eprintln!(
        "fitted priors from {} tracks ({} seed points, {} dropped out of bounds)",
        samples.len(),
        fit.model.seed_points.len(),
        fit.dropped_seeds
    );
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cam = a.camera.load()?;
    let pm: PriorModel = match &a.priors {
        Some(p) => dataset::read_json(p)?,
        None => PriorModel::motorway_default(&cam),
    };
    let cfg = GenConfig {
        n_samples: a.n as usize,
        frames: a.frames,
        fps: a.fps,
        jitter: Jitter {
            lateral: a.jitter_lateral,
            longitudinal: a.jitter_longitudinal,
        },
        noise: a.noise.config(),
        seed: a.seed,
        max_retries: a.max_retries,
        distance: a.distance.into(),
        accel_std: a.accel_std,
    };
    let ds = generate_dataset(&cam, &pm, &cfg)?;
    dataset::write_samples(&a.out, &ds.samples)?;
    let manifest_path = sidecar(&a.out, ".manifest.json");
    dataset::write_json(&manifest_path, &Manifest::new(&cam, &pm, &cfg, &ds)?)?;
    eprintln!(
        "wrote {} tracks to {} ({} skipped), manifest {}",
        ds.samples.len(),
        a.out.display(),
        ds.skipped.len(),
        manifest_path.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let samples = dataset::read_samples(&a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr0: a.lr,
        decay: a.decay,
        decay_unit: match a.decay_unit {
            DecayArg::Epoch => DecayUnit::Epoch,
            DecayArg::Step => DecayUnit::Step,
        },
        dropout: a.dropout,
        batch_size: a.batch_size,
        seed: a.seed,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        hidden: a.hidden.clone(),
        train_smoothing: a.train_smoothing,
    };
    let trained = regressor::train(&samples, &cfg)?;
    regressor::save(&trained.model, &a.out)?;

    let mut csv = String::from("epoch,lr,loss\n");
    for e in &trained.trace {
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.lr, e.loss);
    }
    let trace_path = sidecar(&a.out, ".loss.csv");
    std::fs::write(&trace_path, csv).with_context(|| trace_path.display().to_string())?;
    eprintln!(
        "trained on {} tracks for {} epochs, final loss {:.6}; wrote {} and {}",
        samples.len(),
        cfg.epochs,
        trained.trace.last().map_or(f64::NAN, |e| e.loss),
        a.out.display(),
        trace_path.display()
    );
    Ok(())
}

/// Runs `f` on every readable track, writes the successes and reports the
/// rest. Fails only if nothing could be predicted.
fn predict_all<F>(tracks_path: &Path, out: &Path, mut f: F) -> Result<()>
where
    F: FnMut(&Track) -> bbvel::Result<Velocity2D>,
{
    let (tracks, mut failures) = dataset::read_tracks_lenient(tracks_path)?;
    let mut preds = Vec::with_capacity(tracks.len());
    for (i, (id, track)) in tracks.iter().enumerate() {
        match f(track) {
            Ok(v) => preds.push(PredictionRecord::new(id.clone(), v)),
            Err(e) => failures.push(RecordFailure {
                line: 0,
                id: Some(id.clone()),
                message: format!("record {}: {e}", i + 1),
            }),
        }
    }
    dataset::write_jsonl(out, &preds)?;
    eprintln!(
        "wrote {} predictions to {}, {} failed",
        preds.len(),
        out.display(),
        failures.len()
    );
    for f in &failures {
        let id = f.id.as_deref().unwrap_or("?");
        if f.line > 0 {
            eprintln!("  line {} (id {id}): {}", f.line, f.message);
        } else {
            eprintln!("  id {id}: {}", f.message);
        }
    }
    if preds.is_empty() && !failures.is_empty() {
        return Err(bbvel::Error::Validation(format!("no record in {} could be used", tracks_path.display())).into());
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = regressor::load(&a.model)?;
    let sm = smoothing(a.smoothing)?;
    predict_all(&a.tracks, &a.out, |t| regressor::predict(&model, t, &sm))
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let cam = a.camera.load()?;
    let sm = smoothing(a.smoothing)?;
    predict_all(&a.tracks, &a.out, |t| {
        geometric_velocity(&cam, &gaussian_smooth(t, &sm), a.window)
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let spec = BucketSpec::new(a.near, a.far, DistanceConvention::default()).map_err(|e| Usage(e.to_string()))?;
    let truth = dataset::read_samples(&a.truth)?;
    let preds: Vec<PredictionRecord> = dataset::read_jsonl(&a.preds)?;
    let mut by_id: HashMap<&str, Velocity2D> = HashMap::with_capacity(preds.len());
    for p in &preds {
        if by_id.insert(&p.id, p.velocity()).is_some() {
            return Err(bbvel::Error::Validation(format!("duplicate prediction id {:?}", p.id)).into());
        }
    }
    let mut pv = Vec::with_capacity(truth.len());
    let mut tv = Vec::with_capacity(truth.len());
    let mut missing = Vec::new();
    for s in &truth {
        match by_id.get(s.id.as_str()) {
            Some(v) => {
                pv.push(*v);
                tv.push(Truth {
                    velocity: s.velocity,
                    distance: s.distance,
                });
            }
            None => missing.push(s.id.as_str()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(5).copied().collect();
        return Err(bbvel::Error::Validation(format!(
            "{} labeled tracks have no prediction (first: {})",
            missing.len(),
            shown.join(", ")
        ))
        .into());
    }
    let report = e_v(&pv, &tv, &spec)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        dataset::write_json(p, &report.clone().without_residuals())?;
    }
    if let Some(p) = &a.csv {
        let table = compare(&[(a.label.clone(), report.without_residuals())]);
        std::fs::write(p, table.to_csv()).with_context(|| p.display().to_string())?;
    }
    Ok(())
}
