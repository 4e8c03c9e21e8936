//! Single entry point wiring dataset generation, the three training stages,
//! inference (predict / probe-predict / toggle), planning, and evaluation.
//!
//! Every command resolves its configuration (file first, flags win), runs
//! deterministically from `--seed`, and emits a run manifest recording the
//! command line, config hash, input checkpoint hashes, outputs, and wall
//! clock. Stage ordering is enforced by checkpoint provenance hashes: the
//! radiance field records the encoder it was trained against, the forecaster
//! records both.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use carff::ckpt::file_sha256;
use carff::error::{Error, Result};
use carff::evalkit::{
    bird_eye_pose, latent_samples, prediction_psnr_table, reconstruction_grid, svm_separability,
};
use carff::forecast::{
    autoregressive_predict, build_belief_table, build_transition_dataset, load_mdn, localize,
    calibrate_tau, probe_slots, save_mdn, train_mdn, BeliefTable, Mdn, MdnConfig, MdnHeader,
};
use carff::img::Image;
use carff::nerf::{load_nerf, save_nerf, train_nerf, NerfConfig, RadianceField};
use carff::pcvae::{load_pcvae, save_pcvae, train_pcvae, PcVae, PcVaeConfig};
use carff::planner::{
    accuracy_recall_sweep, decide, run_trials, ControllerConfig, ControllerKind, Models,
};
use carff::scenegen::{generate_dataset, Archetype, DatasetConfig, DatasetManifest, FrameKey};

const RUN_SCHEMA: &str = "carff.run.v1";

fn image_dims(manifest: &DatasetManifest) -> (usize, usize) {
    (manifest.poses[0].width, manifest.poses[0].height)
}

#[derive(Parser)]
#[command(name = "carff", version, about = "Probabilistic 3D scene forecasting toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a procedural multi-view dataset.
    Gen(GenArgs),
    /// Train the pose-conditional variational encoder/decoder.
    TrainPcvae(TrainPcvaeArgs),
    /// Train the latent-conditioned radiance field (requires --pcvae).
    TrainNerf(TrainNerfArgs),
    /// Train the mixture-density forecaster (requires --pcvae and --nerf).
    TrainMdn(TrainMdnArgs),
    /// Render a dataset frame's belief through the radiance field.
    Render(RenderArgs),
    /// Density-probe an input image and report the localized state.
    Probe(ProbeArgs),
    /// Auto-regressive rollout from an input image.
    Predict(PredictArgs),
    /// Probe an input, then roll the forecaster forward from it.
    ProbePredict(PredictArgs),
    /// Render the stored belief of an explicit scene state from overhead.
    Toggle(ToggleArgs),
    /// One controller decision on a chosen input frame.
    Plan(PlanArgs),
    /// Repeated seeded decisions per scenario cell.
    Trials(TrialsArgs),
    /// Accuracy / recall versus sample count.
    Curves(CurvesArgs),
    /// Evaluation reports.
    Eval(EvalArgs),
}

// ---------------------------------------------------------------------------
// Shared argument blocks
// ---------------------------------------------------------------------------

/// Dataset plus whichever trained checkpoints a command needs. Loading
/// verifies the recorded provenance hashes, so a field trained against a
/// different encoder is rejected up front.
#[derive(Args)]
struct StackArgs {
    /// Dataset directory produced by `carff gen`.
    #[arg(long)]
    data: PathBuf,
    /// Encoder checkpoint.
    #[arg(long)]
    pcvae: Option<PathBuf>,
    /// Radiance-field checkpoint.
    #[arg(long)]
    nerf: Option<PathBuf>,
    /// Forecaster checkpoint.
    #[arg(long)]
    mdn: Option<PathBuf>,
}

struct Stack {
    manifest: DatasetManifest,
    images: Vec<Image>,
    encoder: Option<PcVae>,
    field: Option<RadianceField>,
    mdn: Option<Mdn>,
    table: Option<BeliefTable>,
    hashes: BTreeMap<String, String>,
}

impl StackArgs {
    fn load(&self, device: &Device) -> Result<Stack> {
        let manifest = DatasetManifest::load(&self.data)?;
        let images = manifest.load_images(&self.data)?;
        let dataset_sha = file_sha256(&self.data.join("manifest.json"))?;
        let mut hashes = BTreeMap::new();
        hashes.insert("dataset".into(), dataset_sha.clone());

        let mut encoder = None;
        let mut pcvae_sha = None;
        if let Some(p) = &self.pcvae {
            let (m, _) = load_pcvae(p, Some(&dataset_sha), device)?;
            pcvae_sha = Some(file_sha256(p)?);
            hashes.insert("pcvae".into(), pcvae_sha.clone().unwrap());
            encoder = Some(m);
        }
        let mut field = None;
        let mut nerf_sha = None;
        if let Some(p) = &self.nerf {
            let (f, _) = load_nerf(p, pcvae_sha.as_deref(), device)?;
            nerf_sha = Some(file_sha256(p)?);
            hashes.insert("nerf".into(), nerf_sha.clone().unwrap());
            field = Some(f);
        }
        let mut mdn = None;
        let mut table = None;
        if let Some(p) = &self.mdn {
            let (m, t, _) = load_mdn(p, pcvae_sha.as_deref(), nerf_sha.as_deref(), device)?;
            hashes.insert("mdn".into(), file_sha256(p)?);
            mdn = Some(m);
            table = Some(t);
        }
        Ok(Stack {
            manifest,
            images,
            encoder,
            field,
            mdn,
            table,
            hashes,
        })
    }
}

impl Stack {
    fn encoder(&self) -> Result<&PcVae> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::MissingStage("pcvae".into()))
    }

    fn field(&self) -> Result<&RadianceField> {
        self.field
            .as_ref()
            .ok_or_else(|| Error::MissingStage("nerf".into()))
    }

    fn mdn(&self) -> Result<&Mdn> {
        self.mdn
            .as_ref()
            .ok_or_else(|| Error::MissingStage("mdn".into()))
    }

    fn table(&self) -> Result<&BeliefTable> {
        self.table
            .as_ref()
            .ok_or_else(|| Error::MissingStage("mdn".into()))
    }

    fn models(&self) -> Result<Models<'_>> {
        Ok(Models {
            encoder: self.encoder()?,
            mdn: self.mdn()?,
            field: self.field()?,
            table: self.table()?,
        })
    }

    fn frame_image(&self, key: FrameKey) -> Result<&Image> {
        let idx = self
            .manifest
            .frame_index()
            .get(&key)
            .copied()
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "no frame for scene {} time {} pose {}",
                    key.scene_id, key.timestamp, key.pose_id
                ))
            })?;
        Ok(&self.images[idx])
    }
}

/// Selects one dataset frame as command input.
#[derive(Args)]
struct FrameArgs {
    #[arg(long)]
    scene: usize,
    #[arg(long)]
    time: usize,
    #[arg(long)]
    pose: usize,
}

impl FrameArgs {
    fn key(&self) -> FrameKey {
        FrameKey {
            scene_id: self.scene,
            timestamp: self.time,
            pose_id: self.pose,
        }
    }
}

// ---------------------------------------------------------------------------
// Run configuration and manifest
// ---------------------------------------------------------------------------

/// All per-stage hyperparameters in one overridable file. Unknown keys are
/// rejected; omitted ones fall back to the module defaults.
#[derive(Debug, Clone, Default, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    pcvae: PcVaeConfig,
    nerf: NerfConfig,
    mdn: MdnConfig,
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn sha256_of_json<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let mut h = Sha256::new();
    h.update(&bytes);
    format!("{:x}", h.finalize())
}

#[derive(Serialize)]
struct RunManifest {
    schema: &'static str,
    command: Vec<String>,
    config_sha256: String,
    input_checkpoints: BTreeMap<String, String>,
    outputs: Vec<String>,
    wall_clock_secs: f64,
    seed: u64,
}

/// The manifest lands beside the primary output (`<out>.run.json`), never
/// inside it, so directory outputs stay byte-identical across reruns.
fn write_run_manifest(
    primary_out: &Path,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<&Path>,
    started: Instant,
    seed: u64,
) -> Result<()> {
    let manifest = RunManifest {
        schema: RUN_SCHEMA,
        command: std::env::args().collect(),
        config_sha256,
        input_checkpoints: inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed,
    };
    let mut path = primary_out.as_os_str().to_owned();
    path.push(".run.json");
    std::fs::write(PathBuf::from(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Scratch directory for derived artifacts when no --out is given.
fn scratch_dir() -> PathBuf {
    std::env::var_os("CARFF_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    archetype: Archetype,
    #[arg(long)]
    out: PathBuf,
    /// Total camera poses (arc poses plus 4 ego poses).
    #[arg(long, default_value_t = 24)]
    poses: usize,
    /// Resolution as WxH.
    #[arg(long, default_value = "64x64")]
    res: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_res(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidConfig(format!("resolution `{s}` is not WxH")))?;
    let parse = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::InvalidConfig(format!("resolution `{s}` is not WxH")))
    };
    Ok((parse(w)?, parse(h)?))
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let started = Instant::now();
    let (width, height) = parse_res(&args.res)?;
    let config = DatasetConfig {
        archetype: args.archetype,
        out_dir: args.out.clone(),
        poses: args.poses,
        width,
        height,
        seed: args.seed,
    };
    let manifest = generate_dataset(&config)?;
    println!(
        "generated {} frames ({} scenes, {} poses) in {}",
        manifest.frames.len(),
        manifest.scenes.len(),
        manifest.poses.len(),
        args.out.display()
    );
    write_run_manifest(
        &args.out,
        sha256_of_json(&config),
        BTreeMap::new(),
        vec![&args.out],
        started,
        args.seed,
    )
}

// ---------------------------------------------------------------------------
// training stages
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainPcvaeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON run-config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Write the resolved config and per-epoch training stats beside a
/// checkpoint, then the run manifest.
fn finish_training<C: Serialize, S: Serialize>(
    out: &Path,
    cfg: &C,
    stats: &[S],
    inputs: BTreeMap<String, String>,
    started: Instant,
    seed: u64,
) -> Result<()> {
    let cfg_path = out.with_extension("config.json");
    write_json(&cfg_path, cfg)?;
    let stats_path = out.with_extension("stats.json");
    write_json(&stats_path, &stats)?;
    write_run_manifest(
        out,
        sha256_of_json(cfg),
        inputs,
        vec![out, &cfg_path, &stats_path],
        started,
        seed,
    )
}

fn cmd_train_pcvae(args: TrainPcvaeArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let mut cfg = load_run_config(args.config.as_deref())?.pcvae;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let manifest = DatasetManifest::load(&args.data)?;
    let images = manifest.load_images(&args.data)?;
    cfg.pose_count = manifest.poses.len();
    cfg.image_size = manifest.poses[0].width;
    let dataset_sha = file_sha256(&args.data.join("manifest.json"))?;

    let (model, stats) = train_pcvae(&manifest, &images, cfg.clone(), device)?;
    if let Some(last) = stats.last() {
        println!(
            "pcvae trained: {} epochs, final recon mse {:.5}",
            cfg.epochs,
            serde_json::to_value(last)?["recon_mse"].as_f64().unwrap_or(f64::NAN)
        );
    }
    save_pcvae(&model, &dataset_sha, &args.out)?;
    let seed = cfg.seed;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), dataset_sha);
    finish_training(&args.out, &cfg, &stats, inputs, started, seed)
}

#[derive(Args)]
struct TrainNerfArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pcvae: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print a progress line every this many iterations (0 = silent).
    #[arg(long, default_value_t = 500)]
    report_every: usize,
}

fn cmd_train_nerf(args: TrainNerfArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let pcvae_path = args
        .pcvae
        .as_deref()
        .ok_or_else(|| Error::MissingStage("pcvae".into()))?;
    let mut cfg = load_run_config(args.config.as_deref())?.nerf;
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.rays {
        cfg.rays_per_batch = v;
    }
    if let Some(v) = args.samples {
        cfg.samples = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let manifest = DatasetManifest::load(&args.data)?;
    let images = manifest.load_images(&args.data)?;
    let dataset_sha = file_sha256(&args.data.join("manifest.json"))?;
    let (encoder, _) = load_pcvae(pcvae_path, Some(&dataset_sha), device)?;
    cfg.latent_dim = encoder.cfg.latent_dim;
    cfg.background = manifest.background;
    cfg.world_bounds = manifest.world_bounds;

    let (field, stats) = train_nerf(&manifest, &images, &encoder, cfg.clone(), device, args.report_every)?;
    let pcvae_sha = file_sha256(pcvae_path)?;
    save_nerf(&field, &dataset_sha, &pcvae_sha, &args.out)?;
    println!("nerf trained: {} iterations", cfg.iters);
    let seed = cfg.seed;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), dataset_sha);
    inputs.insert("pcvae".into(), pcvae_sha);
    finish_training(&args.out, &cfg, &stats, inputs, started, seed)
}

#[derive(Args)]
struct TrainMdnArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pcvae: Option<PathBuf>,
    #[arg(long)]
    nerf: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    nll_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_train_mdn(args: TrainMdnArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let pcvae_path = args
        .pcvae
        .as_deref()
        .ok_or_else(|| Error::MissingStage("pcvae".into()))?;
    let nerf_path = args
        .nerf
        .as_deref()
        .ok_or_else(|| Error::MissingStage("nerf".into()))?;
    let mut cfg = load_run_config(args.config.as_deref())?.mdn;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.nll_samples {
        cfg.nll_samples = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let manifest = DatasetManifest::load(&args.data)?;
    let images = manifest.load_images(&args.data)?;
    let dataset_sha = file_sha256(&args.data.join("manifest.json"))?;
    let (encoder, _) = load_pcvae(pcvae_path, Some(&dataset_sha), device)?;
    let pcvae_sha = file_sha256(pcvae_path)?;
    let (field, _) = load_nerf(nerf_path, Some(&pcvae_sha), device)?;
    let nerf_sha = file_sha256(nerf_path)?;
    cfg.latent_dim = encoder.cfg.latent_dim;

    let pairs = build_transition_dataset(&manifest, &images, &encoder, cfg.neighbor_radius)?;
    let mut table = build_belief_table(&manifest, &images, &encoder)?;
    table.tau = calibrate_tau(&field, &table)?;
    println!("occupancy threshold calibrated: tau = {:.4}", table.tau);
    let (model, stats) = train_mdn(&pairs, cfg.clone(), device)?;
    let header = MdnHeader {
        config: cfg.clone(),
        dataset_sha256: dataset_sha.clone(),
        pcvae_sha256: pcvae_sha.clone(),
        nerf_sha256: nerf_sha.clone(),
    };
    save_mdn(&model, &table, header, &args.out)?;
    println!(
        "mdn trained: {} epochs over {} transition pairs",
        cfg.epochs,
        pairs.len()
    );
    let seed = cfg.seed;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), dataset_sha);
    inputs.insert("pcvae".into(), pcvae_sha);
    inputs.insert("nerf".into(), nerf_sha);
    finish_training(&args.out, &cfg, &stats, inputs, started, seed)
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    frame: FrameArgs,
    /// Render from the overhead diagnostic camera instead of a dataset pose.
    #[arg(long, default_value_t = false)]
    bird_eye: bool,
    /// Dataset pose to render from (defaults to the input frame's pose).
    #[arg(long)]
    view_pose: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_render(args: RenderArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let image = stack.frame_image(args.frame.key())?;
    let belief = stack.encoder()?.encode_image(image)?;
    let cam = if args.bird_eye {
        bird_eye_pose(&stack.manifest, image_dims(&stack.manifest).0, image_dims(&stack.manifest).1)
    } else {
        stack.manifest.poses[args.view_pose.unwrap_or(args.frame.pose)].clone()
    };
    let rendered = stack.field()?.render_image(&cam, &belief.mu)?;
    rendered.save_png(&args.out)?;
    println!("rendered {}", args.out.display());
    write_run_manifest(
        &args.out,
        sha256_of_json(&args.frame.key()),
        stack.hashes,
        vec![&args.out],
        started,
        args.seed,
    )
}

#[derive(Serialize)]
struct ProbeReport {
    schema: &'static str,
    input: FrameKey,
    occupied_slots: Vec<bool>,
    localized: Option<(usize, usize)>,
    seed: u64,
}

fn probe_report(stack: &Stack, key: FrameKey, seed: u64) -> Result<ProbeReport> {
    let image = stack.frame_image(key)?;
    let belief = stack.encoder()?.encode_image(image)?;
    let table = stack.table()?;
    let field = stack.field()?;
    let occupied = probe_slots(field, &belief.mu, &table.slots, table.tau)?;
    let localized = localize(field, &belief.mu, table).ok();
    Ok(ProbeReport {
        schema: "carff.probe.v1",
        input: key,
        occupied_slots: occupied,
        localized,
        seed,
    })
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    frame: FrameArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_probe(args: ProbeArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let report = probe_report(&stack, args.frame.key(), args.seed)?;
    match &report.localized {
        Some((s, t)) => println!("localized to scene {s} time {t}"),
        None => println!("ambiguous: probe pattern matches no known state"),
    }
    let out = args.out.unwrap_or_else(|| scratch_dir().join("probe.json"));
    write_json(&out, &report)?;
    write_run_manifest(
        &out,
        sha256_of_json(&args.frame.key()),
        stack.hashes,
        vec![&out],
        started,
        args.seed,
    )
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    frame: FrameArgs,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RolloutReport {
    schema: &'static str,
    input: FrameKey,
    probe: Option<ProbeReport>,
    rollout: carff::forecast::PredictReport,
    seed: u64,
}

fn cmd_predict(args: PredictArgs, device: &Device, with_probe: bool) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let key = args.frame.key();
    let probe = if with_probe {
        Some(probe_report(&stack, key, args.seed)?)
    } else {
        None
    };
    let image = stack.frame_image(key)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let rollout = autoregressive_predict(
        image,
        args.steps,
        stack.encoder()?,
        stack.mdn()?,
        stack.field()?,
        stack.table()?,
        &mut rng,
    )?;
    for (i, step) in rollout.steps.iter().enumerate() {
        println!(
            "step {}: scene {} time {}",
            i + 1,
            step.state.0,
            step.state.1
        );
    }
    let report = RolloutReport {
        schema: "carff.predict.v1",
        input: key,
        probe,
        rollout,
        seed: args.seed,
    };
    let out = args.out.unwrap_or_else(|| scratch_dir().join("predict.json"));
    write_json(&out, &report)?;
    write_run_manifest(
        &out,
        sha256_of_json(&key),
        stack.hashes,
        vec![&out],
        started,
        args.seed,
    )
}

#[derive(Args)]
struct ToggleArgs {
    #[command(flatten)]
    stack: StackArgs,
    /// Scene of the state to visualize.
    #[arg(long)]
    scene: usize,
    /// Timestamp of the state to visualize.
    #[arg(long)]
    time: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_toggle(args: ToggleArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let table = stack.table()?;
    let belief = table.beliefs.get(&(args.scene, args.time)).ok_or_else(|| {
        Error::Dataset(format!(
            "no stored belief for scene {} time {}",
            args.scene, args.time
        ))
    })?;
    let cam = bird_eye_pose(&stack.manifest, image_dims(&stack.manifest).0, image_dims(&stack.manifest).1);
    let rendered = stack.field()?.render_image(&cam, &belief.mu)?;
    rendered.save_png(&args.out)?;
    println!("rendered stored belief of ({}, {})", args.scene, args.time);
    write_run_manifest(
        &args.out,
        sha256_of_json(&(args.scene, args.time)),
        stack.hashes,
        vec![&args.out],
        started,
        args.seed,
    )
}

// ---------------------------------------------------------------------------
// planning
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    frame: FrameArgs,
    /// Samples per decision.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, value_enum, default_value_t = ControllerKind::Carff)]
    controller: ControllerKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_plan(args: PlanArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let cfg = ControllerConfig::new(args.n, args.controller);
    let image = stack.frame_image(args.frame.key())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let action = decide(
        image,
        stack.manifest.archetype,
        stack.manifest.planner.hazard_scene,
        &cfg,
        &stack.models()?,
        &mut rng,
    )?;
    println!("action: {action:?}");
    #[derive(Serialize)]
    struct PlanReport {
        schema: &'static str,
        input: FrameKey,
        n: usize,
        action: carff::planner::Action,
        seed: u64,
    }
    let out = args.out.unwrap_or_else(|| scratch_dir().join("plan.json"));
    write_json(
        &out,
        &PlanReport {
            schema: "carff.plan.v1",
            input: args.frame.key(),
            n: args.n,
            action,
            seed: args.seed,
        },
    )?;
    write_run_manifest(
        &out,
        sha256_of_json(&(args.n, args.controller)),
        stack.hashes,
        vec![&out],
        started,
        args.seed,
    )
}

#[derive(Args)]
struct TrialsArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = ControllerKind::Carff)]
    controller: ControllerKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_trials(args: TrialsArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let cfg = ControllerConfig::new(args.n, args.controller);
    let results = run_trials(
        &stack.manifest,
        &stack.images,
        &cfg,
        &stack.models()?,
        args.trials,
        args.seed,
    )?;
    let mut csv = format!(
        "# carff.trials.v1 controller={:?} n={} seed={}\ncell,successes,trials\n",
        args.controller, args.n, args.seed
    );
    for r in &results {
        println!("{}: {}/{}", r.cell, r.successes, r.trials);
        csv.push_str(&format!("{},{},{}\n", r.cell, r.successes, r.trials));
    }
    std::fs::write(&args.out, csv)?;
    write_run_manifest(
        &args.out,
        sha256_of_json(&(args.n, args.controller, args.trials)),
        stack.hashes,
        vec![&args.out],
        started,
        args.seed,
    )
}

#[derive(Args)]
struct CurvesArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[arg(long, default_value_t = 50)]
    n_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_curves(args: CurvesArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let curves = accuracy_recall_sweep(
        &stack.manifest,
        &stack.images,
        &stack.models()?,
        args.n_max,
        args.seed,
    )?;
    let mut csv = format!("# carff.curves.v1 seed={}\nn,accuracy,recall\n", args.seed);
    for i in 0..curves.n.len() {
        csv.push_str(&format!(
            "{},{},{}\n",
            curves.n[i], curves.accuracy[i], curves.recall[i]
        ));
    }
    std::fs::write(&args.out, csv)?;
    println!("swept n = 1..{}", args.n_max);
    write_run_manifest(
        &args.out,
        sha256_of_json(&args.n_max),
        stack.hashes,
        vec![&args.out],
        started,
        args.seed,
    )
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    #[command(subcommand)]
    which: EvalCmd,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Cross-state prediction quality table rendered from overhead.
    PsnrTable(PsnrTableArgs),
    /// Latent separability via a cross-validated SVM.
    Svm(SvmArgs),
    /// Grid of encoder inputs, ground truths, and cross-pose reconstructions.
    ReconGrid(ReconGridArgs),
}

#[derive(Args)]
struct PsnrTableArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_psnr_table(args: PsnrTableArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let cam = bird_eye_pose(&stack.manifest, image_dims(&stack.manifest).0, image_dims(&stack.manifest).1);
    let report = prediction_psnr_table(&stack.manifest, &stack.images, &stack.models()?, &cam)?;
    let mut csv = format!(
        "# carff.psnr-table.v1 seed={} matching_mean={:.4} unmatching_mean={:.4}\n",
        args.seed, report.matching_mean, report.unmatching_mean
    );
    csv.push_str("kind,state");
    for (s, t) in &report.states {
        csv.push_str(&format!(",{s}:{t}"));
    }
    csv.push_str(",matches\n");
    for row in &report.rows {
        csv.push_str(&format!("{:?},{}:{}", row.kind, row.state.0, row.state.1));
        for v in &row.values {
            csv.push_str(&format!(",{v:.4}"));
        }
        let matches: Vec<String> = row.matches.iter().map(|(s, t)| format!("{s}:{t}")).collect();
        csv.push_str(&format!(",{}\n", matches.join("|")));
    }
    std::fs::write(&args.out, csv)?;
    println!(
        "matching mean {:.2} dB, unmatching mean {:.2} dB, diagonal {}",
        report.matching_mean,
        report.unmatching_mean,
        if report.diagonal_property() { "holds" } else { "violated" }
    );
    write_run_manifest(
        &args.out,
        sha256_of_json(&"psnr-table"),
        stack.hashes,
        vec![&args.out],
        started,
        args.seed,
    )
}

#[derive(Args)]
struct SvmArgs {
    #[command(flatten)]
    stack: StackArgs,
    /// Use posterior means instead of one reparameterized draw per frame.
    #[arg(long, default_value_t = false)]
    use_means: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_svm(args: SvmArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let (samples, t_labels, st_labels) = latent_samples(
        &stack.manifest,
        &stack.images,
        stack.encoder()?,
        args.use_means,
        args.seed,
    )?;
    let by_t = svm_separability(&samples, &t_labels, "timestamp", args.seed)?;
    let by_st = svm_separability(&samples, &st_labels, "scene_timestamp", args.seed)?;
    println!(
        "timestamp accuracy {:.3}, scene-timestamp accuracy {:.3}",
        by_t.accuracy, by_st.accuracy
    );
    #[derive(Serialize)]
    struct SvmOut {
        schema: &'static str,
        use_means: bool,
        seed: u64,
        timestamp: carff::evalkit::SeparabilityReport,
        scene_timestamp: carff::evalkit::SeparabilityReport,
    }
    write_json(
        &args.out,
        &SvmOut {
            schema: "carff.svm.v1",
            use_means: args.use_means,
            seed: args.seed,
            timestamp: by_t,
            scene_timestamp: by_st,
        },
    )?;
    write_run_manifest(
        &args.out,
        sha256_of_json(&args.use_means),
        stack.hashes,
        vec![&args.out],
        started,
        args.seed,
    )
}

#[derive(Args)]
struct ReconGridArgs {
    #[command(flatten)]
    stack: StackArgs,
    /// Number of randomly selected encoder inputs (rows).
    #[arg(long, default_value_t = 4)]
    inputs: usize,
    /// Number of randomly sampled reconstruction poses (columns).
    #[arg(long, default_value_t = 3)]
    sample_poses: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_recon_grid(args: ReconGridArgs, device: &Device) -> Result<()> {
    let started = Instant::now();
    let stack = args.stack.load(device)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut keys: Vec<FrameKey> = stack
        .manifest
        .frames
        .iter()
        .map(|f| FrameKey {
            scene_id: f.scene_id,
            timestamp: f.timestamp,
            pose_id: f.pose_id,
        })
        .collect();
    keys.shuffle(&mut rng);
    keys.truncate(args.inputs);
    let mut poses: Vec<usize> = (0..stack.manifest.poses.len()).collect();
    poses.shuffle(&mut rng);
    poses.truncate(args.sample_poses);
    let grid = reconstruction_grid(stack.encoder()?, &stack.manifest, &stack.images, &keys, &poses)?;
    grid.save_png(&args.out)?;
    println!("wrote {}x{} pixel grid", grid.width, grid.height);
    write_run_manifest(
        &args.out,
        sha256_of_json(&(args.inputs, args.sample_poses)),
        stack.hashes,
        vec![&args.out],
        started,
        args.seed,
    )
}

// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<()> {
    let device = Device::Cpu;
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::TrainPcvae(a) => cmd_train_pcvae(a, &device),
        Cmd::TrainNerf(a) => cmd_train_nerf(a, &device),
        Cmd::TrainMdn(a) => cmd_train_mdn(a, &device),
        Cmd::Render(a) => cmd_render(a, &device),
        Cmd::Probe(a) => cmd_probe(a, &device),
        Cmd::Predict(a) => cmd_predict(a, &device, false),
        Cmd::ProbePredict(a) => cmd_predict(a, &device, true),
        Cmd::Toggle(a) => cmd_toggle(a, &device),
        Cmd::Plan(a) => cmd_plan(a, &device),
        Cmd::Trials(a) => cmd_trials(a, &device),
        Cmd::Curves(a) => cmd_curves(a, &device),
        Cmd::Eval(a) => match a.which {
            EvalCmd::PsnrTable(p) => cmd_psnr_table(p, &device),
            EvalCmd::Svm(p) => cmd_svm(p, &device),
            EvalCmd::ReconGrid(p) => cmd_recon_grid(p, &device),
        },
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
