//! `facegeom`: synthesize data, train, infer, evaluate and verify.
//!
//! Exit codes: 0 success, 1 invariant or evaluation failure, 2 usage error
//! or missing input, 3 data mismatch (ids or dimension ledgers).

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use facegeom::experiment::{evaluate_stored, EvalOptions, LandmarkChoice, Protocol};
use facegeom::metrics::NmeReduction;
use facegeom::morphable::{generate_synthetic_basis, reconstruct_posed, BasisSet, MIN_VERTICES};
use facegeom::networks::{infer, DimensionLedger, LandmarkModel, NetworkParams, CheckpointExtra};
use facegeom::predictions::{self, StoredPrediction};
use facegeom::training::{
    generate_dataset, history_csv, load_dataset, save_dataset, train, verify_sample, TrainConfig,
};
use facegeom::{io, Error};
use manifest::{beside, RunManifest};

#[derive(Parser)]
#[command(name = "facegeom", version, about = "Multi-task 3D face geometry pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic basis and a dataset drawn from it.
    Synth(SynthArgs),
    /// Train the network on a dataset.
    Train(TrainArgs),
    /// Run a checkpoint on every sample of a dataset.
    Infer(InferArgs),
    /// Score a prediction directory against groundtruth.
    Eval(EvalArgs),
    /// Check the invariants of a dataset or a checkpoint.
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 2048, value_parser = clap::value_parser!(u64).range(MIN_VERTICES as u64..))]
    n_vertices: u64,
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    /// Output directory; receives basis.json, dataset.json and their blobs.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the dataset draw; defaults to --seed.
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Key-value config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: PathBuf,
    #[arg(long)]
    loss_csv: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Obj,
    Json,
    Both,
}

#[derive(clap::Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest whose observations are run.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Emit::Both)]
    emit: Emit,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Nme,
    Mae,
    P1,
    P2,
    Florence,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    PerLandmark,
    GlobalNorm,
}

#[derive(Clone, Copy, ValueEnum)]
enum LandmarkArg {
    Refined,
    Coarse,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_data: PathBuf,
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    #[arg(long)]
    out_report: PathBuf,
    /// Per-sample NME reduction.
    #[arg(long, value_enum, default_value_t = ReductionArg::PerLandmark)]
    nme_reduction: ReductionArg,
    /// Landmark set scored by the nme protocol.
    #[arg(long, value_enum, default_value_t = LandmarkArg::Refined)]
    landmarks: LandmarkArg,
    /// Crop radius of the florence protocol, in basis units.
    #[arg(long)]
    crop_radius: Option<f64>,
}

#[derive(clap::Args)]
#[command(group(ArgGroup::new("target").required(true).args(["data", "checkpoint"])))]
struct VerifyArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Mismatch(_)) => 3,
            _ => 1,
        };
        Self { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

fn require(path: &Path) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure {
            code: 2,
            error: anyhow!("input not found: {}", path.display()),
        })
    }
}

fn mismatch(msg: String) -> Failure {
    Failure {
        code: 3,
        error: anyhow!(msg),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> anyhow::Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn synth(a: SynthArgs) -> Outcome {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let data_seed = a.data_seed.unwrap_or(a.seed);
    let basis = generate_synthetic_basis(a.seed, a.n_vertices as usize)?;
    let samples = generate_dataset(&basis, data_seed, a.count as usize)?;
    let basis_path = a.out.join("basis.json");
    let data_path = a.out.join("dataset.json");
    basis.save(&basis_path)?;
    save_dataset(&data_path, &samples, Some(data_seed), "basis.json")?;

    let mut m = RunManifest::new(
        "synth",
        serde_json::json!({ "n_vertices": a.n_vertices, "count": a.count }),
    );
    m.seed("basis", a.seed);
    m.seed("data", data_seed);
    for p in [&basis_path, &data_path] {
        m.output(p)?;
        m.output(&io::blob_path(p))?;
    }
    m.write(&a.out.join("run.json"))?;
    println!("wrote {} samples to {}", samples.len(), data_path.display());
    Ok(())
}

/// Checks that a network can run on data drawn from `basis`.
fn check_ledger(ledger: &DimensionLedger, extra: &CheckpointExtra, basis: &BasisSet, side: usize) -> Outcome {
    let vertices_ok = extra.n_vertices.map_or(true, |n| n == basis.n_vertices());
    if ledger.n_landmarks != basis.n_landmarks() || ledger.observation_side != side || !vertices_ok {
        return Err(mismatch(format!(
            "dimension ledger mismatch\n  checkpoint: n_landmarks {}, observation_side {}, n_vertices {:?}, ledger {}\n  data:       n_landmarks {}, observation_side {}, n_vertices {}",
            ledger.n_landmarks,
            ledger.observation_side,
            extra.n_vertices,
            serde_json::to_string(ledger).unwrap_or_default(),
            basis.n_landmarks(),
            side,
            basis.n_vertices()
        )));
    }
    Ok(())
}

fn observation_side(data: &facegeom::training::DatasetFile) -> usize {
    data.samples.first().map_or(0, |s| s.observation.rows())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    require(&a.data)?;
    let config = match &a.config {
        Some(p) => {
            require(p)?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::parse(&text).map_err(|e| Failure {
                code: 2,
                error: anyhow!("{}: {e}", p.display()),
            })?
        }
        None => TrainConfig::default(),
    };
    let data = load_dataset(&a.data)?;
    let extra = CheckpointExtra {
        n_vertices: Some(data.basis.n_vertices()),
    };
    check_ledger(&config.ledger, &CheckpointExtra::default(), &data.basis, observation_side(&data))?;
    if config.n_vertices != data.basis.n_vertices() {
        log::warn!(
            "config n_vertices {} differs from the dataset basis ({}); using the basis",
            config.n_vertices,
            data.basis.n_vertices()
        );
    }
    let model = LandmarkModel::from_basis(&data.basis);
    let mut params = NetworkParams::init(config.ledger.clone(), config.seed)?;
    let history = train(&config, &data.samples, &model, &mut params)?;
    params.save(&a.out_checkpoint, extra)?;
    fs::write(&a.loss_csv, history_csv(&history)).with_context(|| format!("writing {}", a.loss_csv.display()))?;

    let mut m = RunManifest::new("train", to_value(&config)?);
    m.seed("init", config.seed);
    m.input(&a.data)?;
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    m.output(&a.out_checkpoint)?;
    m.output(&io::blob_path(&a.out_checkpoint))?;
    m.output(&a.loss_csv)?;
    m.write(&beside(&a.out_checkpoint))?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!(
            "trained {} epochs: total loss {:.6e} -> {:.6e}",
            history.len(),
            first.total,
            last.total
        );
    }
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Outcome {
    require(&a.checkpoint)?;
    require(&a.input)?;
    let (params, extra) = NetworkParams::load(&a.checkpoint)?;
    let data = load_dataset(&a.input)?;
    check_ledger(&params.ledger, &extra, &data.basis, observation_side(&data))?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let model = LandmarkModel::from_basis(&data.basis);
    let obs: Vec<&[f64]> = data.samples.iter().map(|s| s.observation.data()).collect();
    let preds = infer(&params, &model, &obs, false)?;
    let mut m = RunManifest::new("infer", serde_json::json!({ "with_regressor": false }));
    m.input(&a.checkpoint)?;
    m.input(&a.input)?;
    for (s, p) in data.samples.iter().zip(&preds) {
        let stored = StoredPrediction::from_prediction(s.id.clone(), p)?;
        m.output(&predictions::write_params(&a.out_dir, &stored)?)?;
        if matches!(a.emit, Emit::Json | Emit::Both) {
            m.output(&predictions::write_landmarks(&a.out_dir, &stored)?)?;
        }
        if matches!(a.emit, Emit::Obj | Emit::Both) {
            let mut mesh = reconstruct_posed(&data.basis, &p.params)?;
            mesh.faces = Some(data.basis.faces().to_vec());
            let path = predictions::obj_path(&a.out_dir, &s.id);
            fs::write(&path, mesh.to_obj()).with_context(|| format!("writing {}", path.display()))?;
            m.output(&path)?;
        }
    }
    m.write(&a.out_dir.join("run.json"))?;
    println!("wrote predictions for {} samples to {}", preds.len(), a.out_dir.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Outcome {
    require(&a.pred_dir)?;
    require(&a.gt_data)?;
    let data = load_dataset(&a.gt_data)?;
    let preds = predictions::read_all(&a.pred_dir)?;
    let protocol = match a.protocol {
        ProtocolArg::Nme => Protocol::Nme,
        ProtocolArg::Mae => Protocol::Mae,
        ProtocolArg::P1 => Protocol::P1,
        ProtocolArg::P2 => Protocol::P2,
        ProtocolArg::Florence => Protocol::Florence,
    };
    let options = EvalOptions {
        reduction: match a.nme_reduction {
            ReductionArg::PerLandmark => NmeReduction::PerLandmark,
            ReductionArg::GlobalNorm => NmeReduction::GlobalNorm,
        },
        landmarks: match a.landmarks {
            LandmarkArg::Refined => LandmarkChoice::Refined,
            LandmarkArg::Coarse => LandmarkChoice::Coarse,
        },
        crop_radius: a.crop_radius,
    };
    let report = evaluate_stored(&data.basis, &data.samples, &preds, protocol, &options)?;
    io::write_json(&a.out_report, &report)?;

    let mut m = RunManifest::new(
        "eval",
        serde_json::json!({ "protocol": to_value(&protocol)?, "options": to_value(&options)? }),
    );
    m.input(&a.gt_data)?;
    for id in preds.keys() {
        m.input(&predictions::params_path(&a.pred_dir, id))?;
        m.input(&predictions::landmarks_path(&a.pred_dir, id))?;
    }
    m.output(&a.out_report)?;
    m.write(&beside(&a.out_report))?;
    println!("{}", io::to_json_string(&report)?);
    Ok(())
}

/// Fails with the name of the first violated invariant.
fn invariant(ok: bool, name: &str) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(anyhow!("invariant violated: {name}").into())
    }
}

fn verify_ledger_arithmetic() -> Outcome {
    let d = DimensionLedger::default();
    invariant(d.fusion_dim() == 2354, "default fusion width 2354")?;
    invariant(d.mmpf_dim() == 2418, "default MMPF width 2418")
}

fn verify_cmd(a: VerifyArgs) -> Outcome {
    verify_ledger_arithmetic()?;
    if let Some(path) = &a.data {
        require(path)?;
        let data = load_dataset(path).context("invariant violated: dataset format")?;
        data.basis.validate().context("invariant violated: basis layout")?;
        let ortho = data.basis.orthonormality_error();
        invariant(ortho < 1e-9, &format!("basis orthonormality (error {ortho:e})"))?;
        for s in &data.samples {
            verify_sample(&data.basis, s).context("invariant violated: sample self-consistency")?;
        }
        println!("dataset ok: {} samples, basis orthonormality error {ortho:e}", data.samples.len());
    }
    if let Some(path) = &a.checkpoint {
        require(path)?;
        let (params, extra) = NetworkParams::load(path).context("invariant violated: checkpoint layout")?;
        let l = &params.ledger;
        invariant(params.all_finite(), "finite parameters")?;
        invariant(l.mmpf_dim() == l.point_low_dim + l.fusion_dim(), "MMPF width arithmetic")?;
        println!(
            "checkpoint ok: fusion_dim = {}, mmpf_dim = {}, parameters = {}, n_vertices = {:?}",
            l.fusion_dim(),
            l.mmpf_dim(),
            params.num_parameters(),
            extra.n_vertices
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
