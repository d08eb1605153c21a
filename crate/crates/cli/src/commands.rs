//! One function per subcommand. Each reads its inputs from the workspace,
//! writes its artifacts and returns the manifest it recorded.

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde_json::json;
use sparsepose_core::container::ArrayWriter;
use sparsepose_core::synth::dataset::{build_dataset, load_split, DatasetSplit, Sample, SplitTag};
use sparsepose_models::diffusion::{denoiser_examples, train_denoiser};
use sparsepose_models::imputer::ImputerEnsemble;
use sparsepose_models::tokenizer::{train_tokenizer, VqVae};

use crate::config::{Mode, PipelineConfig};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::pipeline::{evaluate_imputation, impute_sequence, run_regime, HandSource, ModelStack, Regime, RegimeOutput};
use crate::plot::emit_plots;
use crate::report::{render_text, report_row, ImputationSection, Report, VisibilityStats, REPORT_SCHEMA_VERSION};
use crate::workspace::Workspace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainMae,
    TrainVqvae,
    TrainDiffusion,
    Impute,
    Generate,
    Evaluate,
    Plot,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::GenData,
        Command::TrainMae,
        Command::TrainVqvae,
        Command::TrainDiffusion,
        Command::Impute,
        Command::Generate,
        Command::Evaluate,
        Command::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainMae => "train-mae",
            Command::TrainVqvae => "train-vqvae",
            Command::TrainDiffusion => "train-diffusion",
            Command::Impute => "impute",
            Command::Generate => "generate",
            Command::Evaluate => "evaluate",
            Command::Plot => "plot",
        }
    }
}

/// Validates the config, runs `cmd` and writes its manifest.
pub fn run(cmd: Command, cfg: &PipelineConfig, ws: &Workspace) -> Result<RunManifest> {
    cfg.validate()?;
    let mut m = RunManifest::new(cmd.name(), cfg);
    let clock = Instant::now();
    match cmd {
        Command::GenData => gen_data(cfg, ws, &mut m)?,
        Command::TrainMae => train_mae(cfg, ws, &mut m)?,
        Command::TrainVqvae => train_vqvae(cfg, ws, &mut m)?,
        Command::TrainDiffusion => train_diffusion(cfg, ws, &mut m)?,
        Command::Impute => impute(cfg, ws, &mut m)?,
        Command::Generate => generate(cfg, ws, &mut m)?,
        Command::Evaluate => evaluate(cfg, ws, &mut m)?,
        Command::Plot => plot(cfg, ws, &mut m)?,
    }
    m.timings.insert("total".into(), clock.elapsed().as_secs_f64());
    m.write(&ws.manifest(cmd.name()))?;
    Ok(m)
}

fn split_dir(ws: &Workspace, tag: SplitTag) -> std::path::PathBuf {
    ws.data().join(tag.name())
}

fn load(ws: &Workspace, tag: SplitTag, m: &mut RunManifest) -> Result<Vec<Sample>> {
    let dir = split_dir(ws, tag);
    Workspace::require(std::slice::from_ref(&dir))?;
    m.input(&format!("data/{}", tag.name()), &dir)?;
    Ok(load_split(&dir)?.samples)
}

/// The inference split, truncated to `max_sequences`.
pub fn inference_samples(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<Vec<Sample>> {
    let mut samples = load(ws, cfg.inference.split, m)?;
    if let Some(n) = cfg.inference.max_sequences {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(CliError::Config(format!("the {} split has no sequences", cfg.inference.split.name())));
    }
    Ok(samples)
}

fn gen_data(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<()> {
    let ds = build_dataset(&cfg.data, ws.data())?;
    m.output("data", &ws.data())?;
    let stats: serde_json::Map<String, serde_json::Value> = SplitTag::ALL
        .iter()
        .map(|&t| {
            let s = &ds.split(t).samples;
            (t.name().to_string(), json!({"sequences": s.len(), "visibility": VisibilityStats::of(s)}))
        })
        .collect();
    m.metrics = serde_json::Value::Object(stats);
    Ok(())
}

fn train_mae(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<()> {
    let train = load(ws, SplitTag::Train, m)?;
    let val = load(ws, SplitTag::Val, m)?;
    let clock = Instant::now();
    let split = DatasetSplit {
        tag: SplitTag::Train,
        samples: train,
    };
    let ens = ImputerEnsemble::train(&split, &cfg.imputer)?;
    m.timings.insert("train".into(), clock.elapsed().as_secs_f64());
    ens.save(ws.imputer())?;
    m.output("imputer", &ws.imputer())?;
    let eval = evaluate_imputation(&ens, &val)?;
    info!("validation imputation error {:.2} cm, interpolation {:.2} cm", eval.pooled_mae_cm, eval.pooled_interpolation_cm);
    m.metrics = json!({
        "val_imputation_cm": eval.pooled_mae_cm,
        "val_interpolation_cm": eval.pooled_interpolation_cm,
        "val_calibration_2sigma": eval.calibration_2sigma,
    });
    Ok(())
}

fn train_vqvae(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<()> {
    let split = DatasetSplit {
        tag: SplitTag::Train,
        samples: load(ws, SplitTag::Train, m)?,
    };
    let val = load(ws, SplitTag::Val, m)?;
    let clock = Instant::now();
    let (vq, report) = train_tokenizer(&split, &cfg.tokenizer)?;
    m.timings.insert("train".into(), clock.elapsed().as_secs_f64());
    vq.save(ws.tokenizer(), &report.history)?;
    m.output("tokenizer", &ws.tokenizer())?;
    let stack = ModelStack {
        vq,
        imputer: None,
        guided: None,
        head_only: None,
    };
    let mut inf = cfg.inference.clone();
    inf.stride = stack.window();
    let rec = run_regime(&stack, &val, &Regime::Reconstruction, &inf, cfg.seeds().inference)?;
    m.metrics = json!({
        "loss_history": report.history,
        "dead_fraction": report.dead_fraction,
        "val_reconstruction_mpjpe_cm": mean_mpjpe(&rec),
    });
    Ok(())
}

fn mean_mpjpe(out: &RegimeOutput) -> f64 {
    out.predictions.iter().map(|p| p.metrics.mpjpe_cm).sum::<f64>() / out.predictions.len().max(1) as f64
}

fn train_diffusion(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<()> {
    Workspace::require(&[split_dir(ws, SplitTag::Train), ws.tokenizer(), ws.imputer()])?;
    let split = DatasetSplit {
        tag: SplitTag::Train,
        samples: load(ws, SplitTag::Train, m)?,
    };
    m.input("tokenizer", &ws.tokenizer())?;
    m.input("imputer", &ws.imputer())?;
    let vq = VqVae::load(ws.tokenizer())?.0;
    let imputer = ImputerEnsemble::load(ws.imputer())?;
    let k = vq.codebook.k;

    let clock = Instant::now();
    let guided = denoiser_examples(&split, &vq, Some(&imputer), cfg.diffusion.uncertainty, cfg.diffusion.window_stride)?;
    let (model, guided_history) = train_denoiser(&guided, k, &cfg.diffusion)?;
    m.timings.insert("train_guided".into(), clock.elapsed().as_secs_f64());
    model.save(ws.denoiser(), &guided_history)?;
    m.output("denoiser", &ws.denoiser())?;

    let clock = Instant::now();
    let plain = denoiser_examples(&split, &vq, None, cfg.head_only.uncertainty, cfg.head_only.window_stride)?;
    let (model, head_history) = train_denoiser(&plain, k, &cfg.head_only)?;
    m.timings.insert("train_head_only".into(), clock.elapsed().as_secs_f64());
    model.save(ws.head_only_denoiser(), &head_history)?;
    m.output("denoiser_head_only", &ws.head_only_denoiser())?;

    m.metrics = json!({
        "guided_windows": guided.len(),
        "guided_loss_history": guided_history,
        "head_only_loss_history": head_history,
    });
    Ok(())
}

fn impute(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<()> {
    Workspace::require(&[split_dir(ws, cfg.inference.split), ws.imputer()])?;
    let samples = inference_samples(cfg, ws, m)?;
    m.input("imputer", &ws.imputer())?;
    let imputer = ImputerEnsemble::load(ws.imputer())?;
    let kind = cfg.inference.uncertainty;
    let out = samples.iter().map(|s| impute_sequence(&imputer, s, kind)).collect::<Result<Vec<_>>>()?;
    let n = out.len();
    let frames = out[0].frames();
    let w = imputer.hand_dim.width();
    let dir = ws.outputs("impute");
    let mut wr = ArrayWriter::create(&dir)?;
    wr.f32("mean", &[n, frames, 2, w], &out.iter().flat_map(|o| o.mean.iter().copied()).collect::<Vec<_>>())?;
    wr.f32("uncertainty", &[n, frames, 2, w], &out.iter().flat_map(|o| o.uncertainty.iter().copied()).collect::<Vec<_>>())?;
    wr.u8("mask", &[n, frames, 2], &out.iter().flat_map(|o| o.mask.visible.iter().flatten().map(|&v| v as u8)).collect::<Vec<_>>())?;
    wr.finish("sparsepose.imputed", json!({"uncertainty": kind, "hand_dim": imputer.hand_dim}))?;
    m.output("imputed", &dir)?;
    let eval = evaluate_imputation(&imputer, &samples)?;
    m.metrics = serde_json::to_value(&eval)?;
    Ok(())
}

fn report_of(cfg: &PipelineConfig, samples: &[Sample], outputs: &[RegimeOutput], imputation: Option<ImputationSection>) -> Report {
    let ev = &cfg.evaluate;
    let seed = cfg.seeds().bootstrap;
    Report {
        schema_version: REPORT_SCHEMA_VERSION,
        split: cfg.inference.split.name().into(),
        sequences: samples.len(),
        confidence: ev.confidence,
        bootstrap_resamples: ev.bootstrap_resamples,
        visibility: VisibilityStats::of(samples),
        rows: outputs.iter().map(|o| report_row(o, ev.bootstrap_resamples, ev.confidence, seed)).collect(),
        imputation,
    }
}

fn write_report(report: &Report, dir: &Path, m: &mut RunManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let json_path = dir.join("report.json");
    let text_path = dir.join("report.txt");
    fs::write(&json_path, serde_json::to_string_pretty(report)? + "\n").map_err(|e| CliError::io(&json_path, e))?;
    fs::write(&text_path, render_text(report)).map_err(|e| CliError::io(&text_path, e))?;
    m.output("report", &json_path)?;
    m.metrics = serde_json::to_value(report)?;
    Ok(())
}

fn record_models(ws: &Workspace, modes: &[Mode], m: &mut RunManifest) -> Result<ModelStack> {
    let stack = ModelStack::load(ws, modes)?;
    m.input("tokenizer", &ws.tokenizer())?;
    if stack.imputer.is_some() {
        m.input("imputer", &ws.imputer())?;
    }
    if stack.guided.is_some() {
        m.input("denoiser", &ws.denoiser())?;
    }
    if stack.head_only.is_some() {
        m.input("denoiser_head_only", &ws.head_only_denoiser())?;
    }
    Ok(stack)
}

fn write_predictions(out: &RegimeOutput, dir: &Path) -> Result<()> {
    let n = out.predictions.len();
    let frames = out.predictions[0].positions.len();
    let joints = out.predictions[0].positions[0].len();
    let pos: Vec<f64> = out.predictions.iter().flat_map(|p| p.positions.iter().flatten().flat_map(|v| [v.x, v.y, v.z])).collect();
    let rot: Vec<f64> = out
        .predictions
        .iter()
        .flat_map(|p| p.local_rotations.iter().flatten().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
        .collect();
    let mut wr = ArrayWriter::create(dir)?;
    wr.f32("positions", &[n, frames, joints, 3], &pos)?;
    wr.f32("local_rotations", &[n, frames, joints, 3, 3], &rot)?;
    wr.finish("sparsepose.predictions", json!({"regime": out.regime}))?;
    Ok(())
}

fn require_all(cfg: &PipelineConfig, ws: &Workspace, modes: &[Mode]) -> Result<()> {
    let mut need = vec![split_dir(ws, cfg.inference.split)];
    need.extend(ModelStack::required(ws, modes));
    Workspace::require(&need)
}

fn generate(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<()> {
    require_all(cfg, ws, &[cfg.inference.mode])?;
    let samples = inference_samples(cfg, ws, m)?;
    let inf = &cfg.inference;
    let stack = record_models(ws, &[inf.mode], m)?;
    let regime = Regime::for_mode(inf.mode, inf.strategy);
    let out = run_regime(&stack, &samples, &regime, inf, cfg.seeds().inference)?;
    m.timings.insert(format!("sampling/{}", regime.name()), out.sampling_seconds);
    let dir = ws.outputs("generate");
    let pred_dir = dir.join("predictions");
    write_predictions(&out, &pred_dir)?;
    m.output("predictions", &pred_dir)?;
    write_report(&report_of(cfg, &samples, &[out], None), &dir, m)
}

/// Regimes a full evaluation runs, in report order.
pub fn evaluation_regimes(cfg: &PipelineConfig) -> Vec<Regime> {
    let ev = &cfg.evaluate;
    let mut r = vec![Regime::Reconstruction, Regime::for_mode(Mode::HeadOnly, cfg.inference.strategy)];
    for &s in &ev.strategies {
        r.push(Regime::for_mode(Mode::DoublySparse, s));
    }
    if ev.include_interpolation {
        r.push(Regime::Generation {
            hands: HandSource::Interpolated,
            strategy: Some(cfg.inference.strategy),
        });
    }
    if ev.include_dense_hands {
        r.push(Regime::for_mode(Mode::DenseHands, cfg.inference.strategy));
    }
    r
}

fn evaluate(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<()> {
    let modes = [Mode::HeadOnly, Mode::DoublySparse, Mode::DenseHands];
    require_all(cfg, ws, &modes)?;
    let samples = inference_samples(cfg, ws, m)?;
    let stack = record_models(ws, &modes, m)?;
    let mut outputs = Vec::new();
    for regime in evaluation_regimes(cfg) {
        let out = run_regime(&stack, &samples, &regime, &cfg.inference, cfg.seeds().inference)?;
        info!("{}: MPJPE {:.2} cm", regime.name(), mean_mpjpe(&out));
        m.timings.insert(format!("sampling/{}", regime.name()), out.sampling_seconds);
        outputs.push(out);
    }
    let imputer = stack.imputer.as_ref().expect("doubly sparse mode loads the imputer");
    let eval = evaluate_imputation(imputer, &samples)?;
    let ev = &cfg.evaluate;
    let section = ImputationSection::from_eval(&eval, ev.bootstrap_resamples, ev.confidence, cfg.seeds().bootstrap);
    write_report(&report_of(cfg, &samples, &outputs, Some(section)), &ws.outputs("evaluate"), m)
}

fn plot(cfg: &PipelineConfig, ws: &Workspace, m: &mut RunManifest) -> Result<()> {
    Workspace::require(&[split_dir(ws, cfg.inference.split), ws.imputer()])?;
    let samples = inference_samples(cfg, ws, m)?;
    let i = cfg.plot.sequence;
    let sample = samples
        .get(i)
        .ok_or_else(|| CliError::Config(format!("sequence {i} is outside the {}-sequence split", samples.len())))?;
    m.input("imputer", &ws.imputer())?;
    let imputer = ImputerEnsemble::load(ws.imputer())?;
    let imp = impute_sequence(&imputer, sample, cfg.inference.uncertainty)?;
    let dir = ws.outputs("plot");
    let stem = format!("{}_seq{i:03}", imp.kind.name());
    for p in emit_plots(&imp, Some(&sample.signal.hands), &sample.mask, &dir, &stem)? {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        m.output(&name, &p)?;
    }
    m.metrics = json!({"sequence": i, "frames": imp.frames()});
    Ok(())
}
