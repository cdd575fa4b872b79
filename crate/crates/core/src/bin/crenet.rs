use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crenet::colorspace::equivalence_suite;
use crenet::condition::{ConditionMode, ConditionSource, DEFAULT_MIX_P, DEFAULT_NOISE_SIGMA, DEFAULT_WINDOW};
use crenet::enhance::make_condition;
use crenet::imgio::{load_dataset, read_image, write_image};
use crenet::lossmetrics::{eval_with_mapping, EvalReport, EvalRow};
use crenet::netcore::load_weights;
use crenet::synthdata::{make_dataset, NoiseModel, SynthConfig, DEFAULT_REF_SPREAD, DEFAULT_SCENE_SIZE};
use crenet::trainer::{
    enhance_full, train_pairs, AdamParams, TrainConfig, TrainOutputs, TrainState, DEFAULT_CHECKPOINT_EVERY,
};
use crenet::{CreNetWeights, EnhancerSpec, Result};

#[derive(Parser)]
#[command(name = "crenet", version, about = "Conditional re-enhancement of low-light images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic paired-exposure dataset.
    Synth(SynthArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Enhance one image under a condition built by a classical enhancer.
    Enhance(EnhanceArgs),
    /// PSNR/SSIM of a model on a paired dataset after brightness mapping.
    Eval(EvalArgs),
    /// Check HSV invariance of shared-illumination Retinex division.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    scenes: usize,
    #[arg(long, default_value_t = 0.02)]
    dt_low: f64,
    #[arg(long, default_value_t = 0.5)]
    dt_ref: f64,
    /// Reference exposures vary per scene down to dt_ref / ref_spread.
    #[arg(long, default_value_t = DEFAULT_REF_SPREAD)]
    ref_spread: f64,
    /// Read-noise standard deviation of the short exposure.
    #[arg(long, default_value_t = 0.03)]
    sigma: f64,
    /// Signal-dependent noise scale.
    #[arg(long, default_value_t = 0.0)]
    shot: f64,
    #[arg(long, default_value_t = DEFAULT_SCENE_SIZE)]
    height: usize,
    #[arg(long, default_value_t = DEFAULT_SCENE_SIZE)]
    width: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model path; the checkpoint and loss log are written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 48)]
    batch: usize,
    #[arg(long, default_value_t = 48)]
    patch: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Condition source: ref, map or mix.
    #[arg(long, default_value = "mix")]
    alpha_src: ConditionMode,
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA)]
    alpha_sigma: f64,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    alpha_window: usize,
    #[arg(long, default_value_t = DEFAULT_MIX_P)]
    alpha_mixp: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_CHECKPOINT_EVERY)]
    checkpoint_every: usize,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the loss every N steps (0 = quiet).
    #[arg(long, default_value_t = 50)]
    report_every: usize,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// gamma:<g>, he, lahe[:tile[:clip]] or lime[:radius[:eps]].
    #[arg(long, default_value = "gamma:0.45")]
    cond: EnhancerSpec,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "gamma:0.45")]
    cond: EnhancerSpec,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        scenes: a.scenes,
        height: a.height,
        width: a.width,
        dt_low: a.dt_low,
        dt_ref: a.dt_ref,
        ref_spread: a.ref_spread,
        noise: NoiseModel {
            read_sigma: a.sigma,
            shot_scale: a.shot,
        },
        seed: a.seed,
        ..SynthConfig::default()
    };
    let names = make_dataset(&config, &a.out)?;
    println!("wrote {} pairs to {}", names.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = TrainConfig {
        batch: a.batch,
        patch: a.patch,
        adam: AdamParams {
            lr: a.lr,
            ..AdamParams::default()
        },
        steps: a.steps,
        alpha_src: ConditionSource {
            mode: a.alpha_src,
            noise_sigma: a.alpha_sigma,
            window: a.alpha_window,
            mix_p: a.alpha_mixp,
        },
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
    };
    let pairs = load_dataset(&a.data)?;
    let resume = a.resume.as_ref().map(TrainState::load).transpose()?;
    let outputs = TrainOutputs::beside(&a.out);
    let every = a.report_every;
    let rows = train_pairs(&config, pairs, &outputs, resume, |row| {
        if every > 0 && row.step % every == 0 {
            eprintln!(
                "step {:>6}  l1 {:.5}  1-ssim {:.5}  total {:.5}",
                row.step, row.l1, row.ssim, row.total
            );
        }
    })?;
    if let Some(last) = rows.last() {
        println!("final loss {:.5} after {} steps", last.total, last.step);
    }
    println!("model: {}", outputs.model.display());
    println!("log: {}", outputs.log.display());
    Ok(())
}

fn enhance(a: EnhanceArgs) -> Result<()> {
    let weights: CreNetWeights<f32> = load_weights(&a.model)?;
    let img = read_image(&a.input)?;
    let cond = make_condition(&img, &a.cond)?;
    write_image(&enhance_full(&weights, &img, &cond)?, &a.out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let weights: CreNetWeights<f32> = load_weights(&a.model)?;
    let mut report = EvalReport::default();
    for pair in load_dataset(&a.data)? {
        let cond = make_condition(&pair.low, &a.cond)?;
        let out = enhance_full(&weights, &pair.low, &cond)?;
        let row = eval_with_mapping(&out, &pair.reference, a.window)?;
        report.push(EvalRow {
            scene: pair.scene_id,
            ..row
        });
    }
    fs::write(&a.report, report.to_csv()).map_err(|e| crenet::Error::Io {
        path: a.report.clone(),
        source: e,
    })?;
    println!(
        "{} scenes: mean PSNR {:.3} dB, mean SSIM {:.4}",
        report.rows.len(),
        report.mean_psnr(),
        report.mean_ssim()
    );
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let dev = equivalence_suite(a.samples, a.seed)?;
    println!("pixels checked:        {}", a.samples);
    println!("chromatic pixels:      {}", dev.chromatic_pixels);
    println!("max hue deviation:     {:.3e} deg", dev.hue);
    println!("max saturation dev.:   {:.3e}", dev.saturation);
    println!("max V scaling error:   {:.3e}", dev.value_scale);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Enhance(a) => enhance(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
