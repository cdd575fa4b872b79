//! Adam training loop: sample patches, build conditions, forward, L1+SSIM
//! loss, backward, update. Checkpoints and a CSV loss log on the side.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::condition::{add_value_noise, cond_from_mapping, ConditionMode, ConditionSource};
use crate::enhance::ConditionMap;
use crate::error::{Error, Result};
use crate::imgio::{load_dataset, sample_patch_with, ExposurePair, Image};
use crate::lossmetrics::loss_l1_ssim;
use crate::netcore::{decode_weights, encode_weights, CreNetGrads, CreNetWeights, Tensor};
use crate::synthdata::derive_seed;

pub const DEFAULT_BATCH: usize = 48;
pub const DEFAULT_PATCH: usize = 48;
pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 500;
pub const LOG_HEADER: &str = "step,loss_l1,loss_ssim,total";

const CHECKPOINT_MAGIC: &[u8; 4] = b"CRET";
const CHECKPOINT_VERSION: u32 = 1;

/// Stream ids under the master seed.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidParam(format!("{name} must be in (0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParam(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moments, laid out like the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: CreNetWeights<f32>,
    pub v: CreNetWeights<f32>,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            m: CreNetWeights::zeros(),
            v: CreNetWeights::zeros(),
            step: 0,
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One bias-corrected Adam update of a flat parameter slice. `t` is the
/// 1-based step number.
pub fn adam_update(w: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32], t: u64, p: &AdamParams) -> Result<()> {
    if g.len() != w.len() || m.len() != w.len() || v.len() != w.len() {
        return Err(Error::Shape(format!(
            "adam slices differ: w {} g {} m {} v {}",
            w.len(),
            g.len(),
            m.len(),
            v.len()
        )));
    }
    let c1 = 1.0 - p.beta1.powf(t as f64);
    let c2 = 1.0 - p.beta2.powf(t as f64);
    for i in 0..w.len() {
        let gi = f64::from(g[i]);
        let mi = p.beta1 * f64::from(m[i]) + (1.0 - p.beta1) * gi;
        let vi = p.beta2 * f64::from(v[i]) + (1.0 - p.beta2) * gi * gi;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = p.lr * (mi / c1) / ((vi / c2).sqrt() + p.eps);
        w[i] = (f64::from(w[i]) - update) as f32;
    }
    Ok(())
}

/// Applies one Adam step to every layer.
pub fn adam_step(
    weights: &mut CreNetWeights<f32>,
    grads: &CreNetGrads<f32>,
    state: &mut AdamState,
    params: &AdamParams,
) -> Result<()> {
    if grads.len() != weights.layers.len() {
        return Err(Error::Shape(format!(
            "{} gradient layers for {} weight layers",
            grads.len(),
            weights.layers.len()
        )));
    }
    state.step += 1;
    let t = state.step;
    for (((layer, g), m), v) in weights
        .layers
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        adam_update(&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight, t, params)?;
        adam_update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, t, params)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub patch: usize,
    pub adam: AdamParams,
    pub steps: usize,
    pub alpha_src: ConditionSource,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: DEFAULT_BATCH,
            patch: DEFAULT_PATCH,
            adam: AdamParams::default(),
            steps: 1000,
            alpha_src: ConditionSource::default(),
            seed: 0,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidParam("batch must be >= 1".into()));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(2) {
            return Err(Error::InvalidParam(format!("patch must be even, got {}", self.patch)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidParam(format!(
                "learning rate must be > 0, got {}",
                self.adam.lr
            )));
        }
        self.adam.validate()?;
        self.alpha_src.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub l1: f64,
    /// `1 - SSIM`.
    pub ssim: f64,
    pub total: f64,
}

impl LossRow {
    pub fn csv(&self) -> String {
        format!("{},{:.8},{:.8},{:.8}", self.step, self.l1, self.ssim, self.total)
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub weights: CreNetWeights<f32>,
    pub adam: AdamState,
}

impl TrainState {
    pub fn fresh(seed: u64) -> Self {
        TrainState {
            weights: CreNetWeights::init(derive_seed(seed, INIT_STREAM)),
            adam: AdamState::new(),
        }
    }

    /// Completed steps.
    pub fn step(&self) -> usize {
        self.adam.step as usize
    }

    /// `"CRET"`, version, step (u64), then three length-prefixed weight
    /// blobs: weights, first moments, second moments.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        for blob in [&self.weights, &self.adam.m, &self.adam.v].map(encode_weights) {
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            out.extend_from_slice(&blob);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Truncated);
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::BadVersion(version));
        }
        let step = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let mut rest = &bytes[16..];
        let mut blobs = Vec::with_capacity(3);
        for _ in 0..3 {
            if rest.len() < 8 {
                return Err(Error::Truncated);
            }
            let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
            let body = rest.get(8..8usize.saturating_add(len)).ok_or(Error::Truncated)?;
            blobs.push(decode_weights::<f32>(body)?);
            rest = &rest[8 + len..];
        }
        if !rest.is_empty() {
            return Err(Error::Layout(format!("{} trailing checkpoint bytes", rest.len())));
        }
        let v = blobs.pop().expect("three blobs");
        let m = blobs.pop().expect("three blobs");
        let weights = blobs.pop().expect("three blobs");
        Ok(TrainState {
            weights,
            adam: AdamState { m, v, step },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Training pairs plus the per-pair data the condition source needs.
pub struct Trainer {
    config: TrainConfig,
    pairs: Vec<ExposurePair>,
    /// Full-image mapping conditions, cropped per patch.
    mapped: Vec<Option<ConditionMap>>,
    state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig, pairs: Vec<ExposurePair>) -> Result<Self> {
        let state = TrainState::fresh(config.seed);
        Self::resume(config, pairs, state)
    }

    pub fn resume(config: TrainConfig, pairs: Vec<ExposurePair>, state: TrainState) -> Result<Self> {
        config.validate()?;
        state.weights.validate()?;
        if pairs.is_empty() {
            return Err(Error::Dataset("training needs at least one pair".into()));
        }
        if let Some(p) = pairs.iter().find(|p| p.dims().0.min(p.dims().1) < config.patch) {
            return Err(Error::Dataset(format!(
                "scene {} ({:?}) is smaller than the {} pixel patch",
                p.scene_id,
                p.dims(),
                config.patch
            )));
        }
        let mapped = pairs
            .iter()
            .map(|p| match config.alpha_src.mode {
                ConditionMode::ReferenceNoise => Ok(None),
                _ => cond_from_mapping(&p.low, &p.reference, config.alpha_src.window).map(Some),
            })
            .collect::<Result<_>>()?;
        Ok(Trainer {
            config,
            pairs,
            mapped,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn weights(&self) -> &CreNetWeights<f32> {
        &self.state.weights
    }

    pub fn finished(&self) -> bool {
        self.state.step() >= self.config.steps
    }

    /// Low patches, reference patches and conditions for step `step`; drawn
    /// from an RNG seeded by the step number alone, so resuming needs no
    /// RNG state.
    pub fn batch(&self, step: usize) -> Result<(Vec<Image>, Vec<Image>, Vec<ConditionMap>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, step as u64));
        let n = self.config.batch;
        let (mut low, mut reference, mut cond) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let idx = rng.gen_range(0..self.pairs.len());
            let pair = &self.pairs[idx];
            let (l, r, (y0, x0)) = sample_patch_with(pair, self.config.patch, &mut rng)?;
            let c = if self.config.alpha_src.pick_reference(&mut rng) {
                add_value_noise(
                    &ConditionMap::value_channel(&r),
                    self.config.alpha_src.noise_sigma,
                    &mut rng,
                )
            } else {
                let full = self.mapped[idx].as_ref().expect("mapping precomputed for this mode");
                full.crop(y0, x0, self.config.patch, self.config.patch)?
            };
            low.push(l);
            reference.push(r);
            cond.push(c);
        }
        Ok((low, reference, cond))
    }

    /// Runs one optimization step and returns its loss.
    pub fn step(&mut self) -> Result<LossRow> {
        let step = self.state.step();
        let (low, reference, cond) = self.batch(step)?;
        let rgb = Tensor::<f32>::from_images(&low)?;
        let target = Tensor::<f32>::from_images(&reference)?;
        let alpha = Tensor::<f32>::from_conditions(&cond)?;
        let (out, trace) = self.state.weights.forward(&rgb, &alpha)?;
        let loss = loss_l1_ssim(&out, &target)?;
        if !loss.total.is_finite() {
            return Err(Error::InvalidParam(format!("non-finite loss at step {step}")));
        }
        let back = self.state.weights.backward(&trace, &loss.grad, false)?;
        adam_step(
            &mut self.state.weights,
            &back.weights,
            &mut self.state.adam,
            &self.config.adam,
        )?;
        Ok(LossRow {
            step: step + 1,
            l1: loss.l1,
            ssim: loss.ssim_term,
            total: loss.total,
        })
    }
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutputs {
    pub model: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl TrainOutputs {
    /// `<model>`, `<model>.ckpt` and `<model>.log.csv`.
    pub fn beside(model: impl AsRef<Path>) -> Self {
        let model = model.as_ref().to_path_buf();
        let with = |suffix: &str| {
            let mut s = model.clone().into_os_string();
            s.push(suffix);
            PathBuf::from(s)
        };
        TrainOutputs {
            checkpoint: with(".ckpt"),
            log: with(".log.csv"),
            model,
        }
    }
}

/// Trains until `config.steps`, logging every step. With `resume` set the
/// log is appended to and training continues from the checkpoint.
pub fn train_pairs(
    config: &TrainConfig,
    pairs: Vec<ExposurePair>,
    outputs: &TrainOutputs,
    resume: Option<TrainState>,
    mut on_step: impl FnMut(&LossRow),
) -> Result<Vec<LossRow>> {
    let resuming = resume.is_some();
    let mut trainer = match resume {
        Some(state) => Trainer::resume(config.clone(), pairs, state)?,
        None => Trainer::new(config.clone(), pairs)?,
    };
    let log_path = &outputs.log;
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(log_path)
        .map_err(|e| Error::io(log_path, e))?;
    if !resuming {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(log_path, e))?;
    }
    let mut rows = Vec::new();
    while !trainer.finished() {
        let row = trainer.step()?;
        writeln!(log, "{}", row.csv()).map_err(|e| Error::io(log_path, e))?;
        on_step(&row);
        rows.push(row);
        if config.checkpoint_every > 0 && row.step % config.checkpoint_every == 0 {
            trainer.state().save(&outputs.checkpoint)?;
        }
    }
    log.flush().map_err(|e| Error::io(log_path, e))?;
    crate::netcore::save_weights(trainer.weights(), &outputs.model)?;
    Ok(rows)
}

/// [`train_pairs`] on a dataset directory.
pub fn train(config: &TrainConfig, data_dir: impl AsRef<Path>, outputs: &TrainOutputs) -> Result<Vec<LossRow>> {
    train_pairs(config, load_dataset(data_dir)?, outputs, None, |_| {})
}

fn pad_even(img: &Image) -> Image {
    let (h, w) = img.dims();
    let (ph, pw) = (h + h % 2, w + w % 2);
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    let mut out = Image::new(ph, pw);
    for y in 0..ph {
        for x in 0..pw {
            out.set_pixel(y, x, img.pixel(y.min(h - 1), x.min(w - 1)));
        }
    }
    out
}

fn pad_even_cond(cond: &ConditionMap) -> ConditionMap {
    let (h, w) = cond.dims();
    let (ph, pw) = (h + h % 2, w + w % 2);
    ConditionMap::from_clamped(
        ph,
        pw,
        (0..ph * pw).map(|i| f64::from(cond.get((i / pw).min(h - 1), (i % pw).min(w - 1)))),
    )
}

/// Runs the network once on the whole image. Odd sizes are padded by edge
/// replication and cropped back.
pub fn enhance_full(weights: &CreNetWeights<f32>, img: &Image, cond: &ConditionMap) -> Result<Image> {
    if img.dims() != cond.dims() {
        return Err(Error::Shape(format!(
            "condition {:?} does not match image {:?}",
            cond.dims(),
            img.dims()
        )));
    }
    let (h, w) = img.dims();
    if h == 0 || w == 0 {
        return Err(Error::Shape("empty image".into()));
    }
    let rgb = Tensor::<f32>::from_images([&pad_even(img)])?;
    let alpha = Tensor::<f32>::from_conditions([&pad_even_cond(cond)])?;
    let out = weights.infer(&rgb, &alpha)?.to_image(0)?;
    if out.dims() == (h, w) {
        Ok(out)
    } else {
        out.crop(0, 0, h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::SynthConfig;

    fn scalar_adam(w0: f32, target: f32, params: &AdamParams, steps: usize) -> f32 {
        let (mut w, mut m, mut v) = ([w0], [0.0], [0.0]);
        for t in 1..=steps {
            let g = [2.0 * (w[0] - target)];
            adam_update(&mut w, &g, &mut m, &mut v, t as u64, params).unwrap();
        }
        w[0]
    }

    #[test]
    fn adam_matches_reference_recurrence() {
        // Independent f64 recurrence as the oracle.
        let p = AdamParams {
            lr: 0.1,
            ..AdamParams::default()
        };
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=500 {
            let g = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let ours = scalar_adam(0.0, 3.0, &p, 500);
        assert!((w - 3.0).abs() < 1e-3, "oracle {w}");
        assert!((f64::from(ours) - 3.0).abs() < 1e-3, "ours {ours}");
    }

    #[test]
    fn adam_edge_cases() {
        let p = AdamParams {
            lr: 0.0,
            ..AdamParams::default()
        };
        assert_eq!(scalar_adam(1.5, 3.0, &p, 50), 1.5);

        let p = AdamParams::default();
        let (mut w, mut m, mut v) = ([0.7f32], [0.0], [0.0]);
        for t in 1..=20 {
            adam_update(&mut w, &[0.0], &mut m, &mut v, t, &p).unwrap();
        }
        assert_eq!(w, [0.7]);

        for g in [1e-3f32, 0.5, -40.0] {
            let (mut w, mut m, mut v) = ([0.0f32], [0.0], [0.0]);
            adam_update(&mut w, &[g], &mut m, &mut v, 1, &p).unwrap();
            assert!(w[0].abs() <= (p.lr * 1.001) as f32);
            assert!((w[0].abs() - p.lr as f32).abs() < 1e-5);
            assert_eq!(w[0].signum(), -g.signum());
        }
        assert!(adam_update(&mut [0.0], &[0.0, 1.0], &mut [0.0], &mut [0.0], 1, &p).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert_eq!((ok.batch, ok.patch, ok.adam.lr), (48, 48, 1e-3));
        for bad in [
            TrainConfig { batch: 0, ..ok.clone() },
            TrainConfig {
                patch: 47,
                ..ok.clone()
            },
            TrainConfig {
                adam: AdamParams { lr: 0.0, ..ok.adam },
                ..ok.clone()
            },
            TrainConfig {
                adam: AdamParams { beta1: 1.0, ..ok.adam },
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn tiny_setup(steps: usize) -> (TrainConfig, Vec<ExposurePair>) {
        let data = SynthConfig {
            scenes: 3,
            height: 16,
            width: 16,
            seed: 1,
            ..SynthConfig::default()
        };
        let config = TrainConfig {
            batch: 2,
            patch: 8,
            steps,
            seed: 5,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        (config, data.pairs().unwrap())
    }

    #[test]
    fn zero_steps_keep_initial_weights() {
        let (config, pairs) = tiny_setup(0);
        let dir = tempfile::tempdir().unwrap();
        let outputs = TrainOutputs::beside(dir.path().join("m.cren"));
        let rows = train_pairs(&config, pairs, &outputs, None, |_| {}).unwrap();
        assert!(rows.is_empty());
        let saved: CreNetWeights<f32> = crate::netcore::load_weights(&outputs.model).unwrap();
        assert_eq!(saved, TrainState::fresh(config.seed).weights);
        assert_eq!(fs::read_to_string(&outputs.log).unwrap().trim(), LOG_HEADER);
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let (config, pairs) = tiny_setup(6);
        let mut a = Trainer::new(config.clone(), pairs.clone()).unwrap();
        let mut b = Trainer::new(config.clone(), pairs.clone()).unwrap();
        let mut rows = Vec::new();
        while !a.finished() {
            rows.push(a.step().unwrap());
            b.step().unwrap();
        }
        assert_eq!(a.state(), b.state());
        assert!(rows.iter().all(|r| r.total.is_finite() && r.total >= 0.0));

        // Checkpoint after 2 steps, round-trip through bytes, finish.
        let mut c = Trainer::new(config.clone(), pairs.clone()).unwrap();
        c.step().unwrap();
        c.step().unwrap();
        let restored = TrainState::decode(&c.state().encode()).unwrap();
        assert_eq!(&restored, c.state());
        let mut d = Trainer::resume(config, pairs, restored).unwrap();
        while !d.finished() {
            d.step().unwrap();
        }
        assert_eq!(d.state(), a.state());
    }

    #[test]
    fn train_pairs_resume_matches_uninterrupted() {
        let (config, pairs) = tiny_setup(4);
        let dir = tempfile::tempdir().unwrap();
        let full = TrainOutputs::beside(dir.path().join("full.cren"));
        train_pairs(&config, pairs.clone(), &full, None, |_| {}).unwrap();

        let part = TrainOutputs::beside(dir.path().join("part.cren"));
        let short = TrainConfig {
            steps: 2,
            checkpoint_every: 2,
            ..config.clone()
        };
        train_pairs(&short, pairs.clone(), &part, None, |_| {}).unwrap();
        let state = TrainState::load(&part.checkpoint).unwrap();
        assert_eq!(state.step(), 2);
        train_pairs(&config, pairs, &part, Some(state), |_| {}).unwrap();

        assert_eq!(fs::read(&full.model).unwrap(), fs::read(&part.model).unwrap());
        assert_eq!(
            fs::read_to_string(&full.log).unwrap(),
            fs::read_to_string(&part.log).unwrap()
        );
    }

    #[test]
    fn checkpoint_corruption_is_rejected() {
        let bytes = TrainState::fresh(1).encode();
        assert!(matches!(TrainState::decode(&bytes[..10]), Err(Error::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TrainState::decode(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(TrainState::decode(&bad).is_err());
        assert!(TrainState::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn each_condition_mode_trains() {
        for mode in [
            ConditionMode::ReferenceNoise,
            ConditionMode::LowlightMapping,
            ConditionMode::Mixture,
        ] {
            let (mut config, pairs) = tiny_setup(1);
            config.alpha_src = ConditionSource::with_mode(mode);
            let mut t = Trainer::new(config, pairs).unwrap();
            let (_, _, cond) = t.batch(0).unwrap();
            assert!(cond.iter().all(|c| c.dims() == (8, 8)));
            assert!(t.step().unwrap().total.is_finite());
        }
    }

    #[test]
    fn rejects_bad_datasets() {
        let (config, pairs) = tiny_setup(1);
        assert!(matches!(
            Trainer::new(config.clone(), Vec::new()),
            Err(Error::Dataset(_))
        ));
        let big = TrainConfig { patch: 32, ..config };
        assert!(matches!(Trainer::new(big, pairs), Err(Error::Dataset(_))));
    }

    #[test]
    fn zero_network_enhances_to_gray() {
        let img = Image::filled(7, 9, [0.2, 0.3, 0.4]);
        let cond = ConditionMap::filled(7, 9, 0.6);
        let out = enhance_full(&CreNetWeights::zeros(), &img, &cond).unwrap();
        assert_eq!(out.dims(), (7, 9));
        assert!(out.data().iter().all(|&v| v == 0.5));
        assert!(enhance_full(&CreNetWeights::zeros(), &img, &ConditionMap::filled(7, 8, 0.6)).is_err());
    }

    #[test]
    fn odd_sizes_match_padded_inference() {
        let w = CreNetWeights::init(3);
        let img = crate::synthdata::SynthConfig {
            height: 9,
            width: 11,
            ..Default::default()
        }
        .pair(0)
        .unwrap()
        .reference;
        let cond = ConditionMap::value_channel(&img);
        let out = enhance_full(&w, &img, &cond).unwrap();
        let padded = enhance_full(&w, &pad_even(&img), &pad_even_cond(&cond)).unwrap();
        assert_eq!(out, padded.crop(0, 0, 9, 11).unwrap());
    }
}
