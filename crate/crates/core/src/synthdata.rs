//! Synthetic paired exposures rendered through per-channel response curves.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::colorspace::{hue_distance, rgb_to_hsv_pixel};
use crate::error::{Error, Result};
use crate::imgio::{write_image, ExposurePair, ExposureTimes, Image, EXPOSURE_TABLE};

/// Long exposures are modelled as the mean of this many frames.
pub const REFERENCE_FRAMES: f64 = 80.0;
pub const DEFAULT_DT_LOW: f64 = 0.02;
pub const DEFAULT_DT_REF: f64 = 0.5;
pub const DEFAULT_READ_SIGMA: f64 = 0.03;
pub const DEFAULT_SCENE_SIZE: usize = 64;
pub const DEFAULT_REF_SPREAD: f64 = 8.0;

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `master`: `splitmix64(master + (index+1) * golden)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// `G_c(e) = clamp((e / (e + s_c))^p_c, 0, 1)` per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseCurve {
    pub scale: [f64; 3],
    pub shape: [f64; 3],
}

impl Default for ResponseCurve {
    fn default() -> Self {
        ResponseCurve {
            scale: [0.9, 1.0, 1.2],
            shape: [0.85, 0.90, 0.95],
        }
    }
}

impl ResponseCurve {
    pub fn uniform(scale: f64, shape: f64) -> Self {
        ResponseCurve {
            scale: [scale; 3],
            shape: [shape; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.iter().chain(&self.shape).all(|&v| v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!(
                "response curve parameters must be positive: {self:?}"
            )))
        }
    }

    pub fn apply(&self, channel: usize, exposure: f64) -> f64 {
        if exposure <= 0.0 {
            return 0.0;
        }
        (exposure / (exposure + self.scale[channel]))
            .powf(self.shape[channel])
            .clamp(0.0, 1.0)
    }

    pub fn apply_rgb(&self, e: [f64; 3], dt: f64) -> [f64; 3] {
        [0, 1, 2].map(|c| self.apply(c, e[c] * dt))
    }
}

/// Latent scene radiance, interleaved RGB, non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneIrradiance {
    height: usize,
    width: usize,
    e: Vec<f64>,
}

impl SceneIrradiance {
    pub fn new(height: usize, width: usize, e: Vec<f64>) -> Result<Self> {
        if e.len() != height * width * 3 {
            return Err(Error::Shape(format!("{} values for a {width}x{height} scene", e.len())));
        }
        if let Some(bad) = e.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParam(format!("irradiance must be >= 0, got {bad}")));
        }
        Ok(SceneIrradiance { height, width, e })
    }

    pub fn constant(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(
            height,
            width,
            rgb.iter().copied().cycle().take(height * width * 3).collect(),
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.e
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.e[i], self.e[i + 1], self.e[i + 2]]
    }
}

/// Gaussian noise with standard deviation `read_sigma + shot_scale * sqrt(G)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub read_sigma: f64,
    pub shot_scale: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            read_sigma: DEFAULT_READ_SIGMA,
            shot_scale: 0.0,
        }
    }
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        read_sigma: 0.0,
        shot_scale: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.read_sigma >= 0.0 && self.shot_scale >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("noise parameters must be >= 0: {self:?}")))
        }
    }

    /// Noise left after averaging `frames` exposures.
    pub fn averaged(&self, frames: f64) -> NoiseModel {
        let k = frames.sqrt();
        NoiseModel {
            read_sigma: self.read_sigma / k,
            shot_scale: self.shot_scale / k,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.read_sigma == 0.0 && self.shot_scale == 0.0
    }
}

/// `v = clamp(G_c(E * dt) + n, 0, 1)`; deterministic given `seed`.
pub fn render_exposure(
    scene: &SceneIrradiance,
    curve: &ResponseCurve,
    dt: f64,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Image> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParam(format!("exposure time must be > 0, got {dt}")));
    }
    curve.validate()?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = scene
        .e
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let g = curve.apply(i % 3, e * dt);
            let n = if noise.is_zero() {
                0.0
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * (noise.read_sigma + noise.shot_scale * g.sqrt())
            };
            (g + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    Image::from_vec(scene.height, scene.width, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Gradient,
    Blocks,
    Texture,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [SceneKind::Gradient, SceneKind::Blocks, SceneKind::Texture];
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(SceneKind::Gradient),
            "blocks" => Ok(SceneKind::Blocks),
            "texture" => Ok(SceneKind::Texture),
            other => Err(Error::InvalidParam(format!("unknown scene kind {other:?}"))),
        }
    }
}

const MIN_LUMINANCE: f64 = 1.5;
const MAX_LUMINANCE: f64 = 15.0;

fn random_color<R: Rng>(rng: &mut R, luminance: f64) -> [f64; 3] {
    [0, 1, 2].map(|_| luminance * rng.gen_range(0.3..=1.0))
}

fn random_luminance<R: Rng>(rng: &mut R) -> f64 {
    MIN_LUMINANCE * (MAX_LUMINANCE / MIN_LUMINANCE).powf(rng.gen::<f64>())
}

/// Sorted cut positions splitting `0..len` into `parts` non-empty spans.
fn cuts<R: Rng>(rng: &mut R, len: usize, parts: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (1..parts)
        .map(|i| {
            let nominal = len * i / parts;
            let jitter = (len / parts / 4) as isize;
            let j = if jitter > 0 { rng.gen_range(-jitter..=jitter) } else { 0 };
            (nominal as isize + j).clamp(1, len as isize - 1) as usize
        })
        .collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// Deterministic structured scene; `h, w >= 8`.
pub fn make_scene(kind: SceneKind, h: usize, w: usize, seed: u64) -> Result<SceneIrradiance> {
    if h < 8 || w < 8 {
        return Err(Error::InvalidParam(format!("scene must be at least 8x8, got {w}x{h}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Vec::with_capacity(h * w * 3);
    match kind {
        SceneKind::Gradient => {
            let la = random_luminance(&mut rng);
            let a = random_color(&mut rng, la);
            let lb = random_luminance(&mut rng);
            let b = random_color(&mut rng, lb);
            let angle = rng.gen_range(0.0..TAU);
            let (dy, dx) = angle.sin_cos();
            let proj = |y: usize, x: usize| dy * y as f64 / h as f64 + dx * x as f64 / w as f64;
            let corners = [proj(0, 0), proj(0, w - 1), proj(h - 1, 0), proj(h - 1, w - 1)];
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for y in 0..h {
                for x in 0..w {
                    let t = (proj(y, x) - lo) / (hi - lo).max(1e-12);
                    e.extend((0..3).map(|c| a[c] + (b[c] - a[c]) * t));
                }
            }
        }
        SceneKind::Blocks => {
            let (nr, nc) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
            let rows = cuts(&mut rng, h, nr);
            let cols = cuts(&mut rng, w, nc);
            let cells = (rows.len() + 1) * (cols.len() + 1);
            // Log-spaced luminance per cell, shuffled, so every cell differs.
            let offset: f64 = rng.gen();
            let mut levels: Vec<f64> = (0..cells)
                .map(|i| {
                    let t = (i as f64 + offset) / cells as f64;
                    MIN_LUMINANCE * (MAX_LUMINANCE / MIN_LUMINANCE).powf(t)
                })
                .collect();
            for i in (1..cells).rev() {
                levels.swap(i, rng.gen_range(0..=i));
            }
            let colors: Vec<[f64; 3]> = levels.iter().map(|&l| random_color(&mut rng, l)).collect();
            let band = |cuts: &[usize], v: usize| cuts.iter().filter(|&&c| v >= c).count();
            for y in 0..h {
                for x in 0..w {
                    let cell = band(&rows, y) * (cols.len() + 1) + band(&cols, x);
                    e.extend_from_slice(&colors[cell]);
                }
            }
        }
        SceneKind::Texture => {
            let lum = random_luminance(&mut rng);
            let base = random_color(&mut rng, lum);
            // Integer cycle counts up to a quarter of Nyquist on each axis.
            let (ky_max, kx_max) = ((h / 8) as i64, (w / 8) as i64);
            let waves: Vec<(f64, f64, f64, f64)> = (0..6)
                .map(|_| {
                    let (mut ky, mut kx) = (0, 0);
                    while ky == 0 && kx == 0 {
                        ky = rng.gen_range(0..=ky_max);
                        kx = rng.gen_range(-kx_max..=kx_max);
                    }
                    (ky as f64, kx as f64, rng.gen_range(0.2..1.0), rng.gen_range(0.0..TAU))
                })
                .collect();
            let total: f64 = waves.iter().map(|w| w.2).sum();
            for y in 0..h {
                for x in 0..w {
                    let t: f64 = waves
                        .iter()
                        .map(|&(ky, kx, a, phase)| {
                            a * (TAU * (ky * y as f64 / h as f64 + kx * x as f64 / w as f64) + phase).cos()
                        })
                        .sum();
                    let m = 1.0 + 0.7 * t / total;
                    e.extend(base.iter().map(|b| b * m));
                }
            }
        }
    }
    SceneIrradiance::new(h, w, e)
}

/// Renders one scene at both exposures; the reference uses the
/// frame-averaged noise model.
pub fn render_pair(
    scene: &SceneIrradiance,
    curve: &ResponseCurve,
    times: ExposureTimes,
    noise: &NoiseModel,
    seed: u64,
    scene_id: impl Into<String>,
) -> Result<ExposurePair> {
    let low = render_exposure(scene, curve, times.dt_low, noise, derive_seed(seed, 1))?;
    let reference = render_exposure(
        scene,
        curve,
        times.dt_ref,
        &noise.averaged(REFERENCE_FRAMES),
        derive_seed(seed, 2),
    )?;
    ExposurePair::new(low, reference, scene_id, Some(times))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scenes: usize,
    pub height: usize,
    pub width: usize,
    pub dt_low: f64,
    /// Longest reference exposure.
    pub dt_ref: f64,
    /// Each scene's reference exposure is log-uniform in
    /// `[dt_ref / ref_spread, dt_ref]`; 1 fixes it at `dt_ref`. A spread makes
    /// the target brightness not a function of the low-light frame alone.
    pub ref_spread: f64,
    pub curve: ResponseCurve,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 32,
            height: DEFAULT_SCENE_SIZE,
            width: DEFAULT_SCENE_SIZE,
            dt_low: DEFAULT_DT_LOW,
            dt_ref: DEFAULT_DT_REF,
            ref_spread: DEFAULT_REF_SPREAD,
            curve: ResponseCurve::default(),
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Exposure times of scene `index`.
    pub fn times(&self, index: usize) -> ExposureTimes {
        let seed = derive_seed(derive_seed(self.seed, index as u64), 3);
        let u = ChaCha8Rng::seed_from_u64(seed).gen::<f64>();
        ExposureTimes {
            dt_low: self.dt_low,
            dt_ref: self.dt_ref / self.ref_spread.powf(u),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ref_spread >= 1.0 && self.ref_spread.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "ref_spread must be >= 1, got {}",
                self.ref_spread
            )));
        }
        if !(self.dt_low > 0.0 && self.dt_low < self.dt_ref / self.ref_spread) {
            return Err(Error::InvalidParam(format!(
                "need 0 < dt_low < dt_ref / ref_spread, got {} / {} / {}",
                self.dt_low, self.dt_ref, self.ref_spread
            )));
        }
        self.curve.validate()?;
        self.noise.validate()
    }

    pub fn scene_name(index: usize) -> String {
        format!("scene_{index:04}")
    }

    /// Scene `index`: kind cycles gradient/blocks/texture, seeds derive from
    /// the master seed.
    pub fn scene(&self, index: usize) -> Result<SceneIrradiance> {
        let seed = derive_seed(self.seed, index as u64);
        make_scene(SceneKind::ALL[index % 3], self.height, self.width, derive_seed(seed, 0))
    }

    pub fn pair(&self, index: usize) -> Result<ExposurePair> {
        let scene = self.scene(index)?;
        let seed = derive_seed(self.seed, index as u64);
        render_pair(
            &scene,
            &self.curve,
            self.times(index),
            &self.noise,
            seed,
            Self::scene_name(index),
        )
    }

    /// All pairs in memory.
    pub fn pairs(&self) -> Result<Vec<ExposurePair>> {
        self.validate()?;
        (0..self.scenes).map(|i| self.pair(i)).collect()
    }
}

/// Writes `low/`, `ref/` (PPM) and the exposure table under `out_dir`.
pub fn make_dataset(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<String>> {
    config.validate()?;
    let out = out_dir.as_ref();
    for sub in ["low", "ref"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut table = String::from("scene,dt_low,dt_ref\n");
    let mut names = Vec::with_capacity(config.scenes);
    for i in 0..config.scenes {
        let pair = config.pair(i)?;
        let file = format!("{}.ppm", pair.scene_id);
        write_image(&pair.low, out.join("low").join(&file))?;
        write_image(&pair.reference, out.join("ref").join(&file))?;
        let t = config.times(i);
        writeln!(table, "{},{},{}", pair.scene_id, t.dt_low, t.dt_ref).expect("string write");
        names.push(pair.scene_id);
    }
    let path = out.join(EXPOSURE_TABLE);
    fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    Ok(names)
}

/// Noise-free RGB of one irradiance under each exposure time.
pub fn exposure_sweep(e: [f64; 3], curve: &ResponseCurve, dts: &[f64]) -> Vec<[f64; 3]> {
    dts.iter().map(|&dt| curve.apply_rgb(e, dt)).collect()
}

/// Largest hue / saturation change between two noise-free renders of the
/// same scene, over pixels chromatic in both.
pub fn hs_drift(scene: &SceneIrradiance, curve: &ResponseCurve, dt_a: f64, dt_b: f64) -> (f64, f64) {
    let (mut dh, mut ds) = (0.0f64, 0.0f64);
    for px in scene.e.chunks_exact(3) {
        let e = [px[0], px[1], px[2]];
        let a = rgb_to_hsv_pixel(curve.apply_rgb(e, dt_a));
        let b = rgb_to_hsv_pixel(curve.apply_rgb(e, dt_b));
        if a.s > 0.0 && b.s > 0.0 {
            dh = dh.max(hue_distance(a.h, b.h));
        }
        if a.v > 0.0 && b.v > 0.0 {
            ds = ds.max((a.s - b.s).abs());
        }
    }
    (dh, ds)
}
