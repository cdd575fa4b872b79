//! Training-time condition maps, built from the reference (plus noise), from
//! the brightness-mapped low-light input, or a per-sample mixture of the two.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::enhance::ConditionMap;
use crate::error::{Error, Result};
use crate::filters::Integral;
use crate::imgio::Image;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.03;
pub const DEFAULT_WINDOW: usize = 25;
pub const DEFAULT_MIX_P: f64 = 0.5;
/// Floor for the low-light window mean in the brightness ratio.
pub const MAPPING_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionMode {
    /// Reference V channel plus Gaussian noise.
    ReferenceNoise,
    /// Low-light V channel scaled by the local brightness ratio.
    LowlightMapping,
    /// One of the two above, drawn per sample.
    Mixture,
}

impl FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref" | "reference" => Ok(ConditionMode::ReferenceNoise),
            "map" | "mapping" => Ok(ConditionMode::LowlightMapping),
            "mix" | "mixture" => Ok(ConditionMode::Mixture),
            _ => Err(Error::InvalidParam(format!(
                "unknown condition source {s:?} (expected ref, map or mix)"
            ))),
        }
    }
}

impl fmt::Display for ConditionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionMode::ReferenceNoise => "ref",
            ConditionMode::LowlightMapping => "map",
            ConditionMode::Mixture => "mix",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionSource {
    pub mode: ConditionMode,
    pub noise_sigma: f64,
    /// Odd edge length of the brightness-ratio window.
    pub window: usize,
    /// Probability of picking the reference branch in mixture mode.
    pub mix_p: f64,
}

impl Default for ConditionSource {
    fn default() -> Self {
        ConditionSource {
            mode: ConditionMode::Mixture,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            window: DEFAULT_WINDOW,
            mix_p: DEFAULT_MIX_P,
        }
    }
}

impl ConditionSource {
    pub fn with_mode(mode: ConditionMode) -> Self {
        ConditionSource {
            mode,
            ..ConditionSource::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_window(self.window)?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.mix_p) {
            return Err(Error::InvalidParam(format!(
                "mix probability must be in [0, 1], got {}",
                self.mix_p
            )));
        }
        Ok(())
    }

    /// Whether a sample drawn with `rng` uses the reference branch.
    pub fn pick_reference<R: Rng>(&self, rng: &mut R) -> bool {
        match self.mode {
            ConditionMode::ReferenceNoise => true,
            ConditionMode::LowlightMapping => false,
            ConditionMode::Mixture => rng.gen::<f64>() < self.mix_p,
        }
    }
}

fn validate_window(window: usize) -> Result<()> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    Ok(())
}

fn check_pair(low: &Image, reference: &Image) -> Result<()> {
    if low.dims() != reference.dims() {
        return Err(Error::Shape(format!(
            "low {:?} vs reference {:?}",
            low.dims(),
            reference.dims()
        )));
    }
    Ok(())
}

/// Adds i.i.d. Gaussian noise to a V channel and clamps into `[0, 1]`.
pub fn add_value_noise<R: Rng>(value: &ConditionMap, sigma: f64, rng: &mut R) -> ConditionMap {
    if sigma == 0.0 {
        return value.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    ConditionMap::from_clamped(
        value.height(),
        value.width(),
        value
            .values()
            .iter()
            .map(|&v| f64::from(v) + normal.sample(rng))
            .collect::<Vec<_>>(),
    )
}

/// `alpha = clamp(V(ref) + n)`, `n ~ N(0, sigma^2)` per pixel.
pub fn cond_from_reference(reference: &Image, noise_sigma: f64, seed: u64) -> Result<ConditionMap> {
    ConditionSource {
        noise_sigma,
        ..ConditionSource::default()
    }
    .validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(add_value_noise(
        &ConditionMap::value_channel(reference),
        noise_sigma,
        &mut rng,
    ))
}

/// Local brightness ratio `w(i) = sum Y_V / sum X_V` over the clipped window
/// centred on each pixel.
pub fn brightness_ratio(low_v: &[f32], ref_v: &[f32], h: usize, w: usize, window: usize) -> Vec<f64> {
    let r = window / 2;
    let low_sum = Integral::new(low_v, h, w);
    let ref_sum = Integral::new(ref_v, h, w);
    let mut ratio = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (lo, n) = low_sum.window_sum(y, x, r);
            let (hi, _) = ref_sum.window_sum(y, x, r);
            let n = n as f64;
            ratio.push((hi / n) / (lo / n).max(MAPPING_EPS));
        }
    }
    ratio
}

/// Rescales `value` by the local brightness ratio towards `target`.
pub fn map_value_channel(value: &[f32], target: &[f32], h: usize, w: usize, window: usize) -> Result<Vec<f64>> {
    validate_window(window)?;
    let ratio = brightness_ratio(value, target, h, w, window);
    Ok(value
        .iter()
        .zip(ratio)
        .map(|(&v, k)| (k * f64::from(v)).clamp(0.0, 1.0))
        .collect())
}

/// `alpha(i) = clamp(w(i) * X_V(i))` with `w` the local ratio of V means.
pub fn cond_from_mapping(low: &Image, reference: &Image, window: usize) -> Result<ConditionMap> {
    check_pair(low, reference)?;
    let (h, w) = low.dims();
    let mapped = map_value_channel(&low.max_channel(), &reference.max_channel(), h, w, window)?;
    Ok(ConditionMap::from_clamped(h, w, mapped))
}

/// Draws the source once for the whole sample, then builds that condition.
/// Returns the map and whether the reference branch was taken.
pub fn cond_mixture(low: &Image, reference: &Image, src: &ConditionSource, seed: u64) -> Result<(ConditionMap, bool)> {
    src.validate()?;
    check_pair(low, reference)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let use_ref = src.pick_reference(&mut rng);
    let cond = if use_ref {
        add_value_noise(&ConditionMap::value_channel(reference), src.noise_sigma, &mut rng)
    } else {
        cond_from_mapping(low, reference, src.window)?
    };
    Ok((cond, use_ref))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_image(h: usize, w: usize, scale: f32, phase: f32) -> Image {
        let mut img = Image::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let t = (y as f32 * 0.05 + phase).sin() * 0.2 + (x as f32 * 0.03).cos() * 0.2 + 0.5;
                img.set_pixel(y, x, [t * scale, t * scale * 0.8, t * scale * 0.6]);
            }
        }
        img
    }

    #[test]
    fn zero_noise_reference_is_value_channel() {
        let img = smooth_image(12, 12, 1.0, 0.0);
        let a = cond_from_reference(&img, 0.0, 9).unwrap();
        assert_eq!(a.values(), img.max_channel().as_slice());
    }

    #[test]
    fn reference_noise_mean_absolute_deviation() {
        // Monte-Carlo oracle for E|clamp(V + n) - V| with V = 0.5: clamping
        // never triggers at sigma = 0.05 in practice, so the folded-normal
        // mean sigma * sqrt(2 / pi) applies.
        let sigma = 0.05;
        let oracle = {
            let mut rng = ChaCha8Rng::seed_from_u64(1234);
            let normal = Normal::new(0.0, sigma).unwrap();
            let n = 200_000;
            (0..n)
                .map(|_| ((0.5f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) - 0.5).abs())
                .sum::<f64>()
                / n as f64
        };
        assert!((oracle - sigma * (2.0 / std::f64::consts::PI).sqrt()).abs() < 5e-4);

        let img = Image::filled(300, 300, [0.5, 0.2, 0.1]);
        let a = cond_from_reference(&img, sigma, 77).unwrap();
        let mad = a.values().iter().map(|&v| (f64::from(v) - 0.5).abs()).sum::<f64>() / 90_000.0;
        assert!((mad - oracle).abs() < 1e-3, "{mad} vs {oracle}");
    }

    #[test]
    fn reference_noise_clamps_at_white() {
        let img = Image::filled(50, 50, [1.0; 3]);
        let a = cond_from_reference(&img, 0.1, 3).unwrap();
        assert!(a.values().iter().all(|&v| v <= 1.0));
        assert!(a.values().contains(&1.0));
        assert!(a.values().iter().any(|&v| v < 1.0));
    }

    #[test]
    fn mapping_closed_forms() {
        let low = Image::filled(9, 9, [0.2, 0.1, 0.05]);
        let reference = Image::filled(9, 9, [0.6, 0.4, 0.3]);
        let a = cond_from_mapping(&low, &reference, 5).unwrap();
        assert!(a.values().iter().all(|&v| (v - 0.6).abs() < 1e-6));

        let img = smooth_image(20, 20, 0.7, 0.3);
        let a = cond_from_mapping(&img, &img, 7).unwrap();
        for (x, y) in a.values().iter().zip(img.max_channel()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(cond_from_mapping(&img, &img, 4).is_err());
        assert!(cond_from_mapping(&img, &Image::new(3, 3), 3).is_err());
    }

    #[test]
    fn mapping_matches_reference_window_means() {
        let (h, w, window) = (80, 80, 25);
        let r = window / 2;
        let reference = smooth_image(h, w, 1.0, 0.0);
        // Low-light frame: the reference under a slowly varying gain.
        let mut low = Image::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let gain = 0.25 * (1.0 + 0.1 * (x as f32 * 0.02).sin());
                low.set_pixel(y, x, reference.pixel(y, x).map(|c| c * gain));
            }
        }
        let a = cond_from_mapping(&low, &reference, window).unwrap();

        let yv = reference.max_channel();
        let xv = low.max_channel();
        // Brute-force sliding-window oracle.
        let mean = |plane: &dyn Fn(usize) -> f64, cy: usize, cx: usize| {
            let mut s = 0.0;
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    s += plane(y * w + x);
                }
            }
            s / (window * window) as f64
        };
        let mut worst: f64 = 0.0;
        for cy in 2 * r..h - 2 * r {
            for cx in 2 * r..w - 2 * r {
                let ma = mean(&|i| f64::from(a.values()[i]), cy, cx);
                let my = mean(&|i| f64::from(yv[i]), cy, cx);
                let ratio = my / mean(&|i| f64::from(xv[i]), cy, cx);
                assert!(ratio > 1.0);
                worst = worst.max((ma - my).abs());
            }
        }
        assert!(worst < 1e-3, "worst window-mean gap {worst}");
    }

    #[test]
    fn mixture_extremes_and_frequency() {
        let low = smooth_image(10, 10, 0.2, 0.0);
        let reference = smooth_image(10, 10, 0.9, 0.0);
        let mut src = ConditionSource {
            mix_p: 1.0,
            noise_sigma: 0.0,
            ..ConditionSource::default()
        };
        for seed in 0..20 {
            let (a, used_ref) = cond_mixture(&low, &reference, &src, seed).unwrap();
            assert!(used_ref);
            assert_eq!(a, cond_from_reference(&reference, 0.0, 0).unwrap());
        }
        src.mix_p = 0.0;
        for seed in 0..20 {
            let (a, used_ref) = cond_mixture(&low, &reference, &src, seed).unwrap();
            assert!(!used_ref);
            assert_eq!(a, cond_from_mapping(&low, &reference, src.window).unwrap());
        }
        src.mix_p = 0.5;
        let hits = (0..10_000u64)
            .filter(|&s| cond_mixture(&low, &reference, &src, s).unwrap().1)
            .count();
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn source_validation() {
        let mut src = ConditionSource::default();
        assert!(src.validate().is_ok());
        src.window = 4;
        assert!(src.validate().is_err());
        src.window = 5;
        src.mix_p = 1.5;
        assert!(src.validate().is_err());
        src.mix_p = 0.5;
        src.noise_sigma = -0.1;
        assert!(src.validate().is_err());
        assert_eq!("mix".parse::<ConditionMode>().unwrap(), ConditionMode::Mixture);
        assert!("other".parse::<ConditionMode>().is_err());
    }
}
