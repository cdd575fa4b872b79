//! RGB/HSV conversion and shared-illumination Retinex division.
//!
//! Hue is kept in degrees so the piecewise hue formula uses its natural
//! sector offsets (0/120/240) and slopes (±60). All conversions run in `f64`:
//! hue is only stable to ~1e-5 degrees in single precision, which is too
//! coarse for the invariance check below.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgio::Image;

/// Default stabilizer added to the illumination before dividing.
pub const RETINEX_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    /// Degrees in `[0, 360)`.
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Converts one RGB triple. Achromatic pixels (max == min) get hue 0, and
/// black gets saturation 0.
pub fn rgb_to_hsv_pixel([r, g, b]: [f64; 3]) -> Hsv {
    let hi = r.max(g).max(b);
    let lo = r.min(g).min(b);
    let chroma = hi - lo;
    let s = if hi > 0.0 { chroma / hi } else { 0.0 };
    let h = if chroma <= 0.0 {
        0.0
    } else if hi == r {
        let h = 60.0 * (g - b) / chroma;
        if h < 0.0 {
            h + 360.0
        } else {
            h
        }
    } else if hi == g {
        120.0 + 60.0 * (b - r) / chroma
    } else {
        240.0 + 60.0 * (r - g) / chroma
    };
    // (g - b) / chroma can round to a hair below zero and wrap to exactly 360.
    let h = if h >= 360.0 { h - 360.0 } else { h };
    Hsv { h, s, v: hi }
}

pub fn hsv_to_rgb_pixel(Hsv { h, s, v }: Hsv) -> [f64; 3] {
    let chroma = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let sector = (hp.floor() as usize).min(5);
    let frac = hp - sector as f64;
    // Channels in the sector: max = v, min = v - chroma, the rising/falling
    // one interpolates between them.
    let lo = v - chroma;
    let rising = lo + chroma * frac;
    let falling = v - chroma * frac;
    match sector {
        0 => [v, rising, lo],
        1 => [falling, v, lo],
        2 => [lo, v, rising],
        3 => [lo, falling, v],
        4 => [rising, lo, v],
        _ => [v, lo, falling],
    }
}

/// Smallest angle between two hues, in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub height: usize,
    pub width: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

impl HsvImage {
    pub fn pixel(&self, i: usize) -> Hsv {
        Hsv {
            h: self.h[i],
            s: self.s[i],
            v: self.v[i],
        }
    }
}

pub fn rgb_to_hsv(img: &Image) -> HsvImage {
    let n = img.pixel_count();
    let mut out = HsvImage {
        height: img.height(),
        width: img.width(),
        h: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for [r, g, b] in img.pixels() {
        let p = rgb_to_hsv_pixel([r.into(), g.into(), b.into()]);
        out.h.push(p.h);
        out.s.push(p.s);
        out.v.push(p.v);
    }
    out
}

pub fn hsv_to_rgb(hsv: &HsvImage) -> Image {
    let data = (0..hsv.v.len())
        .flat_map(|i| hsv_to_rgb_pixel(hsv.pixel(i)))
        .map(|c| c as f32)
        .collect();
    Image::from_vec_clamped(hsv.height, hsv.width, data).expect("dimensions carried over")
}

/// A single illumination value per pixel, shared by all three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    epsilon: f64,
}

impl IlluminationMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, epsilon: f64) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "illumination has {} values for {width}x{height}",
                values.len()
            )));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParam(format!("epsilon {epsilon} must be >= 0")));
        }
        if let Some(bad) = values
            .iter()
            .find(|&&v| !(0.0..=1.0).contains(&v) || v + epsilon <= 0.0)
        {
            return Err(Error::InvalidParam(format!(
                "illumination value {bad} invalid with epsilon {epsilon}"
            )));
        }
        Ok(IlluminationMap {
            height,
            width,
            values,
            epsilon,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64, epsilon: f64) -> Result<Self> {
        IlluminationMap::new(height, width, vec![value; height * width], epsilon)
    }

    /// The usual initial estimate: per-pixel channel max.
    pub fn from_max_channel(img: &Image, epsilon: f64) -> Result<Self> {
        let values = img.max_channel().into_iter().map(f64::from).collect();
        IlluminationMap::new(img.height(), img.width(), values, epsilon)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

fn check_dims(img: &Image, illum: &IlluminationMap) -> Result<()> {
    if img.dims() != illum.dims() {
        return Err(Error::Shape(format!(
            "image {:?} vs illumination {:?}",
            img.dims(),
            illum.dims()
        )));
    }
    Ok(())
}

/// `F / (I + eps)` per channel without clamping.
pub fn retinex_divide_unclamped(img: &Image, illum: &IlluminationMap) -> Result<Vec<[f64; 3]>> {
    check_dims(img, illum)?;
    Ok(img
        .pixels()
        .zip(&illum.values)
        .map(|(px, &i)| {
            let d = i + illum.epsilon;
            px.map(|c| f64::from(c) / d)
        })
        .collect())
}

/// `F / (I + eps)` per channel, clamped back into `[0, 1]`.
pub fn retinex_divide(img: &Image, illum: &IlluminationMap) -> Result<Image> {
    let raw = retinex_divide_unclamped(img, illum)?;
    let data = raw.into_iter().flatten().map(|c| c as f32).collect();
    Image::from_vec_clamped(img.height(), img.width(), data)
}

/// Worst-case drift of hue/saturation (and of the expected value scaling)
/// under unclamped Retinex division.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HsDeviation {
    /// Max circular hue difference over chromatic pixels, degrees.
    pub hue: f64,
    /// Max saturation difference over non-black pixels.
    pub saturation: f64,
    /// Max `|V_after - V_before / (I + eps)|`.
    pub value_scale: f64,
    /// Pixels that entered the hue comparison.
    pub chromatic_pixels: usize,
}

impl HsDeviation {
    pub fn merge(self, other: HsDeviation) -> HsDeviation {
        HsDeviation {
            hue: self.hue.max(other.hue),
            saturation: self.saturation.max(other.saturation),
            value_scale: self.value_scale.max(other.value_scale),
            chromatic_pixels: self.chromatic_pixels + other.chromatic_pixels,
        }
    }
}

/// Compares HSV of an image with HSV of its unclamped Retinex quotient.
///
/// Hue is only compared where the pixel is chromatic (max > min), because
/// the hue formula's denominator vanishes otherwise.
pub fn verify_hs_invariance(img: &Image, illum: &IlluminationMap) -> Result<HsDeviation> {
    let divided = retinex_divide_unclamped(img, illum)?;
    let mut dev = HsDeviation::default();
    for ((px, after), &i) in img.pixels().zip(divided).zip(&illum.values) {
        let px = px.map(f64::from);
        let before = rgb_to_hsv_pixel(px);
        let after = rgb_to_hsv_pixel(after);
        dev = dev.merge(pixel_deviation(before, after, i + illum.epsilon));
    }
    Ok(dev)
}

/// Deviation contributed by one pixel given its before/after HSV and the
/// divisor that was applied.
pub fn pixel_deviation(before: Hsv, after: Hsv, divisor: f64) -> HsDeviation {
    let mut dev = HsDeviation {
        value_scale: (after.v - before.v / divisor).abs(),
        ..HsDeviation::default()
    };
    if before.v > 0.0 {
        dev.saturation = (after.s - before.s).abs();
        if before.s > 0.0 {
            dev.hue = hue_distance(after.h, before.h);
            dev.chromatic_pixels = 1;
        }
    }
    dev
}

/// Random-pixel sweep of [`verify_hs_invariance`]: `samples` pixels with
/// components in `(0, 1]` and illumination uniform in `[0.1, 1]`, no
/// stabilizer, in tiles of 128x128.
pub fn equivalence_suite(samples: usize, seed: u64) -> Result<HsDeviation> {
    const TILE: usize = 128;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = HsDeviation::default();
    let mut left = samples;
    while left > 0 {
        let n = left.min(TILE * TILE);
        let data = (0..n * 3).map(|_| 1.0 - rng.gen::<f32>()).collect();
        let img = Image::from_vec(1, n, data)?;
        let illum = IlluminationMap::new(1, n, (0..n).map(|_| rng.gen_range(0.1..=1.0)).collect(), 0.0)?;
        total = total.merge(verify_hs_invariance(&img, &illum)?);
        left -= n;
    }
    Ok(total)
}
