//! Classical V-channel enhancers used to build test-time condition maps.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filters::guided_self;
use crate::imgio::{quantize, Image};

pub const HIST_BINS: usize = 256;

/// Default local histogram equalization tile edge, pixels.
pub const LAHE_TILE: usize = 8;
/// Default clip limit, as a multiple of the uniform bin height.
pub const LAHE_CLIP: f64 = 2.0;
/// Default smoothing radius for the illumination estimate.
pub const LIME_RADIUS: usize = 15;
pub const LIME_EPS: f64 = 1e-4;
/// Guided filter regularizer for the illumination estimate.
pub const LIME_REGULARIZER: f64 = 1e-2;
/// CLI default gamma. A configuration choice, not a measured value.
pub const DEFAULT_GAMMA: f64 = 1.0 / 2.2;

/// A per-pixel brightness target in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMap {
    height: usize,
    width: usize,
    alpha: Vec<f32>,
}

impl ConditionMap {
    pub fn new(height: usize, width: usize, alpha: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || alpha.len() != height * width {
            return Err(Error::Shape(format!(
                "condition map {width}x{height} with {} values",
                alpha.len()
            )));
        }
        if let Some(bad) = alpha.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParam(format!("condition value {bad} outside [0, 1]")));
        }
        Ok(ConditionMap { height, width, alpha })
    }

    /// Clamps into `[0, 1]`; NaN becomes 0.
    pub fn from_clamped(height: usize, width: usize, alpha: impl IntoIterator<Item = f64>) -> Self {
        let alpha = alpha
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 })
            .collect();
        ConditionMap::new(height, width, alpha).expect("clamped values and caller-checked size")
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        ConditionMap::new(height, width, vec![value; height * width]).expect("valid fill")
    }

    /// The image's V channel (per-pixel max of R, G, B).
    pub fn value_channel(img: &Image) -> Self {
        ConditionMap {
            height: img.height(),
            width: img.width(),
            alpha: img.max_channel(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.alpha
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.alpha[y * self.width + x]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ConditionMap> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Shape("condition crop out of bounds".into()));
        }
        let alpha = (y0..y0 + h)
            .flat_map(|y| self.alpha[y * self.width + x0..y * self.width + x0 + w].iter().copied())
            .collect();
        ConditionMap::new(h, w, alpha)
    }

    fn map(&self, f: impl Fn(f32) -> f64) -> ConditionMap {
        ConditionMap::from_clamped(self.height, self.width, self.alpha.iter().map(|&v| f(v)))
    }
}

/// Which classical enhancer produces the condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnhancerSpec {
    Gamma(f64),
    GlobalHe,
    LocalHe { tile: usize, clip_limit: f64 },
    Lime { radius: usize, eps: f64 },
}

impl EnhancerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EnhancerSpec::Gamma(g) if !(g > 0.0 && g.is_finite()) => {
                Err(Error::InvalidParam(format!("gamma must be positive, got {g}")))
            }
            EnhancerSpec::LocalHe { tile, .. } if tile < 2 => {
                Err(Error::InvalidParam(format!("tile must be >= 2, got {tile}")))
            }
            EnhancerSpec::Lime { radius, .. } if radius < 1 => {
                Err(Error::InvalidParam("lime radius must be >= 1".into()))
            }
            EnhancerSpec::Lime { eps, .. } if !(eps > 0.0) => {
                Err(Error::InvalidParam(format!("lime eps must be positive, got {eps}")))
            }
            _ => Ok(()),
        }
    }
}

impl Default for EnhancerSpec {
    fn default() -> Self {
        EnhancerSpec::Gamma(DEFAULT_GAMMA)
    }
}

impl FromStr for EnhancerSpec {
    type Err = Error;

    /// Accepts `gamma:<g>`, `he`, `lahe[:<tile>[:<clip>]]`, `lime[:<radius>[:<eps>]]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let bad = || Error::InvalidParam(format!("cannot parse enhancer spec {s:?}"));
        let num =
            |i: usize| -> Result<Option<f64>> { args.get(i).map(|a| a.parse::<f64>().map_err(|_| bad())).transpose() };
        let count = |i: usize| -> Result<Option<usize>> {
            args.get(i).map(|a| a.parse::<usize>().map_err(|_| bad())).transpose()
        };
        let (spec, max_args) = match kind.as_str() {
            "gamma" => (EnhancerSpec::Gamma(num(0)?.unwrap_or(DEFAULT_GAMMA)), 1),
            "he" => (EnhancerSpec::GlobalHe, 0),
            "lahe" => (
                EnhancerSpec::LocalHe {
                    tile: count(0)?.unwrap_or(LAHE_TILE),
                    clip_limit: num(1)?.unwrap_or(LAHE_CLIP),
                },
                2,
            ),
            "lime" => (
                EnhancerSpec::Lime {
                    radius: count(0)?.unwrap_or(LIME_RADIUS),
                    eps: num(1)?.unwrap_or(LIME_EPS),
                },
                2,
            ),
            _ => return Err(bad()),
        };
        if args.len() > max_args {
            return Err(bad());
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for EnhancerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnhancerSpec::Gamma(g) => write!(f, "gamma:{g}"),
            EnhancerSpec::GlobalHe => write!(f, "he"),
            EnhancerSpec::LocalHe { tile, clip_limit } => write!(f, "lahe:{tile}:{clip_limit}"),
            EnhancerSpec::Lime { radius, eps } => write!(f, "lime:{radius}:{eps}"),
        }
    }
}

pub fn gamma_correct(v: &ConditionMap, gamma: f64) -> Result<ConditionMap> {
    EnhancerSpec::Gamma(gamma).validate()?;
    Ok(v.map(|x| f64::from(x).powf(gamma)))
}

fn histogram(values: impl Iterator<Item = f32>) -> [f64; HIST_BINS] {
    let mut hist = [0.0; HIST_BINS];
    for v in values {
        hist[quantize(v) as usize] += 1.0;
    }
    hist
}

/// Cumulative distribution per bin, normalized so the last bin is 1.
fn cdf_lut(hist: &[f64; HIST_BINS]) -> [f64; HIST_BINS] {
    let total: f64 = hist.iter().sum();
    let mut lut = [0.0; HIST_BINS];
    let mut acc = 0.0;
    for (dst, h) in lut.iter_mut().zip(hist) {
        acc += h;
        *dst = if total > 0.0 { acc / total } else { 1.0 };
    }
    lut
}

/// Global histogram equalization: `alpha = CDF(bin(v))` on 256 bins.
pub fn global_he(v: &ConditionMap) -> ConditionMap {
    let lut = cdf_lut(&histogram(v.alpha.iter().copied()));
    v.map(|x| lut[quantize(x) as usize])
}

/// Clips every bin at `limit` and spreads the excess evenly over all bins.
fn clip_histogram(hist: &mut [f64; HIST_BINS], limit: f64) {
    let excess: f64 = hist.iter().map(|&h| (h - limit).max(0.0)).sum();
    let share = excess / HIST_BINS as f64;
    for h in hist.iter_mut() {
        *h = h.min(limit) + share;
    }
}

/// Tile-wise histogram equalization with bilinear blending of the four
/// nearest tile mappings. A non-positive `clip_limit` disables clipping.
pub fn local_he(v: &ConditionMap, tile: usize, clip_limit: f64) -> Result<ConditionMap> {
    EnhancerSpec::LocalHe { tile, clip_limit }.validate()?;
    let (h, w) = v.dims();
    if tile > h.max(w) {
        return Err(Error::Shape(format!("tile {tile} larger than {w}x{h} image")));
    }
    let ny = h.div_ceil(tile);
    let nx = w.div_ceil(tile);
    let mut luts = Vec::with_capacity(ny * nx);
    let mut centers_y = Vec::with_capacity(ny);
    let mut centers_x = Vec::with_capacity(nx);
    for ty in 0..ny {
        let (y0, y1) = (ty * tile, ((ty + 1) * tile).min(h));
        centers_y.push((y0 + y1) as f64 / 2.0 - 0.5);
        for tx in 0..nx {
            let (x0, x1) = (tx * tile, ((tx + 1) * tile).min(w));
            if ty == 0 {
                centers_x.push((x0 + x1) as f64 / 2.0 - 0.5);
            }
            let mut hist = histogram((y0..y1).flat_map(|y| (x0..x1).map(move |x| v.alpha[y * w + x])));
            if clip_limit > 0.0 {
                let pixels = ((y1 - y0) * (x1 - x0)) as f64;
                clip_histogram(&mut hist, clip_limit * pixels / HIST_BINS as f64);
            }
            luts.push(cdf_lut(&hist));
        }
    }

    // Index pair and weight of the upper neighbour for a coordinate.
    let locate = |centers: &[f64], p: f64| -> (usize, usize, f64) {
        let last = centers.len() - 1;
        if p <= centers[0] {
            return (0, 0, 0.0);
        }
        if p >= centers[last] {
            return (last, last, 0.0);
        }
        let i = centers.partition_point(|&c| c <= p) - 1;
        (i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i]))
    };

    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (ya, yb, fy) = locate(&centers_y, y as f64);
        for x in 0..w {
            let (xa, xb, fx) = locate(&centers_x, x as f64);
            let bin = quantize(v.alpha[y * w + x]) as usize;
            let at = |ty: usize, tx: usize| luts[ty * nx + tx][bin];
            let top = at(ya, xa) * (1.0 - fx) + at(ya, xb) * fx;
            let bottom = at(yb, xa) * (1.0 - fx) + at(yb, xb) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(ConditionMap::from_clamped(h, w, out))
}

/// Smoothed illumination of the V channel, floored at `max(v, eps)`.
pub fn lime_illumination_map(v: &ConditionMap, radius: usize, eps: f64) -> Result<Vec<f64>> {
    EnhancerSpec::Lime { radius, eps }.validate()?;
    let plane: Vec<f64> = v.alpha.iter().map(|&x| f64::from(x)).collect();
    let smooth = guided_self(&plane, v.height, v.width, radius, LIME_REGULARIZER);
    Ok(smooth
        .into_iter()
        .zip(&plane)
        .map(|(s, &x)| s.max(x).max(eps))
        .collect())
}

/// Retinex-style brightening: `alpha = v / I` with `I` the edge-aware
/// illumination estimate. Since `I >= v`, `alpha <= 1`.
pub fn lime_illumination(v: &ConditionMap, radius: usize, eps: f64) -> Result<ConditionMap> {
    let illum = lime_illumination_map(v, radius, eps)?;
    Ok(ConditionMap::from_clamped(
        v.height,
        v.width,
        v.alpha.iter().zip(&illum).map(|(&x, i)| f64::from(x) / i),
    ))
}

pub fn enhance_value(v: &ConditionMap, spec: &EnhancerSpec) -> Result<ConditionMap> {
    spec.validate()?;
    match *spec {
        EnhancerSpec::Gamma(g) => gamma_correct(v, g),
        EnhancerSpec::GlobalHe => Ok(global_he(v)),
        EnhancerSpec::LocalHe { tile, clip_limit } => local_he(v, tile, clip_limit),
        EnhancerSpec::Lime { radius, eps } => lime_illumination(v, radius, eps),
    }
}

/// Runs the selected enhancer on the image's V channel.
pub fn make_condition(img: &Image, spec: &EnhancerSpec) -> Result<ConditionMap> {
    enhance_value(&ConditionMap::value_channel(img), spec)
}
