//! Image containers, 8-bit file I/O, patch sampling and dataset pairing.
//!
//! Pixels are stored as interleaved RGB `f32` in the unit interval. On disk
//! everything is 8-bit: binary PPM (P6, maxval 255) is always available, PNG
//! (8-bit RGB) when the `png` feature is enabled.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::enhance::ConditionMap;
use crate::error::{Error, Result};

/// Largest pixel count accepted from a file header.
const MAX_PIXELS: u64 = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Black image.
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "image must be at least 1x1");
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut img = Image::new(height, width);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    /// Wraps interleaved RGB data. Fails if the length is wrong or any value
    /// lies outside `[0, 1]`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(3))
            .ok_or(Error::DimensionOverflow {
                width: width as u64,
                height: height as u64,
            })?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParam(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Image { height, width, data })
    }

    /// Like [`Image::from_vec`] but clamps values into `[0, 1]` (NaN maps to 0).
    pub fn from_vec_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Image::from_vec(height, width, data)
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

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (dst, v) in self.data[i..i + 3].iter_mut().zip(rgb) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Per-pixel channel maximum, i.e. the HSV value channel.
    pub fn max_channel(&self) -> Vec<f32> {
        self.pixels().map(|[r, g, b]| r.max(g).max(b)).collect()
    }

    /// Copies the `size_h x size_w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, size_h: usize, size_w: usize) -> Result<Image> {
        if y0 + size_h > self.height || x0 + size_w > self.width || size_h == 0 || size_w == 0 {
            return Err(Error::Shape(format!(
                "crop {size_w}x{size_h} at ({x0},{y0}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(size_h * size_w * 3);
        for y in y0..y0 + size_h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + size_w * 3]);
        }
        Ok(Image {
            height: size_h,
            width: size_w,
            data,
        })
    }

    /// 8-bit quantization: round half up, then clamp to `[0, 255]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Image::from_vec(height, width, data)
    }
}

pub fn quantize(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureTimes {
    pub dt_low: f64,
    pub dt_ref: f64,
}

/// A registered short/long exposure pair of one scene.
#[derive(Debug, Clone)]
pub struct ExposurePair {
    pub low: Image,
    pub reference: Image,
    pub scene_id: String,
    /// `None` when the dataset did not record exposure times.
    pub times: Option<ExposureTimes>,
}

impl ExposurePair {
    pub fn new(
        low: Image,
        reference: Image,
        scene_id: impl Into<String>,
        times: Option<ExposureTimes>,
    ) -> Result<Self> {
        if low.dims() != reference.dims() {
            return Err(Error::Shape(format!(
                "pair dims differ: {:?} vs {:?}",
                low.dims(),
                reference.dims()
            )));
        }
        if let Some(t) = times {
            if !(t.dt_low > 0.0 && t.dt_low < t.dt_ref) {
                return Err(Error::InvalidParam(format!(
                    "exposure times must satisfy 0 < dt_low < dt_ref, got {} / {}",
                    t.dt_low, t.dt_ref
                )));
            }
        }
        Ok(ExposurePair {
            low,
            reference,
            scene_id: scene_id.into(),
            times,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.low.dims()
    }
}

/// Aligned square crops from a set of exposure pairs.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    pub size: usize,
    pub low: Vec<Image>,
    pub reference: Vec<Image>,
    /// Empty until a condition source fills it.
    pub cond: Vec<ConditionMap>,
    /// Top-left `(y, x)` of every crop.
    pub origins: Vec<(usize, usize)>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }
}

fn check_patch_size(size: usize, h: usize, w: usize) -> Result<()> {
    if size == 0 || !size.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!(
            "patch size must be even and positive, got {size}"
        )));
    }
    if size > h.min(w) {
        return Err(Error::Shape(format!("patch {size} larger than {w}x{h} image")));
    }
    Ok(())
}

/// Draws one uniformly random top-left corner and crops both images there.
pub fn sample_patch_with<R: Rng>(
    pair: &ExposurePair,
    size: usize,
    rng: &mut R,
) -> Result<(Image, Image, (usize, usize))> {
    let (h, w) = pair.dims();
    check_patch_size(size, h, w)?;
    let y0 = rng.gen_range(0..=h - size);
    let x0 = rng.gen_range(0..=w - size);
    let low = pair.low.crop(y0, x0, size, size)?;
    let reference = pair.reference.crop(y0, x0, size, size)?;
    Ok((low, reference, (y0, x0)))
}

/// `n` aligned crops of one pair; deterministic given `seed`.
pub fn sample_patches(pair: &ExposurePair, size: usize, n: usize, seed: u64) -> Result<PatchBatch> {
    let (h, w) = pair.dims();
    check_patch_size(size, h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = PatchBatch {
        size,
        low: Vec::with_capacity(n),
        reference: Vec::with_capacity(n),
        cond: Vec::new(),
        origins: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let (low, reference, origin) = sample_patch_with(pair, size, &mut rng)?;
        batch.low.push(low);
        batch.reference.push(reference);
        batch.origins.push(origin);
    }
    Ok(batch)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_image(&bytes)
}

/// Decodes PPM or PNG by sniffing the leading bytes.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"P6") {
        return decode_ppm(bytes);
    }
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        return decode_png(bytes);
    }
    if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        return Err(Error::Unsupported(format!(
            "netpbm variant P{} (only binary P6 is supported)",
            bytes[1] as char
        )));
    }
    Err(Error::Unsupported("unrecognized file signature".into()))
}

/// Writes PNG for a `.png` extension and binary PPM otherwise.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(img)? } else { encode_ppm(img) };
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    out.write_all(&bytes).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("missing {what} in PPM header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::Format("missing P6 magic".into()));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("zero dimension {width}x{height}")));
    }
    match width.checked_mul(height) {
        Some(p) if p <= MAX_PIXELS => {}
        _ => return Err(Error::DimensionOverflow { width, height }),
    }
    if maxval != 255 {
        return Err(Error::Unsupported(format!(
            "bit depth with maxval {maxval} (only 255 is supported)"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::Format("missing separator after maxval".into())),
    }
    let (w, h) = (width as usize, height as usize);
    let need = w * h * 3;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(Error::Format(format!(
            "raster truncated: need {need} bytes, have {}",
            raster.len()
        )));
    }
    Image::from_bytes(h, w, &raster[..need])
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight || info.color_type != png::ColorType::Rgb {
        return Err(Error::Unsupported(format!(
            "png {:?} {:?} (only 8-bit RGB is supported)",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as u64, info.height as u64);
    if w * h > MAX_PIXELS {
        return Err(Error::DimensionOverflow { width: w, height: h });
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    Image::from_bytes(h as usize, w as usize, &buf[..frame.buffer_size()])
}

#[cfg(feature = "png")]
fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(&img.to_bytes())
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

#[cfg(not(feature = "png"))]
fn decode_png(_: &[u8]) -> Result<Image> {
    Err(Error::Unsupported("built without PNG support".into()))
}

#[cfg(not(feature = "png"))]
fn encode_png(_: &Image) -> Result<Vec<u8>> {
    Err(Error::Unsupported("built without PNG support".into()))
}

const IMAGE_EXTENSIONS: [&str; 2] = ["ppm", "png"];

/// Name of the optional per-scene exposure table inside a dataset root.
pub const EXPOSURE_TABLE: &str = "exposures.csv";

/// Loads `<root>/low/<scene>.{ppm,png}` paired with the same filename under
/// `<root>/ref/`, sorted by scene id. Exposure times are read from
/// `<root>/exposures.csv` (`scene,dt_low,dt_ref`) when present.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<ExposurePair>> {
    let root = root.as_ref();
    let low_dir = root.join("low");
    let ref_dir = root.join("ref");
    let mut entries: Vec<PathBuf> = fs::read_dir(&low_dir)
        .map_err(io_err(&low_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    entries.sort();

    let times = read_exposure_table(&root.join(EXPOSURE_TABLE))?;
    let mut pairs = Vec::with_capacity(entries.len());
    for low_path in entries {
        let file_name = low_path.file_name().expect("listed file has a name");
        let ref_path = ref_dir.join(file_name);
        if !ref_path.exists() {
            return Err(Error::Dataset(format!("no reference image for {}", low_path.display())));
        }
        let scene_id = low_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let t = times.iter().find(|(id, _)| *id == scene_id).map(|(_, t)| *t);
        pairs.push(ExposurePair::new(
            read_image(&low_path)?,
            read_image(&ref_path)?,
            scene_id,
            t,
        )?);
    }
    Ok(pairs)
}

fn read_exposure_table(path: &Path) -> Result<Vec<(String, ExposureTimes)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("scene")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [scene, lo, hi] => lo
                .parse()
                .ok()
                .zip(hi.parse().ok())
                .map(|(dt_low, dt_ref)| (scene.to_string(), ExposureTimes { dt_low, dt_ref })),
            _ => None,
        };
        rows.push(
            parsed.ok_or_else(|| Error::Dataset(format!("{}:{}: bad row {line:?}", path.display(), lineno + 1)))?,
        );
    }
    Ok(rows)
}
