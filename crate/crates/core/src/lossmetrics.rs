//! Training loss (L1 + SSIM dissimilarity) with exact gradients, and the
//! evaluation protocol: PSNR/SSIM after local brightness mapping.

use std::fmt::Write as _;

use crate::colorspace::{hsv_to_rgb, rgb_to_hsv, HsvImage};
use crate::condition::{map_value_channel, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::imgio::Image;
use crate::netcore::{Real, Tensor};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Window edge of the uniform SSIM used inside the loss.
pub const LOSS_SSIM_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowWeights {
    Gaussian { sigma: f64 },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub weights: WindowWeights,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    /// 11x11 Gaussian window, sigma 1.5, k1 = 0.01, k2 = 0.03.
    fn default() -> Self {
        SsimParams {
            window: 11,
            weights: WindowWeights::Gaussian { sigma: 1.5 },
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    /// The uniform window used by the training loss.
    pub fn loss() -> Self {
        SsimParams {
            window: LOSS_SSIM_WINDOW,
            weights: WindowWeights::Uniform,
            ..SsimParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidParam(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::InvalidParam("SSIM constants must be positive".into()));
        }
        if let WindowWeights::Gaussian { sigma } = self.weights {
            if !(sigma > 0.0) {
                return Err(Error::InvalidParam("SSIM sigma must be positive".into()));
            }
        }
        Ok(())
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D taps; the window is shrunk to fit small planes.
    fn taps(&self, h: usize, w: usize) -> Vec<f64> {
        let mut size = self.window.min(h).min(w);
        if self.window % 2 == 1 && size.is_multiple_of(2) {
            size -= 1;
        }
        let size = size.max(1);
        let raw: Vec<f64> = match self.weights {
            WindowWeights::Uniform => vec![1.0; size],
            WindowWeights::Gaussian { sigma } => {
                let c = (size as f64 - 1.0) / 2.0;
                (0..size)
                    .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .collect()
            }
        };
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Valid-region separable correlation: `out[i][j] = sum k[u] k[v] z[i+u][j+v]`.
fn filter_valid(z: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(u, t)| t * z[y * w + x + u]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(u, t)| t * rows[(y + u) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Adjoint of [`filter_valid`]: scatters a window map back onto the plane.
fn filter_adjoint(g: &[f64], oh: usize, ow: usize, k: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut cols = vec![0.0; h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for (u, t) in k.iter().enumerate() {
                cols[(y + u) * ow + x] += t * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = cols[y * ow + x];
            for (u, t) in k.iter().enumerate() {
                out[y * w + x + u] += t * v;
            }
        }
    }
    out
}

/// Sum of the SSIM map of one plane, its window count, and optionally the
/// gradient of that sum with respect to `a`.
fn ssim_plane(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    params: &SsimParams,
    want_grad: bool,
) -> (f64, usize, Option<Vec<f64>>) {
    let k = params.taps(h, w);
    let (c1, c2) = (params.c1(), params.c2());
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (mu_a, oh, ow) = filter_valid(a, h, w, &k);
    let (mu_b, ..) = filter_valid(b, h, w, &k);
    let (m_aa, ..) = filter_valid(&sq(a, a), h, w, &k);
    let (m_bb, ..) = filter_valid(&sq(b, b), h, w, &k);
    let (m_ab, ..) = filter_valid(&sq(a, b), h, w, &k);

    let count = oh * ow;
    let mut total = 0.0;
    let (mut g_mu, mut g_aa, mut g_ab) = if want_grad {
        (vec![0.0; count], vec![0.0; count], vec![0.0; count])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..count {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = m_aa[i] - ma * ma;
        let var_b = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let num_l = 2.0 * ma * mb + c1;
        let num_s = 2.0 * cov + c2;
        let den_l = ma * ma + mb * mb + c1;
        let den_s = var_a + var_b + c2;
        let s = num_l * num_s / (den_l * den_s);
        total += s;
        if want_grad {
            // Partials w.r.t. mean(a), mean(a^2) and mean(ab), with the
            // variance and covariance expressed through raw moments.
            g_mu[i] = s * (2.0 * mb / num_l - 2.0 * mb / num_s - 2.0 * ma / den_l + 2.0 * ma / den_s);
            g_aa[i] = -s / den_s;
            g_ab[i] = 2.0 * s / num_s;
        }
    }
    let grad = want_grad.then(|| {
        let back_mu = filter_adjoint(&g_mu, oh, ow, &k, h, w);
        let back_aa = filter_adjoint(&g_aa, oh, ow, &k, h, w);
        let back_ab = filter_adjoint(&g_ab, oh, ow, &k, h, w);
        (0..h * w)
            .map(|p| back_mu[p] + 2.0 * a[p] * back_aa[p] + b[p] * back_ab[p])
            .collect()
    });
    (total, count, grad)
}

/// Mean SSIM over every channel plane of two same-shape tensors, with the
/// gradient w.r.t. `a` when requested.
pub fn ssim_tensor<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    params: &SsimParams,
    want_grad: bool,
) -> Result<(f64, Option<Tensor<T>>)> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let [n, c, h, w] = a.shape();
    let plane = h * w;
    let mut total = 0.0;
    let mut windows = 0;
    let mut grads: Vec<Vec<f64>> = Vec::new();
    for p in 0..n * c {
        let pa: Vec<f64> = a.data()[p * plane..(p + 1) * plane]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let pb: Vec<f64> = b.data()[p * plane..(p + 1) * plane]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let (sum, count, g) = ssim_plane(&pa, &pb, h, w, params, want_grad);
        total += sum;
        windows += count;
        grads.extend(g);
    }
    let mean = total / windows as f64;
    let grad = want_grad.then(|| {
        let scale = 1.0 / windows as f64;
        let data = grads.into_iter().flatten().map(|g| T::lit(g * scale)).collect();
        Tensor::from_vec(a.shape(), data).expect("same shape")
    });
    Ok((mean, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub l1: f64,
    /// `1 - SSIM`.
    pub ssim_term: f64,
    pub total: f64,
    pub grad: Tensor<T>,
}

fn check_same_shape<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// `mean|pred - target|` and its (sub)gradient w.r.t. `pred`; zero where
/// the two are equal.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_same_shape(pred, target)?;
    let count = pred.len() as f64;
    let inv = T::lit(1.0 / count);
    let mut l1 = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        l1 += (p.as_f64() - t.as_f64()).abs();
        grad.push(if p > t {
            inv
        } else if p < t {
            -inv
        } else {
            T::zero()
        });
    }
    Ok((l1 / count, Tensor::from_vec(pred.shape(), grad)?))
}

/// `mean|pred - target| + (1 - SSIM(pred, target))` and its gradient
/// w.r.t. `pred`. SSIM uses uniform 8x8 windows per RGB plane.
pub fn loss_l1_ssim<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossOutput<T>> {
    check_same_shape(pred, target)?;
    let (l1, l1_grad) = l1_loss(pred, target)?;
    let (ssim, ssim_grad) = ssim_tensor(pred, target, &SsimParams::loss(), true)?;
    let ssim_grad = ssim_grad.expect("requested");
    let data = l1_grad
        .data()
        .iter()
        .zip(ssim_grad.data())
        .map(|(&g1, &gs)| g1 - gs)
        .collect();
    Ok(LossOutput {
        l1,
        ssim_term: 1.0 - ssim,
        total: l1 + 1.0 - ssim,
        grad: Tensor::from_vec(pred.shape(), data)?,
    })
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// `10 log10(1 / MSE)` over all channels, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean SSIM of the two V channels.
pub fn ssim_index(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    check_same(a, b)?;
    params.validate()?;
    let (h, w) = a.dims();
    let va: Vec<f64> = a.max_channel().into_iter().map(f64::from).collect();
    let vb: Vec<f64> = b.max_channel().into_iter().map(f64::from).collect();
    let (sum, count, _) = ssim_plane(&va, &vb, h, w, params, false);
    Ok(sum / count as f64)
}

/// Local brightness mapping of `enhanced` towards `reference` in HSV:
/// V is rescaled by the windowed mean ratio, H and S are left untouched.
pub fn map_brightness_hsv(enhanced: &Image, reference: &Image, window: usize) -> Result<HsvImage> {
    check_same(enhanced, reference)?;
    let (h, w) = enhanced.dims();
    let mut hsv = rgb_to_hsv(enhanced);
    hsv.v = map_value_channel(&enhanced.max_channel(), &reference.max_channel(), h, w, window)?;
    Ok(hsv)
}

pub fn map_brightness(enhanced: &Image, reference: &Image, window: usize) -> Result<Image> {
    Ok(hsv_to_rgb(&map_brightness_hsv(enhanced, reference, window)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scene: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// `scene,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,psnr,ssim\n");
        for r in &self.rows {
            writeln!(out, "{},{:.6},{:.6}", r.scene, r.psnr, r.ssim).expect("string write");
        }
        writeln!(out, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim()).expect("string write");
        out
    }
}

/// Maps the enhanced image's brightness onto the reference, then scores it.
pub fn eval_with_mapping(enhanced: &Image, reference: &Image, window: usize) -> Result<EvalRow> {
    let mapped = map_brightness(enhanced, reference, window)?;
    Ok(EvalRow {
        scene: String::new(),
        psnr: psnr(&mapped, reference)?,
        ssim: ssim_index(&mapped, reference, &SsimParams::default())?,
    })
}

/// [`eval_with_mapping`] with the default 25x25 window.
pub fn eval_default(enhanced: &Image, reference: &Image) -> Result<EvalRow> {
    eval_with_mapping(enhanced, reference, DEFAULT_WINDOW)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(h, w, (0..h * w * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn identical_inputs_have_zero_loss() {
        let t = random_tensor([2, 3, 12, 12], 1);
        let out = loss_l1_ssim(&t, &t).unwrap();
        assert_eq!(out.l1, 0.0);
        assert!(out.ssim_term.abs() < 1e-12);
        assert!(out.total.abs() < 1e-12);
    }

    #[test]
    fn constant_offset_l1() {
        let t = random_tensor([1, 3, 10, 10], 2).map(|v| v * 0.8);
        let p = t.map(|v| v + 0.1);
        let out = loss_l1_ssim(&p, &t).unwrap();
        assert!((out.l1 - 0.1).abs() < 1e-12);
        assert!(out.total >= 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let pred = random_tensor([1, 2, 8, 8], 3);
        let target = random_tensor([1, 2, 8, 8], 4);
        let out = loss_l1_ssim(&pred, &target).unwrap();
        let h = 1e-5;
        let mut num = Vec::new();
        for i in 0..pred.len() {
            let mut p = pred.clone();
            p.data_mut()[i] += h;
            let up = loss_l1_ssim(&p, &target).unwrap().total;
            p.data_mut()[i] -= 2.0 * h;
            let down = loss_l1_ssim(&p, &target).unwrap().total;
            num.push((up - down) / (2.0 * h));
        }
        let diff: f64 = num
            .iter()
            .zip(out.grad.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-4, "relative error {}", diff / norm);
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(8, 8, 5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(4, 4, [0.3, 0.4, 0.5]);
        let c = Image::filled(4, 4, [0.4, 0.5, 0.6]);
        assert!((psnr(&b, &c).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&b, &a).is_err());
    }

    #[test]
    fn psnr_matches_pixelwise_oracle() {
        let a = random_image(9, 7, 6);
        let b = random_image(9, 7, 7);
        let mut sum = 0.0;
        for y in 0..9 {
            for x in 0..7 {
                let (p, q) = (a.pixel(y, x), b.pixel(y, x));
                for c in 0..3 {
                    sum += (f64::from(p[c]) - f64::from(q[c])).powi(2);
                }
            }
        }
        let oracle = 10.0 * (1.0 / (sum / (9.0 * 7.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn ssim_identities() {
        let p = SsimParams::default();
        let a = random_image(20, 20, 8);
        let b = random_image(20, 20, 9);
        assert!((ssim_index(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim_index(&a, &b, &p).unwrap();
        let ba = ssim_index(&b, &a, &p).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&ab));

        // Constant planes: luminance term C1 / (1 + C1), structure term 1.
        let black = Image::filled(16, 16, [0.0; 3]);
        let white = Image::filled(16, 16, [1.0; 3]);
        let s = ssim_index(&black, &white, &p).unwrap();
        let c1 = 0.01f64.powi(2);
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!(s > 0.0);
    }

    #[test]
    fn ssim_params_validation() {
        let mut p = SsimParams {
            window: 4,
            ..SsimParams::default()
        };
        assert!(p.validate().is_err());
        p.window = 7;
        p.k1 = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn mapping_identity_and_halving() {
        let reference = random_image(30, 30, 10);
        let row = eval_default(&reference, &reference).unwrap();
        assert_eq!(row.psnr, PSNR_CAP);
        assert!((row.ssim - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mapping_preserves_hue_and_saturation() {
        let enhanced = random_image(24, 24, 11);
        let reference = random_image(24, 24, 12);
        let before = rgb_to_hsv(&enhanced);
        let after = map_brightness_hsv(&enhanced, &reference, 7).unwrap();
        assert_eq!(before.h, after.h);
        assert_eq!(before.s, after.s);
    }

    #[test]
    fn noisy_copy_scores_near_closed_form() {
        // sigma = 0.02 noise gives MSE 4e-4, i.e. about 34 dB; the mapping
        // barely moves brightness since window means already agree.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let reference = Image::filled(120, 120, [0.5, 0.4, 0.3]);
        let noisy: Vec<f32> = reference
            .data()
            .iter()
            .map(|&v| v + normal.sample(&mut rng) as f32)
            .collect();
        let noisy = Image::from_vec_clamped(120, 120, noisy).unwrap();
        let row = eval_default(&noisy, &reference).unwrap();
        assert!((row.psnr - 34.0).abs() < 0.5, "{}", row.psnr);
    }

    #[test]
    fn csv_report() {
        let mut report = EvalReport::default();
        report.push(EvalRow {
            scene: "a".into(),
            psnr: 20.0,
            ssim: 0.5,
        });
        report.push(EvalRow {
            scene: "b".into(),
            psnr: 30.0,
            ssim: 0.7,
        });
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "scene,psnr,ssim");
        assert_eq!(lines[3], "mean,25.000000,0.600000");
    }
}
