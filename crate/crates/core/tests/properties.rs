use proptest::prelude::*;

use crenet::colorspace::{
    hsv_to_rgb_pixel, retinex_divide, rgb_to_hsv, rgb_to_hsv_pixel, verify_hs_invariance, IlluminationMap,
};
use crenet::condition::{cond_from_mapping, cond_from_reference, cond_mixture, ConditionMode, ConditionSource};
use crenet::enhance::{
    enhance_value, gamma_correct, global_he, lime_illumination, lime_illumination_map, make_condition,
};
use crenet::imgio::{decode_ppm, encode_ppm, sample_patches};
use crenet::lossmetrics::{loss_l1_ssim, map_brightness_hsv, psnr_from_mse, ssim_index, SsimParams};
use crenet::netcore::Tensor;
use crenet::synthdata::{render_exposure, NoiseModel, ResponseCurve, SceneIrradiance, SynthConfig};
use crenet::trainer::{adam_step, AdamParams, AdamState};
use crenet::{ConditionMap, CreNetWeights, EnhancerSpec, ExposurePair, Image};

fn image(max_side: usize) -> impl Strategy<Value = Image> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |d| Image::from_vec(h, w, d).unwrap())
    })
}

fn even_image(max_half: usize) -> impl Strategy<Value = Image> {
    (2..=max_half, 2..=max_half).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..=1.0, 4 * h * w * 3).prop_map(move |d| Image::from_vec(2 * h, 2 * w, d).unwrap())
    })
}

fn image_pair(max_side: usize) -> impl Strategy<Value = (Image, Image)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        let one =
            move || prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |d| Image::from_vec(h, w, d).unwrap());
        (one(), one())
    })
}

fn pixel() -> impl Strategy<Value = [f64; 3]> {
    [0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0]
}

fn enhancer() -> impl Strategy<Value = EnhancerSpec> {
    prop_oneof![
        (0.1f64..3.0).prop_map(EnhancerSpec::Gamma),
        Just(EnhancerSpec::GlobalHe),
        (2usize..5, 1.0f64..4.0).prop_map(|(tile, clip_limit)| EnhancerSpec::LocalHe { tile, clip_limit }),
        (1usize..4).prop_map(|radius| EnhancerSpec::Lime { radius, eps: 1e-3 }),
    ]
}

fn tensor(img: &Image) -> Tensor<f64> {
    Tensor::<f32>::from_images([img]).unwrap().cast()
}

proptest! {
    // imgio

    #[test]
    fn ppm_read_write_read_is_idempotent(img in image(12)) {
        let first = decode_ppm(&encode_ppm(&img)).unwrap();
        let second = decode_ppm(&encode_ppm(&first)).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn patches_stay_aligned(h in 4usize..20, w in 4usize..20, half in 1usize..3, seed: u64) {
        let size = (2 * half).min(h - h % 2).min(w - w % 2);
        // Every pixel carries its own coordinates, so a crop reveals its origin.
        let mut low = Image::new(h, w);
        let mut reference = Image::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let marker = [y as f32 / h as f32, x as f32 / w as f32, 0.5];
                low.set_pixel(y, x, marker);
                reference.set_pixel(y, x, [marker[0], marker[1], 1.0]);
            }
        }
        let pair = ExposurePair::new(low, reference, "p", None).unwrap();
        let batch = sample_patches(&pair, size, 6, seed).unwrap();
        for ((l, r), &(y0, x0)) in batch.low.iter().zip(&batch.reference).zip(&batch.origins) {
            prop_assert!(y0 + size <= h && x0 + size <= w);
            prop_assert_eq!(l.dims(), (size, size));
            for y in 0..size {
                for x in 0..size {
                    let (a, b) = (l.pixel(y, x), r.pixel(y, x));
                    prop_assert_eq!(a, pair.low.pixel(y0 + y, x0 + x));
                    prop_assert_eq!((a[0], a[1]), (b[0], b[1]));
                }
            }
        }
    }

    // colorspace

    #[test]
    fn value_is_max_channel(img in image(8)) {
        let hsv = rgb_to_hsv(&img);
        for (i, px) in img.pixels().enumerate() {
            prop_assert_eq!(hsv.v[i], f64::from(px[0].max(px[1]).max(px[2])));
            prop_assert!((0.0..360.0).contains(&hsv.h[i]));
        }
    }

    #[test]
    fn hsv_round_trip(px in pixel()) {
        let back = hsv_to_rgb_pixel(rgb_to_hsv_pixel(px));
        for c in 0..3 {
            prop_assert!((back[c] - px[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn clamped_retinex_stays_in_range(img in image(6), i in 0.0f64..=1.0, eps in 1e-4f64..0.1) {
        let (h, w) = img.dims();
        let map = IlluminationMap::constant(h, w, i.max(eps), eps).unwrap();
        let out = retinex_divide(&img, &map).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn retinex_division_keeps_hue_and_saturation(img in image(6), i in 0.1f64..=1.0) {
        let (h, w) = img.dims();
        let map = IlluminationMap::constant(h, w, i, 0.0).unwrap();
        let dev = verify_hs_invariance(&img, &map).unwrap();
        prop_assert!(dev.hue < 1e-6 && dev.saturation < 1e-6 && dev.value_scale < 1e-6);
    }

    // enhance

    #[test]
    fn enhancers_map_unit_interval_to_itself(img in image(10), spec in enhancer()) {
        let cond = ConditionMap::value_channel(&img);
        if let Ok(out) = enhance_value(&cond, &spec) {
            prop_assert_eq!(out.dims(), img.dims());
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn gamma_and_global_he_preserve_order(img in image(8), g in 0.1f64..3.0) {
        let v = ConditionMap::value_channel(&img);
        for out in [gamma_correct(&v, g).unwrap(), global_he(&v)] {
            for i in 0..v.values().len() {
                for j in 0..v.values().len() {
                    if v.values()[i] < v.values()[j] {
                        prop_assert!(out.values()[i] <= out.values()[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn gamma_one_is_the_value_channel(img in image(8)) {
        let cond = make_condition(&img, &EnhancerSpec::Gamma(1.0)).unwrap();
        prop_assert_eq!(cond.values(), &img.max_channel()[..]);
    }

    #[test]
    fn lime_reaches_one_where_v_meets_illumination(img in image(8), radius in 1usize..3) {
        let v = ConditionMap::value_channel(&img);
        let illum = lime_illumination_map(&v, radius, 1e-3).unwrap();
        let out = lime_illumination(&v, radius, 1e-3).unwrap();
        for ((&a, &x), &i) in out.values().iter().zip(v.values()).zip(&illum) {
            prop_assert!(a <= 1.0);
            if f64::from(x) == i {
                prop_assert_eq!(a, 1.0);
            }
        }
    }

    // condition

    #[test]
    fn conditions_in_range_and_sized(img in image(8), scale in 0.05f32..1.0, seed: u64, p in 0.0f64..=1.0) {
        let low = Image::from_vec(img.height(), img.width(), img.data().iter().map(|v| v * scale).collect()).unwrap();
        for mode in [ConditionMode::ReferenceNoise, ConditionMode::LowlightMapping, ConditionMode::Mixture] {
            let src = ConditionSource { mix_p: p, window: 3, ..ConditionSource::with_mode(mode) };
            let (cond, _) = cond_mixture(&low, &img, &src, seed).unwrap();
            prop_assert_eq!(cond.dims(), img.dims());
            prop_assert!(cond.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn mapping_is_exact_on_constant_images(a in 0.01f32..=1.0, b in 0.0f32..=1.0, h in 1usize..10, w in 1usize..10) {
        let low = Image::filled(h, w, [a, a * 0.5, 0.0]);
        let reference = Image::filled(h, w, [b * 0.3, b, b * 0.2]);
        let cond = cond_from_mapping(&low, &reference, 5).unwrap();
        for &v in cond.values() {
            prop_assert!((v - b).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_reference_condition_is_value_channel(img in image(8), seed: u64) {
        let cond = cond_from_reference(&img, 0.0, seed).unwrap();
        prop_assert_eq!(cond.values(), &img.max_channel()[..]);
    }

    // lossmetrics

    #[test]
    fn loss_is_zero_on_identical_and_nonnegative(a in even_image(6), b in even_image(6)) {
        let ta = tensor(&a);
        prop_assert!(loss_l1_ssim(&ta, &ta).unwrap().total.abs() < 1e-12);
        if a.dims() == b.dims() {
            prop_assert!(loss_l1_ssim(&ta, &tensor(&b)).unwrap().total >= 0.0);
        }
    }

    #[test]
    fn ssim_is_bounded_symmetric_and_reflexive(a in image(14), seed: u64) {
        let (h, w) = a.dims();
        let b = Image::from_vec(h, w, a.data().iter().enumerate()
            .map(|(i, v)| (v + ((i as u64 ^ seed) % 7) as f32 * 0.1).fract()).collect()).unwrap();
        let p = SsimParams::default();
        let ab = ssim_index(&a, &b, &p).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - ssim_index(&b, &a, &p).unwrap()).abs() < 1e-12);
        prop_assert!((ssim_index(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_mse(m in 1e-9f64..1.0, f in 1.001f64..10.0) {
        prop_assert!(psnr_from_mse(m * f) < psnr_from_mse(m));
    }

    #[test]
    fn brightness_mapping_keeps_hue_and_saturation((a, b) in image_pair(10)) {
        let before = rgb_to_hsv(&a);
        let mapped = map_brightness_hsv(&a, &b, 5).unwrap();
        prop_assert_eq!(&mapped.h, &before.h);
        prop_assert_eq!(&mapped.s, &before.s);
    }

    // synthdata

    #[test]
    fn noiseless_render_is_monotone_in_exposure(e in prop::collection::vec(0.0f64..20.0, 12), dt in 0.001f64..1.0, f in 1.0f64..5.0) {
        let scene = SceneIrradiance::new(2, 2, e).unwrap();
        let curve = ResponseCurve::default();
        let short = render_exposure(&scene, &curve, dt, &NoiseModel::NONE, 0).unwrap();
        let long = render_exposure(&scene, &curve, dt * f, &NoiseModel::NONE, 0).unwrap();
        for (s, l) in short.data().iter().zip(long.data()) {
            prop_assert!(s <= l);
        }
    }

    // trainer

    #[test]
    fn adam_with_zero_lr_is_identity(seed: u64, scale in 1e-6f32..10.0) {
        let mut weights = CreNetWeights::<f32>::init(seed);
        let before = weights.clone();
        let mut grads = weights.zero_grads();
        for (g, layer) in grads.iter_mut().zip(&weights.layers) {
            for (i, v) in g.weight.iter_mut().enumerate() {
                *v = scale * layer.weight[i].signum();
            }
        }
        let mut state = AdamState::new();
        let params = AdamParams { lr: 0.0, ..AdamParams::default() };
        adam_step(&mut weights, &grads, &mut state, &params).unwrap();
        prop_assert_eq!(weights, before);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn network_output_is_open_unit_interval(img in even_image(5), seed: u64, wscale in 0.1f64..1.5) {
        let mut weights = CreNetWeights::<f64>::init(seed);
        for layer in &mut weights.layers {
            for v in &mut layer.weight {
                *v *= wscale;
            }
        }
        let rgb = Tensor::<f32>::from_images([&img]).unwrap().cast();
        let cond = Tensor::<f32>::from_conditions([&ConditionMap::value_channel(&img)]).unwrap().cast();
        let (out, trace) = weights.forward(&rgb, &cond).unwrap();
        prop_assert!(trace.named_outputs().iter().all(|(_, t)| t.all_finite()));
        prop_assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn network_is_finite_and_deterministic_with_large_weights(img in even_image(5), seed: u64, wscale in 1.0f32..50.0) {
        let mut weights = CreNetWeights::<f32>::init(seed);
        for layer in &mut weights.layers {
            for v in &mut layer.weight {
                *v *= wscale;
            }
        }
        let rgb = Tensor::from_images([&img]).unwrap();
        let cond = Tensor::from_conditions([&ConditionMap::value_channel(&img)]).unwrap();
        let (out, trace) = weights.forward(&rgb, &cond).unwrap();
        prop_assert!(trace.named_outputs().iter().all(|(_, t)| t.all_finite()));
        // f32 sigmoids saturate to exactly 0 or 1 for large logits.
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (again, _) = weights.forward(&rgb, &cond).unwrap();
        prop_assert_eq!(out.data(), again.data());
    }

    #[test]
    fn dataset_generation_is_deterministic(seed: u64) {
        let config = SynthConfig { scenes: 2, height: 16, width: 16, seed, ..SynthConfig::default() };
        for (a, b) in config.pairs().unwrap().iter().zip(&config.pairs().unwrap()) {
            prop_assert_eq!(&a.low, &b.low);
            prop_assert_eq!(&a.reference, &b.reference);
        }
    }
}
