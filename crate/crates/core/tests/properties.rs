use chrono_field::encoding::{positional_encode, smooth_step, step_encode, PositionalEncodingConfig, StepEncodingParams};
use chrono_field::io::pnm::{decode_ppm, encode_ppm};
use chrono_field::metrics::stability::{detect_peaks, stability_stats, transition_recovery};
use chrono_field::metrics::{mse, psnr, ssim};
use chrono_field::render::{hierarchical_resample, volume_render, Image, Ray, RaySamples};
use chrono_field::synth::scene::quantize;
use chrono_field::train::LrSchedule;
use proptest::collection::vec;
use proptest::prelude::*;

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    vec(0.0f64..=1.0, w * h * 3).prop_map(move |data| Image { width: w, height: h, data })
}

fn image_pair() -> impl Strategy<Value = (Image, Image)> {
    (11usize..16, 11usize..16).prop_flat_map(|(w, h)| (image(w, h), image(w, h)))
}

fn depths() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<[f64; 3]>)> {
    (2usize..24).prop_flat_map(|k| (vec(0.0f64..4.0, k), vec(0.0f64..30.0, k), vec([0.0f64..1.0, 0.0..1.0, 0.0..1.0], k)))
}

proptest! {
    #[test]
    fn smooth_step_is_a_monotone_symmetric_cdf(u in 0.0f64..1.0, beta in 1e-3f64..2.0, z in -3.0f64..3.0, dz in 0.0f64..0.5) {
        let lo = smooth_step(u + z, u, beta).unwrap();
        let hi = smooth_step(u + z + dz, u, beta).unwrap();
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!(hi >= lo);
        let mirror = smooth_step(u - z, u, beta).unwrap();
        prop_assert!((lo + mirror - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_step_sharpens_to_the_hard_step(u in 0.1f64..0.9, z in 0.05f64..0.1) {
        prop_assert!(smooth_step(u + z, u, 1e-4).unwrap() > 1.0 - 1e-10);
        prop_assert!(smooth_step(u - z, u, 1e-4).unwrap() < 1e-10);
    }

    #[test]
    fn step_encoding_is_elementwise(t in 0.0f64..1.0, parts in vec((0.0f64..1.0, 1e-3f64..1.0), 1..12)) {
        let (u, beta): (Vec<f64>, Vec<f64>) = parts.into_iter().unzip();
        let p = StepEncodingParams::from_parts(u.clone(), &beta).unwrap();
        let h = step_encode(t, &p).unwrap();
        let b = p.beta();
        for k in 0..u.len() {
            prop_assert!((h[k] - smooth_step(t, u[k], b[k]).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn positional_pairs_lie_on_the_unit_circle(x in vec(-2.0f64..2.0, 1..4), l in 1usize..10) {
        let e = positional_encode(&x, &PositionalEncodingConfig::new(l, false));
        prop_assert_eq!(e.len(), 2 * l * x.len());
        for pair in e.chunks(2) {
            prop_assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_is_bounded_and_scale_invariant(s in vec(0.0f64..10.0, 1..200), c in 1e-3f64..1e3) {
        let (mean, e) = stability_stats(&s).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(e <= (s.len() as f64).ln() + 1e-9);
        let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
        let (mean_c, e_c) = stability_stats(&scaled).unwrap();
        prop_assert!((e - e_c).abs() < 1e-9);
        prop_assert!((mean_c - c * mean).abs() <= 1e-9 * mean_c.abs().max(1.0));
    }

    #[test]
    fn zero_padding_leaves_entropy_unchanged(s in vec(0.0f64..10.0, 1..50), pad in 0usize..50) {
        let mut padded = s.clone();
        padded.extend(std::iter::repeat(0.0).take(pad));
        prop_assert!((stability_stats(&s).unwrap().1 - stability_stats(&padded).unwrap().1).abs() < 1e-12);
    }

    #[test]
    fn peaks_exceed_threshold_and_are_separated(s in vec(0.0f64..1.0, 0..80), th in 0.0f64..1.0, sep in 1usize..6) {
        let p = detect_peaks(&s, th, sep);
        for w in p.windows(2) {
            prop_assert!(w[1] - w[0] >= sep);
        }
        for &i in &p {
            prop_assert!(s[i] > th);
        }
    }

    #[test]
    fn recovery_counts_are_consistent(d in vec(0.0f64..1.0, 0..10), t in vec(0.0f64..1.0, 0..10), tol in 0.0f64..0.2) {
        let r = transition_recovery(&d, &t, tol);
        prop_assert!(r.matched <= d.len().min(t.len()));
        prop_assert_eq!(r.matched + r.spurious, d.len());
        prop_assert!(r.errors.iter().all(|&e| e <= tol));
    }

    #[test]
    fn image_metrics_are_symmetric((a, b) in image_pair()) {
        prop_assert_eq!(mse(&a, &b, None).unwrap(), mse(&b, &a, None).unwrap());
        prop_assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap());
        prop_assert!((ssim(&a, &b, None).unwrap() - ssim(&b, &a, None).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b, None).unwrap() <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn volume_rendering_conserves_weight((s, sigma, rgb) in depths()) {
        let samples = RaySamples::from_depths(s, 4.5);
        let c = volume_render(&samples, &rgb, &sigma).unwrap();
        let total: f64 = c.weights.iter().sum();
        prop_assert!(c.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&total));
        for w in c.transmittance.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for ch in 0..3 {
            prop_assert!(c.rgb[ch] <= total + 1e-12);
        }
    }

    #[test]
    fn zero_density_samples_are_inert((s, sigma, rgb) in depths(), at in 0usize..24, gap in 0.0f64..1.0, color in [0.0f64..1.0, 0.0..1.0, 0.0..1.0]) {
        let base_samples = RaySamples::from_depths(s, 4.5);
        let base = volume_render(&base_samples, &rgb, &sigma).unwrap();
        let at = at.min(sigma.len());
        let mut samples = base_samples.clone();
        samples.s.insert(at, if at == 0 { 0.0 } else { samples.s[at - 1] });
        samples.delta.insert(at, gap);
        let (mut sig, mut col) = (sigma.clone(), rgb.clone());
        sig.insert(at, 0.0);
        col.insert(at, color);
        let with = volume_render(&samples, &col, &sig).unwrap();
        prop_assert_eq!(with.weights[at], 0.0);
        for ch in 0..3 {
            prop_assert!((with.rgb[ch] - base.rgb[ch]).abs() < 1e-12);
        }
        let mut w = with.weights.clone();
        w.remove(at);
        for (x, y) in w.iter().zip(&base.weights) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn resampled_depths_stay_on_the_ray(w in vec(0.0f64..1.0, 4..20), k in 1usize..40) {
        let ray = Ray::new([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.5, 3.0).unwrap();
        let coarse = RaySamples::from_depths((0..w.len()).map(|i| 0.5 + 2.5 * (i as f64 + 0.5) / w.len() as f64).collect(), 3.0);
        let fine = hierarchical_resample::<rand_chacha::ChaCha8Rng>(&ray, &coarse, &w, k, None).unwrap();
        prop_assert_eq!(fine.len(), k);
        prop_assert!(fine.iter().all(|&d| (0.5..=3.0).contains(&d)));
    }

    #[test]
    fn ppm_round_trips_quantized_images(img in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| image(w, h))) {
        let q = Image { data: img.data.iter().map(|&v| quantize(v)).collect(), ..img };
        prop_assert_eq!(decode_ppm(&encode_ppm(&q)).unwrap(), q);
    }

    #[test]
    fn lr_schedule_decays_between_its_endpoints(lr0 in 1e-5f64..1e-1, ratio in 1.0f64..100.0, frac in 0.0f64..=1.0, n in 1usize..5000) {
        let s = LrSchedule { initial: lr0, final_lr: lr0 / ratio, drop_fraction: frac, iterations: n };
        let mut prev = f64::INFINITY;
        for i in (0..=n).step_by((n / 50).max(1)) {
            let lr = s.at(i);
            prop_assert!(lr <= prev * (1.0 + 1e-12));
            prop_assert!(lr >= s.final_lr * (1.0 - 1e-12) && lr <= lr0 * (1.0 + 1e-12));
            prev = lr;
        }
    }
}
