//! End-to-end gradient check: rendered-pixel loss with respect to every
//! field parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::TimeEncoding;
use crate::error::Result;
use crate::field::{ChronoField, FieldConfig, TriPlaneConfig};
use crate::render::{normalize, Ray, SamplingConfig};
use crate::tensor::{gradient_check, GradCheckReport, Tensor};
use crate::train::scene::{batch_loss, RayPool};

/// Small field exercising every component (geometry, tri-plane,
/// appearance, illumination table, step encoding).
pub fn probe_field_config(seed: u64) -> FieldConfig {
    FieldConfig {
        geo_hidden: vec![6, 6],
        geo_skip: None,
        app_hidden: vec![6],
        xyz_frequencies: 2,
        dir_frequencies: 1,
        triplane: TriPlaneConfig {
            resolution: 3,
            channels: 2,
            init_scale: 0.5,
        },
        illum_dim: 3,
        time: TimeEncoding::Step { dim: 3 },
        seed,
        ..FieldConfig::desk()
    }
}

/// Random rays through the unit box with per-ray image, time and target.
pub fn probe_batch(rays: usize, num_images: usize, seed: u64) -> Result<RayPool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = RayPool::default();
    for k in 0..rays {
        let o = [0; 3].map(|_| rng.random_range(-0.3..0.3));
        let d = normalize([rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -1.0]);
        pool.rays.push(Ray::new(o, d, 0.1, 1.2)?);
        pool.targets.push([0; 3].map(|_| rng.random_range(0.0..1.0)));
        pool.images.push(k % num_images);
        pool.times.push(rng.random_range(0.0..1.0));
        pool.pixels.push(k);
    }
    Ok(pool)
}

/// Central-difference check of the coarse reconstruction loss (no sample
/// jitter, no resampling, so the loss is a smooth function of the
/// parameters) against reverse-mode gradients.
pub fn pipeline_gradient_check(seed: u64, tolerance: f64) -> Result<(Vec<String>, GradCheckReport)> {
    let num_images = 2;
    let mut field = ChronoField::<f64>::new(probe_field_config(seed), num_images)?;
    // Zero-initialized biases put ReLU pre-activations exactly on the kink
    // for points whose previous layer is entirely inactive, where central
    // differences see slope ½. Offsetting them keeps every input smooth.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for id in field.store.ids().collect::<Vec<_>>() {
        if field.store.name(id).ends_with(".bias") {
            let shape = field.store.get(id).shape().to_vec();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
            field.store.set(id, Tensor::new(shape, data)?)?;
        }
    }
    let batch = probe_batch(4, num_images, seed)?;
    let sampling = SamplingConfig {
        coarse: 6,
        fine: 0,
        perturb: false,
        scene_half_extent: 1.0,
    };
    let conds = batch.conditions::<f64>();
    let target: Tensor<f64> = batch.target_tensor()?;
    let ids: Vec<_> = field.store.ids().collect();
    let names = ids.iter().map(|&id| field.store.name(id).to_string()).collect();
    let inputs: Vec<Tensor<f64>> = ids.iter().map(|&id| field.store.get(id).clone()).collect();
    let f = |g: &mut crate::tensor::Graph<f64>, v: &[Tensor<f64>]| {
        let mut p = field.store.detached();
        for (&id, t) in ids.iter().zip(v) {
            p.replace(id, t.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = batch_loss(&field, g, &p, &batch.rays, &conds, &target, &sampling, &mut rng)?;
        Ok(loss.total)
    };
    Ok((names, gradient_check(f, &inputs, 1e-6, tolerance)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_gradients_match_finite_differences() {
        let (names, rep) = pipeline_gradient_check(1, 1e-3).unwrap();
        let bad: Vec<_> = rep.failures().into_iter().map(|i| (&names[i], rep.params[i].max_rel_error)).collect();
        assert!(bad.is_empty(), "{bad:?}");
    }
}
