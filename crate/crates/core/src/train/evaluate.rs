//! Held-out evaluation: the model is frozen, a fresh illumination embedding
//! is fitted per test image on one half of its pixels (checkerboard), and
//! quality is measured on the other half.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ChronoField, Illumination, RayConditions};
use crate::metrics::{psnr, ssim};
use crate::params::ParamStore;
use crate::render::{CachedRays, CachedView, Image, SamplingConfig};
use crate::scalar::Scalar;
use crate::synth::{ChronoDataset, ChronoImage};
use crate::tensor::{Graph, Tensor};
use crate::train::{AdamConfig, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Rays drawn from the fitting half for the embedding fit.
    pub fit_rays: usize,
    pub fit_iterations: usize,
    pub fit_lr: f64,
    pub sampling: SamplingConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fit_rays: 256,
            fit_iterations: 100,
            fit_lr: 2e-2,
            sampling: SamplingConfig {
                perturb: false,
                ..SamplingConfig::desk()
            },
            seed: 0,
        }
    }
}

/// Fitting half of the checkerboard split; the evaluation half is its
/// complement.
pub fn in_fit_half(pixel: usize, width: usize) -> bool {
    (pixel % width + pixel / width) % 2 == 0
}

/// Mean of the learned embeddings of `images`, the starting point for
/// held-out fits.
pub fn mean_embedding<T: Scalar>(field: &ChronoField<T>, images: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; field.illum_dim()];
    for &i in images {
        for (a, v) in acc.iter_mut().zip(field.illumination(i)) {
            *a += v.as_f64();
        }
    }
    let n = images.len().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}

/// Fit one embedding so the frozen field reproduces `targets` along the
/// cached rays at time `t`. Returns the embedding and the final loss.
pub fn fit_illumination<T: Scalar>(
    field: &ChronoField<T>,
    cached: &CachedRays<T>,
    t: f64,
    targets: &[[f64; 3]],
    init: &[f64],
    iterations: usize,
    lr: f64,
) -> Result<(Vec<f64>, f64)> {
    if cached.is_empty() || targets.len() != cached.len() {
        return Err(Error::invalid("need one target per cached ray"));
    }
    if init.len() != field.illum_dim() {
        return Err(Error::invalid("initial embedding has the wrong dimension"));
    }
    let d = field.illum_dim();
    let mut store = ParamStore::new();
    let id = store.add("ell", Tensor::matrix(1, d, init.iter().map(|&v| T::lit(v)).collect())?)?;
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let p = field.store.detached();
    let n = cached.len();
    let mut last = f64::NAN;
    for it in 0..=iterations {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let ell = bound.get(id).clone();
        let mut total: Option<Tensor<T>> = None;
        for c in 0..cached.num_chunks() {
            let range = cached.chunk_range(c);
            let rays = &cached.rays()[range.clone()];
            let rows = g.gather_rows(&ell, Arc::new(vec![0; rays.len()]))?;
            let conds = RayConditions {
                times: vec![T::lit(t); rays.len()],
                dirs: rays.iter().map(|r| r.dir.map(T::lit)).collect(),
                illum: Illumination::Vectors(rows),
            };
            let rgb = cached.composite_chunk(field, &mut g, &p, c, &conds)?;
            let target = Tensor::matrix(
                rays.len(),
                3,
                targets[range].iter().flatten().map(|&v| T::lit(v)).collect(),
            )?;
            let diff = g.sub(&rgb, &target)?;
            let sq = g.square(&diff)?;
            let s = g.sum(&sq)?;
            total = Some(match total {
                Some(acc) => g.add(&acc, &s)?,
                None => s,
            });
        }
        let total = total.expect("at least one chunk");
        let loss = g.scale(&total, T::lit(1.0 / (3 * n) as f64))?;
        last = loss.item()?.as_f64();
        if it == iterations {
            break;
        }
        let grads = g.backward(&loss)?;
        adam.step(&mut store, &bound.gradients(&grads), lr, None)?;
    }
    Ok((store.get(id).data().iter().map(|v| v.as_f64()).collect(), last))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image: usize,
    pub time: f64,
    /// PSNR on the evaluation half against the clean render.
    pub psnr: f64,
    /// SSIM of the full render against the clean render (wall pixels).
    pub ssim: f64,
    pub fit_loss: f64,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

fn eval_mask(im: &ChronoImage) -> Vec<bool> {
    let w = im.image.width;
    (0..im.hit.len()).map(|p| im.hit[p] && !in_fit_half(p, w)).collect()
}

/// Scores one image: fits an embedding on its fitting half (mask-valid
/// pixels only) and measures the evaluation half.
pub fn evaluate_image<T: Scalar>(
    field: &ChronoField<T>,
    im: &ChronoImage,
    index: usize,
    init: &[f64],
    config: &EvalConfig,
) -> Result<ImageScore> {
    let w = im.image.width;
    let half = config.sampling.scene_half_extent;
    let mut rays = Vec::new();
    let mut targets = Vec::new();
    for p in 0..im.mask.len() {
        if im.mask[p] && in_fit_half(p, w) {
            if let Some(r) = im.camera.pixel_ray(p % w, p / w, half) {
                rays.push(r);
                targets.push(im.image.pixel(p % w, p / w));
            }
        }
    }
    if rays.is_empty() {
        return Err(Error::Data(format!("image {index} has no valid fitting pixels")));
    }
    if rays.len() > config.fit_rays {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ index as u64);
        let mut keep = sample(&mut rng, rays.len(), config.fit_rays).into_vec();
        keep.sort_unstable();
        rays = keep.iter().map(|&i| rays[i]).collect();
        targets = keep.iter().map(|&i| targets[i]).collect();
    }
    let cached = CachedRays::new(field, rays, &config.sampling, 1024)?;
    let (embedding, fit_loss) = fit_illumination(field, &cached, im.time, &targets, init, config.fit_iterations, config.fit_lr)?;
    let view = CachedView::new(field, &im.camera, &config.sampling, 1024)?;
    let rendered: Image = view.render(field, im.time, &embedding)?.image;
    Ok(ImageScore {
        image: index,
        time: im.time,
        psnr: psnr(&rendered, &im.clean, Some(&eval_mask(im)))?,
        ssim: ssim(&rendered, &im.clean, Some(&im.hit))?,
        fit_loss,
        embedding,
    })
}

/// Held-out scores for `images` (usually the test split).
pub fn evaluate<T: Scalar>(
    field: &ChronoField<T>,
    dataset: &ChronoDataset,
    images: &[usize],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let init = mean_embedding(field, &dataset.train_indices());
    let scores = images
        .iter()
        .map(|&i| {
            let im = dataset
                .images
                .get(i)
                .ok_or_else(|| Error::Data(format!("image index {i} out of range")))?;
            evaluate_image(field, im, i, &init, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
        images: scores,
    })
}
