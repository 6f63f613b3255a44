//! Photometric training of a [`ChronoField`] on posed, timestamped images.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ChronoField, Illumination, RayConditions};
use crate::params::Bound;
use crate::render::{render_rays, Ray, SamplingConfig};
use crate::scalar::Scalar;
use crate::synth::ChronoDataset;
use crate::tensor::{Graph, Tensor};
use crate::train::{AdamConfig, AdamState, LrSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Fraction of `iterations` over which the rate decays to `lr_final`.
    pub lr_drop_fraction: f64,
    pub sampling: SamplingConfig,
    pub seed: u64,
    /// Iterations between checkpoints (0: only at the end).
    pub checkpoint_every: usize,
    /// Rays in the fixed probe batch used to report training progress.
    pub probe_rays: usize,
    /// Learning-rate multipliers for the step-encoding transition points
    /// and steepnesses.
    pub u_lr_scale: f64,
    pub beta_lr_scale: f64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            iterations: 6000,
            rays_per_batch: 256,
            lr_initial: 5e-3,
            lr_final: 2.5e-4,
            lr_drop_fraction: 1.0,
            sampling: SamplingConfig::desk(),
            seed: 0,
            checkpoint_every: 2000,
            probe_rays: 512,
            u_lr_scale: 10.0,
            beta_lr_scale: 30.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            iterations: 800_000,
            rays_per_batch: 1024,
            lr_initial: 5e-4,
            lr_final: 5e-5,
            lr_drop_fraction: 1.0,
            sampling: SamplingConfig::paper(),
            seed: 0,
            checkpoint_every: 10_000,
            probe_rays: 1024,
            u_lr_scale: 1.0,
            beta_lr_scale: 1.0,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr_initial,
            final_lr: self.lr_final,
            drop_fraction: self.lr_drop_fraction,
            iterations: self.iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 {
            return Err(Error::Config("rays_per_batch must be at least 1".into()));
        }
        if !(self.lr_final > 0.0 && self.lr_initial >= self.lr_final) {
            return Err(Error::Config("need lr_initial >= lr_final > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_drop_fraction) {
            return Err(Error::Config("lr_drop_fraction must lie in [0, 1]".into()));
        }
        if !(self.u_lr_scale > 0.0 && self.beta_lr_scale > 0.0) {
            return Err(Error::Config("learning-rate scales must be positive".into()));
        }
        if self.sampling.coarse == 0 {
            return Err(Error::Config("need at least one coarse sample per ray".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Training rays: one per usable pixel, with its target color, image and
/// timestamp.
#[derive(Clone, Debug, Default)]
pub struct RayPool {
    pub rays: Vec<Ray>,
    pub targets: Vec<[f64; 3]>,
    pub images: Vec<usize>,
    pub times: Vec<f64>,
    /// Pixel index within its image.
    pub pixels: Vec<usize>,
}

impl RayPool {
    /// Pixels of `images` accepted by `keep(image, pixel)` and the image
    /// mask whose ray meets the scene box.
    pub fn build(
        dataset: &ChronoDataset,
        images: &[usize],
        half_extent: f64,
        keep: impl Fn(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut pool = RayPool::default();
        for &i in images {
            let im = dataset
                .images
                .get(i)
                .ok_or_else(|| Error::Data(format!("image index {i} out of range")))?;
            let w = im.image.width;
            for p in 0..im.image.num_pixels() {
                if !im.mask[p] || !keep(i, p) {
                    continue;
                }
                let Some(ray) = im.camera.pixel_ray(p % w, p / w, half_extent) else {
                    continue;
                };
                pool.rays.push(ray);
                pool.targets.push(im.image.pixel(p % w, p / w));
                pool.images.push(i);
                pool.times.push(im.time);
                pool.pixels.push(p);
            }
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> RayPool {
        RayPool {
            rays: idx.iter().map(|&i| self.rays[i]).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            images: idx.iter().map(|&i| self.images[i]).collect(),
            times: idx.iter().map(|&i| self.times[i]).collect(),
            pixels: idx.iter().map(|&i| self.pixels[i]).collect(),
        }
    }

    /// Conditions using the learned per-image embeddings.
    pub fn conditions<T: Scalar>(&self) -> RayConditions<T> {
        RayConditions {
            times: self.times.iter().map(|&t| T::lit(t)).collect(),
            dirs: self.rays.iter().map(|r| r.dir.map(T::lit)).collect(),
            illum: Illumination::Images(Arc::new(self.images.clone())),
        }
    }

    pub fn target_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::matrix(self.len(), 3, self.targets.iter().flatten().map(|&v| T::lit(v)).collect())
    }
}

/// Mean squared error over all channels of all rays.
pub fn reconstruction_loss<T: Scalar>(g: &mut Graph<T>, rendered: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let d = g.sub(rendered, target)?;
    let sq = g.square(&d)?;
    g.mean(&sq)
}

/// Coarse and (if enabled) fine losses of one batch.
pub struct BatchLoss<T> {
    pub coarse: Tensor<T>,
    pub fine: Option<Tensor<T>>,
    pub total: Tensor<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn batch_loss<T: Scalar, R: Rng + ?Sized>(
    field: &ChronoField<T>,
    g: &mut Graph<T>,
    p: &Bound<T>,
    rays: &[Ray],
    conds: &RayConditions<T>,
    target: &Tensor<T>,
    sampling: &SamplingConfig,
    rng: &mut R,
) -> Result<BatchLoss<T>> {
    let out = render_rays(field, g, p, rays, conds, sampling, rng)?;
    let coarse = reconstruction_loss(g, &out.coarse, target)?;
    let (fine, total) = match &out.fine {
        Some(f) => {
            let fine = reconstruction_loss(g, f, target)?;
            let total = g.add(&coarse, &fine)?;
            (Some(fine), total)
        }
        None => (None, coarse.clone()),
    };
    Ok(BatchLoss { coarse, fine, total })
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: usize,
    pub loss_coarse: f64,
    pub loss_fine: f64,
    pub lr: f64,
    /// Wall time since training started.
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "iteration,loss_coarse,loss_fine,lr,seconds";

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.iteration, self.loss_coarse, self.loss_fine, self.lr, self.seconds
        )
    }
}

/// Stateful optimizer loop over a ray pool.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pool: RayPool,
    probe: RayPool,
    rng: ChaCha8Rng,
    adam: Option<AdamState<T>>,
    iteration: usize,
    started: Instant,
}

impl<T: Scalar> Trainer<T> {
    /// Pool of all mask-valid training pixels of `dataset`.
    pub fn new(dataset: &ChronoDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let pool = RayPool::build(dataset, &dataset.train_indices(), config.sampling.scene_half_extent, |_, _| true)?;
        Self::from_pool(pool, config)
    }

    pub fn from_pool(pool: RayPool, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            return Err(Error::Data("no valid training pixels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let probe_idx: Vec<usize> = (0..config.probe_rays.min(pool.len()))
            .map(|_| rng.random_range(0..pool.len()))
            .collect();
        let probe = pool.subset(&probe_idx);
        Ok(Self {
            config,
            pool,
            probe,
            rng,
            adam: None,
            iteration: 0,
            started: Instant::now(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn pool(&self) -> &RayPool {
        &self.pool
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Loss of the fixed probe batch at the finest level, without jitter.
    pub fn probe_loss(&self, field: &ChronoField<T>) -> Result<f64> {
        if self.probe.is_empty() {
            return Ok(0.0);
        }
        let mut g = Graph::no_grad();
        let p = field.store.detached();
        let sampling = SamplingConfig {
            perturb: false,
            ..self.config.sampling
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = batch_loss(
            field,
            &mut g,
            &p,
            &self.probe.rays,
            &self.probe.conditions(),
            &self.probe.target_tensor()?,
            &sampling,
            &mut rng,
        )?;
        Ok(l.fine.unwrap_or(l.coarse).item()?.as_f64())
    }

    /// One Adam step on a fresh uniformly sampled batch.
    pub fn step(&mut self, field: &mut ChronoField<T>) -> Result<StepLog> {
        let idx: Vec<usize> = (0..self.config.rays_per_batch)
            .map(|_| self.rng.random_range(0..self.pool.len()))
            .collect();
        let batch = self.pool.subset(&idx);
        let lr = self.config.schedule().at(self.iteration);
        let mut g = Graph::new();
        let p = field.store.bind(&mut g);
        let loss = batch_loss(
            field,
            &mut g,
            &p,
            &batch.rays,
            &batch.conditions(),
            &batch.target_tensor()?,
            &self.config.sampling,
            &mut self.rng,
        )?;
        let total = loss.total.item()?.as_f64();
        if !total.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let grads = g.backward(&loss.total)?;
        let (us, bs) = (self.config.u_lr_scale, self.config.beta_lr_scale);
        let adam = self.adam.get_or_insert_with(|| {
            let mut a = AdamState::new(&field.store, AdamConfig::default());
            if let Some((u, b)) = field.time.step_params() {
                a.set_lr_scale(u, us);
                a.set_lr_scale(b, bs);
            }
            a
        });
        adam.step(&mut field.store, &p.gradients(&grads), lr, None)?;
        let log = StepLog {
            iteration: self.iteration,
            loss_coarse: loss.coarse.item()?.as_f64(),
            loss_fine: match &loss.fine {
                Some(f) => f.item()?.as_f64(),
                None => f64::NAN,
            },
            lr,
            seconds: self.started.elapsed().as_secs_f64(),
        };
        self.iteration += 1;
        Ok(log)
    }
}

/// Summary of a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub probe_loss_initial: f64,
    pub probe_loss_final: f64,
    pub seconds: f64,
}

/// Runs all remaining iterations, calling `on_step` after each update
/// (logging, checkpoints); an error from it aborts training.
pub fn train<T: Scalar>(
    field: &mut ChronoField<T>,
    trainer: &mut Trainer<T>,
    mut on_step: impl FnMut(&StepLog, &ChronoField<T>) -> Result<()>,
) -> Result<TrainReport> {
    let started = Instant::now();
    let probe_loss_initial = trainer.probe_loss(field)?;
    while !trainer.is_done() {
        let log = trainer.step(field)?;
        on_step(&log, field)?;
    }
    Ok(TrainReport {
        iterations: trainer.iteration(),
        probe_loss_initial,
        probe_loss_final: trainer.probe_loss(field)?,
        seconds: started.elapsed().as_secs_f64(),
    })
}
