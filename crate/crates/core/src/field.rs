//! The space-time radiance field: static geometry, time-aware appearance.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{positional_encode_rows, Activation, PositionalEncodingConfig, TimeEncoding};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, MlpSpec, TimeEncoder};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriPlaneConfig {
    /// Grid resolution `D` per axis; 0 disables the tri-plane.
    pub resolution: usize,
    /// Feature channels `B` per plane.
    pub channels: usize,
    /// Features are initialized from `U(−init_scale, init_scale)`.
    pub init_scale: f64,
}

/// Three axis-aligned feature planes `E_xy`, `E_yz`, `E_xz` over `[−1, 1]³`.
///
/// Each plane is stored as a `(D·D) × B` table whose row `j·D + i` holds the
/// node at grid coordinates `(i, j)`; node `i` sits at `−1 + 2i/(D−1)`.
#[derive(Clone, Debug)]
pub struct TriPlane {
    pub planes: [ParamId; 3],
    pub resolution: usize,
    pub channels: usize,
}

/// Axis pairs projected onto by each plane, in `planes` order.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

pub type Taps<T> = (Arc<Vec<[u32; 4]>>, Arc<Vec<[T; 4]>>);

/// Bilinear taps of point `(a, b) ∈ [−1, 1]²` on a `d × d` grid; coordinates
/// outside the square are clamped onto it.
pub fn bilinear_taps<T: Scalar>(d: usize, a: T, b: T) -> ([u32; 4], [T; 4]) {
    let scale = T::lit((d - 1) as f64 * 0.5);
    let max = T::lit((d - 1) as f64);
    let fa = ((a + T::one()) * scale).max(T::zero()).min(max);
    let fb = ((b + T::one()) * scale).max(T::zero()).min(max);
    let i0 = fa.floor().to_usize().unwrap_or(0).min(d.saturating_sub(2));
    let j0 = fb.floor().to_usize().unwrap_or(0).min(d.saturating_sub(2));
    let (i1, j1) = ((i0 + 1).min(d - 1), (j0 + 1).min(d - 1));
    let wa = fa - T::lit(i0 as f64);
    let wb = fb - T::lit(j0 as f64);
    let (oa, ob) = (T::one() - wa, T::one() - wb);
    let row = |i: usize, j: usize| (j * d + i) as u32;
    (
        [row(i0, j0), row(i1, j0), row(i0, j1), row(i1, j1)],
        [oa * ob, wa * ob, oa * wb, wa * wb],
    )
}

impl TriPlane {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &TriPlaneConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.resolution < 2 || config.channels == 0 {
            return Err(Error::invalid("tri-plane needs resolution >= 2 and channels >= 1"));
        }
        let d = config.resolution;
        let mut planes = Vec::with_capacity(3);
        for tag in ["xy", "yz", "xz"] {
            let s = config.init_scale;
            let data: Vec<T> = (0..d * d * config.channels)
                .map(|_| T::lit(if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 }))
                .collect();
            planes.push(store.add(format!("{name}.{tag}"), Tensor::matrix(d * d, config.channels, data)?)?);
        }
        Ok(Self {
            planes: [planes[0], planes[1], planes[2]],
            resolution: d,
            channels: config.channels,
        })
    }

    pub fn width(&self) -> usize {
        3 * self.channels
    }

    pub fn taps<T: Scalar>(&self, points: &[[T; 3]]) -> [Taps<T>; 3] {
        PLANE_AXES.map(|(a, b)| {
            let (idx, w): (Vec<_>, Vec<_>) = points
                .iter()
                .map(|p| bilinear_taps(self.resolution, p[a], p[b]))
                .unzip();
            (Arc::new(idx), Arc::new(w))
        })
    }

    /// `N × 3B` features `[f_xy, f_yz, f_xz]`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<T>, points: &[[T; 3]]) -> Result<Tensor<T>> {
        let taps = self.taps(points);
        let mut parts = Vec::with_capacity(3);
        for (plane, (idx, w)) in self.planes.iter().zip(taps) {
            parts.push(g.interp_rows(p.get(*plane), idx, w)?);
        }
        g.concat(&[&parts[0], &parts[1], &parts[2]], 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub geo_hidden: Vec<usize>,
    /// Hidden layer that re-reads the encoded position.
    pub geo_skip: Option<usize>,
    pub app_hidden: Vec<usize>,
    pub app_activation: Activation,
    pub xyz_frequencies: usize,
    pub dir_frequencies: usize,
    pub triplane: TriPlaneConfig,
    pub illum_dim: usize,
    pub time: TimeEncoding,
    pub time_raw_passthrough: bool,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl FieldConfig {
    /// Small networks sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            geo_hidden: vec![64; 3],
            geo_skip: None,
            app_hidden: vec![64; 2],
            app_activation: Activation::Relu,
            xyz_frequencies: 6,
            dir_frequencies: 4,
            triplane: TriPlaneConfig {
                resolution: 64,
                channels: 8,
                init_scale: 0.1,
            },
            // Wider embeddings absorb the texture toggles of near-transition
            // images at this training budget and keep the steps soft.
            illum_dim: 8,
            time: TimeEncoding::Step { dim: 16 },
            time_raw_passthrough: false,
            seed: 0,
        }
    }

    /// The published architecture: 8×256 geometry with a skip at layer 4 and
    /// a 4×256 appearance head.
    pub fn paper() -> Self {
        Self {
            geo_hidden: vec![256; 8],
            geo_skip: Some(4),
            app_hidden: vec![256; 4],
            xyz_frequencies: 10,
            triplane: TriPlaneConfig {
                resolution: 128,
                channels: 16,
                init_scale: 0.1,
            },
            illum_dim: 48,
            ..Self::desk()
        }
    }

    pub fn xyz_encoding(&self) -> PositionalEncodingConfig {
        PositionalEncodingConfig::new(self.xyz_frequencies, true)
    }

    pub fn dir_encoding(&self) -> PositionalEncodingConfig {
        PositionalEncodingConfig::new(self.dir_frequencies, true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.geo_hidden.is_empty() || self.app_hidden.is_empty() {
            return Err(Error::Config("geometry and appearance networks need hidden layers".into()));
        }
        self.app_activation.validate()?;
        self.time.validate()?;
        Ok(())
    }
}

/// Where each ray's illumination embedding comes from.
#[derive(Clone, Debug)]
pub enum Illumination<T> {
    /// Rows of the learned per-image table.
    Images(Arc<Vec<usize>>),
    /// Explicit `R × illum_dim` vectors (possibly graph leaves being fitted).
    Vectors(Tensor<T>),
}

/// Per-ray inputs to the appearance network.
#[derive(Clone, Debug)]
pub struct RayConditions<T> {
    pub times: Vec<T>,
    /// Unit view directions.
    pub dirs: Vec<[T; 3]>,
    pub illum: Illumination<T>,
}

impl<T: Scalar> RayConditions<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Time-independent per-point quantities, reusable across renders at
/// different `t` (and different `ℓ`).
#[derive(Clone, Debug)]
pub struct PointFeatures<T> {
    pub sigma: Tensor<T>,
    /// `[v, tri-plane]` appearance input.
    pub app_input: Tensor<T>,
    /// First appearance pre-activation from `app_input` alone.
    pub app_pre: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ChronoField<T> {
    pub config: FieldConfig,
    pub store: ParamStore<T>,
    pub geo: Mlp,
    pub sigma_head: Linear,
    pub app: Mlp,
    /// Weights mapping per-ray inputs `[H(t), ℓ, γ(d)]` into the first
    /// appearance layer.
    pub app_ray: ParamId,
    pub triplane: Option<TriPlane>,
    pub illum: ParamId,
    pub time: TimeEncoder,
    pub num_images: usize,
}

fn points_tensor<T: Scalar>(points: &[[T; 3]]) -> Result<Tensor<T>> {
    Tensor::matrix(points.len(), 3, points.iter().flatten().copied().collect())
}

impl<T: Scalar> ChronoField<T> {
    pub fn new(config: FieldConfig, num_images: usize) -> Result<Self> {
        config.validate()?;
        if num_images == 0 {
            return Err(Error::Config("field needs at least one illumination embedding".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let xyz_width = config.xyz_encoding().width(3);
        let geo = Mlp::new(
            &mut store,
            "geo",
            MlpSpec {
                in_dim: xyz_width,
                hidden: config.geo_hidden.clone(),
                out_dim: None,
                activation: Activation::Relu,
                skip: config.geo_skip,
            },
            &mut rng,
        )?;
        let v_width = geo.out_width();
        let sigma_head = Linear::new(&mut store, "geo.sigma", v_width, 1, (6.0 / (v_width + 1) as f64).sqrt(), &mut rng)?;
        let triplane = if config.triplane.resolution > 0 {
            Some(TriPlane::new(&mut store, "triplane", &config.triplane, &mut rng)?)
        } else {
            None
        };
        let tri_width = triplane.as_ref().map_or(0, TriPlane::width);
        let time = TimeEncoder::new(&mut store, "time", config.time, config.time_raw_passthrough, &mut rng)?;
        let illum_data: Vec<T> = (0..num_images * config.illum_dim)
            .map(|_| T::lit(rng.random_range(-0.05..=0.05)))
            .collect();
        let illum = store.add("illum", Tensor::matrix(num_images, config.illum_dim, illum_data)?)?;

        let app = Mlp::new(
            &mut store,
            "app",
            MlpSpec {
                in_dim: v_width + tri_width,
                hidden: config.app_hidden.clone(),
                out_dim: Some(3),
                activation: config.app_activation,
                skip: None,
            },
            &mut rng,
        )?;
        // The first appearance layer sees [v, tri | H, ℓ, γ(d)]; the ray part
        // gets its own block of rows, initialized on the full fan-in.
        let ray_width = time.width() + config.illum_dim + config.dir_encoding().width(3);
        let fan_in = app.spec.in_dim + ray_width;
        let h0 = config.app_hidden[0];
        let bound = match config.app_activation {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            Activation::Siren { .. } => 1.0 / fan_in as f64,
            Activation::Gaussian { .. } => (6.0 / (fan_in + h0) as f64).sqrt(),
        };
        let ray_w: Vec<T> = (0..ray_width * h0).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
        let app_ray = store.add("app.ray.weight", Tensor::matrix(ray_width, h0, ray_w)?)?;
        Ok(Self {
            config,
            store,
            geo,
            sigma_head,
            app,
            app_ray,
            triplane,
            illum,
            time,
            num_images,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn illum_dim(&self) -> usize {
        self.config.illum_dim
    }

    /// Learned embedding of training image `i`.
    pub fn illumination(&self, i: usize) -> Vec<T> {
        self.store.get(self.illum).row(i).to_vec()
    }

    /// Geometry feature `v` and density `σ = softplus(·)` per point. Never
    /// looks at time, illumination or direction.
    pub fn geometry(&self, g: &mut Graph<T>, p: &Bound<T>, points: &[[T; 3]]) -> Result<(Tensor<T>, Tensor<T>)> {
        let x = positional_encode_rows(&points_tensor(points)?, &self.config.xyz_encoding())?;
        let v = self.geo.forward(g, p, &x)?;
        let raw = self.sigma_head.forward(g, p, &v)?;
        let sigma = g.softplus(&raw)?;
        Ok((v, sigma))
    }

    /// Everything per point that does not depend on the ray's `t`, `ℓ`, `d`.
    pub fn point_features(&self, g: &mut Graph<T>, p: &Bound<T>, points: &[[T; 3]]) -> Result<PointFeatures<T>> {
        let (v, sigma) = self.geometry(g, p, points)?;
        let app_input = match &self.triplane {
            Some(tp) => {
                let f = tp.encode(g, p, points)?;
                g.concat(&[&v, &f], 1)?
            }
            None => v,
        };
        let app_pre = self.app.first_preactivation(g, p, &app_input)?;
        Ok(PointFeatures {
            sigma,
            app_input,
            app_pre,
        })
    }

    /// `R × h₀` contribution of `[H(t), ℓ, γ(d)]` to the first appearance layer.
    pub fn ray_term(&self, g: &mut Graph<T>, p: &Bound<T>, rays: &RayConditions<T>) -> Result<Tensor<T>> {
        let r = rays.len();
        if rays.dirs.len() != r {
            return Err(Error::invalid("ray conditions: times and directions differ in length"));
        }
        let illum = match &rays.illum {
            Illumination::Images(ids) => {
                if ids.len() != r {
                    return Err(Error::invalid("ray conditions: one image id per ray expected"));
                }
                if ids.iter().any(|&i| i >= self.num_images) {
                    return Err(Error::invalid("illumination index out of range"));
                }
                g.gather_rows(p.get(self.illum), ids.clone())?
            }
            Illumination::Vectors(t) => {
                if t.shape() != [r, self.config.illum_dim] {
                    return Err(Error::Shape {
                        op: "illumination vectors",
                        lhs: t.shape().to_vec(),
                        rhs: vec![r, self.config.illum_dim],
                    });
                }
                t.clone()
            }
        };
        let dirs = positional_encode_rows(&points_tensor(&rays.dirs)?, &self.config.dir_encoding())?;
        let input = match self.time.encode(g, p, &rays.times)? {
            Some(h) => g.concat(&[&h, &illum, &dirs], 1)?,
            None => g.concat(&[&illum, &dirs], 1)?,
        };
        g.matmul(&input, p.get(self.app_ray))
    }

    /// Colors in `(0, 1)` for points whose ray is `ray_of_point[i]`.
    pub fn colors(
        &self,
        g: &mut Graph<T>,
        p: &Bound<T>,
        points: &PointFeatures<T>,
        ray_term: &Tensor<T>,
        ray_of_point: Arc<Vec<usize>>,
    ) -> Result<Tensor<T>> {
        let per_point = g.gather_rows(ray_term, ray_of_point)?;
        let pre = g.add(&points.app_pre, &per_point)?;
        let raw = self.app.forward_after_first(g, p, &points.app_input, &pre)?;
        g.sigmoid(&raw)
    }

    /// One `(c, σ)` per point, each point with its own `(t, ℓ, d)`.
    pub fn eval(
        &self,
        g: &mut Graph<T>,
        p: &Bound<T>,
        points: &[[T; 3]],
        rays: &RayConditions<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if rays.len() != points.len() {
            return Err(Error::invalid("field eval: one condition per point expected"));
        }
        let feats = self.point_features(g, p, points)?;
        let term = self.ray_term(g, p, rays)?;
        let index = Arc::new((0..points.len()).collect());
        let c = self.colors(g, p, &feats, &term, index)?;
        Ok((c, feats.sigma))
    }

    /// Evaluation-only `(c, σ)` as flat vectors.
    pub fn eval_detached(&self, points: &[[T; 3]], rays: &RayConditions<T>) -> Result<(Vec<T>, Vec<T>)> {
        let mut g = Graph::no_grad();
        let p = self.store.detached();
        let (c, s) = self.eval(&mut g, &p, points, rays)?;
        Ok((c.into_vec(), s.into_vec()))
    }

    /// Replace the parameter store (e.g. after loading a checkpoint); names
    /// and shapes must match the architecture exactly.
    pub fn load_store(&mut self, store: ParamStore<T>) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, architecture expects {}",
                store.len(),
                self.store.len()
            )));
        }
        for id in self.store.ids() {
            let (name, shape) = (self.store.name(id), self.store.get(id).shape());
            match store.id(name) {
                Some(other) if store.get(other).shape() == shape => {}
                _ => return Err(Error::Format(format!("checkpoint parameter {name} missing or misshapen"))),
            }
        }
        let mut fresh = self.store.clone();
        for id in fresh.clone().ids() {
            let other = store.id(fresh.name(id)).expect("checked above");
            fresh.set(id, store.get(other).clone())?;
        }
        self.store = fresh;
        Ok(())
    }
}
