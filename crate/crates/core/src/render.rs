//! Cameras, ray sampling and emission–absorption volume rendering.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ChronoField, Illumination, PointFeatures, RayConditions};
use crate::params::Bound;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// `o + s·d` with unit `d`, integrated over `[near, far]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, near: f64, far: f64) -> Result<Self> {
        let n = dot(dir, dir).sqrt();
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(Error::invalid(format!("ray direction has norm {n}")));
        }
        if !(near < far) {
            return Err(Error::invalid(format!("ray bounds {near} >= {far}")));
        }
        Ok(Self { origin, dir, near, far })
    }

    pub fn at(&self, s: f64) -> Vec3 {
        [
            self.origin[0] + s * self.dir[0],
            self.origin[1] + s * self.dir[1],
            self.origin[2] + s * self.dir[2],
        ]
    }
}

/// Entry and exit distances of a ray through the box `[−h, h]³`, clipped to
/// `s ≥ 0`.
pub fn intersect_box(origin: Vec3, dir: Vec3, half: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a].abs() > half {
                return None;
            }
            continue;
        }
        let t0 = (-half - origin[a]) / dir[a];
        let t1 = (half - origin[a]) / dir[a];
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    (lo < hi).then_some((lo, hi))
}

/// Pinhole camera, OpenCV convention (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-from-camera rotation (columns are the camera axes in world space).
    pub rotation: [[f64; 3]; 3],
    /// Camera center in world space.
    pub center: Vec3,
}

impl Camera {
    /// Camera at `eye` looking at `target` with vertical field of view `fov_y`
    /// (radians); `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(Error::invalid("camera needs a positive image size and fov in (0, π)"));
        }
        let z = normalize(sub(target, eye));
        let x = cross(z, up);
        if dot(x, x) < 1e-20 {
            return Err(Error::invalid("camera up vector parallel to view direction"));
        }
        let x = normalize(x);
        let y = cross(z, x);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Ok(Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            rotation: [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]],
            center: eye,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera focal lengths and size must be positive"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-9 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// 3×4 world-from-camera matrix `[R | c]`.
    pub fn extrinsics(&self) -> [[f64; 4]; 3] {
        let r = &self.rotation;
        let c = self.center;
        [
            [r[0][0], r[0][1], r[0][2], c[0]],
            [r[1][0], r[1][1], r[1][2], c[1]],
            [r[2][0], r[2][1], r[2][2], c[2]],
        ]
    }

    /// Unit world-space direction through image point `(u, v)` in pixels
    /// (pixel `(i, j)` has its center at `(i + ½, j + ½)`).
    pub fn direction(&self, u: f64, v: f64) -> Vec3 {
        let local = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let r = &self.rotation;
        normalize([
            r[0][0] * local[0] + r[0][1] * local[1] + r[0][2] * local[2],
            r[1][0] * local[0] + r[1][1] * local[1] + r[1][2] * local[2],
            r[2][0] * local[0] + r[2][1] * local[1] + r[2][2] * local[2],
        ])
    }

    /// Ray through the center of pixel `(i, j)` bounded by the scene box
    /// `[−h, h]³`; `None` when it misses the box.
    pub fn pixel_ray(&self, i: usize, j: usize, half: f64) -> Option<Ray> {
        let d = self.direction(i as f64 + 0.5, j as f64 + 0.5);
        intersect_box(self.center, d, half).map(|(near, far)| Ray {
            origin: self.center,
            dir: d,
            near,
            far,
        })
    }
}

/// Sorted sample depths and the gaps `δ_k = s_{k+1} − s_k`, the last gap
/// running to the far bound.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub s: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RaySamples {
    pub fn from_depths(mut s: Vec<f64>, far: f64) -> Self {
        s.sort_by(f64::total_cmp);
        let delta = (0..s.len())
            .map(|k| if k + 1 < s.len() { s[k + 1] - s[k] } else { (far - s[k]).max(0.0) })
            .collect();
        Self { s, delta }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// One draw per equal-width bin of `[near, far]`; bin midpoints when `rng`
/// is `None`.
pub fn stratified_sample<R: Rng + ?Sized>(ray: &Ray, k: usize, rng: Option<&mut R>) -> Result<RaySamples> {
    if k < 2 {
        return Err(Error::invalid("stratified sampling needs at least 2 samples"));
    }
    let width = (ray.far - ray.near) / k as f64;
    let s: Vec<f64> = match rng {
        Some(rng) => (0..k).map(|i| ray.near + (i as f64 + rng.random::<f64>()) * width).collect(),
        None => (0..k).map(|i| ray.near + (i as f64 + 0.5) * width).collect(),
    };
    Ok(RaySamples::from_depths(s, ray.far))
}

/// Inverse-transform samples from the piecewise-constant density over the
/// coarse bins, proportional to `weights` floored at 1e-5. Bin `k` spans
/// `[s_k − δ_{k−1}/2, s_k + δ_k/2]` clipped to the ray. Returns only the new
/// depths; evenly spaced quantiles when `rng` is `None`.
pub fn hierarchical_resample<R: Rng + ?Sized>(
    ray: &Ray,
    coarse: &RaySamples,
    weights: &[f64],
    k_fine: usize,
    rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    let k = coarse.len();
    if weights.len() != k || k == 0 {
        return Err(Error::invalid("one weight per coarse sample expected"));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::invalid("coarse weights must be non-negative"));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(stratified_sample(ray, k_fine.max(2), rng)?.s.into_iter().take(k_fine).collect());
    }
    let mut edges = Vec::with_capacity(k + 1);
    edges.push(ray.near);
    for i in 0..k - 1 {
        edges.push(0.5 * (coarse.s[i] + coarse.s[i + 1]));
    }
    edges.push(ray.far);
    let w: Vec<f64> = weights.iter().map(|&w| w.max(1e-5)).collect();
    let total: f64 = w.iter().sum();
    let mut cdf = Vec::with_capacity(k + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for &wi in &w {
        acc += wi / total;
        cdf.push(acc);
    }
    cdf[k] = 1.0;
    let us: Vec<f64> = match rng {
        Some(rng) => (0..k_fine).map(|_| rng.random::<f64>()).collect(),
        None => (0..k_fine).map(|i| (i as f64 + 0.5) / k_fine as f64).collect(),
    };
    Ok(us
        .into_iter()
        .map(|u| {
            let b = (cdf.partition_point(|&c| c <= u).max(1) - 1).min(k - 1);
            let span = cdf[b + 1] - cdf[b];
            let f = if span > 0.0 { (u - cdf[b]) / span } else { 0.5 };
            edges[b] + f.clamp(0.0, 1.0) * (edges[b + 1] - edges[b])
        })
        .collect())
}

/// Output of [`volume_render`].
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub rgb: Vec3,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
}

/// Reference evaluation of `Σ_k T_k (1 − e^{−σ_k δ_k}) c_k`.
pub fn volume_render(samples: &RaySamples, colors: &[Vec3], sigmas: &[f64]) -> Result<Composite> {
    let k = samples.len();
    if colors.len() != k || sigmas.len() != k {
        return Err(Error::invalid("one color and density per sample expected"));
    }
    if samples.delta.iter().any(|&d| d < 0.0) {
        return Err(Error::invalid("negative sample gap"));
    }
    let mut rgb = [0.0; 3];
    let mut weights = Vec::with_capacity(k);
    let mut transmittance = Vec::with_capacity(k);
    let mut optical = 0.0f64;
    for i in 0..k {
        let a = sigmas[i] * samples.delta[i];
        let t = (-optical).exp();
        let w = t * -(-a).exp_m1();
        for c in 0..3 {
            rgb[c] += w * colors[i][c];
        }
        transmittance.push(t);
        weights.push(w);
        optical += a;
    }
    Ok(Composite {
        rgb,
        weights,
        transmittance,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub coarse: usize,
    pub fine: usize,
    /// Jitter samples within their bins (training); midpoints otherwise.
    pub perturb: bool,
    /// Half-width of the scene box rays are clipped to.
    pub scene_half_extent: f64,
}

impl SamplingConfig {
    pub fn desk() -> Self {
        Self {
            coarse: 16,
            fine: 32,
            perturb: true,
            scene_half_extent: 1.05,
        }
    }

    pub fn paper() -> Self {
        Self {
            coarse: 64,
            fine: 128,
            ..Self::desk()
        }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Rendered colors of a ray batch at both levels.
pub struct RenderedBatch<T> {
    pub coarse: Tensor<T>,
    pub fine: Option<Tensor<T>>,
    /// Per-ray weight sums at the finest level.
    pub weight_sums: Vec<f64>,
}

fn to_points<T: Scalar>(rays: &[Ray], depths: &[Vec<f64>]) -> Vec<[T; 3]> {
    rays.iter()
        .zip(depths)
        .flat_map(|(r, ds)| ds.iter().map(move |&s| r.at(s).map(T::lit)))
        .collect()
}

fn row_sums<T: Scalar>(w: &Tensor<T>) -> Vec<f64> {
    let k = w.cols().max(1);
    w.data().chunks_exact(k).map(|r| r.iter().map(|v| v.as_f64()).sum()).collect()
}

/// Two-level rendering of `rays` with `(t, ℓ, d)` from `conds`.
///
/// Coarse samples are stratified; fine samples are drawn from the detached
/// coarse weights and merged with the coarse ones. Coarse points are not
/// re-evaluated: the merged ordering gathers from the coarse and fine
/// evaluations.
#[allow(clippy::too_many_arguments)]
pub fn render_rays<T: Scalar, R: Rng + ?Sized>(
    field: &ChronoField<T>,
    g: &mut Graph<T>,
    p: &Bound<T>,
    rays: &[Ray],
    conds: &RayConditions<T>,
    sampling: &SamplingConfig,
    rng: &mut R,
) -> Result<RenderedBatch<T>> {
    let r = rays.len();
    if conds.len() != r {
        return Err(Error::invalid("one condition per ray expected"));
    }
    let kc = sampling.coarse;
    let coarse: Vec<RaySamples> = rays
        .iter()
        .map(|ray| stratified_sample(ray, kc, sampling.perturb.then_some(&mut *rng)))
        .collect::<Result<_>>()?;
    let term = field.ray_term(g, p, conds)?;
    let depths: Vec<Vec<f64>> = coarse.iter().map(|c| c.s.clone()).collect();
    let cpts = to_points::<T>(rays, &depths);
    let cfeat = field.point_features(g, p, &cpts)?;
    let cidx = Arc::new((0..r).flat_map(|i| std::iter::repeat_n(i, kc)).collect::<Vec<_>>());
    let ccol = field.colors(g, p, &cfeat, &term, cidx)?;
    let cdelta: Vec<T> = coarse.iter().flat_map(|c| c.delta.iter().map(|&d| T::lit(d))).collect();
    let csig = g.reshape(&cfeat.sigma, vec![r, kc])?;
    let cw = g.render_weights(&csig, Arc::new(cdelta))?;
    let crgb = g.composite(&cw, &ccol)?;
    if sampling.fine == 0 {
        let weight_sums = row_sums(&cw);
        return Ok(RenderedBatch {
            coarse: crgb,
            fine: None,
            weight_sums,
        });
    }

    let kf = sampling.fine;
    let cwv: Vec<f64> = cw.data().iter().map(|v| v.as_f64()).collect();
    let mut fine_depths = Vec::with_capacity(r);
    let mut order = Vec::with_capacity(r * (kc + kf));
    let mut fdelta = Vec::with_capacity(r * (kc + kf));
    for (i, ray) in rays.iter().enumerate() {
        let extra = hierarchical_resample(
            ray,
            &coarse[i],
            &cwv[i * kc..(i + 1) * kc],
            kf,
            sampling.perturb.then_some(&mut *rng),
        )?;
        // Merge: entries < r·kc index coarse rows, the rest fine rows.
        let mut merged: Vec<(f64, usize)> = coarse[i].s.iter().enumerate().map(|(k, &s)| (s, i * kc + k)).collect();
        merged.extend(extra.iter().enumerate().map(|(k, &s)| (s, r * kc + i * kf + k)));
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        let all: Vec<f64> = merged.iter().map(|m| m.0).collect();
        let rs = RaySamples::from_depths(all, ray.far);
        fdelta.extend(rs.delta.iter().map(|&d| T::lit(d)));
        order.extend(merged.iter().map(|m| m.1));
        fine_depths.push(extra);
    }
    let fpts = to_points::<T>(rays, &fine_depths);
    let ffeat = field.point_features(g, p, &fpts)?;
    let fidx = Arc::new((0..r).flat_map(|i| std::iter::repeat_n(i, kf)).collect::<Vec<_>>());
    let fcol = field.colors(g, p, &ffeat, &term, fidx)?;
    let order = Arc::new(order);
    let all_sig = g.concat(&[&cfeat.sigma, &ffeat.sigma], 0)?;
    let all_col = g.concat(&[&ccol, &fcol], 0)?;
    let msig = g.gather_rows(&all_sig, order.clone())?;
    let msig = g.reshape(&msig, vec![r, kc + kf])?;
    let mcol = g.gather_rows(&all_col, order)?;
    let mw = g.render_weights(&msig, Arc::new(fdelta))?;
    let frgb = g.composite(&mw, &mcol)?;
    Ok(RenderedBatch {
        coarse: crgb,
        fine: Some(frgb),
        weight_sums: row_sums(&mw),
    })
}

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f64; 3] {
        let o = 3 * (j * self.width + i);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, i: usize, j: usize, rgb: [f64; 3]) {
        let o = 3 * (j * self.width + i);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Evaluate `f` on every chunk index in `0..chunks`, spreading contiguous
/// runs of chunks over `threads` workers; output is in chunk order.
pub(crate) fn par_chunks<V, F>(chunks: usize, threads: usize, f: F) -> Result<Vec<V>>
where
    V: Send,
    F: Fn(usize) -> Result<Vec<V>> + Sync,
{
    let threads = threads.max(1).min(chunks.max(1));
    let per = chunks.div_ceil(threads);
    let run = |range: std::ops::Range<usize>| -> Result<Vec<V>> {
        let mut out = Vec::new();
        for c in range {
            out.extend(f(c)?);
        }
        Ok(out)
    };
    if threads == 1 {
        return run(0..chunks);
    }
    let parts: Vec<Result<Vec<V>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let run = &run;
                s.spawn(move || run(t * per..((t + 1) * per).min(chunks)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("render worker panicked")).collect()
    });
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Options for whole-image rendering.
#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    pub sampling: SamplingConfig,
    /// Seed for jittered sampling (ignored when `sampling.perturb` is off).
    pub seed: u64,
    pub threads: usize,
    /// Rays per evaluation chunk.
    pub chunk: usize,
}

impl RenderOptions {
    pub fn eval(sampling: SamplingConfig) -> Self {
        Self {
            sampling: SamplingConfig {
                perturb: false,
                ..sampling
            },
            seed: 0,
            threads: 1,
            chunk: 1024,
        }
    }
}

/// Rendered image plus the per-pixel accumulated weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pub image: Image,
    pub weight_sum: Vec<f64>,
}

/// Render a full image at time `t` under illumination vector `illum`.
/// Pixels whose ray misses the scene box are black with zero weight.
pub fn render_image<T: Scalar>(
    field: &ChronoField<T>,
    camera: &Camera,
    t: f64,
    illum: &[f64],
    opts: &RenderOptions,
) -> Result<Rendering> {
    if illum.len() != field.illum_dim() {
        return Err(Error::invalid("illumination vector has the wrong dimension"));
    }
    let n = camera.width * camera.height;
    let chunk = opts.chunk.max(1);
    let p = field.store.detached();
    let out = par_chunks(n.div_ceil(chunk), opts.threads, |c| {
        let (start, end) = (c * chunk, ((c + 1) * chunk).min(n));
        let mut rays = Vec::new();
        let mut hit = Vec::new();
        for idx in start..end {
            let ray = camera.pixel_ray(idx % camera.width, idx / camera.width, opts.sampling.scene_half_extent);
            hit.push(ray.is_some());
            rays.extend(ray);
        }
        // One stream per chunk: results do not depend on the thread count.
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(c as u64);
        let vals = if rays.is_empty() {
            Vec::new()
        } else {
            render_chunk(field, &p, &rays, t, illum, &opts.sampling, &mut rng)?
        };
        let mut it = vals.into_iter();
        Ok(hit
            .into_iter()
            .map(|h| if h { it.next().expect("one value per hit") } else { [0.0; 4] })
            .collect())
    })?;
    let mut image = Image::new(camera.width, camera.height);
    let mut weight_sum = Vec::with_capacity(n);
    for (idx, v) in out.into_iter().enumerate() {
        image.set_pixel(idx % camera.width, idx / camera.width, [v[0], v[1], v[2]]);
        weight_sum.push(v[3]);
    }
    Ok(Rendering { image, weight_sum })
}

fn render_chunk<T: Scalar>(
    field: &ChronoField<T>,
    p: &Bound<T>,
    rays: &[Ray],
    t: f64,
    illum: &[f64],
    sampling: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 4]>> {
    let mut g = Graph::no_grad();
    let conds = constant_conditions(field, rays, t, illum)?;
    let out = render_rays(field, &mut g, p, rays, &conds, sampling, rng)?;
    let rgb = out.fine.unwrap_or(out.coarse);
    Ok(rgb
        .data()
        .chunks_exact(3)
        .zip(&out.weight_sums)
        .map(|(c, &w)| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64(), w])
        .collect())
}

fn constant_conditions<T: Scalar>(field: &ChronoField<T>, rays: &[Ray], t: f64, illum: &[f64]) -> Result<RayConditions<T>> {
    let r = rays.len();
    let ell: Vec<T> = (0..r).flat_map(|_| illum.iter().map(|&v| T::lit(v))).collect();
    Ok(RayConditions {
        times: vec![T::lit(t); r],
        dirs: rays.iter().map(|ray| ray.dir.map(T::lit)).collect(),
        illum: Illumination::Vectors(Tensor::matrix(r, field.illum_dim(), ell)?),
    })
}

/// Samples, densities and time-independent features of a fixed ray set,
/// cached for repeated evaluation at different `t`/`ℓ` (neither affects
/// density or sample placement). Sampling matches [`render_image`] with
/// `perturb` off.
pub struct CachedRays<T> {
    rays: Vec<Ray>,
    chunks: Vec<CachedChunk<T>>,
}

struct CachedChunk<T> {
    rays: std::ops::Range<usize>,
    /// Evaluated points in merged (sorted) order per ray.
    feats: PointFeatures<T>,
    per_ray: usize,
    weights: Tensor<T>,
}

impl<T: Scalar> CachedRays<T> {
    pub fn new(field: &ChronoField<T>, rays: Vec<Ray>, sampling: &SamplingConfig, chunk: usize) -> Result<Self> {
        let sampling = SamplingConfig {
            perturb: false,
            ..*sampling
        };
        let p = field.store.detached();
        let mut chunks = Vec::new();
        let mut start = 0;
        while start < rays.len() {
            let end = (start + chunk.max(1)).min(rays.len());
            let batch = &rays[start..end];
            let mut g = Graph::no_grad();
            let kc = sampling.coarse;
            let coarse: Vec<RaySamples> = batch
                .iter()
                .map(|ray| stratified_sample::<ChaCha8Rng>(ray, kc, None))
                .collect::<Result<_>>()?;
            let depths: Vec<Vec<f64>> = coarse.iter().map(|c| c.s.clone()).collect();
            let cpts = to_points::<T>(batch, &depths);
            let (_, csig) = field.geometry(&mut g, &p, &cpts)?;
            let cdelta: Vec<T> = coarse.iter().flat_map(|c| c.delta.iter().map(|&d| T::lit(d))).collect();
            let csig = g.reshape(&csig, vec![batch.len(), kc])?;
            let cw = g.render_weights(&csig, Arc::new(cdelta))?;
            let cwv: Vec<f64> = cw.data().iter().map(|v| v.as_f64()).collect();
            let (depths, per_ray) = if sampling.fine == 0 {
                (depths, kc)
            } else {
                let mut merged = Vec::with_capacity(batch.len());
                for (i, ray) in batch.iter().enumerate() {
                    let mut all = coarse[i].s.clone();
                    all.extend(hierarchical_resample::<ChaCha8Rng>(ray, &coarse[i], &cwv[i * kc..(i + 1) * kc], sampling.fine, None)?);
                    all.sort_by(f64::total_cmp);
                    merged.push(all);
                }
                (merged, kc + sampling.fine)
            };
            let pts = to_points::<T>(batch, &depths);
            let feats = field.point_features(&mut g, &p, &pts)?;
            let delta: Vec<T> = batch
                .iter()
                .zip(&depths)
                .flat_map(|(ray, d)| RaySamples::from_depths(d.clone(), ray.far).delta)
                .map(T::lit)
                .collect();
            let sig = g.reshape(&feats.sigma, vec![batch.len(), per_ray])?;
            let weights = g.render_weights(&sig, Arc::new(delta))?;
            chunks.push(CachedChunk {
                rays: start..end,
                feats,
                per_ray,
                weights,
            });
            start = end;
        }
        Ok(Self { rays, chunks })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn rays(&self) -> &[Ray] {
        &self.rays
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// Ray index range of chunk `c`.
    pub fn chunk_range(&self, c: usize) -> std::ops::Range<usize> {
        self.chunks[c].rays.clone()
    }

    /// Colors (`R_c × 3`) of chunk `c` under `conds`, which must hold one
    /// entry per ray of the chunk. Gradients flow to the appearance inputs
    /// only; cached geometry is constant.
    pub fn composite_chunk(
        &self,
        field: &ChronoField<T>,
        g: &mut Graph<T>,
        p: &Bound<T>,
        c: usize,
        conds: &RayConditions<T>,
    ) -> Result<Tensor<T>> {
        let ch = &self.chunks[c];
        if conds.len() != ch.rays.len() {
            return Err(Error::invalid("one condition per cached ray expected"));
        }
        let term = field.ray_term(g, p, conds)?;
        let idx = Arc::new((0..ch.rays.len()).flat_map(|i| std::iter::repeat_n(i, ch.per_ray)).collect::<Vec<_>>());
        let col = field.colors(g, p, &ch.feats, &term, idx)?;
        g.composite(&ch.weights, &col)
    }

    /// `[r, g, b, Σw]` per ray at constant `(t, ℓ)`.
    pub fn render(&self, field: &ChronoField<T>, t: f64, illum: &[f64]) -> Result<Vec<[f64; 4]>> {
        if illum.len() != field.illum_dim() {
            return Err(Error::invalid("illumination vector has the wrong dimension"));
        }
        let p = field.store.detached();
        let mut vals: Vec<[f64; 4]> = Vec::with_capacity(self.rays.len());
        for c in 0..self.chunks.len() {
            let mut g = Graph::no_grad();
            let conds = constant_conditions(field, &self.rays[self.chunks[c].rays.clone()], t, illum)?;
            let rgb = self.composite_chunk(field, &mut g, &p, c, &conds)?;
            let sums = row_sums(&self.chunks[c].weights);
            vals.extend(
                rgb.data()
                    .chunks_exact(3)
                    .zip(sums)
                    .map(|(v, w)| [v[0].as_f64(), v[1].as_f64(), v[2].as_f64(), w]),
            );
        }
        Ok(vals)
    }
}

/// Geometry of one camera cached for repeated renders at different `t`/`ℓ`.
pub struct CachedView<T> {
    width: usize,
    height: usize,
    hit: Vec<bool>,
    cached: CachedRays<T>,
}

impl<T: Scalar> CachedView<T> {
    pub fn new(field: &ChronoField<T>, camera: &Camera, sampling: &SamplingConfig, chunk: usize) -> Result<Self> {
        let mut hit = Vec::with_capacity(camera.width * camera.height);
        let mut rays = Vec::new();
        for idx in 0..camera.width * camera.height {
            let ray = camera.pixel_ray(idx % camera.width, idx / camera.width, sampling.scene_half_extent);
            hit.push(ray.is_some());
            rays.extend(ray);
        }
        Ok(Self {
            width: camera.width,
            height: camera.height,
            hit,
            cached: CachedRays::new(field, rays, sampling, chunk)?,
        })
    }

    /// Render at `(t, ℓ)`; equals [`render_image`] with perturbation off.
    pub fn render(&self, field: &ChronoField<T>, t: f64, illum: &[f64]) -> Result<Rendering> {
        let vals = self.cached.render(field, t, illum)?;
        let mut image = Image::new(self.width, self.height);
        let mut weight_sum = vec![0.0; self.width * self.height];
        let mut it = vals.into_iter();
        for (idx, &h) in self.hit.iter().enumerate() {
            if h {
                let v = it.next().expect("one value per hit");
                image.set_pixel(idx % self.width, idx / self.width, [v[0], v[1], v[2]]);
                weight_sum[idx] = v[3];
            }
        }
        Ok(Rendering { image, weight_sum })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldConfig, TriPlaneConfig};
    use crate::encoding::TimeEncoding;

    fn ray() -> Ray {
        Ray::new([0.0; 3], [0.0, 0.0, 1.0], 1.0, 3.0).unwrap()
    }

    fn tiny_field() -> ChronoField<f64> {
        ChronoField::new(
            FieldConfig {
                geo_hidden: vec![8, 8],
                app_hidden: vec![8],
                xyz_frequencies: 2,
                dir_frequencies: 1,
                triplane: TriPlaneConfig {
                    resolution: 4,
                    channels: 2,
                    init_scale: 0.5,
                },
                illum_dim: 2,
                time: TimeEncoding::Step { dim: 4 },
                ..FieldConfig::desk()
            },
            1,
        )
        .unwrap()
    }

    fn camera(w: usize) -> Camera {
        Camera::look_at([2.0, 1.5, 2.5], [-0.5, -0.5, -0.5], [0.0, 1.0, 0.0], 0.9, w, w).unwrap()
    }

    #[test]
    fn midpoint_stratification() {
        let s = stratified_sample::<ChaCha8Rng>(&ray(), 4, None).unwrap();
        assert_eq!(s.s, vec![1.25, 1.75, 2.25, 2.75]);
        assert_eq!(s.delta, vec![0.5, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn jittered_samples_stay_in_their_bins() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let sa = stratified_sample(&ray(), 8, Some(&mut a)).unwrap();
        let sb = stratified_sample(&ray(), 8, Some(&mut b)).unwrap();
        assert_ne!(sa.s, sb.s);
        for (k, (x, y)) in sa.s.iter().zip(&sb.s).enumerate() {
            let lo = 1.0 + 0.25 * k as f64;
            assert!(*x >= lo && *x < lo + 0.25 && *y >= lo && *y < lo + 0.25);
        }
        assert!(stratified_sample::<ChaCha8Rng>(&ray(), 1, None).is_err());
    }

    #[test]
    fn empty_space_renders_black() {
        let s = stratified_sample::<ChaCha8Rng>(&ray(), 5, None).unwrap();
        let out = volume_render(&s, &[[0.7; 3]; 5], &[0.0; 5]).unwrap();
        assert_eq!(out.rgb, [0.0; 3]);
        assert!(out.weights.iter().all(|&w| w == 0.0));
        assert!(out.transmittance.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn opaque_single_sample() {
        let s = RaySamples { s: vec![1.0], delta: vec![1.0] };
        let out = volume_render(&s, &[[0.2, 0.4, 0.6]], &[1e6]).unwrap();
        assert!((out.weights[0] - 1.0).abs() < 1e-12);
        assert!((out.rgb[2] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn half_and_half() {
        let s = RaySamples { s: vec![1.0, 2.0], delta: vec![1.0, 1.0] };
        let out = volume_render(&s, &[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], &[2f64.ln(), 1e6]).unwrap();
        assert!((out.weights[0] - 0.5).abs() < 1e-12 && (out.weights[1] - 0.5).abs() < 1e-12);
        assert!((out.rgb[0] - 0.5).abs() < 1e-12 && (out.rgb[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_gap_rejected() {
        let s = RaySamples { s: vec![1.0, 2.0], delta: vec![1.0, -1.0] };
        assert!(volume_render(&s, &[[0.0; 3]; 2], &[1.0; 2]).is_err());
    }

    #[test]
    fn one_hot_weights_confine_fine_samples() {
        let r = ray();
        let c = stratified_sample::<ChaCha8Rng>(&r, 4, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = hierarchical_resample(&r, &c, &[0.0, 0.0, 1.0, 0.0], 200, Some(&mut rng)).unwrap();
        // Bin 2 spans [2.0, 2.5]; the 1e-5 floor leaks ≈ 3e-5 of the mass.
        let inside = f.iter().filter(|&&s| (2.0..=2.5).contains(&s)).count();
        assert!(inside >= 199, "{inside}");
        assert!(f.iter().all(|&s| (1.0..=3.0).contains(&s)));
    }

    #[test]
    fn zero_weights_fall_back_to_stratified() {
        let r = ray();
        let c = stratified_sample::<ChaCha8Rng>(&r, 4, None).unwrap();
        let f = hierarchical_resample::<ChaCha8Rng>(&r, &c, &[0.0; 4], 4, None).unwrap();
        assert_eq!(f, vec![1.25, 1.75, 2.25, 2.75]);
    }

    #[test]
    fn box_intersection() {
        let (n, f) = intersect_box([0.0, 0.0, -3.0], [0.0, 0.0, 1.0], 1.0).unwrap();
        assert_eq!((n, f), (2.0, 4.0));
        assert!(intersect_box([0.0, 3.0, -3.0], [0.0, 0.0, 1.0], 1.0).is_none());
        let (n, _) = intersect_box([0.0; 3], [1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(n, 0.0);
    }

    #[test]
    fn camera_center_ray_hits_target() {
        let cam = Camera::look_at([0.0, 0.0, 5.0], [0.0; 3], [0.0, 1.0, 0.0], 1.0, 4, 4).unwrap();
        cam.validate().unwrap();
        let d = cam.direction(2.0, 2.0);
        assert!((d[2] + 1.0).abs() < 1e-12);
        // Image y grows downward.
        assert!(cam.direction(2.0, 0.0)[1] > 0.0);
        assert!(cam.direction(4.0, 2.0)[0] > 0.0);
    }

    #[test]
    fn zero_density_field_renders_black() {
        let mut f = tiny_field();
        let w = f.sigma_head.weight;
        let b = f.sigma_head.bias;
        let shape = f.store.get(w).shape().to_vec();
        f.store.set(w, Tensor::zeros(shape)).unwrap();
        f.store.set(b, Tensor::full(vec![1, 1], -1e3)).unwrap();
        let out = render_image(&f, &camera(6), 0.5, &[0.0, 0.0], &RenderOptions::eval(SamplingConfig::desk())).unwrap();
        assert!(out.image.data.iter().all(|&v| v == 0.0));
        assert!(out.weight_sum.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rendering_is_deterministic_and_thread_independent() {
        let f = tiny_field();
        let cam = camera(7);
        let mut opts = RenderOptions::eval(SamplingConfig::desk());
        opts.sampling.perturb = true;
        opts.seed = 3;
        opts.chunk = 10;
        let a = render_image(&f, &cam, 0.3, &[0.1, -0.1], &opts).unwrap();
        let b = render_image(&f, &cam, 0.3, &[0.1, -0.1], &opts).unwrap();
        opts.threads = 3;
        let c = render_image(&f, &cam, 0.3, &[0.1, -0.1], &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a.weight_sum.iter().all(|&w| (0.0..=1.0 + 1e-12).contains(&w)));
        assert!(a.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cached_view_matches_direct_render() {
        let f = tiny_field();
        let cam = camera(6);
        let opts = RenderOptions {
            chunk: 9,
            ..RenderOptions::eval(SamplingConfig::desk())
        };
        let view = CachedView::new(&f, &cam, &opts.sampling, opts.chunk).unwrap();
        for t in [0.0, 0.4, 1.0] {
            let direct = render_image(&f, &cam, t, &[0.2, 0.3], &opts).unwrap();
            assert_eq!(view.render(&f, t, &[0.2, 0.3]).unwrap(), direct);
        }
    }
}
