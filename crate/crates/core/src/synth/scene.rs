//! Textured open-box scenes whose wall textures switch at known times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{dot, Camera, Image, Vec3};

/// Procedural wall pattern over wall coordinates `(a, b) ∈ [−1, 1]²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Checker { cells: usize, colors: [Vec3; 2] },
    Stripes { frequency: f64, angle: f64, colors: [Vec3; 2] },
    Gradient { angle: f64, colors: [Vec3; 2] },
}

impl Texture {
    pub fn sample(&self, a: f64, b: f64) -> Vec3 {
        let mix = |c: &[Vec3; 2], w: f64| {
            [
                c[0][0] + w * (c[1][0] - c[0][0]),
                c[0][1] + w * (c[1][1] - c[0][1]),
                c[0][2] + w * (c[1][2] - c[0][2]),
            ]
        };
        match self {
            Texture::Checker { cells, colors } => {
                let n = *cells as f64;
                let i = (((a + 1.0) * 0.5 * n).floor() as i64).clamp(0, *cells as i64 - 1);
                let j = (((b + 1.0) * 0.5 * n).floor() as i64).clamp(0, *cells as i64 - 1);
                colors[((i + j) & 1) as usize]
            }
            Texture::Stripes { frequency, angle, colors } => {
                let s = a * angle.cos() + b * angle.sin();
                let phase = (s * frequency).rem_euclid(1.0);
                colors[usize::from(phase >= 0.5)]
            }
            Texture::Gradient { angle, colors } => {
                let s = a * angle.cos() + b * angle.sin();
                mix(colors, ((s / std::f64::consts::SQRT_2) * 0.5 + 0.5).clamp(0.0, 1.0))
            }
        }
    }

    /// Random texture of the given kind index (0 checker, 1 stripes,
    /// 2 gradient) with colors in `[lo, hi]`.
    pub fn random<R: Rng + ?Sized>(kind: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let mut color = || [0; 3].map(|_| rng.random_range(lo..=hi));
        let mut colors = [color(), color()];
        // Keep the two colors visibly apart.
        let gap: f64 = (0..3).map(|c| (colors[0][c] - colors[1][c]).abs()).sum();
        if gap < 0.3 * (hi - lo) {
            colors[1] = colors[0].map(|v| lo + hi - v);
        }
        match kind % 3 {
            0 => Texture::Checker {
                cells: rng.random_range(3..=6),
                colors,
            },
            1 => Texture::Stripes {
                frequency: rng.random_range(1.5..3.0),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                colors,
            },
            _ => Texture::Gradient {
                angle: rng.random_range(0.0..std::f64::consts::TAU),
                colors,
            },
        }
    }
}

/// Axis-aligned square `|a|, |b| ≤ 1` on the plane `x[axis] = offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub axis: usize,
    pub offset: f64,
    /// Texture indices in the library, switching at `transitions`
    /// (`textures.len() == transitions.len() + 1`).
    pub textures: Vec<usize>,
    pub transitions: Vec<f64>,
}

impl Wall {
    /// The two in-plane axes, in increasing order.
    pub fn plane_axes(&self) -> (usize, usize) {
        match self.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    pub fn texture_at(&self, t: f64) -> usize {
        self.textures[self.transitions.partition_point(|&u| u < t)]
    }

    /// Distance along the ray to the wall, if hit inside the square.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64, f64)> {
        let d = dir[self.axis];
        if d.abs() < 1e-12 {
            return None;
        }
        let s = (self.offset - origin[self.axis]) / d;
        if s <= 0.0 {
            return None;
        }
        let (ia, ib) = self.plane_axes();
        let a = origin[ia] + s * dir[ia];
        let b = origin[ib] + s * dir[ib];
        (a.abs() <= 1.0 && b.abs() <= 1.0).then_some((s, a, b))
    }
}

/// Per-image lighting: `color = texture × gain × tint`, clipped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub gain: f64,
    pub tint: Vec3,
}

impl Lighting {
    pub const IDENTITY: Lighting = Lighting {
        gain: 1.0,
        tint: [1.0; 3],
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChronoSceneSpec {
    pub num_images: usize,
    pub image_size: usize,
    /// Ground-truth transition times; wall `k mod walls` switches at the
    /// `k`-th one.
    pub transitions: Vec<f64>,
    pub num_walls: usize,
    pub gain_range: [f64; 2],
    pub tint_range: [f64; 2],
    pub texture_range: [f64; 2],
    /// Images forced within `±near_transition_window` of every transition.
    pub near_transition_images: usize,
    pub near_transition_window: f64,
    /// Transient occluders per image (0 disables).
    pub max_occluders: usize,
    pub occluder_size: [f64; 2],
    pub background: f64,
    pub camera_distance: f64,
    pub fov_deg: f64,
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub look_at_jitter: f64,
    /// Every `test_every`-th image is held out (0: no test split).
    pub test_every: usize,
    pub seed: u64,
}

impl Default for ChronoSceneSpec {
    fn default() -> Self {
        Self {
            num_images: 200,
            image_size: 64,
            transitions: vec![0.35, 0.7],
            num_walls: 3,
            gain_range: [0.6, 1.4],
            tint_range: [0.85, 1.15],
            texture_range: [0.1, 0.65],
            near_transition_images: 10,
            near_transition_window: 0.02,
            max_occluders: 2,
            occluder_size: [0.1, 0.25],
            background: 0.5,
            camera_distance: 3.6,
            fov_deg: 45.0,
            azimuth_deg: [15.0, 75.0],
            elevation_deg: [15.0, 45.0],
            look_at_jitter: 0.1,
            test_every: 10,
            seed: 0,
        }
    }
}

impl ChronoSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_images == 0 || self.image_size == 0 {
            return Err(Error::Config("scene needs images of non-zero size".into()));
        }
        if !(1..=3).contains(&self.num_walls) {
            return Err(Error::Config("scene has 1 to 3 walls".into()));
        }
        if self.transitions.windows(2).any(|w| !(w[0] < w[1])) || self.transitions.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config("transition times must be sorted and inside (0, 1)".into()));
        }
        if !(self.gain_range[0] > 0.0 && self.gain_range[0] <= self.gain_range[1]) {
            return Err(Error::Config("gain range must be positive and ordered".into()));
        }
        if self.near_transition_images * self.transitions.len() > self.num_images {
            return Err(Error::Config("more forced near-transition images than images".into()));
        }
        Ok(())
    }
}

/// Geometry, texture library and timelines of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChronoScene {
    pub walls: Vec<Wall>,
    pub library: Vec<Texture>,
    pub transitions: Vec<f64>,
    pub background: f64,
}

impl ChronoScene {
    /// Open box: back wall `z = −1`, floor `y = −1`, left wall `x = −1`.
    pub fn from_spec(spec: &ChronoSceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let axes = [2, 1, 0];
        let mut walls: Vec<Wall> = (0..spec.num_walls)
            .map(|w| Wall {
                axis: axes[w],
                offset: -1.0,
                textures: Vec::new(),
                transitions: Vec::new(),
            })
            .collect();
        for (k, &t) in spec.transitions.iter().enumerate() {
            walls[k % spec.num_walls].transitions.push(t);
        }
        let [lo, hi] = spec.texture_range;
        let mut library = Vec::new();
        for wall in &mut walls {
            for _ in 0..=wall.transitions.len() {
                wall.textures.push(library.len());
                library.push(Texture::random(library.len(), lo, hi, &mut rng));
            }
        }
        Ok(Self {
            walls,
            library,
            transitions: spec.transitions.clone(),
            background: spec.background,
        })
    }

    /// Nearest wall hit: `(wall index, a, b)`.
    pub fn trace(&self, origin: Vec3, dir: Vec3) -> Option<(usize, f64, f64)> {
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for (i, w) in self.walls.iter().enumerate() {
            if let Some((s, a, b)) = w.intersect(origin, dir) {
                if best.is_none_or(|bb| s < bb.0) {
                    best = Some((s, i, a, b));
                }
            }
        }
        best.map(|(_, i, a, b)| (i, a, b))
    }

    /// Unlit texture color seen along a ray at time `t`.
    pub fn albedo(&self, origin: Vec3, dir: Vec3, t: f64) -> Option<Vec3> {
        self.trace(origin, dir).map(|(i, a, b)| {
            let w = &self.walls[i];
            self.library[w.texture_at(t)].sample(a, b)
        })
    }

    /// Exact render through pixel centers; misses are background and
    /// `false` in the returned hit mask.
    pub fn render(&self, camera: &Camera, t: f64, light: &Lighting) -> (Image, Vec<bool>) {
        let mut img = Image::new(camera.width, camera.height);
        let mut hit = vec![false; camera.width * camera.height];
        for j in 0..camera.height {
            for i in 0..camera.width {
                let d = camera.direction(i as f64 + 0.5, j as f64 + 0.5);
                let rgb = match self.albedo(camera.center, d, t) {
                    Some(c) => {
                        hit[j * camera.width + i] = true;
                        [0, 1, 2].map(|k| (c[k] * light.gain * light.tint[k]).clamp(0.0, 1.0))
                    }
                    None => [self.background; 3],
                };
                img.set_pixel(i, j, rgb);
            }
        }
        (img, hit)
    }
}

/// One posed, timestamped photograph.
#[derive(Clone, Debug, PartialEq)]
pub struct ChronoImage {
    pub image: Image,
    /// Occluder-free render under the same lighting.
    pub clean: Image,
    /// `true` where the pixel may be used (wall hit, not occluded).
    pub mask: Vec<bool>,
    /// `true` where the pixel sees a wall (occluded or not).
    pub hit: Vec<bool>,
    pub time: f64,
    pub camera: Camera,
    pub lighting: Lighting,
    pub is_test: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChronoDataset {
    pub scene: Option<ChronoScene>,
    pub images: Vec<ChronoImage>,
    pub transitions: Vec<f64>,
}

impl ChronoDataset {
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.images.len()).filter(|&i| !self.images[i].is_test).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.images.len()).filter(|&i| self.images[i].is_test).collect()
    }
}

/// 8-bit quantization, as stored on disk.
pub fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Camera on the positive-octant arc looking at the box corner.
pub fn arc_camera<R: Rng + ?Sized>(spec: &ChronoSceneSpec, rng: &mut R) -> Result<Camera> {
    let az = rng.random_range(spec.azimuth_deg[0]..=spec.azimuth_deg[1]).to_radians();
    let el = rng.random_range(spec.elevation_deg[0]..=spec.elevation_deg[1]).to_radians();
    let j = spec.look_at_jitter;
    let mut jitter = || if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let target = [-0.3 + jitter(), -0.3 + jitter(), -0.3 + jitter()];
    let r = spec.camera_distance;
    let eye = [
        target[0] + r * el.cos() * az.sin(),
        target[1] + r * el.sin(),
        target[2] + r * el.cos() * az.cos(),
    ];
    Camera::look_at(eye, target, [0.0, 1.0, 0.0], spec.fov_deg.to_radians(), spec.image_size, spec.image_size)
}

/// Timestamps: `near_transition_images` within the window around every
/// transition, the rest uniform on `[0, 1]`; returned in random order.
fn timestamps<R: Rng + ?Sized>(spec: &ChronoSceneSpec, rng: &mut R) -> Vec<f64> {
    let w = spec.near_transition_window;
    let mut ts = Vec::with_capacity(spec.num_images);
    for &tr in &spec.transitions {
        for _ in 0..spec.near_transition_images {
            let d = if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
            ts.push((tr + d).clamp(0.0, 1.0));
        }
    }
    while ts.len() < spec.num_images {
        ts.push(rng.random::<f64>());
    }
    // Fisher–Yates so the test split is not biased towards forced times.
    for i in (1..ts.len()).rev() {
        let j = rng.random_range(0..=i);
        ts.swap(i, j);
    }
    ts
}

pub fn generate_dataset(spec: &ChronoSceneSpec) -> Result<ChronoDataset> {
    let scene = ChronoScene::from_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let times = timestamps(spec, &mut rng);
    let mut images = Vec::with_capacity(spec.num_images);
    for (i, &time) in times.iter().enumerate() {
        let camera = arc_camera(spec, &mut rng)?;
        let lighting = Lighting {
            gain: rng.random_range(spec.gain_range[0]..=spec.gain_range[1]),
            tint: [0; 3].map(|_| rng.random_range(spec.tint_range[0]..=spec.tint_range[1])),
        };
        let (mut clean, hit) = scene.render(&camera, time, &lighting);
        clean.data.iter_mut().for_each(|v| *v = quantize(*v));
        let mut image = clean.clone();
        let mut mask = hit.clone();
        let n_occ = if spec.max_occluders > 0 { rng.random_range(0..=spec.max_occluders) } else { 0 };
        let s = spec.image_size as f64;
        for _ in 0..n_occ {
            let ow = (rng.random_range(spec.occluder_size[0]..=spec.occluder_size[1]) * s).round().max(1.0) as usize;
            let oh = (rng.random_range(spec.occluder_size[0]..=spec.occluder_size[1]) * s).round().max(1.0) as usize;
            let x0 = rng.random_range(0..=spec.image_size.saturating_sub(ow));
            let y0 = rng.random_range(0..=spec.image_size.saturating_sub(oh));
            let color = quantize(rng.random_range(0.0..=1.0));
            let color = [color, quantize(1.0 - color), quantize(0.5 * color + 0.25)];
            for y in y0..(y0 + oh).min(spec.image_size) {
                for x in x0..(x0 + ow).min(spec.image_size) {
                    image.set_pixel(x, y, color);
                    mask[y * spec.image_size + x] = false;
                }
            }
        }
        images.push(ChronoImage {
            image,
            clean,
            mask,
            hit,
            time,
            camera,
            lighting,
            is_test: spec.test_every > 0 && i % spec.test_every == spec.test_every - 1,
        });
    }
    Ok(ChronoDataset {
        transitions: scene.transitions.clone(),
        scene: Some(scene),
        images,
    })
}

/// Center of the box corner the default cameras look at.
pub fn default_view(spec: &ChronoSceneSpec) -> Result<Camera> {
    let target = [-0.3, -0.3, -0.3];
    let (az, el) = (
        (0.5 * (spec.azimuth_deg[0] + spec.azimuth_deg[1])).to_radians(),
        (0.5 * (spec.elevation_deg[0] + spec.elevation_deg[1])).to_radians(),
    );
    let r = spec.camera_distance;
    let eye = [
        target[0] + r * el.cos() * az.sin(),
        target[1] + r * el.sin(),
        target[2] + r * el.cos() * az.cos(),
    ];
    debug_assert!(dot(eye, eye) > 0.0);
    Camera::look_at(eye, target, [0.0, 1.0, 0.0], spec.fov_deg.to_radians(), spec.image_size, spec.image_size)
}
