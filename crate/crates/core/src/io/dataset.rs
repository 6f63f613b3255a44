//! Dataset directories: `manifest.json` plus one P6 image, one P6 clean
//! render and P5 masks per record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::pnm::{read_pgm, read_ppm, write_pgm, write_ppm};
use crate::render::Camera;
use crate::synth::{ChronoDataset, ChronoImage, ChronoScene, Lighting};

pub const SCHEMA_VERSION: &str = "1.0";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    /// World-from-camera `[R | c]`, OpenCV axes (x right, y down, z forward).
    pub extrinsics: [[f64; 4]; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        Self {
            extrinsics: c.extrinsics(),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera> {
        let e = &self.extrinsics;
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: [[e[0][0], e[0][1], e[0][2]], [e[1][0], e[1][1], e[1][2]], [e[2][0], e[2][1], e[2][2]]],
            center: [e[0][3], e[1][3], e[2][3]],
        };
        cam.validate()?;
        Ok(cam)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub file: String,
    pub clean_file: String,
    pub mask_file: String,
    /// Pixels that see scene geometry, occluded or not.
    pub hit_file: String,
    pub timestamp: f64,
    pub camera: CameraRecord,
    pub gt_gain: f64,
    pub gt_tint: [f64; 3],
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// How stored timestamps relate to calendar time: `t = (time − origin) /
/// span`. Synthetic data is generated directly in normalized time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeNormalization {
    pub origin: f64,
    pub span: f64,
    pub unit: String,
}

impl Default for TimeNormalization {
    fn default() -> Self {
        Self {
            origin: 0.0,
            span: 1.0,
            unit: "normalized".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: String,
    pub time_normalization: TimeNormalization,
    pub gt_transitions: Vec<f64>,
    /// Generating scene (walls, textures, timelines), when synthetic.
    pub scene: Option<ChronoScene>,
    pub images: Vec<ImageRecord>,
}

/// Rejects manifests from a newer major schema version.
pub fn check_schema(version: &str) -> Result<()> {
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok())
        .ok_or_else(|| Error::Data(format!("malformed manifest schema version {version:?}")))?;
    let ours: u32 = SCHEMA_VERSION.split('.').next().and_then(|m| m.parse().ok()).expect("valid constant");
    if major > ours {
        return Err(Error::Data(format!(
            "manifest schema {version} is newer than supported {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

pub fn save_dataset(dir: &Path, ds: &ChronoDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(ds.images.len());
    for (i, im) in ds.images.iter().enumerate() {
        let rec = ImageRecord {
            file: format!("image_{i:04}.ppm"),
            clean_file: format!("clean_{i:04}.ppm"),
            mask_file: format!("mask_{i:04}.pgm"),
            hit_file: format!("hit_{i:04}.pgm"),
            timestamp: im.time,
            camera: CameraRecord::from(&im.camera),
            gt_gain: im.lighting.gain,
            gt_tint: im.lighting.tint,
            split: if im.is_test { Split::Test } else { Split::Train },
        };
        let (w, h) = (im.image.width, im.image.height);
        write_ppm(&dir.join(&rec.file), &im.image)?;
        write_ppm(&dir.join(&rec.clean_file), &im.clean)?;
        write_pgm(&dir.join(&rec.mask_file), w, h, &im.mask)?;
        write_pgm(&dir.join(&rec.hit_file), w, h, &im.hit)?;
        records.push(rec);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION.into(),
        time_normalization: TimeNormalization::default(),
        gt_transitions: ds.transitions.clone(),
        scene: ds.scene.clone(),
        images: records,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    // Check the version before the full schema so newer files get a clear error.
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Data("manifest has no schema_version".into()))?;
    check_schema(version)?;
    serde_json::from_value(raw).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn load_dataset(dir: &Path) -> Result<ChronoDataset> {
    let manifest = load_manifest(dir)?;
    let mut images = Vec::with_capacity(manifest.images.len());
    for rec in &manifest.images {
        let image = read_ppm(&dir.join(&rec.file))?;
        let clean = read_ppm(&dir.join(&rec.clean_file))?;
        let (mw, mh, mask) = read_pgm(&dir.join(&rec.mask_file))?;
        let (hw, hh, hit) = read_pgm(&dir.join(&rec.hit_file))?;
        let camera = rec.camera.to_camera()?;
        let dims = (image.width, image.height);
        if dims != (clean.width, clean.height) || dims != (mw, mh) || dims != (hw, hh) || dims != (camera.width, camera.height) {
            return Err(Error::Data(format!("{}: image, clean render, masks and camera sizes differ", rec.file)));
        }
        images.push(ChronoImage {
            image,
            clean,
            mask,
            hit,
            time: rec.timestamp,
            camera,
            lighting: Lighting {
                gain: rec.gt_gain,
                tint: rec.gt_tint,
            },
            is_test: rec.split == Split::Test,
        });
    }
    Ok(ChronoDataset {
        scene: manifest.scene,
        images,
        transitions: manifest.gt_transitions,
    })
}
