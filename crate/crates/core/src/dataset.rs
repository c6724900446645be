//! On-disk dataset layout and in-memory view samples.
//!
//! ```text
//! <root>/meta.json            prompt table, category, grid spec
//! <root>/views/<id>.json      camera, pose, score, prompt (+ ground truth when synthetic)
//! <root>/masks/<id>.obj.pgm   object mask, binary P5, 255 = inside
//! <root>/masks/<id>.hum.pgm   human mask (optional)
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::body::PoseParams;
use crate::camera::{CalibrationSample, PerspectiveCam};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    /// Value at a continuous pixel position; `false` off the image.
    #[inline]
    pub fn at(&self, u: f64, v: f64) -> bool {
        u >= 0.0
            && v >= 0.0
            && u < self.width as f64
            && v < self.height as f64
            && self.get(u as usize, v as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_size(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn encode_pgm(&self) -> Result<Vec<u8>> {
        let pixels: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(
                &pixels,
                self.width as u32,
                self.height as u32,
                ExtendedColorType::L8,
            )
            .map_err(|e| Error::Format(format!("PGM encode: {e}")))?;
        Ok(out)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_pgm()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads any PNM graymap; pixels at or above 128 are inside.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        Ok(Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| p.0[0] >= 128).collect(),
        })
    }
}

/// One calibrated view: the evidence a single image contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub id: u32,
    pub camera: PerspectiveCam,
    pub pose: PoseParams,
    /// Accumulation score `r_k`.
    pub score: f64,
    pub prompt: String,
    pub object_mask: Mask,
    pub human_mask: Option<Mask>,
}

impl ViewSample {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.object_mask.width != self.camera.width
            || self.object_mask.height != self.camera.height
        {
            return Err(Error::DimensionMismatch(
                self.object_mask.width,
                self.object_mask.height,
                self.camera.width,
                self.camera.height,
            ));
        }
        if let Some(h) = &self.human_mask {
            if !h.same_size(&self.object_mask) {
                return Err(Error::DimensionMismatch(
                    h.width,
                    h.height,
                    self.object_mask.width,
                    self.object_mask.height,
                ));
            }
        }
        if !(self.score >= 0.0) || !self.score.is_finite() {
            return Err(Error::Format(format!(
                "view {}: score {} must be finite and nonnegative",
                self.id, self.score
            )));
        }
        Ok(())
    }
}

/// `views/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub id: u32,
    pub camera: PerspectiveCam,
    pub pose: PoseParams,
    pub score: f64,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_camera: Option<PerspectiveCam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<PoseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSample>,
}

/// `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub category: String,
    pub prompts: Vec<String>,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Prompt id → oracle field path relative to the root, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oracles: Vec<OracleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleEntry {
    pub prompt: String,
    pub part: Option<crate::body::BodyPart>,
    pub path: String,
}

pub fn view_json_path(root: &Path, id: u32) -> PathBuf {
    root.join("views").join(format!("{id:05}.json"))
}

pub fn object_mask_path(root: &Path, id: u32) -> PathBuf {
    root.join("masks").join(format!("{id:05}.obj.pgm"))
}

pub fn human_mask_path(root: &Path, id: u32) -> PathBuf {
    root.join("masks").join(format!("{id:05}.hum.pgm"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    use std::io::Write;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub views: Vec<ViewSample>,
    pub records: Vec<ViewRecord>,
}

impl Dataset {
    pub fn create_dirs(root: &Path) -> Result<()> {
        for d in [root.to_path_buf(), root.join("views"), root.join("masks")] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(())
    }

    pub fn write_meta(root: &Path, meta: &DatasetMeta) -> Result<()> {
        write_json(&root.join("meta.json"), meta)
    }

    pub fn write_view(
        root: &Path,
        record: &ViewRecord,
        object_mask: &Mask,
        human_mask: Option<&Mask>,
    ) -> Result<()> {
        write_json(&view_json_path(root, record.id), record)?;
        object_mask.write_pgm(&object_mask_path(root, record.id))?;
        if let Some(h) = human_mask {
            h.write_pgm(&human_mask_path(root, record.id))?;
        }
        Ok(())
    }

    /// Loads every view, sorted by id.
    pub fn load(root: &Path) -> Result<Self> {
        let meta: DatasetMeta = read_json(&root.join("meta.json"))?;
        meta.grid.validate()?;
        let views_dir = root.join("views");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&views_dir).map_err(|e| Error::io(&views_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&views_dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".json") {
                let id: u32 = stem
                    .parse()
                    .map_err(|_| Error::Format(format!("unexpected view file {name}")))?;
                ids.push(id);
            }
        }
        ids.sort_unstable();
        let mut views = Vec::with_capacity(ids.len());
        let mut records = Vec::with_capacity(ids.len());
        for id in ids {
            let rec: ViewRecord = read_json(&view_json_path(root, id))?;
            if rec.id != id {
                return Err(Error::Format(format!(
                    "view file {id:05}.json carries id {}",
                    rec.id
                )));
            }
            let object_mask = Mask::read_pgm(&object_mask_path(root, id))?;
            let hp = human_mask_path(root, id);
            let human_mask = if hp.exists() {
                Some(Mask::read_pgm(&hp)?)
            } else {
                None
            };
            let view = ViewSample {
                id,
                camera: rec.camera.clone(),
                pose: rec.pose.clone(),
                score: rec.score,
                prompt: rec.prompt.clone(),
                object_mask,
                human_mask,
            };
            view.validate()?;
            views.push(view);
            records.push(rec);
        }
        Ok(Self {
            meta,
            views,
            records,
        })
    }
}
