//! Projective average precision: scoring a posed occupancy field by how well
//! its thresholded projections match 2D object masks.
//!
//! For each threshold `t ∈ {0.01, …, 1.00}` the voxels with `Φ ≥ t` are
//! splatted into the image, prediction and ground truth are downsampled to a
//! shorter side of 32, and pixel precision/recall are measured. The resulting
//! curve is reduced to an all-point interpolated AP.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{PerspectiveCam, MIN_DEPTH};
use crate::dataset::Mask;
use crate::error::{Error, Result};
use crate::grid::OccupancyField;
use crate::Vec3;

pub const THRESHOLD_COUNT: usize = 100;
pub const DEFAULT_SHORT_SIDE: usize = 32;

/// `0.01, 0.02, …, 1.00`.
pub fn thresholds() -> Vec<f64> {
    (1..=THRESHOLD_COUNT).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMode {
    /// Empty predictions take the best precision seen at a lower threshold.
    Vanilla,
    /// Empty predictions score precision 0.
    Strict,
}

impl std::str::FromStr for ApMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(ApMode::Vanilla),
            "strict" => Ok(ApMode::Strict),
            other => Err(Error::Config(format!("unknown AP mode {other:?}"))),
        }
    }
}

/// How a precision/recall curve is reduced to a single AP value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, …, 1.
    ElevenPoint,
}

/// Per-pixel maximum occupancy over the voxels whose projected footprint
/// covers that pixel. Thresholding this image at `t` gives exactly the
/// rendered mask at `t`, so one pass serves the whole sweep.
pub fn occupancy_image(field: &OccupancyField, camera: &PerspectiveCam) -> Vec<f64> {
    let (w, h) = (camera.width, camera.height);
    let mut img = vec![0.0f64; w * h];
    let spec = &field.spec;
    let half = spec.voxel_size() / 2.0;
    for (idx, &value) in field.values.iter().enumerate() {
        if !(value > 0.0) {
            continue;
        }
        let c = spec.center_of_index(idx);
        let Some((u0, u1, v0, v1)) = corner_bounds(camera, &c, half) else {
            continue;
        };
        let (c0, c1) = pixel_span(u0, u1, w);
        let (r0, r1) = pixel_span(v0, v1, h);
        for row in r0..r1 {
            let line = &mut img[row * w..(row + 1) * w];
            for px in &mut line[c0..c1] {
                if value > *px {
                    *px = value;
                }
            }
        }
    }
    img
}

/// Pixel bounds of a voxel's 8 projected corners; `None` if any corner is
/// not in front of the camera.
fn corner_bounds(camera: &PerspectiveCam, c: &Vec3, half: f64) -> Option<(f64, f64, f64, f64)> {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for corner in 0..8 {
        let d = Vec3::new(
            if corner & 1 == 0 { -half } else { half },
            if corner & 2 == 0 { -half } else { half },
            if corner & 4 == 0 { -half } else { half },
        );
        let p = camera.project_unchecked(&(c + d));
        if !(p.depth > MIN_DEPTH) {
            return None;
        }
        b.0 = b.0.min(p.u);
        b.1 = b.1.max(p.u);
        b.2 = b.2.min(p.v);
        b.3 = b.3.max(p.v);
    }
    Some(b)
}

/// Half-open pixel index range touched by `[lo, hi]`, clipped to `[0, n)`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    if hi < 0.0 || lo >= n as f64 {
        return (0, 0);
    }
    let a = lo.max(0.0).floor() as usize;
    let b = ((hi.floor() as usize) + 1).min(n);
    (a.min(b), b)
}

pub fn threshold_image(img: &[f64], width: usize, height: usize, t: f64) -> Mask {
    Mask {
        width,
        height,
        data: img.iter().map(|&v| v >= t).collect(),
    }
}

/// Binary rendering of `field ≥ threshold` with conservative per-voxel
/// bounding-quad splats.
pub fn render_occupancy_mask(
    field: &OccupancyField,
    threshold: f64,
    camera: &PerspectiveCam,
) -> Mask {
    let img = occupancy_image(field, camera);
    threshold_image(&img, camera.width, camera.height, threshold)
}

/// Output size for a shorter side of `short`, aspect preserved.
pub fn downsampled_size(width: usize, height: usize, short: usize) -> (usize, usize) {
    if width <= height {
        let h = ((height as f64 * short as f64 / width as f64).round() as usize).max(1);
        (short, h)
    } else {
        let w = ((width as f64 * short as f64 / height as f64).round() as usize).max(1);
        (w, short)
    }
}

/// Source-pixel overlap weights for each output cell along one axis.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let ov = (hi.min((s + 1) as f64) - lo.max(s as f64)) / scale;
                    (ov > 0.0).then_some((s, ov))
                })
                .collect()
        })
        .collect()
}

/// Area-average to a shorter side of `short`, then keep cells at least half
/// covered.
pub fn downsample_mask(mask: &Mask, short: usize) -> Mask {
    let (ow, oh) = downsampled_size(mask.width, mask.height, short);
    if (ow, oh) == (mask.width, mask.height) {
        return mask.clone();
    }
    let wx = axis_weights(mask.width, ow);
    let wy = axis_weights(mask.height, oh);
    let mut out = Mask::new(ow, oh);
    for (orow, ys) in wy.iter().enumerate() {
        for (ocol, xs) in wx.iter().enumerate() {
            let mut cover = 0.0;
            for &(r, fy) in ys {
                for &(c, fx) in xs {
                    if mask.get(c, r) {
                        cover += fx * fy;
                    }
                }
            }
            // tolerance absorbs rounding in non-integer scale factors
            out.set(ocol, orow, cover >= 0.5 - 1e-9);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// `None` when the prediction has no positive pixel.
    pub precision: Option<f64>,
    pub recall: f64,
}

/// Pixel precision and recall over pixels outside `exclude`.
pub fn precision_recall(pred: &Mask, gt: &Mask, exclude: Option<&Mask>) -> Result<PrPoint> {
    if !pred.same_size(gt) {
        return Err(Error::DimensionMismatch(
            pred.width, pred.height, gt.width, gt.height,
        ));
    }
    if let Some(x) = exclude {
        if !x.same_size(gt) {
            return Err(Error::DimensionMismatch(x.width, x.height, gt.width, gt.height));
        }
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in 0..gt.data.len() {
        if exclude.is_some_and(|x| x.data[i]) {
            continue;
        }
        match (pred.data[i], gt.data[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    Ok(PrPoint { precision, recall })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub empty: bool,
}

/// One entry per threshold, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub entries: Vec<CurveEntry>,
}

impl PrCurve {
    pub fn from_points(thresholds: &[f64], points: &[PrPoint]) -> Self {
        Self {
            entries: thresholds
                .iter()
                .zip(points)
                .map(|(&threshold, p)| CurveEntry {
                    threshold,
                    precision: p.precision.unwrap_or(0.0),
                    recall: p.recall,
                    empty: p.precision.is_none(),
                })
                .collect(),
        }
    }

    /// `(recall, precision)` pairs after the empty-prediction rule of `mode`.
    pub fn resolved(&self, mode: ApMode) -> Vec<(f64, f64)> {
        let mut best_lower: f64 = 0.0;
        self.entries
            .iter()
            .map(|e| {
                let p = if e.empty {
                    match mode {
                        ApMode::Vanilla => best_lower,
                        ApMode::Strict => 0.0,
                    }
                } else {
                    e.precision
                };
                if !e.empty {
                    best_lower = best_lower.max(e.precision);
                }
                (e.recall, p)
            })
            .collect()
    }
}

/// All-point interpolated AP over `(recall, precision)` pairs: precision is
/// replaced by its running maximum from high recall down, then integrated
/// over recall steps between 0 and 1.
pub fn interpolated_ap(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rec = Vec::with_capacity(pts.len() + 2);
    let mut pre = Vec::with_capacity(pts.len() + 2);
    rec.push(0.0);
    pre.push(0.0);
    for (r, p) in pts {
        rec.push(r);
        pre.push(p);
    }
    rec.push(1.0);
    pre.push(0.0);
    for i in (0..pre.len() - 1).rev() {
        pre[i] = pre[i].max(pre[i + 1]);
    }
    let mut ap = 0.0;
    for i in 0..rec.len() - 1 {
        let dr = rec[i + 1] - rec[i];
        if dr > 0.0 {
            ap += dr * pre[i + 1];
        }
    }
    ap
}

/// 11-point interpolated AP: envelope precision `max{p : r' ≥ r}` averaged
/// over `r ∈ {0, 0.1, …, 1}`.
pub fn eleven_point_ap(points: &[(f64, f64)]) -> f64 {
    (0..=10)
        .map(|i| {
            let r = i as f64 / 10.0;
            points
                .iter()
                .filter(|(rr, _)| *rr >= r - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// All-point AP. Empty predictions sit at recall 0, where the envelope area
/// does not see them, so both modes agree here; they differ under
/// [`Interpolation::ElevenPoint`].
pub fn average_precision(curve: &PrCurve, mode: ApMode) -> f64 {
    interpolated_ap(&curve.resolved(mode))
}

pub fn average_precision_with(curve: &PrCurve, mode: ApMode, interp: Interpolation) -> f64 {
    let pts = curve.resolved(mode);
    match interp {
        Interpolation::AllPoint => interpolated_ap(&pts),
        Interpolation::ElevenPoint => eleven_point_ap(&pts),
    }
}

/// A posed field to be scored against one image.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub field: OccupancyField,
    pub camera: PerspectiveCam,
    pub gt_mask: Mask,
    pub human_mask: Option<Mask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PapConfig {
    pub mode: ApMode,
    pub occlusion_aware: bool,
    pub short_side: usize,
    pub interpolation: Interpolation,
}

impl Default for PapConfig {
    fn default() -> Self {
        Self {
            mode: ApMode::Vanilla,
            occlusion_aware: false,
            short_side: DEFAULT_SHORT_SIDE,
            interpolation: Interpolation::AllPoint,
        }
    }
}

/// Curve of one sample: render per threshold, downsample both masks, and
/// measure precision/recall outside the (downsampled) human mask if asked.
pub fn sample_curve(sample: &EvalSample, cfg: &PapConfig) -> Result<PrCurve> {
    let cam = &sample.camera;
    if sample.gt_mask.width != cam.width || sample.gt_mask.height != cam.height {
        return Err(Error::DimensionMismatch(
            sample.gt_mask.width,
            sample.gt_mask.height,
            cam.width,
            cam.height,
        ));
    }
    let gt = downsample_mask(&sample.gt_mask, cfg.short_side);
    let exclude = if cfg.occlusion_aware {
        let h = sample.human_mask.as_ref().ok_or_else(|| {
            Error::Format(format!(
                "sample {}: occlusion-aware evaluation needs a human mask",
                sample.id
            ))
        })?;
        if !h.same_size(&sample.gt_mask) {
            return Err(Error::DimensionMismatch(
                h.width,
                h.height,
                sample.gt_mask.width,
                sample.gt_mask.height,
            ));
        }
        Some(downsample_mask(h, cfg.short_side))
    } else {
        None
    };
    let img = occupancy_image(&sample.field, cam);
    let ts = thresholds();
    let points = ts
        .iter()
        .map(|&t| {
            let pred = downsample_mask(&threshold_image(&img, cam.width, cam.height, t), cfg.short_side);
            precision_recall(&pred, &gt, exclude.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrCurve::from_points(&ts, &points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PapReport {
    pub pap: f64,
    pub mode: ApMode,
    pub hoa: bool,
    pub n: usize,
    /// Samples whose downsampled ground truth was empty and were left out.
    pub skipped_empty_gt: usize,
    pub samples: Vec<SampleScore>,
}

/// AP of one sample, or `None` when its downsampled ground truth is empty
/// and the sample does not count.
pub fn score_sample(sample: &EvalSample, cfg: &PapConfig) -> Result<Option<SampleScore>> {
    if downsample_mask(&sample.gt_mask, cfg.short_side).is_empty() {
        return Ok(None);
    }
    let curve = sample_curve(sample, cfg)?;
    Ok(Some(SampleScore {
        id: sample.id.clone(),
        ap: average_precision_with(&curve, cfg.mode, cfg.interpolation),
    }))
}

/// Mean AP × 100 over the counted samples.
pub fn summarize(scores: Vec<Option<SampleScore>>, cfg: &PapConfig) -> Result<PapReport> {
    let skipped = scores.iter().filter(|s| s.is_none()).count();
    let kept: Vec<SampleScore> = scores.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::EmptyInput("samples with a nonempty ground-truth mask"));
    }
    let pap = 100.0 * kept.iter().map(|s| s.ap).sum::<f64>() / kept.len() as f64;
    Ok(PapReport {
        pap,
        mode: cfg.mode,
        hoa: cfg.occlusion_aware,
        n: kept.len(),
        skipped_empty_gt: skipped,
        samples: kept,
    })
}

/// Mean AP × 100 over samples with a nonempty ground-truth mask.
pub fn pap(samples: &[EvalSample], cfg: &PapConfig) -> Result<PapReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation samples"));
    }
    let scores = samples
        .par_iter()
        .map(|s| score_sample(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    summarize(scores, cfg)
}
