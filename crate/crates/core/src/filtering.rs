//! Per-image filter cascade over detector and keypoint metadata.

use std::cmp::Ordering;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PERSON: &str = "person";

/// COCO keypoint indices used by the torso check.
pub const LEFT_SHOULDER: usize = 5;
pub const RIGHT_SHOULDER: usize = 6;
pub const LEFT_HIP: usize = 11;
pub const RIGHT_HIP: usize = 12;
pub const COCO_KEYPOINTS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over the smaller of the two boxes.
    pub fn iosb(&self, other: &BBox) -> f64 {
        let smaller = self.area().min(other.area());
        if smaller <= 0.0 {
            0.0
        } else {
            self.intersection(other) / smaller
        }
    }

    /// Intersection over `self`'s area.
    pub fn intersection_over_self(&self, other: &BBox) -> f64 {
        let a = self.area();
        if a <= 0.0 {
            0.0
        } else {
            self.intersection(other) / a
        }
    }

    fn key(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub category: String,
    pub confidence: f64,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<Instance>,
    /// 17 COCO keypoints of the person, or empty when none were detected.
    #[serde(default)]
    pub keypoints: Vec<Keypoint>,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        for inst in &self.instances {
            if !(0.0..=1.0).contains(&inst.confidence) {
                return Err(Error::Format(format!(
                    "{}: confidence {} outside [0, 1]",
                    self.image_id, inst.confidence
                )));
            }
            if !(inst.bbox.area() > 0.0) {
                return Err(Error::Format(format!(
                    "{}: degenerate bounding box",
                    self.image_id
                )));
            }
        }
        if !self.keypoints.is_empty() && self.keypoints.len() != COCO_KEYPOINTS {
            return Err(Error::Format(format!(
                "{}: expected {COCO_KEYPOINTS} keypoints, got {}",
                self.image_id,
                self.keypoints.len()
            )));
        }
        Ok(())
    }

    fn count(&self, category: &str) -> usize {
        self.instances
            .iter()
            .filter(|i| i.category == category)
            .count()
    }

    fn first(&self, category: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.category == category)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NoHuman,
    MultipleHumans,
    NoObject,
    MultipleObjects,
    NoInteraction,
    TorsoMissing,
    SmallHuman,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::NoHuman => "no-human",
            RejectReason::MultipleHumans => "multiple-humans",
            RejectReason::NoObject => "no-object",
            RejectReason::MultipleObjects => "multiple-objects",
            RejectReason::NoInteraction => "no-interaction",
            RejectReason::TorsoMissing => "torso-missing",
            RejectReason::SmallHuman => "small-human",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject(RejectReason),
}

impl Decision {
    pub fn is_accept(&self) -> bool {
        matches!(self, Decision::Accept)
    }
}

/// How the person/object overlap is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMeasure {
    /// Intersection over the object box.
    OverObject,
    /// Intersection over the smaller box.
    OverSmaller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterProfile {
    Default,
    Eval,
}

impl FromStr for FilterProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(FilterProfile::Default),
            "eval" => Ok(FilterProfile::Eval),
            other => Err(Error::Config(format!("unknown filter profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterThresholds {
    pub overlap: OverlapMeasure,
    pub min_overlap: f64,
    pub require_torso: bool,
    pub keypoint_confidence: f64,
    /// Minimum shorter side of the person box, pixels.
    pub min_human_side: f64,
    pub dedup_iosb: f64,
    /// Boxes above this confidence survive deduplication.
    pub dedup_keep_confidence: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            overlap: OverlapMeasure::OverObject,
            min_overlap: 0.1,
            require_torso: true,
            keypoint_confidence: 0.7,
            min_human_side: 32.0,
            dedup_iosb: 0.8,
            dedup_keep_confidence: 0.98,
        }
    }
}

impl FilterThresholds {
    pub fn profile(p: FilterProfile) -> Self {
        match p {
            FilterProfile::Default => Self::default(),
            FilterProfile::Eval => Self {
                overlap: OverlapMeasure::OverSmaller,
                min_overlap: 0.5,
                require_torso: false,
                min_human_side: 0.0,
                ..Self::default()
            },
        }
    }
}

fn rank(a: &Instance, b: &Instance) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| {
            a.bbox
                .key()
                .iter()
                .zip(b.bbox.key().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.mask.cmp(&b.mask))
}

/// Removes duplicate boxes of `category`: walking boxes in descending
/// confidence, a box is dropped when it overlaps an already kept box with
/// IoSB above the threshold, unless its own confidence exceeds the keep
/// threshold. Kept boxes never conflict with each other, so one pass is
/// already a fixpoint. Other categories pass through unchanged.
pub fn dedup_boxes(
    record: &DetectionRecord,
    category: &str,
    th: &FilterThresholds,
) -> DetectionRecord {
    let mut same: Vec<&Instance> = record
        .instances
        .iter()
        .filter(|i| i.category == category)
        .collect();
    same.sort_by(|a, b| rank(a, b));
    let mut kept: Vec<&Instance> = Vec::with_capacity(same.len());
    for inst in same {
        let duplicate = inst.confidence <= th.dedup_keep_confidence
            && kept.iter().any(|k| k.bbox.iosb(&inst.bbox) > th.dedup_iosb);
        if !duplicate {
            kept.push(inst);
        }
    }
    let mut out = record.clone();
    out.instances = record
        .instances
        .iter()
        .filter(|i| i.category != category)
        .cloned()
        .chain(kept.into_iter().cloned())
        .collect();
    out
}

/// Deduplicates both the person and the target category.
pub fn dedup_record(
    record: &DetectionRecord,
    target_category: &str,
    th: &FilterThresholds,
) -> DetectionRecord {
    let r = dedup_boxes(record, PERSON, th);
    if target_category == PERSON {
        r
    } else {
        dedup_boxes(&r, target_category, th)
    }
}

fn torso_visible(record: &DetectionRecord, th: &FilterThresholds) -> bool {
    if record.keypoints.len() != COCO_KEYPOINTS {
        return false;
    }
    [LEFT_SHOULDER, RIGHT_SHOULDER, LEFT_HIP, RIGHT_HIP]
        .iter()
        .all(|&k| {
            let kp = &record.keypoints[k];
            kp.confidence >= th.keypoint_confidence
                && kp.x >= 0.0
                && kp.y >= 0.0
                && kp.x < record.width as f64
                && kp.y < record.height as f64
        })
}

/// Runs the cascade on a deduplicated record and returns the first failed check.
pub fn accept_image(
    record: &DetectionRecord,
    target_category: &str,
    th: &FilterThresholds,
) -> Decision {
    use RejectReason::*;
    match record.count(PERSON) {
        0 => return Decision::Reject(NoHuman),
        1 => {}
        _ => return Decision::Reject(MultipleHumans),
    }
    match record.count(target_category) {
        0 => return Decision::Reject(NoObject),
        1 => {}
        _ => return Decision::Reject(MultipleObjects),
    }
    let person = record.first(PERSON).expect("counted above");
    let object = record.first(target_category).expect("counted above");
    let overlap = match th.overlap {
        OverlapMeasure::OverObject => object.bbox.intersection_over_self(&person.bbox),
        OverlapMeasure::OverSmaller => object.bbox.iosb(&person.bbox),
    };
    if !(overlap >= th.min_overlap) {
        return Decision::Reject(NoInteraction);
    }
    if th.require_torso && !torso_visible(record, th) {
        return Decision::Reject(TorsoMissing);
    }
    if person.bbox.width().min(person.bbox.height()) < th.min_human_side {
        return Decision::Reject(SmallHuman);
    }
    Decision::Accept
}

/// Deduplicates, then runs the cascade.
pub fn filter_record(
    record: &DetectionRecord,
    target_category: &str,
    th: &FilterThresholds,
) -> Decision {
    accept_image(&dedup_record(record, target_category, th), target_category, th)
}

pub fn rejection_rate(
    records: &[DetectionRecord],
    target_category: &str,
    th: &FilterThresholds,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("detection records"));
    }
    let rejected = records
        .iter()
        .filter(|r| !filter_record(r, target_category, th).is_accept())
        .count();
    Ok(rejected as f64 / records.len() as f64)
}

/// Reads one JSON record per non-blank line.
pub fn read_records(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// CSV rejection report: `image_id,reason` for each rejected record.
pub fn rejection_report(
    records: &[DetectionRecord],
    target_category: &str,
    th: &FilterThresholds,
) -> String {
    let mut s = String::from("image_id,reason\n");
    for r in records {
        if let Decision::Reject(reason) = filter_record(r, target_category, th) {
            s.push_str(&r.image_id);
            s.push(',');
            s.push_str(reason.code());
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(cat: &str, conf: f64, b: [f64; 4]) -> Instance {
        Instance {
            category: cat.into(),
            confidence: conf,
            bbox: BBox::new(b[0], b[1], b[2], b[3]),
            mask: None,
        }
    }

    fn torso(conf: f64) -> Vec<Keypoint> {
        (0..COCO_KEYPOINTS)
            .map(|_| Keypoint {
                x: 100.0,
                y: 100.0,
                confidence: conf,
            })
            .collect()
    }

    fn record(instances: Vec<Instance>) -> DetectionRecord {
        DetectionRecord {
            image_id: "img".into(),
            width: 512,
            height: 512,
            instances,
            keypoints: torso(0.9),
        }
    }

    #[test]
    fn dedup_examples() {
        let th = FilterThresholds::default();
        let r = record(vec![
            inst("cup", 0.85, [0.0, 0.0, 10.0, 10.0]),
            inst("cup", 0.9, [0.0, 0.0, 10.0, 10.0]),
        ]);
        let d = dedup_boxes(&r, "cup", &th);
        assert_eq!(d.instances.len(), 1);
        assert_eq!(d.instances[0].confidence, 0.9);

        let r = record(vec![
            inst("cup", 0.99, [0.0, 0.0, 10.0, 10.0]),
            inst("cup", 0.985, [0.0, 0.0, 10.0, 10.0]),
        ]);
        assert_eq!(dedup_boxes(&r, "cup", &th).instances.len(), 2);

        let r = record(vec![
            inst("cup", 0.5, [0.0, 0.0, 10.0, 10.0]),
            inst("cup", 0.6, [20.0, 20.0, 30.0, 30.0]),
        ]);
        assert_eq!(dedup_boxes(&r, "cup", &th).instances.len(), 2);
    }

    #[test]
    fn iosb_of_nested_box_is_one() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(2.0, 2.0, 4.0, 4.0);
        assert_eq!(a.iosb(&b), 1.0);
        assert_eq!(a.intersection_over_self(&b), 0.04);
    }

    #[test]
    fn cascade_examples() {
        let th = FilterThresholds::default();
        let person = inst(PERSON, 0.95, [0.0, 0.0, 200.0, 400.0]);
        // half of the object box lies inside the person box
        let r = record(vec![person.clone(), inst("cup", 0.9, [150.0, 0.0, 250.0, 100.0])]);
        assert_eq!(accept_image(&r, "cup", &th), Decision::Accept);

        let r = record(vec![person.clone(), inst("cup", 0.9, [195.0, 0.0, 295.0, 100.0])]);
        assert_eq!(
            accept_image(&r, "cup", &th),
            Decision::Reject(RejectReason::NoInteraction)
        );

        let mut r = record(vec![person.clone(), inst("cup", 0.9, [150.0, 0.0, 250.0, 100.0])]);
        r.keypoints[LEFT_SHOULDER].confidence = 0.65;
        assert_eq!(
            accept_image(&r, "cup", &th),
            Decision::Reject(RejectReason::TorsoMissing)
        );
    }

    #[test]
    fn rejection_rate_counts() {
        let th = FilterThresholds::default();
        assert!(matches!(
            rejection_rate(&[], "cup", &th),
            Err(Error::EmptyInput(_))
        ));
        let good = record(vec![
            inst(PERSON, 0.95, [0.0, 0.0, 200.0, 400.0]),
            inst("cup", 0.9, [150.0, 0.0, 250.0, 100.0]),
        ]);
        let bad = record(vec![inst("cup", 0.9, [150.0, 0.0, 250.0, 100.0])]);
        assert_eq!(rejection_rate(&[good.clone(), good.clone()], "cup", &th).unwrap(), 0.0);
        assert_eq!(rejection_rate(&[good, bad.clone()], "cup", &th).unwrap(), 0.5);
        let report = rejection_report(&[bad], "cup", &th);
        assert_eq!(report, "image_id,reason\nimg,no-human\n");
    }

    #[test]
    fn decision_json_shape() {
        let d = Decision::Reject(RejectReason::SmallHuman);
        assert_eq!(
            serde_json::to_string(&d).unwrap(),
            r#"{"decision":"reject","reason":"small-human"}"#
        );
        assert_eq!(
            serde_json::to_string(&Decision::Accept).unwrap(),
            r#"{"decision":"accept"}"#
        );
    }
}
