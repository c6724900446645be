//! Voxel grids over a fixed axis-aligned box in person-centric space, and the
//! little-endian `CHOR` container used to store them.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::body::BodyPart;
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub resolution: usize,
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 48,
            center: [0.0; 3],
            half_extent: 1.5,
        }
    }
}

impl GridSpec {
    pub fn new(resolution: usize, center: Vec3, half_extent: f64) -> Result<Self> {
        let spec = Self {
            resolution,
            center: [center.x, center.y, center.z],
            half_extent,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::InvalidGrid(format!(
                "resolution {} < 2",
                self.resolution
            )));
        }
        if !(self.half_extent > 0.0) || !self.half_extent.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "half extent {} must be positive",
                self.half_extent
            )));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidGrid("center not finite".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(3)
    }

    /// Edge length of one voxel.
    pub fn voxel_size(&self) -> f64 {
        2.0 * self.half_extent / self.resolution as f64
    }

    pub fn center_vec(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn min_corner(&self) -> Vec3 {
        self.center_vec() - Vec3::repeat(self.half_extent)
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let r = self.resolution;
        (idx % r, (idx / r) % r, idx / (r * r))
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let d = self.voxel_size();
        let h = self.half_extent;
        Vec3::new(
            self.center[0] - h + (i as f64 + 0.5) * d,
            self.center[1] - h + (j as f64 + 0.5) * d,
            self.center[2] - h + (k as f64 + 0.5) * d,
        )
    }

    pub fn center_of_index(&self, idx: usize) -> Vec3 {
        let (i, j, k) = self.coords(idx);
        self.voxel_center(i, j, k)
    }

    pub fn voxel_centers(&self) -> Vec<Vec3> {
        (0..self.cell_count())
            .map(|idx| self.center_of_index(idx))
            .collect()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= self.half_extent)
    }

    /// Trilinear stencil: 8 (index, weight) pairs for an in-box point, with
    /// coordinates clamped to the outermost voxel centers. `None` outside the box.
    pub fn trilinear_stencil(&self, p: &Vec3) -> Option<[(usize, f64); 8]> {
        if !self.contains(p) {
            return None;
        }
        let d = self.voxel_size();
        let r = self.resolution;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let g = ((p[a] - (self.center[a] - self.half_extent)) / d - 0.5)
                .clamp(0.0, (r - 1) as f64);
            let i0 = (g.floor() as usize).min(r - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let mut out = [(0usize, 0.0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            *slot = (self.index(base[0] + dx, base[1] + dy, base[2] + dz), w);
        }
        Some(out)
    }

    pub fn approx_eq(&self, other: &GridSpec) -> bool {
        let tol = 1e-6;
        self.resolution == other.resolution
            && (self.half_extent - other.half_extent).abs() <= tol
            && self
                .center
                .iter()
                .zip(&other.center)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Which distribution a field represents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SemanticTag {
    #[default]
    Holistic,
    Semantic { prompt: String, part: BodyPart },
}

impl fmt::Display for SemanticTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemanticTag::Holistic => f.write_str("holistic"),
            SemanticTag::Semantic { prompt, part } => write!(f, "({prompt}, {part})"),
        }
    }
}

/// Scalar occupancy in [0, 1] per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub tag: SemanticTag,
}

impl OccupancyField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.cell_count()],
            tag: SemanticTag::Holistic,
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec3) -> f64) -> Self {
        Self {
            spec,
            values: (0..spec.cell_count())
                .map(|i| f(spec.center_of_index(i)))
                .collect(),
            tag: SemanticTag::Holistic,
        }
    }

    pub fn with_tag(mut self, tag: SemanticTag) -> Self {
        self.tag = tag;
        self
    }

    /// Trilinear sample; 0 outside the grid box.
    pub fn sample(&self, p: &Vec3) -> f64 {
        match self.spec.trilinear_stencil(p) {
            Some(st) => st.iter().map(|&(i, w)| w * self.values[i]).sum(),
            None => 0.0,
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn write_chor(&self, path: &Path) -> Result<()> {
        write_chor(path, &self.spec, FieldKind::Scalar, &self.values)
    }

    pub fn read_chor(path: &Path) -> Result<Self> {
        let (spec, kind, values) = read_chor(path)?;
        if kind != FieldKind::Scalar {
            return Err(Error::Format(format!(
                "{}: expected a scalar field",
                path.display()
            )));
        }
        Ok(Self {
            spec,
            values,
            tag: SemanticTag::Holistic,
        })
    }
}

/// Binary occupancy mask over a grid (oracle geometry).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGrid {
    pub spec: GridSpec,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn to_field(&self) -> OccupancyField {
        OccupancyField {
            spec: self.spec,
            values: self
                .cells
                .iter()
                .map(|&c| if c { 1.0 } else { 0.0 })
                .collect(),
            tag: SemanticTag::Holistic,
        }
    }

    pub fn from_field(field: &OccupancyField, threshold: f64) -> Self {
        Self {
            spec: field.spec,
            cells: field.values.iter().map(|&v| v >= threshold).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Weight24,
}

impl FieldKind {
    fn code(self) -> u32 {
        match self {
            FieldKind::Scalar => 0,
            FieldKind::Weight24 => 1,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Weight24 => 24,
        }
    }
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(FieldKind::Scalar),
            "weight24" => Ok(FieldKind::Weight24),
            _ => Err(Error::Format(format!("unknown field kind {s}"))),
        }
    }
}

pub const CHOR_MAGIC: &[u8; 4] = b"CHOR";
pub const CHOR_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5 + 4 * 4;

/// Encodes a field: header then f32 payload, cells x-fastest, channels
/// contiguous per cell.
pub fn encode_chor(spec: &GridSpec, kind: FieldKind, data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(data.len(), spec.cell_count() * kind.channels());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(CHOR_MAGIC);
    out.extend_from_slice(&CHOR_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.code().to_le_bytes());
    for _ in 0..3 {
        out.extend_from_slice(&(spec.resolution as u32).to_le_bytes());
    }
    for c in spec.center {
        out.extend_from_slice(&(c as f32).to_le_bytes());
    }
    out.extend_from_slice(&(spec.half_extent as f32).to_le_bytes());
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_chor(bytes: &[u8]) -> Result<(GridSpec, FieldKind, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[..4] != CHOR_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CHOR_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = match u32_at(8) {
        0 => FieldKind::Scalar,
        1 => FieldKind::Weight24,
        k => return Err(Error::Format(format!("unknown kind {k}"))),
    };
    let (rx, ry, rz) = (u32_at(12), u32_at(16), u32_at(20));
    if rx != ry || ry != rz {
        return Err(Error::Format(format!(
            "non-cubic grid {rx}x{ry}x{rz} unsupported"
        )));
    }
    let spec = GridSpec {
        resolution: rx as usize,
        center: [f32_at(24) as f64, f32_at(28) as f64, f32_at(32) as f64],
        half_extent: f32_at(36) as f64,
    };
    spec.validate()?;
    let n = spec.cell_count() * kind.channels();
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            4 * n
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((spec, kind, data))
}

pub fn write_chor(path: &Path, spec: &GridSpec, kind: FieldKind, data: &[f64]) -> Result<()> {
    let bytes = encode_chor(spec, kind, data);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_chor(path: &Path) -> Result<(GridSpec, FieldKind, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_chor(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_symmetric() {
        let spec = GridSpec::default();
        assert!((spec.voxel_size() - 0.0625).abs() < 1e-15);
        let first = spec.voxel_center(0, 0, 0);
        let last = spec.voxel_center(47, 47, 47);
        assert!((first + last).norm() < 1e-12);
        let (i, j, k) = spec.coords(spec.index(3, 7, 11));
        assert_eq!((i, j, k), (3, 7, 11));
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(1, Vec3::zeros(), 1.0).is_err());
        assert!(GridSpec::new(8, Vec3::zeros(), 0.0).is_err());
        assert!(GridSpec::new(2, Vec3::zeros(), 0.5).is_ok());
    }

    #[test]
    fn trilinear_reproduces_linear_fields() {
        let spec = GridSpec::new(10, Vec3::new(0.1, -0.2, 0.0), 1.0).unwrap();
        let f = OccupancyField::from_fn(spec, |p| 0.3 * p.x - 0.2 * p.y + 0.1 * p.z + 0.5);
        let p = Vec3::new(0.33, -0.41, 0.27);
        let expected = 0.3 * p.x - 0.2 * p.y + 0.1 * p.z + 0.5;
        assert!((f.sample(&p) - expected).abs() < 1e-12);
        assert_eq!(f.sample(&Vec3::new(5.0, 0.0, 0.0)), 0.0);
        // exact at voxel centers
        let c = spec.voxel_center(2, 5, 7);
        assert!((f.sample(&c) - f.values[spec.index(2, 5, 7)]).abs() < 1e-12);
    }

    #[test]
    fn chor_header_layout() {
        let spec = GridSpec::new(2, Vec3::new(1.0, 2.0, 3.0), 0.5).unwrap();
        let data: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let bytes = encode_chor(&spec, FieldKind::Scalar, &data);
        assert_eq!(&bytes[..4], b"CHOR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[28..32].try_into().unwrap()), 2.0);
        assert_eq!(f32::from_le_bytes(bytes[36..40].try_into().unwrap()), 0.5);
        assert_eq!(bytes.len(), 40 + 32);
        let (s2, kind, d2) = decode_chor(&bytes).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(kind, FieldKind::Scalar);
        assert_eq!(d2, data);
    }

    #[test]
    fn chor_rejects_corruption() {
        let spec = GridSpec::new(2, Vec3::zeros(), 0.5).unwrap();
        let mut bytes = encode_chor(&spec, FieldKind::Scalar, &[0.0; 8]);
        assert!(decode_chor(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_chor(&bytes).is_err());
    }
}
