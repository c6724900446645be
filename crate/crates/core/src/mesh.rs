//! Iso-surface extraction from occupancy fields and mesh file output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::OccupancyField;
use crate::Vec3;

mod tables;

use tables::{EDGE_TABLE, TRIANGLE_TABLE};

pub const DEFAULT_ISO: f64 = 0.5;
const MIN_TRIANGLE_AREA: f64 = 1e-12;

const CORNERS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::Format(format!(
                    "triangle {t:?} indexes past {n} vertices"
                )));
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a)).norm() / 2.0
    }

    /// Volume enclosed by a closed, consistently oriented mesh (positive for
    /// outward-facing triangles).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Undirected edge → number of triangles using it.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        self.edge_counts().values().all(|&c| c == 2)
    }

    pub fn euler_characteristic(&self) -> i64 {
        let used: std::collections::HashSet<u32> =
            self.triangles.iter().flat_map(|t| t.iter().copied()).collect();
        used.len() as i64 - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub iso: f64,
    /// Treat everything outside the grid as 0 so surfaces close at the box.
    pub clamp_boundary: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            iso: DEFAULT_ISO,
            clamp_boundary: true,
        }
    }
}

pub fn marching_cubes(field: &OccupancyField, iso: f64) -> Result<TriMesh> {
    marching_cubes_with(
        field,
        &McConfig {
            iso,
            ..McConfig::default()
        },
    )
}

/// Marching cubes over the lattice of voxel centers. Inside is `value ≥ iso`;
/// triangles face outward. Vertices are shared between cubes through their
/// lattice edge.
pub fn marching_cubes_with(field: &OccupancyField, cfg: &McConfig) -> Result<TriMesh> {
    let iso = cfg.iso;
    if !(iso > 0.0 && iso < 1.0) {
        return Err(Error::Config(format!("iso level {iso} must lie in (0, 1)")));
    }
    let spec = &field.spec;
    let res = spec.resolution as i64;
    let pad = i64::from(cfg.clamp_boundary);
    let lo = -pad;
    let n = res + 2 * pad;
    let d = spec.voxel_size();
    let origin = spec.min_corner() + Vec3::repeat(d / 2.0);

    let value = |p: [i64; 3]| -> f64 {
        if p.iter().all(|&c| (0..res).contains(&c)) {
            field.values[spec.index(p[0] as usize, p[1] as usize, p[2] as usize)]
        } else {
            0.0
        }
    };
    let position = |p: [i64; 3]| -> Vec3 {
        origin + Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) * d
    };
    let edge_key = |p: [i64; 3], axis: usize| -> u64 {
        let q = [(p[0] - lo) as u64, (p[1] - lo) as u64, (p[2] - lo) as u64];
        ((q[2] * n as u64 + q[1]) * n as u64 + q[0]) * 3 + axis as u64
    };

    let mut mesh = TriMesh::default();
    let mut welded: HashMap<u64, u32> = HashMap::new();
    for z in lo..lo + n - 1 {
        for y in lo..lo + n - 1 {
            for x in lo..lo + n - 1 {
                let corner = |c: usize| [x + CORNERS[c][0], y + CORNERS[c][1], z + CORNERS[c][2]];
                let vals: [f64; 8] = std::array::from_fn(|c| value(corner(c)));
                let mut case = 0usize;
                for (c, &v) in vals.iter().enumerate() {
                    if v < iso {
                        case |= 1 << c;
                    }
                }
                let cut = EDGE_TABLE[case];
                if cut == 0 {
                    continue;
                }
                let mut edge_vertex = [u32::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if cut & (1 << e) == 0 {
                        continue;
                    }
                    // orient every edge from its lower lattice point
                    let (pa, pb) = (corner(a), corner(b));
                    let (p0, p1, v0, v1) = if pa <= pb {
                        (pa, pb, vals[a], vals[b])
                    } else {
                        (pb, pa, vals[b], vals[a])
                    };
                    let axis = (0..3).find(|&i| p0[i] != p1[i]).expect("cube edge");
                    let key = edge_key(p0, axis);
                    edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                        let t = ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0);
                        let x0 = position(p0);
                        mesh.vertices.push(x0 + (position(p1) - x0) * t);
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [
                        edge_vertex[tri[0] as usize],
                        edge_vertex[tri[1] as usize],
                        edge_vertex[tri[2] as usize],
                    ];
                    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                        continue;
                    }
                    if mesh.triangle_area(&t) < MIN_TRIANGLE_AREA {
                        continue;
                    }
                    mesh.triangles.push(t);
                }
            }
        }
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            other => Err(Error::Config(format!("unknown mesh format {other:?}"))),
        }
    }
}

/// ASCII OBJ with 1-based face indices.
pub fn encode_obj(mesh: &TriMesh) -> String {
    let mut s = String::from("# occupancy iso-surface\n");
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

/// Binary little-endian PLY, `float` coordinates and `int` indices.
pub fn encode_ply(mesh: &TriMesh) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    let mut out = header.into_bytes();
    out.reserve(mesh.vertices.len() * 12 + mesh.triangles.len() * 13);
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

pub fn write_mesh(mesh: &TriMesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    let bytes = match format {
        MeshFormat::Obj => encode_obj(mesh).into_bytes(),
        MeshFormat::Ply => encode_ply(mesh),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses the `v` and triangular `f` lines of an OBJ file.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    for (n, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let bad = || Error::Format(format!("OBJ line {}: {line:?}", n + 1));
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .map(|t| t.parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                if c.len() < 3 {
                    return Err(bad());
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|i| i.parse::<u32>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(bad)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(bad());
                }
                mesh.triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}
