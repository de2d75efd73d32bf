//! Triangle meshes: a practical OBJ subset, normalization and random rotation.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Triangle mesh with 0-based vertex indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::InvalidMesh(format!(
                "{} vertices, {} faces",
                vertices.len(),
                faces.len()
            )));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidMesh(format!("face {f:?} references a vertex beyond {n}")));
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi;
            }
        }
        c.map(|x| x / n)
    }

    pub fn max_radius(&self) -> f64 {
        self.vertices.iter().map(|&v| norm(v)).fold(0.0, f64::max)
    }

    /// Serializes as `v`/`f` lines (1-based indices). Floats use the shortest
    /// round-trip representation, so [`parse_obj`] recovers the mesh exactly.
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 32 + self.faces.len() * 16);
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Parses `v` and `f` records; every other record type is ignored.
///
/// Faces with n ≥ 3 corners are fan-triangulated around the first corner.
/// `a/b/c` corner tokens keep only the vertex index, and negative indices
/// count back from the vertices read so far.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let err = |message: String| Error::Obj { line, message };
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in coords.iter_mut() {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| err("vertex needs three coordinates".into()))?;
                    *c = tok
                        .parse::<f64>()
                        .map_err(|_| err(format!("malformed number {tok:?}")))?;
                    if !c.is_finite() {
                        return Err(err(format!("non-finite coordinate {tok:?}")));
                    }
                }
                vertices.push(coords);
            }
            Some("f") => {
                let count = vertices.len() as i64;
                let corners = tokens
                    .map(|tok| {
                        let idx = tok.split('/').next().unwrap_or("");
                        let i: i64 = idx.parse().map_err(|_| err(format!("malformed index {tok:?}")))?;
                        let resolved = match i {
                            0 => return Err(err("face index 0 is invalid".into())),
                            i if i > 0 => i - 1,
                            i => count + i,
                        };
                        if resolved < 0 || resolved >= count {
                            return Err(err(format!("face index {i} out of range for {count} vertices")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<Vec<u32>>>()?;
                if corners.len() < 3 {
                    return Err(err(format!("face has {} corners", corners.len())));
                }
                for w in corners[1..].windows(2) {
                    faces.push([corners[0], w[0], w[1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(Error::Obj {
            line: text.lines().count(),
            message: "no faces".into(),
        });
    }
    Mesh::new(vertices, faces)
}

/// A mesh centered on its vertex mean and scaled so the farthest vertex
/// lies on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMesh(Mesh);

impl NormalizedMesh {
    pub fn mesh(&self) -> &Mesh {
        &self.0
    }

    pub fn into_mesh(self) -> Mesh {
        self.0
    }

    /// Rotates about the vertical (y) axis by `degrees`; a point at camera
    /// azimuth α moves to α + degrees.
    pub fn rotate_y(&self, degrees: f64) -> NormalizedMesh {
        let (s, c) = degrees.to_radians().sin_cos();
        NormalizedMesh(self.0.map_vertices(|[x, y, z]| [x * c + z * s, y, -x * s + z * c]))
    }
}

pub fn normalize_mesh(m: &Mesh) -> Result<NormalizedMesh> {
    let c = m.centroid();
    let centered = m.map_vertices(|v| sub(v, c));
    let scale = centered.max_radius();
    let extent = norm(c).max(1.0);
    if !(scale > 1e-12 * extent) {
        return Err(Error::DegenerateMesh);
    }
    Ok(NormalizedMesh(centered.map_vertices(|v| v.map(|x| x / scale))))
}

/// Rotation matrix of the unit quaternion (w, x, y, z).
fn quaternion_matrix([w, x, y, z]: [f64; 4]) -> [Vec3; 3] {
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Rotation drawn uniformly from SO(3): a normalized 4-D Gaussian quaternion.
pub fn random_rotation(seed: u64) -> [Vec3; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            return quaternion_matrix(q.map(|v| v / n));
        }
    }
}

pub fn perturb_mesh(m: &NormalizedMesh, seed: u64) -> NormalizedMesh {
    let r = random_rotation(seed);
    NormalizedMesh(m.0.map_vertices(|v| [dot(r[0], v), dot(r[1], v), dot(r[2], v)]))
}
