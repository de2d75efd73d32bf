//! Parametric primitive meshes used by the synthetic corpus generator.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Primitive {
    Cube,
    Sphere,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::Cube,
        Primitive::Sphere,
        Primitive::Cylinder,
        Primitive::Cone,
        Primitive::Torus,
        Primitive::Pyramid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Cube => "cube",
            Primitive::Sphere => "sphere",
            Primitive::Cylinder => "cylinder",
            Primitive::Cone => "cone",
            Primitive::Torus => "torus",
            Primitive::Pyramid => "pyramid",
        }
    }

    /// Mesh at the default tessellation.
    pub fn mesh(self) -> Mesh {
        match self {
            Primitive::Cube => cube(),
            Primitive::Sphere => uv_sphere(16, 32),
            Primitive::Cylinder => cylinder(32),
            Primitive::Cone => cone(32),
            Primitive::Torus => torus(0.7, 0.3, 24, 12),
            Primitive::Pyramid => pyramid(),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown primitive `{s}`")))
    }
}

fn build(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Mesh {
    Mesh::new(vertices, faces).expect("primitive meshes are valid by construction")
}

/// Axis-aligned cube with corners at ±1.
pub fn cube() -> Mesh {
    let mut v = Vec::with_capacity(8);
    for i in 0..8u32 {
        let s = |bit: u32| if i & bit != 0 { 1.0 } else { -1.0 };
        v.push([s(1), s(2), s(4)]);
    }
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    build(v, quads.iter().flat_map(|&q| quad(q)).collect())
}

fn quad([a, b, c, d]: [u32; 4]) -> [[u32; 3]; 2] {
    [[a, b, c], [a, c, d]]
}

/// Latitude/longitude sphere of radius 1 with poles on the y axis.
pub fn uv_sphere(rings: u32, segments: u32) -> Mesh {
    let mut v = vec![[0.0, 1.0, 0.0]];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = TAU * s as f64 / segments as f64;
            v.push([theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()]);
        }
    }
    v.push([0.0, -1.0, 0.0]);
    let south = v.len() as u32 - 1;
    let at = |r: u32, s: u32| 1 + (r - 1) * segments + s % segments;
    let mut f = Vec::new();
    for s in 0..segments {
        f.push([0, at(1, s + 1), at(1, s)]);
        f.push([south, at(rings - 1, s), at(rings - 1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            f.extend(quad([at(r, s), at(r, s + 1), at(r + 1, s + 1), at(r + 1, s)]));
        }
    }
    build(v, f)
}

/// Ring of `segments` points at height `y`.
fn ring(radius: f64, y: f64, segments: u32) -> impl Iterator<Item = Vec3> {
    (0..segments).map(move |s| {
        let phi = TAU * s as f64 / segments as f64;
        [radius * phi.cos(), y, radius * phi.sin()]
    })
}

/// Closed cylinder of radius 1 spanning y ∈ [−1, 1].
pub fn cylinder(segments: u32) -> Mesh {
    let mut v: Vec<Vec3> = ring(1.0, 1.0, segments).chain(ring(1.0, -1.0, segments)).collect();
    v.push([0.0, 1.0, 0.0]);
    v.push([0.0, -1.0, 0.0]);
    let (top, bottom) = (2 * segments, 2 * segments + 1);
    let mut f = Vec::new();
    for s in 0..segments {
        let t = (s + 1) % segments;
        f.extend(quad([s, t, segments + t, segments + s]));
        f.push([top, t, s]);
        f.push([bottom, segments + s, segments + t]);
    }
    build(v, f)
}

/// Closed cone with a unit-radius base at y = −1 and its apex at y = 1.
pub fn cone(segments: u32) -> Mesh {
    let mut v: Vec<Vec3> = ring(1.0, -1.0, segments).collect();
    v.push([0.0, 1.0, 0.0]);
    v.push([0.0, -1.0, 0.0]);
    let (apex, base) = (segments, segments + 1);
    let mut f = Vec::new();
    for s in 0..segments {
        let t = (s + 1) % segments;
        f.push([apex, t, s]);
        f.push([base, s, t]);
    }
    build(v, f)
}

/// Torus around the y axis.
pub fn torus(major: f64, minor: f64, segments: u32, sides: u32) -> Mesh {
    let mut v = Vec::with_capacity((segments * sides) as usize);
    for s in 0..segments {
        let phi = TAU * s as f64 / segments as f64;
        for t in 0..sides {
            let psi = TAU * t as f64 / sides as f64;
            let r = major + minor * psi.cos();
            v.push([r * phi.cos(), minor * psi.sin(), r * phi.sin()]);
        }
    }
    let at = |s: u32, t: u32| (s % segments) * sides + t % sides;
    let mut f = Vec::new();
    for s in 0..segments {
        for t in 0..sides {
            f.extend(quad([at(s, t), at(s + 1, t), at(s + 1, t + 1), at(s, t + 1)]));
        }
    }
    build(v, f)
}

/// Square pyramid with base at y = −1 and apex at y = 1.
pub fn pyramid() -> Mesh {
    let v = vec![
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [1.0, -1.0, 1.0],
        [-1.0, -1.0, 1.0],
        [0.0, 1.0, 0.0],
    ];
    let mut f = vec![[4, 1, 0], [4, 2, 1], [4, 3, 2], [4, 0, 3]];
    f.extend(quad([0, 1, 2, 3]));
    build(v, f)
}
