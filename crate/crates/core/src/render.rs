//! Orthographic z-buffer rasterizer producing grayscale turntable views.
//!
//! Intensity is `0.2 + 0.8·|n·d|` for face normal `n` and view direction `d`
//! (double-sided headlight), background is exactly 0. The viewport covers
//! `[-1.1, 1.1]²` so any mesh inside the unit sphere leaves a blank border.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};
use crate::geometry::{cross, dot, norm, sub, NormalizedMesh, Vec3};

pub const VIEWPORT_HALF_EXTENT: f64 = 1.1;
pub const AMBIENT: f64 = 0.2;
pub const DEFAULT_N_VIEWS: usize = 30;
pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_ELEVATION: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewpoint {
    /// Degrees in `[0, 360)`.
    pub azimuth: f64,
    pub elevation: f64,
    /// Camera offset; recorded only, orthographic projection ignores it.
    pub distance: f64,
}

impl Viewpoint {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth: azimuth.rem_euclid(360.0),
            elevation,
            distance: 3.0,
        }
    }

    /// (right, up, back) camera basis; `back` points from the origin to the camera.
    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let (se, ce) = self.elevation.to_radians().sin_cos();
        let back = [ce * sa, se, ce * ca];
        let right = [ca, 0.0, -sa];
        let up = cross(back, right);
        (right, up, back)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first, values in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub azimuth: f64,
}

impl ViewImage {
    pub fn coverage(&self) -> f64 {
        self.pixels.iter().filter(|&&p| p > 0.0).count() as f64 / self.pixels.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &ViewImage) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.pixels.len() as f64
    }

    pub fn max_abs_diff(&self, other: &ViewImage) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub model_id: String,
    /// Ordered by ascending azimuth `i·360/n`.
    pub views: Vec<ViewImage>,
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution == 0 || resolution % 16 != 0 {
        return Err(Error::Resolution(resolution));
    }
    Ok(())
}

/// Signed edge function of `p` against the directed edge `a → b`. Evaluated
/// with the endpoints in a canonical order so that two triangles sharing an
/// edge see exactly opposite values and leave no cracks.
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (lo, hi, sign) = if (a[0], a[1]) <= (b[0], b[1]) {
        (a, b, 1.0)
    } else {
        (b, a, -1.0)
    };
    sign * ((hi[0] - lo[0]) * (p[1] - lo[1]) - (hi[1] - lo[1]) * (p[0] - lo[0]))
}

pub fn render_view(mesh: &NormalizedMesh, vp: Viewpoint, resolution: usize) -> Result<ViewImage> {
    check_resolution(resolution)?;
    let m = mesh.mesh();
    let (right, up, back) = vp.basis();
    let res = resolution as f64;
    let to_px = res / (2.0 * VIEWPORT_HALF_EXTENT);
    let projected: Vec<([f64; 2], f64)> = m
        .vertices()
        .iter()
        .map(|&v| {
            let x = (dot(v, right) + VIEWPORT_HALF_EXTENT) * to_px;
            let y = (VIEWPORT_HALF_EXTENT - dot(v, up)) * to_px;
            ([x, y], dot(v, back))
        })
        .collect();

    let mut depth = vec![f64::NEG_INFINITY; resolution * resolution];
    let mut pixels = vec![0.0f32; resolution * resolution];
    for f in m.faces() {
        let [a, b, c] = f.map(|i| projected[i as usize]);
        let area = edge(a.0, b.0, c.0);
        if area.abs() < 1e-12 {
            continue;
        }
        let [va, vb, vc] = f.map(|i| m.vertices()[i as usize]);
        let n = cross(sub(vb, va), sub(vc, va));
        let nn = norm(n);
        if nn == 0.0 {
            continue;
        }
        let shade = (AMBIENT + (1.0 - AMBIENT) * (dot(n, back) / nn).abs()).clamp(0.0, 1.0) as f32;
        let sgn = area.signum();
        let min_x = a.0[0].min(b.0[0]).min(c.0[0]).floor().max(0.0) as usize;
        let max_x = (a.0[0].max(b.0[0]).max(c.0[0]).ceil() as usize).min(resolution);
        let min_y = a.0[1].min(b.0[1]).min(c.0[1]).floor().max(0.0) as usize;
        let max_y = (a.0[1].max(b.0[1]).max(c.0[1]).ceil() as usize).min(resolution);
        for py in min_y..max_y {
            for px in min_x..max_x {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let w0 = sgn * edge(b.0, c.0, p);
                let w1 = sgn * edge(c.0, a.0, p);
                let w2 = sgn * edge(a.0, b.0, p);
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = (w0 * a.1 + w1 * b.1 + w2 * c.1) / (w0 + w1 + w2);
                let i = py * resolution + px;
                if z > depth[i] {
                    depth[i] = z;
                    pixels[i] = shade;
                }
            }
        }
    }
    Ok(ViewImage {
        width: resolution,
        height: resolution,
        pixels,
        azimuth: vp.azimuth,
    })
}

pub fn turntable_azimuths(n_views: usize) -> Vec<f64> {
    (0..n_views).map(|i| i as f64 * 360.0 / n_views as f64).collect()
}

pub fn render_turntable(
    model_id: &str,
    mesh: &NormalizedMesh,
    n_views: usize,
    resolution: usize,
    elevation: f64,
) -> Result<ViewSet> {
    if n_views == 0 {
        return Err(Error::Config("n_views must be at least 1".into()));
    }
    let views = turntable_azimuths(n_views)
        .into_iter()
        .map(|az| render_view(mesh, Viewpoint::new(az, elevation), resolution))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet {
        model_id: model_id.to_string(),
        views,
    })
}

/// Encodes a view as binary 8-bit PGM (`P5`), intensity `round(255·p)`.
pub fn encode_pgm(image: &ViewImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn decode_pgm(bytes: &[u8], azimuth: f64) -> Result<ViewImage> {
    let bad = |message: &str| Error::Format {
        what: "PGM",
        message: message.to_string(),
    };
    // header: magic, width, height, maxval, separated by whitespace and comments
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() < width * height {
        return Err(bad("truncated pixel data"));
    }
    Ok(ViewImage {
        width,
        height,
        pixels: data[..width * height].iter().map(|&b| b as f32 / 255.0).collect(),
        azimuth,
    })
}

pub fn view_file_name(model_id: &str, index: usize) -> String {
    format!("{model_id}_v{index:02}.pgm")
}

impl ViewSet {
    pub fn write_pgms(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.views
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let path = dir.join(view_file_name(&self.model_id, i));
                let mut f = fs::File::create(&path).at(&path)?;
                f.write_all(&encode_pgm(v)).at(&path)?;
                Ok(path)
            })
            .collect()
    }

    pub fn read_pgms(dir: &Path, model_id: &str, n_views: usize) -> Result<ViewSet> {
        let views = turntable_azimuths(n_views)
            .into_iter()
            .enumerate()
            .map(|(i, az)| {
                let path = dir.join(view_file_name(model_id, i));
                if !path.exists() {
                    return Err(Error::MissingInput(path));
                }
                decode_pgm(&fs::read(&path).at(&path)?, az)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ViewSet {
            model_id: model_id.to_string(),
            views,
        })
    }
}
