//! Reduction of a turntable to `k` representative views via k-means.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IoContext, Result};
use crate::render::ViewSet;

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn plus_plus_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a centroid already
            Err(_) => rng.gen_range(0..points.len()),
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops when assignments no longer change or after `max_iters` iterations.
/// A cluster left empty takes over the point farthest from its assigned
/// centroid (among clusters that can spare one), so every cluster is
/// non-empty on return.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::TooFewPoints {
            k,
            points: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut history = Vec::new();
    for iter in 0..max_iters.max(1) {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        reseed_empty(points, &mut centroids, &mut next, k);
        let changed = iter == 0 || next != assignments;
        assignments = next;
        update_centroids(points, &mut centroids, &assignments);
        history.push(inertia(points, &centroids, &assignments));
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        inertia: inertia(points, &centroids, &assignments),
        centroids,
        assignments,
        history,
    })
}

fn reseed_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assign: &mut [usize], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assign.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[assign[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[assign[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            sizes[assign[i]] -= 1;
            assign[i] = c;
            sizes[c] = 1;
            centroids[c] = points[i].clone();
        }
    }
}

fn update_centroids(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assign: &[usize]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

/// `k` views stacked as channels, in ascending source azimuth.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStack {
    pub model_id: String,
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Vec<f32>>,
    pub source_azimuths: Vec<f64>,
}

impl ViewStack {
    pub fn k(&self) -> usize {
        self.channels.len()
    }

    /// Channel-major pixel data, `k × height × width`.
    pub fn flat(&self) -> impl Iterator<Item = f32> + '_ {
        self.channels.iter().flatten().copied()
    }

    /// Serializes in the `MVST` layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"MVST".to_vec();
        for d in [self.k(), self.height, self.width] {
            out.extend((d as u32).to_le_bytes());
        }
        for p in self.flat() {
            out.extend(p.to_le_bytes());
        }
        for &a in &self.source_azimuths {
            out.extend((a as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(model_id: &str, bytes: &[u8]) -> Result<ViewStack> {
        let bad = |m: &str| Error::Format {
            what: "MVST",
            message: m.to_string(),
        };
        if bytes.len() < 16 || &bytes[..4] != b"MVST" {
            return Err(bad("bad magic"));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (k, h, w) = (u(4), u(8), u(12));
        let expected = 16 + 4 * (k * h * w + k);
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let floats: Vec<f32> = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (pix, az) = floats.split_at(k * h * w);
        Ok(ViewStack {
            model_id: model_id.to_string(),
            height: h,
            width: w,
            channels: pix.chunks(h * w).map(<[f32]>::to_vec).collect(),
            source_azimuths: az.iter().map(|&a| a as f64).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).at(path)
    }

    pub fn load(model_id: &str, path: &Path) -> Result<ViewStack> {
        ViewStack::from_bytes(model_id, &fs::read(path).at(path)?)
    }
}

/// Stable 64-bit FNV-1a hash, used to derive per-model seeds.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn model_seed(model_id: &str, run_seed: u64) -> u64 {
    fnv1a(model_id) ^ run_seed
}

/// Clusters the flattened views into `k` groups and keeps, per cluster, the
/// member closest to its centroid (ties to the lower azimuth).
pub fn select_representatives(vs: &ViewSet, k: usize, seed: u64) -> Result<ViewStack> {
    select_with(vs, k, seed, DEFAULT_MAX_ITERS)
}

pub fn select_with(vs: &ViewSet, k: usize, seed: u64, max_iters: usize) -> Result<ViewStack> {
    let points: Vec<Vec<f64>> = vs
        .views
        .iter()
        .map(|v| v.pixels.iter().map(|&p| p as f64).collect())
        .collect();
    let km = kmeans(&points, k, seed, max_iters)?;
    let mut chosen: Vec<usize> = (0..k)
        .map(|c| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, p) in points.iter().enumerate() {
                if km.assignments[i] != c {
                    continue;
                }
                let d = sq_dist(p, &km.centroids[c]);
                // views are in ascending azimuth, so strict < keeps the lower one
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        })
        .collect();
    chosen.sort_by(|&a, &b| vs.views[a].azimuth.total_cmp(&vs.views[b].azimuth));
    let first = &vs.views[chosen[0]];
    Ok(ViewStack {
        model_id: vs.model_id.clone(),
        height: first.height,
        width: first.width,
        channels: chosen.iter().map(|&i| vs.views[i].pixels.clone()).collect(),
        source_azimuths: chosen.iter().map(|&i| vs.views[i].azimuth).collect(),
    })
}
