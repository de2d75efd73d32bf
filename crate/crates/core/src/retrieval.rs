//! Embedding corpora and exhaustive cosine-distance ranking.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub model_id: String,
    pub label: String,
    pub vector: Vec<f32>,
}

impl Embedding {
    pub fn new(model_id: String, label: String, vector: Vec<f32>) -> Self {
        Self {
            model_id,
            label,
            vector,
        }
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn cosine_with_norms(u: &[f32], v: &[f32], nu: f64, nv: f64) -> Option<f64> {
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    Some((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

/// `1 − cos(u, v)`, clamped to [0, 2]; 1 when either vector has zero norm.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine distance needs equal dimensions");
    cosine_with_norms(u, v, norm(u), norm(v)).unwrap_or(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    /// `(item id, distance)` by ascending distance, then id.
    pub entries: Vec<(String, f64)>,
}

/// Immutable embedding corpus with unique ids and a common dimension.
#[derive(Debug)]
pub struct EmbeddingIndex {
    items: Vec<Embedding>,
    norms: Vec<f64>,
    by_id: HashMap<String, usize>,
    zero_norm_hits: AtomicUsize,
}

impl EmbeddingIndex {
    pub fn new(items: Vec<Embedding>) -> Result<Self> {
        let dim = items.first().map_or(0, |e| e.vector.len());
        let mut by_id = HashMap::with_capacity(items.len());
        for (i, e) in items.iter().enumerate() {
            if e.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "embedding {} has dimension {}, corpus uses {dim}",
                    e.model_id,
                    e.vector.len()
                )));
            }
            if e.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("embedding {} is not finite", e.model_id)));
            }
            if by_id.insert(e.model_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate embedding id {}", e.model_id)));
            }
        }
        Ok(Self {
            norms: items.iter().map(|e| norm(&e.vector)).collect(),
            items,
            by_id,
            zero_norm_hits: AtomicUsize::new(0),
        })
    }

    pub fn items(&self) -> &[Embedding] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.items.first().map_or(0, |e| e.vector.len())
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    /// Distances that fell back to 1 because a vector had zero norm.
    pub fn zero_norm_warnings(&self) -> usize {
        self.zero_norm_hits.load(Ordering::Relaxed)
    }

    /// Every other item ranked by cosine distance to `query_id`.
    pub fn rank_all(&self, query_id: &str) -> Result<RankedList> {
        let &q = self
            .by_id
            .get(query_id)
            .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
        let qv = &self.items[q].vector;
        let mut entries: Vec<(String, f64)> = Vec::with_capacity(self.items.len() - 1);
        for (i, e) in self.items.iter().enumerate() {
            if i == q {
                continue;
            }
            let d = cosine_with_norms(qv, &e.vector, self.norms[q], self.norms[i]).unwrap_or_else(|| {
                self.zero_norm_hits.fetch_add(1, Ordering::Relaxed);
                1.0
            });
            entries.push((e.model_id.clone(), d));
        }
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        Ok(RankedList {
            query_id: query_id.to_string(),
            entries,
        })
    }
}

/// Serializes a corpus in the `MVEM` layout.
pub fn write_embeddings<W: Write>(items: &[Embedding], mut w: W) -> Result<()> {
    let dim = items.first().map_or(0, |e| e.vector.len());
    let mut buf = b"MVEM".to_vec();
    buf.extend((items.len() as u32).to_le_bytes());
    buf.extend((dim as u32).to_le_bytes());
    for e in items {
        if e.vector.len() != dim {
            return Err(Error::Shape(format!(
                "embedding {} has a different dimension",
                e.model_id
            )));
        }
        for s in [&e.model_id, &e.label] {
            buf.extend((s.len() as u32).to_le_bytes());
            buf.extend(s.as_bytes());
        }
        for v in &e.vector {
            buf.extend(v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::Format {
        what: "MVEM",
        message: e.to_string(),
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| mvem_error("truncated file"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| mvem_error("non-UTF-8 string"))
    }
}

fn mvem_error(m: &str) -> Error {
    Error::Format {
        what: "MVEM",
        message: m.to_string(),
    }
}

pub fn read_embeddings(bytes: &[u8]) -> Result<Vec<Embedding>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != b"MVEM" {
        return Err(mvem_error("bad magic"));
    }
    let count = c.u32()?;
    let dim = c.u32()?;
    let mut items = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let model_id = c.string()?;
        let label = c.string()?;
        let vector = c
            .take(4 * dim)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        items.push(Embedding::new(model_id, label, vector));
    }
    if c.pos != bytes.len() {
        return Err(mvem_error("trailing bytes"));
    }
    Ok(items)
}

pub fn save_embeddings(items: &[Embedding], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_embeddings(items, &mut buf)?;
    fs::write(path, buf).at(path)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    read_embeddings(&fs::read(path).at(path)?)
}

/// Writes `query_id,rank,item_id,distance` rows, ranks counted from 1.
pub fn write_ranked_csv<W: Write>(lists: &[RankedList], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["query_id", "rank", "item_id", "distance"])?;
    for l in lists {
        for (r, (id, d)) in l.entries.iter().enumerate() {
            out.write_record([l.query_id.as_str(), &(r + 1).to_string(), id, &d.to_string()])?;
        }
    }
    out.flush().map_err(|e| Error::Format {
        what: "ranked list CSV",
        message: e.to_string(),
    })
}
