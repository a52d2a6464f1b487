//! Dense retrieval: a hashed bag-of-tokens featurizer, a trainable linear
//! encoder, cosine scoring and exhaustive top-n search.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_answer, RetrievalEntry, RetrievalList};
use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("{what} has zero norm and cannot be scored")]
    ZeroNorm { what: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("requested top {n} from a store of {size} documents")]
    TooFewDocuments { n: usize, size: usize },
    #[error("no embedding for id {0}")]
    MissingEmbedding(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

/// Fixed input featurizer: normalized tokens hashed into `buckets` slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub buckets: usize,
}

/// Sparse vector as `(index, value)` pairs, indices strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|e| e.1 != 0.0);
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(&self, other: &SparseVector) -> SparseVector {
        let mut pairs = self.entries.clone();
        pairs.extend_from_slice(&other.entries);
        Self::from_pairs(pairs)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|e| e.0)
    }
}

/// 64-bit FNV-1a followed by the splitmix64 finalizer; stable across
/// platforms and releases.
fn token_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

pub fn token_bucket(token: &str, spec: &FeatureSpec) -> usize {
    (token_hash(token.as_bytes()) % spec.buckets as u64) as usize
}

/// Term counts of the normalized tokens of `text`, hashed into buckets.
pub fn featurize(text: &str, spec: &FeatureSpec) -> SparseVector {
    let pairs = normalize_answer(text)
        .iter()
        .map(|t| (token_bucket(t, spec), 1.0))
        .collect();
    SparseVector::from_pairs(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite {
                what: "embedding".into(),
            });
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// False for the zero vector, which has no direction to compare.
    pub fn is_scorable(&self) -> bool {
        self.norm > 0.0
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self, RetrievalError> {
        Self::new(self.values.iter().map(|v| v * alpha).collect())
    }
}

/// Linear map `weight · features`, weight stored row-major as `dim_out × dim_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dim_in: usize,
    pub dim_out: usize,
    pub weight: Vec<f64>,
}

/// On-disk layout of an encoder checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderFile {
    pub dim_in: usize,
    pub dim_out: usize,
    pub buckets: usize,
    pub weight: Vec<Vec<f64>>,
}

impl EncoderParams {
    pub fn zeros(dim_in: usize, dim_out: usize) -> Self {
        Self {
            dim_in,
            dim_out,
            weight: vec![0.0; dim_in * dim_out],
        }
    }

    /// Gaussian init with standard deviation `1/sqrt(dim_out)`.
    pub fn random(dim_in: usize, dim_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim_out as f64).sqrt()).expect("valid std");
        let weight = (0..dim_in * dim_out).map(|_| normal.sample(&mut rng)).collect();
        Self {
            dim_in,
            dim_out,
            weight,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, RetrievalError> {
        let dim_out = rows.len();
        let dim_in = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim_in) {
            return Err(RetrievalError::Dimension {
                expected: dim_in,
                got: bad.len(),
            });
        }
        let weight: Vec<f64> = rows.into_iter().flatten().collect();
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(RetrievalError::NonFinite {
                what: "encoder weight".into(),
            });
        }
        Ok(Self {
            dim_in,
            dim_out,
            weight,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weight[r * self.dim_in..(r + 1) * self.dim_in]
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            buckets: self.dim_in,
        }
    }

    pub fn to_file(&self) -> EncoderFile {
        EncoderFile {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            buckets: self.dim_in,
            weight: (0..self.dim_out).map(|r| self.row(r).to_vec()).collect(),
        }
    }

    pub fn from_file(file: EncoderFile) -> Result<Self, RetrievalError> {
        if file.buckets != file.dim_in {
            return Err(RetrievalError::Dimension {
                expected: file.dim_in,
                got: file.buckets,
            });
        }
        let params = Self::from_rows(file.weight)?;
        if params.dim_out != file.dim_out || params.dim_in != file.dim_in {
            return Err(RetrievalError::Dimension {
                expected: file.dim_out * file.dim_in,
                got: params.weight.len(),
            });
        }
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path).map_err(|e| RetrievalError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let file: EncoderFile = serde_json::from_str(&text).map_err(|e| RetrievalError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }
}

pub fn encode(features: &SparseVector, params: &EncoderParams) -> Result<EmbeddingVector, RetrievalError> {
    if let Some(max) = features.max_index() {
        if max >= params.dim_in {
            return Err(RetrievalError::Dimension {
                expected: params.dim_in,
                got: max + 1,
            });
        }
    }
    let values = (0..params.dim_out)
        .map(|r| {
            let row = params.row(r);
            features.entries().iter().map(|&(i, v)| row[i] * v).sum()
        })
        .collect();
    EmbeddingVector::new(values)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to [-1, 1]. Zero-norm inputs are an error.
pub fn cosine_score(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    for (v, name) in [(a, "left"), (b, "right")] {
        if !v.is_scorable() {
            return Err(RetrievalError::ZeroNorm {
                what: format!("{name} embedding"),
            });
        }
    }
    Ok((dot(&a.values, &b.values) / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// Exhaustive search: scores every candidate, best first, ties by ascending doc_id.
pub fn top_n(
    query_id: &str,
    query: &EmbeddingVector,
    docs: &[(String, EmbeddingVector)],
    n: usize,
) -> Result<RetrievalList, RetrievalError> {
    if n > docs.len() {
        return Err(RetrievalError::TooFewDocuments {
            n,
            size: docs.len(),
        });
    }
    if !query.is_scorable() {
        return Err(RetrievalError::ZeroNorm {
            what: format!("query {query_id}"),
        });
    }
    let mut scored = docs
        .par_iter()
        .map(|(id, emb)| {
            cosine_score(query, emb)
                .map(|s| (id.as_str(), s))
                .map_err(|e| match e {
                    RetrievalError::ZeroNorm { .. } => RetrievalError::ZeroNorm {
                        what: format!("document {id}"),
                    },
                    other => other,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(n);
    Ok(RetrievalList {
        query_id: query_id.to_string(),
        entries: scored
            .into_iter()
            .map(|(id, score)| RetrievalEntry {
                doc_id: id.to_string(),
                score,
            })
            .collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    values: Vec<f64>,
}

/// Externally computed embeddings for queries and documents.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddingStore {
    vectors: HashMap<String, EmbeddingVector>,
    dim: Option<usize>,
}

impl PrecomputedEmbeddingStore {
    pub fn insert(&mut self, id: impl Into<String>, v: EmbeddingVector) -> Result<(), RetrievalError> {
        match self.dim {
            Some(d) if d != v.dim() => {
                return Err(RetrievalError::Dimension {
                    expected: d,
                    got: v.dim(),
                })
            }
            _ => self.dim = Some(v.dim()),
        }
        self.vectors.insert(id.into(), v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&EmbeddingVector, RetrievalError> {
        self.vectors
            .get(id)
            .ok_or_else(|| RetrievalError::MissingEmbedding(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let mut store = Self::default();
        for (line, row) in jsonl::read::<EmbeddingRow>(path)? {
            let v = EmbeddingVector::new(row.values).map_err(|e| RetrievalError::File {
                path: path.display().to_string(),
                message: format!("line {line}: {e}"),
            })?;
            store.insert(row.id, v)?;
        }
        Ok(store)
    }

    pub fn save<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a EmbeddingVector)>) -> Result<(), RetrievalError> {
        let rows: Vec<EmbeddingRow> = rows
            .into_iter()
            .map(|(id, v)| EmbeddingRow {
                id: id.to_string(),
                values: v.values.clone(),
            })
            .collect();
        jsonl::write(path, &rows)?;
        Ok(())
    }
}
