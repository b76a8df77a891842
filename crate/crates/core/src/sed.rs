//! Scene-embedding database: exact cosine k-NN over unit vectors, the
//! quality-weighted filter recommendation, and an append-only on-disk log.
//!
//! File layout: a 64-byte ASCII header (`SED1 dim=<D> count=<N>`, space
//! padded, newline terminated) followed by fixed-width little-endian records
//! of `condition: u8, delta_f1: f64, params: [f64; 10], embedding: [f64; D]`.
//! A trailing partial record left by an interrupted append is ignored.

use crate::cape::FilterConfig;
use crate::wem::Condition;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 2048;
pub const DEFAULT_K: usize = 5;
const NORM_TOLERANCE: f64 = 1e-6;
const HEADER_LEN: usize = 64;
const PARAM_FIELDS: usize = 10;

#[derive(Debug, Error)]
pub enum SedError {
    #[error("embedding has dimension {got}, database expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding norm {norm} is not 1 within {NORM_TOLERANCE}")]
    NotNormalized { norm: f64 },
    #[error("bad database header: {0}")]
    Header(String),
    #[error("unknown condition code {0} in record {1}")]
    Record(u8, usize),
    #[error("database io: {0}")]
    Io(#[from] std::io::Error),
}

/// Zero-shot result and filter recommendation shared from the analytics
/// thread to the quality thread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub clip_label: Condition,
    pub clip_scores: Vec<(Condition, f64)>,
    pub recommendation: Option<FilterConfig>,
    pub version: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SedEntry {
    pub embedding: Vec<f64>,
    pub condition: Condition,
    pub filter_params: FilterConfig,
    /// Quality signal: per-image F1 gain, or mean confidence gain without GT.
    pub delta_f1: f64,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit length; a zero vector is returned unchanged.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Similarity weighted by quality gain: `sim * exp(2 * delta_f1)`.
pub fn recommendation_score(sim: f64, delta_f1: f64) -> f64 {
    sim * (2.0 * delta_f1).exp()
}

#[derive(Debug)]
pub struct SedDb {
    dim: usize,
    entries: Vec<SedEntry>,
    file: Option<(PathBuf, File)>,
}

impl SedDb {
    /// In-memory database.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            file: None,
        }
    }

    /// Opens (or creates) a persisted database.
    pub fn open(path: impl AsRef<Path>, dim: usize) -> Result<Self, SedError> {
        let path = path.as_ref();
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            let (file_dim, entries, valid_len) = read_log(path)?;
            if file_dim != dim {
                return Err(SedError::Dimension {
                    expected: dim,
                    got: file_dim,
                });
            }
            let mut file = OpenOptions::new().read(true).write(true).open(path)?;
            file.set_len(valid_len)?;
            let mut db = Self {
                dim,
                entries,
                file: None,
            };
            write_header(&mut file, dim, db.entries.len())?;
            db.file = Some((path.to_path_buf(), file));
            return Ok(db);
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        write_header(&mut file, dim, 0)?;
        Ok(Self {
            dim,
            entries: Vec::new(),
            file: Some((path.to_path_buf(), file)),
        })
    }

    /// Reads a persisted database without opening it for writing.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SedError> {
        let (dim, entries, _) = read_log(path.as_ref())?;
        Ok(Self {
            dim,
            entries,
            file: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SedEntry] {
        &self.entries
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    fn check_query(&self, v: &[f64]) -> Result<(), SedError> {
        if v.len() != self.dim {
            return Err(SedError::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        let norm = l2_norm(v);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(SedError::NotNormalized { norm });
        }
        Ok(())
    }

    /// Appends an entry, persisting it first when the database is file-backed.
    pub fn append(&mut self, entry: SedEntry) -> Result<(), SedError> {
        self.check_query(&entry.embedding)?;
        if let Some((_, file)) = self.file.as_mut() {
            file.seek(SeekFrom::End(0))?;
            file.write_all(&encode_record(&entry))?;
            write_header(file, self.dim, self.entries.len() + 1)?;
            file.flush()?;
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Top-`k` entries by cosine similarity, descending; ties keep insertion order.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<(&SedEntry, f64)>, SedError> {
        self.check_query(query)?;
        let mut scored: Vec<(&SedEntry, f64)> = self
            .entries
            .iter()
            .map(|e| (e, dot(&e.embedding, query)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored)
    }

    /// Filter parameters of the best positively-rated neighbour, with its score.
    pub fn recommend(&self, query: &[f64]) -> Result<Option<(FilterConfig, f64)>, SedError> {
        let best = self
            .knn(query, DEFAULT_K)?
            .into_iter()
            .filter(|(e, _)| e.delta_f1 > 0.0)
            .map(|(e, sim)| (e, recommendation_score(sim, e.delta_f1)))
            .fold(None::<(&SedEntry, f64)>, |acc, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        Ok(best.map(|(e, score)| (e.filter_params.clone(), score)))
    }
}

fn record_len(dim: usize) -> usize {
    1 + 8 + 8 * PARAM_FIELDS + 8 * dim
}

fn write_header(file: &mut File, dim: usize, count: usize) -> std::io::Result<()> {
    let mut text = format!("SED1 dim={dim} count={count}");
    text.truncate(HEADER_LEN - 1);
    let mut bytes = text.into_bytes();
    bytes.resize(HEADER_LEN - 1, b' ');
    bytes.push(b'\n');
    file.seek(SeekFrom::Start(0))?;
    file.write_all(&bytes)
}

fn encode_record(e: &SedEntry) -> Vec<u8> {
    let mut out = Vec::with_capacity(record_len(e.embedding.len()));
    out.push(e.condition.code());
    out.extend_from_slice(&e.delta_f1.to_le_bytes());
    for v in e.filter_params.numeric_fields() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &e.embedding {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f64_at(buf: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(buf[off..off + 8].try_into().expect("8 bytes"))
}

fn parse_header(raw: &[u8]) -> Result<(usize, usize), SedError> {
    let text = std::str::from_utf8(raw).map_err(|e| SedError::Header(e.to_string()))?;
    let mut fields = text.split_whitespace();
    if fields.next() != Some("SED1") {
        return Err(SedError::Header("missing SED1 magic".into()));
    }
    let mut get = |name: &str| -> Result<usize, SedError> {
        fields
            .next()
            .and_then(|f| f.strip_prefix(name))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| SedError::Header(format!("missing {name}")))
    };
    let dim = get("dim=")?;
    let count = get("count=")?;
    Ok((dim, count))
}

/// Returns (dim, entries, byte length of the intact prefix).
fn read_log(path: &Path) -> Result<(usize, Vec<SedEntry>, u64), SedError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < HEADER_LEN {
        return Err(SedError::Header("file shorter than header".into()));
    }
    let (dim, _count) = parse_header(&buf[..HEADER_LEN])?;
    let rec = record_len(dim);
    let complete = (buf.len() - HEADER_LEN) / rec;
    let mut entries = Vec::with_capacity(complete);
    for i in 0..complete {
        let r = &buf[HEADER_LEN + i * rec..HEADER_LEN + (i + 1) * rec];
        let condition = Condition::from_code(r[0]).ok_or(SedError::Record(r[0], i))?;
        let delta_f1 = f64_at(r, 1);
        let mut params = [0.0; PARAM_FIELDS];
        for (j, p) in params.iter_mut().enumerate() {
            *p = f64_at(r, 9 + 8 * j);
        }
        let base = 9 + 8 * PARAM_FIELDS;
        let embedding = (0..dim).map(|j| f64_at(r, base + 8 * j)).collect();
        entries.push(SedEntry {
            embedding,
            condition,
            filter_params: FilterConfig::from_numeric_fields(params),
            delta_f1,
        });
    }
    let valid = (HEADER_LEN + complete * rec) as u64;
    Ok((dim, entries, valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    fn entry(embedding: Vec<f64>, delta_f1: f64) -> SedEntry {
        SedEntry {
            embedding,
            condition: Condition::Fog,
            filter_params: FilterConfig::default(),
            delta_f1,
        }
    }

    #[test]
    fn knn_self_and_orthogonal() {
        let mut db = SedDb::new(4);
        db.append(entry(unit(4, 0), 0.1)).unwrap();
        db.append(entry(unit(4, 1), 0.1)).unwrap();
        let hits = db.knn(&unit(4, 0), 5).unwrap();
        assert_eq!(hits[0].1, 1.0);
        assert_eq!(hits[1].1, 0.0);
        assert!(SedDb::new(4).knn(&unit(4, 2), 5).unwrap().is_empty());
    }

    #[test]
    fn rejects_unnormalized() {
        let mut db = SedDb::new(3);
        assert!(matches!(
            db.append(entry(vec![1.0, 1.0, 0.0], 0.0)),
            Err(SedError::NotNormalized { .. })
        ));
        assert!(matches!(
            db.append(entry(vec![1.0, 0.0], 0.0)),
            Err(SedError::Dimension { .. })
        ));
    }

    #[test]
    fn recommend_needs_positive_gain() {
        let mut db = SedDb::new(2);
        db.append(entry(unit(2, 0), 0.0)).unwrap();
        db.append(entry(unit(2, 0), -0.2)).unwrap();
        assert_eq!(db.recommend(&unit(2, 0)).unwrap(), None);
    }

    #[test]
    fn quality_gain_can_outrank_similarity() {
        assert!((recommendation_score(0.8, 0.1) - 0.8 * 0.2f64.exp()).abs() < 1e-12);
        let mut db = SedDb::new(2);
        let near = normalize(vec![0.95, (1.0f64 - 0.95 * 0.95).sqrt()]);
        let far = normalize(vec![0.8, 0.6]);
        let mut a = entry(near, 0.001);
        a.filter_params.fog.dcp_kernel = 9;
        let mut b = entry(far, 0.1);
        b.filter_params.fog.dcp_kernel = 11;
        db.append(a).unwrap();
        db.append(b).unwrap();
        let (params, score) = db.recommend(&unit(2, 0)).unwrap().unwrap();
        assert_eq!(params.fog.dcp_kernel, 11);
        assert!((score - 0.9771).abs() < 1e-4);
    }

    #[test]
    fn persistence_round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sed.bin");
        {
            let mut db = SedDb::open(&path, 3).unwrap();
            db.append(entry(unit(3, 0), 0.25)).unwrap();
            let mut e = entry(normalize(vec![1.0, 2.0, 2.0]), -0.5);
            e.condition = Condition::Rain;
            db.append(e).unwrap();
        }
        let loaded = SedDb::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.entries()[1].condition, Condition::Rain);
        assert_eq!(loaded.entries()[0].delta_f1, 0.25);

        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[1, 2, 3, 4, 5]).unwrap();
        drop(f);
        let mut reopened = SedDb::open(&path, 3).unwrap();
        assert_eq!(reopened.len(), 2);
        reopened.append(entry(unit(3, 2), 0.1)).unwrap();
        drop(reopened);
        assert_eq!(SedDb::load(&path).unwrap().len(), 3);
    }
}
