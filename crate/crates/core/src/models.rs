//! Interfaces for the scene embedder and the zero-shot condition classifier,
//! deterministic stand-ins for both, and a length-prefixed stdio adapter for
//! delegating to an external inference process.

use crate::frame::Frame;
use crate::imaging::{lab_stats, to_lab, Raster};
use crate::sed::normalize;
use crate::wem::{rule_scores, Condition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("prompt file line {line}: {reason}")]
    Prompt { line: usize, reason: String },
    #[error("inference process: {0}")]
    Io(#[from] std::io::Error),
    #[error("inference protocol: {0}")]
    Protocol(String),
}

/// Maps a frame to a unit-norm embedding.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, raster: &Raster) -> Result<Vec<f64>, ModelError>;
}

/// Scores a frame against text prompts; higher means more likely.
pub trait ZeroShotClassifier: Send + Sync {
    fn classify_prompts(&self, frame: &Frame, prompts: &[Prompt]) -> Result<Vec<f64>, ModelError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub label: Condition,
    pub text: String,
}

pub fn default_prompts() -> Vec<Prompt> {
    [
        (Condition::Rain, "a photo taken in heavy rain"),
        (Condition::Fog, "a photo taken in dense fog"),
        (Condition::Sand, "a photo taken in a sandstorm"),
        (Condition::Snow, "a photo taken in falling snow"),
        (Condition::Clear, "a photo taken in clear weather"),
    ]
    .into_iter()
    .map(|(label, text)| Prompt {
        label,
        text: text.into(),
    })
    .collect()
}

/// Parses `label: prompt text` lines; blank lines and `#` comments are skipped.
pub fn parse_prompts(reader: impl BufRead) -> Result<Vec<Prompt>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, text) = line.split_once(':').ok_or_else(|| ModelError::Prompt {
            line: i + 1,
            reason: "expected `label: prompt`".into(),
        })?;
        let label = label.parse().map_err(|e: crate::wem::UnknownCondition| ModelError::Prompt {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(Prompt {
            label,
            text: text.trim().to_string(),
        });
    }
    Ok(out)
}

/// Label of the highest-scoring prompt; first wins on ties.
pub fn top_label(prompts: &[Prompt], scores: &[f64]) -> Option<Condition> {
    prompts
        .iter()
        .zip(scores)
        .fold(None::<(Condition, f64)>, |acc, (p, &s)| match acc {
            Some((_, best)) if best >= s => acc,
            _ => Some((p.label, s)),
        })
        .map(|(l, _)| l)
}

const GRID: usize = 4;

/// Deterministic embedder: coarse LAB layout plus global statistics,
/// randomly projected with a seeded matrix and normalized.
pub struct ProjectionEmbedder {
    dim: usize,
    projection: Vec<f64>,
}

impl ProjectionEmbedder {
    const FEATURES: usize = GRID * GRID * 3 + 5;

    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..dim * Self::FEATURES)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self { dim, projection }
    }

    fn features(raster: &Raster) -> Vec<f64> {
        let rgb = raster.to_rgb();
        let mut f = vec![0.0; Self::FEATURES];
        let (w, h) = (rgb.width().max(1), rgb.height().max(1));
        if let Ok(lab) = to_lab(&rgb) {
            let mut counts = [0usize; GRID * GRID];
            for y in 0..lab.height() {
                for x in 0..lab.width() {
                    let cell = (y * GRID / h) * GRID + x * GRID / w;
                    counts[cell] += 1;
                    for c in 0..3 {
                        f[cell * 3 + c] += lab.get(x, y, c) as f64;
                    }
                }
            }
            for (cell, &n) in counts.iter().enumerate() {
                for c in 0..3 {
                    f[cell * 3 + c] /= n.max(1) as f64 * 255.0;
                }
            }
        }
        if let Ok(s) = lab_stats(&rgb) {
            let base = GRID * GRID * 3;
            f[base] = s.mu_l / 255.0;
            f[base + 1] = s.sigma_l / 128.0;
            f[base + 2] = s.mu_s / 255.0;
            f[base + 3] = s.rho_e;
            f[base + 4] = (s.r_v / 10.0).min(1.0);
        }
        f
    }
}

impl Embedder for ProjectionEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, raster: &Raster) -> Result<Vec<f64>, ModelError> {
        let f = Self::features(raster);
        let v: Vec<f64> = self
            .projection
            .chunks_exact(Self::FEATURES)
            .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum())
            .collect();
        let v = normalize(v);
        if v.iter().all(|&x| x == 0.0) {
            let mut e = vec![0.0; self.dim];
            e[0] = 1.0;
            return Ok(e);
        }
        Ok(v)
    }
}

/// Zero-shot stand-in: trusts the frame's known condition when present and
/// otherwise scores prompts by the heuristic rule margins.
#[derive(Default)]
pub struct ProxyZeroShot;

impl ZeroShotClassifier for ProxyZeroShot {
    fn classify_prompts(&self, frame: &Frame, prompts: &[Prompt]) -> Result<Vec<f64>, ModelError> {
        if let Some(c) = frame.truth.as_ref().and_then(|t| t.condition) {
            return Ok(prompts
                .iter()
                .map(|p| if p.label == c { 1.0 } else { 0.0 })
                .collect());
        }
        let stats = lab_stats(&frame.raster).map_err(|e| ModelError::Protocol(e.to_string()))?;
        let rules = rule_scores(&stats);
        let best = rules.iter().map(|r| r.1).fold(0.0, f64::max);
        Ok(prompts
            .iter()
            .map(|p| match p.label {
                Condition::Clear => 1.0 - best,
                label => rules.iter().find(|r| r.0 == label).map_or(0.0, |r| r.1),
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Embed {
        width: usize,
        height: usize,
        channels: usize,
    },
    Classify {
        width: usize,
        height: usize,
        channels: usize,
        prompts: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub scores: Option<Vec<f64>>,
    #[serde(default)]
    pub error: Option<String>,
}

fn write_frame(w: &mut impl Write, payload: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "payload too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)
}

fn read_frame(r: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Writes a JSON request message followed by a pixel message.
pub fn write_request(w: &mut impl Write, req: &Request, pixels: &[u8]) -> Result<(), ModelError> {
    let json = serde_json::to_vec(req).map_err(|e| ModelError::Protocol(e.to_string()))?;
    write_frame(w, &json)?;
    write_frame(w, pixels)?;
    w.flush()?;
    Ok(())
}

pub fn read_request(r: &mut impl Read) -> Result<(Request, Vec<u8>), ModelError> {
    let json = read_frame(r)?;
    let req = serde_json::from_slice(&json).map_err(|e| ModelError::Protocol(e.to_string()))?;
    Ok((req, read_frame(r)?))
}

pub fn write_response(w: &mut impl Write, resp: &Response) -> Result<(), ModelError> {
    let json = serde_json::to_vec(resp).map_err(|e| ModelError::Protocol(e.to_string()))?;
    write_frame(w, &json)?;
    w.flush()?;
    Ok(())
}

pub fn read_response(r: &mut impl Read) -> Result<Response, ModelError> {
    let json = read_frame(r)?;
    let resp: Response =
        serde_json::from_slice(&json).map_err(|e| ModelError::Protocol(e.to_string()))?;
    if let Some(err) = &resp.error {
        return Err(ModelError::Protocol(err.clone()));
    }
    Ok(resp)
}

struct Pipe {
    _child: Child,
    stdin: ChildStdin,
    stdout: ChildStdout,
}

/// Embedder and classifier backed by a child process speaking the
/// length-prefixed protocol on stdin/stdout.
pub struct ExternalModel {
    dim: usize,
    pipe: Mutex<Pipe>,
}

impl ExternalModel {
    pub fn spawn(program: &str, args: &[String], dim: usize) -> Result<Self, ModelError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            dim,
            pipe: Mutex::new(Pipe {
                _child: child,
                stdin,
                stdout,
            }),
        })
    }

    fn call(&self, req: &Request, raster: &Raster) -> Result<Response, ModelError> {
        let mut pipe = self.pipe.lock().expect("model pipe poisoned");
        let pipe = &mut *pipe;
        write_request(&mut pipe.stdin, req, raster.data())?;
        read_response(&mut pipe.stdout)
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Ok(mut p) = self.pipe.lock() {
            let _ = p._child.kill();
            let _ = p._child.wait();
        }
    }
}

impl Embedder for ExternalModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, raster: &Raster) -> Result<Vec<f64>, ModelError> {
        let req = Request::Embed {
            width: raster.width(),
            height: raster.height(),
            channels: raster.channels(),
        };
        let v = self
            .call(&req, raster)?
            .embedding
            .ok_or_else(|| ModelError::Protocol("response lacks embedding".into()))?;
        if v.len() != self.dim {
            return Err(ModelError::Protocol(format!(
                "embedding dimension {} != {}",
                v.len(),
                self.dim
            )));
        }
        Ok(normalize(v))
    }
}

impl ZeroShotClassifier for ExternalModel {
    fn classify_prompts(&self, frame: &Frame, prompts: &[Prompt]) -> Result<Vec<f64>, ModelError> {
        let r = &frame.raster;
        let req = Request::Classify {
            width: r.width(),
            height: r.height(),
            channels: r.channels(),
            prompts: prompts.iter().map(|p| p.text.clone()).collect(),
        };
        let scores = self
            .call(&req, r)?
            .scores
            .ok_or_else(|| ModelError::Protocol("response lacks scores".into()))?;
        if scores.len() != prompts.len() {
            return Err(ModelError::Protocol("score count mismatch".into()));
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FrameTruth;
    use crate::sed::l2_norm;

    #[test]
    fn prompts_parse() {
        let text = "# comment\nfog: a foggy road\n\nhaze: dusty air\n";
        let p = parse_prompts(text.as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].label, Condition::Sand);
        assert_eq!(p[0].text, "a foggy road");
        assert!(parse_prompts("no colon here".as_bytes()).is_err());
        assert!(parse_prompts("hail: ice".as_bytes()).is_err());
    }

    #[test]
    fn projection_embedder_is_unit_and_deterministic() {
        let r = Raster::from_fn_rgb(24, 16, |x, y| [(x * 9) as u8, (y * 13) as u8, 77]);
        let e = ProjectionEmbedder::new(32, 7);
        let a = e.embed(&r).unwrap();
        assert_eq!(a.len(), 32);
        assert!((l2_norm(&a) - 1.0).abs() < 1e-9);
        assert_eq!(a, ProjectionEmbedder::new(32, 7).embed(&r).unwrap());
        let black = e.embed(&Raster::filled(8, 8, 3, 0)).unwrap();
        assert!((l2_norm(&black) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn proxy_uses_known_condition() {
        let f = Frame::new(Raster::filled(8, 8, 3, 100), 0, 0.0).with_truth(FrameTruth {
            condition: Some(Condition::Snow),
            ..Default::default()
        });
        let prompts = default_prompts();
        let scores = ProxyZeroShot.classify_prompts(&f, &prompts).unwrap();
        assert_eq!(top_label(&prompts, &scores), Some(Condition::Snow));
    }

    #[test]
    fn protocol_round_trip() {
        let req = Request::Classify {
            width: 2,
            height: 1,
            channels: 3,
            prompts: vec!["fog".into()],
        };
        let mut buf = Vec::new();
        write_request(&mut buf, &req, &[1, 2, 3, 4, 5, 6]).unwrap();
        let (back, px) = read_request(&mut buf.as_slice()).unwrap();
        assert_eq!(back, req);
        assert_eq!(px, vec![1, 2, 3, 4, 5, 6]);

        let resp = Response {
            embedding: None,
            scores: Some(vec![0.25]),
            error: None,
        };
        let mut buf = Vec::new();
        write_response(&mut buf, &resp).unwrap();
        assert_eq!(read_response(&mut buf.as_slice()).unwrap(), resp);

        let mut buf = Vec::new();
        write_response(
            &mut buf,
            &Response {
                embedding: None,
                scores: None,
                error: Some("boom".into()),
            },
        )
        .unwrap();
        assert!(read_response(&mut buf.as_slice()).is_err());
    }
}
