//! Demonstration datasets: episodes of `(state, action)` pairs, stored as
//! JSON Lines with a sidecar metadata file.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    state_dim: usize,
    action_dim: usize,
    episodes: Vec<Vec<Pair>>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    ep: usize,
    t: usize,
    s: Vec<f64>,
    a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub state_dim: usize,
    pub action_dim: usize,
    pub n_episodes: usize,
    pub n_pairs: usize,
    /// Generator name, seed and generator configuration.
    pub provenance: serde_json::Value,
}

/// `demos.jsonl` → `demos.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            episodes: Vec::new(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn episodes(&self) -> &[Vec<Pair>] {
        &self.episodes
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn len(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> impl Iterator<Item = &Pair> {
        self.episodes.iter().flatten()
    }

    pub fn push_episode(&mut self, episode: Vec<Pair>) -> Result<()> {
        if episode.is_empty() {
            return Err(Error::Invalid("empty episode".into()));
        }
        for p in &episode {
            if p.s.len() != self.state_dim || p.a.len() != self.action_dim {
                return Err(Error::Invalid(format!(
                    "pair dims ({}, {}) differ from dataset dims ({}, {})",
                    p.s.len(),
                    p.a.len(),
                    self.state_dim,
                    self.action_dim
                )));
            }
            if p.s.iter().chain(&p.a).any(|v| !v.is_finite()) {
                return Err(Error::Invalid("non-finite value in pair".into()));
            }
        }
        self.episodes.push(episode);
        Ok(())
    }

    /// Each action replaced by the concatenation of the next `horizon`
    /// actions of its episode, the last action repeated past the end.
    pub fn chunked(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Invalid("chunk horizon must be positive".into()));
        }
        let mut out = Self::new(self.state_dim, self.action_dim * horizon);
        for ep in &self.episodes {
            let chunked = (0..ep.len())
                .map(|t| Pair {
                    s: ep[t].s.clone(),
                    a: (t..t + horizon)
                        .flat_map(|k| ep[k.min(ep.len() - 1)].a.iter().copied())
                        .collect(),
                })
                .collect();
            out.push_episode(chunked)?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes.is_empty() {
            return Err(Error::Invalid("dataset has no episodes".into()));
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path, provenance: serde_json::Value) -> Result<()> {
        self.validate()?;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut out = BufWriter::new(File::create(path)?);
        for (ep, episode) in self.episodes.iter().enumerate() {
            for (t, p) in episode.iter().enumerate() {
                let line = Line {
                    ep,
                    t,
                    s: p.s.clone(),
                    a: p.a.clone(),
                };
                serde_json::to_writer(&mut out, &line).map_err(|e| Error::Format(e.to_string()))?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()?;
        let meta = DatasetMeta {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            n_episodes: self.n_episodes(),
            n_pairs: self.len(),
            provenance,
        };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(sidecar_path(path), json + "\n")?;
        Ok(())
    }

    /// Reads a JSONL dataset; dims come from the sidecar when present, else
    /// from the first line.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let meta: Option<DatasetMeta> = match fs::read_to_string(sidecar_path(path)) {
            Ok(text) => Some(serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let reader = BufReader::new(File::open(path)?);
        let mut data: Option<Dataset> = meta.as_ref().map(|m| Dataset::new(m.state_dim, m.action_dim));
        let mut current: Vec<Pair> = Vec::new();
        let mut current_ep = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            let ds = data.get_or_insert_with(|| Dataset::new(rec.s.len(), rec.a.len()));
            if rec.ep != current_ep {
                if rec.ep != current_ep + 1 || current.is_empty() {
                    return Err(Error::Format(format!(
                        "line {}: episode index {} does not follow {}",
                        lineno + 1,
                        rec.ep,
                        current_ep
                    )));
                }
                ds.push_episode(std::mem::take(&mut current))?;
                current_ep = rec.ep;
            }
            if rec.t != current.len() {
                return Err(Error::Format(format!(
                    "line {}: step index {} where {} was expected",
                    lineno + 1,
                    rec.t,
                    current.len()
                )));
            }
            current.push(Pair { s: rec.s, a: rec.a });
        }
        let mut ds = data.ok_or_else(|| Error::Format("empty dataset file".into()))?;
        if !current.is_empty() {
            ds.push_episode(current)?;
        }
        ds.validate()?;
        if let Some(m) = meta {
            if m.n_pairs != ds.len() || m.n_episodes != ds.n_episodes() {
                return Err(Error::Format(format!(
                    "sidecar records {} pairs in {} episodes, file has {} in {}",
                    m.n_pairs,
                    m.n_episodes,
                    ds.len(),
                    ds.n_episodes()
                )));
            }
        }
        Ok(ds)
    }
}
