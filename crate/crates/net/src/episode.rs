//! Episode records: one full sequence of 68-wide frames plus condition
//! metadata, and (for closed-loop rollouts) the per-step attention vectors
//! and slow-context states.
//!
//! On disk an episode is JSON-lines: the first line is the metadata object,
//! each following line one step record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::frame::{FeedbackRates, IO_WIDTH};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Fresh data T(t): the 68-wide normalized sensorimotor vector.
    pub target: Vec<f64>,
    /// Mixed network input x(t) (rollouts only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<f64>>,
    /// Network output y(t) over all IO dims (rollouts only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Vec<f64>>,
    /// Attention vector A(t) (rollouts only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<f64>>,
    /// Slow-context internal values u_cs(t) (rollouts only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cs_state: Option<Vec<f64>>,
    /// Denormalized motor command sent to the environment (rollouts only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motor_cmd_denorm: Option<Vec<f64>>,
    /// Environment diagnostics (mean doneness, occlusion fraction, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, f64>,
}

impl StepRecord {
    pub fn new(t: usize, target: Vec<f64>) -> Self {
        StepRecord {
            t,
            target,
            input: None,
            output: None,
            attention: None,
            cs_state: None,
            motor_cmd_denorm: None,
            env: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub profile: String,
    pub heat: String,
    pub trial: u32,
    pub seed: u64,
    pub steps: usize,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halt_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackRates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub steps: Vec<StepRecord>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for rec in &self.steps {
            if rec.target.len() != IO_WIDTH {
                return Err(NetError::shape(
                    format!("episode step {} target", rec.t),
                    IO_WIDTH,
                    rec.target.len(),
                ));
            }
        }
        Ok(())
    }

    /// Sequence of T(t) rows.
    pub fn targets(&self) -> Vec<&[f64]> {
        self.steps.iter().map(|s| s.target.as_slice()).collect()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        for rec in &self.steps {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Episode> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let meta_line = lines
            .next()
            .ok_or_else(|| NetError::MissingRecords(format!("{path:?} is empty")))??;
        let meta: EpisodeMeta = serde_json::from_str(&meta_line)?;
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            steps.push(serde_json::from_str(&line)?);
        }
        let ep = Episode { meta, steps };
        ep.validate()?;
        Ok(ep)
    }
}

pub type Dataset = Vec<Episode>;

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_episode() -> Episode {
        let steps = (0..5)
            .map(|t| {
                let mut rec = StepRecord::new(t, vec![0.01 * t as f64; IO_WIDTH]);
                rec.env.insert("mean_doneness".into(), 0.1 * t as f64);
                rec
            })
            .collect();
        Episode {
            meta: EpisodeMeta {
                profile: "plain".into(),
                heat: "190".into(),
                trial: 0,
                seed: 7,
                steps: 5,
                completed: true,
                halt_reason: None,
                feedback: Some(FeedbackRates::training()),
                gate: Some("literal".into()),
            },
            steps,
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep.jsonl");
        let ep = sample_episode();
        ep.save_jsonl(&path).unwrap();
        let back = Episode::load_jsonl(&path).unwrap();
        assert_eq!(back.meta.profile, "plain");
        assert_eq!(back.len(), 5);
        for (a, b) in back.steps.iter().zip(ep.steps.iter()) {
            assert_eq!(a.target, b.target);
            assert_eq!(a.env, b.env);
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let ep = sample_episode();
        ep.save_jsonl(&p1).unwrap();
        ep.save_jsonl(&p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn validate_rejects_wrong_width() {
        let mut ep = sample_episode();
        ep.steps[2].target.pop();
        assert!(ep.validate().is_err());
    }
}
