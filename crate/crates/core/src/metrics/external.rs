//! Adapter contract for learned metrics scored outside this process.
//!
//! Requests are JSON lines, one per instance:
//! `{"version": "1", "timeout_ms": 30000, "id": "...", "hypothesis": "...", "references": ["..."]}`.
//! The scorer answers with one JSON line per request:
//! `{"version": "1", "id": "...", "score": 0.42}`. Scores are not clamped;
//! any count, id, version or finiteness mismatch makes the metric
//! unavailable.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::MetricResult;

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub metric_name: String,
    /// Program and arguments of the scorer process.
    pub command: Vec<String>,
    pub timeout_ms: u64,
    #[serde(default = "default_version")]
    pub version: String,
}

fn default_version() -> String {
    PROTOCOL_VERSION.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub version: String,
    pub timeout_ms: u64,
    pub id: String,
    pub hypothesis: String,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub version: String,
    pub id: String,
    pub score: f64,
}

/// Something that can score a batch of requests.
pub trait ExternalScorer {
    fn score_batch(&self, config: &AdapterConfig, requests: &[ExternalRequest]) -> Result<Vec<ExternalResponse>>;
}

/// Runs the configured command, writes requests to its stdin and reads
/// responses from its stdout. The process is killed on timeout.
#[derive(Debug, Default, Clone, Copy)]
pub struct ProcessScorer;

impl ExternalScorer for ProcessScorer {
    fn score_batch(&self, config: &AdapterConfig, requests: &[ExternalRequest]) -> Result<Vec<ExternalResponse>> {
        let unavailable = |m: String| Error::MetricUnavailable(format!("{}: {m}", config.metric_name));
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| unavailable("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| unavailable(format!("spawn failed: {e}")))?;

        let mut payload = String::new();
        for r in requests {
            payload.push_str(&serde_json::to_string(r).expect("request serializes"));
            payload.push('\n');
        }
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(payload.as_bytes());
        });
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let lines: std::io::Result<Vec<String>> = BufReader::new(stdout).lines().collect();
            let _ = tx.send(lines);
        });

        let received = rx.recv_timeout(Duration::from_millis(config.timeout_ms));
        let lines = match received {
            Ok(Ok(lines)) => lines,
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(unavailable(format!("read failed: {e}")));
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(unavailable(format!("timed out after {} ms", config.timeout_ms)));
            }
        };
        let _ = writer.join();
        let _ = child.wait();

        lines
            .iter()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| unavailable(format!("bad response line: {e}"))))
            .collect()
    }
}

/// Scores `hypotheses` with an external scorer and validates the answer.
pub fn external_metric(
    scorer: &dyn ExternalScorer,
    config: &AdapterConfig,
    ids: &[String],
    hypotheses: &[String],
    references: &[Vec<String>],
) -> Result<MetricResult> {
    if ids.len() != hypotheses.len() || hypotheses.len() != references.len() {
        return Err(Error::domain("ids, hypotheses and references differ in length"));
    }
    let requests: Vec<ExternalRequest> = ids
        .iter()
        .zip(hypotheses)
        .zip(references)
        .map(|((id, h), r)| ExternalRequest {
            version: config.version.clone(),
            timeout_ms: config.timeout_ms,
            id: id.clone(),
            hypothesis: h.clone(),
            references: r.clone(),
        })
        .collect();
    let unavailable = |m: String| Error::MetricUnavailable(format!("{}: {m}", config.metric_name));
    let responses = scorer.score_batch(config, &requests)?;
    if responses.len() != requests.len() {
        return Err(unavailable(format!(
            "expected {} scores, got {}",
            requests.len(),
            responses.len()
        )));
    }
    let mut scores = Vec::with_capacity(responses.len());
    for (req, resp) in requests.iter().zip(&responses) {
        if resp.version != config.version {
            return Err(unavailable(format!("protocol version {:?}", resp.version)));
        }
        if resp.id != req.id {
            return Err(unavailable(format!("expected id {:?}, got {:?}", req.id, resp.id)));
        }
        if !resp.score.is_finite() {
            return Err(unavailable(format!("non-finite score for {}", resp.id)));
        }
        scores.push(resp.score);
    }
    let corpus = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    Ok(MetricResult {
        metric_name: config.metric_name.clone(),
        corpus_score: corpus,
        per_instance_scores: scores,
        config_fingerprint: format!("external|{}|v{}", config.command.join(" "), config.version),
    })
}
