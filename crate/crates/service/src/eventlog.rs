//! Append-only commit log plus snapshots.
//!
//! Each line of `events.jsonl` is one commit: a sequence number, a
//! timestamp and the events written together. A commit is the unit of
//! atomicity, so a crash can only lose the commit being written. A final
//! line without its newline is such a torn write; it is dropped and cut
//! from the file on open. Any other unreadable line is corruption.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::state::{Event, State};

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub events: Vec<Event>,
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    fsync: bool,
}

impl EventLog {
    /// Opens or creates the log in `dir` and returns all intact commits.
    pub fn open(dir: &Path, fsync: bool) -> Result<(Self, Vec<Commit>)> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;

        let mut commits = Vec::new();
        let mut good_len = 0usize;
        let mut offset = 0usize;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            offset += line.len();
            let Some(body) = line.strip_suffix('\n') else {
                break;
            };
            if body.trim().is_empty() {
                good_len = offset;
                continue;
            }
            let commit: Commit = serde_json::from_str(body).map_err(|e| ServiceError::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            })?;
            let expected = commits.last().map_or(commit.seq, |c: &Commit| c.seq + 1);
            if commit.seq != expected {
                return Err(ServiceError::CorruptLog {
                    line: i + 1,
                    message: format!("sequence {} follows {}", commit.seq, expected - 1),
                });
            }
            commits.push(commit);
            good_len = offset;
        }
        if good_len < text.len() {
            file.set_len(good_len as u64)?;
            file.sync_data()?;
        }
        Ok((Self { path, file, fsync }, commits))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, commit: &Commit) -> Result<()> {
        let mut line = serde_json::to_string(commit).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotFile {
    state: State,
}

pub fn load_snapshot(dir: &Path) -> Result<Option<State>> {
    let path = dir.join(SNAPSHOT_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => {
            let snap: SnapshotFile = serde_json::from_str(&text).map_err(|e| ServiceError::CorruptLog {
                line: 0,
                message: format!("snapshot: {e}"),
            })?;
            Ok(Some(snap.state))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Writes the snapshot beside the log, replacing any previous one atomically.
pub fn write_snapshot(dir: &Path, state: &State) -> Result<()> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let body = serde_json::to_vec(&SnapshotFile { state: state.clone() }).expect("state serializes");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&body)?;
        f.sync_data()?;
    }
    fs::rename(tmp, dir.join(SNAPSHOT_FILE))?;
    Ok(())
}
