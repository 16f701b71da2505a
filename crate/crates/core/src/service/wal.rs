//! Append-only NDJSON event log and the recovery fold over it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Response, Trial};
use crate::session::{Session, SessionConfig};

use super::{SessionEnvelope, SessionId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// UTC milliseconds since the epoch.
    pub t: i64,
    pub sid: SessionId,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Create { seed: u64, config: SessionConfig },
    /// An accepted response, persisted before the reply; `step` is the trial it answers.
    Response { step: usize, r: Response },
    /// A trial as issued to clients, in transformed coordinates.
    Trial { step: usize, trial: Trial, mi_bits: Option<f64> },
}

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Durable appender: every record is written as one line and synced.
#[derive(Debug)]
pub struct Wal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Wal {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rec: &Record) -> Result<()> {
        let mut line = serde_json::to_vec(rec)?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }
}

/// Path of the side file receiving a torn tail line.
pub fn quarantine_path(log: &Path) -> PathBuf {
    let mut s = log.as_os_str().to_owned();
    s.push(".quarantine");
    PathBuf::from(s)
}

/// Parse a log without touching it. A torn final line is returned separately;
/// a malformed line anywhere else is an error.
pub fn read_log(path: &Path) -> Result<(Vec<Record>, Option<TornTail>)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut offset = 0u64;
    let mut line = Vec::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            return Ok((records, None));
        }
        lineno += 1;
        let complete = line.ends_with(b"\n");
        let body = line.strip_suffix(b"\n").unwrap_or(&line);
        if body.iter().all(u8::is_ascii_whitespace) && complete {
            offset += n as u64;
            continue;
        }
        match serde_json::from_slice::<Record>(body) {
            Ok(rec) => records.push(rec),
            Err(e) => {
                let at_end = reader.fill_buf()?.is_empty();
                if at_end {
                    return Ok((records, Some(TornTail { offset, bytes: line.clone() })));
                }
                return Err(Error::InvalidState(format!("corrupt log record at line {lineno}: {e}")));
            }
        }
        offset += n as u64;
        if !complete {
            // a parseable record missing only its newline
            return Ok((records, Some(TornTail { offset, bytes: Vec::new() })));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TornTail {
    /// Byte offset where the valid prefix ends.
    pub offset: u64,
    /// The unparseable bytes; empty when only the trailing newline was missing.
    pub bytes: Vec<u8>,
}

/// Read the log, moving a torn tail into the quarantine file and truncating
/// the log to its last complete record.
pub fn load_and_repair(path: &Path) -> Result<Vec<Record>> {
    let (records, torn) = read_log(path)?;
    if let Some(t) = torn {
        if t.bytes.is_empty() {
            OpenOptions::new().append(true).open(path)?.write_all(b"\n")?;
        } else {
            tracing::warn!(offset = t.offset, len = t.bytes.len(), "quarantining torn log tail");
            let mut q = OpenOptions::new().create(true).append(true).open(quarantine_path(path))?;
            q.write_all(&t.bytes)?;
            if !t.bytes.ends_with(b"\n") {
                q.write_all(b"\n")?;
            }
            q.sync_data()?;
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(t.offset)?;
            f.sync_data()?;
        }
    }
    Ok(records)
}

/// Rebuild every session from its records: a pure fold over the log.
pub fn recover(records: &[Record]) -> Result<BTreeMap<SessionId, SessionEnvelope>> {
    let mut out: BTreeMap<SessionId, SessionEnvelope> = BTreeMap::new();
    for rec in records {
        apply(&mut out, rec)?;
    }
    Ok(out)
}

fn apply(out: &mut BTreeMap<SessionId, SessionEnvelope>, rec: &Record) -> Result<()> {
    match &rec.event {
        Event::Create { seed, config } => {
            if out.contains_key(&rec.sid) {
                return Err(Error::InvalidState(format!("session {} created twice", rec.sid)));
            }
            let session = Session::new(config.clone(), *seed)?;
            out.insert(rec.sid.clone(), SessionEnvelope::new(rec.sid.clone(), session, rec.t));
        }
        Event::Response { step, r } => {
            let env = out
                .get_mut(&rec.sid)
                .ok_or_else(|| Error::InvalidState(format!("response for unknown session {}", rec.sid)))?;
            if env.session.state.step() != *step || env.session.state.status.is_terminal() {
                return Err(Error::InvalidState(format!(
                    "response for step {step} does not match session {} at step {}",
                    rec.sid,
                    env.session.state.step()
                )));
            }
            env.session.submit(*r)?;
            env.updated = rec.t;
        }
        Event::Trial { .. } => {}
    }
    Ok(())
}

/// A stored trial record that disagrees with the recomputed session.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub sid: SessionId,
    pub step: usize,
    pub detail: String,
}

/// Replay the log and check every stored trial against the recomputed one.
/// Structural failures (unknown session, out-of-order response) are reported
/// as divergences too.
pub fn verify(records: &[Record]) -> Vec<Divergence> {
    let mut sessions = BTreeMap::new();
    let mut found = Vec::new();
    for rec in records {
        if let Event::Trial { step, trial, mi_bits } = &rec.event {
            let recomputed = sessions.get(&rec.sid).map(|e: &SessionEnvelope| &e.session.state);
            let detail = match recomputed {
                None => Some("trial for unknown session".to_string()),
                Some(s) if s.step() != *step => Some(format!("session is at step {}", s.step())),
                Some(s) if s.current_trial.as_ref() != Some(trial) => Some("trial differs".into()),
                Some(s) if s.current_mi != *mi_bits => Some("mutual information differs".into()),
                Some(_) => None,
            };
            if let Some(detail) = detail {
                found.push(Divergence { sid: rec.sid.clone(), step: *step, detail });
            }
            continue;
        }
        if let Err(e) = apply(&mut sessions, rec) {
            let step = match &rec.event {
                Event::Response { step, .. } => *step,
                _ => 0,
            };
            found.push(Divergence { sid: rec.sid.clone(), step, detail: e.to_string() });
        }
    }
    found
}
