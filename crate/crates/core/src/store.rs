//! Durable event log with periodic snapshots.
//!
//! `events.log` holds one record per line: `seq<TAB>crc32<TAB>json`, where
//! the checksum covers the JSON text. A record that fails its checksum at
//! the end of the file is a torn write and is cut off on open; an invalid
//! record followed by valid ones means corruption and opening fails.
//! `snapshot.json` holds the full state as of some sequence number and is
//! replaced atomically.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::engine::{Engine, EngineError, Event, EventSink, QueueConfig, State};

pub const LOG_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 1000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("store {0} is locked by another process")]
    Locked(PathBuf),
    #[error("store {0} is empty and no configuration was given")]
    NotInitialized(PathBuf),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Deserialize)]
struct Snapshot {
    seq: u64,
    state: State,
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    seq: u64,
    state: &'a State,
}

/// Append-only file sink. Holds an exclusive lock on the log while open.
#[derive(Debug)]
pub struct FileLog {
    dir: PathBuf,
    file: File,
    next_seq: u64,
    snapshot_every: u64,
    last_snapshot: u64,
}

fn encode(seq: u64, event: &Event) -> Result<String, serde_json::Error> {
    let json = serde_json::to_string(event)?;
    Ok(format!("{seq}\t{:08x}\t{json}\n", crc32fast::hash(json.as_bytes())))
}

fn decode(line: &str) -> Result<(u64, Event), String> {
    let mut parts = line.splitn(3, '\t');
    let (Some(seq), Some(crc), Some(json)) = (parts.next(), parts.next(), parts.next()) else {
        return Err("expected seq, checksum and record".into());
    };
    let seq: u64 = seq.parse().map_err(|_| format!("bad sequence number {seq:?}"))?;
    let crc = u32::from_str_radix(crc, 16).map_err(|_| format!("bad checksum {crc:?}"))?;
    if crc32fast::hash(json.as_bytes()) != crc {
        return Err("checksum mismatch".into());
    }
    let event = serde_json::from_str(json).map_err(|e| e.to_string())?;
    Ok((seq, event))
}

/// Records, the byte length they occupy, and the file length.
type Scan = (Vec<(u64, Event)>, u64, u64);

/// Valid records of a log file.
fn scan(path: &Path) -> Result<Scan, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((vec![], 0, 0)),
        Err(e) => return Err(io(path)(e)),
    };
    let total = file.metadata().map_err(io(path))?.len();
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good_len = 0u64;
    let mut bad: Option<(usize, String)> = None;
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.last() == Some(&b'\n');
        let parsed = std::str::from_utf8(&buf)
            .map_err(|e| e.to_string())
            .and_then(|s| if complete { decode(s.trim_end_matches('\n')) } else { Err("incomplete record".into()) });
        match (parsed, &bad) {
            (Ok((seq, ev)), None) => {
                let expected = events.last().map_or(1, |(s, _): &(u64, Event)| s + 1);
                if seq != expected {
                    return Err(StoreError::Corrupt {
                        path: path.to_owned(),
                        line: line_no,
                        message: format!("sequence {seq}, expected {expected}"),
                    });
                }
                events.push((seq, ev));
                good_len += n as u64;
            }
            (Ok(_), Some((line, message))) => {
                return Err(StoreError::Corrupt {
                    path: path.to_owned(),
                    line: *line,
                    message: format!("{message}, followed by valid records"),
                })
            }
            (Err(message), None) => bad = Some((line_no, message)),
            (Err(_), Some(_)) => {}
        }
    }
    Ok((events, good_len, total))
}

fn read_snapshot(dir: &Path) -> Result<Option<Snapshot>, StoreError> {
    let path = dir.join(SNAPSHOT_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| StoreError::Corrupt {
            path,
            line: 1,
            message: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io(&path)(e)),
    }
}

/// Every valid event in a store directory, without locking or repairing it.
pub fn read_events(dir: &Path) -> Result<Vec<(u64, Event)>, StoreError> {
    Ok(scan(&dir.join(LOG_FILE))?.0)
}

impl FileLog {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_snapshot(&mut self, seq: u64, state: &State) -> Result<(), StoreError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let bytes = serde_json::to_vec(&SnapshotRef { seq, state })
        .map_err(|e| StoreError::Io {
            path: tmp.clone(),
            source: std::io::Error::other(e),
        })?;
        let mut f = File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(&bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io(&path))?;
        self.last_snapshot = seq;
        info!(seq, "snapshot written");
        Ok(())
    }
}

impl EventSink for FileLog {
    fn append(&mut self, event: &Event) -> Result<u64, EngineError> {
        let seq = self.next_seq;
        let line = encode(seq, event).map_err(|e| EngineError::Log(e.to_string()))?;
        let path = self.dir.join(LOG_FILE);
        let fail = |e: std::io::Error| EngineError::Log(format!("{}: {e}", path.display()));
        let before = self.file.metadata().map_err(fail)?.len();
        let result = self.file.write_all(line.as_bytes()).and_then(|_| self.file.sync_data());
        if let Err(e) = result {
            // Drop whatever part of the record made it to disk.
            let _ = self.file.set_len(before);
            return Err(fail(e));
        }
        self.next_seq += 1;
        Ok(seq)
    }

    fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn applied(&mut self, seq: u64, state: &State) -> Result<(), EngineError> {
        if self.snapshot_every > 0 && seq - self.last_snapshot >= self.snapshot_every {
            // The event is already durable; a failed snapshot only costs replay time.
            if let Err(e) = self.write_snapshot(seq, state) {
                warn!("snapshot failed: {e}");
            }
        }
        Ok(())
    }
}

/// Opens (or creates) the store in `dir` and rebuilds the engine.
///
/// A new store needs `config`. For an existing store, a `config` different
/// from the stored one is recorded as a reconfiguration event.
pub fn open_engine(
    dir: &Path,
    config: Option<QueueConfig>,
    snapshot_every: u64,
) -> Result<Engine<FileLog>, StoreError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let log_path = dir.join(LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(&log_path)
        .map_err(io(&log_path))?;
    match file.try_lock() {
        Ok(()) => {}
        Err(std::fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(dir.to_owned())),
        Err(std::fs::TryLockError::Error(e)) => return Err(io(&log_path)(e)),
    }
    let (events, good_len, total) = scan(&log_path)?;
    if good_len < total {
        warn!(dropped = total - good_len, "discarding torn record at end of {}", log_path.display());
        file.set_len(good_len).map_err(io(&log_path))?;
        file.sync_all().map_err(io(&log_path))?;
    }
    let mut file = file;
    file.seek(SeekFrom::End(0)).map_err(io(&log_path))?;
    let last = events.last().map_or(0, |(s, _)| *s);
    let snapshot = read_snapshot(dir)?.filter(|s| {
        let usable = s.seq <= last;
        if !usable {
            warn!(snapshot = s.seq, log = last, "snapshot is ahead of the log; ignoring it");
        }
        usable
    });
    let log = FileLog {
        dir: dir.to_owned(),
        file,
        next_seq: last + 1,
        snapshot_every,
        last_snapshot: snapshot.as_ref().map_or(0, |s| s.seq),
    };
    let mut engine = if events.is_empty() {
        let config = config.clone().ok_or_else(|| StoreError::NotInitialized(dir.to_owned()))?;
        Engine::create(config, log)?
    } else {
        let from = snapshot.as_ref().map_or(0, |s| s.seq);
        let tail = events.into_iter().filter(|(s, _)| *s > from);
        Engine::replay(snapshot.map(|s| s.state), tail, log)?
    };
    if let Some(config) = config {
        engine.reconfigure(config)?;
    }
    Ok(engine)
}
