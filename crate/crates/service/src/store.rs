//! Append-only event log, one JSON object per line.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use mspsc_core::ingest::SourceRecord;
use mspsc_core::{CheckIn, ConfigOverrides};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    ProfileCreated {
        user_id: String,
        #[serde(default, skip_serializing_if = "ConfigOverrides::is_empty")]
        overrides: ConfigOverrides,
    },
    CheckInRecorded {
        checkin: CheckIn,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    ConfigChanged {
        user_id: String,
        overrides: ConfigOverrides,
    },
    SourceRecordsAdded {
        user_id: String,
        records: Vec<SourceRecord>,
    },
}

/// Where replay stopped because an entry could not be decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptLogEntry {
    /// Byte offset of the first undecodable entry.
    pub offset: u64,
    /// Number of bytes discarded from that offset on.
    pub discarded: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogContents {
    pub events: Vec<Event>,
    /// Length of the valid prefix in bytes.
    pub valid_len: u64,
    pub corrupt: Option<CorruptLogEntry>,
}

/// Decodes the longest valid prefix of a log. A final line without a
/// newline is a torn write and counts as corrupt.
pub fn decode(bytes: &[u8]) -> LogContents {
    let mut events = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            break;
        };
        let line = &rest[..end];
        if line.iter().all(u8::is_ascii_whitespace) {
            offset += end + 1;
            continue;
        }
        match serde_json::from_slice::<Event>(line) {
            Ok(event) => events.push(event),
            Err(_) => break,
        }
        offset += end + 1;
    }
    let corrupt = (offset < bytes.len()).then(|| CorruptLogEntry {
        offset: offset as u64,
        discarded: (bytes.len() - offset) as u64,
    });
    LogContents {
        events,
        valid_len: offset as u64,
        corrupt,
    }
}

/// Reads a log without modifying it. A missing file is an empty log.
pub fn read_log(path: &Path) -> std::io::Result<LogContents> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e),
    }
    Ok(decode(&bytes))
}

#[derive(Debug)]
pub struct Store {
    path: PathBuf,
    file: File,
}

impl Store {
    /// Opens or creates the log at `path`, dropping any corrupt tail so new
    /// entries follow the last valid one.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<(Self, LogContents)> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let contents = read_log(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)?;
        if contents.corrupt.is_some() {
            file.set_len(contents.valid_len)?;
            file.sync_all()?;
        }
        Ok((Self { path, file }, contents))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one event and syncs it to disk before returning.
    pub fn append(&mut self, event: &Event) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone, Utc};
    use mspsc_core::GridIndex;

    fn checkin(i: i64) -> Event {
        let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + Duration::hours(i);
        Event::CheckInRecorded {
            checkin: CheckIn::new("a", at, GridIndex::from_flat(3).unwrap())
                .with("temperature_c", 1.5),
            idempotency_key: Some(format!("k{i}")),
        }
    }

    #[test]
    fn round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let (mut store, contents) = Store::open(&path).unwrap();
        assert!(contents.events.is_empty() && contents.corrupt.is_none());
        let created = Event::ProfileCreated {
            user_id: "a".into(),
            overrides: ConfigOverrides::default(),
        };
        store.append(&created).unwrap();
        store.append(&checkin(1)).unwrap();
        drop(store);
        let (_, contents) = Store::open(&path).unwrap();
        assert_eq!(contents.events, vec![created, checkin(1)]);
    }

    #[test]
    fn torn_tail_is_reported_and_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let (mut store, _) = Store::open(&path).unwrap();
        for i in 0..10 {
            store.append(&checkin(i)).unwrap();
        }
        drop(store);
        let full = std::fs::read(&path).unwrap();
        let cut = full.len() - 7;
        std::fs::write(&path, &full[..cut]).unwrap();
        let last_start = full[..full.len() - 1]
            .iter()
            .rposition(|&b| b == b'\n')
            .unwrap()
            + 1;

        let (mut store, contents) = Store::open(&path).unwrap();
        assert_eq!(contents.events.len(), 9);
        assert_eq!(
            contents.corrupt,
            Some(CorruptLogEntry {
                offset: last_start as u64,
                discarded: (cut - last_start) as u64
            })
        );
        store.append(&checkin(20)).unwrap();
        let contents = read_log(&path).unwrap();
        assert_eq!(contents.events.len(), 10);
        assert!(contents.corrupt.is_none());
    }

    #[test]
    fn garbage_line_stops_replay() {
        let text = "{\"type\":\"profile_created\",\"user_id\":\"a\"}\nnot json\n{\"type\":\"profile_created\",\"user_id\":\"b\"}\n";
        let c = decode(text.as_bytes());
        assert_eq!(c.events.len(), 1);
        assert_eq!(c.corrupt.unwrap().offset, 41);
    }

    #[test]
    fn missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let c = read_log(&dir.path().join("nope.jsonl")).unwrap();
        assert!(c.events.is_empty());
        assert_eq!(c.valid_len, 0);
    }
}
