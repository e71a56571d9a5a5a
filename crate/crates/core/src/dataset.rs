//! Check-in datasets in the line-delimited wire format: one JSON check-in per
//! line, users interleaved in any order.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::DataError;
use crate::factor::{validate_snapshot, CheckIn, FactorRegistry};

/// Time-ordered check-ins grouped by user.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    users: BTreeMap<String, Vec<CheckIn>>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Groups check-ins by user and sorts each history by time. Two check-ins
    /// of one user at the same instant are rejected.
    pub fn from_checkins(checkins: impl IntoIterator<Item = CheckIn>) -> Result<Self, DataError> {
        let mut users: BTreeMap<String, Vec<CheckIn>> = BTreeMap::new();
        for c in checkins {
            users.entry(c.user_id.clone()).or_default().push(c);
        }
        for (user, history) in users.iter_mut() {
            history.sort_by_key(|c| c.at);
            if history.windows(2).any(|w| w[0].at == w[1].at) {
                return Err(DataError::Unordered { user: user.clone() });
            }
        }
        Ok(Self { users })
    }

    pub fn insert_user(&mut self, user_id: &str, history: Vec<CheckIn>) -> Result<(), DataError> {
        if history.windows(2).any(|w| w[0].at >= w[1].at) {
            return Err(DataError::Unordered {
                user: user_id.to_string(),
            });
        }
        self.users.insert(user_id.to_string(), history);
        Ok(())
    }

    pub fn users(&self) -> impl Iterator<Item = (&str, &[CheckIn])> {
        self.users.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn user(&self, user_id: &str) -> Option<&[CheckIn]> {
        self.users.get(user_id).map(Vec::as_slice)
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn checkin_count(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    /// Validates every snapshot against `registry`, applying its range policy.
    pub fn validated(self, registry: &FactorRegistry) -> Result<Self, DataError> {
        let mut users = BTreeMap::new();
        for (user, history) in self.users {
            let history = history
                .into_iter()
                .map(|mut c| {
                    c.env = validate_snapshot(c.env, registry)?;
                    Ok(c)
                })
                .collect::<Result<Vec<_>, DataError>>()?;
            users.insert(user, history);
        }
        Ok(Self { users })
    }

    pub fn read_jsonl(reader: impl Read) -> Result<Self, DataError> {
        let mut checkins = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let c: CheckIn = serde_json::from_str(&line).map_err(|source| DataError::Json {
                line: i + 1,
                source,
            })?;
            checkins.push(c);
        }
        Self::from_checkins(checkins)
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<(), DataError> {
        for history in self.users.values() {
            for c in history {
                serde_json::to_writer(&mut writer, c).map_err(std::io::Error::from)?;
                writer.write_all(b"\n")?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::GridIndex;
    use chrono::{Duration, TimeZone, Utc};

    fn c(user: &str, h: i64, e: u8) -> CheckIn {
        CheckIn::new(
            user,
            Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + Duration::hours(h),
            GridIndex::from_flat(e).unwrap(),
        )
    }

    #[test]
    fn groups_and_sorts() {
        let ds = Dataset::from_checkins(vec![c("b", 2, 1), c("a", 5, 2), c("a", 1, 3)]).unwrap();
        assert_eq!(ds.user_count(), 2);
        let a = ds.user("a").unwrap();
        assert_eq!(a[0].emotion.flat(), 3);
        assert_eq!(a[1].emotion.flat(), 2);
        assert!(Dataset::from_checkins(vec![c("a", 1, 1), c("a", 1, 2)]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = Dataset::from_checkins(vec![
            c("a", 1, 3).with("temperature_c", 4.5),
            c("b", 2, 60).with("condition", "snow"),
        ])
        .unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        assert_eq!(Dataset::read_jsonl(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn reports_bad_lines() {
        let text =
            "{\"user_id\":\"a\",\"at\":\"2024-01-01T00:00:00Z\",\"emotion\":3}\n\nnot json\n";
        match Dataset::read_jsonl(text.as_bytes()) {
            Err(DataError::Json { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
