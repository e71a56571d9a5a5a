//! File-based ingestion of environmental data.
//!
//! Adapters turn exports into [`SourceRecord`]s; [`snapshot_at`] then picks
//! the freshest usable value of every registered factor at a given moment.
//! Live API clients would plug in by producing the same records.

use std::collections::BTreeMap;
use std::io::BufReader;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::factor::{
    validate_snapshot, EnvSnapshot, FactorKind, FactorRegistry, FactorValue, SourceGroup,
};

/// Weather observations older than this are stale.
pub const WEATHER_STALENESS: Duration = Duration::hours(3);

pub const WEATHER_COLUMNS: [&str; 5] = [
    "time",
    "temperature_c",
    "precipitation_mm",
    "cloud_cover_pct",
    "condition",
];

pub const FITNESS_COLUMNS: [&str; 4] = ["date", "steps_day", "sleep_hours", "resting_hr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_group: SourceGroup,
    pub observed_at: DateTime<Utc>,
    /// Factor id → textual value, exactly as read from the source.
    pub raw: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReject {
    /// 1-based line number in the input, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedTable {
    pub records: Vec<SourceRecord>,
    pub rejects: Vec<RowReject>,
}

struct TableLayout<'a> {
    group: SourceGroup,
    time_column: &'a str,
    numeric: &'a [&'a str],
    categorical: &'a [&'a str],
}

fn parse_instant(text: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|d| d.and_utc())
}

fn parse_table(bytes: &[u8], layout: &TableLayout<'_>) -> Result<ParsedTable, IngestError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(IngestError::EmptyFile);
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let required = std::iter::once(layout.time_column)
        .chain(layout.numeric.iter().copied())
        .chain(layout.categorical.iter().copied());
    let mut positions = BTreeMap::new();
    for name in required {
        let pos = column(name).ok_or_else(|| IngestError::MissingHeader(name.to_string()))?;
        positions.insert(name, pos);
    }

    let mut table = ParsedTable::default();
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                table.rejects.push(RowReject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let field = |name: &str| row.get(positions[name]).unwrap_or("");
        let reject = |reason: String| RowReject { line, reason };

        let time_text = field(layout.time_column);
        let Some(observed_at) = parse_instant(time_text) else {
            table.rejects.push(reject(format!(
                "invalid {} `{time_text}`",
                layout.time_column
            )));
            continue;
        };
        let mut raw = BTreeMap::new();
        let mut bad = None;
        for &name in layout.numeric {
            let text = field(name);
            if text.is_empty() {
                continue;
            }
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    raw.insert(name.to_string(), text.to_string());
                }
                _ => {
                    bad = Some(format!("non-numeric {name} `{text}`"));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            table.rejects.push(reject(reason));
            continue;
        }
        for &name in layout.categorical {
            let text = field(name);
            if !text.is_empty() {
                raw.insert(name.to_string(), text.to_ascii_lowercase());
            }
        }
        table.records.push(SourceRecord {
            source_group: layout.group,
            observed_at,
            raw,
        });
    }
    Ok(table)
}

/// Reads a comma-separated weather table with the [`WEATHER_COLUMNS`]
/// header. Empty cells mean the value was not observed; malformed rows are
/// collected as rejects.
pub fn parse_weather_table(bytes: &[u8]) -> Result<ParsedTable, IngestError> {
    parse_table(
        bytes,
        &TableLayout {
            group: SourceGroup::Weather,
            time_column: "time",
            numeric: &WEATHER_COLUMNS[1..4],
            categorical: &WEATHER_COLUMNS[4..],
        },
    )
}

/// Reads a comma-separated daily fitness export with the [`FITNESS_COLUMNS`]
/// header. `date` may be a plain date or an RFC 3339 timestamp.
pub fn parse_fitness_table(bytes: &[u8]) -> Result<ParsedTable, IngestError> {
    parse_table(
        bytes,
        &TableLayout {
            group: SourceGroup::Fitness,
            time_column: "date",
            numeric: &FITNESS_COLUMNS[1..],
            categorical: &[],
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CalendarTime {
    Instant(DateTime<Utc>),
    Date(NaiveDate),
}

fn param<'a>(prop: &'a ical::property::Property, name: &str) -> Option<&'a str> {
    prop.params.as_ref()?.iter().find_map(|(k, vs)| {
        if k.eq_ignore_ascii_case(name) {
            vs.first().map(String::as_str)
        } else {
            None
        }
    })
}

/// Date-times with a `Z` suffix are UTC. Floating and `TZID` times are read
/// as UTC as well since no zone database is consulted.
fn parse_calendar_time(prop: &ical::property::Property) -> Result<CalendarTime, IngestError> {
    let value = prop
        .value
        .as_deref()
        .map(str::trim)
        .ok_or_else(|| IngestError::MalformedCalendar(format!("{} has no value", prop.name)))?;
    let is_date = param(prop, "VALUE").is_some_and(|v| v.eq_ignore_ascii_case("DATE"))
        || (value.len() == 8 && value.bytes().all(|b| b.is_ascii_digit()));
    if is_date {
        return NaiveDate::parse_from_str(value, "%Y%m%d")
            .map(CalendarTime::Date)
            .map_err(|_| IngestError::MalformedCalendar(format!("bad date `{value}`")));
    }
    let naive = value.strip_suffix('Z').unwrap_or(value);
    NaiveDateTime::parse_from_str(naive, "%Y%m%dT%H%M%S")
        .map(|t| CalendarTime::Instant(Utc.from_utc_datetime(&t)))
        .map_err(|_| IngestError::MalformedCalendar(format!("bad date-time `{value}`")))
}

/// Parses the subset of ISO 8601 durations used by iCalendar
/// (`P[n]W` or `P[n]DT[n]H[n]M[n]S`, optionally signed).
fn parse_duration(text: &str) -> Option<Duration> {
    let text = text.trim();
    let (sign, body) = match text.as_bytes().first()? {
        b'-' => (-1, &text[1..]),
        b'+' => (1, &text[1..]),
        _ => (1, text),
    };
    let body = body.strip_prefix('P')?;
    let mut total = Duration::zero();
    let mut number = String::new();
    let mut in_time = false;
    let mut any = false;
    for ch in body.chars() {
        match ch {
            '0'..='9' => number.push(ch),
            'T' => in_time = true,
            unit => {
                let n: i64 = number.parse().ok()?;
                number.clear();
                any = true;
                total += match (unit, in_time) {
                    ('W', false) => Duration::weeks(n),
                    ('D', false) => Duration::days(n),
                    ('H', true) => Duration::hours(n),
                    ('M', true) => Duration::minutes(n),
                    ('S', true) => Duration::seconds(n),
                    _ => return None,
                };
            }
        }
    }
    (any && number.is_empty()).then_some(total * sign)
}

struct DayLoad {
    events: u32,
    busy_hours: f64,
}

fn day_start(day: NaiveDate) -> DateTime<Utc> {
    day.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc()
}

/// Folds the VEVENTs of an iCalendar document into one record per UTC day,
/// from the first to the last day touched by an event. `busy_hours_day`
/// sums timed-event durations clipped to the day; all-day events count as
/// events but add no busy hours.
pub fn parse_calendar_events(bytes: &[u8]) -> Result<Vec<SourceRecord>, IngestError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Vec::new());
    }
    let mut calendars = 0;
    let mut days: BTreeMap<NaiveDate, DayLoad> = BTreeMap::new();
    for calendar in ical::IcalParser::new(BufReader::new(bytes)) {
        let calendar = calendar.map_err(|e| IngestError::MalformedCalendar(e.to_string()))?;
        calendars += 1;
        for event in &calendar.events {
            let prop = |name: &str| event.properties.iter().find(|p| p.name == name);
            let start = prop("DTSTART")
                .ok_or_else(|| IngestError::MalformedCalendar("VEVENT without DTSTART".into()))
                .and_then(parse_calendar_time)?;
            let end = match (prop("DTEND"), prop("DURATION")) {
                (Some(p), _) => Some(parse_calendar_time(p)?),
                (None, Some(p)) => {
                    let d = p
                        .value
                        .as_deref()
                        .and_then(parse_duration)
                        .ok_or_else(|| IngestError::MalformedCalendar("bad DURATION".into()))?;
                    Some(match start {
                        CalendarTime::Instant(t) => CalendarTime::Instant(t + d),
                        CalendarTime::Date(day) => CalendarTime::Date(day + d),
                    })
                }
                (None, None) => None,
            };

            match (start, end) {
                (CalendarTime::Instant(s), end) => {
                    let e = match end {
                        Some(CalendarTime::Instant(e)) => e,
                        Some(CalendarTime::Date(d)) => day_start(d),
                        None => s,
                    };
                    if e < s {
                        return Err(IngestError::MalformedCalendar(
                            "event ends before it starts".into(),
                        ));
                    }
                    let mut day = s.date_naive();
                    loop {
                        let lo = day_start(day).max(s);
                        let hi = day_start(day + Duration::days(1)).min(e);
                        let load = days.entry(day).or_insert(DayLoad {
                            events: 0,
                            busy_hours: 0.0,
                        });
                        load.events += 1;
                        if hi > lo {
                            load.busy_hours += (hi - lo).num_seconds() as f64 / 3600.0;
                        }
                        day += Duration::days(1);
                        if day_start(day) >= e {
                            break;
                        }
                    }
                }
                (CalendarTime::Date(s), end) => {
                    let e = match end {
                        Some(CalendarTime::Date(d)) => d,
                        Some(CalendarTime::Instant(t)) => t.date_naive(),
                        None => s + Duration::days(1),
                    };
                    let mut day = s;
                    loop {
                        days.entry(day)
                            .or_insert(DayLoad {
                                events: 0,
                                busy_hours: 0.0,
                            })
                            .events += 1;
                        day += Duration::days(1);
                        if day >= e {
                            break;
                        }
                    }
                }
            }
        }
    }
    if calendars == 0 {
        return Err(IngestError::MalformedCalendar(
            "no VCALENDAR component".into(),
        ));
    }

    let (Some(&first), Some(&last)) = (days.keys().next(), days.keys().next_back()) else {
        return Ok(Vec::new());
    };
    let mut records = Vec::new();
    let mut day = first;
    while day <= last {
        let (events, busy) = days
            .get(&day)
            .map_or((0, 0.0), |l| (l.events, l.busy_hours.min(24.0)));
        records.push(SourceRecord {
            source_group: SourceGroup::Calendar,
            observed_at: day_start(day),
            raw: BTreeMap::from([
                ("event_count_day".to_string(), events.to_string()),
                ("busy_hours_day".to_string(), format!("{busy}")),
            ]),
        });
        day += Duration::days(1);
    }
    Ok(records)
}

fn fresh(group: SourceGroup, observed_at: DateTime<Utc>, at: DateTime<Utc>) -> bool {
    if observed_at > at {
        return false;
    }
    match group {
        SourceGroup::Weather => at - observed_at <= WEATHER_STALENESS,
        SourceGroup::Calendar | SourceGroup::Fitness => observed_at.date_naive() == at.date_naive(),
    }
}

/// The freshest usable value of every registered factor at `at`.
///
/// A record is usable when it is not later than `at` and within its group's
/// staleness window: three hours for weather, the same UTC day for calendar
/// and fitness. Unparseable values and values the registry would reject are
/// treated as missing, so the result always validates.
pub fn snapshot_at(
    records: &[SourceRecord],
    at: DateTime<Utc>,
    registry: &FactorRegistry,
) -> EnvSnapshot {
    let mut snapshot = EnvSnapshot::empty(at);
    for d in registry.descriptors() {
        let newest = records
            .iter()
            .filter(|r| {
                r.source_group == d.source_group && fresh(r.source_group, r.observed_at, at)
            })
            .filter_map(|r| {
                let text = r.raw.get(&d.factor_id)?.trim();
                let value = match d.kind {
                    FactorKind::Numeric => FactorValue::Numeric(text.parse().ok()?),
                    FactorKind::Categorical if !text.is_empty() => {
                        FactorValue::Categorical(text.to_string())
                    }
                    FactorKind::Categorical => return None,
                };
                let probe = EnvSnapshot::empty(at).with(&d.factor_id, value.clone());
                let value = validate_snapshot(probe, registry)
                    .ok()?
                    .get(&d.factor_id)?
                    .clone();
                Some((r.observed_at, value))
            })
            // later records win ties
            .fold(
                None,
                |best: Option<(DateTime<Utc>, FactorValue)>, cand| match best {
                    Some(b) if b.0 > cand.0 => Some(b),
                    _ => Some(cand),
                },
            );
        if let Some((_, value)) = newest {
            snapshot.values.insert(d.factor_id.clone(), Some(value));
        }
    }
    snapshot
}
