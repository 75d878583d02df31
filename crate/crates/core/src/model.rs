//! Domain types shared by every layer, plus the JSON-Lines dataset formats
//! (`changes.jsonl`, `links.jsonl`).

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {0}: malformed record")]
    MalformedLine(usize),
    #[error("line {0}: bad timestamp")]
    BadTimestamp(usize),
    #[error("duplicate change_key {0:?}")]
    DuplicateKey(String),
    #[error("self link on {0:?}")]
    SelfLink(String),
    #[error("empty path")]
    EmptyPath,
    #[error("unsafe path segment {0:?}")]
    UnsafeSegment(String),
    #[error("empty change_key")]
    EmptyKey,
    #[error("window of {0} days outside 1..=365")]
    BadWindow(u32),
    #[error("invalid change record: {0}")]
    InvalidRecord(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// One code change under review.
///
/// Records are only built through [`ChangeRecord::new`] or the parsers, so
/// `files` is always normalized and duplicate-free, and `created_at` carries
/// whole seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChangeRecord {
    pub change_key: String,
    pub project: String,
    pub subject: String,
    pub description: String,
    #[serde(with = "iso_seconds")]
    pub created_at: DateTime<Utc>,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl ChangeRecord {
    pub fn new<I, S>(
        change_key: impl Into<String>,
        project: impl Into<String>,
        subject: impl Into<String>,
        description: impl Into<String>,
        created_at: DateTime<Utc>,
        files: I,
    ) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let change_key = change_key.into();
        if change_key.is_empty() {
            return Err(ModelError::EmptyKey);
        }
        Ok(Self {
            change_key,
            project: project.into(),
            subject: subject.into(),
            description: description.into(),
            created_at: truncate_to_seconds(created_at),
            files: normalize_file_set(files)?,
            url: None,
        })
    }

    pub fn with_url(mut self, url: impl Into<String>) -> Self {
        self.url = Some(url.into());
        self
    }

    /// The text fed to sentence embedders and lexical baselines.
    pub fn text(&self) -> String {
        format!("{}\n{}", self.subject, self.description)
    }

    pub fn timestamp(&self) -> i64 {
        self.created_at.timestamp()
    }
}

/// Wire shape of a change record before validation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawChange {
    pub change_key: String,
    pub project: String,
    pub subject: String,
    #[serde(default)]
    pub description: String,
    pub created_at: String,
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default)]
    pub url: Option<String>,
}

impl RawChange {
    fn into_record(self, line_no: usize) -> Result<ChangeRecord, ModelError> {
        let created_at = parse_iso_timestamp(&self.created_at).ok_or(ModelError::BadTimestamp(line_no))?;
        let mut rec = ChangeRecord::new(
            self.change_key,
            self.project,
            self.subject,
            self.description,
            created_at,
            self.files,
        )?;
        rec.url = self.url;
        Ok(rec)
    }
}

impl<'de> Deserialize<'de> for ChangeRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawChange::deserialize(d)?;
        raw.into_record(0).map_err(serde::de::Error::custom)
    }
}

/// Decodes a single JSON change object, as posted to the scoring endpoint.
pub fn parse_change_json(bytes: &[u8]) -> Result<ChangeRecord, ModelError> {
    let raw: RawChange =
        serde_json::from_slice(bytes).map_err(|e| ModelError::InvalidRecord(e.to_string()))?;
    raw.into_record(1).map_err(|e| match e {
        ModelError::BadTimestamp(_) => ModelError::InvalidRecord("bad created_at".into()),
        other => other,
    })
}

pub fn parse_iso_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|t| truncate_to_seconds(t.with_timezone(&Utc)))
}

pub fn format_iso_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub(crate) fn truncate_to_seconds(t: DateTime<Utc>) -> DateTime<Utc> {
    Utc.timestamp_opt(t.timestamp(), 0).single().unwrap_or(t)
}

pub(crate) mod iso_seconds {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_iso_timestamp(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_iso_timestamp(&s).ok_or_else(|| serde::de::Error::custom("bad timestamp"))
    }
}

/// Unordered link between two changes, stored with `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LinkLabel {
    pub a: String,
    pub b: String,
}

impl LinkLabel {
    pub fn new(x: impl Into<String>, y: impl Into<String>) -> Result<Self, ModelError> {
        let (x, y) = (x.into(), y.into());
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Ok(Self { a: x, b: y }),
            std::cmp::Ordering::Greater => Ok(Self { a: y, b: x }),
            std::cmp::Ordering::Equal => Err(ModelError::SelfLink(x)),
        }
    }

    pub fn other(&self, key: &str) -> Option<&str> {
        if self.a == key {
            Some(&self.b)
        } else if self.b == key {
            Some(&self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    #[default]
    Symmetric,
    Lookback,
}

impl fmt::Display for WindowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowMode::Symmetric => "symmetric",
            WindowMode::Lookback => "lookback",
        })
    }
}

impl std::str::FromStr for WindowMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric" => Ok(WindowMode::Symmetric),
            "lookback" => Ok(WindowMode::Lookback),
            other => Err(format!("unknown window mode {other:?}")),
        }
    }
}

pub const DEFAULT_WINDOW_DAYS: u32 = 14;
pub const MAX_WINDOW_DAYS: u32 = 365;

/// Temporal window half-width in days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowConfig {
    days: u32,
    pub mode: WindowMode,
}

impl WindowConfig {
    pub fn new(days: u32, mode: WindowMode) -> Result<Self, ModelError> {
        if !(1..=MAX_WINDOW_DAYS).contains(&days) {
            return Err(ModelError::BadWindow(days));
        }
        Ok(Self { days, mode })
    }

    pub fn symmetric(days: u32) -> Result<Self, ModelError> {
        Self::new(days, WindowMode::Symmetric)
    }

    pub fn lookback(days: u32) -> Result<Self, ModelError> {
        Self::new(days, WindowMode::Lookback)
    }

    pub fn days(&self) -> u32 {
        self.days
    }

    pub fn seconds(&self) -> i64 {
        i64::from(self.days) * 86_400
    }

    /// Inclusive window predicate on `candidate` relative to `target`.
    pub fn contains(&self, target: i64, candidate: i64) -> bool {
        let delta = self.seconds();
        match self.mode {
            WindowMode::Symmetric => (candidate - target).abs() <= delta,
            WindowMode::Lookback => candidate <= target && target - candidate <= delta,
        }
    }

    /// `[start, end]` bounds in seconds around `target`.
    pub fn bounds(&self, target: i64) -> (i64, i64) {
        match self.mode {
            WindowMode::Symmetric => (target - self.seconds(), target + self.seconds()),
            WindowMode::Lookback => (target - self.seconds(), target),
        }
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            days: DEFAULT_WINDOW_DAYS,
            mode: WindowMode::Symmetric,
        }
    }
}

/// A target change together with its temporally windowed candidates.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub target: ChangeRecord,
    pub candidates: Vec<ChangeRecord>,
    pub window: WindowConfig,
}

/// Normalizes a repository-relative path: `\` becomes `/`, runs of separators
/// collapse, leading and trailing separators are dropped.
pub fn normalize_path(raw: &str) -> Result<String, ModelError> {
    let mut out = String::with_capacity(raw.len());
    for seg in raw.split(['/', '\\']).filter(|s| !s.is_empty()) {
        if seg == "." || seg == ".." {
            return Err(ModelError::UnsafeSegment(seg.to_string()));
        }
        if !out.is_empty() {
            out.push('/');
        }
        out.push_str(seg);
    }
    if out.is_empty() {
        return Err(ModelError::EmptyPath);
    }
    Ok(out)
}

fn normalize_file_set<I, S>(files: I) -> Result<Vec<String>, ModelError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for f in files {
        let p = normalize_path(f.as_ref())?;
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Reads `changes.jsonl`. Blank lines are skipped; line numbers are 1-based.
pub fn parse_changes_file<R: BufRead>(reader: R) -> Result<Vec<ChangeRecord>, ModelError> {
    let mut out = Vec::new();
    let mut keys = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|_| ModelError::MalformedLine(line_no))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawChange =
            serde_json::from_str(&line).map_err(|_| ModelError::MalformedLine(line_no))?;
        let rec = raw.into_record(line_no).map_err(|e| match e {
            ModelError::BadTimestamp(_) => e,
            ModelError::EmptyKey | ModelError::EmptyPath | ModelError::UnsafeSegment(_) => {
                ModelError::MalformedLine(line_no)
            }
            other => other,
        })?;
        if !keys.insert(rec.change_key.clone()) {
            return Err(ModelError::DuplicateKey(rec.change_key));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_changes_file<W: Write>(mut w: W, changes: &[ChangeRecord]) -> Result<(), ModelError> {
    for c in changes {
        let line = serde_json::to_string(c).map_err(|e| ModelError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| ModelError::Io(e.to_string()))?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    a: String,
    b: String,
}

/// Reads `links.jsonl`; output is sorted and duplicate-free.
pub fn parse_links_file<R: BufRead>(reader: R) -> Result<Vec<LinkLabel>, ModelError> {
    let mut set = std::collections::BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|_| ModelError::MalformedLine(line_no))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLink =
            serde_json::from_str(&line).map_err(|_| ModelError::MalformedLine(line_no))?;
        if raw.a.is_empty() || raw.b.is_empty() {
            return Err(ModelError::MalformedLine(line_no));
        }
        set.insert(LinkLabel::new(raw.a, raw.b)?);
    }
    Ok(set.into_iter().collect())
}

pub fn write_links_file<W: Write>(mut w: W, links: &[LinkLabel]) -> Result<(), ModelError> {
    for l in links {
        let line = serde_json::to_string(l).map_err(|e| ModelError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| ModelError::Io(e.to_string()))?;
    }
    Ok(())
}
