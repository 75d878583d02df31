//! Read-only Gerrit REST client.
//!
//! Every response body goes through [`strip_xssi_prefix`] before decoding and
//! every change is mapped to a [`ChangeRecord`] by [`normalize_change`]. The
//! client only ever issues `GET` requests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime, Utc};
use percent_encoding::{utf8_percent_encode, AsciiSet, CONTROLS, NON_ALPHANUMERIC};
use serde::Deserialize;
use thiserror::Error;
use tokio::sync::Semaphore;

use patchlink_core::model::{normalize_path, ChangeRecord};

pub const XSSI_PREFIX: &[u8] = b")]}'";
pub const PSEUDO_FILES: [&str; 3] = ["/COMMIT_MSG", "/MERGE_LIST", "/PATCHSET_LEVEL"];
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_CONCURRENCY: usize = 4;
pub const DEFAULT_QUERY_CAP: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GerritError {
    #[error("gerrit returned HTTP {0}")]
    HttpError(u16),
    #[error("gerrit requires authentication or rejected the credentials")]
    AuthRequired,
    #[error("could not decode gerrit response: {0}")]
    DecodeError(String),
    #[error("gerrit request timed out")]
    Timeout,
    #[error("change {0} not found")]
    NotFound(String),
    #[error("gerrit unreachable: {0}")]
    Transport(String),
    #[error("change is missing field {0}")]
    MissingField(&'static str),
    #[error("bad gerrit timestamp {0:?}")]
    BadTimestamp(String),
    #[error("unusable file path {0:?}")]
    InvalidPath(String),
    #[error("invalid gerrit configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone)]
pub struct Credentials {
    pub username: String,
    http_password: String,
}

impl fmt::Debug for Credentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credentials")
            .field("username", &self.username)
            .field("http_password", &"<redacted>")
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct GerritConfig {
    base_url: String,
    credentials: Option<Credentials>,
    pub timeout: Duration,
    pub max_concurrency: usize,
    /// Upper bound on changes returned by one query.
    pub query_cap: usize,
}

impl GerritConfig {
    pub fn new(base_url: &str) -> Result<Self, GerritError> {
        let parsed = url::Url::parse(base_url).map_err(|e| GerritError::InvalidConfig(format!("{base_url:?}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") || parsed.cannot_be_a_base() {
            return Err(GerritError::InvalidConfig(format!("{base_url:?} is not an http(s) base URL")));
        }
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            credentials: None,
            timeout: DEFAULT_TIMEOUT,
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
            query_cap: DEFAULT_QUERY_CAP,
        })
    }

    /// Username and HTTP password must be given together.
    pub fn with_credentials(mut self, username: Option<String>, password: Option<String>) -> Result<Self, GerritError> {
        self.credentials = match (username, password) {
            (Some(username), Some(http_password)) => Some(Credentials { username, http_password }),
            (None, None) => None,
            _ => {
                return Err(GerritError::InvalidConfig(
                    "username and HTTP password must both be set or both be absent".into(),
                ))
            }
        };
        Ok(self)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn is_authenticated(&self) -> bool {
        self.credentials.is_some()
    }

    fn api_root(&self) -> String {
        if self.credentials.is_some() {
            format!("{}/a", self.base_url)
        } else {
            self.base_url.clone()
        }
    }
}

/// Removes the `)]}'` guard line Gerrit puts in front of JSON bodies.
pub fn strip_xssi_prefix(body: &[u8]) -> &[u8] {
    match body.strip_prefix(XSSI_PREFIX) {
        Some(rest) => rest
            .strip_prefix(b"\r\n")
            .or_else(|| rest.strip_prefix(b"\n"))
            .unwrap_or(rest),
        None => body,
    }
}

/// Subset of Gerrit's `ChangeInfo` this client reads.
#[derive(Debug, Clone, Deserialize, Default)]
pub struct ChangeInfo {
    #[serde(rename = "_number")]
    pub number: Option<u64>,
    pub id: Option<String>,
    pub project: Option<String>,
    pub subject: Option<String>,
    pub created: Option<String>,
    pub current_revision: Option<String>,
    #[serde(default)]
    pub revisions: HashMap<String, RevisionInfo>,
    #[serde(rename = "_more_changes", default)]
    pub more_changes: bool,
}

#[derive(Debug, Clone, Deserialize, Default)]
pub struct RevisionInfo {
    #[serde(default)]
    pub files: BTreeMap<String, serde_json::Value>,
    pub commit: Option<CommitInfo>,
    pub commit_with_footers: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
pub struct CommitInfo {
    pub message: Option<String>,
}

/// Parses Gerrit's `YYYY-MM-DD HH:MM:SS.nnnnnnnnn` UTC timestamps,
/// truncating to whole seconds.
pub fn parse_gerrit_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let naive = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f").ok()?;
    DateTime::from_timestamp(naive.and_utc().timestamp(), 0)
}

fn is_footer_line(line: &str) -> bool {
    let Some((key, rest)) = line.split_once(':') else {
        return false;
    };
    key.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
        && (rest.is_empty() || rest.starts_with(' '))
}

/// Commit message body without the subject line and the trailing footer
/// paragraph (`Change-Id:`, `Signed-off-by:` and similar).
pub fn description_from_message(message: &str) -> String {
    let mut lines = message.lines();
    lines.next();
    let mut paragraphs: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current);
    }
    if paragraphs.last().is_some_and(|p| p.iter().all(|l| is_footer_line(l))) {
        paragraphs.pop();
    }
    paragraphs
        .iter()
        .map(|p| p.join("\n"))
        .collect::<Vec<_>>()
        .join("\n\n")
        .trim()
        .to_owned()
}

pub fn normalize_change(raw: &ChangeInfo, base_url: &str) -> Result<ChangeRecord, GerritError> {
    let base_url = base_url.trim_end_matches('/');
    let key = match (&raw.number, &raw.id) {
        (Some(n), _) => n.to_string(),
        (None, Some(id)) if !id.is_empty() => id.clone(),
        _ => return Err(GerritError::MissingField("_number")),
    };
    let project = raw.project.clone().ok_or(GerritError::MissingField("project"))?;
    let subject = raw.subject.clone().ok_or(GerritError::MissingField("subject"))?;
    let created_raw = raw.created.as_deref().ok_or(GerritError::MissingField("created"))?;
    let created = parse_gerrit_timestamp(created_raw).ok_or_else(|| GerritError::BadTimestamp(created_raw.to_owned()))?;

    let revision = match &raw.current_revision {
        Some(rev) => raw.revisions.get(rev),
        None if raw.revisions.len() == 1 => raw.revisions.values().next(),
        None => None,
    };
    let mut files = Vec::new();
    let mut description = String::new();
    if let Some(rev) = revision {
        for path in rev.files.keys().filter(|p| !PSEUDO_FILES.contains(&p.as_str())) {
            files.push(normalize_path(path).map_err(|_| GerritError::InvalidPath(path.clone()))?);
        }
        let message = rev
            .commit
            .as_ref()
            .and_then(|c| c.message.as_deref())
            .or(rev.commit_with_footers.as_deref());
        if let Some(m) = message {
            description = description_from_message(m);
        }
    }

    let url = format!(
        "{base_url}/c/{project}/+/{}",
        utf8_percent_encode(&key, NON_ALPHANUMERIC)
    );
    ChangeRecord::new(key, project, subject, description, created, files)
        .map(|r| r.with_url(url))
        .map_err(|e| GerritError::DecodeError(e.to_string()))
}

/// Decodes a `GET /changes/` body; the flag reports Gerrit's
/// `_more_changes` marker on the last entry.
pub fn decode_change_list(body: &[u8], base_url: &str) -> Result<(Vec<ChangeRecord>, bool), GerritError> {
    let infos: Vec<ChangeInfo> =
        serde_json::from_slice(strip_xssi_prefix(body)).map_err(|e| GerritError::DecodeError(e.to_string()))?;
    let more = infos.last().is_some_and(|c| c.more_changes);
    let records = infos
        .iter()
        .map(|c| normalize_change(c, base_url))
        .collect::<Result<_, _>>()?;
    Ok((records, more))
}

pub fn decode_change(body: &[u8], base_url: &str) -> Result<ChangeRecord, GerritError> {
    let info: ChangeInfo =
        serde_json::from_slice(strip_xssi_prefix(body)).map_err(|e| GerritError::DecodeError(e.to_string()))?;
    normalize_change(&info, base_url)
}

const QUERY_TERM: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'"')
    .add(b'#')
    .add(b'%')
    .add(b'&')
    .add(b'+')
    .add(b'<')
    .add(b'>')
    .add(b'=')
    .add(b'?')
    .add(b'`')
    .add(b'{')
    .add(b'}');

fn query_time(t: &DateTime<Utc>) -> String {
    format!("\"{} +0000\"", t.format("%Y-%m-%d %H:%M:%S"))
}

/// Query string for a project/time-range search.
pub fn changes_query(project: &str, after: &DateTime<Utc>, before: &DateTime<Utc>, n: usize, start: usize) -> String {
    let terms = [
        format!("project:{project}"),
        format!("after:{}", query_time(after)),
        format!("before:{}", query_time(before)),
    ];
    let q = terms
        .iter()
        .map(|t| utf8_percent_encode(t, QUERY_TERM).to_string())
        .collect::<Vec<_>>()
        .join("+");
    let mut s = format!("q={q}&o=CURRENT_REVISION&o=CURRENT_COMMIT&o=CURRENT_FILES&o=DETAILED_ACCOUNTS&n={n}");
    if start > 0 {
        s.push_str(&format!("&S={start}"));
    }
    s
}

#[derive(Clone)]
pub struct GerritClient {
    config: GerritConfig,
    http: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl fmt::Debug for GerritClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GerritClient").field("config", &self.config).finish()
    }
}

impl GerritClient {
    pub fn new(config: GerritConfig) -> Result<Self, GerritError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GerritError::InvalidConfig(e.to_string()))?;
        let permits = Arc::new(Semaphore::new(config.max_concurrency.max(1)));
        Ok(Self { config, http, permits })
    }

    pub fn config(&self) -> &GerritConfig {
        &self.config
    }

    async fn get(&self, url: &str, not_found: Option<&str>) -> Result<Vec<u8>, GerritError> {
        let _permit = self.permits.acquire().await.map_err(|e| GerritError::Transport(e.to_string()))?;
        tracing::debug!(%url, "gerrit GET");
        let mut req = self.http.get(url).header("Accept", "application/json");
        if let Some(c) = &self.config.credentials {
            req = req.basic_auth(&c.username, Some(&c.http_password));
        }
        let resp = req.send().await.map_err(map_transport)?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(GerritError::AuthRequired),
            404 => {
                return Err(match not_found {
                    Some(id) => GerritError::NotFound(id.to_owned()),
                    None => GerritError::HttpError(404),
                })
            }
            s => return Err(GerritError::HttpError(s)),
        }
        let body = resp.bytes().await.map_err(map_transport)?;
        Ok(body.to_vec())
    }

    /// Changes in `project` touched between `after` and `before`, following
    /// `_more_changes` pagination up to `min(limit, query_cap)` results.
    pub async fn query_changes(
        &self,
        project: &str,
        after: DateTime<Utc>,
        before: DateTime<Utc>,
        limit: usize,
    ) -> Result<Vec<ChangeRecord>, GerritError> {
        if after > before {
            return Err(GerritError::InvalidConfig("query range has after > before".into()));
        }
        let limit = limit.min(self.config.query_cap);
        let mut out = Vec::new();
        while out.len() < limit {
            let query = changes_query(project, &after, &before, limit - out.len(), out.len());
            let url = format!("{}/changes/?{query}", self.config.api_root());
            let body = self.get(&url, None).await?;
            let (page, more) = decode_change_list(&body, &self.config.base_url)?;
            let empty = page.is_empty();
            out.extend(page);
            if !more || empty {
                break;
            }
        }
        out.truncate(limit);
        Ok(out)
    }

    /// Looks up one change by numeric id or Change-Id.
    pub async fn get_change(&self, change_id: &str) -> Result<ChangeRecord, GerritError> {
        let url = format!(
            "{}/changes/{}?o=CURRENT_REVISION&o=CURRENT_FILES&o=COMMIT_FOOTERS",
            self.config.api_root(),
            utf8_percent_encode(change_id, NON_ALPHANUMERIC)
        );
        let body = self.get(&url, Some(change_id)).await?;
        decode_change(&body, &self.config.base_url)
    }
}

fn map_transport(e: reqwest::Error) -> GerritError {
    if e.is_timeout() {
        GerritError::Timeout
    } else {
        GerritError::Transport(e.without_url().to_string())
    }
}
