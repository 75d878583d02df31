//! In-process stub servers for integration tests: a Gerrit REST stub that
//! records every request, and a minimal `/embed` server.
//!
//! Each stub runs on its own thread with a private runtime, so it works from
//! both synchronous and `#[tokio::test]` tests.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use base64::Engine;
use serde_json::{json, Value};

fn serve(router: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("stub runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind stub");
            tx.send(listener.local_addr().expect("stub addr")).expect("report addr");
            axum::serve(listener, router).await.expect("stub server");
        });
    });
    rx.recv().expect("stub failed to start")
}

/// Gerrit's `ChangeInfo` as returned with `CURRENT_REVISION`,
/// `CURRENT_FILES` and `CURRENT_COMMIT`. `/COMMIT_MSG` is always listed,
/// as real Gerrit does.
pub fn change_json(number: u64, project: &str, subject: &str, body: &str, created: &str, files: &[&str]) -> Value {
    let rev = format!("{number:040x}");
    let mut file_map = serde_json::Map::new();
    file_map.insert("/COMMIT_MSG".into(), json!({"status": "A", "lines_inserted": 10}));
    for f in files {
        file_map.insert((*f).into(), json!({"lines_inserted": 3, "lines_deleted": 1}));
    }
    let message = if body.is_empty() {
        format!("{subject}\n\nChange-Id: I{rev}\n")
    } else {
        format!("{subject}\n\n{body}\n\nChange-Id: I{rev}\n")
    };
    json!({
        "id": format!("{}~master~I{rev}", project.replace('/', "%2F")),
        "project": project,
        "branch": "master",
        "change_id": format!("I{rev}"),
        "subject": subject,
        "status": "NEW",
        "created": created,
        "updated": created,
        "_number": number,
        "owner": {"_account_id": 1000096, "name": "John Doe"},
        "current_revision": rev,
        "revisions": {
            rev.clone(): {
                "kind": "REWORK",
                "_number": 1,
                "ref": format!("refs/changes/{:02}/{number}/1", number % 100),
                "files": file_map,
                "commit": {"subject": subject, "message": message},
                "commit_with_footers": message,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub query: String,
    pub authorization: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct StubOptions {
    /// When set, only `/a/` requests with these Basic credentials succeed.
    pub require_auth: Option<(String, String)>,
    /// Maximum changes per page before `_more_changes` kicks in.
    pub page_size: Option<usize>,
    /// Artificial latency added before every response.
    pub delay: Option<std::time::Duration>,
}

struct StubState {
    changes: Mutex<Vec<Value>>,
    log: Mutex<Vec<RecordedRequest>>,
    options: StubOptions,
    forced_status: Mutex<Option<u16>>,
}

pub struct StubGerrit {
    pub base_url: String,
    state: Arc<StubState>,
}

impl StubGerrit {
    pub fn start(changes: Vec<Value>) -> Self {
        Self::start_with(changes, StubOptions::default())
    }

    pub fn start_with(changes: Vec<Value>, options: StubOptions) -> Self {
        let state = Arc::new(StubState {
            changes: Mutex::new(changes),
            log: Mutex::new(Vec::new()),
            options,
            forced_status: Mutex::new(None),
        });
        let router = Router::new().fallback(gerrit_handler).with_state(state.clone());
        let addr = serve(router);
        Self {
            base_url: format!("http://{addr}"),
            state,
        }
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.log.lock().unwrap().clone()
    }

    /// Makes every subsequent request answer with `status`.
    pub fn force_status(&self, status: Option<u16>) {
        *self.state.forced_status.lock().unwrap() = status;
    }
}

fn xssi(body: &Value) -> Response {
    let mut text = String::from(")]}'\n");
    text.push_str(&serde_json::to_string(body).unwrap());
    (StatusCode::OK, [("content-type", "application/json; charset=utf-8")], text).into_response()
}

async fn gerrit_handler(State(st): State<Arc<StubState>>, method: Method, uri: Uri, headers: HeaderMap) -> Response {
    let authorization = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    st.log.lock().unwrap().push(RecordedRequest {
        method: method.to_string(),
        path: uri.path().to_owned(),
        query: uri.query().unwrap_or_default().to_owned(),
        authorization: authorization.clone(),
    });
    if let Some(d) = st.options.delay {
        tokio::time::sleep(d).await;
    }
    if method != Method::GET {
        return StatusCode::METHOD_NOT_ALLOWED.into_response();
    }
    if let Some(code) = *st.forced_status.lock().unwrap() {
        return (StatusCode::from_u16(code).unwrap(), "forced").into_response();
    }
    let mut path = uri.path();
    let authed = path.starts_with("/a/");
    if authed {
        path = &path[2..];
    }
    if let Some((user, pass)) = &st.options.require_auth {
        let expected = format!(
            "Basic {}",
            base64::engine::general_purpose::STANDARD.encode(format!("{user}:{pass}"))
        );
        if !authed || authorization.as_deref() != Some(expected.as_str()) {
            return (StatusCode::UNAUTHORIZED, "Unauthorized").into_response();
        }
    }

    let params: Vec<(String, String)> = url::form_urlencoded::parse(uri.query().unwrap_or_default().as_bytes())
        .into_owned()
        .collect();
    let param = |k: &str| params.iter().find(|(pk, _)| pk == k).map(|(_, v)| v.clone());

    let changes = st.changes.lock().unwrap().clone();
    if path == "/changes/" || path == "/changes" {
        let q = param("q").unwrap_or_default();
        let project = q
            .split(' ')
            .find_map(|t| t.strip_prefix("project:"))
            .map(str::to_owned);
        let matching: Vec<Value> = changes
            .into_iter()
            .filter(|c| project.as_deref().is_none_or(|p| c["project"] == p))
            .collect();
        let start: usize = param("S").and_then(|s| s.parse().ok()).unwrap_or(0);
        let mut n: usize = param("n").and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
        if let Some(page) = st.options.page_size {
            n = n.min(page);
        }
        let end = start.saturating_add(n).min(matching.len());
        let mut page: Vec<Value> = matching.get(start.min(end)..end).unwrap_or_default().to_vec();
        if end < matching.len() {
            if let Some(last) = page.last_mut() {
                last["_more_changes"] = json!(true);
            }
        }
        return xssi(&Value::Array(page));
    }
    if let Some(id) = path.strip_prefix("/changes/") {
        let id = url::form_urlencoded::parse(format!("x={id}").as_bytes())
            .next()
            .map(|(_, v)| v.into_owned())
            .unwrap_or_default();
        let found = changes.into_iter().find(|c| {
            c["_number"].as_u64().map(|n| n.to_string()).as_deref() == Some(id.as_str())
                || c["change_id"] == id.as_str()
                || c["id"] == id.as_str()
        });
        return match found {
            Some(c) => xssi(&c),
            None => (StatusCode::NOT_FOUND, format!("Not found: {id}")).into_response(),
        };
    }
    (StatusCode::NOT_FOUND, "Not found").into_response()
}

struct EmbedState {
    calls: AtomicUsize,
    texts: AtomicUsize,
    failing: AtomicBool,
    dimension: usize,
}

/// `/embed` server producing deterministic character-statistics vectors.
pub struct StubEmbedder {
    pub base_url: String,
    state: Arc<EmbedState>,
}

impl StubEmbedder {
    pub fn start(dimension: usize) -> Self {
        let state = Arc::new(EmbedState {
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
            failing: AtomicBool::new(false),
            dimension,
        });
        let router = Router::new()
            .route("/embed", axum::routing::post(embed_handler))
            .with_state(state.clone());
        let addr = serve(router);
        Self {
            base_url: format!("http://{addr}"),
            state,
        }
    }

    pub fn calls(&self) -> usize {
        self.state.calls.load(Ordering::SeqCst)
    }

    pub fn texts_embedded(&self) -> usize {
        self.state.texts.load(Ordering::SeqCst)
    }

    pub fn set_failing(&self, failing: bool) {
        self.state.failing.store(failing, Ordering::SeqCst);
    }
}

/// The vector [`StubEmbedder`] returns for `text`.
pub fn stub_vector(text: &str, dimension: usize) -> Vec<f64> {
    let mut v = vec![0.0; dimension];
    for (i, b) in text.bytes().enumerate() {
        v[(b as usize + i) % dimension] += 1.0;
    }
    v
}

async fn embed_handler(State(st): State<Arc<EmbedState>>, body: Bytes) -> Response {
    st.calls.fetch_add(1, Ordering::SeqCst);
    if st.failing.load(Ordering::SeqCst) {
        return (StatusCode::SERVICE_UNAVAILABLE, "model not loaded").into_response();
    }
    let Ok(req) = serde_json::from_slice::<Value>(&body) else {
        return StatusCode::BAD_REQUEST.into_response();
    };
    let Some(texts) = req["texts"].as_array() else {
        return StatusCode::BAD_REQUEST.into_response();
    };
    st.texts.fetch_add(texts.len(), Ordering::SeqCst);
    let vectors: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| stub_vector(t.as_str().unwrap_or_default(), st.dimension))
        .collect();
    axum::Json(json!({"vectors": vectors, "dimension": st.dimension})).into_response()
}
