//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Child, Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use patchlink_core::classifier::{save_model, train, Node, Tree};
use patchlink_core::eval::{mean_reciprocal_rank, recall_at_k, QueryRanking};
use patchlink_core::features::{jaccard_files, lcp_max, lcs_max, structural_features};
use patchlink_core::model::parse_changes_file;
use patchlink_core::synthetic::blob_samples;
use patchlink_core::{
    rank_candidates, ChangeRecord, EmbeddingCache, FallbackEmbedder, ForestModel, ProjectScope, RankRequest,
    TrainConfig, WindowConfig,
};
use patchlink_gerrit::{strip_xssi_prefix, GerritClient, GerritConfig};
use patchlink_testkit::{change_json, StubGerrit};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_patchlink");
const QUERY_FIXTURE: &[u8] = include_bytes!("../../gerrit/tests/fixtures/query_changes.json");
const CHANGE_FIXTURE: &[u8] = include_bytes!("../../gerrit/tests/fixtures/get_change.json");

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn run_patchlink(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| format!("spawn patchlink: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "patchlink {} failed: {}",
            args.first().unwrap_or(&""),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

// 1. Metric oracle equivalence

fn oracle_rr(ranked: &[String], relevant: &HashSet<String>) -> f64 {
    for (i, key) in ranked.iter().enumerate() {
        if relevant.contains(key) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn oracle_recall(queries: &[QueryRanking], k: usize) -> f64 {
    let mut hits = 0.0;
    for q in queries {
        let mut hit = false;
        for key in q.ranked.iter().take(k) {
            hit |= q.relevant.contains(key);
        }
        if hit {
            hits += 1.0;
        }
    }
    if queries.is_empty() {
        0.0
    } else {
        hits / queries.len() as f64
    }
}

fn oracle_mrr(queries: &[QueryRanking]) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for q in queries {
        sum += oracle_rr(&q.ranked, &q.relevant);
    }
    sum / queries.len() as f64
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    for instance in 0..1000 {
        let n_queries = rng.random_range(1..=20);
        let queries: Vec<QueryRanking> = (0..n_queries)
            .map(|q| {
                let universe = rng.random_range(1..=25);
                let mut ranked: Vec<String> = (0..universe).map(|i| format!("c{i}")).collect();
                ranked.shuffle(&mut rng);
                ranked.truncate(rng.random_range(0..=universe));
                let n_rel = rng.random_range(1..=3);
                let relevant = (0..n_rel).map(|_| format!("c{}", rng.random_range(0..universe + 2))).collect();
                QueryRanking { query: format!("q{q}"), ranked, relevant }
            })
            .collect();
        ensure!(
            mean_reciprocal_rank(&queries).to_bits() == oracle_mrr(&queries).to_bits(),
            "MRR differs on instance {instance}"
        );
        for k in [1, 2, 4, 6, 8, 10] {
            ensure!(
                recall_at_k(&queries, k).to_bits() == oracle_recall(&queries, k).to_bits(),
                "Recall@{k} differs on instance {instance}"
            );
        }
        checked += 1;
    }
    Ok(format!("{checked} instances bit-equal"))
}

// 2. Feature suite

fn brute_prefix(a: &[String], b: &[String], reverse: bool) -> f64 {
    let mut best = 0.0f64;
    for p in a {
        for q in b {
            let mut ps: Vec<&str> = p.split('/').collect();
            let mut qs: Vec<&str> = q.split('/').collect();
            if reverse {
                ps.reverse();
                qs.reverse();
            }
            let mut k = 0;
            while k < ps.len() && k < qs.len() && ps[k] == qs[k] {
                k += 1;
            }
            best = best.max(k as f64 / ps.len().max(qs.len()) as f64);
        }
    }
    best
}

fn random_paths(rng: &mut ChaCha8Rng) -> Vec<String> {
    const SEGS: [&str; 6] = ["src", "lib", "a", "b", "x.py", "y.rs"];
    let n = rng.random_range(0..=4);
    let mut out: Vec<String> = (0..n)
        .map(|_| {
            let depth = rng.random_range(1..=5);
            (0..depth).map(|_| SEGS[rng.random_range(0..SEGS.len())]).collect::<Vec<_>>().join("/")
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

fn feature_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let t0 = Utc.timestamp_opt(1_700_000_000, 0).unwrap();
    for trial in 0..10_000 {
        let a = random_paths(&mut rng);
        let b = random_paths(&mut rng);
        let vals = [
            (lcp_max(&a, &b), lcp_max(&b, &a), brute_prefix(&a, &b, false)),
            (lcs_max(&a, &b), lcs_max(&b, &a), brute_prefix(&a, &b, true)),
        ];
        for (name, (ab, ba, oracle)) in ["lcp_max", "lcs_max"].iter().zip(vals) {
            ensure!(ab == oracle, "{name} {ab} != brute force {oracle} on trial {trial}: {a:?} / {b:?}");
            ensure!(ab == ba, "{name} asymmetric on trial {trial}");
            ensure!((0.0..=1.0).contains(&ab), "{name} out of bounds on trial {trial}");
        }
        let j = jaccard_files(&a, &b);
        ensure!(j == jaccard_files(&b, &a) && (0.0..=1.0).contains(&j), "jaccard on trial {trial}");
        let ident = if a.is_empty() { 0.0 } else { 1.0 };
        ensure!(
            lcp_max(&a, &a) == ident && lcs_max(&a, &a) == ident && jaccard_files(&a, &a) == ident,
            "identity case failed on trial {trial}: {a:?}"
        );

        let ta = t0 + chrono::Duration::seconds(rng.random_range(-2_000_000..2_000_000));
        let ra = ChangeRecord::new("a", "p", "s", "", ta, &a).map_err(|e| e.to_string())?;
        let rb = ChangeRecord::new("b", "p", "s", "", t0, &b).map_err(|e| e.to_string())?;
        let sim = rng.random::<f64>();
        ensure!(
            structural_features(&ra, &rb, sim) == structural_features(&rb, &ra, sim),
            "structural features asymmetric on trial {trial}"
        );
    }
    Ok("10000 trials exact".into())
}

// 3. Classifier suite

fn classifier_suite() -> Outcome {
    let blobs = blob_samples(300, 42);
    let (train_set, test_set) = blobs.split_at(200);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.path().join("m1.json"), dir.path().join("m2.json"));
    let model = train(train_set, &TrainConfig::default()).map_err(|e| e.to_string())?;
    save_model(&model, &p1).map_err(|e| e.to_string())?;
    save_model(&train(train_set, &TrainConfig::default()).map_err(|e| e.to_string())?, &p2)
        .map_err(|e| e.to_string())?;
    ensure!(
        std::fs::read(&p1).map_err(|e| e.to_string())? == std::fs::read(&p2).map_err(|e| e.to_string())?,
        "model files differ between runs"
    );

    let t1 = Tree {
        nodes: vec![
            Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
            Node::Leaf { counts: [3, 1] },
            Node::Leaf { counts: [1, 4] },
        ],
    };
    let t2 = Tree {
        nodes: vec![
            Node::Split { feature: 4, threshold: 24.0, left: 1, right: 2 },
            Node::Leaf { counts: [0, 2] },
            Node::Split { feature: 5, threshold: 3.0, left: 3, right: 4 },
            Node::Leaf { counts: [1, 1] },
            Node::Leaf { counts: [6, 0] },
        ],
    };
    let fixture = ForestModel::from_trees(vec![t1, t2], 0, DateTime::UNIX_EPOCH);
    // per-tree positive leaf frequencies: t1 in {1/4, 4/5}, t2 in {1, 1/2, 0}
    let cases: [([f64; 6], f64); 4] = [
        ([0.1, 0.0, 0.0, 0.0, 1.0, 0.0], (0.25 + 1.0) / 2.0),
        ([0.9, 0.0, 0.0, 0.0, 48.0, 2.0], (0.8 + 0.5) / 2.0),
        ([0.5, 0.0, 0.0, 0.0, 48.0, 7.0], (0.25 + 0.0) / 2.0),
        ([0.7, 0.0, 0.0, 0.0, 24.0, 9.0], (0.8 + 1.0) / 2.0),
    ];
    for (x, want) in cases {
        let got = fixture.predict_proba(&x).map_err(|e| e.to_string())?;
        ensure!(got == want, "two-tree fixture: {got} != {want} at {x:?}");
    }

    let correct = test_set
        .iter()
        .filter(|(x, y)| model.predict_features(x).map(|p| (p >= 0.5) == *y).unwrap_or(false))
        .count();
    let acc = correct as f64 / test_set.len() as f64;
    ensure!(acc >= 0.95, "held-out accuracy {acc:.3} < 0.95");
    Ok(format!("bit-identical model files, fixture exact, held-out accuracy {acc:.3}"))
}

// 4. End-to-end synthetic ranking through the CLI

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    run_patchlink(&["synth", "--seed", "7", "--changes", &p("train.jsonl"), "--links", &p("train_links.jsonl")])?;
    run_patchlink(&["synth", "--seed", "42", "--changes", &p("eval.jsonl"), "--links", &p("eval_links.jsonl")])?;
    run_patchlink(&[
        "train", "--changes", &p("train.jsonl"), "--links", &p("train_links.jsonl"), "--out", &p("model.json"),
        "--trained-at", "2024-01-01T00:00:00Z",
    ])?;
    run_patchlink(&[
        "evaluate", "--changes", &p("eval.jsonl"), "--links", &p("eval_links.jsonl"), "--model", &p("model.json"),
        "--out", &p("report.jsonl"),
    ])?;
    let report = std::fs::read_to_string(p("report.jsonl")).map_err(|e| e.to_string())?;
    let cells: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mrr = |method: &str, w: u64| {
        cells
            .iter()
            .find(|c| c["method"] == method && c["window_days"] == w)
            .and_then(|c| c["mrr"].as_f64())
            .unwrap_or(f64::NAN)
    };
    for w in [2u64, 7, 14, 30] {
        let learned = cells
            .iter()
            .find(|c| c["method"] == "learned" && c["window_days"] == w)
            .ok_or(format!("no learned cell for window {w}"))?;
        ensure!(learned["n_queries"] == 40, "window {w}: expected 40 queries, got {}", learned["n_queries"]);
        ensure!(learned["recall_at"]["1"] == 1.0, "window {w}: Recall@1 = {}", learned["recall_at"]["1"]);
        ensure!(learned["mrr"] == 1.0, "window {w}: MRR = {}", learned["mrr"]);
        let (l, c, t, f) = (mrr("learned", w), mrr("combined", w), mrr("text_only", w), mrr("file_only", w));
        ensure!(l >= c && c >= t.min(f), "window {w}: ordering violated {l} / {c} / {t} / {f}");
    }
    Ok("Recall@1 = MRR = 1.0 at every window; learned >= combined >= min(text_only, file_only)".into())
}

// 5. Window correctness

fn window_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let provider = FallbackEmbedder::default();
    let cache = EmbeddingCache::new();
    let model = ForestModel::from_trees(vec![Tree::leaf(1, 1)], 0, DateTime::UNIX_EPOCH);
    let t = 1_700_000_000i64;
    let mut returned = 0usize;
    let mut boundary_hits = 0usize;
    for pool_no in 0..10_000 {
        let days = [2u32, 7, 14, 30][rng.random_range(0..4)];
        let delta = i64::from(days) * 86_400;
        let target = ChangeRecord::new("T", "p", "target", "", Utc.timestamp_opt(t, 0).unwrap(), ["t.c"]).unwrap();
        let mut pool = vec![target.clone()];
        for i in 0..rng.random_range(0..25) {
            let offset = match rng.random_range(0..4) {
                0 => [-delta, delta, -delta - 1, delta + 1, -delta + 1, delta - 1, 0][rng.random_range(0..7)],
                _ => rng.random_range(-40 * 86_400..=40 * 86_400),
            };
            let project = if rng.random_range(0..6) == 0 { "q" } else { "p" };
            let rec = ChangeRecord::new(
                format!("c{i}"),
                project,
                format!("s{}", i % 5),
                "",
                Utc.timestamp_opt(t + offset, 0).unwrap(),
                ["f.c"],
            )
            .unwrap();
            pool.push(rec);
        }
        pool.shuffle(&mut rng);
        let expected: HashSet<&str> = pool
            .iter()
            .filter(|c| c.change_key != "T" && c.project == "p" && (c.timestamp() - t).abs() <= delta)
            .map(|c| c.change_key.as_str())
            .collect();
        let window = WindowConfig::symmetric(days).unwrap();
        let mut request = RankRequest::new(target.clone(), pool.clone(), window);
        request.top_k = pool.len().max(1);
        request.scope = ProjectScope::SameProject;
        let ranked = rank_candidates(&request, &model, &provider, &cache).map_err(|e| e.to_string())?;
        for r in &ranked {
            ensure!(r.change_key != "T", "target returned in pool {pool_no}");
            let c = pool.iter().find(|c| c.change_key == r.change_key).unwrap();
            let dt = c.timestamp() - t;
            ensure!((-delta..=delta).contains(&dt), "pool {pool_no}: {} at {dt}s outside ±{days}d", r.change_key);
            boundary_hits += usize::from(dt.abs() == delta);
        }
        let got: HashSet<&str> = ranked.iter().map(|r| r.change_key.as_str()).collect();
        ensure!(got == expected, "pool {pool_no}: returned {got:?}, expected {expected:?}");
        returned += ranked.len();
    }
    ensure!(boundary_hits > 0, "no candidate landed exactly on a boundary");
    Ok(format!("10000 pools, {returned} candidates checked, {boundary_hits} on the inclusive bound"))
}

// 6. Gerrit protocol fidelity

fn gerrit_fidelity() -> Outcome {
    ensure!(
        strip_xssi_prefix(QUERY_FIXTURE) == &QUERY_FIXTURE[5..] && QUERY_FIXTURE.starts_with(b")]}'\n"),
        "XSSI prefix not stripped bit-exactly"
    );
    let values: Vec<Value> = serde_json::from_slice(strip_xssi_prefix(QUERY_FIXTURE)).map_err(|e| e.to_string())?;
    let single: Value = serde_json::from_slice(strip_xssi_prefix(CHANGE_FIXTURE)).map_err(|e| e.to_string())?;
    let mut served = values.clone();
    served.push(json!({"project": "openstack/glance", "_number": 1, "subject": "ignored"}));
    let stub = StubGerrit::start(served);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("changes.jsonl");
    run_patchlink(&[
        "fetch", "--gerrit-url", &stub.base_url, "--project", "openstack/nova", "--since", "2024-02-01", "--until",
        "2024-04-01", "--out", &out.to_string_lossy(),
    ])?;
    let fetched = parse_changes_file(std::io::BufReader::new(std::fs::File::open(&out).map_err(|e| e.to_string())?))
        .map_err(|e| e.to_string())?;
    let resize = "When the resize claim fails the instance stays in the\nRESIZE_PREP state and its allocation is never dropped.";
    let expected = [
        (
            "910001",
            "Fix instance leak on failed resize",
            resize,
            vec!["nova/compute/manager.py", "nova/tests/unit/compute/test_compute_mgr.py"],
            "2024-03-01T12:00:00Z",
        ),
        ("910044", "Drop allocations when resize claim fails", "", vec!["nova/compute/manager.py"], "2024-03-03T09:30:05Z"),
    ];
    ensure!(fetched.len() == expected.len(), "fetched {} changes, expected 2", fetched.len());
    for (rec, (key, subject, desc, files, created)) in fetched.iter().zip(&expected) {
        ensure!(rec.change_key == *key && rec.subject == *subject, "unexpected change {}", rec.change_key);
        ensure!(rec.description == *desc, "footer stripping for {key}: {:?}", rec.description);
        ensure!(rec.files == *files, "files for {key}: {:?}", rec.files);
        ensure!(rec.created_at == DateTime::parse_from_rfc3339(created).unwrap(), "timestamp for {key}");
        ensure!(
            rec.url.as_deref() == Some(format!("{}/c/openstack/nova/+/{key}", stub.base_url).as_str()),
            "url for {key}"
        );
    }

    let single_stub = StubGerrit::start(vec![single]);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let client = GerritClient::new(GerritConfig::new(&single_stub.base_url).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let rec = rt.block_on(client.get_change("910001")).map_err(|e| e.to_string())?;
    ensure!(rec.description == resize, "get_change footer stripping: {:?}", rec.description);
    ensure!(rec.files.len() == 3 && rec.files.iter().all(|f| !f.starts_with('/')), "pseudo-files kept: {:?}", rec.files);

    let requests: Vec<_> = stub.requests().into_iter().chain(single_stub.requests()).collect();
    ensure!(requests.iter().all(|r| r.method == "GET"), "non-GET request issued");
    Ok(format!("{} requests, all GET", requests.len()))
}

// 7 and 8. Live service against a stub Gerrit

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

struct LiveService {
    _server: Server,
    _stub: StubGerrit,
    _dir: tempfile::TempDir,
    base: String,
    http: reqwest::blocking::Client,
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn start_service() -> Result<LiveService, String> {
    let target_time = Utc.timestamp_opt(1_710_000_000, 0).unwrap();
    let gerrit_time = |secs_before: i64| {
        (target_time - chrono::Duration::seconds(secs_before)).format("%Y-%m-%d %H:%M:%S%.9f").to_string()
    };
    let mut changes = vec![change_json(5000, "nova", "Fix resize claim leak", "allocation dropped", &gerrit_time(0), &[
        "nova/compute/manager.py",
    ])];
    for i in 1..=100u64 {
        let dir = ["compute", "network", "scheduler", "api"][i as usize % 4];
        changes.push(change_json(
            5000 + i,
            "nova",
            &format!("Change {i} in {dir}"),
            "Some description of the work",
            &gerrit_time(i as i64 * 3_600),
            &[&format!("nova/{dir}/mod_{i}.py"), "nova/compute/manager.py"],
        ));
    }
    for i in 1..=10u64 {
        changes.push(change_json(6000 + i, "nova", "old", "", &gerrit_time(40 * 86_400), &["nova/x.py"]));
    }
    let stub = StubGerrit::start(changes);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model_path = dir.path().join("model.json");
    let model = train(&blob_samples(200, 42), &TrainConfig::default()).map_err(|e| e.to_string())?;
    save_model(&model, &model_path).map_err(|e| e.to_string())?;

    let port = free_port();
    let child = Command::new(BIN)
        .args(["serve", "--port", &port.to_string(), "--model"])
        .arg(&model_path)
        .args(["--gerrit-url", &stub.base_url])
        .env_remove("EMBED_URL")
        .env_remove("GERRIT_USER")
        .env_remove("GERRIT_HTTP_PASSWORD")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let server = Server(child);
    let base = format!("http://127.0.0.1:{port}");
    let http = reqwest::blocking::Client::builder().timeout(Duration::from_secs(30)).build().unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        if let Ok(r) = http.get(format!("{base}/health")).send() {
            if r.status().is_success() {
                break;
            }
        }
        ensure!(Instant::now() < deadline, "service did not become healthy");
        std::thread::sleep(Duration::from_millis(50));
    }
    Ok(LiveService { _server: server, _stub: stub, _dir: dir, base, http })
}

fn predict(svc: &LiveService, body: Value) -> Result<Value, String> {
    let resp = svc.http.post(format!("{}/api/v1/predict", svc.base)).json(&body).send().map_err(|e| e.to_string())?;
    ensure!(resp.status().is_success(), "predict returned {}", resp.status());
    resp.json().map_err(|e| e.to_string())
}

fn latency(svc: &LiveService) -> Outcome {
    let all = predict(svc, json!({"change_id": "5000", "top_k": 500}))?;
    let n = all["predictions"].as_array().map_or(0, Vec::len);
    ensure!(n == 100, "expected 100 in-window candidates, got {n}");
    let mut times = Vec::new();
    for _ in 0..10 {
        let start = Instant::now();
        let body = predict(svc, json!({"change_id": "5000"}))?;
        times.push(start.elapsed());
        ensure!(body["predictions"].as_array().map_or(0, Vec::len) == 5, "expected 5 predictions");
    }
    times.sort();
    let median = (times[4] + times[5]) / 2;
    ensure!(median < Duration::from_secs(2), "median {median:?} >= 2s");
    Ok(format!("100 candidates, median {:.1} ms over 10 runs (max {:.1} ms)", ms(median), ms(times[9])))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn defaults(svc: &LiveService) -> Outcome {
    let body = predict(svc, json!({"change_id": "5000"}))?;
    ensure!(body["window_days"] == 14, "window_days = {}", body["window_days"]);
    ensure!(body["top_k"] == 5, "top_k = {}", body["top_k"]);
    let n = body["predictions"].as_array().map_or(0, Vec::len);
    ensure!(n == 5, "{n} predictions returned");
    let health: Value = svc
        .http
        .get(format!("{}/health", svc.base))
        .send()
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())?;
    ensure!(health["n_trees"] == 100 && health["status"] == "ok", "health: {health}");
    Ok("window_days=14, top_k=5 when omitted".into())
}

// runner

fn check(id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed();
    let result = match (result, budget) {
        (Ok(_), Some(b)) if elapsed >= b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
        (r, _) => r,
    };
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d.as_str()),
        Err(e) => ("FAIL", e.as_str()),
    };
    println!("{tag} [{id}] {name} ({:.2}s): {detail}", elapsed.as_secs_f64());
    result.is_ok()
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= check(1, "metric oracle equivalence", Some(secs(10)), metric_oracle);
    ok &= check(2, "feature suite", Some(secs(30)), feature_suite);
    ok &= check(3, "classifier suite", Some(secs(20)), classifier_suite);
    ok &= check(4, "end-to-end synthetic ranking", Some(secs(60)), end_to_end);
    ok &= check(5, "window correctness", None, window_property);
    ok &= check(6, "gerrit protocol fidelity", None, gerrit_fidelity);
    match start_service() {
        Ok(svc) => {
            ok &= check(7, "latency budget", None, || latency(&svc));
            ok &= check(8, "default parameters", None, || defaults(&svc));
        }
        Err(e) => {
            println!("FAIL [7] latency budget: service did not start: {e}");
            println!("FAIL [8] default parameters: service did not start: {e}");
            ok = false;
        }
    }
    if ok {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
