use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gridsa_core::analytics::CaseArchive;
use gridsa_core::engine::EngineConfig;
use gridsa_core::fixtures::{ring_area, rocof_plus_area, synthetic_network, SyntheticSpec};
use gridsa_core::netmodel::Snapshot;
use gridsa_core::screener::CycleReport;
use gridsa_server::{start, ServerError};

fn config(root: &Path) -> EngineConfig {
    let mut cfg = EngineConfig {
        workers: 2,
        archive: root.join("archive"),
        inbox: root.join("inbox"),
        inbox_poll_s: 0.05,
        cycle_period_s: 30.0,
        budget_s: 30.0,
        listen: "127.0.0.1:0".into(),
        ..EngineConfig::default()
    };
    cfg.simulation.frequency.t_end = 4.0;
    cfg.simulation.angle.t_end = 3.0;
    cfg
}

fn drop_snapshot(inbox: &Path, name: &str, snap: &Snapshot) {
    std::fs::create_dir_all(inbox).unwrap();
    let tmp = inbox.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, snap.to_json()).unwrap();
    std::fs::rename(tmp, inbox.join(name)).unwrap();
}

fn url(base: std::net::SocketAddr, path: &str) -> String {
    format!("http://{base}{path}")
}

fn get(base: std::net::SocketAddr, path: &str) -> (u16, String) {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let mut resp = agent.get(&url(base, path)).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_string().unwrap())
}

fn post(base: std::net::SocketAddr, path: &str, body: &str) -> (u16, String) {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let mut resp = agent
        .post(&url(base, path))
        .header("content-type", "application/json")
        .send(body)
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_string().unwrap())
}

fn wait_for_cycle(base: std::net::SocketAddr, ts: i64, within: Duration) -> CycleReport {
    let start = Instant::now();
    loop {
        let (code, body) = get(base, &format!("/cycles/{ts}"));
        if code == 200 {
            return serde_json::from_str(&body).unwrap();
        }
        assert!(start.elapsed() < within, "cycle {ts} not served within {within:?}");
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn hash_dir(dir: &Path) -> String {
    use sha2::{Digest, Sha256};
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|d| d.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn inbox_snapshot_is_served_and_what_if_leaves_archive_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let server = start(cfg.clone()).unwrap();
    let addr = server.addr();
    assert_eq!(get(addr, "/cycles/latest").0, 404);

    let snap = rocof_plus_area();
    drop_snapshot(&cfg.inbox, "feed-1.json", &snap);
    let report = wait_for_cycle(addr, snap.timestamp, Duration::from_secs_f64(cfg.cycle_period_s));
    assert_eq!(report.totals.insecure, 1);
    let (code, latest) = get(addr, "/cycles/latest");
    assert_eq!(code, 200);
    assert_eq!(serde_json::from_str::<CycleReport>(&latest).unwrap(), report);
    assert_eq!(names(&cfg.inbox.join("processed")), vec!["feed-1.json"]);

    let (code, body) = get(addr, &format!("/cycles/{}/cases?status=insecure", snap.timestamp));
    assert_eq!(code, 200);
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["cases"].as_array().unwrap().len(), 1);
    assert_eq!(v["cases"][0]["id"], "hvdc:HVDC_X");
    assert_eq!(v["ranking"][0]["id"], "hvdc:HVDC_X");
    assert_eq!(get(addr, "/cycles/1/cases").0, 404);
    assert_eq!(get(addr, &format!("/cycles/{}/cases?status=odd", snap.timestamp)).0, 400);

    let (code, body) = get(addr, "/policy/latest");
    assert_eq!(code, 200);
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["policy"]["profile"], "2023");

    let (code, body) = get(addr, "/analytics/summary");
    assert_eq!(code, 200);
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["rows"][2]["constraint"], "RoCoF");
    assert_eq!(v["rows"][2]["total_binding_cases"], 1);
    assert_eq!(get(addr, "/analytics/summary?from=1&to=2").0, 422);
    assert_eq!(get(addr, "/analytics/correlations?var=inertia&flag=Nadir").0, 422);
    let (code, csv) = get(addr, "/analytics/scatter?x=demand&y=wind&flag=zenith&format=csv");
    assert_eq!(code, 200);
    assert_eq!(csv.lines().nth(1), Some("ts,x,y,insecure"));
    assert_eq!(get(addr, "/analytics/scatter?x=wind&y=wind&flag=zenith").0, 422);

    let archive_hash = hash_dir(&cfg.archive);
    let body = format!(
        r#"{{"base":{{"timestamp":{}}},"modifications":[
            {{"action":"commit_machine","machine":"GSPARE","p_set":300}},
            {{"action":"set_ibr_output","unit":"W1","p":0}},
            {{"action":"set_ibr_output","unit":"W2","p":0}}]}}"#,
        snap.timestamp
    );
    let (code, resp) = post(addr, "/whatif", &body);
    assert_eq!(code, 200, "{resp}");
    let w: CycleReport = serde_json::from_str(&resp).unwrap();
    assert!(w.ephemeral);
    assert_eq!(w.provenance.unwrap().modifications.len(), 3);
    assert_eq!(w.totals.insecure, 0);
    assert_eq!(hash_dir(&cfg.archive), archive_hash);
    let index: Vec<serde_json::Value> = serde_json::from_str(&get(addr, "/cycles").1).unwrap();
    assert_eq!(index.len(), 1);

    assert_eq!(post(addr, "/whatif", r#"{"base":{"timestamp":5}}"#).0, 404);
    assert_eq!(post(addr, "/whatif", "{").0, 400);
    let bad = format!(
        r#"{{"base":{{"timestamp":{}}},"modifications":[{{"action":"set_machine_dispatch","machine":"NOPE","p_set":1}}]}}"#,
        snap.timestamp
    );
    assert_eq!(post(addr, "/whatif", &bad).0, 422);

    server.shutdown().unwrap();
    assert_eq!(hash_dir(&cfg.archive), archive_hash);
}

#[test]
fn newest_queued_snapshot_wins_and_stale_ones_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let mut a = ring_area(3, 3_000.0, 0.0);
    a.timestamp = 200;
    let mut b = a.clone();
    b.timestamp = 300;
    drop_snapshot(&cfg.inbox, "b.json", &b);
    drop_snapshot(&cfg.inbox, "a.json", &a);
    std::fs::write(cfg.inbox.join("junk.json"), "{not json").unwrap();

    let server = start(cfg.clone()).unwrap();
    let addr = server.addr();
    wait_for_cycle(addr, 300, Duration::from_secs(30));
    assert_eq!(get(addr, "/cycles/200").0, 404);
    assert_eq!(names(&cfg.inbox.join("superseded")), vec!["a.json"]);
    assert_eq!(names(&cfg.inbox.join("processed")), vec!["b.json"]);
    assert!(names(&cfg.inbox.join("rejected")).contains(&"junk.json".to_string()));

    let mut stale = a.clone();
    stale.timestamp = 250;
    drop_snapshot(&cfg.inbox, "stale.json", &stale);
    let start_t = Instant::now();
    while !cfg.inbox.join("rejected").join("stale.json").exists() {
        assert!(start_t.elapsed() < Duration::from_secs(10));
        std::thread::sleep(Duration::from_millis(20));
    }
    let note = std::fs::read_to_string(cfg.inbox.join("rejected").join("stale.json.error.txt")).unwrap();
    assert!(note.contains("not newer"), "{note}");
    server.shutdown().unwrap();
}

#[test]
fn shutdown_mid_cycle_persists_the_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.workers = 1;
    let server = start(cfg.clone()).unwrap();
    let addr = server.addr();
    let snap = synthetic_network(&SyntheticSpec {
        ibr_units: 60,
        ..SyntheticSpec::default()
    });
    drop_snapshot(&cfg.inbox, "big.json", &snap);
    let t0 = Instant::now();
    loop {
        let (_, body) = get(addr, "/health");
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        if v["service"]["in_flight"] == snap.timestamp {
            break;
        }
        assert!(t0.elapsed() < Duration::from_secs(10), "cycle never started: {body}");
        std::thread::sleep(Duration::from_millis(5));
    }
    server.shutdown().unwrap();
    let archive = CaseArchive::open(&cfg.archive).unwrap();
    let r = archive.get(snap.timestamp).expect("in-flight cycle persisted");
    assert!(r.totals.cases > 100);
    assert_eq!(names(&cfg.inbox.join("processed")), vec!["big.json"]);
}

#[test]
fn startup_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut cfg = config(dir.path());
    cfg.listen = holder.local_addr().unwrap().to_string();
    let e = start(cfg.clone()).err().unwrap();
    assert!(matches!(e, ServerError::Bind { .. }));
    assert_eq!(e.exit_code(), 3);

    cfg.listen = "127.0.0.1:0".into();
    cfg.budget_s = 400.0;
    let e = start(cfg).err().unwrap();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("budget_s"), "{e}");
}
