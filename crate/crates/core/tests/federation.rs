mod common;

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use gridweave::components::builtin_registry;
use gridweave::federation::{run_master, run_member, stop_broadcast, Session};
use gridweave::kernel::{normalize, read_jsonl, RecordKind, StopReason, TraceRecord};
use gridweave::plan::compile;
use gridweave::scenario::{serialize_scenario, ScenarioModel};
use gridweave::Kernel;
use tempfile::TempDir;

const HOUR: u64 = 3_600_000_000;

/// The two-lab demo on fresh ports, cut to `duration_us`.
fn demo(duration_us: u64) -> ScenarioModel {
    let mut model = common::load_fixture("sv_demo.json");
    for lab in &mut model.labs {
        lab.endpoint = format!("127.0.0.1:{}", common::free_port());
    }
    model.run.duration_us = duration_us;
    model
}

fn write(dir: &TempDir, name: &str, model: &ScenarioModel) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serialize_scenario(model)).unwrap();
    path
}

fn spawn(scenario: &Path, lab: &str, out: &Path, extra: &[&str], env: &[(&str, &str)]) -> Child {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gridweave"));
    cmd.args(["run", "--lab", lab])
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("GRIDWEAVE_BIND")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.spawn().expect("spawn gridweave")
}

fn finish(child: Child) -> (Option<i32>, String) {
    let out = child.wait_with_output().unwrap();
    (out.status.code(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn trace(path: &Path) -> Vec<TraceRecord> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap()
}

fn stop_reasons(records: &[TraceRecord]) -> Vec<StopReason> {
    records
        .iter()
        .filter(|r| r.kind == RecordKind::Stop)
        .map(|r| StopReason::parse(r.reason.as_deref().unwrap()).unwrap())
        .collect()
}

#[test]
fn member_without_master_stops_with_peer_disconnect() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "demo.json", &demo(HOUR));
    let out = dir.path().join("smartest.jsonl");
    let started = Instant::now();
    let (code, stdout) = finish(spawn(&scenario, "smartest", &out, &[], &[]));
    assert_eq!(code, Some(1));
    // three attempts, one second apart
    assert!(started.elapsed() < Duration::from_secs(8));
    assert!(stdout.contains("\"reason\":\"peer_disconnect\""), "{stdout}");
    let reasons = stop_reasons(&trace(&out));
    assert_eq!(reasons, vec![StopReason::PeerDisconnect; 2]);
}

#[test]
fn losing_a_member_stops_the_master() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "demo.json", &demo(24 * HOUR));
    let master_out = dir.path().join("sesa.jsonl");
    // paced so the run is still going when the member dies
    let paced = ["--rt-factor", "3600"];
    let master = spawn(&scenario, "sesa", &master_out, &paced, &[]);
    thread::sleep(Duration::from_millis(200));
    let mut member = spawn(&scenario, "smartest", &dir.path().join("smartest.jsonl"), &paced, &[]);
    thread::sleep(Duration::from_millis(1_500));
    member.kill().unwrap();
    member.wait().unwrap();

    let started = Instant::now();
    let (code, stdout) = finish(master);
    assert!(started.elapsed() < Duration::from_secs(10));
    assert_eq!(code, Some(1), "{stdout}");
    assert!(stdout.contains("\"reason\":\"peer_disconnect\""), "{stdout}");
    let records = trace(&master_out);
    let stops: Vec<&TraceRecord> = records.iter().filter(|r| r.kind == RecordKind::Stop).collect();
    assert!(!stops.is_empty());
    for s in stops {
        assert_eq!(s.reason.as_deref(), Some("peer_disconnect"));
        assert!(s.t_us < 24 * HOUR);
    }
}

#[test]
fn mismatched_plans_abort_both_labs() {
    let dir = TempDir::new().unwrap();
    let model = demo(HOUR);
    let scenario = write(&dir, "demo.json", &model);
    let mut altered = model.clone();
    let pv = altered.components.iter_mut().find(|c| c.id == "pv").unwrap();
    pv.model.params.insert("p_peak".into(), serde_json::json!(1.0));
    let altered = write(&dir, "altered.json", &altered);

    let master = spawn(&scenario, "sesa", &dir.path().join("sesa.jsonl"), &[], &[]);
    thread::sleep(Duration::from_millis(200));
    let member = spawn(&altered, "smartest", &dir.path().join("smartest.jsonl"), &[], &[]);
    let (member_code, member_stdout) = finish(member);
    let (master_code, master_stdout) = finish(master);
    assert_eq!(member_code, Some(1), "{member_stdout}");
    assert_eq!(master_code, Some(1), "{master_stdout}");
    assert!(member_stdout.contains("operator_abort"), "{member_stdout}");
    assert!(master_stdout.contains("operator_abort"), "{master_stdout}");
}

#[test]
fn bind_override_is_honoured() {
    let dir = TempDir::new().unwrap();
    let model = demo(HOUR);
    let port = model.labs[0].endpoint.rsplit_once(':').unwrap().1.to_string();
    let scenario = write(&dir, "demo.json", &model);
    let bind = format!("0.0.0.0:{port}");
    let master = spawn(&scenario, "sesa", &dir.path().join("sesa.jsonl"), &[], &[("GRIDWEAVE_BIND", &bind)]);
    thread::sleep(Duration::from_millis(200));
    let member = spawn(&scenario, "smartest", &dir.path().join("smartest.jsonl"), &[], &[]);
    assert_eq!(finish(member).0, Some(0));
    assert_eq!(finish(master).0, Some(0));
}

#[test]
fn stopping_one_experiment_leaves_the_other_running() {
    let mut a = demo(HOUR);
    a.run.experiment_id = "exp-a".into();
    let mut b = demo(2 * HOUR);
    b.run.experiment_id = "exp-b".into();
    let (ca, cb) = (compile(&a).unwrap(), compile(&b).unwrap());

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let member = {
        let (ca, cb, run_a, run_b) = (ca.clone(), cb.clone(), a.run.clone(), b.run.clone());
        thread::spawn(move || {
            let session = Session::connect(&addr, 3, Duration::from_millis(100), Duration::from_secs(5)).unwrap();
            let mut la = session.register("exp-a").unwrap();
            let mut lb = session.register("exp-b").unwrap();
            la.handshake("smartest", Duration::from_secs(5)).unwrap();
            lb.handshake("smartest", Duration::from_secs(5)).unwrap();
            let ta = thread::spawn(move || {
                let plan = &ca.plans["smartest"];
                run_member(Kernel::start([plan], &builtin_registry(), &run_a).unwrap(), plan, la)
            });
            let plan = &cb.plans["smartest"];
            let tb = run_member(Kernel::start([plan], &builtin_registry(), &run_b).unwrap(), plan, lb);
            (ta.join().unwrap(), tb)
        })
    };

    let session = Session::accept(&listener, Instant::now() + Duration::from_secs(5)).unwrap();
    let mut la = session.register("exp-a").unwrap();
    let mut lb = session.register("exp-b").unwrap();
    la.handshake("sesa", Duration::from_secs(5)).unwrap();
    lb.handshake("sesa", Duration::from_secs(5)).unwrap();
    let master_b = {
        let run = b.run.clone();
        let cb = cb.clone();
        thread::spawn(move || {
            let kernel = Kernel::start([&cb.plans["sesa"]], &builtin_registry(), &run).unwrap();
            run_master(kernel, &cb, "sesa", BTreeMap::from([("smartest".to_string(), lb)])).0
        })
    };
    let mut links_a = BTreeMap::from([("smartest".to_string(), la)]);
    assert_eq!(stop_broadcast(&mut links_a, "operator_abort"), Vec::<String>::new());

    let trace_b = master_b.join().unwrap();
    let (member_a, member_b) = member.join().unwrap();
    assert!(stop_reasons(&member_a.records).iter().all(|r| *r == StopReason::OperatorAbort));
    assert!(!member_a.outcome.completed());

    assert!(trace_b.outcome.completed() && member_b.outcome.completed());
    let mut federated = trace_b.records;
    federated.extend(member_b.records);
    assert!(stop_reasons(&federated).iter().all(|r| *r == StopReason::Completed));
    normalize(&mut federated);
    let mut solo = Kernel::start(cb.plans.values(), &builtin_registry(), &b.run).unwrap().run_to_completion().records;
    normalize(&mut solo);
    assert_eq!(federated, solo);
}
