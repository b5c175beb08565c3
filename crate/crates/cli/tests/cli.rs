use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tradeflow() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tradeflow"));
    c.current_dir(root());
    c
}

fn run(args: &[&str]) -> Output {
    tradeflow().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["simulate", "metrics", "validate", "serve", "golden"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["simulate", "--world", "missing.json"])), 2);
    assert_eq!(code(&run(&["simulate", "--variant", "baseline7"])), 2);
    assert_eq!(code(&run(&["simulate", "--seeds", "9..2"])), 2);
    assert_eq!(code(&run(&["metrics", "--in", s(tmp.path())])), 2);
    assert_eq!(code(&run(&["metrics", "--in", "no/such/dir"])), 2);
    assert_eq!(code(&run(&["validate", "--in", "no/such/file"])), 2);
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[simulate]\nseeds = \"x\"\n").unwrap();
    let o = run(&["simulate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("simulate.seeds"));
}

#[test]
fn variant_flag_selects_prompt_toggles() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--backend", "scripted", "--variant", "baseline3", "--seeds", "0..1", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let h = header(&tmp.path().join("seed-000.jsonl"));
    assert_eq!(
        h["prompt_variant"],
        json!({"explain_states": true, "explain_transitions": true, "identify_prev_state": true, "respond_prev_state": false})
    );
    assert!(tmp.path().join("seed-001.jsonl").exists());
    assert!(!tmp.path().join("seed-002.jsonl").exists());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[simulate]\nseeds = \"0..2\"\nbackend = \"scripted\"\nvariant = \"baseline1\"\nmode = \"none\"\n").unwrap();
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--variant", "sibp", "--out", s(&out), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["transcripts"], 3);
    let h = header(&out.join("seed-000.jsonl"));
    assert_eq!(h["prompt_variant"]["respond_prev_state"], true);
    assert_eq!(h["mode"], "none");
}

#[test]
fn recording_then_replaying_reproduces_the_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let (fx, a, b) = (tmp.path().join("fx"), tmp.path().join("a"), tmp.path().join("b"));
    let base = ["simulate", "--scenario", "recommend", "--seeds", "0..4"];
    let rec = run(&[&base[..], &["--backend", "scripted", "--record", s(&fx), "--out", s(&a)]].concat());
    assert_eq!(code(&rec), 0);
    let rep = run(&[&base[..], &["--backend", "replay", "--fixtures", s(&fx), "--out", s(&b)]].concat());
    assert_eq!(code(&rep), 0, "{}", String::from_utf8_lossy(&rep.stderr));
    for i in 0..5 {
        let name = format!("seed-{i:03}.jsonl");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn exhausted_replay_is_a_nonzero_exit_with_partial_transcripts() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    std::fs::create_dir_all(&fx).unwrap();
    let shipped = std::fs::read_to_string(root().join("fixtures/replay/purchase/seed-000.jsonl")).unwrap();
    let cut: Vec<&str> = shipped.lines().take(4).collect();
    std::fs::write(fx.join("seed-000.jsonl"), cut.join("\n") + "\n").unwrap();
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--seeds", "0", "--backend", "replay", "--fixtures", s(&fx), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let text = std::fs::read_to_string(out.join("seed-000.jsonl")).unwrap();
    assert!(text.contains("BackendError"));
    assert!(text.lines().count() > 2, "turns before the failure are kept");
}

#[test]
fn metrics_accepts_a_single_transcript() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("one");
    let o = run(&["simulate", "--seeds", "7", "--backend", "replay", "--out", s(&src)]);
    assert_eq!(code(&o), 0);
    std::fs::remove_file(src.join("manifest.json")).unwrap();
    let o = run(&["metrics", "--in", s(&src), "--json"]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["transcripts"], 1);
    assert_eq!(report["stcr"]["insufficient"], true);
    assert_eq!(report["transition_matrix"]["sequences"], 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("88 requested"));
}

fn reply(subtype: &str, items: Value, price: Value) -> String {
    json!({
        "last_trade_context": "",
        "context_reason": "r",
        "context_type": "TRADE",
        "context_details": {"context_subtype": subtype, "items": items, "original_price": price, "sale_price": price},
        "npc_dialogue": "Here you are."
    })
    .to_string()
}

#[test]
fn validate_lints_raw_responses() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, text: String| {
        let p = tmp.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let sword = json!([{"item_id": "basic_iron_sword", "item_name": "Basic Iron Sword", "quantity": 1, "price": 60}]);
    let clean = write("clean.json", reply("NEGOTIATE_PRICE", sword.clone(), json!(60)));
    let o = run(&["validate", "--in", s(&clean)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));

    let typo = write("typo.json", reply("SHOW_INVENTOR", sword, json!(60)));
    let o = run(&["validate", "--in", s(&typo)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("hallucinated state SHOW_INVENTOR, nearest SHOW_INVENTORY"), "{}", stdout(&o));

    let null = json!([{"item_id": "torch", "item_name": "Torch", "quantity": 2, "price": null}]);
    let nulls = write("null.json", reply("NEGOTIATE_PRICE", null, json!(6)));
    let o = run(&["validate", "--in", s(&nulls), "--json"]);
    assert_eq!(code(&o), 1);
    let findings: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(findings[0]["issues"].as_array().unwrap().iter().any(|i| i.as_str().unwrap().starts_with("ZeroOrNullPrice")));

    let garbage = write("garbage.txt", "I am not JSON".into());
    assert_eq!(code(&run(&["validate", "--in", s(&garbage)])), 1);
}

#[test]
fn validate_checks_transcript_directories() {
    let o = run(&["validate", "--in", "fixtures/golden/report-purchase"]);
    assert_eq!(code(&o), 2, "no transcripts there");

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    assert_eq!(code(&run(&["simulate", "--seeds", "0..4", "--out", s(&out)])), 0);
    let o = run(&["validate", "--in", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));

    let path = out.join("seed-002.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("OFFER_SELL\\\"", "OFFER_SEL\\\"", 1)).unwrap();
    let o = run(&["validate", "--in", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("seed-002.jsonl round"), "{}", stdout(&o));
}

#[test]
fn golden_export_matches_in_process_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["golden", "--out", s(tmp.path()), "--set", "sirr-purchase"]);
    assert_eq!(code(&o), 0);
    let o = run(&["metrics", "--in", s(&tmp.path().join("sirr-purchase")), "--json"]);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["sirr"]["rate"]["numerator"], 461);
    assert_eq!(report["sirr"]["rate"]["denominator"], 485);
    assert_eq!(code(&run(&["golden", "--out", s(tmp.path()), "--set", "nope"])), 2);
}

struct Server {
    child: std::process::Child,
    addr: String,
}

impl Server {
    fn start(data: &Path, backend: &str) -> Self {
        let mut child = tradeflow()
            .args(["serve", "--port", "0", "--backend", backend, "--data-dir", s(data)])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on http://").expect("listening line").to_string();
        Self { child, addr }
    }

    fn call(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        let mut stream = TcpStream::connect(&self.addr).unwrap();
        let body = body.map(|b| b.to_string()).unwrap_or_default();
        write!(
            stream,
            "{method} {path} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            self.addr,
            body.len()
        )
        .unwrap();
        let mut resp = String::new();
        stream.read_to_string(&mut resp).unwrap();
        let status = resp.split_whitespace().nth(1).unwrap().parse().unwrap();
        let payload = resp.split_once("\r\n\r\n").map(|(_, b)| b).unwrap_or("");
        (status, serde_json::from_str(payload).unwrap_or(Value::Null))
    }

    /// Sends SIGINT and waits for a clean exit.
    fn interrupt(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
        self.child.wait().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

#[test]
fn replay_server_plays_a_full_purchase_offline() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path(), "replay");
    assert_eq!(server.call("GET", "/healthz", None), (200, json!({"status": "ok"})));

    let (status, v) = server.call("POST", "/sessions", None);
    assert_eq!(status, 201);
    let id = v["session_id"].as_str().unwrap().to_string();
    let mut badges = Vec::new();
    for text in ["I'd like to purchase 2 torches.", "That's too expensive, any discount?", "Sounds good.", "Yes, I'll buy it."] {
        let (status, v) = server.call("POST", &format!("/sessions/{id}/messages"), Some(json!({"player_text": text})));
        assert_eq!(status, 200, "{v}");
        assert!(!v.to_string().contains("__PRICE__"));
        badges.push(v["turn"]["context_subtype"].as_str().unwrap().to_string());
    }
    assert_eq!(badges, ["OFFER_SELL", "NEGOTIATE_PRICE", "CHECK_CONFIRMATION", "CONFIRM_SELL"]);
    let (status, v) = server.call("POST", &format!("/sessions/{id}/messages"), Some(json!({"player_text": "Hello?"})));
    assert_eq!((status, v["code"].as_str()), (409, Some("session_closed")));

    assert!(server.interrupt().success());
    let file = tmp.path().join(format!("{id}.jsonl"));
    let o = run(&["validate", "--in", s(&file)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).starts_with("4 response(s) checked"));
}

#[test]
fn sessions_survive_a_server_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let first = Server::start(tmp.path(), "scripted");
    let (_, v) = first.call("POST", "/sessions", None);
    let id = v["session_id"].as_str().unwrap().to_string();
    first.call("POST", &format!("/sessions/{id}/messages"), Some(json!({"player_text": "What do you have?"})));
    let (_, before) = first.call("GET", &format!("/sessions/{id}"), None);
    assert!(first.interrupt().success());

    let second = Server::start(tmp.path(), "scripted");
    let (status, after) = second.call("GET", &format!("/sessions/{id}"), None);
    assert_eq!(status, 200);
    assert_eq!(before, after);
    assert_eq!(after["turns"].as_array().unwrap().len(), 1);
}

#[test]
fn busy_port_exits_2() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["serve", "--port", &port, "--backend", "scripted", "--data-dir", s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot listen"));
}
