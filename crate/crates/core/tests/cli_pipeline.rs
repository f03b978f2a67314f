use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::Value;

use xnode::explain::load_explanations;
use xnode::split::Split;

fn cli(args: &[&str]) -> i32 {
    xnode::cli::run(std::iter::once("xnode").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset with a graph, contexts and a trained model.
fn prepared(dir: &Path) {
    assert_eq!(cli(&["synth", "--n", "45", "--seed", "3", "--out", s(dir)]), 0);
    assert_eq!(cli(&["build-graph", "--data", s(dir), "--k", "4", "--out", s(&dir.join("graph.txt"))]), 0);
    assert_eq!(cli(&["extract-context", "--data", s(dir), "--out", s(&dir.join("contexts.csv"))]), 0);
    assert_eq!(
        cli(&["train", "--data", s(dir), "--epochs", "15", "--out", s(&dir.join("model.ckpt"))]),
        0
    );
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepared(d);
    let pred = d.join("pred.csv");
    assert_eq!(cli(&["predict", "--data", s(d), "--model", s(&d.join("model.ckpt")), "--out", s(&pred)]), 0);
    let pred_text = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(pred_text.lines().count(), 46);

    let expl = d.join("explanations.jsonl");
    assert_eq!(
        cli(&["explain", "--data", s(d), "--model", s(&d.join("model.ckpt")), "--role", "val", "--out", s(&expl)]),
        0
    );
    let split = Split::parse_csv(&std::fs::read_to_string(d.join("splits.csv")).unwrap(), None).unwrap();
    let records = load_explanations(&expl).unwrap();
    assert_eq!(records.iter().map(|r| r.node).collect::<Vec<_>>(), split.val);
    assert!(records.iter().all(|r| r.provider == xnode::explain::OFFLINE_ID && r.model.is_none()));

    let summary = d.join("summary.csv");
    assert_eq!(cli(&["evaluate", "--data", s(d), "--pred", s(&pred), "--method", "GCN+Reasoner", "--out", s(&summary)]), 0);
    let text = std::fs::read_to_string(&summary).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("GCN+Reasoner,"));
}

/// Answers every POST with a JSON body `{"text": "reply <n>"}` and records request bodies.
fn mock_endpoint() -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut log = log.lock().unwrap();
            log.push(serde_json::from_slice(&body).unwrap());
            let reply = format!("{{\"text\": \"reply {}\"}}", log.len());
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

#[test]
fn remote_provider_records_text_and_model() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepared(d);
    let (url, seen) = mock_endpoint();
    let out = d.join("remote.jsonl");
    let code = cli(&[
        "explain",
        "--data",
        s(d),
        "--model",
        s(&d.join("model.ckpt")),
        "--provider",
        "remote",
        "--endpoint",
        &url,
        "--llm",
        "tiny-1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let records = load_explanations(&out).unwrap();
    let bodies = seen.lock().unwrap().clone();
    assert_eq!(bodies.len(), records.len());
    assert!(!records.is_empty());
    let mut replies: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    replies.sort();
    let mut want: Vec<String> = (1..=records.len()).map(|i| format!("reply {i}")).collect();
    want.sort();
    assert_eq!(replies, want);
    for r in &records {
        assert_eq!(r.provider, format!("remote:{url}"));
        assert_eq!(r.model.as_deref(), Some("tiny-1"));
        assert!(bodies.iter().any(|b| b["prompt"] == r.prompt.as_str() && b["model"] == "tiny-1"));
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(cli(&["no-such-command"]), 1);
    assert_eq!(cli(&["build-graph", "--k", "notanumber"]), 1);
    assert_eq!(cli(&["build-graph", "--data", s(&d.join("missing")), "--out", s(&d.join("g.txt"))]), 2);
    prepared(d);
    // A remote provider without an endpoint is a configuration error.
    let code = cli(&[
        "explain",
        "--data",
        s(d),
        "--model",
        s(&d.join("model.ckpt")),
        "--provider",
        "remote",
        "--out",
        s(&d.join("e.jsonl")),
    ]);
    assert_ne!(code, 0);
    assert!(!d.join("e.jsonl").exists());
}
