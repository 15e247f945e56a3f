use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn vulnscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vulnscan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vulnscan(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn preprocess_merges_push_and_drops_operand() {
    let dir = tempfile::tempdir().unwrap();
    let hex = dir.path().join("code.hex");
    fs::write(&hex, "6001\n").unwrap();
    assert_eq!(ok(&["preprocess", p(&hex)]), "60\n");
    fs::write(&hex, "0x6080604052fe0c").unwrap();
    assert_eq!(ok(&["preprocess", p(&hex)]), "60 60 52 fe xx\n");
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = vulnscan(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = vulnscan(&["preprocess", "/nonexistent/code.hex"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let dir = tempfile::tempdir().unwrap();
    let hex = dir.path().join("bad.hex");
    fs::write(&hex, "60G1").unwrap();
    let out = vulnscan(&["preprocess", p(&hex)]);
    assert!(!out.status.success());
}

#[test]
fn label_applies_arbitration() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("profiles.csv");
    let reports = dir.path().join("reports.csv");
    let bytecodes = dir.path().join("bytecodes.csv");
    let out = dir.path().join("corpus.csv");
    fs::write(&profiles, "tool,class_id,f1\noyente,1,0.9\noyente,2,0.2\nmythril,1,0.5\nmythril,2,0.8\n").unwrap();
    fs::write(
        &reports,
        "tool,address,class_id,verdict\noyente,0xa,1,1\noyente,0xa,2,1\nmythril,0xa,1,0\nmythril,0xa,2,0\n",
    )
    .unwrap();
    fs::write(&bytecodes, "address,bytecode\n0xa,0x600160020a\n0xb,0x00\n").unwrap();
    ok(&["label", "--profiles", p(&profiles), "--reports", p(&reports), "--bytecodes", p(&bytecodes),
        "--out", p(&out), "--classes", "2"]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text, "address,bytecode,CALLSTACK,REENTRANCY\n0xa,60 60 0a,1,0\n");
}

fn train_small(dir: &Path, classes: &str) -> std::path::PathBuf {
    let corpus = dir.join(format!("corpus{classes}.csv"));
    ok(&["synth", "--out", p(&corpus), "--classes", classes, "--per-class", "40", "--clean", "40",
        "--min-len", "12", "--max-len", "32", "--seed", "4"]);
    corpus
}

#[test]
fn train_eval_predict_and_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_small(dir.path(), "2");
    let model_dir = dir.path().join("model");
    ok(&["train", "--corpus", p(&corpus), "--model-dir", p(&model_dir), "--global-epochs", "2",
        "--chunk-size", "32", "--max-seq-len", "32", "--gru-hidden", "8", "--seed", "1"]);
    for f in ["model.bin", "vocab.tsv", "history.csv", "validation.csv", "test.csv"] {
        assert!(model_dir.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(model_dir.join("history.csv")).unwrap();
    assert!(history.starts_with("global_epoch,local_epoch,chunk,train_loss"));

    let report = dir.path().join("report.csv");
    let printed = ok(&["eval", "--model-dir", p(&model_dir), "--out", p(&report)]);
    assert!(printed.contains("weighted F1"));
    let report = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "class,precision,recall,f1,fpr,fnr");
    assert!(lines[1].starts_with("CALLSTACK,") && lines[2].starts_with("REENTRANCY,"));
    assert!(lines[3].starts_with("__all__,"));

    let hex = dir.path().join("code.hex");
    fs::write(&hex, "0x5a54f115").unwrap();
    let doc = ok(&["predict", p(&hex), "--model-dir", p(&model_dir)]);
    let v: serde_json::Value = serde_json::from_str(doc.trim()).unwrap();
    assert_eq!(v["prediction"].as_object().unwrap().len(), 2);
    assert!(v["prediction_time in_second"].is_string());
    let raw = ok(&["predict", p(&hex), "--model-dir", p(&model_dir), "--raw"]);
    assert!(raw.starts_with("{\"prediction\": {\"CALLSTACK\": "));

    // three-class corpus extends the two trained classes
    let wider = train_small(dir.path(), "3");
    let grown = dir.path().join("grown");
    ok(&["transfer", "--model-dir", p(&model_dir), "--corpus", p(&wider), "--out-dir", p(&grown),
        "--chunk-size", "32", "--max-seq-len", "32"]);
    let doc = ok(&["predict", p(&hex), "--model-dir", p(&grown)]);
    let v: serde_json::Value = serde_json::from_str(doc.trim()).unwrap();
    assert_eq!(v["prediction"].as_object().unwrap().len(), 3);
    let before: serde_json::Value =
        serde_json::from_str(ok(&["predict", p(&hex), "--model-dir", p(&model_dir), "--raw"]).trim()).unwrap();
    let after: serde_json::Value =
        serde_json::from_str(ok(&["predict", p(&hex), "--model-dir", p(&grown), "--raw"]).trim()).unwrap();
    assert_eq!(before["prediction"]["CALLSTACK"], after["prediction"]["CALLSTACK"]);

    // transfer needs new classes
    let out = vulnscan(&["transfer", "--model-dir", p(&model_dir), "--corpus", p(&corpus), "--out-dir", p(&grown)]);
    assert!(!out.status.success());
}

fn http(addr: &str, request: &str) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.write_all(request.as_bytes()).unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    let status = response[9..12].parse().unwrap();
    let body = response.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

fn post(addr: &str, body: &str) -> (u16, String) {
    http(
        addr,
        &format!(
            "POST /predict HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
    )
}

#[test]
fn serve_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = train_small(dir.path(), "2");
    let model_dir = dir.path().join("model");
    ok(&["train", "--corpus", p(&corpus), "--model-dir", p(&model_dir), "--max-seq-len", "32", "--gru-hidden", "8"]);

    let mut child = Command::new(env!("CARGO_BIN_EXE_vulnscan"))
        .args(["serve", "--model-dir", p(&model_dir), "--bind", "127.0.0.1:0"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();

    let (status, body) = http(&addr, &format!("GET /config HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"));
    assert_eq!(status, 200);
    let config: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(config["classes"], serde_json::json!(["CALLSTACK", "REENTRANCY"]));
    assert_eq!(config["max_sequence_length"], 32);

    let (status, body) = post(&addr, r#"{"smart_contract": "0x6060604052"}"#);
    assert_eq!(status, 200);
    assert!(body.starts_with(r#"{"prediction": {"CALLSTACK": "#), "{body}");
    assert!(body.contains(r#""prediction_time in_second": ""#));

    let (status, again) = post(&addr, r#"{"smart_contract": "0x6060604052"}"#);
    assert_eq!(status, 200);
    let probs = |b: &str| serde_json::from_str::<serde_json::Value>(b).unwrap()["prediction"].clone();
    assert_eq!(probs(&body), probs(&again));

    for bad in [r#"{"smart_contract": "0x6G"}"#, r#"{"code": "60"}"#, "not json"] {
        let (status, body) = post(&addr, bad);
        assert_eq!(status, 400, "{bad}");
        assert!(body.contains("error"));
    }
    child.kill().unwrap();
    child.wait().unwrap();
}
