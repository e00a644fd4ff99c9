use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use serde_json::Value;
use tempfile::TempDir;

fn privdiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privdiv"))
        .args(args)
        .env_remove("SECUREKL_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = privdiv(args);
    assert!(
        out.status.success(),
        "privdiv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// A generated grid with `k` rows per site.
fn grid(tmp: &TempDir, k: usize) -> PathBuf {
    let dir = tmp.path().join("data");
    ok(&["gen", "--k", &k.to_string(), "--seed", "1", "--out", s(&dir)]);
    dir
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn gen_writes_twelve_sites_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = grid(&tmp, 100);
    let b = tmp.path().join("again");
    ok(&["gen", "--k", "100", "--seed", "1", "--out", s(&b)]);
    let csvs = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 12);
    for name in ["manifest.json", "provenance.json", "site00.csv", "site11.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let header = fs::read_to_string(a.join("site00.csv")).unwrap();
    assert!(header.starts_with("f1,f2,"));
    assert!(header.lines().next().unwrap().ends_with("y,demo_gender,demo_age,demo_race"));
}

#[test]
fn invalid_config_exits_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "n_sites = 12\nlabel_noise = [0.7]\n").unwrap();
    let out = privdiv(&["gen", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(privdiv(&["score", "--bogus"]).status.code(), Some(2));
    let out = privdiv(&["score", "--data", s(tmp.path()), "--source", "x", "--role", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plain_scores_of_identical_sites_are_one_half() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("flat.toml");
    let (z, o) = ([0.0; 12], [1.0; 12]);
    fs::write(
        &cfg,
        format!("samples_per_site = 800\nshift_scale = {z:?}\ncov_scale = {o:?}\nlabel_noise = {z:?}\n"),
    )
    .unwrap();
    let data = tmp.path().join("flat");
    ok(&["gen", "--config", s(&cfg), "--out", s(&data)]);
    let out = tmp.path().join("scores.json");
    ok(&["score", "--data", s(&data), "--source", "site00", "--mode", "plain", "--out", s(&out)]);
    let scores = json(&out)["scores"].as_array().unwrap().clone();
    assert_eq!(scores.len(), 11);
    for sc in scores {
        let v = sc["value"].as_f64().unwrap();
        assert!((v - 0.5).abs() <= 0.05, "{sc}");
        assert_eq!(sc["method"], "KL_XY");
    }
}

#[test]
fn secure_tcp_parties_match_the_in_process_run() {
    let tmp = TempDir::new().unwrap();
    let data = grid(&tmp, 120);
    let common = ["score", "--data", s(&data), "--source", "site00", "--targets", "site01,site03"];
    let local = tmp.path().join("local.json");
    let mut args = common.to_vec();
    args.extend(["--mode", "secure", "--seed", "4", "--out", s(&local)]);
    ok(&args);

    let (peer, dealer) = (format!("127.0.0.1:{}", free_port()), format!("127.0.0.1:{}", free_port()));
    let bin = env!("CARGO_BIN_EXE_privdiv");
    let mut dealer_proc = Command::new(bin)
        .args(["dealer", "--listen", &dealer, "--seed", "4", "--sessions", "2"])
        .spawn()
        .unwrap();
    let outs: Vec<PathBuf> = (0..2).map(|r| tmp.path().join(format!("p{r}.json"))).collect();
    let parties: Vec<_> = (0..2)
        .map(|r| {
            let mut args: Vec<String> = common.iter().map(|a| a.to_string()).collect();
            args.extend(
                ["--mode", "secure", "--seed", "4", "--role", &r.to_string(), "--peer", &peer, "--dealer", &dealer]
                    .map(String::from),
            );
            args.extend(["--out".into(), s(&outs[r]).into()]);
            thread::spawn(move || Command::new(bin).args(&args).output().unwrap())
        })
        .collect();
    for p in parties {
        let out = p.join().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dealer_proc.wait().unwrap().success());
    let want = fs::read(&local).unwrap();
    assert_eq!(fs::read(&outs[0]).unwrap(), want);
    assert_eq!(fs::read(&outs[1]).unwrap(), want);
    let v = json(&local);
    assert_eq!(v["scores"][0]["method"], "SecureKL_XY");
    assert_eq!(v["sessions"].as_array().unwrap().len(), 2);
}

#[test]
fn select_reads_score_files_and_names_missing_candidates() {
    let tmp = TempDir::new().unwrap();
    let data = grid(&tmp, 100);
    let scores = tmp.path().join("scores.json");
    ok(&["score", "--data", s(&data), "--source", "site00", "--out", s(&scores)]);
    let sel = tmp.path().join("sel.json");
    ok(&[
        "select", "--data", s(&data), "--source", "site00", "--strategy", "private,blind", "--n", "1,2",
        "--scores", s(&scores), "--out", s(&sel),
    ]);
    let v = json(&sel);
    let sels = v["selections"].as_array().unwrap();
    assert_eq!(sels.len(), 4);

    let mut ranked: Vec<(f64, String)> = json(&scores)["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| (x["value"].as_f64().unwrap(), x["target"].as_str().unwrap().to_string()))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let private_two = sels.iter().find(|x| x["strategy"]["kind"] == "private" && x["strategy"]["n"] == 2).unwrap();
    assert_eq!(private_two["selected"], serde_json::json!([ranked[0].1, ranked[1].1]));
    assert_eq!(private_two["leakage"], "minimal");

    let again = tmp.path().join("sel2.json");
    ok(&[
        "select", "--data", s(&data), "--source", "site00", "--strategy", "private,blind", "--n", "1,2",
        "--scores", s(&scores), "--out", s(&again),
    ]);
    assert_eq!(fs::read(&sel).unwrap(), fs::read(&again).unwrap());

    let partial = tmp.path().join("partial.json");
    ok(&["score", "--data", s(&data), "--source", "site00", "--targets", "site01,site02", "--out", s(&partial)]);
    let out = privdiv(&[
        "select", "--data", s(&data), "--source", "site00", "--strategy", "private", "--scores", s(&partial),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`site03`"));
}

#[test]
fn evaluate_writes_one_summary_row_per_strategy_and_n() {
    let tmp = TempDir::new().unwrap();
    let data = grid(&tmp, 150);
    let sel = tmp.path().join("sel.json");
    ok(&[
        "select", "--data", s(&data), "--source", "site00,site02", "--strategy", "blind,demographic:age,subset:15",
        "--n", "1,2", "--out", s(&sel),
    ]);
    let out = tmp.path().join("eval");
    ok(&[
        "evaluate", "--data", s(&data), "--selections", s(&sel), "--folds", "3", "--repeats", "1", "--out", s(&out),
    ]);
    let outcomes = fs::read_to_string(out.join("outcomes.csv")).unwrap();
    let mut lines = outcomes.lines();
    assert_eq!(
        lines.next().unwrap(),
        "source,strategy,n,seed,selected,auc_baseline,auc_combined,delta,folds,repeats"
    );
    assert_eq!(lines.count(), 2 * 3 * 2);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), "strategy,n,cells,mean_delta,std_delta,improved,leakage");
    assert_eq!(lines.count(), 3 * 2);
    assert!(out.join("provenance.json").exists());
}

#[test]
fn empty_selection_evaluates_to_zero_delta() {
    let tmp = TempDir::new().unwrap();
    let data = grid(&tmp, 150);
    let sel = tmp.path().join("empty.json");
    fs::write(
        &sel,
        r#"[{"source":"site00","strategy":{"kind":"blind","n":1,"seed":0},"selected":[],
            "leakage":"zero","method":null,"k":null,"values":[]}]"#,
    )
    .unwrap();
    let out = tmp.path().join("eval");
    ok(&[
        "evaluate", "--data", s(&data), "--selections", s(&sel), "--folds", "3", "--repeats", "1", "--out", s(&out),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("outcomes.csv")).unwrap();
    let row = rdr.records().next().unwrap().unwrap();
    assert_eq!(row[7].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn consistency_of_a_score_file_with_itself_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let data = grid(&tmp, 100);
    let scores = tmp.path().join("scores.json");
    ok(&["score", "--data", s(&data), "--source", "site00,site05", "--out", s(&scores)]);
    let report = tmp.path().join("report.json");
    ok(&["consistency", "--plain", s(&scores), "--secure", s(&scores), "--out", s(&report)]);
    let r = &json(&report)["report"];
    assert_eq!(r["mean_rho"].as_f64().unwrap(), 1.0);
    assert_eq!(r["sources"].as_array().unwrap().len(), 2);

    let partial = tmp.path().join("partial.json");
    ok(&["score", "--data", s(&data), "--source", "site00", "--out", s(&partial)]);
    let out = privdiv(&["consistency", "--plain", s(&scores), "--secure", s(&partial)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let data = grid(&tmp, 100);
    let replayed_data = tmp.path().join("data2");
    ok(&["replay", s(&data), "--out", s(&replayed_data), "--verify", s(&data)]);

    let scores = tmp.path().join("scores.json");
    ok(&[
        "score", "--data", s(&data), "--source", "site02", "--targets", "site03", "--mode", "secure", "--seed", "9",
        "--out", s(&scores),
    ]);
    let again = tmp.path().join("again.json");
    ok(&["replay", s(&scores), "--out", s(&again), "--verify", s(&scores)]);

    // A tampered score file no longer verifies.
    let mut v = json(&scores);
    v["scores"][0]["value"] = serde_json::json!(0.123);
    fs::write(&scores, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    let out = privdiv(&["replay", s(&scores), "--out", s(&again), "--verify", s(&scores)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn trace_env_writes_json_lines() {
    let tmp = TempDir::new().unwrap();
    let data = grid(&tmp, 80);
    let scores = tmp.path().join("scores.json");
    let out = Command::new(env!("CARGO_BIN_EXE_privdiv"))
        .args([
            "score", "--data", s(&data), "--source", "site00", "--targets", "site01", "--mode", "secure", "--strict",
            "--out", s(&scores),
        ])
        .env("SECUREKL_LOG", "trace")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(tmp.path().join("scores.json.trace.jsonl")).unwrap();
    let events: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!events.is_empty());
    let finals = trace.lines().filter(|l| l.contains("\"final\"")).count();
    assert!(finals >= 1);
}
