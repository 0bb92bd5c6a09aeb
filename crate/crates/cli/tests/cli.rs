use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use fypaudit::classifier::RuleBased;
use fypaudit::http::HttpTransport;
use fypaudit::puppet::{run_phase, seed_account, BehaviorPolicy, Client, Role};
use fypaudit::topics::default_topics;
use fypaudit::wire::Dictionary;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fypaudit"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fypaudit")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "[experiment]\ntopics = [\"cooking\"]\nruns = 2\nphase_length = 60\ncorpus_size = 20000\n";

fn small_experiment(dir: &Path) -> PathBuf {
    let config = dir.join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let out = dir.join("results");
    let o = run(&["-c", p(&config), "experiment", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.ends_with("\tcompleted")).count(), 2, "{stdout}");
    out
}

#[test]
fn experiment_analyze_report() {
    let tmp = tempfile::tempdir().unwrap();
    let results = small_experiment(tmp.path());

    let o = run(&["analyze", "--results", p(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for table in ["prevalence.tsv", "phase2_tests.tsv", "relapse.tsv", "tally.tsv"] {
        assert!(stdout.contains(&format!("== {table}")), "{stdout}");
    }
    assert!(stdout.contains("watch_vs_implicit"));

    let tables = tmp.path().join("tables");
    let o = run(&["analyze", "--results", p(&results), "--out", p(&tables)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tables.join("tally.tsv").is_file());

    let report = tmp.path().join("report");
    let o = run(&["report", "--results", p(&results), "--out", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("relapse_implicit"));
    for f in ["tally.tsv", "curves_cooking.svg", "phase2_cooking.svg"] {
        assert!(report.join(f).is_file(), "{f} missing");
    }

    let inside = results.join("tables");
    let o = run(&["report", "--results", p(&results), "--out", p(&inside)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!inside.exists());
}

#[test]
fn exit_codes_for_bad_input() {
    let tmp = tempfile::tempdir().unwrap();

    let o = run(&["analyze", "--results", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fypaudit:"), "{}", stderr(&o));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[experiment.calibration]\nw_skip = -20.0\n").unwrap();
    let o = run(&["-c", p(&bad), "experiment", "--out", p(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["-c", p(&tmp.path().join("missing.toml")), "analyze", "--results", "."]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["experiment", "--topic", "knitting", "--out", p(&tmp.path().join("y"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    fs::write(tmp.path().join("z.txt"), "occupied").unwrap();
    let o = run(&["experiment", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corpus_writes_jsonl() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("corpus.jsonl");
    let o = run(&["corpus", "--out", p(&out), "--size", "20000", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let topics: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(topics.as_array().map(Vec::len), Some(3));
    let videos: Vec<serde_json::Value> = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(videos.len(), 20000);
    assert!(videos.iter().all(|v| v.get("video_id").is_some()));
}

struct Daemon(Child);

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

fn spawn(args: &[&str], addr: &str) -> Daemon {
    let child = bin().args(args).stdout(Stdio::null()).stderr(Stdio::null()).spawn().unwrap();
    let d = Daemon(child);
    let start = Instant::now();
    while TcpStream::connect(addr).is_err() {
        assert!(start.elapsed() < Duration::from_secs(60), "{addr} never came up");
        sleep(Duration::from_millis(50));
    }
    d
}

#[test]
fn clone_and_verify_over_http() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    fs::write(&config, "[experiment]\ncorpus_size = 20000\n").unwrap();
    let missing = tmp.path().join("none.jsonl");
    let traces = tmp.path().join("traces");

    let platform_addr = free_addr();
    let _platform = spawn(
        &["-c", p(&config), "serve", "--listen", &platform_addr, "--corpus", p(&missing), "--seed", "5"],
        &platform_addr,
    );
    let upstream = format!("http://{platform_addr}");
    let proxy_addr = free_addr();
    let _proxy =
        spawn(&["proxy", "--listen", &proxy_addr, "--upstream", &upstream, "--trace-dir", p(&traces)], &proxy_addr);

    let dict = Dictionary::default_app_log();
    let topic = &default_topics()[0];
    let via_proxy = HttpTransport::new(&format!("http://{proxy_addr}"));
    let mut original = Client::register(&via_proxy, dict.clone()).unwrap();
    seed_account(&mut original, topic, 25, &RuleBased).unwrap();
    let policy = BehaviorPolicy::new(Role::WatchTopic, &topic.topic_id);
    run_phase(&mut original, &policy, topic, &RuleBased, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let source = tmp.path().join("original.json");
    fs::write(&source, original.credentials().to_json()).unwrap();

    let direct = HttpTransport::new(&upstream);
    let mut baselines = Vec::new();
    for i in 0..2 {
        let b = Client::register(&direct, dict.clone()).unwrap();
        let path = tmp.path().join(format!("baseline{i}.json"));
        fs::write(&path, b.credentials().to_json()).unwrap();
        baselines.push(path);
    }

    let trace = traces.join(format!("{}.fltrace", original.account_id()));
    let clones = tmp.path().join("clones");
    let o = run(&[
        "clone",
        "--trace",
        p(&trace),
        "--source",
        p(&source),
        "--count",
        "2",
        "--upstream",
        &upstream,
        "--out",
        p(&clones),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut clone_creds: Vec<PathBuf> = fs::read_dir(&clones)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.extension().is_some_and(|x| x == "json") && !f.ends_with("replay.json"))
        .collect();
    clone_creds.sort();
    assert_eq!(clone_creds.len(), 2);

    let verify = |clone_args: &[PathBuf]| {
        let mut args: Vec<String> = ["verify", "--original", p(&source), "--topic", "cooking", "--upstream", &upstream]
            .map(String::from)
            .to_vec();
        args.push("--clones".into());
        args.extend(clone_args.iter().map(|c| p(c).to_string()));
        args.push("--baselines".into());
        args.extend(baselines.iter().map(|b| p(b).to_string()));
        bin().args(&args).output().unwrap()
    };
    let o = verify(&clone_creds);
    assert!(o.status.success(), "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let verdict: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(verdict["pass"], true);

    let o = verify(&[clone_creds[0].clone(), baselines[0].clone()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = run(&[
        "clone",
        "--trace",
        p(&trace),
        "--source",
        p(&source),
        "--target",
        p(&clone_creds[0]),
        "--upstream",
        &upstream,
        "--out",
        p(&tmp.path().join("again")),
    ]);
    assert_eq!(o.status.code(), Some(3), "replaying onto an already cloned account must be refused");
}
