use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use orderlab::experiments::CSV_HEADER;

fn orderlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orderlab"))
        .args(args)
        .env("ORDERLAB_THREADS", "2")
        .output()
        .expect("spawn orderlab")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_outputs_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = orderlab(&["train", "--task", "xor", "--prune", "dyntopk:0.5", "--seed", "7", "--steps", "200", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = stdout(&o);
        for key in ["final_loss=", "o_pre=", "o_post=", "delta_o="] {
            assert!(text.contains(key), "{text}");
        }
    }
    for name in ["checkpoint.txt", "record.jsonl"] {
        let x = fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name}");
    }
    let record = orderlab::RunRecord::from_json_line(fs::read_to_string(a.join("record.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(record.config.seed, 7);
    assert_eq!(record.config.steps, 200);
    assert_eq!(record.config.shape.hidden, 5);
    assert_eq!(record.config.prune, orderlab::PruneSpec::DynTopK(0.5));
}

#[test]
fn out_of_range_prune_is_a_usage_error() {
    let o = orderlab(&["train", "--prune", "topk:1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--prune"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = orderlab(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn measure_and_render_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = orderlab(&["train", "--task", "sine", "--steps", "50", "--seed", "3", "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = run.join("checkpoint.txt");

    let o = orderlab(&["measure", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let ord = v["orderedness"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ord));
    assert_eq!(v["shape"]["hidden"], 10);
    assert_eq!(v["permutation"].as_array().unwrap().len(), 10);

    let svg = dir.path().join("w.svg");
    let o = orderlab(&["render", s(&ckpt), "--out", s(&svg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert!(text.contains(&format!("O = {ord:.4}")));
}

#[test]
fn corrupt_checkpoint_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "orderlab-checkpoint v1\nshape outputs=1 hidden=x\n").unwrap();
    let svg = dir.path().join("w.svg");
    let o = orderlab(&["render", s(&bad), "--out", s(&svg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!svg.exists());
    assert_eq!(orderlab(&["measure", s(&bad)]).status.code(), Some(1));
}

#[test]
fn sweep_writes_the_aggregate_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1b");
    let o = orderlab(&["sweep", "table1b", "--seeds", "0..2", "--steps", "30", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 18);
    let width = CSV_HEADER.split(',').count();
    assert!(rows.iter().all(|r| r.split(',').count() == width));
    let raw = orderlab::experiments::read_raw(&out.join("raw.jsonl")).unwrap();
    assert_eq!(raw.len(), 36);
    assert!(fs::read_to_string(out.join("plot.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn sweep_from_config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("hi.conf");
    fs::write(&conf, "kind = hi\nhidden = 1..=2\niters = 1,2\nseeds = 0..2\nsteps = 20\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = orderlab(&["sweep", "--config", s(&conf), "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = orderlab(&["sweep", "hi", "--hidden", "1,2", "--iters", "1..3", "--seeds", "0,1", "--steps", "20", "--out", s(&b)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["raw.jsonl", "aggregate.csv", "plot.svg", "sweep.conf"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    fs::write(&conf, "kind = hi\nhidden = \n").unwrap();
    assert_eq!(orderlab(&["sweep", "--config", s(&conf), "--out", s(&a)]).status.code(), Some(2));
}
