use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcn::export::parse_pgm;

const TINY: &str = r#"{
  "d": 8, "h": 2, "k": 1, "l": 2, "t": 4, "e": 4, "c": 2,
  "n_objects": 4, "n_attributes": 4, "layer_attn_hidden": 8, "head_hidden": 8,
  "data": {"objects_per_image": 3, "n_train": 32, "n_test": 16},
  "train": {"max_epochs": 2, "batch_size": 8}
}"#;

fn dcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcn"))
        .args(args)
        .env("DCN_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    fs::write(&path, TINY).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn malformed_and_invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"d\": 32,").unwrap();
    let o = dcn(&["--config", s(&bad), "count-params"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    fs::write(&bad, r#"{"d": 32, "h": 3}"#).unwrap();
    let o = dcn(&["--config", s(&bad), "count-params"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`h`"), "{}", stderr(&o));

    fs::write(&bad, r#"{"depth": 3}"#).unwrap();
    assert_eq!(dcn(&["--config", s(&bad), "count-params"]).status.code(), Some(2));

    let o = dcn(&["--set", "t=15", "count-params"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`t`"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_failure_exits_3() {
    let o = dcn(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
    let o = dcn(&["gradcheck", "--tol", "1e-300"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn full_scale_counts_are_ordered() {
    let o = dcn(&["count-params", "--full-scale"]);
    assert!(o.status.success());
    let totals: Vec<u64> = stdout(&o)
        .lines()
        .filter(|l| l.starts_with("head "))
        .map(|l| l.split_whitespace().nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 3);
    assert!(totals[0] < totals[1] && totals[1] < totals[2], "{totals:?}");
}

#[test]
fn train_eval_export_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let o = dcn(&["--config", s(&cfg), "train", "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let best = stdout(&o)
        .lines()
        .last()
        .unwrap()
        .split_whitespace()
        .nth(3)
        .unwrap()
        .to_string();
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("epoch,step,lr,loss,accuracy"));
    assert_eq!(metrics.lines().count(), 3);

    let ckpt = run.join("checkpoint");
    let o = dcn(&["eval", "--checkpoint", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with(&format!("accuracy {best} ")), "{} vs {best}", stdout(&o));

    let o = dcn(&["--set", "l=3", "eval", "--checkpoint", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(2));

    let attn = dir.path().join("attn");
    let o = dcn(&["export-attn", "--checkpoint", s(&ckpt), "--count", "2", "--out", s(&attn)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for l in 0..2 {
        for map in ["a_q", "a_v"] {
            let stem = attn.join("sample001").join(format!("layer{l}_{map}"));
            let csv = fs::read_to_string(stem.with_extension("csv")).unwrap();
            let rows: Vec<Vec<f64>> = csv
                .lines()
                .map(|r| r.split(',').map(|x| x.parse().unwrap()).collect())
                .collect();
            let bytes = fs::read(stem.with_extension("pgm")).unwrap();
            let header = format!("P5\n{} {}\n255\n", rows[0].len(), rows.len());
            assert!(bytes.starts_with(header.as_bytes()));
            let (w, _, px) = parse_pgm(&bytes).unwrap();
            for (r, row) in rows.iter().enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                assert_eq!(px[r * w + arg], 255);
                assert_eq!(*px[r * w..(r + 1) * w].iter().max().unwrap(), 255);
            }
        }
    }
    assert!(attn.join("samples.csv").exists());

    let stats = dir.path().join("stats");
    let o = dcn(&["layer-stats", "--checkpoint", s(&ckpt), "--out", s(&stats)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(stats.join("layer_stats.csv")).unwrap();
    for line in csv.lines() {
        assert_eq!(line.split(',').count(), 9, "{line}");
    }
}

#[test]
fn training_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut logs = Vec::new();
    for (i, seed) in ["5", "5", "6"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = dcn(&["--config", s(&cfg), "--seed", seed, "train", "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        logs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert_ne!(logs[0], logs[2]);
}

#[test]
fn ablation_grid_writes_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("ablate");
    let o = dcn(&["--config", s(&cfg), "--set", "train.max_epochs=1", "--set", "l=3", "ablate", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 17);
    let starred: Vec<&str> = rows
        .iter()
        .filter(|r| r.split(',').nth(1).unwrap().ends_with('*'))
        .map(|r| r.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(starred.len(), 6);
    assert!(starred.iter().all(|a| *a == starred[0]), "{starred:?}");
}
