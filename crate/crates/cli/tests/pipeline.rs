use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn mmrec(config: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_mmrec"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(config: &Path, args: &[&str]) -> Run {
    let r = mmrec(config, args);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
    r
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn small_synthetic(extra: Value) -> Value {
    let mut cfg = json!({
        "dataset": {
            "preset": "synthetic",
            "synthetic": {"n_users": 50, "n_items": 60, "min_items_per_user": 8, "max_items_per_user": 12}
        },
        "split": {"seeds": [0], "eval_negatives": 30},
        "embedding_backend": {"kind": "hash", "dim": 16},
        "combos": ["x_reflect"],
        "train": {"batch_size": 64, "hidden": 8, "max_epochs": 4, "eval_every": 2}
    });
    if let (Some(base), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            base.insert(k.clone(), v.clone());
        }
    }
    cfg
}

fn mtime(path: &Path) -> std::time::SystemTime {
    fs::metadata(path).unwrap().modified().unwrap()
}

fn write_movielens(dir: &Path) {
    let mut ratings = String::new();
    for u in 1..=30 {
        for m in 1..=20 {
            if (u * 7 + m * 3) % 5 != 0 {
                ratings.push_str(&format!("{u}::{m}::{}::97830{u:02}{m:02}\n", 1 + (u + m) % 5));
            }
        }
    }
    fs::write(dir.join("ratings.dat"), ratings).unwrap();
    let mut posters = String::from("movie_id,image_ref\n");
    let mut descriptions = String::from("movie_id,description\n");
    for m in 1..=20 {
        posters.push_str(&format!("{m},https://example.com/posters/{m}.jpg\n"));
        descriptions.push_str(&format!("{m},\"A film numbered {m}, with a plot\"\n"));
    }
    fs::write(dir.join("posters.csv"), posters).unwrap();
    fs::write(dir.join("descriptions.csv"), descriptions).unwrap();
}

#[test]
fn movielens_ingest_writes_five_splits_and_rerun_is_a_noop() {
    let dir = tempfile::tempdir().unwrap();
    write_movielens(dir.path());
    let config = write_config(
        dir.path(),
        &json!({
            "dataset": {
                "preset": "movielens",
                "ratings": "ratings.dat",
                "posters": "posters.csv",
                "descriptions": "descriptions.csv"
            }
        }),
    );
    ok(&config, &["ingest"]);
    let out = dir.path().join("out");
    for s in 0..5 {
        assert!(out.join(format!("splits/seed_{s}/interactions.jsonl")).is_file());
    }
    let manifest = out.join("manifests/ingest.json");
    let before = (fs::read(&manifest).unwrap(), mtime(&manifest));
    let rerun = ok(&config, &["ingest"]);
    assert!(rerun.stdout.contains("up to date"), "{}", rerun.stdout);
    assert_eq!((fs::read(&manifest).unwrap(), mtime(&manifest)), before);
}

#[test]
fn missing_ratings_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_movielens(dir.path());
    let config = write_config(
        dir.path(),
        &json!({
            "dataset": {
                "preset": "movielens",
                "ratings": "nope/ratings.dat",
                "posters": "posters.csv",
                "descriptions": "descriptions.csv"
            }
        }),
    );
    let r = mmrec(&config, &["ingest"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("nope/ratings.dat"), "{}", r.stderr);
}

#[test]
fn eval_before_train_reports_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_synthetic(json!({})));
    for cmd in ["ingest", "enrich", "embed", "repr"] {
        ok(&config, &[cmd]);
    }
    let r = mmrec(&config, &["eval"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("missing checkpoint"), "{}", r.stderr);
}

#[test]
fn full_pipeline_with_grid_search() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_synthetic(json!({})));
    for cmd in ["ingest", "enrich", "embed", "repr", "grid", "train"] {
        ok(&config, &[cmd]);
    }
    let out = dir.path().join("out");
    let reports = fs::read_dir(out.join("grid/x_reflect"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("report_"))
        .count();
    assert_eq!(reports, 9);
    let best: Value = serde_json::from_slice(&fs::read(out.join("grid/x_reflect/best_hp.json")).unwrap()).unwrap();
    let trained: Value =
        serde_json::from_slice(&fs::read(out.join("train/x_reflect/seed_0/params.json")).unwrap()).unwrap();
    assert_eq!(trained["hyperparams"]["learning_rate"], best["learning_rate"]);
    assert_eq!(trained["hyperparams"]["dropout"], best["dropout"]);

    let eval = ok(&config, &["eval", "--table"]);
    assert!(
        eval.stdout.lines().any(|l| l == "method,precision@10,recall@10,ndcg@10"),
        "{}",
        eval.stdout
    );
    for row in ["x_reflect,", "popularity,", "random,"] {
        assert!(eval.stdout.contains(row), "{}", eval.stdout);
    }
    ok(&config, &["analyze", "--strategies", "xr_combined"]);
    let csv = fs::read_to_string(out.join("analysis/similarity.csv")).unwrap();
    assert!(csv.starts_with("item_id,reference_sim,xr_combined\n"));
    // The flag override differs from the config, so analysis counts as stale.
    assert_eq!(mmrec(&config, &["report"]).code, 2);
    ok(&config, &["--force", "report"]);
    assert!(out.join("report/report.md").is_file());

    // Everything is current now.
    for cmd in ["ingest", "enrich", "embed", "repr", "grid", "train"] {
        assert!(ok(&config, &[cmd]).stdout.contains("up to date"), "{cmd} reran");
    }
}

#[test]
fn stale_upstream_is_refused_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_synthetic(json!({})));
    ok(&config, &["ingest"]);
    let changed = small_synthetic(json!({"split": {"seeds": [0], "eval_negatives": 20}}));
    write_config(dir.path(), &changed);
    let r = mmrec(&config, &["enrich"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("stale"), "{}", r.stderr);
    ok(&config, &["--force", "enrich"]);
}

#[test]
fn dry_run_has_no_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_synthetic(json!({})));
    let r = ok(&config, &["--dry-run", "ingest"]);
    assert!(r.stdout.contains("would run"), "{}", r.stdout);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn locked_output_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_synthetic(json!({})));
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/.lock"), "1").unwrap();
    let r = mmrec(&config, &["ingest"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("locked"), "{}", r.stderr);
}

#[test]
fn invalid_config_and_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &small_synthetic(json!({"combos": ["no_such_combo"]})));
    assert_eq!(mmrec(&bad, &["enrich"]).code, 2);
    assert_eq!(mmrec(&dir.path().join("absent.json"), &["ingest"]).code, 2);
    assert_eq!(mmrec(&bad, &["frobnicate"]).code, 2);
}

#[test]
fn seed_flag_changes_training() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_synthetic(json!({})));
    for cmd in ["ingest", "enrich", "embed", "repr", "train"] {
        ok(&config, &[cmd]);
    }
    let params = dir.path().join("out/train/x_reflect/seed_0/params.bin");
    let first = fs::read(&params).unwrap();
    ok(&config, &["--seed", "99", "train"]);
    assert_ne!(fs::read(&params).unwrap(), first);
    // Evaluating under the original seed sees a stale model.
    assert_eq!(mmrec(&config, &["eval"]).code, 2);
    ok(&config, &["--seed", "99", "eval"]);
}
