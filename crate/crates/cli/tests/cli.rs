use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adar_cli::commands::{self, load_data, read_embeddings};
use adar_cli::{
    cmd_eval, cmd_export_embeddings, cmd_prepare, cmd_sweep, cmd_train, cmd_verify, ConfigFile,
};
use adar_core::data::{synth_dataset, Format};
use adar_core::eval::MetricsReport;
use adar_core::numkit::{role, RngStream};
use adar_core::train::Trainer;
use tempfile::TempDir;

fn adar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adar"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// A prepared synthetic world in `dir/data`.
fn prepared_world(dir: &Path) -> PathBuf {
    let mut rng = RngStream::keyed(5, &[0, 0, role::SYNTH, 0]);
    let (set, _) = synth_dataset(60, 40, 4, 1.0, 0.7, &mut rng).unwrap();
    let raw = dir.join("raw.tsv");
    let mut buf = Vec::new();
    set.export(&mut buf, Format::Tsv).unwrap();
    fs::write(&raw, buf).unwrap();
    let data = dir.join("data");
    cmd_prepare(&raw, Format::Tsv, 0.8, 1, &data).unwrap();
    data
}

const SMALL: &str = "dim = 8\ntime_dim = 8\nT = 10\nbatch_size = 64\nepochs = 3\nlr = 0.01\n";

fn key(line: &str) -> &str {
    line.split('=').next().unwrap().trim()
}

/// Writes `SMALL` with the keys in `extra` overriding it.
fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let out = dir.join(format!("out_{name}"));
    let overridden: Vec<&str> = extra.lines().map(key).collect();
    let base: String = SMALL
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(
        &path,
        format!(
            "train_path = data/train.tsv\nout_dir = {}\n{base}{extra}",
            out.display()
        ),
    )
    .unwrap();
    path
}

fn out_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("out_{name}"))
}

#[test]
fn prepare_splits_five_interactions_four_to_one() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("five.tsv");
    fs::write(&input, "user\titem\nu1\ta\nu1\tb\nu1\tc\nu1\td\nu1\te\n").unwrap();
    let s = cmd_prepare(&input, Format::Tsv, 0.8, 3, &dir.path().join("a")).unwrap();
    assert_eq!((s.n_train, s.n_test), (4, 1));
    let lines = |p: PathBuf| fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(lines(dir.path().join("a/train.tsv")), 4);
    assert_eq!(lines(dir.path().join("a/test.tsv")), 1);

    cmd_prepare(&input, Format::Tsv, 0.8, 3, &dir.path().join("b")).unwrap();
    for f in ["train.tsv", "test.tsv", "users.idmap", "items.idmap"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn prepare_reports_missing_input_and_parse_location() {
    let dir = TempDir::new().unwrap();
    let out = adar(&[
        "prepare",
        "--input",
        "/nonexistent/x.tsv",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/x.tsv"));

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "1\t2\n3\n").unwrap();
    let err = cmd_prepare(&bad, Format::Tsv, 0.8, 0, &dir.path().join("o")).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(
        err.message.contains("bad.tsv") && err.message.contains("line 2"),
        "{err}"
    );
}

#[test]
fn train_writes_parseable_artifacts_and_eval_agrees() {
    let dir = TempDir::new().unwrap();
    prepared_world(dir.path());
    let cfg = write_config(dir.path(), "adaptive.cfg", "sampler = adar_adaptive\n");
    let art = cmd_train(&cfg).unwrap();
    let out = out_dir(dir.path(), "adaptive.cfg");
    let text = fs::read_to_string(out.join("metrics.json")).unwrap();
    let report = MetricsReport::from_json(text.trim()).unwrap();
    assert_eq!(report, art.metrics);
    for f in ["losses.csv", "encoder.ckpt", "diffusion.ckpt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(cmd_eval(&cfg, None).unwrap(), art.metrics);
}

#[test]
fn lambda_zero_matches_plain_bpr_and_zero_epochs_evaluates_init() {
    let dir = TempDir::new().unwrap();
    prepared_world(dir.path());
    let zero = cmd_train(&write_config(dir.path(), "l0.cfg", "lambda = 0\n")).unwrap();
    let plain = cmd_train(&write_config(dir.path(), "bpr.cfg", "sampler = uniform\n")).unwrap();
    assert_eq!(zero.metrics.recall, plain.metrics.recall);
    assert_eq!(zero.metrics.ndcg, plain.metrics.ndcg);

    let e0 = write_config(dir.path(), "e0.cfg", "epochs = 0\n");
    let none = cmd_train(&e0).unwrap();
    assert_eq!(none.epochs_run, 0);
    assert!(none.losses.is_empty());
    let cfg = ConfigFile::load(&e0).unwrap();
    let (split, _) = load_data(&cfg).unwrap();
    let fresh = Trainer::new(cfg.train, split.train.n_users(), split.train.n_items()).unwrap();
    assert_eq!(&none.encoder, fresh.encoder());
}

#[test]
fn exit_codes_for_config_and_numeric_failures() {
    let dir = TempDir::new().unwrap();
    prepared_world(dir.path());
    let bad = write_config(dir.path(), "bad.cfg", "learning_rate = 0.1\n");
    let out = adar(&["train", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let blowup = write_config(dir.path(), "nan.cfg", "sampler = uniform\nlr = 1e300\n");
    let out = adar(&["train", blowup.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    let ok = write_config(dir.path(), "ok.cfg", "");
    assert_eq!(code(&adar(&["train", ok.to_str().unwrap()])), 0);
}

#[test]
fn sweep_covers_the_grid_and_matches_standalone_runs() {
    let dir = TempDir::new().unwrap();
    prepared_world(dir.path());
    let cfg = write_config(
        dir.path(),
        "grid.cfg",
        "lambda_grid = 0, 0.3, 0.5\nT_grid = 8, 10\n",
    );
    let out = cmd_sweep(&cfg, false).unwrap();
    assert_eq!(out.rows.len(), 6);
    assert!(out.warnings.is_empty());
    let csv = fs::read_to_string(out_dir(dir.path(), "grid.cfg").join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("lambda,T,status,recall@10,recall@20,ndcg@10"));

    let standalone =
        cmd_train(&write_config(dir.path(), "solo.cfg", "lambda = 0\nT = 8\n")).unwrap();
    let row = out
        .rows
        .iter()
        .find(|r| r.lambda == 0.0 && r.steps == 8)
        .unwrap();
    assert_eq!(row.outcome.as_ref().unwrap(), &standalone.metrics);

    assert_eq!(cmd_sweep(&cfg, true).unwrap().rows, out.rows);
}

#[test]
fn sweep_dedups_and_records_failed_points() {
    let dir = TempDir::new().unwrap();
    prepared_world(dir.path());
    let cfg = write_config(
        dir.path(),
        "dup.cfg",
        "fixed_t = 9\nsampler = adar_fixed_t\nlambda_grid = 0.3, 0.3\nT_grid = 8, 10, 10\n",
    );
    let out = cmd_sweep(&cfg, false).unwrap();
    assert_eq!(out.rows.len(), 2);
    assert_eq!(out.warnings.len(), 2);
    assert!(out.rows[0].outcome.is_err(), "fixed_t = 9 exceeds T = 8");
    assert!(out.rows[1].outcome.is_ok());
    let csv = fs::read_to_string(out_dir(dir.path(), "dup.cfg").join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[1].starts_with("0.3,8,error: "));
    assert_eq!(lines[1].split(',').count(), lines[0].split(',').count());

    let out = adar(&["sweep", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: duplicate T value 10"));
}

#[test]
fn export_round_trips_and_rejects_bad_files() {
    let dir = TempDir::new().unwrap();
    prepared_world(dir.path());
    let art = cmd_train(&write_config(dir.path(), "exp.cfg", "")).unwrap();
    let ckpt = out_dir(dir.path(), "exp.cfg").join("encoder.ckpt");
    let emb = dir.path().join("emb");
    let (users, items) = cmd_export_embeddings(&ckpt, &emb).unwrap();
    let back = read_embeddings(&emb.join(commands::USERS_EMB)).unwrap();
    assert_eq!(back, users);
    let table = art.encoder.user_table();
    assert_eq!((back.rows, back.dim), (table.rows, table.cols));
    for (a, b) in back.data.iter().zip(&table.data) {
        assert_eq!(*a, *b as f32);
    }
    assert_eq!(
        read_embeddings(&emb.join(commands::ITEMS_EMB)).unwrap(),
        items
    );

    let cut = dir.path().join("cut.emb");
    let bytes = fs::read(emb.join(commands::ITEMS_EMB)).unwrap();
    fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let err = read_embeddings(&cut).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.message.contains("truncated"), "{err}");

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    let future = dir.path().join("future.ckpt");
    fs::write(&future, bytes).unwrap();
    let out = adar(&[
        "export-embeddings",
        "--checkpoint",
        future.to_str().unwrap(),
        "--out-dir",
        emb.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn verify_passes_for_the_default_seed() {
    let results = cmd_verify(42).unwrap();
    assert!(results.iter().all(|r| r.passed), "{results:?}");
    let again = cmd_verify(42).unwrap();
    let lines = |rs: &[adar_core::verify::CheckResult]| {
        rs.iter().map(ToString::to_string).collect::<Vec<_>>()
    };
    assert_eq!(lines(&results), lines(&again));
}
