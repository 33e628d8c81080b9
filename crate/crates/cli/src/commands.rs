use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use adar_core::data::{split_train_test, Format, IdMap, InteractionSet, SplitDataset};
use adar_core::encoder::{Encoder, EncoderModel};
use adar_core::eval::{evaluate, MetricsReport};
use adar_core::export::EmbeddingTable;
use adar_core::numkit::{role, RngStream};
use adar_core::train::{losses_csv, train_with_validation, TrainArtifacts, TrainConfig};
use adar_core::verify::{self, CheckResult};
use rayon::prelude::*;

use crate::config::{sibling, ConfigFile};
use crate::error::{CliError, CliResult, PathContext};

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const USERS_IDMAP: &str = "users.idmap";
pub const ITEMS_IDMAP: &str = "items.idmap";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOSSES_FILE: &str = "losses.csv";
pub const ENCODER_CKPT: &str = "encoder.ckpt";
pub const DIFFUSION_CKPT: &str = "diffusion.ckpt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const USERS_EMB: &str = "users.emb";
pub const ITEMS_EMB: &str = "items.emb";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareSummary {
    pub n_users: usize,
    pub n_items: usize,
    pub n_train: usize,
    pub n_test: usize,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).at(path)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).at(dir)
}

fn same_file(a: &Path, b: &Path) -> bool {
    matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y)
}

/// Splits an interaction file per user and writes `train.tsv`, `test.tsv`
/// and both id maps to `out_dir`, ordered by dense index.
pub fn cmd_prepare(
    input: &Path,
    format: Format,
    ratio: f64,
    seed: u64,
    out_dir: &Path,
) -> CliResult<PrepareSummary> {
    let file = File::open(input).at(input)?;
    let set = InteractionSet::ingest(BufReader::new(file), format).at(input)?;
    let mut rng = RngStream::keyed(seed, &[0, 0, role::SPLIT, 0]);
    let split = split_train_test(&set, ratio, &mut rng)?;

    create_dir(out_dir)?;
    let outputs = [TRAIN_FILE, TEST_FILE, USERS_IDMAP, ITEMS_IDMAP].map(|f| out_dir.join(f));
    if outputs.iter().any(|o| same_file(o, input)) {
        return Err(CliError::config(format!(
            "{} would be overwritten by its own split",
            input.display()
        )));
    }
    let mut buf = Vec::new();
    split.train.export(&mut buf, Format::Tsv)?;
    write_file(&outputs[0], &buf)?;
    buf.clear();
    split.export_test(&mut buf, Format::Tsv)?;
    write_file(&outputs[1], &buf)?;
    buf.clear();
    split.train.user_ids().write_to(&mut buf)?;
    write_file(&outputs[2], &buf)?;
    buf.clear();
    split.train.item_ids().write_to(&mut buf)?;
    write_file(&outputs[3], &buf)?;

    Ok(PrepareSummary {
        n_users: split.train.n_users(),
        n_items: split.train.n_items(),
        n_train: split.train.n_interactions(),
        n_test: split.n_test_interactions(),
    })
}

fn read_idmap(path: &Path) -> CliResult<IdMap> {
    let file = File::open(path).at(path)?;
    IdMap::read_from(BufReader::new(file)).at(path)
}

/// Id maps written by `prepare` next to the train file, when both exist.
fn sibling_vocab(train_path: &Path) -> CliResult<Option<(IdMap, IdMap)>> {
    let (users, items) = (
        sibling(train_path, USERS_IDMAP),
        sibling(train_path, ITEMS_IDMAP),
    );
    if users.is_file() && items.is_file() {
        Ok(Some((read_idmap(&users)?, read_idmap(&items)?)))
    } else {
        Ok(None)
    }
}

fn load_pair(
    train: &Path,
    test: &Path,
    format: Format,
    vocab: Option<(IdMap, IdMap)>,
) -> CliResult<SplitDataset> {
    let open = |p: &Path| File::open(p).map(BufReader::new).at(p);
    SplitDataset::load(open(train)?, open(test)?, format, vocab).map_err(|e| {
        CliError::from(e).context(&format!("{} + {}", train.display(), test.display()))
    })
}

/// The train/test split named by `cfg`, plus the validation split (same
/// train set, held-out lists from `valid_path`) when one is configured.
pub fn load_data(cfg: &ConfigFile) -> CliResult<(SplitDataset, Option<SplitDataset>)> {
    let vocab = sibling_vocab(&cfg.train_path)?;
    let split = load_pair(&cfg.train_path, &cfg.test_path, cfg.format, vocab)?;
    let valid = match &cfg.valid_path {
        None => None,
        Some(path) => {
            let vocab = (
                split.train.user_ids().clone(),
                split.train.item_ids().clone(),
            );
            let v = load_pair(&cfg.train_path, path, cfg.format, Some(vocab))?;
            if v.train.n_items() != split.train.n_items() {
                return Err(CliError::format(format!(
                    "{}: items absent from the train and test files",
                    path.display()
                )));
            }
            Some(v)
        }
    };
    Ok((split, valid))
}

/// Trains per `cfg` and writes metrics, losses and both checkpoints to `out_dir`.
pub fn run_training(cfg: &ConfigFile) -> CliResult<TrainArtifacts> {
    let (split, valid) = load_data(cfg)?;
    let art = train_with_validation(&cfg.train, &split, valid.as_ref())?;
    create_dir(&cfg.out_dir)?;
    write_file(
        &cfg.out_dir.join(METRICS_FILE),
        format!("{}\n", art.metrics.to_json()),
    )?;
    write_file(&cfg.out_dir.join(LOSSES_FILE), losses_csv(&art.losses))?;
    let mut buf = Vec::new();
    art.encoder.write_checkpoint(&mut buf)?;
    write_file(&cfg.out_dir.join(ENCODER_CKPT), &buf)?;
    buf.clear();
    art.predictor.write_checkpoint(&mut buf)?;
    write_file(&cfg.out_dir.join(DIFFUSION_CKPT), &buf)?;
    Ok(art)
}

pub fn cmd_train(config: &Path) -> CliResult<TrainArtifacts> {
    run_training(&ConfigFile::load(config)?)
}

fn read_encoder(path: &Path) -> CliResult<EncoderModel> {
    let file = File::open(path).at(path)?;
    EncoderModel::read_checkpoint(BufReader::new(file)).at(path)
}

/// Scores the test split with a saved encoder (default `out_dir/encoder.ckpt`).
pub fn cmd_eval(config: &Path, checkpoint: Option<&Path>) -> CliResult<MetricsReport> {
    let cfg = ConfigFile::load(config)?;
    let (split, _) = load_data(&cfg)?;
    let ckpt = checkpoint.map_or_else(|| cfg.out_dir.join(ENCODER_CKPT), Path::to_path_buf);
    let enc = read_encoder(&ckpt)?;
    if enc.n_users() != split.train.n_users() || enc.n_items() != split.train.n_items() {
        return Err(CliError::format(format!(
            "{}: checkpoint covers {} users x {} items, data has {} x {}",
            ckpt.display(),
            enc.n_users(),
            enc.n_items(),
            split.train.n_users(),
            split.train.n_items()
        )));
    }
    let mut report = evaluate(&enc, &split, &cfg.train.ks)?;
    report.fingerprint = cfg.train.fingerprint();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub steps: usize,
    pub outcome: Result<MetricsReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// One message per grid value dropped as a duplicate.
    pub warnings: Vec<String>,
}

fn dedup<T: PartialEq + Copy + std::fmt::Display>(
    name: &str,
    vals: &[T],
    warnings: &mut Vec<String>,
) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for &v in vals {
        if out.contains(&v) {
            warnings.push(format!("duplicate {name} value {v} ignored"));
        } else {
            out.push(v);
        }
    }
    out
}

fn csv_cell(s: &str) -> String {
    s.replace([',', '\n', '\r'], " ")
}

/// `lambda,T,status` followed by the metric columns; failed points keep
/// their grid values and leave the metric columns empty.
pub fn sweep_csv(ks: &[usize], rows: &[SweepRow]) -> String {
    let header = MetricsReport::csv_columns(ks);
    let width = header.split(',').count();
    let mut out = format!("lambda,T,status,{header}\n");
    for r in rows {
        let (status, metrics) = match &r.outcome {
            Ok(m) => ("ok".to_string(), m.csv_row()),
            Err(e) => (format!("error: {}", csv_cell(e)), vec![""; width].join(",")),
        };
        out.push_str(&format!("{},{},{status},{metrics}\n", r.lambda, r.steps));
    }
    out
}

/// Trains every point of `lambda_grid x T_grid` with the shared seed and
/// writes `sweep.csv`. A failed point is recorded and the sweep continues.
pub fn cmd_sweep(config: &Path, parallel: bool) -> CliResult<SweepOutcome> {
    let cfg = ConfigFile::load(config)?;
    let (split, valid) = load_data(&cfg)?;
    let mut warnings = Vec::new();
    let lambdas = dedup("lambda", &cfg.lambda_grid, &mut warnings);
    let steps = dedup("T", &cfg.t_grid, &mut warnings);
    let points: Vec<(f64, usize)> = lambdas
        .iter()
        .flat_map(|&l| steps.iter().map(move |&t| (l, t)))
        .collect();
    let run_point = |&(lambda, t): &(f64, usize)| {
        let point = TrainConfig {
            lambda,
            steps: t,
            ..cfg.train.clone()
        };
        let outcome = train_with_validation(&point, &split, valid.as_ref())
            .map(|a| a.metrics)
            .map_err(|e| e.to_string());
        SweepRow {
            lambda,
            steps: t,
            outcome,
        }
    };
    let rows: Vec<SweepRow> = if parallel {
        points.par_iter().map(run_point).collect()
    } else {
        points.iter().map(run_point).collect()
    };
    create_dir(&cfg.out_dir)?;
    write_file(
        &cfg.out_dir.join(SWEEP_FILE),
        sweep_csv(&cfg.train.ks, &rows),
    )?;
    Ok(SweepOutcome { rows, warnings })
}

pub fn cmd_verify(seed: u64) -> CliResult<Vec<CheckResult>> {
    Ok(verify::battery(seed)?)
}

/// Writes the user and item tables of an encoder checkpoint as `users.emb`
/// and `items.emb`.
pub fn cmd_export_embeddings(
    checkpoint: &Path,
    out_dir: &Path,
) -> CliResult<(EmbeddingTable, EmbeddingTable)> {
    let enc = read_encoder(checkpoint)?;
    let users = EmbeddingTable::from_table(enc.user_table());
    let items = EmbeddingTable::from_table(enc.item_table());
    create_dir(out_dir)?;
    for (table, name) in [(&users, USERS_EMB), (&items, ITEMS_EMB)] {
        let mut buf = Vec::new();
        table.write_to(&mut buf)?;
        write_file(&out_dir.join(name), &buf)?;
    }
    Ok((users, items))
}

pub fn read_embeddings(path: &Path) -> CliResult<EmbeddingTable> {
    let file = File::open(path).at(path)?;
    EmbeddingTable::read_from(BufReader::new(file)).at(path)
}
