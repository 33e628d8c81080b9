//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use adar_core::data::Format;
use adar_core::train::{parse_list, TrainConfig};

use crate::error::{CliError, CliResult, PathContext};

/// Keys accepted in addition to [`TrainConfig::KEYS`].
pub const EXTRA_KEYS: [&str; 7] = [
    "train_path",
    "test_path",
    "valid_path",
    "out_dir",
    "format",
    "lambda_grid",
    "T_grid",
];

/// A parsed config file. Relative paths resolve against the directory that
/// holds the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub train_path: PathBuf,
    /// Defaults to `test.tsv` next to `train_path`.
    pub test_path: PathBuf,
    pub valid_path: Option<PathBuf>,
    /// Defaults to `out` next to the config file.
    pub out_dir: PathBuf,
    pub format: Format,
    /// Defaults to `[lambda]`.
    pub lambda_grid: Vec<f64>,
    /// Defaults to `[T]`.
    pub t_grid: Vec<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.in_file(path))
    }

    /// Blank lines and lines starting with `#` are skipped. Unknown or
    /// repeated keys are errors.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut train = TrainConfig::default();
        let mut seen = BTreeSet::new();
        let mut train_path = None;
        let mut test_path = None;
        let mut valid_path = None;
        let mut out_dir = None;
        let mut format = Format::Tsv;
        let mut lambda_grid = None;
        let mut t_grid = None;

        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at_line = |msg: String| CliError::config(format!("line {}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at_line(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at_line(format!("duplicate key `{key}`")));
            }
            let path = || base.join(value);
            match key {
                "train_path" => train_path = Some(path()),
                "test_path" => test_path = Some(path()),
                "valid_path" => valid_path = Some(path()),
                "out_dir" => out_dir = Some(path()),
                "format" => {
                    format = value
                        .parse()
                        .map_err(|e: adar_core::Error| at_line(e.to_string()))?
                }
                "lambda_grid" => {
                    lambda_grid = Some(parse_list(key, value).map_err(|e| at_line(e.to_string()))?)
                }
                "T_grid" => {
                    t_grid = Some(parse_list(key, value).map_err(|e| at_line(e.to_string()))?)
                }
                _ => {
                    let known = train.set(key, value).map_err(|e| at_line(e.to_string()))?;
                    if !known {
                        return Err(at_line(format!("unknown key `{key}`")));
                    }
                }
            }
        }

        let train_path =
            train_path.ok_or_else(|| CliError::config("missing required key `train_path`"))?;
        let test_path = test_path.unwrap_or_else(|| sibling(&train_path, "test.tsv"));
        let lambda_grid = lambda_grid.unwrap_or_else(|| vec![train.lambda]);
        let t_grid = t_grid.unwrap_or_else(|| vec![train.steps]);
        if lambda_grid.is_empty() || t_grid.is_empty() {
            return Err(CliError::config("sweep grids must be non-empty"));
        }
        train.validate()?;
        Ok(Self {
            train,
            train_path,
            test_path,
            valid_path,
            out_dir: out_dir.unwrap_or_else(|| base.join("out")),
            format,
            lambda_grid,
            t_grid,
        })
    }
}

pub(crate) fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<ConfigFile> {
        ConfigFile::parse(text, Path::new("/runs"))
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse("train_path = data/train.tsv\n").unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.train_path, Path::new("/runs/data/train.tsv"));
        assert_eq!(c.test_path, Path::new("/runs/data/test.tsv"));
        assert_eq!(c.out_dir, Path::new("/runs/out"));
        assert_eq!(c.lambda_grid, vec![0.3]);
        assert_eq!(c.t_grid, vec![50]);
        assert_eq!(c.valid_path, None);
    }

    #[test]
    fn every_train_key_is_accepted() {
        let mut text = String::from("train_path = /d/train.tsv\n");
        for (k, v) in TrainConfig::default().entries() {
            text.push_str(&format!("{k} = {v}\n"));
        }
        assert_eq!(parse(&text).unwrap().train, TrainConfig::default());
    }

    #[test]
    fn comments_grids_and_overrides() {
        let c = parse(
            "# sweep\ntrain_path=/d/t.tsv\nlambda = 0.5\n\nlambda_grid = 0.1, 0.3\nT_grid = 20,50\nout_dir = /o\nformat = csv\n",
        )
        .unwrap();
        assert_eq!(c.train.lambda, 0.5);
        assert_eq!(c.lambda_grid, vec![0.1, 0.3]);
        assert_eq!(c.t_grid, vec![20, 50]);
        assert_eq!(c.out_dir, Path::new("/o"));
        assert_eq!(c.format, Format::Csv);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "lambda = 0.3\n",
            "train_path = a\nlearning_rate = 0.1\n",
            "train_path = a\ntrain_path = b\n",
            "train_path = a\nno equals sign\n",
            "train_path = a\ndim = many\n",
            "train_path = a\nlambda = 2\n",
            "train_path = a\nlambda_grid = \n",
        ] {
            let err = parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text:?}: {err}");
        }
        let err = parse("train_path = a\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.message.contains("line 2") && err.message.contains("learning_rate"));
    }
}
