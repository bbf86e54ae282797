use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use decolite::lite::LiteConfig;
use decolite::train::{CheckpointPolicy, EnsembleKind, OrthNormalization, TrainConfig};
use decolite::{Error, Result};

use crate::args::RunArgs;

const KEYS: &[&str] = &[
    "data-root",
    "dataset",
    "kind",
    "size",
    "seeds",
    "alpha",
    "epochs",
    "batch-size",
    "orth-norm",
    "out",
    "results",
    "lr",
    "plateau-factor",
    "plateau-patience",
    "min-lr",
    "include-diagonal",
    "checkpoint-policy",
    "variable-length",
];

/// Parses a flat `key = value` file. Blank lines and `#` comments are
/// skipped; keys may use `_` or `-`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Usage(format!("config line {}: expected key=value", n + 1)));
        };
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Usage(format!("config line {}: unknown key {key:?}", n + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Usage(format!("invalid value {raw:?} for {key}")))
}

pub fn parse_seeds(raw: &str) -> Result<Vec<u64>> {
    raw.split(',')
        .map(|s| parse::<u64>("seeds", s.trim()))
        .collect::<Result<Vec<_>>>()
        .and_then(|v| if v.is_empty() { Err(Error::Usage("empty seed list".into())) } else { Ok(v) })
}

fn parse_norm(raw: &str) -> Result<OrthNormalization> {
    match raw {
        "mean" | "mean-offdiag" => Ok(OrthNormalization::MeanOffDiag),
        "raw" | "raw-sum" => Ok(OrthNormalization::RawSum),
        other => Err(Error::Usage(format!("unknown orthogonality normalisation {other:?} (expected mean or raw)"))),
    }
}

fn parse_policy(raw: &str) -> Result<CheckpointPolicy> {
    match raw {
        "best" | "best-train-loss" => Ok(CheckpointPolicy::BestTrainLoss),
        "last" | "last-epoch" => Ok(CheckpointPolicy::LastEpoch),
        other => Err(Error::Usage(format!("unknown checkpoint policy {other:?}"))),
    }
}

/// Command-line flags merged over the config file and the defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub data_root: Option<PathBuf>,
    pub dataset: Option<String>,
    pub kind: EnsembleKind,
    pub size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out: PathBuf,
    pub results: Option<PathBuf>,
    pub variable_length: bool,
    pub train: TrainConfig,
    pub arch: LiteConfig,
    /// Every resolved value, for the manifest.
    pub echo: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut values = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let flags: [(&str, Option<String>); 11] = [
            ("data-root", args.data_root.as_ref().map(|p| p.display().to_string())),
            ("dataset", args.dataset.clone()),
            ("kind", args.kind.clone()),
            ("size", args.size.map(|v| v.to_string())),
            ("seeds", args.seeds.clone()),
            ("alpha", args.alpha.map(|v| v.to_string())),
            ("epochs", args.epochs.map(|v| v.to_string())),
            ("batch-size", args.batch_size.map(|v| v.to_string())),
            ("orth-norm", args.orth_norm.clone()),
            ("out", args.out.as_ref().map(|p| p.display().to_string())),
            ("results", args.results.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }

        let get = |k: &str| values.get(k).map(String::as_str);
        let mut train = TrainConfig::default();
        if let Some(v) = get("alpha") {
            train.alpha = parse("alpha", v)?;
        }
        if let Some(v) = get("epochs") {
            train.epochs = parse("epochs", v)?;
        }
        if let Some(v) = get("batch-size") {
            train.batch_size = parse("batch-size", v)?;
        }
        if let Some(v) = get("orth-norm") {
            train.orth_normalization = parse_norm(v)?;
        }
        if let Some(v) = get("lr") {
            train.lr = parse("lr", v)?;
        }
        if let Some(v) = get("plateau-factor") {
            train.plateau_factor = parse("plateau-factor", v)?;
        }
        if let Some(v) = get("plateau-patience") {
            train.plateau_patience = parse("plateau-patience", v)?;
        }
        if let Some(v) = get("min-lr") {
            train.min_lr = parse("min-lr", v)?;
        }
        if let Some(v) = get("include-diagonal") {
            train.include_diagonal = parse("include-diagonal", v)?;
        }
        if let Some(v) = get("checkpoint-policy") {
            train.checkpoint_policy = parse_policy(v)?;
        }
        train.validate().map_err(|e| Error::Usage(e.to_string()))?;

        let seeds = get("seeds").map(parse_seeds).transpose()?;
        let size = get("size").map(|v| parse::<usize>("size", v)).transpose()?;
        if let (Some(s), Some(n)) = (&seeds, size) {
            if s.len() != n {
                return Err(Error::Usage(format!("--size {n} but {} seeds given", s.len())));
            }
        }
        if size == Some(0) {
            return Err(Error::Usage("ensemble size must be at least 1".into()));
        }
        let kind = get("kind").map(EnsembleKind::from_str).transpose()?.unwrap_or(EnsembleKind::Base);

        let mut echo: BTreeMap<String, String> = values.clone();
        echo.insert("alpha".into(), train.alpha.to_string());
        echo.insert("epochs".into(), train.epochs.to_string());
        echo.insert("batch-size".into(), train.batch_size.to_string());
        echo.insert("lr".into(), train.lr.to_string());
        echo.insert("kind".into(), kind.tag().to_string());

        Ok(Settings {
            data_root: get("data-root").map(PathBuf::from),
            dataset: get("dataset").map(str::to_string),
            kind,
            size,
            seeds,
            out: get("out").map_or_else(|| PathBuf::from("runs"), PathBuf::from),
            results: get("results").map(PathBuf::from),
            variable_length: get("variable-length").map(|v| parse("variable-length", v)).transpose()?.unwrap_or(false),
            train,
            arch: LiteConfig::default(),
            echo,
        })
    }

    pub fn dataset(&self) -> Result<&str> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Usage("--dataset is required".into()))
    }

    /// Seeds of an ensemble run: `--seeds` if given, else `0..size`.
    pub fn ensemble_seeds(&self) -> Result<Vec<u64>> {
        match (&self.seeds, self.size) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(n)) => Ok((0..n as u64).collect()),
            (None, None) => Err(Error::Usage("give --size or --seeds".into())),
        }
    }

    /// `<out>/<dataset>/<kind>-<size>`.
    pub fn run_dir(&self, dataset: &str, kind: EnsembleKind, size: usize) -> PathBuf {
        self.out.join(dataset).join(format!("{}-{size}", kind.tag()))
    }
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_and_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nepochs = 7\nbatch_size=3\nalpha=0.25\nseeds=4,5\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            alpha: Some(0.75),
            ..RunArgs::default()
        };
        let s = Settings::resolve(&args).unwrap();
        assert_eq!((s.train.epochs, s.train.batch_size, s.train.alpha), (7, 3, 0.75));
        assert_eq!(s.ensemble_seeds().unwrap(), vec![4, 5]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(parse_config("nope=1"), Err(Error::Usage(_))));
        assert!(matches!(parse_config("epochs"), Err(Error::Usage(_))));
        let bad = |a: RunArgs| Settings::resolve(&a).unwrap_err();
        assert!(matches!(bad(RunArgs { alpha: Some(1.5), ..RunArgs::default() }), Error::Usage(_)));
        assert!(matches!(bad(RunArgs { seeds: Some("1,x".into()), ..RunArgs::default() }), Error::Usage(_)));
        assert!(matches!(
            bad(RunArgs { size: Some(3), seeds: Some("0,1".into()), ..RunArgs::default() }),
            Error::Usage(_)
        ));
        assert!(matches!(bad(RunArgs { orth_norm: Some("l2".into()), ..RunArgs::default() }), Error::Usage(_)));
    }

    #[test]
    fn size_defaults_seeds() {
        let s = Settings::resolve(&RunArgs { size: Some(3), ..RunArgs::default() }).unwrap();
        assert_eq!(s.ensemble_seeds().unwrap(), vec![0, 1, 2]);
        assert_eq!(s.run_dir("X", EnsembleKind::Decorrelated, 3), PathBuf::from("runs/X/deco-3"));
    }
}
