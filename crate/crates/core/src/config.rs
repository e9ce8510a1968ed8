//! Flat `key = value` run configuration shared by every CLI subcommand.
//!
//! Values are resolved in order defaults, config file, then command-line
//! overrides. The resolved text is written into every output directory.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::baselines::{BaselineConfig, BaselineKind, LayerCombine};
use crate::data::{InputFormat, SplitMode, SplitRatios};
use crate::encoder::Encoder;
use crate::eval::EvalConfig;
use crate::rankformer::{Normalizer, RankformerConfig};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Rankformer,
    LightGcn,
    Mf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub input: Option<PathBuf>,
    pub format: Option<InputFormat>,
    pub k_core: usize,
    pub ratios: SplitRatios,
    pub split_mode: SplitMode,
    pub split_dir: PathBuf,
    pub out_dir: PathBuf,
    pub encoder: EncoderKind,
    pub rankformer: RankformerConfig,
    pub combine: LayerCombine,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep_taus: Vec<f64>,
    pub sweep_max_layers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            input: None,
            format: None,
            k_core: 5,
            ratios: SplitRatios::default(),
            split_mode: SplitMode::Global,
            split_dir: PathBuf::from("runs/split"),
            out_dir: PathBuf::from("runs/out"),
            encoder: EncoderKind::Rankformer,
            rankformer: RankformerConfig::default(),
            combine: LayerCombine::Mean,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep_taus: vec![0.3, 0.5, 0.7, 1.0],
            sweep_max_layers: 4,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "seed" => {
                self.seed = parse(key, v)?;
                self.train.seed = self.seed;
            }
            "threads" => self.threads = parse(key, v)?,
            "input" => self.input = (!v.is_empty()).then(|| PathBuf::from(v)),
            "format" => {
                self.format = match v {
                    "" | "auto" => None,
                    "tsv" => Some(InputFormat::Tsv),
                    "csv" => Some(InputFormat::Csv),
                    _ => return Err(bad(key, v, "expected tsv, csv or auto")),
                }
            }
            "k_core" => self.k_core = parse(key, v)?,
            "ratios" => {
                let parts: Vec<f64> = v.split(':').map(|p| parse(key, p)).collect::<Result<_, _>>()?;
                let [train, val, test] = parts[..] else {
                    return Err(bad(key, v, "expected train:val:test"));
                };
                self.ratios = SplitRatios { train, val, test };
            }
            "split_mode" => {
                self.split_mode = match v {
                    "global" => SplitMode::Global,
                    "per-user" => SplitMode::PerUser,
                    _ => return Err(bad(key, v, "expected global or per-user")),
                }
            }
            "split_dir" => self.split_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "encoder" => {
                self.encoder = match v {
                    "rankformer" => EncoderKind::Rankformer,
                    "lightgcn" => EncoderKind::LightGcn,
                    "mf" => EncoderKind::Mf,
                    _ => return Err(bad(key, v, "expected rankformer, lightgcn or mf")),
                }
            }
            "layers" => self.rankformer.layers = parse(key, v)?,
            "tau" => self.rankformer.tau = parse(key, v)?,
            "alpha" => self.rankformer.alpha = parse(key, v)?,
            "warmup" => self.rankformer.warmup_first_layer = parse(key, v)?,
            "normalize" => self.rankformer.normalize_embeddings = parse(key, v)?,
            "normalizer" => {
                self.rankformer.normalizer = match v {
                    "abs" => Normalizer::AbsWeightSum,
                    "unit" => Normalizer::Unit,
                    _ => return Err(bad(key, v, "expected abs or unit")),
                }
            }
            "epsilon_div" => self.rankformer.epsilon_div = parse(key, v)?,
            "combine" => {
                self.combine = match v {
                    "mean" => LayerCombine::Mean,
                    "last" => LayerCombine::Last,
                    _ => return Err(bad(key, v, "expected mean or last")),
                }
            }
            "dim" => self.train.dim = parse(key, v)?,
            "init_std" => self.train.init_std = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "weight_decay" => self.train.weight_decay = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "negatives" => self.train.negatives_per_positive = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "grad_mode" => self.train.grad_mode = parse(key, v)?,
            "ks" => self.eval.ks = parse_list(key, v)?,
            "mask_train" => self.eval.mask_train = parse(key, v)?,
            "mask_val_at_test" => self.eval.mask_val_at_test = parse(key, v)?,
            "sweep_taus" => self.sweep_taus = parse_list(key, v)?,
            "sweep_max_layers" => self.sweep_max_layers = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies every `key = value` line; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: idx + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        self.apply_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for (n, o) in overrides.iter().enumerate() {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides`; validated.
    pub fn resolve<S: AsRef<str>>(file: Option<&Path>, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.rankformer.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.eval.validate().map_err(invalid)?;
        if self.k_core == 0 {
            return Err(invalid("k_core must be >= 1".into()));
        }
        let r = self.ratios;
        if [r.train, r.val, r.test].iter().any(|x| !(*x >= 0.0 && x.is_finite())) || r.train + r.val + r.test <= 0.0 {
            return Err(invalid("ratios must be non-negative with a positive sum".into()));
        }
        if self.sweep_taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(invalid("sweep_taus must lie in [0, 1]".into()));
        }
        if self.encoder == EncoderKind::Mf && self.rankformer.layers != 0 {
            log::debug!("layers is ignored for mf");
        }
        Ok(())
    }

    pub fn encoder(&self) -> Encoder {
        match self.encoder {
            EncoderKind::Rankformer => Encoder::Rankformer(self.rankformer.clone()),
            EncoderKind::LightGcn => Encoder::Baseline(BaselineConfig {
                kind: BaselineKind::LightGcn,
                layers: self.rankformer.layers,
                combine: self.combine,
            }),
            EncoderKind::Mf => Encoder::Baseline(BaselineConfig::mf()),
        }
    }

    /// Every key in a fixed order; feeding this back through
    /// [`RunConfig::apply_text`] reproduces the config.
    pub fn to_text(&self) -> String {
        let rf = &self.rankformer;
        let tr = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let lines: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("input", path(&self.input)),
            (
                "format",
                match self.format {
                    None => "auto",
                    Some(InputFormat::Tsv) => "tsv",
                    Some(InputFormat::Csv) => "csv",
                }
                .into(),
            ),
            ("k_core", self.k_core.to_string()),
            ("ratios", format!("{}:{}:{}", self.ratios.train, self.ratios.val, self.ratios.test)),
            (
                "split_mode",
                match self.split_mode {
                    SplitMode::Global => "global",
                    SplitMode::PerUser => "per-user",
                }
                .into(),
            ),
            ("split_dir", self.split_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            (
                "encoder",
                match self.encoder {
                    EncoderKind::Rankformer => "rankformer",
                    EncoderKind::LightGcn => "lightgcn",
                    EncoderKind::Mf => "mf",
                }
                .into(),
            ),
            ("layers", rf.layers.to_string()),
            ("tau", rf.tau.to_string()),
            ("alpha", rf.alpha.to_string()),
            ("warmup", rf.warmup_first_layer.to_string()),
            ("normalize", rf.normalize_embeddings.to_string()),
            (
                "normalizer",
                match rf.normalizer {
                    Normalizer::AbsWeightSum => "abs",
                    Normalizer::Unit => "unit",
                }
                .into(),
            ),
            ("epsilon_div", rf.epsilon_div.to_string()),
            (
                "combine",
                match self.combine {
                    LayerCombine::Mean => "mean",
                    LayerCombine::Last => "last",
                }
                .into(),
            ),
            ("dim", tr.dim.to_string()),
            ("init_std", tr.init_std.to_string()),
            ("lr", tr.lr.to_string()),
            ("weight_decay", tr.weight_decay.to_string()),
            ("epochs", tr.epochs.to_string()),
            ("batch_size", tr.batch_size.to_string()),
            ("negatives", tr.negatives_per_positive.to_string()),
            ("patience", tr.patience.to_string()),
            ("grad_mode", tr.grad_mode.label().into()),
            ("ks", join(&self.eval.ks)),
            ("mask_train", self.eval.mask_train.to_string()),
            ("mask_val_at_test", self.eval.mask_val_at_test.to_string()),
            ("sweep_taus", join(&self.sweep_taus)),
            ("sweep_max_layers", self.sweep_max_layers.to_string()),
        ];
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes `config.txt` (the resolved config plus the tool version) into `dir`.
    pub fn write_into(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.txt");
        let text = format!("# rankformer {}\n{}", env!("CARGO_PKG_VERSION"), self.to_text());
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn split_ratios(&self) -> SplitRatios {
        self.ratios
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "# comment\ntau = 0.3\nlayers = 4\n\nlr=0.05 # trailing\n").unwrap();
        let cfg = RunConfig::resolve(Some(&file), &["tau=0.7"]).unwrap();
        assert_eq!(cfg.rankformer.tau, 0.7);
        assert_eq!(cfg.rankformer.layers, 4);
        assert_eq!(cfg.train.lr, 0.05);
        assert_eq!(cfg.rankformer.alpha, 2.0);
    }

    #[test]
    fn rejects_out_of_range_tau() {
        let err = RunConfig::resolve(None, &["tau=1.5"]).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::resolve(None, &["nope=1"]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::resolve(None, &["epochs=abc"]), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::resolve(None, &["grad_mode=x"]), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "encoder=lightgcn",
                "ks=10,20",
                "ratios=8:1:1",
                "grad_mode=detached_weights",
                "input=data/x.tsv",
                "split_mode=per-user",
                "normalizer=unit",
            ],
        )
        .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
