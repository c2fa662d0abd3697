//! File-backed run configuration: `key = value` lines, `#` comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pnma_core::dataio::SchemeKind;
use pnma_core::synthetic::SyntheticConfig;
use pnma_core::training::TrainConfig;
use pnma_core::{Error, Result};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "PNMA_CONFIG";

pub const PATH_KEYS: &[&str] = &[
    "train_data",
    "valid_data",
    "test_data",
    "input",
    "embeddings",
    "model",
    "base_model",
    "memory",
    "output",
    "out_dir",
];

const OTHER_KEYS: &[&str] = &[
    "scheme",
    "permissive",
    "threads",
    "synth_train",
    "synth_valid",
    "synth_test",
    "exception_rate",
    "context_window",
    "top_n",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub scheme: SchemeKind,
    pub permissive: bool,
    pub threads: Option<usize>,
    pub synthetic: SyntheticConfig,
    pub context_window: usize,
    pub top_n: usize,
    pub paths: BTreeMap<String, PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            scheme: SchemeKind::BioSpan,
            permissive: false,
            threads: None,
            synthetic: SyntheticConfig::default(),
            context_window: 5,
            top_n: 10,
            paths: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn known_keys() -> Vec<&'static str> {
        let mut v: Vec<&str> = TrainConfig::KEYS.to_vec();
        v.extend(PATH_KEYS);
        v.extend(OTHER_KEYS);
        v
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::Config(format!("invalid value {v:?} for {key}"));
        let int = || v.parse::<usize>().map_err(|_| bad());
        if self.train.set(key, v)? {
            if key == "seed" {
                self.synthetic.seed = self.train.seed;
            }
            return Ok(());
        }
        if PATH_KEYS.contains(&key) {
            self.paths.insert(key.to_string(), PathBuf::from(v));
            return Ok(());
        }
        match key {
            "scheme" => self.scheme = SchemeKind::parse(v).map_err(|_| bad())?,
            "permissive" => {
                self.permissive = match v {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(bad()),
                }
            }
            "threads" => self.threads = Some(int()?),
            "synth_train" => self.synthetic.train = int()?,
            "synth_valid" => self.synthetic.valid = int()?,
            "synth_test" => self.synthetic.test = int()?,
            "exception_rate" => self.synthetic.exception_rate = v.parse().map_err(|_| bad())?,
            "context_window" => self.context_window = int()?,
            "top_n" => self.top_n = int()?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines. Returns the keys that were set.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<Vec<String>> {
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value, got {line:?}", n + 1)))?;
            let k = k.trim();
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, strip_prefix(&e))))?;
            seen.push(k.to_string());
        }
        Ok(seen)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        let seen = cfg.apply_text(&text, &path.display().to_string())?;
        Ok((cfg, seen))
    }

    pub fn path(&self, key: &str) -> Option<&Path> {
        self.paths.get(key).map(PathBuf::as_path)
    }
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("config error: ").map(str::to_string).unwrap_or(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_and_comments() {
        let mut c = RunConfig::default();
        let seen = c
            .apply_text(
                "# run\nepochs = 3\n\nhidden=16\ntrain_data = data/train.txt\nscheme = per-token-role\n",
                "t",
            )
            .unwrap();
        assert_eq!(seen, vec!["epochs", "hidden", "train_data", "scheme"]);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.hidden, 16);
        assert_eq!(c.path("train_data"), Some(Path::new("data/train.txt")));
        assert_eq!(c.scheme, SchemeKind::PerTokenRole);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::default()
            .apply_text("epochs = 2\nfrobnicate = 1\n", "cfg")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frobnicate") && msg.contains("cfg:2"), "{msg}");
    }

    #[test]
    fn bad_value_and_missing_equals() {
        assert!(RunConfig::default().apply_text("epochs = many\n", "c").is_err());
        assert!(RunConfig::default().apply_text("epochs 3\n", "c").is_err());
    }

    #[test]
    fn every_known_key_is_settable() {
        let keys = RunConfig::known_keys();
        let mut c = RunConfig::default();
        for k in keys {
            let v = match k {
                "scheme" => "bio-span",
                "permissive" | "warm_start" | "select_best" => "true",
                "sampler" => "uniform",
                "weighting" => "distinct",
                "lr_schedule" => "1,2",
                "exception_rate" | "memory_fraction" | "dropout_embed" | "dropout_lstm" => "0.1",
                _ => "3",
            };
            c.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
