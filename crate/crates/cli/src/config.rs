//! Flat `key = value` run configurations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mipt_core::quan::{Ablation, TrainConfig};

use crate::CliError;

/// Parsed key/value pairs; every key must be consumed before [`finish`](Self::finish).
#[derive(Debug, Clone)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    base: PathBuf,
}

impl KeyValues {
    /// Lines are `key = value`; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::usage(format!("line {}: duplicate key {key}", n + 1)));
            }
        }
        Ok(KeyValues { entries, base: base.to_path_buf() })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| CliError::usage(format!("{key} = {v}: {e}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?.ok_or_else(|| CliError::usage(format!("missing key {key}")))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => parse_list(&v).map(Some).map_err(|e| CliError::usage(format!("{key}: {e}"))),
        }
    }

    /// Comma-separated paths, resolved against the directory of the config file.
    pub fn take_paths(&mut self, key: &str) -> Result<Option<Vec<PathBuf>>, CliError> {
        Ok(self.take_list::<String>(key)?.map(|v| v.into_iter().map(|p| self.base.join(p)).collect()))
    }

    pub fn take_path(&mut self, key: &str) -> Result<Option<PathBuf>, CliError> {
        Ok(self.take::<String>(key)?.map(|p| self.base.join(p)))
    }

    /// Rejects whatever keys were not consumed.
    pub fn finish(self) -> Result<(), CliError> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(_) => Err(CliError::usage(format!(
                "unknown keys: {}",
                self.entries.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Model and optimizer keys; anything absent keeps its default.
    pub fn take_train_config(&mut self) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let ablation = match self.take::<String>("ablation")? {
            None => d.ablation,
            Some(name) => Ablation::from_name(&name).ok_or_else(|| CliError::usage(format!("unknown ablation {name}")))?,
        };
        let config = TrainConfig {
            n_e: self.take_or("n_e", d.n_e)?,
            set_size: self.take_or("N", d.set_size)?,
            d_h: self.take_or("d_h", d.d_h)?,
            drop_rate: self.take_or("drop_rate", d.drop_rate)?,
            learning_rate: self.take_or("learning_rate", d.learning_rate)?,
            l2: self.take_or("l2", d.l2)?,
            beta1: self.take_or("beta1", d.beta1)?,
            beta2: self.take_or("beta2", d.beta2)?,
            eps: self.take_or("eps", d.eps)?,
            batch_trajectories: self.take_or("batch_trajectories", d.batch_trajectories)?,
            max_epochs: self.take_or("max_epochs", d.max_epochs)?,
            patience: self.take_or("patience", d.patience)?,
            shuffle_period: self.take_or("shuffle_period", d.shuffle_period)?,
            seed: self.require("seed")?,
            ablation,
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| format!("{s}: {e}")))
        .collect()
}
