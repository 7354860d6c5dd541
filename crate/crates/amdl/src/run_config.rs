//! `key = value` run configuration files. Flags given on the command line
//! override file entries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use amdl_core::model::{ExitTopology, NetworkConfig};
use amdl_core::train::{Strategy, TrainConfig, WeightDecay};

use crate::error::{AppError, AppResult};

/// Every key a run configuration may contain.
pub const KEYS: &[&str] = &[
    "preset",
    "image_size",
    "schedule",
    "seed",
    "epochs",
    "batch_size",
    "milestones",
    "lr",
    "momentum",
    "weight_decay",
    "strategy",
    "topology",
    "adapt",
    "threshold",
    "data",
    "out",
    "base",
    "results",
];

/// Parsed `key = value` pairs. Per-domain topologies use `topology.<domain>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> AppResult<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| AppError::usage(format!("config line {}: expected 'key = value'", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let known = KEYS.contains(&k) || k.strip_prefix("topology.").is_some_and(|d| !d.is_empty());
            if !known {
                return Err(AppError::usage(format!("config line {}: unknown key '{k}'", i + 1)));
            }
            if cfg.entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(AppError::usage(format!("config line {}: duplicate key '{k}'", i + 1)));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text)
    }

    /// Records a command-line value; it replaces any file entry.
    pub fn set(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.entries.insert(key.to_string(), v.to_string());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<V: std::str::FromStr>(&self, key: &str) -> AppResult<Option<V>> {
        self.get(key).map(|v| v.parse::<V>().map_err(|_| AppError::usage(format!("bad value for {key}: '{v}'")))).transpose()
    }

    fn list<V: std::str::FromStr>(&self, key: &str) -> AppResult<Option<Vec<V>>> {
        self.get(key)
            .map(|v| {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',').map(|x| x.trim().parse::<V>().map_err(|_| AppError::usage(format!("bad value for {key}: '{v}'")))).collect()
            })
            .transpose()
    }

    pub fn seed(&self) -> AppResult<u64> {
        Ok(self.parsed("seed")?.unwrap_or(0))
    }

    pub fn path(&self, key: &str) -> AppResult<PathBuf> {
        self.get(key).map(PathBuf::from).ok_or_else(|| AppError::usage(format!("missing required setting '{key}'")))
    }

    /// Like [`RunConfig::path`], but the path must already exist.
    pub fn existing_path(&self, key: &str) -> AppResult<PathBuf> {
        let p = self.path(key)?;
        if !p.exists() {
            return Err(AppError::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
        }
        Ok(p)
    }

    /// Network preset (`tiny` by default), with `image_size` overriding
    /// the input resolution.
    pub fn network(&self) -> AppResult<NetworkConfig> {
        let name = self.get("preset").unwrap_or("tiny");
        let mut cfg = NetworkConfig::preset(name).ok_or_else(|| AppError::usage(format!("unknown preset '{name}' (tiny, resnet26)")))?;
        if let Some(s) = self.parsed::<usize>("image_size")? {
            cfg.input_height = s;
            cfg.input_width = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The `desk` (default) or `paper` schedule with individual overrides.
    pub fn train(&self) -> AppResult<TrainConfig> {
        let mut t = match self.get("schedule").unwrap_or("desk") {
            "desk" => TrainConfig::desk(),
            "paper" => TrainConfig::paper(),
            s => return Err(AppError::usage(format!("unknown schedule '{s}' (desk, paper)"))),
        };
        t.seed = self.seed()?;
        if let Some(v) = self.parsed("epochs")? {
            t.epochs = v;
        }
        if let Some(v) = self.parsed("batch_size")? {
            t.batch_size = v;
        }
        if let Some(v) = self.list("milestones")? {
            t.milestones = v;
        }
        if let Some(v) = self.list("lr")? {
            t.lr_values = v;
        }
        if let Some(v) = self.parsed("momentum")? {
            t.momentum = v;
        }
        match self.get("weight_decay") {
            None | Some("auto") => {}
            Some(_) => t.weight_decay = WeightDecay::Fixed(self.parsed("weight_decay")?.unwrap()),
        }
        if let Some(s) = self.get("strategy") {
            t.strategy = Strategy::parse(s)?;
        }
        t.validate()?;
        Ok(t)
    }

    /// `topology.<domain>`, then `topology`, then `mlp:128`.
    pub fn topology(&self, domain: &str) -> AppResult<ExitTopology> {
        let tag = self.get(&format!("topology.{domain}")).or(self.get("topology")).unwrap_or("mlp:128");
        Ok(ExitTopology::parse(tag)?)
    }

    pub fn adapt(&self) -> AppResult<bool> {
        Ok(self.parsed("adapt")?.unwrap_or(true))
    }

    pub fn threshold(&self) -> AppResult<f64> {
        let t = self.parsed("threshold")?.unwrap_or(3.5);
        if !(0.0..=100.0).contains(&t) {
            return Err(AppError::usage(format!("threshold {t} outside [0, 100]")));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let mut c = RunConfig::parse("epochs = 5\n# note\nlr = 0.2, 0.02\nmilestones = 3\n").unwrap();
        c.set("epochs", Some(7));
        let t = c.train().unwrap();
        assert_eq!(t.epochs, 7);
        assert_eq!(t.lr_values, vec![0.2, 0.02]);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(RunConfig::parse("epoch = 3").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed").is_err());
    }

    #[test]
    fn per_domain_topology() {
        let c = RunConfig::parse("topology = basic\ntopology.easy = conv1x1").unwrap();
        assert_eq!(c.topology("easy").unwrap(), ExitTopology::Conv1x1);
        assert_eq!(c.topology("hard").unwrap(), ExitTopology::Basic);
    }

    #[test]
    fn threshold_range() {
        assert!(RunConfig::parse("threshold = 101").unwrap().threshold().is_err());
        assert_eq!(RunConfig::default().threshold().unwrap(), 3.5);
    }
}
