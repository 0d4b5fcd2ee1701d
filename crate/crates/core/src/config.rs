//! Run configuration: defaults, `key=value` files, `CACHESCOPE_*`
//! environment variables and explicit overrides, applied in that order.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache_sim::CacheConfig;
use crate::classifier::FilterThresholds;
use crate::profiler::{BreakpointConfig, SamplerConfig, WindowConfig};
use crate::stores::ObjectStoreConfig;

pub const ENV_PREFIX: &str = "CACHESCOPE_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{origin}:{line}: {msg}")]
    Syntax { origin: String, line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cache: CacheConfig,
    pub sampler: SamplerConfig,
    pub window_size: usize,
    pub breakpoint: BreakpointConfig,
    pub thresholds: FilterThresholds,
    pub objects: ObjectStoreConfig,
    pub miss_penalty: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cache: CacheConfig::default(),
            sampler: SamplerConfig::default(),
            window_size: WindowConfig::default().size,
            breakpoint: BreakpointConfig::default(),
            thresholds: FilterThresholds::default(),
            objects: ObjectStoreConfig::default(),
            miss_penalty: 200.0,
        }
    }
}

/// Every recognised key, in documentation order.
pub const KEYS: &[&str] = &[
    "line_size",
    "sets",
    "assoc",
    "cores",
    "seed",
    "load_period",
    "store_period",
    "period_jitter",
    "window",
    "window_ratio",
    "expiry_events",
    "bp_max_accesses",
    "bp_same_set",
    "k_consec",
    "t_set",
    "global_load_gate",
    "global_store_gate",
    "instr_access_floor",
    "instr_miss_floor",
    "line_set_miss_floor",
    "skip_min_samples",
    "skip_fraction",
    "miss_penalty",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            size: self.window_size,
            ratio: self.thresholds.window_ratio,
        }
    }

    /// Sets one key. Keys are case-insensitive and `-` is accepted for `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let k = key.trim().to_ascii_lowercase().replace('-', "_");
        match k.as_str() {
            "line_size" => self.cache.line_size = parse(&k, value)?,
            "sets" => self.cache.num_sets = parse(&k, value)?,
            "assoc" => self.cache.associativity = parse(&k, value)?,
            "cores" => self.cache.num_cores = parse(&k, value)?,
            "seed" => self.sampler.seed = parse(&k, value)?,
            "load_period" => self.sampler.load_period = parse(&k, value)?,
            "store_period" => self.sampler.store_period = parse(&k, value)?,
            "period_jitter" => self.sampler.period_jitter = parse(&k, value)?,
            "window" => self.window_size = parse(&k, value)?,
            "window_ratio" => self.thresholds.window_ratio = parse(&k, value)?,
            "expiry_events" => self.breakpoint.expiry_events = parse(&k, value)?,
            "bp_max_accesses" => self.breakpoint.max_accesses = parse(&k, value)?,
            "bp_same_set" => self.breakpoint.same_set = parse(&k, value)?,
            "k_consec" => self.breakpoint.k_consec = parse(&k, value)?,
            "t_set" => self.breakpoint.t_set = parse(&k, value)?,
            "global_load_gate" => self.thresholds.global_load_gate = parse(&k, value)?,
            "global_store_gate" => self.thresholds.global_store_gate = parse(&k, value)?,
            "instr_access_floor" => self.thresholds.instr_access_floor = parse(&k, value)?,
            "instr_miss_floor" => self.thresholds.instr_miss_floor = parse(&k, value)?,
            "line_set_miss_floor" => self.thresholds.line_set_miss_floor = parse(&k, value)?,
            "skip_min_samples" => self.objects.skip_min_samples = parse(&k, value)?,
            "skip_fraction" => self.objects.skip_fraction = parse(&k, value)?,
            "miss_penalty" => self.miss_penalty = parse(&k, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a `key=value` document; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k, v).map_err(|e| ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_str(&text, &path.display().to_string())
    }

    /// Applies `CACHESCOPE_<KEY>` variables from `vars` (pass
    /// `std::env::vars()` in production).
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.as_ref().strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                KEYS.contains(&key.as_str()).then(|| (key, v.as_ref().to_string()))
            })
            .collect();
        found.sort();
        for (k, v) in found {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Defaults, then file, then environment, then explicit overrides.
    pub fn resolve<I, K, V>(file: Option<&Path>, env: I, overrides: &[(String, String)]) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut cfg = RunConfig::default();
        if let Some(p) = file {
            cfg.apply_file(p)?;
        }
        cfg.apply_env(env)?;
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = ConfigError::Invalid;
        self.cache.validate().map_err(|e| inv(e.to_string()))?;
        self.sampler.validate().map_err(inv)?;
        self.thresholds.validate().map_err(inv)?;
        if self.window_size == 0 {
            return Err(inv("window must be >= 1".into()));
        }
        let bp = &self.breakpoint;
        if bp.max_accesses == 0 || bp.same_set == 0 || bp.expiry_events == 0 || bp.k_consec == 0 || bp.t_set == 0 {
            return Err(inv("breakpoint parameters must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.objects.skip_fraction) {
            return Err(inv("skip_fraction must be in [0, 1]".into()));
        }
        if !(self.miss_penalty >= 1.0) {
            return Err(inv("miss_penalty must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_env_override_precedence() {
        let dir = std::env::temp_dir().join(format!("cachescope-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "# sampling\nload_period = 1000\nstore_period=7 # inline\nwindow=50\n").unwrap();
        let env = [
            ("CACHESCOPE_STORE_PERIOD", "9"),
            ("CACHESCOPE_WINDOW", "60"),
            ("UNRELATED", "x"),
        ];
        let cfg = RunConfig::resolve(Some(&path), env, &[("window".into(), "70".into())]).unwrap();
        assert_eq!(cfg.sampler.load_period, 1000);
        assert_eq!(cfg.sampler.store_period, 9);
        assert_eq!(cfg.window_size, 70);
        assert_eq!(cfg.thresholds, FilterThresholds::default());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_lines_name_their_position() {
        let mut c = RunConfig::default();
        let err = c.apply_str("seed=1\nnonsense\n", "x.conf").unwrap_err();
        assert!(err.to_string().starts_with("x.conf:2:"));
        let err = c.apply_str("bogus=1", "x.conf").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn out_of_range_rejected() {
        let mut c = RunConfig::default();
        c.set("instr_access_floor", "1.5").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("period-jitter", "1.0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_key_is_settable() {
        for k in KEYS {
            let mut c = RunConfig::default();
            c.set(k, "1").unwrap();
        }
    }
}
