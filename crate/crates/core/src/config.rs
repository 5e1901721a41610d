//! Plain-text run configuration: `key = value` lines under `[section]`
//! headers, UTF-8, `#` comments. Keys are namespaced as `section.key` and
//! validated against a fixed whitelist, so typos fail loudly instead of
//! silently using defaults. CLI flags override file values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Known configuration keys.
pub const KNOWN_KEYS: &[&str] = &[
    "run.seed",
    "run.threads",
    "run.out",
    "depth.meters_per_unit",
    "paths.sources",
    "paths.targets",
    "paths.depth",
    "paths.udisp",
    "paths.vdisp",
    "paths.overlay",
    "paths.overlay_alpha",
    "model.name",
    "raindrop.sigma",
    "raindrop.thickness_min",
    "raindrop.thickness_max",
    "raindrop.type1.shape",
    "raindrop.type1.size",
    "raindrop.type1.freq",
    "raindrop.type2.shape",
    "raindrop.type2.size",
    "raindrop.type2.freq",
    "raindrop.type3.shape",
    "raindrop.type3.size",
    "raindrop.type3.freq",
    "raindrop.type4.shape",
    "raindrop.type4.size",
    "raindrop.type4.freq",
    "dirt.sigma",
    "dirt.alpha",
    "dirt.blob_frequency",
    "dirt.blob_size",
    "fog.beta",
    "fog.airlight_r",
    "fog.airlight_g",
    "fog.airlight_b",
    "estimate.lr_scale",
    "estimate.max_iters",
    "estimate.batch_size",
    "estimate.tol",
    "estimate.population",
    "estimate.n_samples",
    "estimate.k_d",
    "estimate.k_g",
    "estimate.max_rounds",
    "estimate.warm_start",
    "estimate.only_differentiable",
    "guidance.gamma",
    "guidance.patch_size",
    "bench.models",
    "bench.seeds",
    "bench.width",
    "bench.height",
    "bench.count",
];

/// Parsed configuration: a flat map of `section.key` to raw string values.
#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Config::default()
    }

    /// Parse a config file. Later assignments to the same key win.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            cfg.set(&full, value.trim())?;
        }
        Ok(cfg)
    }

    /// Set a value, rejecting unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("{key}: expected a number, got '{v}'")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{v}'")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.get_u64(key)?.map(|v| v as usize))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Error::Config(format!(
                    "{key}: expected true/false, got '{other}'"
                ))),
            })
            .transpose()
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim().parse::<f64>().map_err(|_| {
                            Error::Config(format!("{key}: bad list item '{item}'"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim().parse::<u64>().map_err(|_| {
                            Error::Config(format!("{key}: bad list item '{item}'"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_str_list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_values() {
        let cfg = Config::parse(
            "# comment\n[run]\nseed = 7\nout = results\n\n[fog]\nbeta = 12.5\n",
        )
        .unwrap();
        assert_eq!(cfg.get_u64("run.seed").unwrap(), Some(7));
        assert_eq!(cfg.get("run.out"), Some("results"));
        assert_eq!(cfg.get_f64("fog.beta").unwrap(), Some(12.5));
        assert_eq!(cfg.get("fog.airlight_r"), None);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = Config::parse("[run]\nspeed = 9\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key 'run.speed'"));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::parse("[run\nseed = 1\n").is_err());
        assert!(Config::parse("[run]\njust some words\n").is_err());
    }

    #[test]
    fn later_assignment_wins() {
        let cfg = Config::parse("[run]\nseed = 1\nseed = 2\n").unwrap();
        assert_eq!(cfg.get_u64("run.seed").unwrap(), Some(2));
    }

    #[test]
    fn typed_getters_validate() {
        let cfg = Config::parse("[fog]\nbeta = not-a-number\n").unwrap();
        assert!(cfg.get_f64("fog.beta").is_err());
        let cfg = Config::parse("[bench]\nseeds = 1, 2, 3\n").unwrap();
        assert_eq!(cfg.get_u64_list("bench.seeds").unwrap(), Some(vec![1, 2, 3]));
    }

    #[test]
    fn depth_scale_key_present() {
        let cfg = Config::parse("[depth]\nmeters_per_unit = 0.05\n").unwrap();
        assert_eq!(cfg.get_f64("depth.meters_per_unit").unwrap(), Some(0.05));
    }
}
