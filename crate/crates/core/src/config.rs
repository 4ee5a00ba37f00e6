//! Run configuration in flat `key = value` form.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Every key is optional and falls back to [`RunConfig::default`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cell::{BitsPerCell, FillKind};
use crate::controller::BasePolicy;
use crate::device::{DeviceKind, Geometry, LatencyParams, Tick, DEFAULT_NOP_LIMIT};
use crate::host::{DEFAULT_DRAM_CAPACITY, DEFAULT_FLUSH_IDLE_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl FromStr for OutputFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            _ => Err(ConfigError::Value { key: "format".into(), value: s.into() }),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Jsonl => "jsonl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value {value:?} for {key}")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub device_kind: DeviceKind,
    pub latency: LatencyParams,
    pub nop_limit: u32,
    pub flush_idle_threshold: Tick,
    pub dram_capacity: usize,
    /// Secure-mode residence limit in ticks; `None` disables secure mode.
    pub t_secure: Option<Tick>,
    pub reclaim_on_full: bool,
    pub policies: Vec<BasePolicy>,
    pub seed: u64,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: Geometry::default(),
            device_kind: DeviceKind::NonOverwritable,
            latency: LatencyParams::default(),
            nop_limit: DEFAULT_NOP_LIMIT,
            flush_idle_threshold: DEFAULT_FLUSH_IDLE_THRESHOLD,
            dram_capacity: DEFAULT_DRAM_CAPACITY,
            t_secure: None,
            reclaim_on_full: true,
            policies: vec![
                BasePolicy::MarkOnly,
                BasePolicy::EraseBased,
                BasePolicy::DdnRandom,
                BasePolicy::DdnNonRandom(FillKind::AllMax),
            ],
            seed: 0,
            format: OutputFormat::Csv,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value { key: key.into(), value: value.into() })
}

pub fn parse_policies(value: &str) -> Result<Vec<BasePolicy>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| ConfigError::Value { key: "policies".into(), value: s.into() }))
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, text: content.into() })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "blocks" => self.geometry.blocks = parse_num(key, value)?,
            "pages_per_block" => self.geometry.pages_per_block = parse_num(key, value)?,
            "cells_per_page" => self.geometry.cells_per_page = parse_num(key, value)?,
            "cells_per_cache_slot" => self.geometry.cells_per_slot = parse_num(key, value)?,
            "bits_per_cell" => {
                self.geometry.bits = BitsPerCell::new(parse_num(key, value)?)
                    .map_err(|_| ConfigError::Value { key: key.into(), value: value.into() })?
            }
            "device_kind" => {
                self.device_kind = match value.to_ascii_lowercase().as_str() {
                    "non-overwritable" | "nand" => DeviceKind::NonOverwritable,
                    "overwritable" | "pram" | "mram" | "reram" | "3dxpoint" => DeviceKind::Overwritable,
                    _ => return Err(ConfigError::Value { key: key.into(), value: value.into() }),
                }
            }
            "t_read_us" => self.latency.t_read = parse_num(key, value)?,
            "t_program_us" => self.latency.t_program = parse_num(key, value)?,
            "t_gen_us" => self.latency.t_gen = parse_num(key, value)?,
            "t_erase_us" => self.latency.t_erase = parse_num(key, value)?,
            "nop_limit" => self.nop_limit = parse_num(key, value)?,
            "flush_idle_threshold" => self.flush_idle_threshold = parse_num(key, value)?,
            "dram_capacity" => self.dram_capacity = parse_num(key, value)?,
            "t_secure" => {
                self.t_secure = match value {
                    "none" | "" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "reclaim_on_full" => self.reclaim_on_full = parse_num(key, value)?,
            "policies" => self.policies = parse_policies(value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "format" => self.format = value.parse()?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.t_secure == Some(0) {
            return Err(ConfigError::Invalid("t_secure must be at least 1".into()));
        }
        if self.dram_capacity == 0 {
            return Err(ConfigError::Invalid("dram_capacity must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(ConfigError::Invalid("at least one policy is required".into()));
        }
        let states = self.geometry.bits.states();
        for p in &self.policies {
            if let BasePolicy::DdnNonRandom(FillKind::ConstantLevel(l)) = p {
                if u32::from(*l) >= states {
                    return Err(ConfigError::Invalid(format!("policy {p} uses a level above {}", states - 1)));
                }
            }
        }
        Ok(())
    }

    /// The configuration in the same `key = value` form [`RunConfig::parse`]
    /// reads.
    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let l = &self.latency;
        let policies: Vec<String> = self.policies.iter().map(|p| p.to_string()).collect();
        let t_secure = self.t_secure.map_or("none".to_string(), |t| t.to_string());
        [
            ("blocks", g.blocks.to_string()),
            ("pages_per_block", g.pages_per_block.to_string()),
            ("cells_per_page", g.cells_per_page.to_string()),
            ("bits_per_cell", g.bits.to_string()),
            ("cells_per_cache_slot", g.cells_per_slot.to_string()),
            ("device_kind", self.device_kind.to_string()),
            ("t_read_us", l.t_read.to_string()),
            ("t_program_us", l.t_program.to_string()),
            ("t_gen_us", l.t_gen.to_string()),
            ("t_erase_us", l.t_erase.to_string()),
            ("nop_limit", self.nop_limit.to_string()),
            ("flush_idle_threshold", self.flush_idle_threshold.to_string()),
            ("dram_capacity", self.dram_capacity.to_string()),
            ("t_secure", t_secure),
            ("reclaim_on_full", self.reclaim_on_full.to_string()),
            ("policies", policies.join(",")),
            ("seed", self.seed.to_string()),
            ("format", self.format.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.latency, LatencyParams { t_read: 49, t_program: 600, t_gen: 100, t_erase: 4000 });
        assert_eq!(c.geometry.bits.get(), 3);
        assert_eq!(c.nop_limit, 4);
        assert_eq!(c.flush_idle_threshold, 10);
        let text = c.to_text();
        assert!(text.contains("t_read_us = 49\n"));
        assert!(text.contains("t_program_us = 600\n"));
        assert!(text.contains("t_gen_us = 100\n"));
        assert!(text.contains("t_erase_us = 4000\n"));
        assert!(text.contains("bits_per_cell = 3\n"));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.t_secure = Some(10);
        c.device_kind = DeviceKind::Overwritable;
        c.policies = vec![BasePolicy::DdnNonRandom(FillKind::ConstantLevel(2)), BasePolicy::MarkOnly];
        c.format = OutputFormat::Jsonl;
        c.seed = 99;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_overrides_and_errors() {
        let c = RunConfig::parse("# geometry\nblocks = 4\n\nseed=7\npolicies = ddn-random, mark-only\n").unwrap();
        assert_eq!(c.geometry.blocks, 4);
        assert_eq!(c.seed, 7);
        assert_eq!(c.policies, vec![BasePolicy::DdnRandom, BasePolicy::MarkOnly]);

        assert!(matches!(RunConfig::parse("blocks 4"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("\ncolour = red"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(RunConfig::parse("blocks = -1"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("blocks = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("cells_per_page = 10"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("t_secure = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("policies = ddn-level:8"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("policies = wipe"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("format = xml"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("bits_per_cell = 9"), Err(ConfigError::Value { .. })));
    }
}
