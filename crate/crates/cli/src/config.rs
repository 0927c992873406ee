use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hpverify_core::deliberation::PolicyKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Md,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Uniform,
    Skewed,
}

/// Every experiment setting. Flags and config-file keys share these names
/// (with `-` on the command line, `_` in the file).
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Instance table file.
    #[arg(long, global = true, conflicts_with = "fixture")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<PathBuf>,
    /// Built-in fixture name.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[arg(long, global = true, value_parser = parse_policy)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    /// Stopping rule: all-of-phi, outperform-set or witness-pair (or 1, 2, 3).
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Report directory. Without it the summary goes to stdout only.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Artifacts to write; repeat or separate with commas.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Vec<Format>>,
    /// Assumption the fuzzer drops.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drop: Option<String>,
    /// Instances the fuzzer may generate.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// Start state for `deliberate`; all starts when absent.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    /// Also draw the independent second group in `hp-experiment`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub faithful: Option<bool>,
    /// Common-knowledge states of the ability group.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ck: Option<Vec<String>>,
    /// State the diversity group's bad agent sends backwards.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bad_state: Option<String>,
    /// Zero-based index of the diversity group's bad agent.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bad_agent: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ability_size: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity_size: Option<usize>,
    /// Selection measures for `atd-experiment`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    /// Ensemble files for `predict`; the built-in two-signal pair when absent.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<Vec<PathBuf>>,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),+) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )+
    };
}

pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_BUDGET: usize = 1000;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// Values set in `top` win.
    pub fn overlay(mut self, top: ExperimentConfig) -> Self {
        if top.instance.is_some() {
            self.fixture = None;
        }
        if top.fixture.is_some() {
            self.instance = None;
        }
        overlay!(
            self,
            top,
            instance,
            fixture,
            policy,
            rule,
            trials,
            seed,
            out,
            format,
            drop,
            budget,
            start,
            faithful,
            ck,
            bad_state,
            bad_agent,
            ability_size,
            diversity_size,
            family,
            ensemble
        );
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the config without its output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        Sha256::digest(c.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(DEFAULT_TRIALS)
    }

    pub fn formats(&self) -> Vec<Format> {
        let mut f = self
            .format
            .clone()
            .unwrap_or_else(|| vec![Format::Md, Format::Csv, Format::Svg]);
        f.sort();
        f.dedup();
        f
    }

    pub fn wants(&self, format: Format) -> bool {
        self.formats().contains(&format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("seed = 1\ncolour = 2\n").is_err());
    }

    #[test]
    fn overlay_prefers_flags_and_swaps_sources() {
        let file: ExperimentConfig =
            toml::from_str("fixture = \"non-injective\"\nseed = 3\ntrials = 10\n").unwrap();
        let flags = ExperimentConfig {
            instance: Some("x.txt".into()),
            seed: Some(9),
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.fixture, None);
        assert_eq!(merged.seed(), 9);
        assert_eq!(merged.trials(), 10);
    }

    #[test]
    fn hash_ignores_the_output_directory() {
        let a = ExperimentConfig {
            seed: Some(1),
            out: Some("a".into()),
            ..Default::default()
        };
        let b = ExperimentConfig {
            out: Some("b".into()),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig {
            fixture: Some("hp-example".into()),
            policy: Some(PolicyKind::RoundRobin),
            format: Some(vec![Format::Csv, Format::Svg]),
            ck: Some(vec!["x5".into(), "x*".into()]),
            ..Default::default()
        };
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
