//! Run configuration: one TOML file, with command-line overrides applied on top.

use std::path::{Path, PathBuf};

use ivs_core::evaluation::SsrAnchor;
use ivs_core::harness::{ModelId, RollingConfig};
use ivs_core::mcs::{LossAggregation, DEFAULT_ALPHA, DEFAULT_BOOTSTRAP, DEFAULT_P_CAP};
use ivs_core::surface_data::{CsvSchema, MaturityGroupRule, RangeFilter, SyntheticConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub kind: InputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commodity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<CsvSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_filter: Option<RangeFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liquidity: Option<MaturityGroupRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub ssr_anchor: SsrAnchor,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            ssr_anchor: SsrAnchor::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McsSettings {
    pub alpha: f64,
    pub n_boot: usize,
    pub p_cap: usize,
    pub aggregation: LossAggregation,
}

impl Default for McsSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            n_boot: DEFAULT_BOOTSTRAP,
            p_cap: DEFAULT_P_CAP,
            aggregation: LossAggregation::Daily,
        }
    }
}

/// Provenance block written into manifests; ignored when a manifest is
/// replayed as a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub command: String,
    pub library_version: String,
    pub commodity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub input: InputConfig,
    #[serde(default)]
    pub rolling: RollingConfig,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub mcs: McsSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizons: Option<Vec<usize>>,
    pub models: Option<Vec<ModelId>>,
}

pub fn parse_horizons(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|h| {
            h.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad horizon {h:?}")))
        })
        .collect()
}

pub fn parse_models(s: &str) -> CliResult<Vec<ModelId>> {
    s.split(',')
        .map(|m| m.trim().parse::<ModelId>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(h) = &o.horizons {
            self.rolling.horizons = h.clone();
        }
        if let Some(m) = &o.models {
            self.rolling.models = m.clone();
        }
        self.manifest = None;
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (config `seed` or --seed)".into()))
    }

    /// Checks everything that can be checked without touching data, and
    /// normalises horizon and model order.
    pub fn validate(&mut self) -> CliResult<()> {
        self.seed()?;
        self.rolling = self
            .rolling
            .normalized()
            .map_err(|e| CliError::Config(e.to_string()))?;
        match self.input.kind {
            InputKind::Synthetic => {
                let syn = self
                    .input
                    .synthetic
                    .as_ref()
                    .ok_or_else(|| CliError::Config("synthetic input needs an [input.synthetic] table".into()))?;
                syn.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            InputKind::Csv => {
                if self.input.path.is_none() {
                    return Err(CliError::Config("csv input needs `path`".into()));
                }
            }
        }
        if let Some(rule) = &self.input.liquidity {
            rule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        let m = &self.mcs;
        if !(m.alpha > 0.0 && m.alpha <= 0.5) {
            return Err(CliError::Config(format!("mcs.alpha {} outside (0, 0.5]", m.alpha)));
        }
        if m.n_boot < 100 {
            return Err(CliError::Config(format!("mcs.n_boot {} < 100", m.n_boot)));
        }
        if m.p_cap == 0 {
            return Err(CliError::Config("mcs.p_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[input]
kind = "synthetic"
[input.synthetic]
n_days = 80
quotes_per_day = 20
[rolling]
window_len = 40
n_oos = 5
horizons = [1, 2]
models = ["RT", "GG-RW"]
"#;

    #[test]
    fn minimal_config_parses_and_round_trips() {
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.rolling.window_len, 40);
        assert_eq!(c.rolling.models, vec![ModelId::Rt, "GG-RW".parse().unwrap()]);
        assert_eq!(c.mcs.n_boot, 5000);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_model_is_config_error() {
        let bad = MINIMAL.replace("\"GG-RW\"", "\"GG-LSTM\"");
        assert!(matches!(RunConfig::from_toml(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            horizons: Some(vec![5]),
            models: Some(parse_models("CT-VAR").unwrap()),
        });
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.rolling.horizons, vec![5]);
        assert_eq!(c.rolling.models.len(), 1);
        assert!(parse_horizons("1,x").is_err());
    }

    #[test]
    fn seed_required() {
        let mut c = RunConfig::from_toml(&MINIMAL.replace("seed = 7", "")).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
