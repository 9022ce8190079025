//! Run configuration: TOML file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use hemsmeta_core::context_detect::DetectConfig;
use hemsmeta_core::dyna_model::DynaConfig;
use hemsmeta_core::energy_env::{load_dataset, synth_year, Dataset, EnvConfig, Regime, Rule};
use hemsmeta_core::gpi_agent::AgentConfig;
use hemsmeta_core::meta_reptile::{BaselineConfig, BaselineKind, MetaConfig, Variant};
use hemsmeta_core::morl_metrics::DEFAULT_HV_REF;

use crate::Usage;

/// Everything evaluated by `run`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baseline(BaselineKind, Variant),
    Meta { finetune: bool, variant: Variant },
    Rule(Rule),
}

pub const METHOD_NAMES: [&str; 14] = [
    "gpi-ls-month",
    "gpi-pd-month",
    "finetune-gpi-ls",
    "finetune-gpi-pd",
    "gpi-ls-year",
    "gpi-pd-year",
    "joint-gpi-ls",
    "joint-gpi-pd",
    "r-gpi-ls",
    "r-gpi-pd",
    "finetune-r-gpi-ls",
    "finetune-r-gpi-pd",
    "rule1",
    "rule2",
];

impl Method {
    /// Key of the matching budget row, if the method trains.
    pub fn budget_kind(self) -> Option<&'static str> {
        match self {
            Method::Baseline(kind, _) => Some(kind.name()),
            Method::Meta { finetune: false, .. } => Some("r_gpi"),
            Method::Meta { finetune: true, .. } => Some("finetune_r_gpi"),
            Method::Rule(_) => None,
        }
    }
}

impl FromStr for Method {
    type Err = Usage;

    fn from_str(s: &str) -> Result<Self, Usage> {
        use BaselineKind::*;
        use Variant::*;
        let m = match s {
            "gpi-ls-month" => Method::Baseline(Month, Ls),
            "gpi-pd-month" => Method::Baseline(Month, Pd),
            "finetune-gpi-ls" => Method::Baseline(FinetuneMonth, Ls),
            "finetune-gpi-pd" => Method::Baseline(FinetuneMonth, Pd),
            "gpi-ls-year" => Method::Baseline(Year, Ls),
            "gpi-pd-year" => Method::Baseline(Year, Pd),
            "joint-gpi-ls" => Method::Baseline(Joint, Ls),
            "joint-gpi-pd" => Method::Baseline(Joint, Pd),
            "r-gpi-ls" => Method::Meta {
                finetune: false,
                variant: Ls,
            },
            "r-gpi-pd" => Method::Meta {
                finetune: false,
                variant: Pd,
            },
            "finetune-r-gpi-ls" => Method::Meta {
                finetune: true,
                variant: Ls,
            },
            "finetune-r-gpi-pd" => Method::Meta {
                finetune: true,
                variant: Pd,
            },
            "rule1" => Method::Rule(Rule::Early),
            "rule2" => Method::Rule(Rule::Late),
            _ => {
                return Err(Usage(format!(
                    "unknown method `{s}`; expected one of: {}",
                    METHOD_NAMES.join(", ")
                )))
            }
        };
        Ok(m)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match *self {
            Method::Baseline(kind, v) => {
                let v = v.name();
                match kind {
                    BaselineKind::Month => format!("gpi-{v}-month"),
                    BaselineKind::FinetuneMonth => format!("finetune-gpi-{v}"),
                    BaselineKind::Year => format!("gpi-{v}-year"),
                    BaselineKind::Joint => format!("joint-gpi-{v}"),
                }
            }
            Method::Meta { finetune, variant } => {
                format!("{}r-gpi-{}", if finetune { "finetune-" } else { "" }, variant.name())
            }
            Method::Rule(r) => format!("rule{}", r.index()),
        };
        f.write_str(&name)
    }
}

/// Seeded synthetic year: `start_day:solar_scale:noise` regimes joined by commas.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub regimes: Vec<Regime>,
}

impl FromStr for SynthSpec {
    type Err = Usage;

    fn from_str(s: &str) -> Result<Self, Usage> {
        let bad = |part: &str| {
            Usage(format!(
                "bad regime `{part}` in synth spec; expected start_day:solar_scale:noise"
            ))
        };
        let mut regimes = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let f: Vec<&str> = part.split(':').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad(part));
            }
            regimes.push(Regime {
                start_day: f[0].parse().map_err(|_| bad(part))?,
                solar_scale: f[1].parse().map_err(|_| bad(part))?,
                noise: f[2].parse().map_err(|_| bad(part))?,
            });
        }
        if regimes.is_empty() {
            return Err(Usage("empty synth spec".into()));
        }
        Ok(Self { regimes })
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .regimes
            .iter()
            .map(|r| format!("{}:{}:{}", r.start_day, r.solar_scale, r.noise))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Option<String>,
    pub seeds: Vec<u64>,
    /// Hourly CSV; exclusive with `synth_spec`.
    pub dataset: Option<PathBuf>,
    pub synth_spec: Option<String>,
    pub synth_seed: u64,
    /// Fixed `contexts.csv`; detection runs when absent.
    pub contexts: Option<PathBuf>,
    pub hv_ref: [f64; 2],
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub dyna: DynaConfig,
    pub meta: MetaConfig,
    pub baseline: BaselineConfig,
    pub detect: DetectConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: None,
            seeds: (0..5).collect(),
            dataset: None,
            synth_spec: None,
            synth_seed: 0,
            contexts: None,
            hv_ref: DEFAULT_HV_REF,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            dyna: DynaConfig::default(),
            meta: MetaConfig::default(),
            baseline: BaselineConfig::default(),
            detect: DetectConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| hemsmeta_core::Error::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.contexts].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), Usage> {
        if self.dataset.is_some() && self.synth_spec.is_some() {
            return Err(Usage("give either a dataset or a synth spec, not both".into()));
        }
        if self.seeds.is_empty() {
            return Err(Usage("no seeds".into()));
        }
        let checks = [
            self.env.validate(),
            self.agent.validate(),
            self.dyna.validate(),
            self.meta.validate(),
            self.detect.validate(),
        ];
        for c in checks {
            c.map_err(|e| Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn method(&self) -> Result<Method, Usage> {
        self.method
            .as_deref()
            .ok_or_else(|| Usage(format!("no method given; expected one of: {}", METHOD_NAMES.join(", "))))?
            .parse()
    }

    /// Loads the dataset or generates the synthetic year.
    pub fn dataset(&self) -> anyhow::Result<(Arc<Dataset>, String)> {
        match (&self.dataset, &self.synth_spec) {
            (Some(path), None) => Ok((Arc::new(load_dataset(path)?), path.display().to_string())),
            (None, Some(spec)) => {
                let spec: SynthSpec = spec.parse()?;
                let data = synth_year(self.synth_seed, &spec.regimes)?;
                Ok((Arc::new(data), format!("synth:{spec}@{}", self.synth_seed)))
            }
            (None, None) => Err(Usage("no data: pass --dataset or --synth-spec".into()).into()),
            (Some(_), Some(_)) => Err(Usage("give either a dataset or a synth spec, not both".into()).into()),
        }
    }
}

/// `--seed` values: comma-separated integers.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, Usage> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| Usage(format!("bad seed `{p}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for name in METHOD_NAMES {
            assert_eq!(name.parse::<Method>().unwrap().to_string(), name);
        }
    }

    #[test]
    fn unknown_method_lists_choices() {
        let err = "r-gpi".parse::<Method>().unwrap_err();
        assert!(err.0.contains("finetune-r-gpi-pd") && err.0.contains("rule2"));
    }

    #[test]
    fn budget_kinds() {
        assert_eq!(
            "finetune-gpi-pd".parse::<Method>().unwrap().budget_kind(),
            Some("finetune_month")
        );
        assert_eq!("r-gpi-ls".parse::<Method>().unwrap().budget_kind(), Some("r_gpi"));
        assert_eq!("rule1".parse::<Method>().unwrap().budget_kind(), None);
    }

    #[test]
    fn synth_spec_roundtrip() {
        let s: SynthSpec = "1:1:0.05, 122:2.5:0.05".parse().unwrap();
        assert_eq!(s.regimes.len(), 2);
        assert_eq!(s.regimes[1].start_day, 122);
        assert_eq!(s.to_string().parse::<SynthSpec>().unwrap(), s);
        assert!("1:1".parse::<SynthSpec>().is_err());
        assert!("".parse::<SynthSpec>().is_err());
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg: RunConfig =
            toml::from_str("method = \"rule1\"\nseeds = [3]\n[agent]\nhidden = [64, 64]\n[meta]\nouter_lr = 0.7\n")
                .unwrap();
        assert_eq!(cfg.agent.hidden, vec![64, 64]);
        assert_eq!(cfg.agent.lr, AgentConfig::default().lr);
        assert_eq!(cfg.meta.outer_lr, 0.7);
        assert_eq!(cfg.meta.inner_steps, MetaConfig::default().inner_steps);
        assert!(toml::from_str::<RunConfig>("metod = \"rule1\"").is_err());
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_are_full_scale() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.agent.hidden, vec![256; 4]);
        assert_eq!(cfg.agent.lr, 3e-4);
        assert_eq!(cfg.agent.target_update, 200);
        assert_eq!(cfg.agent.replay_capacity, 200_000);
        assert_eq!(cfg.meta.outer_lr, 3e-4);
        assert_eq!(cfg.detect.lr, 1e-3);
        assert_eq!(cfg.detect.epochs, 500);
        assert_eq!(cfg.seeds.len(), 5);
    }
}
