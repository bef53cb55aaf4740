//! Run configuration: a TOML file with sections, overridable from the
//! command line, echoed into every run report.

use crate::error::{io_error, CliError};
use mlnmr::data::{load_network, CovariateSpec, Network, NetworkFiles};
use mlnmr::likelihood::{
    BaselineStrata, Consistency, EffectModifierSharing, Effects, ModelOptions, Prior, Priors,
};
use mlnmr::sampler::{AdequacyConfig, SamplerConfig};
use mlnmr::survival::Family;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub ipd: Option<PathBuf>,
    pub agd_events: Option<PathBuf>,
    pub agd_covariates: Option<PathBuf>,
    pub correlations: Option<PathBuf>,
    /// Reference treatment (default: alphabetically first).
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateConfig {
    pub name: String,
    pub family: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: String,
    /// `independent`, `shared`, or `classes` (with `[model.classes]`).
    pub effect_modifiers: String,
    pub classes: BTreeMap<String, String>,
    /// `fixed` or `random`.
    pub effects: String,
    /// `study` or `study_arm`.
    pub baseline: String,
    /// `consistency` or `ume`.
    pub consistency: String,
    pub spline_order: usize,
    pub n_knots: usize,
    pub center: bool,
    pub int_skip: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: "weibull_ph".into(),
            effect_modifiers: "independent".into(),
            classes: BTreeMap::new(),
            effects: "fixed".into(),
            baseline: "study".into(),
            consistency: "consistency".into(),
            spline_order: 4,
            n_knots: 7,
            center: true,
            int_skip: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub intercept: Option<String>,
    pub beta1: Option<String>,
    pub beta2: Option<String>,
    pub gamma: Option<String>,
    pub aux: Option<String>,
    pub rw_sd: Option<String>,
    pub tau: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_depth: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            chains: d.chains,
            warmup: d.warmup,
            samples: d.samples,
            seed: d.seed,
            target_accept: d.target_accept,
            max_depth: d.max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdequacySection {
    pub threshold: f64,
    pub initial_n_int: usize,
    pub max_n_int: usize,
    pub max_longer_reruns: usize,
}

impl Default for AdequacySection {
    fn default() -> Self {
        let d = AdequacyConfig::default();
        Self {
            threshold: d.threshold,
            initial_n_int: d.initial_n_int,
            max_n_int: d.max_n_int,
            max_longer_reruns: d.max_longer_reruns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// `csv` or `binary`.
    pub format: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("mlnmr-out"), format: "csv".into() }
    }
}

/// Everything needed to reproduce a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub covariates: Vec<CovariateConfig>,
    pub model: ModelConfig,
    pub priors: PriorConfig,
    pub sampler: SamplerSection,
    pub adequacy: AdequacySection,
    pub output: OutputConfig,
    /// Directory that relative paths are resolved against (not serialized).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides; `None` keeps the file's value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub family: Option<String>,
    pub effect_modifiers: Option<String>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub samples: Option<usize>,
    pub target_accept: Option<f64>,
    pub n_int: Option<usize>,
    pub n_knots: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
}

fn parse_err(what: &str, value: &str, allowed: &str) -> CliError {
    CliError::usage("config", format!("unknown {what} '{value}' (expected {allowed})"))
}

impl RunConfig {
    /// Reads a configuration file; relative paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::usage("config", format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.family {
            self.model.family = v.clone();
        }
        if let Some(v) = &o.effect_modifiers {
            self.model.effect_modifiers = v.clone();
        }
        if let Some(v) = o.seed {
            self.sampler.seed = v;
        }
        if let Some(v) = o.chains {
            self.sampler.chains = v;
        }
        if let Some(v) = o.warmup {
            self.sampler.warmup = v;
        }
        if let Some(v) = o.samples {
            self.sampler.samples = v;
        }
        if let Some(v) = o.target_accept {
            self.sampler.target_accept = v;
        }
        if let Some(v) = o.n_int {
            self.adequacy.initial_n_int = v;
        }
        if let Some(v) = o.n_knots {
            self.model.n_knots = v;
        }
        if let Some(v) = &o.out {
            // Command-line paths are relative to the working directory.
            self.output.dir = std::env::current_dir().map(|d| d.join(v)).unwrap_or_else(|_| v.clone());
        }
        if let Some(v) = &o.format {
            self.output.format = v.clone();
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The configuration as TOML, exactly as it is applied.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// A copy with every path made absolute, for reuse by later commands.
    pub fn absolutized(&self) -> Self {
        let abs = |p: &Option<PathBuf>| p.as_ref().map(|p| absolute(&self.resolve(p)));
        let mut out = self.clone();
        out.data.ipd = abs(&self.data.ipd);
        out.data.agd_events = abs(&self.data.agd_events);
        out.data.agd_covariates = abs(&self.data.agd_covariates);
        out.data.correlations = abs(&self.data.correlations);
        out.output.dir = absolute(&self.output_dir());
        out.base_dir = PathBuf::new();
        out
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn binary_output(&self) -> Result<bool, CliError> {
        match self.output.format.as_str() {
            "csv" => Ok(false),
            "binary" => Ok(true),
            other => Err(parse_err("output format", other, "csv, binary")),
        }
    }

    pub fn files(&self) -> NetworkFiles {
        let r = |p: &Option<PathBuf>| p.as_ref().map(|p| self.resolve(p));
        NetworkFiles {
            ipd: r(&self.data.ipd),
            agd_events: r(&self.data.agd_events),
            agd_covariates: r(&self.data.agd_covariates),
            correlations: r(&self.data.correlations),
        }
    }

    /// Data files in a fixed order with their configured names.
    pub fn data_files(&self) -> Vec<(String, PathBuf)> {
        [
            ("ipd", &self.data.ipd),
            ("agd_events", &self.data.agd_events),
            ("agd_covariates", &self.data.agd_covariates),
            ("correlations", &self.data.correlations),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.as_ref().map(|p| (k.to_string(), self.resolve(p))))
        .collect()
    }

    pub fn schema(&self) -> Result<Vec<CovariateSpec>, CliError> {
        self.covariates
            .iter()
            .map(|c| {
                Ok(CovariateSpec::new(
                    c.name.clone(),
                    c.family.parse().map_err(|e| CliError::usage("config", e))?,
                    c.role.parse().map_err(|e| CliError::usage("config", e))?,
                ))
            })
            .collect()
    }

    pub fn network(&self) -> Result<Network, CliError> {
        let files = self.files();
        if files.ipd.is_none() && files.agd_events.is_none() {
            return Err(CliError::usage("config", "no data: set data.ipd and/or data.agd_events"));
        }
        for (_, p) in self.data_files() {
            if !p.exists() {
                return Err(CliError::usage("data", format!("data file not found: {}", p.display())));
            }
        }
        Ok(load_network(&files, &self.schema()?, self.data.reference.as_deref())?)
    }

    pub fn model_options(&self) -> Result<ModelOptions, CliError> {
        let m = &self.model;
        let family: Family = m.family.parse().map_err(|e| CliError::usage("config", e))?;
        let sharing = match m.effect_modifiers.as_str() {
            "independent" => EffectModifierSharing::Independent,
            "shared" => EffectModifierSharing::SharedAll,
            "classes" => EffectModifierSharing::Classes(m.classes.clone()),
            other => return Err(parse_err("effect-modifier sharing", other, "independent, shared, classes")),
        };
        let effects = match m.effects.as_str() {
            "fixed" => Effects::Fixed,
            "random" => Effects::Random,
            other => return Err(parse_err("effects", other, "fixed, random")),
        };
        let strata = match m.baseline.as_str() {
            "study" => BaselineStrata::Study,
            "study_arm" => BaselineStrata::StudyArm,
            other => return Err(parse_err("baseline stratification", other, "study, study_arm")),
        };
        let consistency = match m.consistency.as_str() {
            "consistency" => Consistency::Consistency,
            "ume" => Consistency::UnrelatedMeanEffects,
            other => return Err(parse_err("consistency model", other, "consistency, ume")),
        };
        let mut priors = Priors::default();
        let p = &self.priors;
        let set = |slot: &mut Prior, v: &Option<String>| -> Result<(), CliError> {
            if let Some(s) = v {
                *slot = s.parse().map_err(|e| CliError::usage("config", e))?;
            }
            Ok(())
        };
        set(&mut priors.intercept, &p.intercept)?;
        set(&mut priors.beta1, &p.beta1)?;
        set(&mut priors.beta2, &p.beta2)?;
        set(&mut priors.gamma, &p.gamma)?;
        set(&mut priors.aux, &p.aux)?;
        set(&mut priors.rw_sd, &p.rw_sd)?;
        set(&mut priors.tau, &p.tau)?;
        Ok(ModelOptions {
            family,
            sharing,
            effects,
            strata,
            consistency,
            spline_order: m.spline_order,
            n_knots: m.n_knots,
            priors,
            n_int: self.adequacy.initial_n_int,
            int_skip: m.int_skip,
            center: m.center,
        })
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig, CliError> {
        let s = &self.sampler;
        let cfg = SamplerConfig {
            chains: s.chains,
            warmup: s.warmup,
            samples: s.samples,
            seed: s.seed,
            target_accept: s.target_accept,
            max_depth: s.max_depth,
            ..SamplerConfig::default()
        };
        cfg.validate().map_err(|e| CliError::usage("config", e))?;
        Ok(cfg)
    }

    pub fn adequacy_config(&self) -> AdequacyConfig {
        let a = &self.adequacy;
        AdequacyConfig {
            threshold: a.threshold,
            initial_n_int: a.initial_n_int,
            max_n_int: a.max_n_int,
            max_longer_reruns: a.max_longer_reruns,
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nfamly = \"weibull_ph\"\n").is_err());
    }

    #[test]
    fn command_line_wins() {
        let mut cfg: RunConfig = toml::from_str("[sampler]\nseed = 3\nchains = 2\n").unwrap();
        cfg.apply(&Overrides { seed: Some(9), ..Overrides::default() });
        assert_eq!(cfg.sampler.seed, 9);
        assert_eq!(cfg.sampler.chains, 2);
    }

    #[test]
    fn model_options_parse_and_reject_typos() {
        let mut cfg = RunConfig::default();
        cfg.model.effect_modifiers = "shared".into();
        cfg.priors.aux = Some("half_normal(10)".into());
        let o = cfg.model_options().unwrap();
        assert_eq!(o.sharing, EffectModifierSharing::SharedAll);
        assert_eq!(o.priors.aux, Prior::HalfNormal { sd: 10.0 });
        cfg.model.family = "weibul".into();
        assert!(cfg.model_options().is_err());
    }
}
