//! Experiment configuration: one TOML file, strict keys, stable hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::brain::BrainConfig;
use crate::decoupler::{DecouplerConfig, SEG_FACTOR};
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::inference::InferenceConfig;
use crate::tasks::DatasetSpec;

/// Environment variable that overrides `inference.backend`.
pub const BACKEND_ENV: &str = "NEURONS_BACKEND";
/// Environment variable that overrides `inference.backend_command`.
pub const BACKEND_CMD_ENV: &str = "NEURONS_BACKEND_CMD";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    External,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stub" => Ok(Self::Stub),
            "external" => Ok(Self::External),
            other => Err(Error::config("inference.backend", format!("unknown backend `{other}` (stub|external)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub latent_channels: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self { latent_channels: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub mask_threshold: f64,
    pub max_prompt_tokens: usize,
    pub backend: BackendKind,
    /// Command line of the external backend.
    pub backend_command: Option<String>,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let d = InferenceConfig::default();
        Self {
            mask_threshold: d.mask_threshold,
            max_prompt_tokens: d.max_prompt_tokens,
            backend: BackendKind::Stub,
            backend_command: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub repeats: usize,
    pub verb_threshold: f64,
    pub classifier_labels: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        Self {
            repeats: d.repeats,
            verb_threshold: d.verb_threshold,
            classifier_labels: 64,
        }
    }
}

/// Root seed plus one section per stage. The dataset seed is the root seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DatasetSpec,
    pub brain: BrainConfig,
    pub decoupler: DecouplerConfig,
    pub encoders: EncoderSection,
    pub inference: InferenceSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            data: DatasetSpec::default(),
            brain: BrainConfig::default(),
            decoupler: DecouplerConfig::default(),
            encoders: EncoderSection::default(),
            inference: InferenceSection::default(),
            eval: EvalSection::default(),
        };
        c.data.seed = c.seed;
        c
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        if table
            .get("data")
            .and_then(|d| d.as_table())
            .is_some_and(|d| d.contains_key("seed"))
        {
            return Err(Error::config("data.seed", "the dataset seed is the root `seed`"));
        }
        let mut c: Self = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        c.data.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets the root seed everywhere it is copied.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.seed != self.seed {
            return Err(Error::config("data.seed", "the dataset seed is the root `seed`"));
        }
        self.data.validate()?;
        self.brain.validate()?;
        self.decoupler.validate()?;
        if self.encoders.latent_channels < 3 {
            return Err(Error::config("encoders.latent_channels", "must be at least 3"));
        }
        let f = 2 * SEG_FACTOR;
        if !self.data.height.is_multiple_of(f) || !self.data.width.is_multiple_of(f) {
            return Err(Error::config("data.height", format!("frame sides must be multiples of {f}")));
        }
        let i = &self.inference;
        if !(i.mask_threshold > 0.0 && i.mask_threshold < 1.0) {
            return Err(Error::config("inference.mask_threshold", "must lie in (0, 1)"));
        }
        if i.max_prompt_tokens == 0 || i.max_prompt_tokens > self.decoupler.max_caption_len {
            return Err(Error::config(
                "inference.max_prompt_tokens",
                format!("must lie in 1..={}", self.decoupler.max_caption_len),
            ));
        }
        if i.backend == BackendKind::External && i.backend_command.as_deref().is_none_or(|c| c.trim().is_empty()) {
            return Err(Error::config("inference.backend_command", "the external backend needs a command"));
        }
        let e = &self.eval;
        if e.repeats == 0 {
            return Err(Error::config("eval.repeats", "must be positive"));
        }
        if e.classifier_labels < 50 {
            return Err(Error::config("eval.classifier_labels", "50-way tests need at least 50 labels"));
        }
        if !(0.0..=1.0).contains(&e.verb_threshold) {
            return Err(Error::config("eval.verb_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys), hex encoded.
    pub fn hash(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(|e| Error::Format(e.to_string()))?;
        let canonical = serde_json::to_string(&value).map_err(|e| Error::Format(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut c = self.clone();
        c.data.seed = 0;
        let mut table = toml::Table::try_from(&c).map_err(|e| Error::Format(e.to_string()))?;
        if let Some(d) = table.get_mut("data").and_then(|d| d.as_table_mut()) {
            d.remove("seed");
        }
        toml::to_string(&table).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            seed: self.seed,
            tokens: self.brain.tokens,
            text_tokens: self.brain.text_tokens,
            width: self.brain.width,
            latent_channels: self.encoders.latent_channels,
            latent_factor: 2 * SEG_FACTOR,
        }
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            mask_threshold: self.inference.mask_threshold,
            max_prompt_tokens: self.inference.max_prompt_tokens,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            repeats: self.eval.repeats,
            seed: self.seed,
            verb_threshold: self.eval.verb_threshold,
        }
    }

    /// Backend kind and command after the environment overrides.
    pub fn resolved_backend(
        &self,
        env_kind: Option<&str>,
        env_command: Option<&str>,
    ) -> Result<(BackendKind, Option<String>)> {
        let kind = match env_kind {
            Some(k) if !k.trim().is_empty() => k.parse()?,
            _ => self.inference.backend,
        };
        let command = env_command
            .filter(|c| !c.trim().is_empty())
            .map(String::from)
            .or_else(|| self.inference.backend_command.clone());
        if kind == BackendKind::External && command.is_none() {
            return Err(Error::config("inference.backend_command", "the external backend needs a command"));
        }
        Ok((kind, command))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let c = ExperimentConfig::parse("seed = 9\n[brain]\nepochs = 3\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.data.seed, 9);
        assert_eq!(c.brain.epochs, 3);
        assert_eq!(c.decoupler, DecouplerConfig::default());
    }

    #[test]
    fn five_frames_are_rejected() {
        let e = ExperimentConfig::parse("[data]\nframes = 5\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field.contains("frames")), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sed = 1\n").is_err());
        assert!(ExperimentConfig::parse("[brain]\nhiden = 3\n").is_err());
        assert!(matches!(
            ExperimentConfig::parse("[data]\nseed = 3\n"),
            Err(Error::Config { ref field, .. }) if field == "data.seed"
        ));
    }

    #[test]
    fn hash_ignores_key_order_and_survives_reserialization() {
        let a = ExperimentConfig::parse("seed = 4\n[brain]\nepochs = 2\nlr = 0.01\n[data]\nnum_clips = 3\n").unwrap();
        let c = ExperimentConfig::parse("seed = 4\n[data]\nnum_clips = 3\n[brain]\nlr = 0.01\nepochs = 2\n").unwrap();
        assert_eq!(a.hash().unwrap(), c.hash().unwrap());
        let again = ExperimentConfig::parse(&a.to_toml().unwrap()).unwrap();
        assert_eq!(again, a);
        assert_eq!(again.hash().unwrap(), a.hash().unwrap());
        assert_ne!(a.hash().unwrap(), a.clone().with_seed(5).hash().unwrap());
    }

    #[test]
    fn backend_override() {
        let c = ExperimentConfig::default();
        assert_eq!(c.resolved_backend(None, None).unwrap(), (BackendKind::Stub, None));
        assert!(c.resolved_backend(Some("external"), None).is_err());
        let (k, cmd) = c.resolved_backend(Some("EXTERNAL"), Some("gen --fast")).unwrap();
        assert_eq!((k, cmd.as_deref()), (BackendKind::External, Some("gen --fast")));
        assert!(c.resolved_backend(Some("magic"), None).is_err());
    }
}
