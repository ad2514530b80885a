//! Run configuration: a flat TOML document, overridden by `--set key=value`
//! and then by typed flags.

use std::path::{Path, PathBuf};

use dialknow::corpus::InputConfig;
use dialknow::encoder::EncoderShape;
use dialknow::generation::{DecodeConfig, DecodeStrategy};
use dialknow::metric_learning::{DkrLoss, NegativeSampling, SamplingStrategy, TrainConfig, TripletConfig};
use dialknow::selection::CascadeVariant;
use dialknow::toy::ToyConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{io_err, CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Nll,
    Triplet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Context-only classifier.
    Plain,
    /// Context–snippet classifier marginalized over retrieved snippets.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningName {
    Gold,
    Selected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Output name under the command's directory; defaults per command.
    pub name: Option<String>,

    pub knowledge: Option<PathBuf>,
    pub logs: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Corpus directory, or the name of one under `$DIALKNOW_OUT/data`.
    pub data: Option<String>,
    /// Model references: a checkpoint path, a run name under
    /// `$DIALKNOW_OUT/models`, or `oracle` (evaluate only).
    pub detector: Option<String>,
    pub selector: Option<String>,
    pub generator: Option<String>,
    pub retriever: Option<String>,

    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub sampling: SamplingStrategy,
    pub num_negatives: usize,
    pub hard_pool_size: usize,
    pub bucket_count: usize,
    pub embed_dim: usize,
    pub max_context_tokens: usize,
    pub include_domain: bool,
    pub include_entity: bool,
    pub loss: LossName,
    pub margin: f64,
    pub cascade_variant: CascadeVariant,
    pub detector_kind: DetectorKind,
    pub conditioning: ConditioningName,
    pub max_vocab: usize,

    pub threshold: f64,
    pub top_n: usize,
    pub top_k: usize,
    pub decode: DecodeStrategy,
    pub beam_size: usize,
    pub repetition_penalty: f64,
    pub max_length: usize,
    pub nucleus_p: f64,
    pub rouge_beta: f64,

    pub warmup: usize,
    pub repeats: usize,
    pub bench_turns: usize,

    pub toy_domains: usize,
    pub toy_entities: usize,
    pub toy_docs: usize,
    pub toy_domain_docs: usize,
    pub toy_dialogs: usize,
    pub toy_non_seeking: f64,
    pub toy_filler_words: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let decode = DecodeConfig::default();
        let toy = ToyConfig::default();
        Self {
            seed: None,
            name: None,
            knowledge: None,
            logs: None,
            labels: None,
            data: None,
            detector: None,
            selector: None,
            generator: None,
            retriever: None,
            learning_rate: train.learning_rate,
            steps: train.steps,
            batch_size: train.batch_size,
            sampling: train.sampling.strategy,
            num_negatives: train.sampling.num_negatives,
            hard_pool_size: train.sampling.hard_pool_size,
            bucket_count: train.encoder.bucket_count,
            embed_dim: train.encoder.embed_dim,
            max_context_tokens: train.input.max_context_tokens,
            include_domain: train.input.include_domain,
            include_entity: train.input.include_entity,
            loss: LossName::Nll,
            margin: TripletConfig::default().margin,
            cascade_variant: CascadeVariant::ThreeStage,
            detector_kind: DetectorKind::Plain,
            conditioning: ConditioningName::Gold,
            max_vocab: dialknow::generation::DEFAULT_MAX_VOCAB,
            threshold: dialknow::detection::DEFAULT_THRESHOLD,
            top_n: dialknow::generation::DEFAULT_TOP_N,
            top_k: 5,
            decode: decode.strategy,
            beam_size: decode.beam_size,
            repetition_penalty: decode.repetition_penalty,
            max_length: decode.max_length,
            nucleus_p: decode.nucleus_p,
            rouge_beta: dialknow::evaluation::DEFAULT_ROUGE_BETA,
            warmup: 2,
            repeats: 3,
            bench_turns: 50,
            toy_domains: toy.domains,
            toy_entities: toy.entities_per_domain,
            toy_docs: toy.docs_per_entity,
            toy_domain_docs: toy.domain_docs,
            toy_dialogs: toy.dialogs,
            toy_non_seeking: toy.non_seeking_fraction,
            toy_filler_words: toy.filler_words,
        }
    }
}

impl RunConfig {
    /// Merges the optional config file, `key=value` overrides and flag
    /// values (in increasing precedence).
    pub fn load(file: Option<&Path>, sets: &[String], flags: Vec<(&str, Value)>) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(io_err(path))?;
                text.parse::<Table>().map_err(|e| CliError::Toml { path: path.into(), message: e.to_string() })?
            }
            None => Table::new(),
        };
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {s:?}")))?;
            table.insert(key.trim().to_string(), parse_value(raw.trim()));
        }
        for (key, value) in flags {
            table.insert(key.to_string(), value);
        }
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(CliError::Config("seed is required (config file, --seed or --set seed=N)".into()));
        }
        for (key, path) in [("knowledge", &self.knowledge), ("logs", &self.logs), ("labels", &self.labels)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(CliError::Config(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        if self.top_n == 0 || self.top_k == 0 {
            return Err(CliError::Config("top_n and top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn input(&self) -> InputConfig {
        InputConfig {
            max_context_tokens: self.max_context_tokens,
            include_domain: self.include_domain,
            include_entity: self.include_entity,
        }
    }

    pub fn shape(&self) -> EncoderShape {
        EncoderShape { bucket_count: self.bucket_count, embed_dim: self.embed_dim }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            sampling: NegativeSampling {
                strategy: self.sampling,
                num_negatives: self.num_negatives,
                hard_pool_size: self.hard_pool_size,
                seed: self.seed(),
            },
            seed: self.seed(),
            encoder: self.shape(),
            input: self.input(),
        }
    }

    pub fn dkr_loss(&self) -> Result<DkrLoss> {
        Ok(match self.loss {
            LossName::Nll => DkrLoss::Nll,
            LossName::Triplet => DkrLoss::Triplet(TripletConfig::new(self.margin)?),
        })
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            strategy: self.decode,
            beam_size: self.beam_size,
            repetition_penalty: self.repetition_penalty,
            max_length: self.max_length,
            nucleus_p: self.nucleus_p,
            seed: self.seed(),
        }
    }

    pub fn toy(&self) -> ToyConfig {
        ToyConfig {
            domains: self.toy_domains,
            entities_per_domain: self.toy_entities,
            docs_per_entity: self.toy_docs,
            domain_docs: self.toy_domain_docs,
            dialogs: self.toy_dialogs,
            non_seeking_fraction: self.toy_non_seeking,
            filler_words: self.toy_filler_words,
            seed: self.seed(),
        }
    }
}

/// A TOML literal when it parses as one (`3`, `true`, `0.5`, `"x"`),
/// otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_values_are_typed() {
        assert_eq!(parse_value("3"), Value::Integer(3));
        assert_eq!(parse_value("0.25"), Value::Float(0.25));
        assert_eq!(parse_value("beam"), Value::String("beam".into()));
        assert_eq!(parse_value("two_stage"), Value::String("two_stage".into()));
    }

    #[test]
    fn flags_beat_sets_beat_file() {
        let dir = std::env::temp_dir().join(format!("dialknow-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(&path, "seed = 1\nsteps = 10\nembed_dim = 8\nlearning_rate = 0.1\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["steps=20".into(), "embed_dim=16".into()], vec![("steps", Value::Integer(30))]).unwrap();
        assert_eq!((cfg.seed(), cfg.steps, cfg.embed_dim, cfg.learning_rate), (1, 30, 16, 0.1));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn seed_is_mandatory_and_keys_are_checked() {
        assert!(RunConfig::load(None, &[], vec![]).is_err());
        assert!(RunConfig::load(None, &["seed=1".into(), "stpes=3".into()], vec![]).is_err());
        assert!(RunConfig::load(None, &["seed=1".into()], vec![]).is_ok());
    }
}
