//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Loss hyper-parameters left unset take the defaults of the chosen
//! loss kind.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossParams};
use crate::ontology::write_lines;
use crate::synth::SyntheticSpec;
use crate::trainer::{MiningSpace, TrainConfig};

const LOSS_KEYS: [&str; 8] = ["alpha", "beta", "epsilon", "margin", "scale", "tau", "m", "gamma"];

const PATH_KEYS: [&str; 5] = ["dictionary", "pairs", "train_mentions", "test_mentions", "checkpoint"];

fn defaults() -> BTreeMap<&'static str, String> {
    let t = TrainConfig::default();
    let e = EncoderConfig::default();
    let s = SyntheticSpec::default();
    let mut m: BTreeMap<&'static str, String> = BTreeMap::new();
    m.insert("learning_rate", t.learning_rate.to_string());
    m.insert("weight_decay", t.weight_decay.to_string());
    m.insert("adam_beta1", t.adam_beta1.to_string());
    m.insert("adam_beta2", t.adam_beta2.to_string());
    m.insert("adam_eps", t.adam_eps.to_string());
    m.insert("epochs", t.epochs.to_string());
    m.insert("max_iterations", "0".into());
    m.insert("batch_pairs", t.batch_pairs.to_string());
    m.insert("loss", t.loss.kind.to_string());
    m.insert("mining", "on".into());
    m.insert("mining_space", "unit".into());
    m.insert("lambda", t.lambda.to_string());
    m.insert("pair_cap", t.pair_cap.to_string());
    m.insert("seed", "0".into());
    m.insert("ngram_n", e.ngram_n.to_string());
    m.insert("vocab_buckets", e.vocab_buckets.to_string());
    m.insert("embed_dim", e.embed_dim.to_string());
    m.insert("max_tokens", e.max_tokens.to_string());
    m.insert("init_scale", e.init_scale.to_string());
    m.insert("index_batch_size", "1024".into());
    m.insert("synth_concepts", s.n_concepts.to_string());
    m.insert("synth_synonyms", s.synonyms_per_concept.to_string());
    m.insert("synth_edit_ops", s.edit_ops.to_string());
    m.insert("synth_holdout", s.holdout_per_concept.to_string());
    for k in LOSS_KEYS.into_iter().chain(PATH_KEYS) {
        m.insert(k, String::new());
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
    explicit: BTreeSet<&'static str>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: defaults(),
            explicit: BTreeSet::new(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Config {
        line: 0,
        reason: format!("invalid value `{raw}` for `{key}`"),
    })
}

fn parse_flag(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line: 0,
            reason: format!("invalid flag `{raw}` for `{key}` (use on/off)"),
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                reason: format!("expected key=value, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config { reason, .. } => Error::Config { line: i + 1, reason },
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key; the value is type-checked immediately.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (&k, _) = self.values.get_key_value(key).ok_or_else(|| Error::Config {
            line: 0,
            reason: format!("unknown key `{key}`"),
        })?;
        let old = self.values.insert(k, value.to_string());
        let was_explicit = !self.explicit.insert(k);
        if let Err(e) = self.check(k) {
            if let Some(old) = old {
                self.values.insert(k, old);
            }
            if !was_explicit {
                self.explicit.remove(k);
            }
            return Err(e);
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            reason: format!("expected key=value, got `{pair}`"),
        })?;
        self.set(k.trim(), v.trim())
    }

    fn check(&self, key: &str) -> Result<()> {
        let raw = &self.values[key];
        match key {
            "loss" => raw.parse::<LossKind>().map(drop),
            "mining" => parse_flag(key, raw).map(drop),
            "mining_space" => self.mining_space().map(drop),
            k if PATH_KEYS.contains(&k) => Ok(()),
            "epochs" | "max_iterations" | "batch_pairs" | "pair_cap" | "ngram_n"
            | "vocab_buckets" | "embed_dim" | "max_tokens" | "index_batch_size"
            | "synth_concepts" | "synth_synonyms" | "synth_edit_ops" | "synth_holdout" => {
                parse_value::<usize>(key, raw).map(drop)
            }
            "seed" => parse_value::<u64>(key, raw).map(drop),
            _ => parse_value::<f64>(key, raw).map(drop),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        parse_value(key, &self.values[key])
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").unwrap_or(0)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values
            .get(key)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    }

    fn mining_space(&self) -> Result<MiningSpace> {
        match self.values["mining_space"].as_str() {
            "unit" => Ok(MiningSpace::Unit),
            "raw" => Ok(MiningSpace::Raw),
            other => Err(Error::Config {
                line: 0,
                reason: format!("mining_space must be unit or raw, got `{other}`"),
            }),
        }
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        self.values["loss"].parse()
    }

    pub fn loss_params(&self) -> Result<LossParams> {
        let mut p = LossParams::defaults(self.loss_kind()?);
        for key in LOSS_KEYS {
            if !self.explicit.contains(key) {
                continue;
            }
            let v: f64 = self.get(key)?;
            match key {
                "alpha" => p.alpha = v,
                "beta" => p.beta = v,
                "epsilon" => p.epsilon = v,
                "margin" => p.margin = v,
                "scale" => p.scale = v,
                "tau" => p.tau = v,
                "m" => p.m = v,
                _ => p.gamma = v,
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn encoder(&self) -> Result<EncoderConfig> {
        let c = EncoderConfig {
            ngram_n: self.get("ngram_n")?,
            vocab_buckets: self.get("vocab_buckets")?,
            embed_dim: self.get("embed_dim")?,
            max_tokens: self.get("max_tokens")?,
            init_scale: self.get("init_scale")?,
            seed: self.seed(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let max_iterations: usize = self.get("max_iterations")?;
        let c = TrainConfig {
            learning_rate: self.get("learning_rate")?,
            weight_decay: self.get("weight_decay")?,
            adam_beta1: self.get("adam_beta1")?,
            adam_beta2: self.get("adam_beta2")?,
            adam_eps: self.get("adam_eps")?,
            epochs: self.get("epochs")?,
            max_iterations: (max_iterations > 0).then_some(max_iterations),
            batch_pairs: self.get("batch_pairs")?,
            loss: self.loss_params()?,
            mining_enabled: parse_flag("mining", &self.values["mining"])?,
            mining_space: self.mining_space()?,
            lambda: self.get("lambda")?,
            pair_cap: self.get("pair_cap")?,
            seed: self.seed(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn synth(&self) -> Result<SyntheticSpec> {
        let s = SyntheticSpec {
            n_concepts: self.get("synth_concepts")?,
            synonyms_per_concept: self.get("synth_synonyms")?,
            edit_ops: self.get("synth_edit_ops")?,
            holdout_per_concept: self.get("synth_holdout")?,
            seed: self.seed(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn index_batch_size(&self) -> Result<usize> {
        self.get("index_batch_size")
    }

    /// Every key with its effective value, loss fields resolved for the
    /// chosen kind.
    pub fn resolved(&self) -> Result<Vec<(String, String)>> {
        let loss = self.loss_params()?;
        let mut out = Vec::new();
        for (&k, v) in &self.values {
            let value = match k {
                "alpha" => loss.alpha.to_string(),
                "beta" => loss.beta.to_string(),
                "epsilon" => loss.epsilon.to_string(),
                "margin" => loss.margin.to_string(),
                "scale" => loss.scale.to_string(),
                "tau" => loss.tau.to_string(),
                "m" => loss.m.to_string(),
                "gamma" => loss.gamma.to_string(),
                _ => v.clone(),
            };
            out.push((k.to_string(), value));
        }
        Ok(out)
    }

    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        write_lines(
            path,
            self.resolved()?
                .into_iter()
                .map(|(k, v)| format!("{k}={v}")),
        )
    }
}
