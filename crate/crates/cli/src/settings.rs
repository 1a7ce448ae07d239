//! `key = value` configuration. Defaults are the desk-scale setup; a config
//! file overrides them and `--set key=value` flags override the file.

use std::path::Path;
use std::str::FromStr;

use segaw_core::experiment::DeskConfig;
use segaw_core::ssae::DecoderFeed;
use segaw_core::{Error, Result};

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_feed(value: &str) -> Result<DecoderFeed> {
    match value {
        "free_running" => Ok(DecoderFeed::FreeRunning),
        "teacher_forced" => Ok(DecoderFeed::TeacherForced),
        _ => Err(Error::Config(format!(
            "bad value `{value}` for `decoder_feed` (free_running|teacher_forced)"
        ))),
    }
}

pub struct Settings {
    pub desk: DeskConfig,
    /// Every override applied, in order.
    pub applied: Vec<(String, String)>,
}

impl Settings {
    pub fn new(seed: u64) -> Self {
        Self {
            desk: DeskConfig::small(seed),
            applied: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.desk;
        match key {
            "lexicon_size" => c.synth.lexicon_size = parse(key, value)?,
            "feature_dim" => c.synth.feature_dim = parse(key, value)?,
            "min_word_len" => c.synth.min_word_len = parse(key, value)?,
            "max_word_len" => c.synth.max_word_len = parse(key, value)?,
            "min_words" => c.synth.min_words = parse(key, value)?,
            "max_words" => c.synth.max_words = parse(key, value)?,
            "noise" => c.synth.noise = parse(key, value)?,
            "min_warp" => c.synth.min_warp = parse(key, value)?,
            "max_warp" => c.synth.max_warp = parse(key, value)?,
            "walk_step" => c.synth.walk_step = parse(key, value)?,
            "train_utterances" => c.synth.train_utterances = parse(key, value)?,
            "test_utterances" => c.synth.test_utterances = parse(key, value)?,
            "gas_hidden" => c.gas.hidden_dim = parse(key, value)?,
            "gas_window" => c.gas.window = parse(key, value)?,
            "gas_epochs" => c.gas.epochs = parse(key, value)?,
            "gas_batch" => c.gas.batch_size = parse(key, value)?,
            "gas_lr" => c.gas.learning_rate = parse(key, value)?,
            "gas_clip" => c.gas.grad_clip = parse(key, value)?,
            "gas_min_gap" => c.gas_min_gap = parse(key, value)?,
            "hidden_dim" => c.model.hidden_dim = parse(key, value)?,
            "gate_hidden" => c.model.gate_hidden = parse(key, value)?,
            "gate_layers" => c.model.gate_layers = parse(key, value)?,
            "decoder_feed" => c.model.decoder_feed = parse_feed(value)?,
            "use_gas" => c.use_gas = parse(key, value)?,
            "lambda" => c.train.lambda = parse(key, value)?,
            "samples" => c.train.samples = parse(key, value)?,
            "lr_phase1" => c.train.lr_phase1 = parse(key, value)?,
            "lr_phase2" => c.train.lr_phase2 = parse(key, value)?,
            "phase1_epochs" => c.train.phase1_epochs = parse(key, value)?,
            "phase2_epochs" => c.train.phase2_epochs = parse(key, value)?,
            "outer_iterations" => c.train.outer_iterations = parse(key, value)?,
            "batch_size" => c.train.batch_size = parse(key, value)?,
            "mode" => c.train.mode = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "ppo_clip" => c.train.ppo_clip = parse(key, value)?,
            "ppo_epochs" => c.train.ppo_epochs = parse(key, value)?,
            "grad_clip" => c.train.grad_clip = parse(key, value)?,
            "phase1_targets" => {
                c.train.phase1_targets = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "tolerance" => c.tolerance = parse(key, value)?,
            "query_words" => c.std.query_words = parse(key, value)?,
            "examples_per_word" => c.std.examples_per_word = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        self.applied.push((key.to_string(), value.to_string()));
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Effective training settings, stored with a trained checkpoint.
    pub fn training_snapshot(&self) -> Vec<(String, String)> {
        let t = &self.desk.train;
        [
            ("use_gas", self.desk.use_gas.to_string()),
            ("lambda", t.lambda.to_string()),
            ("samples", t.samples.to_string()),
            ("lr_phase1", t.lr_phase1.to_string()),
            ("lr_phase2", t.lr_phase2.to_string()),
            ("phase1_epochs", t.phase1_epochs.to_string()),
            ("phase2_epochs", t.phase2_epochs.to_string()),
            ("outer_iterations", t.outer_iterations.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("mode", t.mode.to_string()),
            ("ppo_clip", t.ppo_clip.to_string()),
            ("ppo_epochs", t.ppo_epochs.to_string()),
            ("grad_clip", t.grad_clip.to_string()),
            ("phase1_targets", t.phase1_targets.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn apply_flag(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
        self.set(k.trim(), v.trim())
    }
}
