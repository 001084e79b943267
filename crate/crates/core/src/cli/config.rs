use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::molgraph::Target;
use crate::train::TrainConfig;

/// Everything a run depends on. Loaded from `key = value` text, then
/// overridden from the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub target: Option<Target>,
    pub data: PathBuf,
    pub atomref: Option<PathBuf>,
    /// Read only this many randomly chosen files from `data`.
    pub sample: Option<usize>,
    /// Split manifest to import instead of drawing a random split.
    pub split: Option<PathBuf>,
    /// Seeds the split and subsampling; model seeds are `seed + i`.
    pub seed: u64,
    pub n_seeds: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const KEYS: [&str; 26] = [
    "target",
    "data",
    "atomref",
    "sample",
    "split",
    "seed",
    "n_seeds",
    "d_model",
    "heads",
    "interaction_blocks",
    "transformer_blocks",
    "ffn_multiplier",
    "epochs",
    "lr0",
    "decay_every",
    "decay",
    "batch",
    "huber_delta",
    "augment",
    "standardize",
    "patience",
    "warmup_epochs",
    "dropout",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

/// `$QM9_DIR`, else `data/qm9`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("QM9_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/qm9"))
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            target: None,
            data: default_data_dir(),
            atomref: None,
            sample: None,
            split: None,
            seed: 0,
            n_seeds: train.seeds.len(),
            model: ModelConfig::default(),
            train,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Data(format!("config key '{}': cannot parse '{}'", key, value)))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Data(format!("config key '{}': expected true or false, got '{}'", key, value))),
    }
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "" | "none" => Ok(None),
        v => num(key, v).map(Some),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "target" => self.target = if v == "none" { None } else { Some(v.parse()?) },
            "data" => self.data = PathBuf::from(v),
            "atomref" => self.atomref = optional(key, v)?,
            "sample" => self.sample = optional(key, v)?,
            "split" => self.split = optional(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "n_seeds" => self.n_seeds = num(key, v)?,
            "d_model" => self.model.d_model = num(key, v)?,
            "heads" => self.model.n_heads = num(key, v)?,
            "interaction_blocks" => self.model.n_interaction = num(key, v)?,
            "transformer_blocks" => self.model.n_transformer = num(key, v)?,
            "ffn_multiplier" => self.model.ffn_multiplier = num(key, v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "lr0" => self.train.lr0 = num(key, v)?,
            "decay_every" => self.train.decay_every = num(key, v)?,
            "decay" => self.train.decay = num(key, v)?,
            "batch" => self.train.batch_size = num(key, v)?,
            "huber_delta" => self.train.huber_delta = num(key, v)?,
            "augment" => self.train.augment = flag(key, v)?,
            "standardize" => self.train.standardize = flag(key, v)?,
            "patience" => self.train.patience = optional(key, v)?,
            "warmup_epochs" => self.train.warmup_epochs = num(key, v)?,
            "dropout" => self.train.dropout = num(key, v)?,
            "adam_beta1" => self.train.adam.beta1 = num(key, v)?,
            "adam_beta2" => self.train.adam.beta2 = num(key, v)?,
            "adam_eps" => self.train.adam.eps = num(key, v)?,
            _ => {
                return Err(Error::Data(format!(
                    "unknown config key '{}'; valid keys: {}",
                    key,
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, got '{}'", line)))?;
            self.set(k.trim(), v).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config {}: {}", path.display(), e)))?;
        self.apply_text(&text)
            .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))
    }

    /// Final checks and derived fields.
    pub fn finish(mut self) -> Result<Self> {
        if self.n_seeds == 0 {
            return Err(Error::Data("n_seeds must be at least 1".into()));
        }
        self.train.seeds = (0..self.n_seeds as u64).map(|i| self.seed + i).collect();
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn require_target(&self) -> Result<Target> {
        self.target
            .ok_or_else(|| Error::Data(format!("no target given; valid targets: {}", Target::names())))
    }

    /// The effective configuration in the format read by [`apply_text`].
    ///
    /// [`apply_text`]: RunConfig::apply_text
    pub fn echo(&self) -> String {
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        let path = |p: &Option<PathBuf>| opt(p.as_ref().map(|p| p.display().to_string()));
        let t = &self.train;
        let m = &self.model;
        let mut s = String::new();
        let rows: [(&str, String); 26] = [
            ("target", opt(self.target.map(|t| t.name().to_string()))),
            ("data", self.data.display().to_string()),
            ("atomref", path(&self.atomref)),
            ("sample", opt(self.sample.map(|v| v.to_string()))),
            ("split", path(&self.split)),
            ("seed", self.seed.to_string()),
            ("n_seeds", self.n_seeds.to_string()),
            ("d_model", m.d_model.to_string()),
            ("heads", m.n_heads.to_string()),
            ("interaction_blocks", m.n_interaction.to_string()),
            ("transformer_blocks", m.n_transformer.to_string()),
            ("ffn_multiplier", m.ffn_multiplier.to_string()),
            ("epochs", t.epochs.to_string()),
            ("lr0", format!("{:e}", t.lr0)),
            ("decay_every", t.decay_every.to_string()),
            ("decay", t.decay.to_string()),
            ("batch", t.batch_size.to_string()),
            ("huber_delta", t.huber_delta.to_string()),
            ("augment", t.augment.to_string()),
            ("standardize", t.standardize.to_string()),
            ("patience", opt(t.patience.map(|v| v.to_string()))),
            ("warmup_epochs", t.warmup_epochs.to_string()),
            ("dropout", t.dropout.to_string()),
            ("adam_beta1", t.adam.beta1.to_string()),
            ("adam_beta2", t.adam.beta2.to_string()),
            ("adam_eps", format!("{:e}", t.adam.eps)),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{} = {}", k, v);
        }
        s
    }
}
