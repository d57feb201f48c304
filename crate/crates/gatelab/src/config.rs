//! Run configuration shared by the CLI subcommands: a plain-text file of
//! `key = value` lines with optional `[section]` headers, plus defaults at
//! desk scale. Flags override file values at the call site.

use std::collections::BTreeMap;
use std::path::Path;

use crate::cells::CellKind;
use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::network::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    /// Feed-forward layer widths below the recurrent layer.
    pub ff_sizes: Vec<usize>,
    pub hidden_dim: usize,
    pub train: TrainConfig,
    /// Per-system learning rates where dev-MSE tuning picked something other
    /// than the base rate (momentum stays fixed, as in the reference setup).
    /// Setting `learning_rate` explicitly clears these.
    pub lr_overrides: Vec<(CellKind, f64)>,
    /// Seeds for repeated ablation runs; `train.seed` is used for single runs.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusConfig::default(),
            ff_sizes: vec![64, 64, 64],
            hidden_dim: 32,
            train: TrainConfig::default(),
            lr_overrides: vec![(CellKind::SLstm, 0.03)],
            seeds: vec![0, 1, 2],
        }
    }
}

impl RunConfig {
    /// Paper-scale topology: ff [512,512,512], 256 recurrent units. Corpus
    /// stream widths stay at desk scale unless overridden.
    pub fn paper_scale() -> Self {
        RunConfig {
            ff_sizes: vec![512, 512, 512],
            hidden_dim: 256,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        if self.ff_sizes.is_empty() || self.ff_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "ff_sizes must be non-empty positive widths".into(),
            ));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed required".into()));
        }
        if self.train.learning_rate <= 0.0 || !self.train.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        for &(kind, lr) in &self.lr_overrides {
            if lr <= 0.0 || !lr.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "learning rate for {kind} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// The learning rate used when training `kind`: the per-system override
    /// when one exists, the base rate otherwise.
    pub fn learning_rate_for(&self, kind: CellKind) -> f64 {
        self.lr_overrides
            .iter()
            .find(|(k, _)| *k == kind)
            .map_or(self.train.learning_rate, |&(_, lr)| lr)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (key, value) in parse_pairs(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` override. Keys match the config-file keys so
    /// command-line `--set key=value` flags share this path.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| {
            Error::InvalidArgument(format!("config key `{key}`: invalid {what} `{value}`"))
        };
        match key {
            "ff_sizes" => {
                self.ff_sizes = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("size list"))?;
            }
            "hidden_dim" => self.hidden_dim = value.parse().map_err(|_| bad("integer"))?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("seed list"))?;
            }
            "learning_rate" => {
                self.train.learning_rate = value.parse().map_err(|_| bad("number"))?;
                self.lr_overrides.clear();
            }
            _ if key.starts_with("learning_rate_") => {
                let kind = CellKind::parse(&key["learning_rate_".len()..])?;
                let lr: f64 = value.parse().map_err(|_| bad("number"))?;
                match self.lr_overrides.iter_mut().find(|(k, _)| *k == kind) {
                    Some(entry) => entry.1 = lr,
                    None => self.lr_overrides.push((kind, lr)),
                }
            }
            "momentum" => self.train.momentum = value.parse().map_err(|_| bad("number"))?,
            "max_epochs" => self.train.max_epochs = value.parse().map_err(|_| bad("integer"))?,
            "patience" => self.train.patience = value.parse().map_err(|_| bad("integer"))?,
            "grad_clip_norm" => {
                self.train.grad_clip_norm = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad("number"))?)
                };
            }
            "init_scale" => self.train.init_scale = value.parse().map_err(|_| bad("number"))?,
            "seed" => self.train.seed = value.parse().map_err(|_| bad("integer"))?,
            "phone_inventory_size" => {
                self.corpus.phone_inventory_size = value.parse().map_err(|_| bad("integer"))?
            }
            "train_utterances" => {
                self.corpus.train_utterances = value.parse().map_err(|_| bad("integer"))?
            }
            "dev_utterances" => {
                self.corpus.dev_utterances = value.parse().map_err(|_| bad("integer"))?
            }
            "test_utterances" => {
                self.corpus.test_utterances = value.parse().map_err(|_| bad("integer"))?
            }
            "mcc_dim" => self.corpus.mcc_dim = value.parse().map_err(|_| bad("integer"))?,
            "bap_dim" => self.corpus.bap_dim = value.parse().map_err(|_| bad("integer"))?,
            "noise_std" => self.corpus.noise_std = value.parse().map_err(|_| bad("number"))?,
            "smoothing_half_width" => {
                self.corpus.smoothing_half_width = value.parse().map_err(|_| bad("integer"))?
            }
            "corpus_seed" => self.corpus.seed = value.parse().map_err(|_| bad("integer"))?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Serializes back to the file format; `parse(echo())` round-trips.
    pub fn echo(&self) -> String {
        let join = |xs: &[u64]| {
            xs.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let ff = self
            .ff_sizes
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let clip = self
            .train
            .grad_clip_norm
            .map_or("none".to_string(), |v| v.to_string());
        let overrides: String = self
            .lr_overrides
            .iter()
            .map(|(kind, lr)| {
                format!(
                    "learning_rate_{} = {lr}\n",
                    kind.label().to_lowercase().replace('-', "")
                )
            })
            .collect();
        format!(
            "[network]\n\
             ff_sizes = {ff}\n\
             hidden_dim = {}\n\
             [train]\n\
             learning_rate = {}\n\
             {overrides}\
             momentum = {}\n\
             max_epochs = {}\n\
             patience = {}\n\
             grad_clip_norm = {clip}\n\
             init_scale = {}\n\
             seed = {}\n\
             seeds = {}\n\
             [corpus]\n\
             phone_inventory_size = {}\n\
             train_utterances = {}\n\
             dev_utterances = {}\n\
             test_utterances = {}\n\
             mcc_dim = {}\n\
             bap_dim = {}\n\
             noise_std = {}\n\
             smoothing_half_width = {}\n\
             corpus_seed = {}\n",
            self.hidden_dim,
            self.train.learning_rate,
            self.train.momentum,
            self.train.max_epochs,
            self.train.patience,
            self.train.init_scale,
            self.train.seed,
            join(&self.seeds),
            self.corpus.phone_inventory_size,
            self.corpus.train_utterances,
            self.corpus.dev_utterances,
            self.corpus.test_utterances,
            self.corpus.mcc_dim,
            self.corpus.bap_dim,
            self.corpus.noise_std,
            self.corpus.smoothing_half_width,
            self.corpus.seed,
        )
    }
}

/// Splits `key = value` lines; `#` comments and `[section]` headers allowed.
/// Later duplicates win (sections only organize the file).
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut order = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidArgument(format!(
                "config line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            )));
        };
        pairs.insert(key.trim().to_string(), (order, value.trim().to_string()));
        order += 1;
    }
    let mut out: Vec<(usize, String, String)> = pairs
        .into_iter()
        .map(|(k, (ord, v))| (ord, k, v))
        .collect();
    out.sort_by_key(|(ord, _, _)| *ord);
    Ok(out.into_iter().map(|(_, k, v)| (k, v)).collect())
}

/// Parses the comma-separated cell kind list used by `ablate --systems`.
pub fn parse_kinds(spec: &str) -> Result<Vec<CellKind>> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(CellKind::ALL.to_vec());
    }
    spec.split(',').map(|s| CellKind::parse(s.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_system_learning_rates() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.learning_rate_for(CellKind::SLstm), 0.03);
        assert_eq!(
            cfg.learning_rate_for(CellKind::VanillaLstm),
            cfg.train.learning_rate
        );
        cfg.set("learning_rate_gru", "0.007").unwrap();
        assert_eq!(cfg.learning_rate_for(CellKind::Gru), 0.007);
        // An explicit base rate wipes the tuned table.
        cfg.set("learning_rate", "0.05").unwrap();
        assert!(cfg.lr_overrides.is_empty());
        assert_eq!(cfg.learning_rate_for(CellKind::SLstm), 0.05);
        assert!(cfg.set("learning_rate_bogus", "0.1").is_err());
        let echoed = RunConfig::parse(&RunConfig::default().echo()).unwrap();
        assert_eq!(echoed, RunConfig::default());
    }

    #[test]
    fn defaults_are_desk_scale() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.ff_sizes, vec![64, 64, 64]);
        assert_eq!(cfg.hidden_dim, 32);
        cfg.validate().unwrap();
    }

    #[test]
    fn parses_sections_comments_and_overrides() {
        let cfg = RunConfig::parse(
            "# experiment\n\
             [network]\n\
             ff_sizes = 8, 8\n\
             hidden_dim = 4\n\
             [train]\n\
             learning_rate = 0.05  # tuned\n\
             grad_clip_norm = none\n\
             seeds = 7, 8\n",
        )
        .unwrap();
        assert_eq!(cfg.ff_sizes, vec![8, 8]);
        assert_eq!(cfg.hidden_dim, 4);
        assert_eq!(cfg.train.learning_rate, 0.05);
        assert_eq!(cfg.train.grad_clip_norm, None);
        assert_eq!(cfg.seeds, vec![7, 8]);
        // untouched keys keep defaults
        assert_eq!(cfg.train.momentum, 0.9);
    }

    #[test]
    fn later_duplicate_wins() {
        let cfg = RunConfig::parse("hidden_dim = 4\nhidden_dim = 6\n").unwrap();
        assert_eq!(cfg.hidden_dim, 6);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("hidden_dim", "12").unwrap();
        cfg.set("noise_std", "0.125").unwrap();
        cfg.set("grad_clip_norm", "none").unwrap();
        let reparsed = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn rejects_unknown_keys_and_malformed_lines() {
        assert!(RunConfig::parse("no_such_key = 1\n").is_err());
        assert!(RunConfig::parse("just a line\n").is_err());
        assert!(RunConfig::parse("hidden_dim = banana\n").is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(RunConfig::parse("hidden_dim = 0\n").is_err());
        assert!(RunConfig::parse("learning_rate = -1\n").is_err());
        assert!(RunConfig::parse("ff_sizes = 64,0\n").is_err());
    }

    #[test]
    fn kind_list_parsing() {
        assert_eq!(parse_kinds("all").unwrap().len(), 7);
        let kinds = parse_kinds("lstm, gru").unwrap();
        assert_eq!(kinds, vec![CellKind::VanillaLstm, CellKind::Gru]);
        assert!(parse_kinds("xyz").is_err());
    }
}
