//! Flat `key = value` configuration covering every tunable.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Unknown keys are rejected. [`Settings::dump`] writes every key,
//! and parsing a dump reproduces the settings exactly.

use std::path::Path;
use std::str::FromStr;

use crate::csc::GramMode;
use crate::dfe::DfeConfig;
use crate::error::{arg_err, Error, Result};
use crate::mghf::MghfConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub mghf: MghfConfig,
    pub dfe: DfeConfig,
    pub train: TrainConfig,
    pub classes: usize,
    pub image_size: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            mghf: MghfConfig::default(),
            dfe: DfeConfig::default(),
            train: TrainConfig::default(),
            classes: 4,
            image_size: 32,
        }
    }
}

/// Every key with a one-line description, in dump order.
pub const KEYS: &[(&str, &str)] = &[
    ("gamma1", "weight of the plain detail-map MSE"),
    ("gamma2", "weight of content-style consistency"),
    ("gamma3", "weight of local information preservation"),
    ("beta1", "weight of the content MSE inside CSC"),
    ("beta2", "weight of the Gram style term"),
    ("beta3", "weight of the correlation term"),
    ("gram_mode", "rows | scalar"),
    ("bins", "histogram bins for map entropy"),
    ("m", "maps kept after pruning, or auto for ceil(L/2)"),
    ("alpha", "importance weight scale"),
    ("gamma", "importance weight exponent"),
    ("lip_enabled", "evaluate local information preservation"),
    ("lip_on_pruned", "feed pruned, reweighted maps to LIP"),
    ("patch_size", "LIP patch side"),
    ("stride", "LIP patch stride"),
    ("embed_hidden", "patch embedding hidden width"),
    ("embed_dim", "patch embedding output width"),
    ("embed_seed", "seed of the fixed patch embedding"),
    ("tau", "contrastive temperature"),
    ("beta_ot", "transport cost temperature"),
    ("q", "negative term weight"),
    ("sinkhorn_epsilon", "entropic regularization"),
    ("sinkhorn_max_iters", "Sinkhorn iteration cap"),
    ("sinkhorn_tol", "Sinkhorn marginal tolerance"),
    ("n_channels", "detail maps produced by the extractor"),
    ("n_blocks", "coupling layers"),
    ("dfe_hidden", "shallow CNN width, or auto for n_channels/2"),
    ("kernel_size", "shallow CNN kernel side"),
    ("scale_clamp", "soft clamp of coupling log-scales"),
    ("lr", "initial learning rate"),
    ("batch", "training batch size"),
    ("decay_factor", "learning-rate decay factor"),
    ("decay_every", "iterations between decays"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("iters", "training iterations"),
    ("seed", "training seed"),
    ("head_widths", "classifier conv widths, comma separated"),
    ("classes", "texture classes"),
    ("image_size", "training image side"),
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Argument(format!("invalid value {v:?} for {key}")))
}

fn parse_auto(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |n| n.to_string())
}

impl Settings {
    pub fn get(&self, key: &str) -> Result<String> {
        let m = &self.mghf;
        let mo = &m.lip.monce;
        let t = &self.train;
        Ok(match key {
            "gamma1" => m.gamma1.to_string(),
            "gamma2" => m.gamma2.to_string(),
            "gamma3" => m.gamma3.to_string(),
            "beta1" => m.csc.beta1.to_string(),
            "beta2" => m.csc.beta2.to_string(),
            "beta3" => m.csc.beta3.to_string(),
            "gram_mode" => match m.csc.gram_mode {
                GramMode::Rows => "rows".into(),
                GramMode::Scalar => "scalar".into(),
            },
            "bins" => m.pruning.bins.to_string(),
            "m" => auto(m.pruning.m),
            "alpha" => m.pruning.alpha.to_string(),
            "gamma" => m.pruning.gamma.to_string(),
            "lip_enabled" => m.lip_enabled.to_string(),
            "lip_on_pruned" => m.lip_on_pruned.to_string(),
            "patch_size" => m.lip.patch_size.to_string(),
            "stride" => m.lip.stride.to_string(),
            "embed_hidden" => m.lip.embedding.hidden.to_string(),
            "embed_dim" => m.lip.embedding.dim.to_string(),
            "embed_seed" => m.lip.embedding.seed.to_string(),
            "tau" => mo.tau.to_string(),
            "beta_ot" => mo.beta_ot.to_string(),
            "q" => mo.q.to_string(),
            "sinkhorn_epsilon" => mo.sinkhorn_epsilon.to_string(),
            "sinkhorn_max_iters" => mo.sinkhorn_max_iters.to_string(),
            "sinkhorn_tol" => mo.sinkhorn_tol.to_string(),
            "n_channels" => self.dfe.n_channels.to_string(),
            "n_blocks" => self.dfe.n_blocks.to_string(),
            "dfe_hidden" => auto(self.dfe.hidden),
            "kernel_size" => self.dfe.kernel_size.to_string(),
            "scale_clamp" => self.dfe.scale_clamp.to_string(),
            "lr" => t.lr.to_string(),
            "batch" => t.batch.to_string(),
            "decay_factor" => t.decay_factor.to_string(),
            "decay_every" => t.decay_every.to_string(),
            "adam_beta1" => t.adam.beta1.to_string(),
            "adam_beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "iters" => t.total_iters.to_string(),
            "seed" => t.seed.to_string(),
            "head_widths" => t.head_widths.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "classes" => self.classes.to_string(),
            "image_size" => self.image_size.to_string(),
            _ => return arg_err(format!("unknown config key {key:?}")),
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.mghf;
        let t = &mut self.train;
        match key {
            "gamma1" => m.gamma1 = parse(key, v)?,
            "gamma2" => m.gamma2 = parse(key, v)?,
            "gamma3" => m.gamma3 = parse(key, v)?,
            "beta1" => m.csc.beta1 = parse(key, v)?,
            "beta2" => m.csc.beta2 = parse(key, v)?,
            "beta3" => m.csc.beta3 = parse(key, v)?,
            "gram_mode" => {
                m.csc.gram_mode = match v {
                    "rows" => GramMode::Rows,
                    "scalar" => GramMode::Scalar,
                    _ => return arg_err(format!("gram_mode must be rows or scalar, got {v:?}")),
                }
            }
            "bins" => m.pruning.bins = parse(key, v)?,
            "m" => m.pruning.m = parse_auto(key, v)?,
            "alpha" => m.pruning.alpha = parse(key, v)?,
            "gamma" => m.pruning.gamma = parse(key, v)?,
            "lip_enabled" => m.lip_enabled = parse(key, v)?,
            "lip_on_pruned" => m.lip_on_pruned = parse(key, v)?,
            "patch_size" => m.lip.patch_size = parse(key, v)?,
            "stride" => m.lip.stride = parse(key, v)?,
            "embed_hidden" => m.lip.embedding.hidden = parse(key, v)?,
            "embed_dim" => m.lip.embedding.dim = parse(key, v)?,
            "embed_seed" => m.lip.embedding.seed = parse(key, v)?,
            "tau" => m.lip.monce.tau = parse(key, v)?,
            "beta_ot" => m.lip.monce.beta_ot = parse(key, v)?,
            "q" => m.lip.monce.q = parse(key, v)?,
            "sinkhorn_epsilon" => m.lip.monce.sinkhorn_epsilon = parse(key, v)?,
            "sinkhorn_max_iters" => m.lip.monce.sinkhorn_max_iters = parse(key, v)?,
            "sinkhorn_tol" => m.lip.monce.sinkhorn_tol = parse(key, v)?,
            "n_channels" => self.dfe.n_channels = parse(key, v)?,
            "n_blocks" => self.dfe.n_blocks = parse(key, v)?,
            "dfe_hidden" => self.dfe.hidden = parse_auto(key, v)?,
            "kernel_size" => self.dfe.kernel_size = parse(key, v)?,
            "scale_clamp" => self.dfe.scale_clamp = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "batch" => t.batch = parse(key, v)?,
            "decay_factor" => t.decay_factor = parse(key, v)?,
            "decay_every" => t.decay_every = parse(key, v)?,
            "adam_beta1" => t.adam.beta1 = parse(key, v)?,
            "adam_beta2" => t.adam.beta2 = parse(key, v)?,
            "adam_eps" => t.adam.eps = parse(key, v)?,
            "iters" => t.total_iters = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "head_widths" => {
                t.head_widths = v
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "classes" => self.classes = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            _ => return arg_err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current settings.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Argument(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply_text(text)?;
        Ok(s)
    }

    /// `(key, value)` for every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|(k, _)| (*k, self.get(k).expect("every listed key is readable")))
            .collect()
    }

    pub fn dump(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Documented defaults, usable as a starting config file.
    pub fn documented_defaults() -> String {
        let d = Self::default();
        KEYS.iter()
            .map(|(k, doc)| format!("# {doc}\n{k} = {}\n", d.get(k).expect("listed key")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut s = Settings::default();
        s.set("gamma3", "0.000123456789012345").unwrap();
        s.set("m", "3").unwrap();
        s.set("head_widths", "4, 6,8").unwrap();
        s.set("gram_mode", "scalar").unwrap();
        assert_eq!(Settings::parse_text(&s.dump()).unwrap(), s);
        assert_eq!(Settings::parse_text(&Settings::documented_defaults()).unwrap(), Settings::default());
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        assert!(Settings::parse_text("gama1 = 2").is_err());
        assert!(Settings::parse_text("gamma1 2").is_err());
        assert!(Settings::parse_text("bins = -3").is_err());
        assert!(Settings::parse_text("lip_enabled = yes").is_err());
    }

    #[test]
    fn comments_and_whitespace() {
        let s = Settings::parse_text("# hi\n\n  gamma1=4  \nm = auto\n").unwrap();
        assert_eq!(s.mghf.gamma1, 4.0);
        assert_eq!(s.mghf.pruning.m, None);
    }

    #[test]
    fn every_key_listed_once() {
        let mut keys: Vec<_> = KEYS.iter().map(|k| k.0).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), KEYS.len());
        for k in keys {
            Settings::default().get(k).unwrap();
        }
    }
}
