//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. Every key is optional and falls back to its default.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net::NetConfig;

use super::synth::SynthSpec;
use super::train::{Stage, TrainConfig};

/// Synthetic data used by a run: training and validation sets share σ and
/// extent but draw from different seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub sigma: f64,
    pub train_count: usize,
    pub val_count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            sigma: 25.0,
            train_count: 64,
            val_count: 8,
            height: 64,
            width: 64,
            seed: 1,
        }
    }
}

impl DataConfig {
    pub fn train_spec(&self) -> SynthSpec {
        SynthSpec {
            kind: Default::default(),
            sigma: self.sigma,
            count: self.train_count,
            height: self.height,
            width: self.width,
            seed: self.seed,
        }
    }

    pub fn val_spec(&self) -> SynthSpec {
        SynthSpec {
            count: self.val_count,
            seed: self.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
            ..self.train_spec()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse '{raw}'")))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|p| value(key, p.trim())).collect()
}

fn boolean(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got '{raw}'"))),
    }
}

/// Applies one network key; `Ok(false)` if the key is not a network key.
fn set_net(net: &mut NetConfig, key: &str, raw: &str) -> Result<bool> {
    match key {
        "base_channels" => net.base_channels = value(key, raw)?,
        "level_blocks" => net.level_blocks = list(key, raw)?,
        "refinement_blocks" => net.refinement_blocks = value(key, raw)?,
        "expansion" => net.expansion = value(key, raw)?,
        "groups" => net.groups = value(key, raw)?,
        "scan_set" => net.scan_set = raw.parse()?,
        "mlp_kind" => net.mlp_kind = raw.parse()?,
        "mlp_expansion" => net.mlp_expansion = value(key, raw)?,
        "d_state" => net.d_state = value(key, raw)?,
        "bbar_rule" => net.bbar_rule = raw.parse()?,
        "mixer" => net.mixer = raw.parse()?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_run(cfg: &mut RunConfig, key: &str, raw: &str) -> Result<bool> {
    if set_net(&mut cfg.net, key, raw)? {
        return Ok(true);
    }
    let (t, d) = (&mut cfg.train, &mut cfg.data);
    match key {
        "init_seed" => cfg.init_seed = value(key, raw)?,
        "iterations" => t.iterations = value(key, raw)?,
        "lr_init" => t.lr_init = value(key, raw)?,
        "lr_final" => t.lr_final = value(key, raw)?,
        "beta1" => t.beta1 = value(key, raw)?,
        "beta2" => t.beta2 = value(key, raw)?,
        "adam_eps" => t.eps = value(key, raw)?,
        "weight_decay" => t.weight_decay = value(key, raw)?,
        "stages" => t.stages = list::<Stage>(key, raw)?,
        "augment" => t.augment = boolean(key, raw)?,
        "train_seed" => t.seed = value(key, raw)?,
        "sigma" => d.sigma = value(key, raw)?,
        "train_count" => d.train_count = value(key, raw)?,
        "val_count" => d.val_count = value(key, raw)?,
        "image_height" => d.height = value(key, raw)?,
        "image_width" => d.width = value(key, raw)?,
        "data_seed" => d.seed = value(key, raw)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Splits `text` into `(line, key, value)` triples.
fn entries(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !seen.insert(k) {
            return Err(Error::config(format!("line {}: duplicate key '{k}'", i + 1)));
        }
        out.push((i + 1, k, v));
    }
    Ok(out)
}

fn with_line<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("line {line}: {m}")),
        other => other,
    })
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (line, k, v) in entries(text)? {
        if !with_line(line, set_run(&mut cfg, k, v))? {
            return Err(Error::config(format!("line {line}: unknown key '{k}'")));
        }
    }
    cfg.net.validate()?;
    cfg.train.validate(cfg.net.multiple())?;
    Ok(cfg)
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::config(format!("{}: {e}", path.as_ref().display())))?;
    parse_run_config(&text)
}

/// Parses text holding network keys only.
pub fn parse_net_config(text: &str) -> Result<NetConfig> {
    let mut net = NetConfig::default();
    for (line, k, v) in entries(text)? {
        if !with_line(line, set_net(&mut net, k, v))? {
            return Err(Error::config(format!("line {line}: unknown key '{k}'")));
        }
    }
    net.validate()?;
    Ok(net)
}

pub fn format_net_config(net: &NetConfig) -> String {
    let blocks: Vec<String> = net.level_blocks.iter().map(usize::to_string).collect();
    let mut s = String::new();
    let _ = writeln!(s, "base_channels = {}", net.base_channels);
    let _ = writeln!(s, "level_blocks = {}", blocks.join(","));
    let _ = writeln!(s, "refinement_blocks = {}", net.refinement_blocks);
    let _ = writeln!(s, "expansion = {}", net.expansion);
    let _ = writeln!(s, "groups = {}", net.groups);
    let _ = writeln!(s, "scan_set = {}", net.scan_set);
    let _ = writeln!(s, "mlp_kind = {}", net.mlp_kind);
    let _ = writeln!(s, "mlp_expansion = {}", net.mlp_expansion);
    let _ = writeln!(s, "d_state = {}", net.d_state);
    let _ = writeln!(s, "bbar_rule = {}", net.bbar_rule);
    let _ = writeln!(s, "mixer = {}", net.mixer);
    s
}

pub fn format_run_config(cfg: &RunConfig) -> String {
    let (t, d) = (&cfg.train, &cfg.data);
    let stages: Vec<String> = t.stages.iter().map(Stage::to_string).collect();
    let mut s = format_net_config(&cfg.net);
    let _ = writeln!(s, "init_seed = {}", cfg.init_seed);
    let _ = writeln!(s, "iterations = {}", t.iterations);
    let _ = writeln!(s, "lr_init = {:e}", t.lr_init);
    let _ = writeln!(s, "lr_final = {:e}", t.lr_final);
    let _ = writeln!(s, "beta1 = {}", t.beta1);
    let _ = writeln!(s, "beta2 = {}", t.beta2);
    let _ = writeln!(s, "adam_eps = {:e}", t.eps);
    let _ = writeln!(s, "weight_decay = {:e}", t.weight_decay);
    let _ = writeln!(s, "stages = {}", stages.join(", "));
    let _ = writeln!(s, "augment = {}", t.augment);
    let _ = writeln!(s, "train_seed = {}", t.seed);
    let _ = writeln!(s, "sigma = {}", d.sigma);
    let _ = writeln!(s, "train_count = {}", d.train_count);
    let _ = writeln!(s, "val_count = {}", d.val_count);
    let _ = writeln!(s, "image_height = {}", d.height);
    let _ = writeln!(s, "image_width = {}", d.width);
    let _ = writeln!(s, "data_seed = {}", d.seed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mambaformer::MlpKind;
    use crate::scan_curves::ScanSet;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = parse_run_config(
            "# tiny\nbase_channels = 16   # width\nlevel_blocks = 1, 1, 1, 1\n\nscan_set = 2d\nmlp_kind = ffn\nstages = 16x4@0, 32x2@500\n",
        )
        .unwrap();
        assert_eq!(cfg.net.base_channels, 16);
        assert_eq!(cfg.net.level_blocks, [1, 1, 1, 1]);
        assert_eq!(cfg.net.scan_set, ScanSet::TwoD);
        assert_eq!(cfg.net.mlp_kind, MlpKind::Ffn);
        assert_eq!(cfg.train.stages.len(), 2);
        assert_eq!(cfg.train.lr_init, 3e-4);
    }

    #[test]
    fn unknown_duplicate_and_malformed_lines_fail() {
        for text in ["colour = red", "groups = 4\ngroups = 8", "groups 4", "groups = four", "scan_set = spiral"] {
            assert!(matches!(parse_run_config(text), Err(Error::Config(_))), "{text}");
        }
        match parse_run_config("\n\nwidth = 3") {
            Err(Error::Config(m)) => assert!(m.starts_with("line 3:"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn formatted_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.net.scan_set = "horizontal,diagonal_rev".parse().unwrap();
        cfg.train.stages = vec!["16x8@0".parse().unwrap(), "32x4@100".parse().unwrap()];
        cfg.data.sigma = 15.0;
        assert_eq!(parse_run_config(&format_run_config(&cfg)).unwrap(), cfg);
        assert_eq!(parse_net_config(&format_net_config(&cfg.net)).unwrap(), cfg.net);
        assert!(parse_net_config("iterations = 5").is_err());
    }
}
