//! Checkpoint directories: one tensor dump per parameter plus `manifest.txt`.
//!
//! ```text
//! [config]
//! base_channels = 64
//! ...
//! [params]
//! 0000.eamt patch_embed.k 3,3,3,64
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{build_network, RestorationNet};
use crate::numerics::Tensor;

use super::config::{format_net_config, parse_net_config};

pub const MANIFEST: &str = "manifest.txt";

pub fn save_checkpoint(dir: impl AsRef<Path>, net: &RestorationNet<f32>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("[config]\n");
    manifest.push_str(&format_net_config(&net.config));
    manifest.push_str("[params]\n");
    for (i, (name, t)) in net.params.iter().enumerate() {
        let file = format!("{i:04}.eamt");
        let mut w = BufWriter::new(File::create(dir.join(&file))?);
        t.write_dump(&mut w)?;
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{file} {name} {}\n", shape.join(",")));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn manifest_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::config(format!("{MANIFEST} line {line}: {msg}"))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<RestorationNet<f32>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let (cfg_text, params_text) = text
        .strip_prefix("[config]\n")
        .and_then(|rest| rest.split_once("[params]\n"))
        .ok_or_else(|| Error::config(format!("{MANIFEST}: missing [config] or [params] section")))?;
    let cfg = parse_net_config(cfg_text)?;
    let mut net = build_network::<f32>(&cfg, 0)?;
    let offset = cfg_text.lines().count() + 2;
    let mut loaded = 0;
    for (i, line) in params_text.lines().enumerate() {
        let lineno = offset + i + 1;
        let mut parts = line.split_whitespace();
        let (Some(file), Some(name), Some(_shape), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(manifest_err(lineno, "expected FILE NAME SHAPE"));
        };
        let id = net
            .params
            .find(name)
            .ok_or_else(|| manifest_err(lineno, format!("unknown parameter {name}")))?;
        let t: Tensor<f32> = Tensor::read_dump(File::open(dir.join(file))?)?;
        net.params.set(id, t).map_err(|e| manifest_err(lineno, e))?;
        loaded += 1;
    }
    if loaded != net.params.len() {
        return Err(Error::config(format!(
            "{MANIFEST}: {loaded} parameters listed, network has {}",
            net.params.len()
        )));
    }
    Ok(net)
}
