//! L1 training with AdamW, cosine annealing and progressive patch sizes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::RestorationNet;
use crate::numerics::{Graph, Tensor};

use super::metrics::{psnr, ssim};
use super::synth::ImagePair;

/// From `start` onward, train on `patch × patch` crops in batches of `batch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub patch: usize,
    pub batch: usize,
    pub start: usize,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}@{}", self.patch, self.batch, self.start)
    }
}

impl FromStr for Stage {
    type Err = Error;

    /// `PATCHxBATCH@START`, e.g. `32x4@0`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("stage '{s}' is not PATCHxBATCH@START"));
        let (size, start) = s.trim().split_once('@').ok_or_else(bad)?;
        let (patch, batch) = size.split_once('x').ok_or_else(bad)?;
        Ok(Stage {
            patch: patch.trim().parse().map_err(|_| bad())?,
            batch: batch.trim().parse().map_err(|_| bad())?,
            start: start.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub stages: Vec<Stage>,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            lr_init: 3e-4,
            lr_final: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            stages: vec![Stage {
                patch: 32,
                batch: 4,
                start: 0,
            }],
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, multiple: usize) -> Result<()> {
        let first = self.stages.first().ok_or_else(|| Error::config("no training stages"))?;
        if first.start != 0 {
            return Err(Error::config("the first stage must start at iteration 0"));
        }
        if self.stages.windows(2).any(|w| w[1].start <= w[0].start) {
            return Err(Error::config("stage starts must be strictly increasing"));
        }
        for s in &self.stages {
            if s.batch == 0 || s.patch == 0 || s.patch % multiple != 0 {
                return Err(Error::config(format!(
                    "stage {s}: patch must be a positive multiple of {multiple} and batch positive"
                )));
            }
        }
        if !(self.lr_init >= 0.0 && self.lr_final >= 0.0) {
            return Err(Error::config("learning rates must be nonnegative"));
        }
        Ok(())
    }

    /// `lr_final + ½(lr_init − lr_final)(1 + cos(πt/T))`.
    pub fn lr(&self, t: usize) -> f64 {
        if self.iterations == 0 {
            return self.lr_init;
        }
        let frac = t.min(self.iterations) as f64 / self.iterations as f64;
        self.lr_final + 0.5 * (self.lr_init - self.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    pub fn stage_at(&self, t: usize) -> Stage {
        *self
            .stages
            .iter()
            .rev()
            .find(|s| s.start <= t)
            .unwrap_or(&self.stages[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub patch: usize,
    pub batch: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,lr,loss,patch,batch\n");
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e},{},{}\n", r.iteration, r.lr, r.loss, r.patch, r.batch));
        }
        s
    }
}

/// Adam moments for every parameter, decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[Vec<f32>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..p.len() {
                p[i] *= decay;
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

/// Geometric augmentations of an `H×W×C` image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
}

impl Augment {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Augment {
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            rot90: rng.random_bool(0.5),
        }
    }

    pub fn apply(&self, img: &Tensor<f32>) -> Tensor<f32> {
        let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let (oh, ow) = if self.rot90 { (w, h) } else { (h, w) };
        let mut out = Vec::with_capacity(img.len());
        for r in 0..oh {
            for col in 0..ow {
                // rotate counter-clockwise first, then flip
                let (mut sr, mut sc) = if self.rot90 { (col, w - 1 - r) } else { (r, col) };
                if self.vflip {
                    sr = h - 1 - sr;
                }
                if self.hflip {
                    sc = w - 1 - sc;
                }
                out.extend_from_slice(&img.data()[(sr * w + sc) * c..][..c]);
            }
        }
        Tensor::new(&[oh, ow, c], out).expect("augmented shape")
    }
}

fn crop(img: &Tensor<f32>, top: usize, left: usize, size: usize) -> Tensor<f32> {
    let (w, c) = (img.shape()[1], img.shape()[2]);
    let mut out = Vec::with_capacity(size * size * c);
    for r in top..top + size {
        out.extend_from_slice(&img.data()[(r * w + left) * c..][..size * c]);
    }
    Tensor::new(&[size, size, c], out).expect("crop shape")
}

/// Samples one training batch of aligned crops.
pub fn sample_batch<R: Rng>(data: &[ImagePair], stage: Stage, augment: bool, rng: &mut R) -> Result<Vec<ImagePair>> {
    (0..stage.batch)
        .map(|_| {
            let pair = &data[rng.random_range(0..data.len())];
            let (h, w) = (pair.clean.shape()[0], pair.clean.shape()[1]);
            if stage.patch > h || stage.patch > w {
                return Err(Error::config(format!("patch {} exceeds {h}×{w} training image", stage.patch)));
            }
            let top = rng.random_range(0..=h - stage.patch);
            let left = rng.random_range(0..=w - stage.patch);
            let aug = if augment { Augment::random(rng) } else { Augment::default() };
            Ok(ImagePair {
                clean: aug.apply(&crop(&pair.clean, top, left, stage.patch)),
                degraded: aug.apply(&crop(&pair.degraded, top, left, stage.patch)),
            })
        })
        .collect()
}

fn dump_batch(dir: &Path, iteration: usize, batch: &[ImagePair]) -> Result<PathBuf> {
    let path = dir.join(format!("diverged_{iteration}"));
    std::fs::create_dir_all(&path)?;
    for (i, p) in batch.iter().enumerate() {
        p.clean.write_dump(std::fs::File::create(path.join(format!("{i}_clean.eamt")))?)?;
        p.degraded.write_dump(std::fs::File::create(path.join(format!("{i}_degraded.eamt")))?)?;
    }
    Ok(path)
}

/// Mean L1 loss of a batch and the batch-averaged parameter gradients.
pub fn batch_gradients(net: &RestorationNet<f32>, batch: &[ImagePair]) -> Result<(f64, Vec<Vec<f32>>)> {
    let mut grads: Vec<Vec<f32>> = net.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let scale = 1.0 / batch.len() as f32;
    let mut loss = 0.0;
    for item in batch {
        let mut g = Graph::new();
        let pv = net.params.bind(&mut g, true);
        let x = g.constant(item.degraded.clone());
        let target = g.constant(item.clean.clone());
        let y = net.forward(&mut g, &pv, x)?;
        let l = g.l1_loss(y, target)?;
        loss += g.value(l).data()[0] as f64;
        g.backward(l)?;
        for (acc, &v) in grads.iter_mut().zip(pv.vars()) {
            if let Some(gv) = g.grad(v) {
                acc.iter_mut().zip(gv).for_each(|(a, &b)| *a += scale * b);
            }
        }
    }
    Ok((loss / batch.len() as f64, grads))
}

/// Trains `net` in place. On a non-finite loss the offending batch is written
/// under `dump_dir` (when given) and [`Error::Diverged`] is returned.
pub fn train(
    net: &mut RestorationNet<f32>,
    data: &[ImagePair],
    cfg: &TrainConfig,
    dump_dir: Option<&Path>,
    mut progress: impl FnMut(&LogRecord),
) -> Result<TrainLog> {
    cfg.validate(net.config.multiple())?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg, net.params.iter().map(|(_, t)| t.len()));
    let mut log = TrainLog::default();
    for t in 0..cfg.iterations {
        let stage = cfg.stage_at(t);
        let lr = cfg.lr(t);
        let batch = sample_batch(data, stage, cfg.augment, &mut rng)?;
        let diverged = |dump_dir: Option<&Path>| -> Error {
            let dump = dump_dir.and_then(|d| dump_batch(d, t, &batch).ok());
            Error::Diverged { iteration: t, dump }
        };
        let (loss, grads) = match batch_gradients(net, &batch) {
            Ok(r) => r,
            Err(e) if e.is_numeric() => return Err(diverged(dump_dir)),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(diverged(dump_dir));
        }
        let mut params: Vec<&mut [f32]> = net.params.iter_mut().map(|(_, t)| t.data_mut()).collect();
        opt.step(&mut params, &grads, lr);
        let rec = LogRecord {
            iteration: t,
            lr,
            loss,
            patch: stage.patch,
            batch: stage.batch,
        };
        progress(&rec);
        log.records.push(rec);
    }
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub psnr_input: f64,
    pub psnr_output: f64,
    pub ssim_input: f64,
    pub ssim_output: f64,
}

/// Full-image PSNR/SSIM of the degraded inputs and the restored outputs,
/// averaged over `data`.
pub fn evaluate(net: &RestorationNet<f32>, data: &[ImagePair]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::config("validation set is empty"));
    }
    let mut r = EvalReport {
        psnr_input: 0.0,
        psnr_output: 0.0,
        ssim_input: 0.0,
        ssim_output: 0.0,
    };
    for p in data {
        let out = net.infer(&p.degraded)?.map(|v| v.clamp(0.0, 1.0));
        r.psnr_input += psnr(&p.degraded, &p.clean)?;
        r.psnr_output += psnr(&out, &p.clean)?;
        r.ssim_input += ssim(&p.degraded, &p.clean)?;
        r.ssim_output += ssim(&out, &p.clean)?;
    }
    let n = data.len() as f64;
    r.psnr_input /= n;
    r.psnr_output /= n;
    r.ssim_input /= n;
    r.ssim_output /= n;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{synth_dataset, SynthSpec};
    use crate::net::{build_network, NetConfig};

    fn tiny_setup() -> (RestorationNet<f32>, Vec<ImagePair>) {
        let cfg = NetConfig {
            level_blocks: vec![1, 1],
            ..NetConfig::tiny()
        };
        let net = build_network(&cfg, 1).unwrap();
        let data = synth_dataset(&SynthSpec {
            kind: Default::default(),
            sigma: 25.0,
            count: 3,
            height: 16,
            width: 16,
            seed: 2,
        })
        .unwrap();
        (net, data)
    }

    fn short(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            stages: vec![Stage {
                patch: 8,
                batch: 2,
                start: 0,
            }],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr(0), cfg.lr_init);
        assert!((cfg.lr(cfg.iterations) - cfg.lr_final).abs() < 1e-18);
        let mid = cfg.lr(cfg.iterations / 2);
        assert!((mid - 0.5 * (cfg.lr_init + cfg.lr_final)).abs() < 1e-15);
    }

    #[test]
    fn stage_parsing_and_validation() {
        let s: Stage = "32x4@100".parse().unwrap();
        assert_eq!(s, Stage { patch: 32, batch: 4, start: 100 });
        assert_eq!(s.to_string(), "32x4@100");
        assert!("32@4".parse::<Stage>().is_err());
        let mut cfg = TrainConfig::default();
        cfg.stages = vec!["16x4@0".parse().unwrap(), "32x2@0".parse().unwrap()];
        assert!(cfg.validate(8).is_err());
        cfg.stages = vec!["12x4@0".parse().unwrap()];
        assert!(cfg.validate(8).is_err());
        cfg.stages = vec!["16x4@0".parse().unwrap(), "32x2@10".parse().unwrap()];
        cfg.validate(8).unwrap();
        assert_eq!(cfg.stage_at(9).patch, 16);
        assert_eq!(cfg.stage_at(10).patch, 32);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let (mut net, data) = tiny_setup();
        let before = net.params.clone();
        let cfg = TrainConfig {
            lr_init: 0.0,
            lr_final: 0.0,
            ..short(1)
        };
        let log = train(&mut net, &data, &cfg, None, |_| {}).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(net.params, before);
    }

    #[test]
    fn training_is_reproducible_and_logs_stages() {
        let run = || {
            let (mut net, data) = tiny_setup();
            let mut cfg = short(4);
            cfg.stages.push(Stage { patch: 16, batch: 1, start: 2 });
            let log = train(&mut net, &data, &cfg, None, |_| {}).unwrap();
            (log, net.params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(pa, pb);
        let patches: Vec<usize> = a.records.iter().map(|r| r.patch).collect();
        assert_eq!(patches, [8, 8, 16, 16]);
    }

    #[test]
    fn augment_keeps_pair_correspondence() {
        let (_, data) = tiny_setup();
        let p = &data[0];
        let base = psnr(&p.clean, &p.degraded).unwrap();
        for bits in 0..8 {
            let a = Augment {
                hflip: bits & 1 != 0,
                vflip: bits & 2 != 0,
                rot90: bits & 4 != 0,
            };
            let v = psnr(&a.apply(&p.clean), &a.apply(&p.degraded)).unwrap();
            assert_eq!(v, base);
        }
    }

    #[test]
    fn rot90_moves_corner() {
        let img = Tensor::<f32>::from_f64(&[2, 3, 1], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let r = Augment { rot90: true, ..Default::default() }.apply(&img);
        assert_eq!(r.shape(), &[3, 2, 1]);
        assert_eq!(r.data(), &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
    }

    #[test]
    fn nan_data_dumps_batch() {
        let (mut net, mut data) = tiny_setup();
        for p in &mut data {
            p.degraded = Tensor::full(p.degraded.shape(), f32::NAN).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        match train(&mut net, &data, &short(2), Some(dir.path()), |_| {}) {
            Err(Error::Diverged { iteration: 0, dump: Some(path) }) => {
                assert!(path.join("0_degraded.eamt").exists());
            }
            other => panic!("{other:?}"),
        }
    }
}
