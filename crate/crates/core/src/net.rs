//! Four-level UNet of gated scan blocks with a global residual output.
//!
//! ```text
//! I_LQ ─pad─ conv3×3 ─ enc0 ─ down ─ enc1 ─ down ─ enc2 ─ down ─ bottleneck
//!                       │             │             │               │
//!                       └── merge ─ dec0 ─ up ─ merge ─ dec1 ─ up ─ merge ─ dec2 ─ up
//!                            │
//!                       refinement ─ conv3×3 ─crop─ + I_LQ
//! ```

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv, Linear};
use crate::mambaformer::{BlockConfig, MambaFormerBlock, MlpKind};
use crate::mhssm::{CurveCache, MhssmConfig, MixerKind};
use crate::numerics::{Graph, Real, Tensor, Var};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::scan_curves::ScanSet;
use crate::selective_scan::{BbarRule, DEFAULT_D_STATE};

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub base_channels: usize,
    pub level_blocks: Vec<usize>,
    pub refinement_blocks: usize,
    pub expansion: f64,
    pub groups: usize,
    pub scan_set: ScanSet,
    pub mlp_kind: MlpKind,
    pub mlp_expansion: f64,
    pub d_state: usize,
    pub bbar_rule: BbarRule,
    pub mixer: MixerKind,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 64,
            level_blocks: vec![4, 6, 6, 7],
            refinement_blocks: 2,
            expansion: 2.0,
            groups: 8,
            scan_set: ScanSet::AllAround,
            mlp_kind: MlpKind::SimpleFfn,
            mlp_expansion: 2.0,
            d_state: DEFAULT_D_STATE,
            bbar_rule: BbarRule::Zoh,
            mixer: MixerKind::MultiHead,
        }
    }
}

impl NetConfig {
    /// Smoke-test configuration: `C = 8`, one block per level.
    pub fn tiny() -> Self {
        NetConfig {
            base_channels: 8,
            level_blocks: vec![1, 1, 1, 1],
            refinement_blocks: 1,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.level_blocks.len()
    }

    /// Spatial divisibility the encoder needs.
    pub fn multiple(&self) -> usize {
        1 << (self.levels().saturating_sub(1))
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn block_config(&self, level: usize) -> BlockConfig {
        BlockConfig {
            mixer: MhssmConfig {
                channels: self.width(level),
                expansion: self.expansion,
                groups: self.groups,
                curves: self.scan_set.curves(),
                d_state: self.d_state,
                rule: self.bbar_rule,
                mixer: self.mixer,
            },
            mlp_kind: self.mlp_kind,
            mlp_expansion: self.mlp_expansion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.levels() == 0 || self.d_state == 0 || self.groups == 0 {
            return Err(Error::config("channels, levels, groups and d_state must be positive"));
        }
        if self.scan_set.curves().is_empty() {
            return Err(Error::config("scan set is empty"));
        }
        for l in 0..self.levels() {
            let inner = self.block_config(l).mixer.inner_channels()?;
            if inner % self.groups != 0 {
                return Err(Error::config(format!(
                    "level {l}: {inner} inner channels not divisible into {} groups",
                    self.groups
                )));
            }
        }
        Ok(())
    }
}

/// Gather index of `[H,W,C] → [H/2,W/2,4C]`; output channel `(di·2+dj)·C + c`.
pub fn space_to_depth_index(h: usize, w: usize, c: usize) -> Result<Vec<usize>> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("space_to_depth", format!("{h}×{w} is not even")));
    }
    let mut idx = Vec::with_capacity(h * w * c);
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            for d in 0..4 {
                let (r, col) = (2 * i + d / 2, 2 * j + d % 2);
                idx.extend((0..c).map(|ch| (r * w + col) * c + ch));
            }
        }
    }
    Ok(idx)
}

/// Gather index of `[H,W,4C] → [2H,2W,C]`, the inverse rearrangement.
pub fn depth_to_space_index(h: usize, w: usize, c4: usize) -> Result<Vec<usize>> {
    if c4 % 4 != 0 {
        return Err(Error::dim("depth_to_space", format!("{c4} channels not divisible by 4")));
    }
    let c = c4 / 4;
    let mut idx = Vec::with_capacity(h * w * c4);
    for r in 0..2 * h {
        for col in 0..2 * w {
            let d = (r % 2) * 2 + col % 2;
            let base = ((r / 2) * w + col / 2) * c4 + d * c;
            idx.extend(base..base + c);
        }
    }
    Ok(idx)
}

fn dims<T: Real>(g: &Graph<T>, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
    match *g.shape(x) {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::dim(op, format!("expected H×W×C, got {s:?}"))),
    }
}

pub fn space_to_depth<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let (h, w, c) = dims(g, "space_to_depth", x)?;
    let idx = space_to_depth_index(h, w, c)?;
    g.gather(x, Arc::new(idx), &[h / 2, w / 2, 4 * c])
}

pub fn depth_to_space<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let (h, w, c4) = dims(g, "depth_to_space", x)?;
    let idx = depth_to_space_index(h, w, c4)?;
    g.gather(x, Arc::new(idx), &[2 * h, 2 * w, c4 / 4])
}

/// Space-to-depth then `4C → 2C`.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub proj: Linear,
}

impl Downsample {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, c: usize) -> Result<Self> {
        Ok(Downsample {
            proj: Linear::new(store, rng, name, 4 * c, 2 * c, false)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let s = space_to_depth(g, x)?;
        self.proj.forward(g, pv, s)
    }
}

/// `C → 2C` then depth-to-space, giving `C/2` channels at twice the extent.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub proj: Linear,
}

impl Upsample {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, c: usize) -> Result<Self> {
        if c % 2 != 0 {
            return Err(Error::config(format!("cannot upsample {c} channels")));
        }
        Ok(Upsample {
            proj: Linear::new(store, rng, name, c, 2 * c, false)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let p = self.proj.forward(g, pv, x)?;
        depth_to_space(g, p)
    }
}

/// Concatenates decoder and skip features, then reduces `2w → w`.
#[derive(Clone, Debug)]
pub struct SkipMerge {
    pub proj: Linear,
}

impl SkipMerge {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, c: usize) -> Result<Self> {
        Ok(SkipMerge {
            proj: Linear::new(store, rng, name, 2 * c, c, false)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, dec: Var, skip: Var) -> Result<Var> {
        if g.shape(dec) != g.shape(skip) {
            return Err(Error::dim(
                "skip_merge",
                format!("{:?} vs {:?}", g.shape(dec), g.shape(skip)),
            ));
        }
        let cat = g.concat_last(&[dec, skip])?;
        self.proj.forward(g, pv, cat)
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Gather index reflecting `[H,W,C]` out to `[hp,wp,C]` on the bottom and right.
pub fn reflect_pad_index(h: usize, w: usize, c: usize, hp: usize, wp: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(hp * wp * c);
    for r in 0..hp {
        for col in 0..wp {
            let base = (reflect(r, h) * w + reflect(col, w)) * c;
            idx.extend(base..base + c);
        }
    }
    idx
}

fn crop_index(hp: usize, wp: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    let _ = hp;
    let mut idx = Vec::with_capacity(h * w * c);
    for r in 0..h {
        let base = r * wp * c;
        idx.extend(base..base + w * c);
    }
    idx
}

/// Extent after padding `n` up to a multiple of `m`.
pub fn padded(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

#[derive(Clone, Debug)]
pub struct EncoderLevel {
    pub blocks: Vec<MambaFormerBlock>,
    pub down: Downsample,
}

#[derive(Clone, Debug)]
pub struct DecoderLevel {
    pub up: Upsample,
    pub merge: SkipMerge,
    pub blocks: Vec<MambaFormerBlock>,
}

/// Per-module parameter and MAC count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

/// Network structure plus its parameters.
#[derive(Clone)]
pub struct RestorationNet<T: Real = f32> {
    pub config: NetConfig,
    pub params: ParamStore<T>,
    pub patch_embed: Conv,
    pub encoders: Vec<EncoderLevel>,
    pub bottleneck: Vec<MambaFormerBlock>,
    /// Ordered from the deepest level upward.
    pub decoders: Vec<DecoderLevel>,
    pub refinement: Vec<MambaFormerBlock>,
    pub output: Conv,
    cache: Arc<CurveCache>,
}

impl<T: Real> std::fmt::Debug for RestorationNet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RestorationNet")
            .field("config", &self.config)
            .field("params", &self.params.total_scalars())
            .finish_non_exhaustive()
    }
}

fn blocks<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    prefix: &str,
    count: usize,
    cfg: &BlockConfig,
) -> Result<Vec<MambaFormerBlock>> {
    (0..count)
        .map(|i| MambaFormerBlock::new(store, rng, &format!("{prefix}.b{i}"), cfg))
        .collect()
}

/// Deterministically initializes a network from `seed`.
pub fn build_network<T: Real>(cfg: &NetConfig, seed: u64) -> Result<RestorationNet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let rng = &mut rng;
    let c = cfg.base_channels;
    let last = cfg.levels() - 1;

    let patch_embed = Conv::new(&mut store, rng, "patch_embed", 3, c, 3, true)?;
    let mut encoders = Vec::new();
    for l in 0..last {
        let b = blocks(&mut store, rng, &format!("enc{l}"), cfg.level_blocks[l], &cfg.block_config(l))?;
        let down = Downsample::new(&mut store, rng, &format!("down{l}"), cfg.width(l))?;
        encoders.push(EncoderLevel { blocks: b, down });
    }
    let bottleneck = blocks(&mut store, rng, "bottleneck", cfg.level_blocks[last], &cfg.block_config(last))?;
    let mut decoders = Vec::new();
    for l in (0..last).rev() {
        let up = Upsample::new(&mut store, rng, &format!("up{l}"), cfg.width(l + 1))?;
        let merge = SkipMerge::new(&mut store, rng, &format!("merge{l}"), cfg.width(l))?;
        let b = blocks(&mut store, rng, &format!("dec{l}"), cfg.level_blocks[l], &cfg.block_config(l))?;
        decoders.push(DecoderLevel { up, merge, blocks: b });
    }
    let refinement = blocks(&mut store, rng, "refine", cfg.refinement_blocks, &cfg.block_config(0))?;
    let output = Conv::new(&mut store, rng, "output", c, 3, 3, true)?;
    Ok(RestorationNet {
        config: cfg.clone(),
        params: store,
        patch_embed,
        encoders,
        bottleneck,
        decoders,
        refinement,
        output,
        cache: Arc::new(CurveCache::new()),
    })
}

fn run_blocks<T: Real>(
    g: &mut Graph<T>,
    pv: &ParamVars,
    blocks: &[MambaFormerBlock],
    mut x: Var,
    cache: &CurveCache,
) -> Result<Var> {
    for b in blocks {
        x = b.forward(g, pv, x, cache)?;
    }
    Ok(x)
}

impl<T: Real> RestorationNet<T> {
    pub fn num_params(&self) -> usize {
        self.params.total_scalars()
    }

    /// Records the forward pass of an `H×W×3` image. Parameters come from `pv`.
    pub fn forward(&self, g: &mut Graph<T>, pv: &ParamVars, image: Var) -> Result<Var> {
        let (h, w, ch) = dims(g, "forward", image)?;
        if ch != 3 {
            return Err(Error::dim("forward", format!("expected 3 channels, got {ch}")));
        }
        let m = self.config.multiple();
        let (hp, wp) = (padded(h, m), padded(w, m));
        let x = if (hp, wp) == (h, w) {
            image
        } else {
            g.gather(image, Arc::new(reflect_pad_index(h, w, 3, hp, wp)), &[hp, wp, 3])?
        };
        let cache = &*self.cache;
        let mut feat = self.patch_embed.forward(g, pv, x)?;
        let mut skips = Vec::new();
        for enc in &self.encoders {
            feat = run_blocks(g, pv, &enc.blocks, feat, cache)?;
            skips.push(feat);
            feat = enc.down.forward(g, pv, feat)?;
        }
        feat = run_blocks(g, pv, &self.bottleneck, feat, cache)?;
        for dec in &self.decoders {
            let up = dec.up.forward(g, pv, feat)?;
            let skip = skips.pop().expect("one skip per decoder level");
            feat = dec.merge.forward(g, pv, up, skip)?;
            feat = run_blocks(g, pv, &dec.blocks, feat, cache)?;
        }
        feat = run_blocks(g, pv, &self.refinement, feat, cache)?;
        let mut residual = self.output.forward(g, pv, feat)?;
        if (hp, wp) != (h, w) {
            residual = g.gather(residual, Arc::new(crop_index(hp, wp, 3, h, w)), &[h, w, 3])?;
        }
        g.add(image, residual)
    }

    /// Binds parameters without gradients and runs the network on `image`.
    pub fn infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let pv = self.params.bind(&mut g, false);
        let x = g.constant(image.clone());
        let y = self.forward(&mut g, &pv, x)?;
        Ok(g.value(y).clone())
    }

    fn all_blocks(&self) -> impl Iterator<Item = &MambaFormerBlock> {
        self.encoders
            .iter()
            .flat_map(|e| &e.blocks)
            .chain(&self.bottleneck)
            .chain(self.decoders.iter().flat_map(|d| &d.blocks))
            .chain(&self.refinement)
    }

    /// The final convolution producing the residual image.
    pub fn residual_output_params(&self) -> Vec<ParamId> {
        self.output.param_ids()
    }

    /// Output projections of every residual branch in the network, including
    /// the final convolution. Channel-attention MLPs have none and are skipped.
    pub fn all_residual_projections(&self) -> Vec<ParamId> {
        let mut ids = self.residual_output_params();
        for b in self.all_blocks() {
            ids.extend(b.mhssm.output_projection());
            ids.extend(b.mlp.output_projection().unwrap_or_default());
        }
        ids
    }

    /// Parameters and MACs of each module for an `h×w` input, in forward order.
    pub fn module_costs(&self, h: usize, w: usize) -> Vec<ModuleCost> {
        let m = self.config.multiple();
        let (mut hh, mut ww) = (padded(h, m), padded(w, m));
        let full = (hh as u64) * (ww as u64);
        let mut out = Vec::new();
        let mut push = |name: String, macs: u64| {
            let params = self.params.scalars_with_prefix(&format!("{name}.")) as u64;
            out.push(ModuleCost { name, params, macs });
        };
        push("patch_embed".into(), self.patch_embed.macs(full));
        let mut extents = Vec::new();
        for (l, enc) in self.encoders.iter().enumerate() {
            for (i, b) in enc.blocks.iter().enumerate() {
                push(format!("enc{l}.b{i}"), b.macs(hh, ww));
            }
            extents.push((hh, ww));
            hh /= 2;
            ww /= 2;
            push(format!("down{l}"), enc.down.proj.macs((hh * ww) as u64));
        }
        for (i, b) in self.bottleneck.iter().enumerate() {
            push(format!("bottleneck.b{i}"), b.macs(hh, ww));
        }
        let last = self.encoders.len();
        for (k, dec) in self.decoders.iter().enumerate() {
            let l = last - 1 - k;
            push(format!("up{l}"), dec.up.proj.macs((hh * ww) as u64));
            (hh, ww) = extents[l];
            push(format!("merge{l}"), dec.merge.proj.macs((hh * ww) as u64));
            for (i, b) in dec.blocks.iter().enumerate() {
                push(format!("dec{l}.b{i}"), b.macs(hh, ww));
            }
        }
        for (i, b) in self.refinement.iter().enumerate() {
            push(format!("refine.b{i}"), b.macs(hh, ww));
        }
        push("output".into(), self.output.macs(full));
        out
    }

    pub fn cast<U: Real>(&self) -> RestorationNet<U> {
        RestorationNet {
            config: self.config.clone(),
            params: self.params.cast(),
            patch_embed: self.patch_embed.clone(),
            encoders: self.encoders.clone(),
            bottleneck: self.bottleneck.clone(),
            decoders: self.decoders.clone(),
            refinement: self.refinement.clone(),
            output: self.output.clone(),
            cache: self.cache.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::zero_params;
    use crate::params::uniform;

    fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        uniform::<f64, _>(&[h, w, 3], 0.5, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .map(|v| v + 0.5)
    }

    #[test]
    fn tiny_net_forwards_32x32() {
        let net = build_network::<f32>(&NetConfig::tiny(), 0).unwrap();
        let x = image(32, 32, 1).cast::<f32>();
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape(), &[32, 32, 3]);
    }

    #[test]
    fn odd_extent_is_padded_and_cropped() {
        let net = build_network::<f32>(&NetConfig::tiny(), 0).unwrap();
        let y = net.infer(&image(33, 47, 2).cast()).unwrap();
        assert_eq!(y.shape(), &[33, 47, 3]);
    }

    #[test]
    fn same_seed_same_params() {
        let a = build_network::<f32>(&NetConfig::tiny(), 7).unwrap();
        let b = build_network::<f32>(&NetConfig::tiny(), 7).unwrap();
        let c = build_network::<f32>(&NetConfig::tiny(), 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        assert_eq!(a.num_params(), c.num_params());
    }

    #[test]
    fn zeroed_output_gives_identity() {
        let mut net = build_network::<f32>(&NetConfig::tiny(), 3).unwrap();
        let ids = net.residual_output_params();
        zero_params(&mut net.params, &ids);
        let x = image(16, 24, 4).cast::<f32>();
        assert_eq!(net.infer(&x).unwrap(), x);
    }

    #[test]
    fn indivisible_groups_are_config_errors() {
        let cfg = NetConfig {
            base_channels: 3,
            groups: 4,
            ..NetConfig::tiny()
        };
        assert!(matches!(build_network::<f32>(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn space_to_depth_block_order() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let s = space_to_depth(&mut g, x).unwrap();
        assert_eq!(g.shape(s), &[1, 1, 4]);
        assert_eq!(g.value(s).data(), &[1.0, 2.0, 3.0, 4.0]);
        let back = depth_to_space(&mut g, s).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn resamplers_are_shape_inverses_and_keep_energy() {
        let c = 8;
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let down = Downsample::new(&mut store, &mut rng, "down", c).unwrap();
        let up = Upsample::new(&mut store, &mut rng, "up", 2 * c).unwrap();
        // identity-like: pick the first 2C of 4C inputs, duplicate C into 2C
        let mut wd = Tensor::zeros(&[4 * c, 2 * c]).unwrap();
        (0..2 * c).for_each(|i| wd.set(&[i, i], 1.0));
        let mut wu = Tensor::zeros(&[2 * c, 4 * c]).unwrap();
        (0..4 * c).for_each(|j| wu.set(&[j % (2 * c), j], 1.0));
        store.set(down.proj.weight, wd).unwrap();
        store.set(up.proj.weight, wu).unwrap();

        let x: Tensor<f64> = uniform(&[8, 8, c], 1.0, &mut rng).unwrap();
        let rms = |t: &Tensor<f64>| (t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        let mut g = Graph::new();
        let pv = store.bind(&mut g, false);
        let xv = g.leaf(x.clone());
        let d = down.forward(&mut g, &pv, xv).unwrap();
        let u = up.forward(&mut g, &pv, d).unwrap();
        assert_eq!(g.shape(d), &[4, 4, 2 * c]);
        assert_eq!(g.shape(u), &[8, 8, c]);
        for t in [g.value(d), g.value(u)] {
            let ratio = rms(t) / rms(&x);
            assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
        }
    }

    #[test]
    fn skip_merge_selecting_decoder_is_noop_and_passes_gradients() {
        let c = 3;
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let merge = SkipMerge::new(&mut store, &mut rng, "m", c).unwrap();
        let dec: Tensor<f64> = uniform(&[2, 2, c], 1.0, &mut rng).unwrap();
        let skip: Tensor<f64> = uniform(&[2, 2, c], 1.0, &mut rng).unwrap();

        let mut g = Graph::new();
        let pv = store.bind(&mut g, false);
        let dv = g.leaf(dec.clone().with_requires_grad(true));
        let sv = g.leaf(skip.clone().with_requires_grad(true));
        let y = merge.forward(&mut g, &pv, dv, sv).unwrap();
        assert_eq!(g.shape(y), &[2, 2, c]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(dv).unwrap().iter().any(|&v| v != 0.0));
        assert!(g.grad(sv).unwrap().iter().any(|&v| v != 0.0));

        let mut sel = Tensor::zeros(&[2 * c, c]).unwrap();
        (0..c).for_each(|i| sel.set(&[i, i], 1.0));
        store.set(merge.proj.weight, sel).unwrap();
        let mut g = Graph::new();
        let pv = store.bind(&mut g, false);
        let dv = g.leaf(dec.clone());
        let sv = g.leaf(skip);
        let y = merge.forward(&mut g, &pv, dv, sv).unwrap();
        assert_eq!(g.value(y), &dec);
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let idx = reflect_pad_index(3, 1, 1, 6, 1);
        assert_eq!(idx, vec![0, 1, 2, 1, 0, 1]);
    }

    #[test]
    fn module_costs_cover_every_parameter() {
        let net = build_network::<f32>(&NetConfig::tiny(), 0).unwrap();
        let costs = net.module_costs(32, 32);
        let total: u64 = costs.iter().map(|m| m.params).sum();
        assert_eq!(total, net.num_params() as u64);
    }
}
