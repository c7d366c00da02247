//! Pre-norm residual block: scan token mixer followed by a channel MLP.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{DwConv, LayerNorm, Linear};
use crate::mhssm::{expanded_width, CurveCache, Mhssm, MhssmConfig};
use crate::numerics::{Graph, Real, Var};
use crate::params::{ParamId, ParamStore, ParamVars};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum MlpKind {
    None,
    Ffn,
    Gdfn,
    #[default]
    SimpleFfn,
    ChannelAttention,
}

impl MlpKind {
    pub const ALL: [MlpKind; 5] = [
        MlpKind::None,
        MlpKind::Ffn,
        MlpKind::Gdfn,
        MlpKind::SimpleFfn,
        MlpKind::ChannelAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MlpKind::None => "none",
            MlpKind::Ffn => "ffn",
            MlpKind::Gdfn => "gdfn",
            MlpKind::SimpleFfn => "simple_ffn",
            MlpKind::ChannelAttention => "channel_attention",
        }
    }
}

impl fmt::Display for MlpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MlpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MlpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown channel MLP '{s}'")))
    }
}

/// Channel MLP variants. `hidden` is `round(expansion · C)`.
#[derive(Clone, Debug)]
pub enum ChannelMlp {
    None,
    /// `fc2(silu(fc1(x)))`.
    Ffn { fc1: Linear, fc2: Linear },
    /// `proj_out(silu(a) ⊙ b)` where `[a, b] = dwconv(proj_in(x))`.
    Gdfn {
        proj_in: Linear,
        dwconv: DwConv,
        proj_out: Linear,
        hidden: usize,
    },
    /// `fc2(a ⊙ b)` where `[a, b] = fc1(x)`.
    SimpleFfn { fc1: Linear, fc2: Linear, hidden: usize },
    /// `x · sigmoid(fc2(silu(fc1(mean(x)))))` per channel.
    ChannelAttention { fc1: Linear, fc2: Linear },
}

impl ChannelMlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        kind: MlpKind,
        channels: usize,
        expansion: f64,
    ) -> Result<Self> {
        let c = channels;
        if kind == MlpKind::None {
            return Ok(ChannelMlp::None);
        }
        let h = expanded_width(c, expansion)?;
        let n = |s: &str| format!("{name}.{s}");
        Ok(match kind {
            MlpKind::None => unreachable!(),
            MlpKind::Ffn => ChannelMlp::Ffn {
                fc1: Linear::new(store, rng, &n("fc1"), c, h, true)?,
                fc2: Linear::new(store, rng, &n("fc2"), h, c, true)?,
            },
            MlpKind::Gdfn => ChannelMlp::Gdfn {
                proj_in: Linear::new(store, rng, &n("proj_in"), c, 2 * h, false)?,
                dwconv: DwConv::new(store, rng, &n("dwconv"), 2 * h, 3)?,
                proj_out: Linear::new(store, rng, &n("proj_out"), h, c, false)?,
                hidden: h,
            },
            MlpKind::SimpleFfn => {
                if h % 2 != 0 {
                    return Err(Error::config(format!("simple_ffn hidden width {h} must be even")));
                }
                ChannelMlp::SimpleFfn {
                    fc1: Linear::new(store, rng, &n("fc1"), c, h, true)?,
                    fc2: Linear::new(store, rng, &n("fc2"), h / 2, c, true)?,
                    hidden: h,
                }
            }
            MlpKind::ChannelAttention => ChannelMlp::ChannelAttention {
                fc1: Linear::new(store, rng, &n("fc1"), c, h, true)?,
                fc2: Linear::new(store, rng, &n("fc2"), h, c, true)?,
            },
        })
    }

    pub fn kind(&self) -> MlpKind {
        match self {
            ChannelMlp::None => MlpKind::None,
            ChannelMlp::Ffn { .. } => MlpKind::Ffn,
            ChannelMlp::Gdfn { .. } => MlpKind::Gdfn,
            ChannelMlp::SimpleFfn { .. } => MlpKind::SimpleFfn,
            ChannelMlp::ChannelAttention { .. } => MlpKind::ChannelAttention,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        match self {
            ChannelMlp::None => Ok(x),
            ChannelMlp::Ffn { fc1, fc2 } => {
                let h = fc1.forward(g, pv, x)?;
                let h = g.silu(h)?;
                fc2.forward(g, pv, h)
            }
            ChannelMlp::Gdfn {
                proj_in,
                dwconv,
                proj_out,
                hidden,
            } => {
                let h = proj_in.forward(g, pv, x)?;
                let h = dwconv.forward(g, pv, h)?;
                let a = g.slice_last(h, 0, *hidden)?;
                let b = g.slice_last(h, *hidden, *hidden)?;
                let a = g.silu(a)?;
                let gated = g.mul(a, b)?;
                proj_out.forward(g, pv, gated)
            }
            ChannelMlp::SimpleFfn { fc1, fc2, hidden } => {
                let h = fc1.forward(g, pv, x)?;
                let a = g.slice_last(h, 0, hidden / 2)?;
                let b = g.slice_last(h, hidden / 2, hidden / 2)?;
                let gated = g.mul(a, b)?;
                fc2.forward(g, pv, gated)
            }
            ChannelMlp::ChannelAttention { fc1, fc2 } => {
                let pooled = g.channel_mean(x)?;
                let h = fc1.forward(g, pv, pooled)?;
                let h = g.silu(h)?;
                let s = fc2.forward(g, pv, h)?;
                let s = g.sigmoid(s)?;
                g.scale_channels(x, s)
            }
        }
    }

    /// MACs over `positions` pixels. Pooling and gating are not counted.
    pub fn macs(&self, positions: u64) -> u64 {
        match self {
            ChannelMlp::None => 0,
            ChannelMlp::Ffn { fc1, fc2 } => fc1.macs(positions) + fc2.macs(positions),
            ChannelMlp::Gdfn {
                proj_in,
                dwconv,
                proj_out,
                ..
            } => proj_in.macs(positions) + dwconv.macs(positions) + proj_out.macs(positions),
            ChannelMlp::SimpleFfn { fc1, fc2, .. } => fc1.macs(positions) + fc2.macs(positions),
            // the bottleneck runs once on the pooled vector
            ChannelMlp::ChannelAttention { fc1, fc2 } => fc1.macs(1) + fc2.macs(1),
        }
    }

    /// Parameters whose zeroing makes the MLP output exactly zero.
    ///
    /// `None` for channel attention, whose output is a rescaled input.
    pub fn output_projection(&self) -> Option<Vec<ParamId>> {
        match self {
            ChannelMlp::None => Some(Vec::new()),
            ChannelMlp::Ffn { fc2, .. } | ChannelMlp::SimpleFfn { fc2, .. } => Some(fc2.param_ids()),
            ChannelMlp::Gdfn { proj_out, .. } => Some(proj_out.param_ids()),
            ChannelMlp::ChannelAttention { .. } => None,
        }
    }
}

/// Hyperparameters of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub mixer: MhssmConfig,
    pub mlp_kind: MlpKind,
    pub mlp_expansion: f64,
}

/// `X' = X + MHSSM(LN(X))`, `X'' = X' + MLP(LN(X'))`.
#[derive(Clone, Debug)]
pub struct MambaFormerBlock {
    pub channels: usize,
    pub norm1: LayerNorm,
    pub mhssm: Mhssm,
    pub norm2: Option<LayerNorm>,
    pub mlp: ChannelMlp,
}

impl MambaFormerBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cfg: &BlockConfig,
    ) -> Result<Self> {
        let c = cfg.mixer.channels;
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), c)?;
        let mhssm = Mhssm::new(store, rng, &format!("{name}.mhssm"), &cfg.mixer)?;
        let norm2 = match cfg.mlp_kind {
            MlpKind::None => None,
            _ => Some(LayerNorm::new(store, &format!("{name}.norm2"), c)?),
        };
        let mlp = ChannelMlp::new(store, rng, &format!("{name}.mlp"), cfg.mlp_kind, c, cfg.mlp_expansion)?;
        Ok(MambaFormerBlock {
            channels: c,
            norm1,
            mhssm,
            norm2,
            mlp,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var, cache: &CurveCache) -> Result<Var> {
        let n = self.norm1.forward(g, pv, x)?;
        let m = self.mhssm.forward(g, pv, n, cache)?;
        let x1 = g.add(x, m)?;
        let Some(norm2) = &self.norm2 else {
            return Ok(x1);
        };
        let n = norm2.forward(g, pv, x1)?;
        let m = self.mlp.forward(g, pv, n)?;
        g.add(x1, m)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.mhssm.macs(h, w) + self.mlp.macs((h * w) as u64)
    }

    /// Output projections of both residual branches.
    pub fn output_projections(&self) -> Result<Vec<ParamId>> {
        let mut ids = self.mhssm.output_projection();
        ids.extend(self.mlp.output_projection().ok_or_else(|| {
            Error::config("channel attention has no zeroable output projection")
        })?);
        Ok(ids)
    }
}

pub fn mambaformer_forward<T: Real>(
    g: &mut Graph<T>,
    pv: &ParamVars,
    block: &MambaFormerBlock,
    x: Var,
    cache: &CurveCache,
) -> Result<Var> {
    block.forward(g, pv, x, cache)
}

/// `channel_mlp` as a free function.
pub fn channel_mlp<T: Real>(g: &mut Graph<T>, pv: &ParamVars, mlp: &ChannelMlp, x: Var) -> Result<Var> {
    mlp.forward(g, pv, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::zero_params;
    use crate::mhssm::MixerKind;
    use crate::numerics::{grad_check_many, Tensor};
    use crate::params::uniform;
    use crate::scan_curves::ScanSet;
    use crate::selective_scan::BbarRule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cfg(c: usize, kind: MlpKind) -> BlockConfig {
        BlockConfig {
            mixer: MhssmConfig {
                channels: c,
                expansion: 2.0,
                groups: 4,
                curves: ScanSet::AllAround.curves(),
                d_state: 3,
                rule: BbarRule::Zoh,
                mixer: MixerKind::MultiHead,
            },
            mlp_kind: kind,
            mlp_expansion: 2.0,
        }
    }

    fn run(store: &ParamStore<f64>, f: impl FnOnce(&mut Graph<f64>, &ParamVars) -> Var) -> Tensor<f64> {
        let mut g = Graph::new();
        let pv = store.bind(&mut g, false);
        let y = f(&mut g, &pv);
        g.value(y).clone()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MlpKind::ALL {
            assert_eq!(k.name().parse::<MlpKind>().unwrap(), k);
        }
        assert!(matches!("mlp".parse::<MlpKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn zeroed_projections_give_identity() {
        let x: Tensor<f64> = uniform(&[4, 4, 4], 1.0, &mut rng(1)).unwrap();
        for kind in [MlpKind::None, MlpKind::Ffn, MlpKind::Gdfn, MlpKind::SimpleFfn] {
            let mut store = ParamStore::new();
            let b = MambaFormerBlock::new(&mut store, &mut rng(2), "b", &cfg(4, kind)).unwrap();
            zero_params(&mut store, &b.output_projections().unwrap());
            let cache = CurveCache::new();
            let y = run(&store, |g, pv| {
                let xv = g.leaf(x.clone());
                b.forward(g, pv, xv, &cache).unwrap()
            });
            assert_eq!(y, x, "{kind}");
        }
    }

    #[test]
    fn none_equals_first_residual_stage() {
        let x: Tensor<f64> = uniform(&[4, 4, 4], 1.0, &mut rng(3)).unwrap();
        let mut store = ParamStore::new();
        let b = MambaFormerBlock::new(&mut store, &mut rng(4), "b", &cfg(4, MlpKind::None)).unwrap();
        let cache = CurveCache::new();
        let (y, first) = {
            let mut g = Graph::new();
            let pv = store.bind(&mut g, false);
            let xv = g.leaf(x.clone());
            let y = b.forward(&mut g, &pv, xv, &cache).unwrap();
            let n = b.norm1.forward(&mut g, &pv, xv).unwrap();
            let m = b.mhssm.forward(&mut g, &pv, n, &cache).unwrap();
            let first = g.add(xv, m).unwrap();
            (g.value(y).clone(), g.value(first).clone())
        };
        assert_eq!(y, first);
    }

    #[test]
    fn channel_attention_zero_bottleneck_halves_input() {
        let x: Tensor<f64> = uniform(&[3, 3, 4], 1.0, &mut rng(5)).unwrap();
        let mut store = ParamStore::new();
        let mlp = ChannelMlp::new(&mut store, &mut rng(6), "ca", MlpKind::ChannelAttention, 4, 2.0).unwrap();
        let ChannelMlp::ChannelAttention { fc2, .. } = &mlp else { unreachable!() };
        zero_params(&mut store, &fc2.param_ids());
        let y = run(&store, |g, pv| {
            let xv = g.leaf(x.clone());
            mlp.forward(g, pv, xv).unwrap()
        });
        assert_eq!(y, x.map(|v| v / 2.0));
    }

    #[test]
    fn simple_ffn_identity_stack_squares() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[0.5, -2.0, 3.0, 0.25]).unwrap();
        let mut store = ParamStore::new();
        let mlp = ChannelMlp::new(&mut store, &mut rng(7), "s", MlpKind::SimpleFfn, 2, 2.0).unwrap();
        let ChannelMlp::SimpleFfn { fc1, fc2, .. } = &mlp else { unreachable!() };
        let stack = Tensor::from_f64(&[2, 4], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        store.set(fc1.weight, stack).unwrap();
        store.set(fc2.weight, Tensor::identity(2).unwrap()).unwrap();
        zero_params(&mut store, &[fc1.bias.unwrap(), fc2.bias.unwrap()]);
        let y = run(&store, |g, pv| {
            let xv = g.leaf(x.clone());
            mlp.forward(g, pv, xv).unwrap()
        });
        assert_eq!(y.data(), &[0.25, 4.0, 9.0, 0.0625]);
    }

    #[test]
    fn ffn_zero_second_linear_gives_zeros() {
        let x: Tensor<f64> = uniform(&[2, 3, 4], 1.0, &mut rng(8)).unwrap();
        let mut store = ParamStore::new();
        let mlp = ChannelMlp::new(&mut store, &mut rng(9), "f", MlpKind::Ffn, 4, 2.0).unwrap();
        zero_params(&mut store, &mlp.output_projection().unwrap());
        let y = run(&store, |g, pv| {
            let xv = g.leaf(x.clone());
            mlp.forward(g, pv, xv).unwrap()
        });
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_variant_preserves_shape() {
        let x: Tensor<f64> = uniform(&[3, 5, 4], 1.0, &mut rng(10)).unwrap();
        for kind in MlpKind::ALL {
            let mut store = ParamStore::new();
            let mlp = ChannelMlp::new(&mut store, &mut rng(11), "m", kind, 4, 2.0).unwrap();
            let y = run(&store, |g, pv| {
                let xv = g.leaf(x.clone());
                mlp.forward(g, pv, xv).unwrap()
            });
            assert_eq!(y.shape(), x.shape(), "{kind}");
        }
    }

    #[test]
    fn gradient_check_per_variant() {
        for kind in MlpKind::ALL {
            let mut store = ParamStore::<f64>::new();
            let b = MambaFormerBlock::new(&mut store, &mut rng(12), "b", &cfg(4, kind)).unwrap();
            let mut r = rng(13);
            let mut inputs = vec![uniform(&[4, 4, 4], 1.0, &mut r).unwrap()];
            for (_, t) in store.iter() {
                inputs.push(uniform(t.shape(), 0.5, &mut r).unwrap());
            }
            let weights: Tensor<f64> = uniform(&[4, 4, 4], 1.0, &mut r).unwrap();
            let cache = CurveCache::new();
            let report = grad_check_many(
                |g, v| {
                    let pv = ParamVars::from_vars(v[1..].to_vec());
                    let y = b.forward(g, &pv, v[0], &cache)?;
                    let w = g.constant(weights.clone());
                    let p = g.mul(y, w)?;
                    g.sum(p)
                },
                &inputs,
                1e-5,
                Some(6),
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{kind}: {report:?}");
        }
    }
}
