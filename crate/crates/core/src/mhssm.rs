//! Multi-head selective scan (channel groups, one curve per group) and the
//! gated token-mixing block that wraps it, plus the full-channel
//! multi-direction baseline used for cost comparison.
//!
//! Group `i` of `n` always scans along curve `i mod k` of the `k` configured
//! curves. Because each group carries `λC / n` channels no matter how many
//! curves exist, the scan cost depends only on `n` and `λC`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{DwConv, LayerNorm, Linear};
use crate::numerics::{Graph, Real, Var};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::scan_curves::{CurveSpec, ScanCurve};
use crate::selective_scan::{selective_scan, BbarRule, SsmIds, SsmParams, SsmVars};

/// Multiply-accumulates charged per (step, channel, state) of the recurrence.
///
/// Covers `Δ·A`, the exponential, the input gain, `B̄·u`, the state update and
/// the `C·h` readout, matching the usual reference counter for selective scans.
pub const SCAN_STEP_MACS: u64 = 9;

/// MACs of one selective scan over `len` steps with `channels × state` states,
/// including the input-dependent projections and the skip term.
pub fn scan_macs(len: u64, channels: usize, state: usize) -> u64 {
    let (c, n) = (channels as u64, state as u64);
    len * (c * c + 2 * c * n + SCAN_STEP_MACS * c * n + c)
}

/// Gather/scatter indices of built curves, keyed by curve, extent and width.
#[derive(Default)]
pub struct CurveCache {
    map: Mutex<HashMap<(CurveSpec, usize, usize, usize), CurveIndex>>,
}

#[derive(Clone)]
struct CurveIndex {
    len: usize,
    gather: Arc<Vec<usize>>,
    scatter: Arc<Vec<usize>>,
}

impl CurveIndex {
    fn from_curve(curve: &ScanCurve, channels: usize) -> Self {
        CurveIndex {
            len: curve.len(),
            gather: Arc::new(curve.gather_index(channels)),
            scatter: Arc::new(curve.scatter_index(channels)),
        }
    }
}

impl CurveCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get(&self, spec: CurveSpec, h: usize, w: usize, channels: usize) -> Result<CurveIndex> {
        let key = (spec, h, w, channels);
        if let Some(idx) = self.map.lock().expect("curve cache poisoned").get(&key) {
            return Ok(idx.clone());
        }
        let idx = CurveIndex::from_curve(&spec.build(h, w)?, channels);
        self.map
            .lock()
            .expect("curve cache poisoned")
            .insert(key, idx.clone());
        Ok(idx)
    }
}

fn image_dims<T: Real>(g: &Graph<T>, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
    match *g.shape(x) {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::dim(op, format!("expected H×W×C, got {s:?}"))),
    }
}

fn scan_along<T: Real>(g: &mut Graph<T>, x: Var, idx: &CurveIndex, p: &SsmVars) -> Result<Var> {
    let (h, w, c) = image_dims(g, "scan_along", x)?;
    let seq = g.gather(x, idx.gather.clone(), &[idx.len, c])?;
    let out = selective_scan(g, seq, p)?;
    g.gather(out, idx.scatter.clone(), &[h, w, c])
}

fn mhss_impl<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    groups: &[SsmVars],
    mut index_for: impl FnMut(usize, usize) -> Result<CurveIndex>,
) -> Result<Var> {
    let (_, _, c) = image_dims(g, "mhss", x)?;
    let n = groups.len();
    if n == 0 || c % n != 0 {
        return Err(Error::config(format!("{c} channels cannot be split into {n} groups")));
    }
    let cg = c / n;
    let mut outs = Vec::with_capacity(n);
    for (i, p) in groups.iter().enumerate() {
        if g.shape(p.d) != [cg] {
            return Err(Error::dim("mhss", format!("group {i} expects {cg} channels")));
        }
        let part = if n == 1 { x } else { g.slice_last(x, i * cg, cg)? };
        let idx = index_for(i, cg)?;
        outs.push(scan_along(g, part, &idx, p)?);
    }
    if n == 1 {
        Ok(outs[0])
    } else {
        g.concat_last(&outs)
    }
}

/// Splits channels into `groups.len()` groups, scans group `i` along
/// `curves[i % curves.len()]` and concatenates the results in group order.
pub fn mhss<T: Real>(g: &mut Graph<T>, x: Var, curves: &[ScanCurve], groups: &[SsmVars]) -> Result<Var> {
    let (h, w, _) = image_dims(g, "mhss", x)?;
    if curves.is_empty() {
        return Err(Error::config("mhss needs at least one curve"));
    }
    if let Some(c) = curves.iter().find(|c| c.height() != h || c.width() != w) {
        return Err(Error::dim(
            "mhss",
            format!("curve {}×{} vs tensor {h}×{w}", c.height(), c.width()),
        ));
    }
    mhss_impl(g, x, groups, |i, cg| {
        Ok(CurveIndex::from_curve(&curves[i % curves.len()], cg))
    })
}

/// Every curve scans all channels with its own parameters; outputs are summed.
pub fn twodss_forward<T: Real>(g: &mut Graph<T>, x: Var, curves: &[ScanCurve], dirs: &[SsmVars]) -> Result<Var> {
    let (h, w, c) = image_dims(g, "twodss", x)?;
    if curves.is_empty() || curves.len() != dirs.len() {
        return Err(Error::config(format!(
            "twodss needs one parameter set per curve ({} curves, {} sets)",
            curves.len(),
            dirs.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (curve, p) in curves.iter().zip(dirs) {
        if curve.height() != h || curve.width() != w {
            return Err(Error::dim("twodss", "curve extent mismatch"));
        }
        let y = scan_along(g, x, &CurveIndex::from_curve(curve, c), p)?;
        acc = Some(match acc {
            Some(a) => g.add(a, y)?,
            None => y,
        });
    }
    Ok(acc.expect("at least one curve"))
}

/// Store-backed multi-head scan layer.
#[derive(Clone, Debug)]
pub struct MhssLayer {
    pub channels: usize,
    pub groups: Vec<SsmIds>,
    pub curves: Vec<CurveSpec>,
}

impl MhssLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        num_groups: usize,
        curves: &[CurveSpec],
        d_state: usize,
        rule: BbarRule,
    ) -> Result<Self> {
        if num_groups == 0 || channels % num_groups != 0 {
            return Err(Error::config(format!(
                "{channels} channels not divisible into {num_groups} groups"
            )));
        }
        if curves.is_empty() {
            return Err(Error::config("scan set is empty"));
        }
        let cg = channels / num_groups;
        let groups = (0..num_groups)
            .map(|i| {
                let mut p = SsmParams::<T>::init(cg, d_state, rng)?;
                p.rule = rule;
                Ok(p.register(store, &format!("{name}.g{i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MhssLayer {
            channels,
            groups,
            curves: curves.to_vec(),
        })
    }

    /// The curve that group `i` scans along.
    pub fn curve_for_group(&self, i: usize) -> CurveSpec {
        self.curves[i % self.curves.len()]
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var, cache: &CurveCache) -> Result<Var> {
        let (h, w, _) = image_dims(g, "mhss", x)?;
        let vars: Vec<SsmVars> = self.groups.iter().map(|ids| ids.bind(pv)).collect();
        mhss_impl(g, x, &vars, |i, cg| cache.get(self.curve_for_group(i), h, w, cg))
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.groups
            .iter()
            .map(|p| scan_macs((h * w) as u64, p.d_inner, p.d_state))
            .sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.groups.iter().map(SsmIds::num_scalars).sum()
    }
}

/// Store-backed full-channel multi-direction scan layer.
#[derive(Clone, Debug)]
pub struct TwoDssLayer {
    pub channels: usize,
    pub dirs: Vec<SsmIds>,
    pub curves: Vec<CurveSpec>,
}

impl TwoDssLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        curves: &[CurveSpec],
        d_state: usize,
        rule: BbarRule,
    ) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::config("scan set is empty"));
        }
        let dirs = (0..curves.len())
            .map(|i| {
                let mut p = SsmParams::<T>::init(channels, d_state, rng)?;
                p.rule = rule;
                Ok(p.register(store, &format!("{name}.d{i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TwoDssLayer {
            channels,
            dirs,
            curves: curves.to_vec(),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var, cache: &CurveCache) -> Result<Var> {
        let (h, w, c) = image_dims(g, "twodss", x)?;
        let mut acc: Option<Var> = None;
        for (spec, ids) in self.curves.iter().zip(&self.dirs) {
            let idx = cache.get(*spec, h, w, c)?;
            let y = scan_along(g, x, &idx, &ids.bind(pv))?;
            acc = Some(match acc {
                Some(a) => g.add(a, y)?,
                None => y,
            });
        }
        Ok(acc.expect("at least one curve"))
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.dirs
            .iter()
            .map(|p| scan_macs((h * w) as u64, p.d_inner, p.d_state))
            .sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.dirs.iter().map(SsmIds::num_scalars).sum()
    }
}

/// Which scan operator sits inside the gated block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MixerKind {
    /// Channel-grouped multi-head scan.
    #[default]
    MultiHead,
    /// Full-channel scan per direction, summed.
    TwoD,
}

impl std::str::FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mhss" => Ok(MixerKind::MultiHead),
            "2dss" => Ok(MixerKind::TwoD),
            _ => Err(Error::config(format!("unknown mixer '{s}'"))),
        }
    }
}

impl std::fmt::Display for MixerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MixerKind::MultiHead => "mhss",
            MixerKind::TwoD => "2dss",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Mixer {
    MultiHead(MhssLayer),
    TwoD(TwoDssLayer),
}

impl Mixer {
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        match self {
            Mixer::MultiHead(m) => m.macs(h, w),
            Mixer::TwoD(m) => m.macs(h, w),
        }
    }

    pub fn num_scalars(&self) -> usize {
        match self {
            Mixer::MultiHead(m) => m.num_scalars(),
            Mixer::TwoD(m) => m.num_scalars(),
        }
    }
}

/// Hyperparameters of one gated scan block.
#[derive(Clone, Debug, PartialEq)]
pub struct MhssmConfig {
    pub channels: usize,
    pub expansion: f64,
    pub groups: usize,
    pub curves: Vec<CurveSpec>,
    pub d_state: usize,
    pub rule: BbarRule,
    pub mixer: MixerKind,
}

impl MhssmConfig {
    /// `λC`, which must come out integral.
    pub fn inner_channels(&self) -> Result<usize> {
        expanded_width(self.channels, self.expansion)
    }
}

/// `round(ratio · channels)`, rejecting non-integral products.
pub fn expanded_width(channels: usize, ratio: f64) -> Result<usize> {
    let v = ratio * channels as f64;
    let r = v.round();
    if ratio <= 0.0 || (v - r).abs() > 1e-9 || r < 1.0 {
        return Err(Error::config(format!(
            "expansion {ratio} × {channels} channels is not a positive integer"
        )));
    }
    Ok(r as usize)
}

/// Gated token mixer:
/// `Y = LN(scan(SiLU(DWConv(Linear(X)))))`, `Z = SiLU(Linear(X))`,
/// output `Linear(Y ⊙ Z)`.
#[derive(Clone, Debug)]
pub struct Mhssm {
    pub channels: usize,
    pub inner: usize,
    pub in_left: Linear,
    pub in_right: Linear,
    pub dwconv: DwConv,
    pub mixer: Mixer,
    pub out_norm: LayerNorm,
    pub out_proj: Linear,
}

impl Mhssm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cfg: &MhssmConfig,
    ) -> Result<Self> {
        let c = cfg.channels;
        let inner = cfg.inner_channels()?;
        let in_left = Linear::new(store, rng, &format!("{name}.in_left"), c, inner, false)?;
        let in_right = Linear::new(store, rng, &format!("{name}.in_right"), c, inner, false)?;
        let dwconv = DwConv::new(store, rng, &format!("{name}.dwconv"), inner, 3)?;
        let mixer = match cfg.mixer {
            MixerKind::MultiHead => Mixer::MultiHead(MhssLayer::new(
                store,
                rng,
                &format!("{name}.mhss"),
                inner,
                cfg.groups,
                &cfg.curves,
                cfg.d_state,
                cfg.rule,
            )?),
            MixerKind::TwoD => Mixer::TwoD(TwoDssLayer::new(
                store,
                rng,
                &format!("{name}.twodss"),
                inner,
                &cfg.curves,
                cfg.d_state,
                cfg.rule,
            )?),
        };
        let out_norm = LayerNorm::new(store, &format!("{name}.out_norm"), inner)?;
        let out_proj = Linear::new(store, rng, &format!("{name}.out_proj"), inner, c, false)?;
        Ok(Mhssm {
            channels: c,
            inner,
            in_left,
            in_right,
            dwconv,
            mixer,
            out_norm,
            out_proj,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var, cache: &CurveCache) -> Result<Var> {
        let (_, _, c) = image_dims(g, "mhssm", x)?;
        if c != self.channels {
            return Err(Error::dim("mhssm", format!("{c} channels, block expects {}", self.channels)));
        }
        let left = self.in_left.forward(g, pv, x)?;
        let left = self.dwconv.forward(g, pv, left)?;
        let left = g.silu(left)?;
        let scanned = match &self.mixer {
            Mixer::MultiHead(m) => m.forward(g, pv, left, cache)?,
            Mixer::TwoD(m) => m.forward(g, pv, left, cache)?,
        };
        let y = self.out_norm.forward(g, pv, scanned)?;
        let right = self.in_right.forward(g, pv, x)?;
        let z = g.silu(right)?;
        let gated = g.mul(y, z)?;
        self.out_proj.forward(g, pv, gated)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let l = (h * w) as u64;
        self.in_left.macs(l)
            + self.in_right.macs(l)
            + self.dwconv.macs(l)
            + self.mixer.macs(h, w)
            + self.out_proj.macs(l)
    }

    /// Parameters whose zeroing silences the block output.
    pub fn output_projection(&self) -> Vec<ParamId> {
        self.out_proj.param_ids()
    }
}

/// Forward of a gated scan block.
pub fn mhssm_forward<T: Real>(
    g: &mut Graph<T>,
    pv: &ParamVars,
    block: &Mhssm,
    x: Var,
    cache: &CurveCache,
) -> Result<Var> {
    block.forward(g, pv, x, cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::zero_params;
    use crate::numerics::{grad_check_many, Tensor};
    use crate::params::uniform;
    use crate::scan_curves::{build_curve, ScanKind, ScanSet};
    use crate::selective_scan::selective_scan_fwd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn image(h: usize, w: usize, c: usize, seed: u64) -> Tensor<f64> {
        uniform(&[h, w, c], 1.0, &mut rng(seed)).unwrap()
    }

    #[test]
    fn single_group_single_curve_is_plain_scan() {
        let x = image(3, 4, 2, 1);
        let p = SsmParams::<f64>::init(2, 3, &mut rng(2)).unwrap();
        let curve = build_curve(ScanKind::Horizontal, false, 3, 4).unwrap();
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let vars = SsmVars::leaves(&mut g, &p, false);
        let y = mhss(&mut g, xv, &[curve], &[vars]).unwrap();
        let flat = x.clone().reshape(&[12, 2]).unwrap();
        let expect = selective_scan_fwd(&flat, &p).unwrap();
        assert_eq!(g.value(y).data(), expect.data());
    }

    #[test]
    fn swapping_groups_and_halves_swaps_outputs() {
        let (h, w) = (3, 3);
        let x = image(h, w, 4, 3);
        let p0 = SsmParams::<f64>::init(2, 2, &mut rng(4)).unwrap();
        let p1 = SsmParams::<f64>::init(2, 2, &mut rng(5)).unwrap();
        let curve = build_curve(ScanKind::Diagonal, false, h, w).unwrap();
        let swapped: Vec<f64> = x
            .data()
            .chunks(4)
            .flat_map(|px| [px[2], px[3], px[0], px[1]])
            .collect();
        let run = |input: &Tensor<f64>, a: &SsmParams<f64>, b: &SsmParams<f64>| {
            let mut g = Graph::new();
            let xv = g.leaf(input.clone());
            let va = SsmVars::leaves(&mut g, a, false);
            let vb = SsmVars::leaves(&mut g, b, false);
            let y = mhss(&mut g, xv, std::slice::from_ref(&curve), &[va, vb]).unwrap();
            g.value(y).clone()
        };
        let y = run(&x, &p0, &p1);
        let ys = run(&Tensor::new(&[h, w, 4], swapped).unwrap(), &p1, &p0);
        for (a, b) in y.data().chunks(4).zip(ys.data().chunks(4)) {
            assert_eq!([a[0], a[1], a[2], a[3]], [b[2], b[3], b[0], b[1]]);
        }
    }

    #[test]
    fn skip_only_groups_pass_through() {
        let x = image(4, 4, 4, 6);
        let curves: Vec<ScanCurve> = ScanSet::AllAround
            .curves()
            .iter()
            .map(|c| c.build(4, 4).unwrap())
            .collect();
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let groups: Vec<SsmVars> = (0..4)
            .map(|i| {
                let mut p = SsmParams::<f64>::init(1, 2, &mut rng(10 + i)).unwrap();
                p.c_proj = Tensor::zeros(&[1, 2]).unwrap();
                p.d = Tensor::ones(&[1]).unwrap();
                SsmVars::leaves(&mut g, &p, false)
            })
            .collect();
        let y = mhss(&mut g, xv, &curves, &groups).unwrap();
        assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn group_independence() {
        let x = image(4, 4, 4, 7);
        let mut cache_x = x.clone();
        for px in cache_x.data_mut().chunks_mut(4) {
            px[2] = 0.0;
            px[3] = 0.0;
        }
        let curves: Vec<ScanCurve> = ScanSet::TwoD
            .curves()
            .iter()
            .map(|c| c.build(4, 4).unwrap())
            .collect();
        let params: Vec<SsmParams<f64>> = (0..2)
            .map(|i| SsmParams::init(2, 3, &mut rng(20 + i)).unwrap())
            .collect();
        let run = |input: &Tensor<f64>| {
            let mut g = Graph::new();
            let xv = g.leaf(input.clone());
            let vars: Vec<SsmVars> = params.iter().map(|p| SsmVars::leaves(&mut g, p, false)).collect();
            let y = mhss(&mut g, xv, &curves, &vars).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (run(&x), run(&cache_x));
        for (pa, pb) in a.data().chunks(4).zip(b.data().chunks(4)) {
            assert_eq!(pa[..2], pb[..2]);
        }
        assert_ne!(a, b);
    }

    #[test]
    fn indivisible_and_mismatched_configs_fail() {
        let mut store = ParamStore::<f64>::new();
        let curves = ScanSet::TwoD.curves();
        assert!(matches!(
            MhssLayer::new(&mut store, &mut rng(0), "m", 6, 4, &curves, 4, BbarRule::Zoh),
            Err(Error::Config(_))
        ));
        let x = image(3, 3, 4, 8);
        let p = SsmParams::<f64>::init(4, 2, &mut rng(9)).unwrap();
        let mut g = Graph::new();
        let xv = g.leaf(x);
        let vars = SsmVars::leaves(&mut g, &p, false);
        let wrong = build_curve(ScanKind::Vertical, false, 3, 4).unwrap();
        assert!(matches!(mhss(&mut g, xv, &[wrong], &[vars]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn twodss_single_curve_equals_single_group_mhss() {
        let x = image(3, 5, 3, 11);
        let p = SsmParams::<f64>::init(3, 2, &mut rng(12)).unwrap();
        let curve = build_curve(ScanKind::Hilbert, true, 3, 5).unwrap();
        let mut g = Graph::new();
        let xv = g.leaf(x);
        let vars = SsmVars::leaves(&mut g, &p, false);
        let a = mhss(&mut g, xv, std::slice::from_ref(&curve), &[vars]).unwrap();
        let b = twodss_forward(&mut g, xv, &[curve], &[vars]).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
    }

    fn block(seed: u64, cfg: &MhssmConfig) -> (ParamStore<f64>, Mhssm) {
        let mut store = ParamStore::new();
        let m = Mhssm::new(&mut store, &mut rng(seed), "blk", cfg).unwrap();
        (store, m)
    }

    fn small_cfg() -> MhssmConfig {
        MhssmConfig {
            channels: 4,
            expansion: 2.0,
            groups: 2,
            curves: ScanSet::AllAround.curves(),
            d_state: 3,
            rule: BbarRule::Zoh,
            mixer: MixerKind::MultiHead,
        }
    }

    #[test]
    fn zero_projection_or_gate_silences_block() {
        let cfg = small_cfg();
        let x = image(4, 4, 4, 13);
        let cache = CurveCache::new();
        let (mut store, m) = block(14, &cfg);
        zero_params(&mut store, &m.output_projection());
        let mut g = Graph::new();
        let pv = store.bind(&mut g, false);
        let xv = g.leaf(x.clone());
        let y = m.forward(&mut g, &pv, xv, &cache).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.shape(y), &[4, 4, 4]);

        let (mut store, m) = block(15, &cfg);
        zero_params(&mut store, &m.in_right.param_ids());
        let mut g = Graph::new();
        let pv = store.bind(&mut g, false);
        let xv = g.leaf(x);
        let y = m.forward(&mut g, &pv, xv, &cache).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mhssm_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let (store, m) = block(16, &cfg);
        // Larger weights than the init so every path carries signal.
        let mut inputs = vec![image(8, 8, 4, 17)];
        let mut r = rng(18);
        for (name, t) in store.iter() {
            let mut t = t.clone();
            if name.ends_with(".w") || name.ends_with(".k") {
                t = uniform(t.shape(), 0.5, &mut r).unwrap();
            }
            inputs.push(t);
        }
        let cache = CurveCache::new();
        let weights = image(8, 8, 4, 19);
        let report = grad_check_many(
            |g, v| {
                let pv = ParamVars::from_vars(v[1..].to_vec());
                let y = m.forward(g, &pv, v[0], &cache)?;
                let w = g.constant(weights.clone());
                let p = g.mul(y, w)?;
                g.sum(p)
            },
            &inputs,
            1e-5,
            Some(12),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn cost_independent_of_curve_count() {
        let mut counts = Vec::new();
        for k in [1usize, 2, 4, 8] {
            let curves = ScanSet::AllAround.curves()[..k].to_vec();
            let mut store = ParamStore::<f32>::new();
            let m = MhssLayer::new(&mut store, &mut rng(0), "m", 16, 8, &curves, 4, BbarRule::Zoh).unwrap();
            counts.push((store.total_scalars(), m.macs(8, 8)));
        }
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
    }

    #[test]
    fn twodss_cost_linear_in_curve_count() {
        let cost = |k: usize| {
            let curves = ScanSet::AllAround.curves()[..k].to_vec();
            let mut store = ParamStore::<f32>::new();
            let m = TwoDssLayer::new(&mut store, &mut rng(0), "t", 16, &curves, 4, BbarRule::Zoh).unwrap();
            (store.total_scalars(), m.macs(8, 8))
        };
        let one = cost(1);
        assert_eq!(cost(4), (4 * one.0, 4 * one.1));
    }
}
