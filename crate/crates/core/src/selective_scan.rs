//! Input-dependent (selective) state-space scan over one flattened sequence.
//!
//! For a sequence `u: L × Cg` and state size `N`:
//!
//! ```text
//! Δ_t   = softplus(u_t · W_Δ + b_Δ)               (per channel)
//! B_t   = u_t · W_B,   C_t = u_t · W_C            (per state, shared by channels)
//! Ā_t   = exp(Δ_t · A)                            A = −exp(A_log) < 0
//! B̄_t   = (Ā_t − 1) / A · B_t                     zero-order hold
//! h_t   = Ā_t ⊙ h_{t−1} + B̄_t · u_t,   h_0 = 0
//! y_t   = ⟨C_t, h_t⟩ + D · u_t
//! ```
//!
//! [`selective_scan`] records the scan as one graph node with a hand-derived
//! backward pass; [`selective_scan_ref`] is a plain step-by-step loop kept as
//! an independent oracle.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::kernels::{linear_bwd, linear_fwd, sigmoid, softplus};
use crate::numerics::{CustomOp, Graph, Real, Tensor, Var};
use crate::params::{uniform, ParamId, ParamStore, ParamVars};

/// Default state size per channel.
pub const DEFAULT_D_STATE: usize = 16;

/// Range of the initial step size Δ after softplus.
pub const DELTA_INIT_RANGE: (f64, f64) = (1e-3, 0.1);

/// Discretization of the input matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BbarRule {
    /// Exact zero-order hold, `B̄ = (Ā − 1) / A · B`.
    #[default]
    Zoh,
    /// First-order shortcut `B̄ = Δ · B`.
    Euler,
}

impl std::str::FromStr for BbarRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zoh" => Ok(BbarRule::Zoh),
            "euler" => Ok(BbarRule::Euler),
            _ => Err(Error::config(format!("unknown bbar rule '{s}'"))),
        }
    }
}

impl std::fmt::Display for BbarRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BbarRule::Zoh => "zoh",
            BbarRule::Euler => "euler",
        })
    }
}

/// Selective-scan parameters for one channel group.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T: Real = f32> {
    /// `Cg × Cg` projection producing the pre-softplus step size.
    pub delta_weight: Tensor<T>,
    pub delta_bias: Tensor<T>,
    /// `Cg × N`, stores `ln(−A)`.
    pub a_log: Tensor<T>,
    /// `Cg × N`.
    pub b_proj: Tensor<T>,
    /// `Cg × N`.
    pub c_proj: Tensor<T>,
    /// `Cg` skip gains.
    pub d: Tensor<T>,
    pub rule: BbarRule,
}

impl<T: Real> SsmParams<T> {
    /// Reference initialization: `A = −(1..=N)` per channel, Δ after
    /// softplus log-uniform in [`DELTA_INIT_RANGE`], `D = 1`.
    pub fn init<R: Rng + ?Sized>(d_inner: usize, d_state: usize, rng: &mut R) -> Result<Self> {
        if d_inner == 0 || d_state == 0 {
            return Err(Error::config("selective scan needs d_inner, d_state >= 1"));
        }
        let (lo, hi) = (DELTA_INIT_RANGE.0.ln(), DELTA_INIT_RANGE.1.ln());
        let delta_bias = (0..d_inner)
            .map(|_| {
                let dt: f64 = rng.random_range(lo..hi).exp();
                // inverse softplus
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect::<Vec<_>>();
        let a_log: Vec<f64> = (0..d_inner)
            .flat_map(|_| (1..=d_state).map(|s| (s as f64).ln()))
            .collect();
        let bound = (d_inner as f64).powf(-0.5);
        Ok(SsmParams {
            delta_weight: uniform(&[d_inner, d_inner], bound, rng)?,
            delta_bias: Tensor::from_f64(&[d_inner], &delta_bias)?,
            a_log: Tensor::from_f64(&[d_inner, d_state], &a_log)?,
            b_proj: uniform(&[d_inner, d_state], bound, rng)?,
            c_proj: uniform(&[d_inner, d_state], bound, rng)?,
            d: Tensor::ones(&[d_inner])?,
            rule: BbarRule::Zoh,
        })
    }

    pub fn d_inner(&self) -> usize {
        self.d.len()
    }

    pub fn d_state(&self) -> usize {
        self.a_log.last_dim()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn tensors(&self) -> [&Tensor<T>; 6] {
        [
            &self.delta_weight,
            &self.delta_bias,
            &self.a_log,
            &self.b_proj,
            &self.c_proj,
            &self.d,
        ]
    }

    fn validate(&self) -> Result<(usize, usize)> {
        let (cg, n) = (self.d_inner(), self.d_state());
        let ok = self.delta_weight.shape() == [cg, cg]
            && self.delta_bias.shape() == [cg]
            && self.a_log.shape() == [cg, n]
            && self.b_proj.shape() == [cg, n]
            && self.c_proj.shape() == [cg, n]
            && self.d.shape() == [cg];
        if !ok {
            return Err(Error::dim("ssm_params", "inconsistent parameter shapes"));
        }
        Ok((cg, n))
    }

    /// Moves the tensors into `store` under `prefix.*`.
    pub fn register(self, store: &mut ParamStore<T>, prefix: &str) -> SsmIds {
        let d_inner = self.d_inner();
        let d_state = self.d_state();
        SsmIds {
            delta_weight: store.add(format!("{prefix}.delta_w"), self.delta_weight),
            delta_bias: store.add(format!("{prefix}.delta_b"), self.delta_bias),
            a_log: store.add(format!("{prefix}.a_log"), self.a_log),
            b_proj: store.add(format!("{prefix}.b_proj"), self.b_proj),
            c_proj: store.add(format!("{prefix}.c_proj"), self.c_proj),
            d: store.add(format!("{prefix}.d"), self.d),
            d_inner,
            d_state,
            rule: self.rule,
        }
    }
}

/// Location of one group's [`SsmParams`] inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SsmIds {
    pub delta_weight: ParamId,
    pub delta_bias: ParamId,
    pub a_log: ParamId,
    pub b_proj: ParamId,
    pub c_proj: ParamId,
    pub d: ParamId,
    pub d_inner: usize,
    pub d_state: usize,
    pub rule: BbarRule,
}

impl SsmIds {
    pub fn bind(&self, pv: &ParamVars) -> SsmVars {
        SsmVars {
            delta_weight: pv[self.delta_weight],
            delta_bias: pv[self.delta_bias],
            a_log: pv[self.a_log],
            b_proj: pv[self.b_proj],
            c_proj: pv[self.c_proj],
            d: pv[self.d],
            rule: self.rule,
        }
    }

    pub fn to_params<T: Real>(&self, store: &ParamStore<T>) -> SsmParams<T> {
        SsmParams {
            delta_weight: store.get(self.delta_weight).clone(),
            delta_bias: store.get(self.delta_bias).clone(),
            a_log: store.get(self.a_log).clone(),
            b_proj: store.get(self.b_proj).clone(),
            c_proj: store.get(self.c_proj).clone(),
            d: store.get(self.d).clone(),
            rule: self.rule,
        }
    }

    /// Trainable scalars of this group.
    pub fn num_scalars(&self) -> usize {
        let (cg, n) = (self.d_inner, self.d_state);
        cg * cg + cg + 3 * cg * n + cg
    }
}

/// Graph handles of one group's scan parameters.
#[derive(Clone, Copy, Debug)]
pub struct SsmVars {
    pub delta_weight: Var,
    pub delta_bias: Var,
    pub a_log: Var,
    pub b_proj: Var,
    pub c_proj: Var,
    pub d: Var,
    pub rule: BbarRule,
}

impl SsmVars {
    /// Records `p` as graph leaves.
    pub fn leaves<T: Real>(g: &mut Graph<T>, p: &SsmParams<T>, requires_grad: bool) -> Self {
        let mut leaf = |t: &Tensor<T>| g.leaf(t.clone().with_requires_grad(requires_grad));
        SsmVars {
            delta_weight: leaf(&p.delta_weight),
            delta_bias: leaf(&p.delta_bias),
            a_log: leaf(&p.a_log),
            b_proj: leaf(&p.b_proj),
            c_proj: leaf(&p.c_proj),
            d: leaf(&p.d),
            rule: p.rule,
        }
    }

    fn inputs(&self, u: Var) -> [Var; 7] {
        [
            u,
            self.delta_weight,
            self.delta_bias,
            self.a_log,
            self.b_proj,
            self.c_proj,
            self.d,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    len: usize,
    channels: usize,
    state: usize,
}

struct Weights<'a, T> {
    delta_weight: &'a [T],
    delta_bias: &'a [T],
    a_log: &'a [T],
    b_proj: &'a [T],
    c_proj: &'a [T],
    d: &'a [T],
}

/// Forward intermediates needed by the backward pass.
struct Cache<T> {
    pre_delta: Vec<T>,
    delta: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
    /// `L × Cg × N` states after each step.
    states: Vec<T>,
    /// `L × Cg × N` discretized decay `Ā`.
    abar: Vec<T>,
    /// `L × Cg × N` input gain `B̄ / B`.
    gain: Vec<T>,
}

/// `(Ā, B̄ / B)` for `x = Δ·A`.
#[inline]
fn discrete_coeffs<T: Real>(rule: BbarRule, x: T, a: T, delta: T) -> (T, T) {
    match rule {
        BbarRule::Zoh => {
            let em1 = x.exp_m1();
            (em1 + T::one(), em1 / a)
        }
        BbarRule::Euler => (x.exp(), delta),
    }
}

fn scan_forward<T: Real>(u: &[T], dims: Dims, w: &Weights<'_, T>, rule: BbarRule) -> Result<(Vec<T>, Cache<T>)> {
    let Dims { len, channels: cg, state: n } = dims;
    let pre_delta = linear_fwd(u, len, cg, w.delta_weight, cg, Some(w.delta_bias));
    let delta: Vec<T> = pre_delta.iter().map(|&z| softplus(z)).collect();
    let bv = linear_fwd(u, len, cg, w.b_proj, n, None);
    let cv = linear_fwd(u, len, cg, w.c_proj, n, None);
    let a: Vec<T> = w.a_log.iter().map(|&v| -v.exp()).collect();

    let mut y = vec![T::zero(); len * cg];
    let mut states = vec![T::zero(); len * cg * n];
    let mut abar = vec![T::zero(); len * cg * n];
    let mut gains = vec![T::zero(); len * cg * n];
    let mut h = vec![T::zero(); cg * n];
    for t in 0..len {
        let b_t = &bv[t * n..(t + 1) * n];
        let c_t = &cv[t * n..(t + 1) * n];
        for ch in 0..cg {
            let dt = delta[t * cg + ch];
            let uc = u[t * cg + ch];
            let a_row = &a[ch * n..(ch + 1) * n];
            let h_row = &mut h[ch * n..(ch + 1) * n];
            let off = (t * cg + ch) * n;
            let abar_row = &mut abar[off..off + n];
            let gain_row = &mut gains[off..off + n];
            let mut acc = T::zero();
            for s in 0..n {
                let (ab, gain) = discrete_coeffs(rule, dt * a_row[s], a_row[s], dt);
                abar_row[s] = ab;
                gain_row[s] = gain;
                h_row[s] = ab * h_row[s] + gain * b_t[s] * uc;
                acc += c_t[s] * h_row[s];
            }
            let out = acc + w.d[ch] * uc;
            if !out.is_finite() {
                return Err(Error::ScanDiverged { step: t, channel: ch });
            }
            y[t * cg + ch] = out;
        }
        states[t * cg * n..(t + 1) * cg * n].copy_from_slice(&h);
    }
    Ok((
        y,
        Cache {
            pre_delta,
            delta,
            b: bv,
            c: cv,
            states,
            abar,
            gain: gains,
        },
    ))
}

struct ScanOp<T> {
    dims: Dims,
    rule: BbarRule,
    cache: Cache<T>,
}

impl<T: Real> CustomOp<T> for ScanOp<T> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T]) -> Vec<Option<Vec<T>>> {
        let Dims { len, channels: cg, state: n } = self.dims;
        let u = inputs[0].data();
        let (wd, al, bp, cp, dd) = (
            inputs[1].data(),
            inputs[3].data(),
            inputs[4].data(),
            inputs[5].data(),
            inputs[6].data(),
        );
        let Cache {
            pre_delta,
            delta,
            b: bv,
            c: cv,
            states,
            abar,
            gain: gains,
        } = &self.cache;
        let a: Vec<T> = al.iter().map(|&v| -v.exp()).collect();

        let mut gu = vec![T::zero(); len * cg];
        let mut gd = vec![T::zero(); cg];
        let mut ga = vec![T::zero(); cg * n];
        let mut gdelta = vec![T::zero(); len * cg];
        let mut gb = vec![T::zero(); len * n];
        let mut gc = vec![T::zero(); len * n];
        // gradient w.r.t. h_t flowing back from step t+1
        let mut gh = vec![T::zero(); cg * n];

        for t in (0..len).rev() {
            for ch in 0..cg {
                let i = t * cg + ch;
                let (g_out, uc, dt) = (gy[i], u[i], delta[i]);
                gd[ch] += g_out * uc;
                let mut gu_i = g_out * dd[ch];
                let mut gdt = T::zero();
                for s in 0..n {
                    let k = ch * n + s;
                    let h_cur = states[t * cg * n + k];
                    let h_prev = if t > 0 { states[(t - 1) * cg * n + k] } else { T::zero() };
                    let (a_cs, b_ts, c_ts) = (a[k], bv[t * n + s], cv[t * n + s]);
                    gc[t * n + s] += g_out * h_cur;
                    let g_h = gh[k] + g_out * c_ts;
                    let (abar, gain) = (abar[t * cg * n + k], gains[t * cg * n + k]);
                    gu_i += g_h * gain * b_ts;
                    let g_abar = g_h * h_prev;
                    let g_bbar = g_h * uc;
                    gb[t * n + s] += g_bbar * gain;
                    match self.rule {
                        BbarRule::Zoh => {
                            // gain = expm1(x) / A; d gain / dx = abar / A
                            let g_gain = g_bbar * b_ts;
                            let g_x = g_abar * abar + g_gain * abar / a_cs;
                            gdt += g_x * a_cs;
                            let g_a = g_x * dt - g_gain * gain / a_cs;
                            ga[k] += g_a * a_cs;
                        }
                        BbarRule::Euler => {
                            let g_x = g_abar * abar;
                            gdt += g_x * a_cs + g_bbar * b_ts;
                            ga[k] += g_x * dt * a_cs;
                        }
                    }
                    gh[k] = g_h * abar;
                }
                gu[i] += gu_i;
                gdelta[i] = gdt;
            }
        }

        let gz: Vec<T> = gdelta
            .iter()
            .zip(pre_delta)
            .map(|(&g, &z)| g * sigmoid(z))
            .collect();
        let dg = linear_bwd(u, len, cg, wd, cg, &gz);
        let bg = linear_bwd(u, len, cg, bp, n, &gb);
        let cgr = linear_bwd(u, len, cg, cp, n, &gc);
        for (((acc, a1), a2), a3) in gu.iter_mut().zip(&dg.x).zip(&bg.x).zip(&cgr.x) {
            *acc += *a1 + *a2 + *a3;
        }
        vec![
            Some(gu),
            Some(dg.w),
            Some(dg.b),
            Some(ga),
            Some(bg.w),
            Some(cgr.w),
            Some(gd),
        ]
    }
}

fn scan_dims<T: Real>(u: &Tensor<T>, cg: usize, n: usize) -> Result<Dims> {
    match *u.shape() {
        [len, c] if c == cg => Ok(Dims { len, channels: cg, state: n }),
        ref s => Err(Error::dim("selective_scan", format!("input {s:?} for {cg} channels"))),
    }
}

/// Records a selective scan of `u: L × Cg` as a differentiable graph node.
pub fn selective_scan<T: Real>(g: &mut Graph<T>, u: Var, p: &SsmVars) -> Result<Var> {
    let (cg, n) = match *g.shape(p.a_log) {
        [cg, n] => (cg, n),
        ref s => return Err(Error::dim("selective_scan", format!("a_log {s:?}"))),
    };
    let shapes_ok = g.shape(p.delta_weight) == [cg, cg]
        && g.shape(p.delta_bias) == [cg]
        && g.shape(p.b_proj) == [cg, n]
        && g.shape(p.c_proj) == [cg, n]
        && g.shape(p.d) == [cg];
    if !shapes_ok {
        return Err(Error::dim("selective_scan", "inconsistent parameter shapes"));
    }
    let dims = scan_dims(g.value(u), cg, n)?;
    let w = Weights {
        delta_weight: g.value(p.delta_weight).data(),
        delta_bias: g.value(p.delta_bias).data(),
        a_log: g.value(p.a_log).data(),
        b_proj: g.value(p.b_proj).data(),
        c_proj: g.value(p.c_proj).data(),
        d: g.value(p.d).data(),
    };
    let (y, cache) = scan_forward(g.value(u).data(), dims, &w, p.rule)?;
    let out = Tensor::new(&[dims.len, cg], y)?;
    g.custom(
        &p.inputs(u),
        out,
        Box::new(ScanOp {
            dims,
            rule: p.rule,
            cache,
        }),
    )
}

/// Evaluates the scan directly, without recording a graph.
pub fn selective_scan_fwd<T: Real>(u: &Tensor<T>, p: &SsmParams<T>) -> Result<Tensor<T>> {
    let (cg, n) = p.validate()?;
    let dims = scan_dims(u, cg, n)?;
    let w = Weights {
        delta_weight: p.delta_weight.data(),
        delta_bias: p.delta_bias.data(),
        a_log: p.a_log.data(),
        b_proj: p.b_proj.data(),
        c_proj: p.c_proj.data(),
        d: p.d.data(),
    };
    let (y, _) = scan_forward(u.data(), dims, &w, p.rule)?;
    Tensor::new(&[dims.len, cg], y)
}

/// Independent oracle: one explicit loop per step with no batched algebra.
pub fn selective_scan_ref<T: Real>(u: &Tensor<T>, p: &SsmParams<T>) -> Result<Tensor<T>> {
    let (cg, n) = p.validate()?;
    let Dims { len, .. } = scan_dims(u, cg, n)?;
    let at = |t: &Tensor<T>, r: usize, c: usize| t.data()[r * t.last_dim() + c];
    let mut h = vec![vec![T::zero(); n]; cg];
    let mut y = Vec::with_capacity(len * cg);
    for t in 0..len {
        let u_t: Vec<T> = (0..cg).map(|c| u.data()[t * cg + c]).collect();
        let mut b_t = vec![T::zero(); n];
        let mut c_t = vec![T::zero(); n];
        for s in 0..n {
            for j in 0..cg {
                b_t[s] += u_t[j] * at(&p.b_proj, j, s);
                c_t[s] += u_t[j] * at(&p.c_proj, j, s);
            }
        }
        for c in 0..cg {
            let mut z = p.delta_bias.data()[c];
            for j in 0..cg {
                z += u_t[j] * at(&p.delta_weight, j, c);
            }
            let delta = softplus(z);
            let mut out = T::zero();
            for s in 0..n {
                let a = -at(&p.a_log, c, s).exp();
                let abar = (delta * a).exp();
                let bbar = match p.rule {
                    BbarRule::Zoh => (delta * a).exp_m1() / a * b_t[s],
                    BbarRule::Euler => delta * b_t[s],
                };
                h[c][s] = abar * h[c][s] + bbar * u_t[c];
                out += c_t[s] * h[c][s];
            }
            y.push(out + p.d.data()[c] * u_t[c]);
        }
    }
    Tensor::new(&[len, cg], y)
}

/// Zero-order-hold discretization.
///
/// `delta: L × Cg`, `a: Cg × N` (negative), `b: L × N`; returns
/// `(Ā, B̄)`, each `L × Cg × N`.
pub fn discretize<T: Real>(
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    rule: BbarRule,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (len, cg) = match *delta.shape() {
        [l, c] => (l, c),
        ref s => return Err(Error::dim("discretize", format!("delta {s:?}"))),
    };
    let n = a.last_dim();
    if a.shape() != [cg, n] || b.shape() != [len, n] {
        return Err(Error::dim(
            "discretize",
            format!("delta {:?}, A {:?}, B {:?}", delta.shape(), a.shape(), b.shape()),
        ));
    }
    let mut abar = Vec::with_capacity(len * cg * n);
    let mut bbar = Vec::with_capacity(len * cg * n);
    for t in 0..len {
        for c in 0..cg {
            let dt = delta.data()[t * cg + c];
            for s in 0..n {
                let av = a.data()[c * n + s];
                let (ab, gain) = discrete_coeffs(rule, dt * av, av, dt);
                abar.push(ab);
                bbar.push(gain * b.data()[t * n + s]);
            }
        }
    }
    Ok((
        Tensor::new(&[len, cg, n], abar)?,
        Tensor::new(&[len, cg, n], bbar)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check_many;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(cg: usize, n: usize, seed: u64) -> SsmParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SsmParams::<f64>::init(cg, n, &mut rng).unwrap();
        p.d = uniform(&[cg], 1.0, &mut rng).unwrap();
        p.a_log = uniform(&[cg, n], 1.0, &mut rng).unwrap();
        p
    }

    fn random_input(len: usize, cg: usize, seed: u64) -> Tensor<f64> {
        uniform(&[len, cg], 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn discretize_closed_form() {
        let delta = Tensor::<f64>::from_f64(&[1, 1], &[2f64.ln()]).unwrap();
        let a = Tensor::from_f64(&[1, 1], &[-1.0]).unwrap();
        let b = Tensor::from_f64(&[1, 1], &[1.0]).unwrap();
        let (abar, bbar) = discretize(&delta, &a, &b, BbarRule::Zoh).unwrap();
        assert!((abar.data()[0] - 0.5).abs() < 1e-15);
        assert!((bbar.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn discretize_limits() {
        let a = Tensor::from_f64(&[1, 1], &[-3.0]).unwrap();
        let b = Tensor::from_f64(&[1, 1], &[2.0]).unwrap();
        let tiny = Tensor::<f64>::from_f64(&[1, 1], &[1e-12]).unwrap();
        let (abar, bbar) = discretize(&tiny, &a, &b, BbarRule::Zoh).unwrap();
        assert!((abar.data()[0] - 1.0).abs() < 1e-11);
        assert!(bbar.data()[0].abs() < 1e-11);

        // A → 0⁻: (e^{Δ A} − 1)/A = Δ + Δ²A/2 + ...
        let dt = 0.3;
        let delta = Tensor::from_f64(&[1, 1], &[dt]).unwrap();
        for eps in [1e-3, 1e-6, 1e-9] {
            let a = Tensor::from_f64(&[1, 1], &[-eps]).unwrap();
            let (_, bbar) = discretize(&delta, &a, &b, BbarRule::Zoh).unwrap();
            let series = (dt - dt * dt * eps / 2.0 + dt * dt * dt * eps * eps / 6.0) * 2.0;
            assert!((bbar.data()[0] - series).abs() < 1e-12, "eps={eps}");
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = random_params(3, 4, 1);
        let y = selective_scan_fwd(&Tensor::zeros(&[6, 3]).unwrap(), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_by_hand() {
        let p = random_params(2, 3, 2);
        let u = random_input(1, 2, 3);
        let y = selective_scan_fwd(&u, &p).unwrap();
        for c in 0..2 {
            let z = p.delta_bias.data()[c]
                + (0..2).map(|j| u.data()[j] * p.delta_weight.data()[j * 2 + c]).sum::<f64>();
            let dt = (1.0 + z.exp()).ln();
            let mut expect = p.d.data()[c] * u.data()[c];
            for s in 0..3 {
                let bs: f64 = (0..2).map(|j| u.data()[j] * p.b_proj.data()[j * 3 + s]).sum();
                let cs: f64 = (0..2).map(|j| u.data()[j] * p.c_proj.data()[j * 3 + s]).sum();
                let a = -p.a_log.data()[c * 3 + s].exp();
                let bbar = ((dt * a).exp() - 1.0) / a * bs;
                expect += cs * bbar * u.data()[c];
            }
            assert!((y.data()[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_matches_reference() {
        for case in 0..20u64 {
            let (len, cg, n) = (1 + case as usize % 8, 1 + case as usize % 4, 1 + case as usize % 3);
            let p = random_params(cg, n, case);
            let u = random_input(len, cg, 100 + case);
            let a = selective_scan_fwd(&u, &p).unwrap();
            let b = selective_scan_ref(&u, &p).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn impulse_decays_geometrically() {
        // Constant Δ = softplus(bias) with a zero Δ projection.
        let mut p = random_params(1, 1, 4);
        p.delta_weight = Tensor::zeros(&[1, 1]).unwrap();
        p.delta_bias = Tensor::from_f64(&[1], &[0.2]).unwrap();
        p.b_proj = Tensor::from_f64(&[1, 1], &[1.0]).unwrap();
        p.c_proj = Tensor::from_f64(&[1, 1], &[1.0]).unwrap();
        p.d = Tensor::zeros(&[1]).unwrap();
        let mut u = Tensor::zeros(&[6, 1]).unwrap();
        u.data_mut()[0] = 1.0;
        let mut g = Graph::<f64>::new();
        let uv = g.leaf(u.clone());
        let pv = SsmVars::leaves(&mut g, &p, false);
        let y = selective_scan(&mut g, uv, &pv).unwrap();
        let dt = softplus(0.2f64);
        let a = -p.a_log.data()[0].exp();
        let bbar = (dt * a).exp_m1() / a;
        assert!((g.value(y).data()[0] - bbar).abs() < 1e-14);

        // B_t and C_t depend on u_t, so read the decaying state out through
        // a second channel that feeds C but not B.
        let mut p2 = random_params(2, 1, 5);
        p2.delta_weight = Tensor::zeros(&[2, 2]).unwrap();
        p2.delta_bias = Tensor::from_f64(&[2], &[0.2, 0.2]).unwrap();
        p2.b_proj = Tensor::from_f64(&[2, 1], &[1.0, 0.0]).unwrap();
        p2.c_proj = Tensor::from_f64(&[2, 1], &[0.0, 1.0]).unwrap();
        p2.d = Tensor::zeros(&[2]).unwrap();
        p2.a_log = Tensor::from_f64(&[2, 1], &[0.0, 0.0]).unwrap();
        let mut u2 = Tensor::zeros(&[6, 2]).unwrap();
        u2.data_mut()[0] = 1.0; // impulse on channel 0 at t = 0
        for t in 1..6 {
            u2.data_mut()[t * 2 + 1] = 1.0; // constant readout channel
        }
        let y2 = selective_scan_ref(&u2, &p2).unwrap();
        let abar = (-dt).exp();
        for t in 2..6 {
            let ratio = y2.data()[t * 2] / y2.data()[(t - 1) * 2];
            assert!((ratio - abar).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn skip_only_configuration() {
        let mut p = random_params(3, 2, 6);
        p.c_proj = Tensor::zeros(&[3, 2]).unwrap();
        let u = random_input(5, 3, 7);
        let y = selective_scan_ref(&u, &p).unwrap();
        for t in 0..5 {
            for c in 0..3 {
                assert_eq!(y.data()[t * 3 + c], p.d.data()[c] * u.data()[t * 3 + c]);
            }
        }
    }

    #[test]
    fn causality_is_exact() {
        let p = random_params(2, 3, 8);
        let u = random_input(10, 2, 9);
        let base = selective_scan_fwd(&u, &p).unwrap();
        for t in 0..9 {
            let mut v = u.clone();
            v.data_mut()[(t + 1) * 2] += 0.5;
            let y = selective_scan_fwd(&v, &p).unwrap();
            assert_eq!(&y.data()[..(t + 1) * 2], &base.data()[..(t + 1) * 2]);
        }
    }

    fn check_grads(rule: BbarRule) -> f64 {
        let mut p = random_params(3, 2, 10);
        p.rule = rule;
        let u = random_input(7, 3, 11);
        let inputs = vec![
            u,
            p.delta_weight.clone(),
            p.delta_bias.clone(),
            p.a_log.clone(),
            p.b_proj.clone(),
            p.c_proj.clone(),
            p.d.clone(),
        ];
        let weights = random_input(7, 3, 12);
        grad_check_many(
            |g, v| {
                let vars = SsmVars {
                    delta_weight: v[1],
                    delta_bias: v[2],
                    a_log: v[3],
                    b_proj: v[4],
                    c_proj: v[5],
                    d: v[6],
                    rule,
                };
                let y = selective_scan(g, v[0], &vars)?;
                let w = g.constant(weights.clone());
                let p = g.mul(y, w)?;
                g.sum(p)
            },
            &inputs,
            1e-5,
            None,
        )
        .unwrap()
        .max_rel_error
    }

    #[test]
    fn gradients_match_finite_differences() {
        let zoh = check_grads(BbarRule::Zoh);
        assert!(zoh < 1e-4, "zoh {zoh}");
        let euler = check_grads(BbarRule::Euler);
        assert!(euler < 1e-4, "euler {euler}");
    }

    #[test]
    fn divergence_reports_step() {
        let mut p = random_params(1, 1, 13);
        p.d = Tensor::from_f64(&[1], &[f64::MAX]).unwrap();
        let mut u = Tensor::zeros(&[4, 1]).unwrap();
        u.data_mut()[2] = 10.0;
        match selective_scan_fwd(&u, &p) {
            Err(Error::ScanDiverged { step, channel }) => assert_eq!((step, channel), (2, 0)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
