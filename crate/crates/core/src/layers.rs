//! Parameterized building blocks shared by the network modules.
//!
//! Every layer records its parameters in a [`ParamStore`] at construction and
//! reports its multiply-accumulate count for a given spatial extent.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, Real, Tensor, Var};
use crate::params::{trunc_normal, ParamId, ParamStore, ParamVars};

/// Standard deviation of the truncated-normal projection initializer.
pub const INIT_STD: f64 = 0.02;

/// Layer-norm epsilon used throughout the network.
pub const LN_EPS: f64 = 1e-5;

/// Channel-mixing `C_in → C_out` projection applied at every position.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.w"), trunc_normal(&[cin, cout], INIT_STD, rng)?);
        let bias = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[cout])?))
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            cin,
            cout,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        g.linear(x, pv[self.weight], self.bias.map(|b| pv[b]))
    }

    pub fn macs(&self, positions: u64) -> u64 {
        positions * (self.cin * self.cout) as u64
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])?),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])?),
            channels,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        g.layer_norm(x, pv[self.gamma], pv[self.beta], LN_EPS)
    }
}

/// Depth-wise `K × K` convolution with bias.
#[derive(Clone, Debug)]
pub struct DwConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub size: usize,
}

impl DwConv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        size: usize,
    ) -> Result<Self> {
        // fan-in is K², so scale like a per-channel conv
        let std = 1.0 / (size * size) as f64;
        Ok(DwConv {
            kernel: store.add(format!("{name}.k"), trunc_normal(&[size, size, channels], std, rng)?),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[channels])?),
            channels,
            size,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        g.dwconv2d(x, pv[self.kernel], Some(pv[self.bias]))
    }

    pub fn macs(&self, positions: u64) -> u64 {
        positions * (self.channels * self.size * self.size) as u64
    }
}

/// Dense same-padded `K × K` convolution.
#[derive(Clone, Debug)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub size: usize,
}

impl Conv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        size: usize,
        bias: bool,
    ) -> Result<Self> {
        let kernel = store.add(
            format!("{name}.k"),
            trunc_normal(&[size, size, cin, cout], INIT_STD, rng)?,
        );
        let bias = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[cout])?))
        } else {
            None
        };
        Ok(Conv {
            kernel,
            bias,
            cin,
            cout,
            size,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        g.conv2d(x, pv[self.kernel], self.bias.map(|b| pv[b]))
    }

    pub fn macs(&self, positions: u64) -> u64 {
        positions * (self.cin * self.cout * self.size * self.size) as u64
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.kernel).chain(self.bias).collect()
    }
}

/// Sets every listed parameter to zero.
pub fn zero_params<T: Real>(store: &mut ParamStore<T>, ids: &[ParamId]) {
    for &id in ids {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = T::zero());
    }
}
