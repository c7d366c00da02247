//! Multi-head selective-scan image restoration: scan curves, a differentiable
//! selective scan, the gated block and UNet built on it, cost and receptive
//! field analysis, and a small training harness.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod layers;
pub mod mambaformer;
pub mod mhssm;
pub mod net;
pub mod numerics;
pub mod params;
pub mod scan_curves;
pub mod selective_scan;

pub use error::{Error, Result};
pub use mambaformer::{MambaFormerBlock, MlpKind};
pub use mhssm::{mhss, twodss_forward, Mhssm, MixerKind};
pub use net::{build_network, NetConfig, RestorationNet};
pub use numerics::{Graph, Real, Tensor, Var};
pub use params::{ParamId, ParamStore};
pub use scan_curves::{build_curve, CurveSpec, ScanCurve, ScanKind, ScanSet};
pub use selective_scan::{selective_scan, BbarRule, SsmParams};
