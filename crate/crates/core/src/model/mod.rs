//! The FAN network.
//!
//! An RGB low-resolution image is split into frequency maps by a stack of
//! strided convolutions, each map is refined by its own cascade of CA-GRDBs,
//! and the branch outputs are aligned, fused by non-local attention and
//! upsampled ×4 with two pixel-shuffle stages.

mod branch;
mod config;
mod fusion;
mod hfe;
mod params;
pub mod weights;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::autodiff::{Eager, Exec, Recorder, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use branch::{Branch, CaGrdb, ChannelAttention, GrdbShape, Rdb};
pub use config::{FanConfig, DEFAULT_BRANCH_CHANNELS};
pub use fusion::{Fusion, FusionShape, NonLocal};
pub use hfe::Hfe;
pub use params::{Conv, ParamBuilder, ParamId, ParamStore};

/// Layer structure of a network; every leaf is a [`ParamId`].
#[derive(Clone, Debug)]
pub struct Network {
    pub hfe: Hfe,
    pub branches: Vec<Branch>,
    pub fusion: Fusion,
}

/// A FAN network with its parameters.
#[derive(Clone, Debug)]
pub struct FanModel<T> {
    config: FanConfig,
    params: ParamStore<T>,
    net: Network,
}

/// A forward pass recorded on a tape.
pub struct Recorded {
    pub output: Var,
    /// Tape variable of every parameter, in parameter order.
    pub params: Vec<Var>,
}

impl<T: Scalar> FanModel<T> {
    /// Builds and initializes a network. The same `(config, seed)` always
    /// yields the same parameters.
    pub fn new(config: FanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::new(seed, config.leaky_slope);
        let hfe = Hfe::build(&mut b, &config.branch_channels);
        let branches = config
            .branch_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let shape = GrdbShape {
                    channels: c,
                    rdbs: config.rdbs_per_cagrdb,
                    layers: config.rdb_layers,
                    growth: config.rdb_growth,
                    ca_reduction: config.ca_enabled.then_some(config.ca_reduction),
                };
                Branch::build(&mut b, &format!("branch{i}"), config.cagrdbs_per_branch, shape)
            })
            .collect::<Result<Vec<_>>>()?;
        let fusion = Fusion::build(
            &mut b,
            &FusionShape {
                branch_channels: config.branch_channels.clone(),
                channels: config.fusion_channels,
                nl: config.nl_enabled,
                bicubic_skip: config.global_bicubic_skip,
            },
        );
        Ok(FanModel {
            config,
            params: b.finish(),
            net: Network { hfe, branches, fusion },
        })
    }

    pub fn config(&self) -> &FanConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn slope(&self) -> T {
        T::lit(self.config.leaky_slope)
    }

    pub fn cast<U: Scalar>(&self) -> FanModel<U> {
        FanModel {
            config: self.config.clone(),
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }

    /// The forward pass on any backend. `x` is `(n, 3, h, w)` with sides
    /// divisible by [`FanConfig::input_multiple`]; the result is `(n, 3, 4h, 4w)`.
    pub fn forward_with<E: Exec<T>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let slope = self.slope();
        let maps = self.net.hfe.forward(ex, x, slope)?;
        let mut outs = Vec::with_capacity(maps.len());
        for (branch, map) in self.net.branches.iter().zip(&maps) {
            outs.push(branch.forward(ex, map, slope)?);
        }
        let lr = ex.value(x).clone();
        self.net.fusion.forward(ex, &outs, &lr, slope)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ex = Eager::new(self.params.tensors());
        let x = ex.constant(x.clone());
        let y = self.forward_with(&mut ex, &x)?;
        Ok(Arc::unwrap_or_clone(y))
    }

    /// The frequency maps (HF, MF, LF, ...) of `x`.
    pub fn hfe_forward(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut ex = Eager::new(self.params.tensors());
        let x = ex.constant(x.clone());
        let maps = self.net.hfe.forward(&mut ex, &x, self.slope())?;
        Ok(maps.into_iter().map(Arc::unwrap_or_clone).collect())
    }

    /// Records the forward pass of `x` on `tape` for differentiation.
    pub fn record(&self, tape: &mut Tape<T>, x: &Tensor<T>) -> Result<Recorded> {
        let mut rec = Recorder::new(tape, self.params.tensors(), self.config.max_nl_positions);
        let xv = rec.constant(x.clone());
        let output = self.forward_with(&mut rec, &xv)?;
        Ok(Recorded {
            output,
            params: rec.param_vars().to_vec(),
        })
    }

    /// Total number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Parameter counts per module, in first-appearance order.
    pub fn module_counts(&self) -> Vec<(String, usize)> {
        let mut order: Vec<String> = Vec::new();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            let key = module_key(name);
            if !counts.contains_key(&key) {
                order.push(key.clone());
            }
            *counts.entry(key).or_default() += t.numel();
        }
        order.into_iter().map(|k| (k.clone(), counts[&k])).collect()
    }

    /// A text table of [`module_counts`](Self::module_counts) and the total.
    pub fn describe(&self) -> String {
        let rows = self.module_counts();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>12}", "module", "params");
        for (k, n) in &rows {
            let _ = writeln!(out, "{k:<width$}  {n:>12}");
        }
        let total = self.count_params();
        let _ = writeln!(out, "{:<width$}  {:>12}", "total", total);
        let _ = writeln!(out, "({:.4} M parameters, {:.2} MiB as f32)", total as f64 / 1e6, total as f64 * 4.0 / (1 << 20) as f64);
        out
    }
}

/// `branch0.cagrdb1.rdb2...` groups as `branch0`; fusion parts group one
/// level deeper (`fusion.nl`, `fusion.align1`).
fn module_key(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or_default();
    if first == "fusion" {
        if let Some(second) = parts.next() {
            return format!("fusion.{second}");
        }
    }
    first.to_string()
}
