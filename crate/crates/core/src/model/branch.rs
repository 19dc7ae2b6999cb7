//! Residual dense blocks, channel attention and the CA-GRDB cascade.

use crate::autodiff::Exec;
use crate::error::{Error, Result};
use crate::model::params::{Conv, ParamBuilder, ParamId};
use crate::scalar::Scalar;

/// Residual dense block: densely connected 3×3 conv + LeakyReLU layers, a
/// 1×1 local fusion back to the input width, and a residual connection.
#[derive(Clone, Debug)]
pub struct Rdb {
    pub layers: Vec<Conv>,
    pub fuse: Conv,
}

impl Rdb {
    pub fn build<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, c0: usize, layers: usize, growth: usize) -> Self {
        let layers = (0..layers)
            .map(|l| b.conv(&format!("{name}.layer{l}"), c0 + l * growth, growth, 3, 1, 1.0))
            .collect::<Vec<_>>();
        let total = c0 + layers.len() * growth;
        let fuse = b.conv(&format!("{name}.fuse"), total, c0, 1, 1, 0.1);
        Rdb { layers, fuse }
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, ex: &mut E, x: &E::Value, slope: T) -> Result<E::Value> {
        let mut feats = vec![x.clone()];
        for layer in &self.layers {
            let input = if feats.len() == 1 {
                x.clone()
            } else {
                ex.concat(&feats)?
            };
            let y = layer.forward(ex, &input)?;
            feats.push(ex.leaky_relu(&y, slope));
        }
        let all = ex.concat(&feats)?;
        let fused = self.fuse.forward(ex, &all)?;
        ex.add(x, &fused)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().chain([&self.fuse]).flat_map(Conv::ids).collect()
    }
}

/// Squeeze-and-excitation channel gate.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub down: Conv,
    pub up: Conv,
}

impl ChannelAttention {
    pub fn build<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, c: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !c.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "{c} channels are not divisible by the attention reduction {reduction}"
            )));
        }
        Ok(ChannelAttention {
            down: b.conv(&format!("{name}.down"), c, c / reduction, 1, 1, 1.0),
            up: b.conv(&format!("{name}.up"), c / reduction, c, 1, 1, 1.0),
        })
    }

    /// Per-channel gate in `(0, 1)`, shaped `(n, c, 1, 1)`.
    pub fn gate<T: Scalar, E: Exec<T>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let pooled = ex.global_avg_pool(x);
        let d = self.down.forward(ex, &pooled)?;
        let d = ex.relu(&d);
        let u = self.up.forward(ex, &d)?;
        Ok(ex.sigmoid(&u))
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let g = self.gate(ex, x)?;
        ex.mul(x, &g)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.down, self.up].iter().flat_map(Conv::ids).collect()
    }
}

/// Grouped residual dense block: RDBs each followed by channel attention,
/// their outputs concatenated, projected back by a 1×1 conv and added to the
/// block input.
#[derive(Clone, Debug)]
pub struct CaGrdb {
    pub rdbs: Vec<Rdb>,
    pub cas: Vec<Option<ChannelAttention>>,
    pub fuse: Conv,
}

/// Widths of one CA-GRDB.
#[derive(Clone, Copy, Debug)]
pub struct GrdbShape {
    pub channels: usize,
    pub rdbs: usize,
    pub layers: usize,
    pub growth: usize,
    /// `None` disables channel attention.
    pub ca_reduction: Option<usize>,
}

impl CaGrdb {
    pub fn build<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, s: GrdbShape) -> Result<Self> {
        let mut rdbs = Vec::with_capacity(s.rdbs);
        let mut cas = Vec::with_capacity(s.rdbs);
        for r in 0..s.rdbs {
            rdbs.push(Rdb::build(b, &format!("{name}.rdb{r}"), s.channels, s.layers, s.growth));
            cas.push(match s.ca_reduction {
                Some(red) => Some(ChannelAttention::build(b, &format!("{name}.ca{r}"), s.channels, red)?),
                None => None,
            });
        }
        let fuse = b.conv(&format!("{name}.fuse"), s.rdbs * s.channels, s.channels, 1, 1, 0.1);
        Ok(CaGrdb { rdbs, cas, fuse })
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, ex: &mut E, x: &E::Value, slope: T) -> Result<E::Value> {
        let mut outs = Vec::with_capacity(self.rdbs.len());
        let mut cur = x.clone();
        for (rdb, ca) in self.rdbs.iter().zip(&self.cas) {
            cur = rdb.forward(ex, &cur, slope)?;
            if let Some(ca) = ca {
                cur = ca.forward(ex, &cur)?;
            }
            outs.push(cur.clone());
        }
        let cat = ex.concat(&outs)?;
        let fused = self.fuse.forward(ex, &cat)?;
        ex.add(x, &fused)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (rdb, ca) in self.rdbs.iter().zip(&self.cas) {
            ids.extend(rdb.param_ids());
            if let Some(ca) = ca {
                ids.extend(ca.param_ids());
            }
        }
        ids.extend(self.fuse.ids());
        ids
    }
}

/// A cascade of CA-GRDBs over one frequency map.
#[derive(Clone, Debug)]
pub struct Branch {
    pub blocks: Vec<CaGrdb>,
}

impl Branch {
    pub fn build<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, blocks: usize, s: GrdbShape) -> Result<Self> {
        let blocks = (0..blocks)
            .map(|k| CaGrdb::build(b, &format!("{name}.cagrdb{k}"), s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Branch { blocks })
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, ex: &mut E, x: &E::Value, slope: T) -> Result<E::Value> {
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = block.forward(ex, &cur, slope)?;
        }
        Ok(cur)
    }
}
