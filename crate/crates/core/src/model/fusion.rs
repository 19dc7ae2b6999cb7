//! Non-local fusion of the branch maps and ×4 pixel-shuffle reconstruction.

use crate::autodiff::Exec;
use crate::error::{Error, Result};
use crate::model::params::{Conv, ParamBuilder, ParamId};
use crate::scalar::Scalar;
use crate::tensor::{resize_bicubic, Ratio, Tensor};

/// Embedded-Gaussian non-local block with a residual connection.
#[derive(Clone, Debug)]
pub struct NonLocal {
    pub theta: Conv,
    pub phi: Conv,
    pub g: Conv,
    pub out: Conv,
}

impl NonLocal {
    pub fn build<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, c: usize) -> Self {
        let inner = (c / 2).max(1);
        NonLocal {
            theta: b.conv(&format!("{name}.theta"), c, inner, 1, 1, 1.0),
            // a key-side bias adds the same term to every logit of a row and
            // cancels in the softmax
            phi: b.conv_no_bias(&format!("{name}.phi"), c, inner, 1, 1, 1.0),
            g: b.conv(&format!("{name}.g"), c, inner, 1, 1, 1.0),
            out: b.conv(&format!("{name}.out"), inner, c, 1, 1, 0.1),
        }
    }

    pub fn forward<T: Scalar, E: Exec<T>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let t = self.theta.forward(ex, x)?;
        let p = self.phi.forward(ex, x)?;
        let g = self.g.forward(ex, x)?;
        let y = ex.attention(&t, &p, &g)?;
        let z = self.out.forward(ex, &y)?;
        ex.add(x, &z)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.theta, self.phi, self.g, self.out].iter().flat_map(Conv::ids).collect()
    }
}

/// Widths of the fusion stage.
#[derive(Clone, Debug)]
pub struct FusionShape {
    pub branch_channels: Vec<usize>,
    pub channels: usize,
    pub nl: bool,
    pub bicubic_skip: bool,
}

#[derive(Clone, Debug)]
pub struct Fusion {
    /// Branch `b` is raised to LR resolution by `b` stages of
    /// conv (c → 4c) + pixel shuffle ×2.
    pub align: Vec<Vec<Conv>>,
    pub nl: Option<NonLocal>,
    pub reduce: Conv,
    pub up: [Conv; 2],
    pub out: Conv,
    pub bicubic_skip: bool,
}

impl Fusion {
    pub fn build<T: Scalar>(b: &mut ParamBuilder<T>, s: &FusionShape) -> Self {
        let align = s
            .branch_channels
            .iter()
            .enumerate()
            .map(|(br, &c)| {
                (0..br)
                    .map(|st| b.conv(&format!("fusion.align{br}.stage{st}"), c, 4 * c, 3, 1, 1.0))
                    .collect()
            })
            .collect();
        let cat: usize = s.branch_channels.iter().sum();
        let nl = s.nl.then(|| NonLocal::build(b, "fusion.nl", cat));
        let f = s.channels;
        let reduce = b.conv("fusion.reduce", cat, f, 3, 1, 1.0);
        let up = [
            b.conv("fusion.up0", f, 4 * f, 3, 1, 1.0),
            b.conv("fusion.up1", f, 4 * f, 3, 1, 1.0),
        ];
        let out = b.conv("fusion.out", f, 3, 3, 1, 0.1);
        Fusion {
            align,
            nl,
            reduce,
            up,
            out,
            bicubic_skip: s.bicubic_skip,
        }
    }

    /// `maps[b]` is the branch-`b` output at `1/2^b` of the LR size; `lr` is
    /// the network input, needed only for the global bicubic skip.
    pub fn forward<T: Scalar, E: Exec<T>>(
        &self,
        ex: &mut E,
        maps: &[E::Value],
        lr: &Tensor<T>,
        slope: T,
    ) -> Result<E::Value> {
        if maps.len() != self.align.len() {
            return Err(Error::shape(
                "fusion",
                format!("{} branch maps for {} branches", maps.len(), self.align.len()),
            ));
        }
        let mut aligned = Vec::with_capacity(maps.len());
        for (br, (map, stages)) in maps.iter().zip(&self.align).enumerate() {
            let mut cur = map.clone();
            for conv in stages {
                let y = conv.forward(ex, &cur)?;
                cur = ex.pixel_shuffle(&y, 2)?;
            }
            if let Some(first) = aligned.first() {
                let (a, base) = (ex.shape(&cur), ex.shape(first));
                if (a.n, a.h, a.w) != (base.n, base.h, base.w) {
                    return Err(Error::shape(
                        "fusion",
                        format!("branch {br} aligns to {a}, expected the spatial size of {base}"),
                    ));
                }
            }
            aligned.push(cur);
        }
        let mut x = if aligned.len() == 1 {
            aligned.pop().expect("one map")
        } else {
            ex.concat(&aligned)?
        };
        if let Some(nl) = &self.nl {
            x = nl.forward(ex, &x)?;
        }
        x = self.reduce.forward(ex, &x)?;
        for conv in &self.up {
            let y = conv.forward(ex, &x)?;
            let y = ex.pixel_shuffle(&y, 2)?;
            x = ex.leaky_relu(&y, slope);
        }
        let out = self.out.forward(ex, &x)?;
        if !self.bicubic_skip {
            return Ok(out);
        }
        let base = resize_bicubic(lr, Ratio::up(4))?;
        let base = ex.constant(base);
        ex.add(&out, &base)
    }
}
