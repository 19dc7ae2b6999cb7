//! Hierarchical frequency extraction: a stack of strided convolutions whose
//! successive outputs are the high-, mid- and low-frequency maps.

use crate::autodiff::Exec;
use crate::error::{Error, Result};
use crate::model::params::{Conv, ParamBuilder};
use crate::scalar::Scalar;

/// `(kernel, stride)` of each extractor conv. The fourth entry produces the
/// 1/8-scale map of a four-branch network.
const LAYERS: [(usize, usize); 4] = [(7, 1), (5, 2), (3, 2), (3, 2)];

#[derive(Clone, Debug)]
pub struct Hfe {
    pub convs: Vec<Conv>,
}

impl Hfe {
    pub fn build<T: Scalar>(b: &mut ParamBuilder<T>, widths: &[usize]) -> Self {
        let mut cin = 3;
        let convs = widths
            .iter()
            .zip(LAYERS)
            .enumerate()
            .map(|(i, (&cout, (k, s)))| {
                let conv = b.conv(&format!("hfe.conv{}", i + 1), cin, cout, k, s, 1.0);
                cin = cout;
                conv
            })
            .collect();
        Hfe { convs }
    }

    /// Input sides must be multiples of this.
    pub fn multiple(&self) -> usize {
        4.max(1 << self.convs.len().saturating_sub(1))
    }

    /// One map per branch, each followed by LeakyReLU.
    pub fn forward<T: Scalar, E: Exec<T>>(&self, ex: &mut E, x: &E::Value, slope: T) -> Result<Vec<E::Value>> {
        let s = ex.shape(x);
        let m = self.multiple();
        if s.c != 3 || s.h % m != 0 || s.w % m != 0 || s.h == 0 || s.w == 0 {
            return Err(Error::shape(
                "hfe",
                format!("expected an RGB input with sides divisible by {m}, got {s}"),
            ));
        }
        let mut maps = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &self.convs {
            let y = conv.forward(ex, &cur)?;
            cur = ex.leaky_relu(&y, slope);
            maps.push(cur.clone());
        }
        Ok(maps)
    }
}
