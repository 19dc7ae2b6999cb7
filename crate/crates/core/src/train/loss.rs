use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pixel loss between prediction and target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Mean absolute error.
    #[default]
    L1,
    /// Mean squared error.
    Mse,
    /// The sum of both.
    #[serde(alias = "l1+mse")]
    L1PlusMse,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossMode::L1),
            "mse" => Ok(LossMode::Mse),
            "l1+mse" | "l1_plus_mse" => Ok(LossMode::L1PlusMse),
            other => Err(Error::Config(format!("unknown loss {other:?}; expected l1, mse or l1+mse"))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::L1 => "l1",
            LossMode::Mse => "mse",
            LossMode::L1PlusMse => "l1+mse",
        })
    }
}

/// Loss value in `f64`.
pub fn loss_all<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mode: LossMode) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss", format!("{} vs {}", pred.shape(), target.shape())));
    }
    let n = pred.numel() as f64;
    let (mut l1, mut l2) = (0.0, 0.0);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p.as_f64() - t.as_f64();
        l1 += d.abs();
        l2 += d * d;
    }
    Ok(match mode {
        LossMode::L1 => l1 / n,
        LossMode::Mse => l2 / n,
        LossMode::L1PlusMse => l1 / n + l2 / n,
    })
}

/// Records the loss on `tape`; the result is a scalar node.
pub fn record_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var, mode: LossMode) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::shape(
            "loss",
            format!("{} vs {}", tape.shape(pred), tape.shape(target)),
        ));
    }
    let d = tape.sub(pred, target)?;
    let l1 = |tape: &mut Tape<T>| {
        let a = tape.abs(d);
        tape.mean(a)
    };
    let l2 = |tape: &mut Tape<T>| {
        let s = tape.square(d);
        tape.mean(s)
    };
    match mode {
        LossMode::L1 => Ok(l1(tape)),
        LossMode::Mse => Ok(l2(tape)),
        LossMode::L1PlusMse => {
            let (a, b) = (l1(tape), l2(tape));
            tape.add(a, b)
        }
    }
}
