//! Central finite-difference verification of tape gradients (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates checked per input tensor; `None` checks every coordinate.
    pub samples_per_tensor: Option<usize>,
    pub seed: u64,
    /// Skip coordinates whose ±eps or ±10·eps perturbation changes the sign
    /// pattern of any non-smooth op input.
    pub skip_kinks: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            samples_per_tensor: None,
            seed: 0,
            skip_kinks: true,
        }
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheck {
    pub fn merge(&mut self, other: &GradCheck) {
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks `f` as a function of the single input `x`; returns the maximum
/// relative error over all coordinates.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    let report = finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), &opts)?;
    Ok(report.max_rel_error)
}

struct Eval {
    loss: f64,
    kinks: Vec<bool>,
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, vars, loss))
}

fn eval_point<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Eval>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, _, loss) = evaluate(f, inputs)?;
    Ok(Eval {
        loss: tape.value(loss).item(),
        kinks: tape.kink_pattern(),
    })
}

/// Checks `f` against central differences in every input.
///
/// `f` receives one trainable leaf per input and must return a scalar.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, loss) = evaluate(&f, inputs)?;
    let grads = tape.backward(loss)?;
    let base_kinks = tape.kink_pattern();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheck::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.of(*var).expect("every input is a trainable leaf");
        let len = inputs[ti].numel();
        let coords: Vec<usize> = match opts.samples_per_tensor {
            Some(k) if k < len => {
                let mut c = sample(&mut rng, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for idx in coords {
            let x0 = inputs[ti].data()[idx];
            let at = |delta: f64, work: &mut Vec<Tensor<f64>>| -> Result<Eval> {
                work[ti].data_mut()[idx] = x0 + delta;
                let e = eval_point(&f, work);
                work[ti].data_mut()[idx] = x0;
                e
            };
            let plus = at(opts.eps, &mut work)?;
            let minus = at(-opts.eps, &mut work)?;
            if opts.skip_kinks {
                let near = plus.kinks != base_kinks || minus.kinks != base_kinks;
                let band = near
                    || at(10.0 * opts.eps, &mut work)?.kinks != base_kinks
                    || at(-10.0 * opts.eps, &mut work)?.kinks != base_kinks;
                if band {
                    report.skipped += 1;
                    continue;
                }
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * opts.eps);
            let err = relative_error(analytic.data()[idx], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, idx));
            }
        }
    }
    Ok(report)
}
