//! Central finite-difference verification of backward rules at `f64`.

use rand::seq::index::sample;
use rand::Rng;

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// Tolerance the suites hold every operation to.
pub const TOLERANCE: f64 = 1e-4;

/// Which coordinates of each input to probe.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// At most this many randomly chosen coordinates per input.
    Sample(usize),
}

#[derive(Clone, Debug, Default)]
pub struct CheckResult {
    pub max_rel_err: f64,
    pub coords: usize,
}

impl CheckResult {
    pub fn merge(&mut self, other: &CheckResult) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.coords += other.coords;
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward gradients of `f` against central differences for every
/// input tensor listed in `wrt`.
pub fn check<R, G>(inputs: &[Tensor<f64>], wrt: &[usize], probe: Probe, rng: &mut R, f: G) -> Result<CheckResult>
where
    R: Rng + ?Sized,
    G: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| if wrt.contains(&i) { tape.leaf(t) } else { t.clone() })
        .collect();
    let loss = f(&tape, &leaves)?;
    tape.backward(&loss)?;

    let mut result = CheckResult::default();
    for &i in wrt {
        let analytic = tape
            .grad(&leaves[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let n = inputs[i].numel();
        let coords: Vec<usize> = match probe {
            Probe::All => (0..n).collect(),
            Probe::Sample(k) if k >= n => (0..n).collect(),
            Probe::Sample(k) => sample(rng, n, k).into_vec(),
        };
        for c in coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = inputs[i].to_vec();
                data[c] += delta;
                let mut perturbed = inputs.to_vec();
                perturbed[i] = Tensor::new(inputs[i].shape(), data)?;
                let t = Tape::no_grad();
                f(&t, &perturbed)?.item()
            };
            let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
            let err = rel_err(analytic[c], numeric);
            if !err.is_finite() {
                return Err(Error::NonFinite { op: "gradcheck" });
            }
            result.max_rel_err = result.max_rel_err.max(err);
            result.coords += 1;
        }
    }
    Ok(result)
}

/// Fixed random projection turning any tensor into a scalar loss with a
/// non-trivial gradient: `sum(y * r)`.
pub fn project(tape: &Tape<f64>, y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..y.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = Tensor::new(y.shape(), r)?;
    let prod = tape.mul(y, &r)?;
    tape.sum(&prod)
}

/// Uniform random tensor in `[-scale, scale]`.
pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("finite random tensor")
}
