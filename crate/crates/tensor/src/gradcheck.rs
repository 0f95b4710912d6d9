//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric side only ever evaluates the forward function on constant
//! inputs, so it shares no code path with the backward closures it checks.

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞)` over all inputs.
    pub max_rel_err: f64,
    /// Number of scalar coordinates perturbed.
    pub coords: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tol
    }
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&g, &vars)?;
    if out.value().len() != 1 {
        return Err(contract(
            "gradcheck",
            format!("function must return a scalar, got {:?}", out.shape()),
        ));
    }
    Ok(out.item())
}

/// Checks every coordinate of every input with step `h`.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    check_gradients_sampled(inputs, h, usize::MAX, f)
}

/// Like [`check_gradients`] but perturbs at most `max_coords` evenly spaced
/// coordinates per input.
pub fn check_gradients_sampled<F>(
    inputs: &[Tensor],
    h: f64,
    max_coords: usize,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &leaves)?;
    let grads = g.backward(&out)?;

    let mut worst: f64 = 0.0;
    let mut coords = 0;
    let mut work = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        let n = inputs[i].len();
        let step = if n <= max_coords {
            1
        } else {
            n.div_ceil(max_coords)
        };
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in (0..n).step_by(step) {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&f, &work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&f, &work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[j];
            if !a.is_finite() || !numeric.is_finite() {
                diff = f64::INFINITY;
            }
            diff = diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
            coords += 1;
        }
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    Ok(GradCheck {
        max_rel_err: worst,
        coords,
    })
}
