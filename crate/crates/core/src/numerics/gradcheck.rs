//! Central-difference gradient checking in `f64`.

use alloc::vec::Vec;

use super::{Graph, NumericsError, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many coordinates per input, evenly spaced.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords: None,
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Largest relative error between analytic and numeric gradients of the
/// scalar `f` with respect to every input.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input);
        let n = input.numel();
        let stride = match opts.max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let x0 = input.data()[i];
            probe[k].data_mut()[i] = x0 + opts.step;
            let up = eval(&f, &probe)?;
            probe[k].data_mut()[i] = x0 - opts.step;
            let down = eval(&f, &probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * opts.step);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, opts: GradCheckOptions) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var, NumericsError>,
{
    grad_check_many(|g, v| f(g, v[0]), core::slice::from_ref(x), opts)
}
