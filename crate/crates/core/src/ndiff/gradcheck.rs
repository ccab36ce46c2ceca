use crate::error::Result;

use super::{Graph, Tensor, Var};

/// Compares the reverse-mode gradient of a scalar function with central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// The returned error is `max_i |analytic_i - numeric_i|` divided by the
/// largest gradient magnitude seen on either side, so coordinates with
/// vanishing gradients do not blow the ratio up.
pub fn check_gradients<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    let analytic = g.backward(out)?.get_or_zeros(xv, x.len());

    let eval = |probe: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(probe);
        let out = f(&mut g, xv)?;
        Ok(g.value(out).item())
    };

    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }

    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let worst = analytic
        .iter()
        .zip(&numeric)
        .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
    Ok(worst / scale)
}
