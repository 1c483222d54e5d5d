use crate::verify::closed_form::{closed_form_f, closed_form_f_subspace, loss_averaging};

/// Maximizer of `f` over `{0, step, 2 step, ..., 1}`; the first one on ties.
pub fn grid_argmax(step: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let n = (1.0 / step).round().max(1.0) as usize;
    let mut best = (0.0, f(0.0));
    for i in 1..=n {
        let x = i as f64 / n as f64;
        let y = f(x);
        if y > best.1 {
            best = (x, y);
        }
    }
    best
}

pub fn grid_argmax_lambda(alpha2: f64, dim: usize, q: usize, step: f64) -> f64 {
    grid_argmax(step, |l| closed_form_f(l, alpha2, dim, q)).0
}

pub fn grid_argmax_lambda_subspace(alpha2: f64, a2: f64, d: usize, q: usize, step: f64) -> f64 {
    grid_argmax(step, |l| closed_form_f_subspace(l, alpha2, a2, d, q)).0
}

/// Minimizer of the averaging loss over the `mu` grid, with its loss.
pub fn grid_argmin_mu(alpha: f64, e_beta: f64, step: f64) -> (f64, f64) {
    let (mu, neg) = grid_argmax(step, |m| -loss_averaging(m, alpha, e_beta, 1.0));
    (mu, -neg)
}
