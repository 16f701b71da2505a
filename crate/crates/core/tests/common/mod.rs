//! Independent oracles shared by integration tests. Nothing here calls the
//! estimators under test; only the user-model primitives are reused.

#![allow(dead_code)]

use prefelicit::model::{response_probability, Response, TransformedParams, Trial};
use prefelicit::normal::binary_entropy;

/// Evenly spaced grid with `n` points covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Exact `I(R; alpha)` in bits for D = 1 by enumerating a grid over
/// `(alpha, gamma)` with independent Gaussian weights and both outcomes of R.
pub fn grid_mutual_information(
    trial: &Trial,
    (mu_a, var_a): (f64, f64),
    (mu_g, var_g): (f64, f64),
    n: usize,
) -> f64 {
    let (sa, sg) = (var_a.sqrt(), var_g.sqrt());
    let alphas = linspace(mu_a - 6.0 * sa, mu_a + 6.0 * sa, n);
    let gammas = linspace(mu_g - 6.0 * sg, mu_g + 6.0 * sg, n);
    let wa: Vec<f64> = alphas.iter().map(|a| (-0.5 * ((a - mu_a) / sa).powi(2)).exp()).collect();
    let wg: Vec<f64> = gammas.iter().map(|g| (-0.5 * ((g - mu_g) / sg).powi(2)).exp()).collect();
    let (za, zg): (f64, f64) = (wa.iter().sum(), wg.iter().sum());

    let mut p_marginal = 0.0;
    let mut cond_entropy = 0.0;
    for (a, w_a) in alphas.iter().zip(&wa) {
        let mut p_a = 0.0;
        for (g, w_g) in gammas.iter().zip(&wg) {
            let phi = TransformedParams { alpha: vec![*a], gamma: vec![*g] };
            p_a += w_g / zg * response_probability(trial, &phi);
        }
        // enumerate r in {0, 1}: H(R | alpha) = h(P(R = 1 | alpha))
        p_marginal += w_a / za * p_a;
        cond_entropy += w_a / za * binary_entropy(p_a);
    }
    binary_entropy(p_marginal) - cond_entropy
}

/// Exact posterior mean of `(alpha, gamma)` for D = 1 under an independent
/// Gaussian prior, by quadrature on an `n x n` grid over `[lo, hi]^2`.
pub fn grid_posterior_mean(
    prior_mean: [f64; 2],
    prior_var: [f64; 2],
    observations: &[(Trial, Response)],
    (lo, hi): (f64, f64),
    n: usize,
) -> [f64; 2] {
    let grid = linspace(lo, hi, n);
    let mut logp = Vec::with_capacity(n * n);
    for &a in &grid {
        for &g in &grid {
            let phi = TransformedParams { alpha: vec![a], gamma: vec![g] };
            let mut lp = -0.5 * (a - prior_mean[0]).powi(2) / prior_var[0]
                - 0.5 * (g - prior_mean[1]).powi(2) / prior_var[1];
            for (t, r) in observations {
                let p = response_probability(t, &phi).clamp(1e-300, 1.0);
                lp += if r.prefers_alternative() { p.ln() } else { (1.0 - p).max(1e-300).ln() };
            }
            logp.push(lp);
        }
    }
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut ma, mut mg) = (0.0, 0.0, 0.0);
    for (i, &a) in grid.iter().enumerate() {
        for (j, &g) in grid.iter().enumerate() {
            let w = (logp[i * n + j] - max).exp();
            z += w;
            ma += w * a;
            mg += w * g;
        }
    }
    [ma / z, mg / z]
}

/// The five fixed D = 1 observations used by the inference oracle checks.
pub fn fixed_observations() -> Vec<(Trial, Response)> {
    let obs = [
        (-1.0, 0.8, 1u8),
        (0.8, 1.6, 0),
        (0.8, 0.2, 1),
        (0.2, -0.6, 0),
        (0.2, 0.5, 1),
    ];
    obs.iter()
        .map(|&(r, a, bit)| (Trial::new(vec![r], vec![a]).unwrap(), Response::from_bit(bit).unwrap()))
        .collect()
}
