//! Sequential posterior approximation over `phi = (alpha, gamma)`.
//!
//! Each observation is absorbed by assumed density filtering: the current
//! Gaussian belief times the new observation's likelihood is sampled with a
//! random-walk Metropolis-Hastings chain, and the draws are projected back to
//! a Gaussian by matching mean and (unbiased) covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{self, Response, Trial};

/// Multivariate Gaussian `N(mean, cov)`.
///
/// A belief over `phi` has dimension `2D` with `alpha` in the first `D`
/// entries and `gamma` in the last `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BeliefRepr", into = "BeliefRepr")]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct BeliefRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<BeliefRepr> for GaussianBelief {
    type Error = Error;
    fn try_from(r: BeliefRepr) -> Result<Self> {
        let n = r.mean.len();
        if r.cov.len() != n || r.cov.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: r.cov.len() });
        }
        GaussianBelief::new(
            DVector::from_vec(r.mean),
            DMatrix::from_fn(n, n, |i, j| r.cov[i][j]),
        )
    }
}

impl From<GaussianBelief> for BeliefRepr {
    fn from(b: GaussianBelief) -> Self {
        BeliefRepr {
            mean: b.mean.iter().copied().collect(),
            cov: b.cov_rows(),
        }
    }
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Domain("belief dimension must be at least 1".into()));
        }
        check_dim(n, cov.nrows())?;
        check_dim(n, cov.ncols())?;
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("belief moments must be finite".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Domain("covariance is not symmetric".into()));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// Independent prior with the given means and per-coordinate variances.
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), variances.len())?;
        if variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("prior variances must be positive".into()));
        }
        Self::new(DVector::from_vec(mean), DMatrix::from_diagonal(&DVector::from_vec(variances)))
    }

    /// Standard prior over `phi` for `dims` preference parameters: zero mean,
    /// identity covariance.
    pub fn standard(dims: usize) -> Result<Self> {
        Self::diagonal(vec![0.0; 2 * dims], vec![1.0; 2 * dims])
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Total dimension of the Gaussian.
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Number of preference parameters `D` when this is a belief over `phi`.
    pub fn param_dims(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn cov_rows(&self) -> Vec<Vec<f64>> {
        self.cov.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cov
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        robust_cholesky(&self.cov).ok_or(Error::SingularMatrix("belief covariance"))
    }

    pub fn sampler(&self) -> Result<GaussianSampler> {
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            chol: self.cholesky()?,
        })
    }

    /// Log density up to the normalizing constant.
    pub fn log_density_unnormalized(&self, x: &DVector<f64>) -> Result<f64> {
        let l = self.cholesky()?;
        Ok(whitened_sq_norm(&l, &(x - &self.mean)) * -0.5)
    }
}

/// Draws from a Gaussian through a precomputed Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }

    /// Writes a draw into `out` without allocating.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let n = self.mean.len();
        for v in z.iter_mut().take(n) {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..n {
            let mut acc = self.mean[i];
            for j in 0..=i {
                acc += self.chol[(i, j)] * z[j];
            }
            out[i] = acc;
        }
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }
}

/// Lower Cholesky factor, retrying with growing diagonal jitter when the
/// matrix is only positive semi-definite in floating point.
pub(crate) fn robust_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Some(c.l());
    }
    let scale = sym.diagonal().iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
    let mut jitter = scale * 1e-12;
    for _ in 0..12 {
        let mut j = sym.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += jitter;
        }
        if let Some(c) = j.cholesky() {
            return Some(c.l());
        }
        jitter *= 10.0;
    }
    None
}

fn whitened_sq_norm(l: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    l.solve_lower_triangular(v)
        .map(|w| w.norm_squared())
        .unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MhConfig {
    /// Retained draws `M`.
    pub m_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Random-walk proposal covariance is `step_scale^2` times the prior-belief covariance.
    pub step_scale: f64,
    /// Diagonal jitter added by moment matching.
    pub jitter: f64,
    /// Condition on the whole history against the initial prior instead of
    /// only the newest observation. Diagnostic mode.
    pub full_history: bool,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            m_samples: 100_000,
            burn_in: 1_000,
            thin: 1,
            step_scale: 1.3,
            jitter: 1e-6,
            full_history: false,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_samples < 2 {
            return Err(Error::InvalidConfig("m_samples must be at least 2".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::InvalidConfig("step_scale must be positive".into()));
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidConfig("jitter must be positive".into()));
        }
        Ok(())
    }
}

/// Acceptance rates outside this band attach a [`ConvergenceWarning`].
pub const ACCEPTANCE_BAND: (f64, f64) = (0.1, 0.6);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceWarning {
    pub acceptance_rate: f64,
}

impl std::fmt::Display for ConvergenceWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "MH acceptance rate {:.3} outside [{}, {}]",
            self.acceptance_rate, ACCEPTANCE_BAND.0, ACCEPTANCE_BAND.1
        )
    }
}

/// One proposal of the chain, kept when tracing is requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhStep {
    pub log_current: f64,
    pub log_proposed: f64,
    pub accepted: bool,
}

/// Post burn-in, thinned chain states.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    pub draws: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
    pub warning: Option<ConvergenceWarning>,
    pub trace: Vec<MhStep>,
}

impl PosteriorSample {
    pub fn from_draws(draws: Vec<DVector<f64>>) -> Self {
        Self {
            draws,
            acceptance_rate: f64::NAN,
            warning: None,
            trace: Vec::new(),
        }
    }
}

/// Random-walk Metropolis-Hastings on an arbitrary log target.
///
/// The chain starts at `start`; proposals are `x + step_scale * L z` with `L`
/// the supplied Cholesky factor.
pub fn run_chain<R, F>(
    start: &DVector<f64>,
    proposal_chol: &DMatrix<f64>,
    cfg: &MhConfig,
    record_trace: bool,
    rng: &mut R,
    log_target: F,
) -> Result<PosteriorSample>
where
    R: Rng + ?Sized,
    F: Fn(&DVector<f64>) -> f64,
{
    cfg.validate()?;
    let n = start.len();
    let total = cfg.burn_in + cfg.m_samples * cfg.thin;
    let mut current = start.clone();
    let mut log_current = log_target(&current);
    if !log_current.is_finite() {
        return Err(Error::Domain("log target is not finite at the chain start".into()));
    }
    let mut draws = Vec::with_capacity(cfg.m_samples);
    let mut trace = Vec::with_capacity(if record_trace { total } else { 0 });
    let mut accepted = 0usize;

    for it in 0..total {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let proposal = &current + proposal_chol * z * cfg.step_scale;
        let log_proposed = log_target(&proposal);
        // symmetric proposal: accept with min(1, g'/g)
        let log_ratio = log_proposed - log_current;
        let u: f64 = rng.random();
        let accept = log_ratio >= 0.0 || u.ln() < log_ratio;
        if record_trace {
            trace.push(MhStep { log_current, log_proposed, accepted: accept });
        }
        if accept {
            current = proposal;
            log_current = log_proposed;
            accepted += 1;
        }
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.push(current.clone());
        }
    }

    let acceptance_rate = accepted as f64 / total.max(1) as f64;
    let warning = (!(ACCEPTANCE_BAND.0..=ACCEPTANCE_BAND.1).contains(&acceptance_rate))
        .then_some(ConvergenceWarning { acceptance_rate });
    Ok(PosteriorSample { draws, acceptance_rate, warning, trace })
}

fn check_trial(prior: &GaussianBelief, trial: &Trial) -> Result<()> {
    if prior.len() % 2 != 0 {
        return Err(Error::Domain("belief over phi must have even dimension".into()));
    }
    check_dim(prior.param_dims(), trial.dims())
}

/// Sample `N(phi | prior) * P(response | phi, trial)`.
pub fn mh_sample<R: Rng + ?Sized>(
    prior: &GaussianBelief,
    trial: &Trial,
    response: Response,
    cfg: &MhConfig,
    rng: &mut R,
) -> Result<PosteriorSample> {
    mh_sample_traced(prior, trial, response, cfg, false, rng)
}

pub fn mh_sample_traced<R: Rng + ?Sized>(
    prior: &GaussianBelief,
    trial: &Trial,
    response: Response,
    cfg: &MhConfig,
    record_trace: bool,
    rng: &mut R,
) -> Result<PosteriorSample> {
    check_trial(prior, trial)?;
    let l = prior.cholesky()?;
    let mean = prior.mean.clone();
    let target = |phi: &DVector<f64>| {
        -0.5 * whitened_sq_norm(&l, &(phi - &mean))
            + model::observation_log_prob_stacked(trial, response, phi.as_slice())
    };
    run_chain(&prior.mean, &l, cfg, record_trace, rng, target)
}

/// Sample the exact posterior `N(phi | base_prior) * prod_l P(r_l | phi, trial_l)`,
/// using the current belief only to start and shape the chain.
pub fn mh_sample_history<R: Rng + ?Sized>(
    base_prior: &GaussianBelief,
    current: &GaussianBelief,
    history: &[(Trial, Response)],
    cfg: &MhConfig,
    rng: &mut R,
) -> Result<PosteriorSample> {
    for (t, _) in history {
        check_trial(base_prior, t)?;
    }
    check_dim(base_prior.len(), current.len())?;
    let l0 = base_prior.cholesky()?;
    let shape = current.cholesky()?;
    let mean0 = base_prior.mean.clone();
    let target = |phi: &DVector<f64>| {
        -0.5 * whitened_sq_norm(&l0, &(phi - &mean0))
            + history
                .iter()
                .map(|(t, r)| model::observation_log_prob_stacked(t, *r, phi.as_slice()))
                .sum::<f64>()
    };
    run_chain(&current.mean, &shape, cfg, false, rng, target)
}

/// Sample mean and unbiased covariance of the draws, plus `jitter * I`.
pub fn moment_match(sample: &PosteriorSample, jitter: f64) -> Result<GaussianBelief> {
    let m = sample.draws.len();
    if m < 2 {
        return Err(Error::InsufficientSamples(m));
    }
    let n = sample.draws[0].len();
    let mut mean = DVector::zeros(n);
    for d in &sample.draws {
        check_dim(n, d.len())?;
        mean += d;
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(n, n);
    for d in &sample.draws {
        let c = d - &mean;
        cov.syger(1.0, &c, &c, 1.0);
    }
    cov /= (m - 1) as f64;
    cov.fill_upper_triangle_with_lower_triangle();
    for i in 0..n {
        cov[(i, i)] += jitter;
    }
    GaussianBelief::new(mean, cov)
}

/// Leading `D x D` block: the belief over `alpha`.
pub fn marginal_alpha(b: &GaussianBelief) -> GaussianBelief {
    let d = b.param_dims().max(1);
    GaussianBelief {
        mean: b.mean.rows(0, d).into_owned(),
        cov: b.cov.view((0, 0), (d, d)).into_owned(),
    }
}

/// Gaussian conditional of `gamma` given `alpha` with the gain and Schur
/// complement precomputed, so repeated conditioning is a matrix-vector product.
#[derive(Debug, Clone)]
pub struct GammaConditional {
    mu_alpha: DVector<f64>,
    mu_gamma: DVector<f64>,
    gain: DMatrix<f64>,
    cov: DMatrix<f64>,
}

impl GammaConditional {
    pub fn new(b: &GaussianBelief) -> Result<Self> {
        let d = b.param_dims();
        if d == 0 || b.len() != 2 * d {
            return Err(Error::Domain("belief over phi must have dimension 2D".into()));
        }
        let s_aa = b.cov.view((0, 0), (d, d)).into_owned();
        let s_ga = b.cov.view((d, 0), (d, d)).into_owned();
        let s_gg = b.cov.view((d, d), (d, d)).into_owned();
        let chol = s_aa.cholesky().ok_or(Error::SingularMatrix("alpha block"))?;
        // gain = S_ga S_aa^{-1}, computed as (S_aa^{-1} S_ag)^T
        let gain = chol.solve(&s_ga.transpose()).transpose();
        let mut cov = &s_gg - &gain * s_ga.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self {
            mu_alpha: b.mean.rows(0, d).into_owned(),
            mu_gamma: b.mean.rows(d, d).into_owned(),
            gain,
            cov,
        })
    }

    pub fn mean_at(&self, alpha: &DVector<f64>) -> DVector<f64> {
        &self.mu_gamma + &self.gain * (alpha - &self.mu_alpha)
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn at(&self, alpha: &DVector<f64>) -> GaussianBelief {
        GaussianBelief {
            mean: self.mean_at(alpha),
            cov: self.cov.clone(),
        }
    }
}

/// `gamma | alpha` under the joint Gaussian belief.
pub fn conditional_gamma(b: &GaussianBelief, alpha: &[f64]) -> Result<GaussianBelief> {
    check_dim(b.param_dims(), alpha.len())?;
    Ok(GammaConditional::new(b)?.at(&DVector::from_column_slice(alpha)))
}

/// One ADF step: sample the one-observation posterior and project to a Gaussian.
pub fn update<R: Rng + ?Sized>(
    b: &GaussianBelief,
    trial: &Trial,
    response: Response,
    cfg: &MhConfig,
    rng: &mut R,
) -> Result<GaussianBelief> {
    let sample = mh_sample(b, trial, response, cfg, rng)?;
    if let Some(w) = sample.warning {
        tracing::debug!("{w}");
    }
    moment_match(&sample, cfg.jitter)
}

/// Refit against the whole history from the initial prior.
pub fn update_full_history<R: Rng + ?Sized>(
    base_prior: &GaussianBelief,
    current: &GaussianBelief,
    history: &[(Trial, Response)],
    cfg: &MhConfig,
    rng: &mut R,
) -> Result<GaussianBelief> {
    let sample = mh_sample_history(base_prior, current, history, cfg, rng)?;
    moment_match(&sample, cfg.jitter)
}
