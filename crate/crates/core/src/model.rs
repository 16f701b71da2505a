//! User model: the unimodal preference function, the unconstrained parameter
//! transform and the probit response law for pairwise comparisons.
//!
//! All inference happens in the transformed domain `phi = (alpha, gamma)` with
//! `alpha_d = quantile(theta_d)` and `gamma_d = ln(lambda_d)`. Trial proposals
//! live in the same transformed domain. The user-noise scale and the factor
//! two from differencing two noisy values are folded into `gamma`, so a prior
//! on `gamma` is a prior on the already-scaled sensitivity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::normal;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Preference optimum and diagonal sensitivity in the original domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl UserParams {
    pub fn new(theta: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let p = Self { theta, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn dims(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.is_empty() {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        check_dim(self.theta.len(), self.lambda.len())?;
        if let Some(t) = self.theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain(format!("theta {t} outside [0, 1]")));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Domain(format!("lambda {l} must be positive and finite")));
        }
        Ok(())
    }

    /// Map to the unconstrained domain. Boundary values of theta are rejected
    /// since the quantile diverges there.
    pub fn to_transformed(&self) -> Result<TransformedParams> {
        self.validate()?;
        if let Some(t) = self.theta.iter().find(|t| **t <= 0.0 || **t >= 1.0) {
            return Err(Error::Domain(format!("theta {t} on the boundary of [0, 1]")));
        }
        Ok(TransformedParams {
            alpha: self.theta.iter().map(|&t| normal::quantile(t)).collect(),
            gamma: self.lambda.iter().map(|l| l.ln()).collect(),
        })
    }
}

/// `phi = (alpha, gamma)`, the unconstrained parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedParams {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl TransformedParams {
    pub fn new(alpha: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        check_dim(alpha.len(), gamma.len())?;
        if alpha.iter().chain(gamma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("transformed parameters must be finite".into()));
        }
        Ok(Self { alpha, gamma })
    }

    /// Split a stacked `[alpha; gamma]` vector.
    pub fn from_stacked(phi: &[f64]) -> Result<Self> {
        if phi.len() % 2 != 0 || phi.is_empty() {
            return Err(Error::Domain(format!("stacked length {} is not 2D", phi.len())));
        }
        let d = phi.len() / 2;
        Self::new(phi[..d].to_vec(), phi[d..].to_vec())
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.alpha.iter().chain(self.gamma.iter()).copied().collect()
    }

    pub fn dims(&self) -> usize {
        self.alpha.len()
    }

    pub fn to_user(&self) -> UserParams {
        UserParams {
            theta: self.alpha.iter().map(|&a| normal::cdf(a)).collect(),
            lambda: self.gamma.iter().map(|g| g.exp()).collect(),
        }
    }
}

/// A reference/alternative pair in the transformed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub x_ref: Vec<f64>,
    pub x_alt: Vec<f64>,
}

impl Trial {
    pub fn new(x_ref: Vec<f64>, x_alt: Vec<f64>) -> Result<Self> {
        check_dim(x_ref.len(), x_alt.len())?;
        if x_ref.iter().chain(x_alt.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("trial proposals must be finite".into()));
        }
        Ok(Self { x_ref, x_alt })
    }

    pub fn dims(&self) -> usize {
        self.x_ref.len()
    }

    pub fn swapped(&self) -> Self {
        Self {
            x_ref: self.x_alt.clone(),
            x_alt: self.x_ref.clone(),
        }
    }

    /// Both proposals mapped back to `[0, 1]^D`.
    pub fn to_original(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.x_ref.iter().map(|&x| normal::cdf(x)).collect(),
            self.x_alt.iter().map(|&x| normal::cdf(x)).collect(),
        )
    }
}

/// One bit of feedback: `1` means the alternative is preferred or equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Response(bool);

impl Response {
    pub const REFERENCE: Response = Response(false);
    pub const ALTERNATIVE: Response = Response(true);

    pub fn from_bit(r: u8) -> Result<Self> {
        match r {
            0 => Ok(Self(false)),
            1 => Ok(Self(true)),
            other => Err(Error::Domain(format!("response must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        self.0 as u8
    }

    pub fn prefers_alternative(self) -> bool {
        self.0
    }
}

impl TryFrom<u8> for Response {
    type Error = Error;
    fn try_from(r: u8) -> Result<Self> {
        Self::from_bit(r)
    }
}

impl From<Response> for u8 {
    fn from(r: Response) -> u8 {
        r.bit()
    }
}

/// Inverse of [`UserParams::to_transformed`].
pub fn from_transformed(phi: &TransformedParams) -> UserParams {
    phi.to_user()
}

pub fn to_transformed(u: &UserParams) -> Result<TransformedParams> {
    u.to_transformed()
}

/// `f(x; phi) = -sqrt(sum_d exp(gamma_d) (cdf(x_d) - cdf(alpha_d))^2)`.
pub fn preference_value(x: &[f64], phi: &TransformedParams) -> f64 {
    preference_value_parts(x, &phi.alpha, &phi.gamma)
}

/// [`preference_value`] on borrowed `alpha`/`gamma` slices.
pub fn preference_value_parts(x: &[f64], alpha: &[f64], gamma: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), alpha.len());
    debug_assert_eq!(x.len(), gamma.len());
    -x.iter()
        .zip(alpha)
        .zip(gamma)
        .map(|((&x, &a), &g)| {
            let diff = normal::cdf(x) - normal::cdf(a);
            g.exp() * diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// Log-probability of one observation at a stacked `[alpha; gamma]` vector.
pub fn observation_log_prob_stacked(trial: &Trial, response: Response, phi: &[f64]) -> f64 {
    let d = trial.dims();
    let (alpha, gamma) = phi.split_at(d);
    let gap = preference_value_parts(&trial.x_alt, alpha, gamma)
        - preference_value_parts(&trial.x_ref, alpha, gamma);
    let p = clamp_prob(normal::cdf(gap));
    if response.prefers_alternative() {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// `P(r = 1 | trial, phi) = cdf(f(x_alt) - f(x_ref))`.
pub fn response_probability(trial: &Trial, phi: &TransformedParams) -> f64 {
    normal::cdf(preference_value(&trial.x_alt, phi) - preference_value(&trial.x_ref, phi))
}

/// Draw a simulated user's response.
pub fn sample_response<R: Rng + ?Sized>(trial: &Trial, phi: &TransformedParams, rng: &mut R) -> Response {
    let p = response_probability(trial, phi);
    Response(rng.random::<f64>() < p)
}

/// Log-probability of a single observation with clamped probabilities.
pub fn observation_log_prob(trial: &Trial, response: Response, phi: &TransformedParams) -> f64 {
    let p = clamp_prob(response_probability(trial, phi));
    if response.prefers_alternative() {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

pub fn log_likelihood<'a, I>(history: I, phi: &TransformedParams) -> f64
where
    I: IntoIterator<Item = (&'a Trial, Response)>,
{
    history
        .into_iter()
        .map(|(t, r)| observation_log_prob(t, r, phi))
        .sum()
}
