//! The learning loop: one elicitation session as a serial state machine.
//!
//! A session starts with a random trial drawn uniformly in the original
//! domain. Every response updates the belief; unless the stopping rule fires,
//! the next trial is designed and its mutual information is added to the RSU
//! accumulator. RSU is the mean MI over designed trials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{design_trial, MiConfig};
use crate::error::{check_dim, Error, Result};
use crate::inference::{update, update_full_history, GaussianBelief, MhConfig};
use crate::model::{Response, TransformedParams, Trial, UserParams};
use crate::normal;

/// Initial proposals are clamped into this range before the quantile map.
pub const INIT_CLAMP: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardMode {
    /// Stop when the latest MI is at most `step * delta`.
    #[default]
    ScaledByStep,
    /// Stop when the latest MI is at most `delta`.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingRule {
    /// `0` disables the MI guard so that `max_steps` governs.
    pub delta: f64,
    pub max_steps: usize,
    pub guard: GuardMode,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            delta: 0.0,
            max_steps: 30,
            guard: GuardMode::ScaledByStep,
        }
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig("delta must be nonnegative".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// `true` once the latest trial's MI falls to the guard or `step` reaches `max_steps`.
pub fn should_stop(latest_mi: f64, step: usize, stop: &StoppingRule) -> bool {
    let threshold = match stop.guard {
        GuardMode::ScaledByStep => step as f64 * stop.delta,
        GuardMode::Plain => stop.delta,
    };
    latest_mi <= threshold || step >= stop.max_steps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingResponse,
    Converged,
    MaxStepsReached,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::AwaitingResponse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub trial: Trial,
    pub response: Response,
    /// `None` for the initial random trial.
    pub mi_bits: Option<f64>,
}

/// Prior over `phi` given as independent per-coordinate moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub alpha_mean: f64,
    pub alpha_var: f64,
    pub gamma_mean: f64,
    pub gamma_var: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            alpha_mean: 0.0,
            alpha_var: 1.0,
            gamma_mean: 0.0,
            gamma_var: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn belief(&self, dims: usize) -> Result<GaussianBelief> {
        let mean = [vec![self.alpha_mean; dims], vec![self.gamma_mean; dims]].concat();
        let var = [vec![self.alpha_var; dims], vec![self.gamma_var; dims]].concat();
        GaussianBelief::diagonal(mean, var)
    }
}

/// Everything that determines a session besides its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub dims: usize,
    pub prior: PriorSpec,
    pub mh: MhConfig,
    pub mi: MiConfig,
    pub stop: StoppingRule,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            prior: PriorSpec::default(),
            mh: MhConfig::default(),
            mi: MiConfig::default(),
            stop: StoppingRule::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::InvalidConfig("dims must be at least 1".into()));
        }
        if !(self.prior.alpha_var > 0.0 && self.prior.gamma_var > 0.0) {
            return Err(Error::InvalidConfig("prior variances must be positive".into()));
        }
        if !(self.prior.alpha_mean.is_finite() && self.prior.gamma_mean.is_finite()) {
            return Err(Error::InvalidConfig("prior means must be finite".into()));
        }
        self.mh.validate()?;
        self.mi.validate()?;
        self.stop.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub prior: GaussianBelief,
    pub belief: GaussianBelief,
    pub history: Vec<HistoryRow>,
    pub current_trial: Option<Trial>,
    /// MI of the pending trial; `None` while the initial random trial is pending.
    pub current_mi: Option<f64>,
    pub rsu_sum: f64,
    /// MI of every designed trial, in order, including a pending one.
    pub mi_trace: Vec<f64>,
    pub status: Status,
}

/// Start a session with two uniform random proposals as the first trial.
pub fn init_session<R: Rng + ?Sized>(prior: &GaussianBelief, rng: &mut R) -> Result<SessionState> {
    if prior.len() % 2 != 0 {
        return Err(Error::Domain("prior over phi must have dimension 2D".into()));
    }
    let dims = prior.param_dims();
    let mut draw = || -> Vec<f64> {
        (0..dims)
            .map(|_| normal::quantile(rng.random::<f64>().clamp(INIT_CLAMP.0, INIT_CLAMP.1)))
            .collect()
    };
    let x_ref = draw();
    let x_alt = draw();
    Ok(SessionState {
        prior: prior.clone(),
        belief: prior.clone(),
        history: Vec::new(),
        current_trial: Some(Trial { x_ref, x_alt }),
        current_mi: None,
        rsu_sum: 0.0,
        mi_trace: Vec::new(),
        status: Status::AwaitingResponse,
    })
}

impl SessionState {
    pub fn dims(&self) -> usize {
        self.belief.param_dims()
    }

    /// Index of the pending trial, or the number of answered trials once terminal.
    pub fn step(&self) -> usize {
        self.history.len() + usize::from(self.current_trial.is_some())
    }

    pub fn responses(&self) -> usize {
        self.history.len()
    }

    pub fn designed_trials(&self) -> usize {
        self.mi_trace.len()
    }

    /// Absorb a response and design the next trial. The state is untouched on error.
    pub fn submit<R: Rng + ?Sized>(
        &mut self,
        r: Response,
        mh: &MhConfig,
        mi: &MiConfig,
        stop: &StoppingRule,
        rng: &mut R,
    ) -> Result<()> {
        let trial = match (&self.current_trial, self.status) {
            (Some(t), Status::AwaitingResponse) => t.clone(),
            _ => return Err(Error::InvalidState("no trial is awaiting a response".into())),
        };
        let belief = if mh.full_history {
            let mut data: Vec<(Trial, Response)> =
                self.history.iter().map(|h| (h.trial.clone(), h.response)).collect();
            data.push((trial.clone(), r));
            update_full_history(&self.prior, &self.belief, &data, mh, rng)?
        } else {
            update(&self.belief, &trial, r, mh, rng)?
        };
        let step = self.history.len() + 1;
        // the undesigned first trial never satisfies the MI guard
        let latest_mi = self.current_mi.unwrap_or(f64::INFINITY);
        let next = if should_stop(latest_mi, step, stop) {
            None
        } else {
            Some(design_trial(&belief, &trial, r, mi, rng)?)
        };

        self.history.push(HistoryRow { trial, response: r, mi_bits: self.current_mi });
        self.belief = belief;
        match next {
            Some(scored) => {
                self.rsu_sum += scored.mi_bits;
                self.mi_trace.push(scored.mi_bits);
                self.current_mi = Some(scored.mi_bits);
                self.current_trial = Some(scored.trial);
            }
            None => {
                self.status = if step >= stop.max_steps {
                    Status::MaxStepsReached
                } else {
                    Status::Converged
                };
                self.current_mi = None;
                self.current_trial = None;
            }
        }
        Ok(())
    }

    /// Point estimate from the belief mean.
    pub fn estimate(&self) -> Result<UserParams> {
        if self.history.is_empty() {
            return Err(Error::InvalidState("no response has been absorbed yet".into()));
        }
        Ok(self.mean_params().to_user())
    }

    pub(crate) fn mean_params(&self) -> TransformedParams {
        let d = self.dims();
        let m = self.belief.mean();
        TransformedParams {
            alpha: m.rows(0, d).iter().copied().collect(),
            gamma: m.rows(d, d).iter().copied().collect(),
        }
    }

    /// Remaining system uncertainty: mean MI over designed trials.
    pub fn rsu(&self) -> Result<f64> {
        if self.mi_trace.is_empty() {
            return Err(Error::InvalidState("no trial has been designed yet".into()));
        }
        Ok(self.rsu_sum / self.mi_trace.len() as f64)
    }
}

pub fn submit_response<R: Rng + ?Sized>(
    mut s: SessionState,
    r: Response,
    mh: &MhConfig,
    mi: &MiConfig,
    stop: &StoppingRule,
    rng: &mut R,
) -> Result<SessionState> {
    s.submit(r, mh, mi, stop, rng)?;
    Ok(s)
}

pub fn estimate(s: &SessionState) -> Result<UserParams> {
    s.estimate()
}

pub fn rsu(s: &SessionState) -> Result<f64> {
    s.rsu()
}

/// Root-mean-squared error in the original domain.
pub fn rmse(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    check_dim(truth.len(), estimated.len())?;
    if truth.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let ss: f64 = estimated.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Random stream for one event of a seeded session: stream 0 initializes the
/// session, stream `k` absorbs the `k`-th response.
pub fn session_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A seeded session: configuration, seed and state. Replaying the same
/// responses against the same seed reproduces the state exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub seed: u64,
    pub config: SessionConfig,
    pub state: SessionState,
}

impl Session {
    pub fn new(config: SessionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let prior = config.prior.belief(config.dims)?;
        let state = init_session(&prior, &mut session_rng(seed, 0))?;
        Ok(Self { seed, config, state })
    }

    pub fn submit(&mut self, r: Response) -> Result<()> {
        let mut rng = session_rng(self.seed, self.state.responses() as u64 + 1);
        let c = &self.config;
        self.state.submit(r, &c.mh, &c.mi, &c.stop, &mut rng)
    }

    /// Rebuild a session from its seed and accepted responses.
    pub fn replay(config: SessionConfig, seed: u64, responses: &[Response]) -> Result<Self> {
        let mut s = Self::new(config, seed)?;
        for r in responses {
            s.submit(*r)?;
        }
        Ok(s)
    }
}
