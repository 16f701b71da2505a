//! Simulated-user experiments: single seeded runs and multi-run benchmarks,
//! with CSV and NDJSON emitters.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::model::{sample_response, UserParams};
use crate::normal;
use crate::session::{rmse, Session, SessionConfig, Status};

/// Bumped whenever a CSV column is added, removed or renamed.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Range of simulated optima in the original domain.
pub const TRUTH_THETA_RANGE: (f64, f64) = (0.1, 0.9);
/// Simulated sensitivities are `exp(u)` with `u` uniform in this range.
pub const TRUTH_LOG_LAMBDA_RANGE: (f64, f64) = (-1.0, 1.0);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub step: usize,
    /// Proposals in the original `[0, 1]^D` domain.
    pub x_ref: Vec<f64>,
    pub x_alt: Vec<f64>,
    pub response: u8,
    /// `None` for the initial random trial.
    pub mi_bits: Option<f64>,
    /// Running RSU over designed trials answered so far.
    pub rsu: Option<f64>,
    /// Estimate before absorbing this step's response.
    pub theta_pre: Vec<f64>,
    /// Estimate after absorbing this step's response.
    pub theta_est: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma_trace: f64,
    pub rmse_pre: Option<f64>,
    pub rmse: Option<f64>,
    /// Wall time of the interaction; excluded from equality and serialization.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl PartialEq for RunRow {
    fn eq(&self, o: &Self) -> bool {
        self.step == o.step
            && self.x_ref == o.x_ref
            && self.x_alt == o.x_alt
            && self.response == o.response
            && self.mi_bits == o.mi_bits
            && self.rsu == o.rsu
            && self.theta_pre == o.theta_pre
            && self.theta_est == o.theta_est
            && self.mu == o.mu
            && self.sigma_trace == o.sigma_trace
            && self.rmse_pre == o.rmse_pre
            && self.rmse == o.rmse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub dims: usize,
    pub truth: Option<UserParams>,
    pub rows: Vec<RunRow>,
    pub status: Status,
    pub final_theta: Vec<f64>,
    /// Mean MI over designed trials.
    pub final_rsu: Option<f64>,
}

impl RunRecord {
    pub fn final_rmse(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.rmse)
    }

    pub fn step_times(&self) -> Vec<Duration> {
        self.rows.iter().map(|r| r.elapsed).collect()
    }

    pub fn csv_header(&self) -> Vec<String> {
        run_csv_header(self.dims)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.step.to_string(),
                r.response.to_string(),
                opt(r.mi_bits),
                opt(r.rsu),
                fmt(r.sigma_trace),
                opt(r.rmse_pre),
                opt(r.rmse),
            ];
            for v in [&r.x_ref, &r.x_alt, &r.theta_pre, &r.theta_est, &r.mu] {
                rec.extend(v.iter().map(|x| fmt(*x)));
            }
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Column names for a run with `dims` parameters.
pub fn run_csv_header(dims: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "response", "mi_bits", "rsu", "sigma_trace", "rmse_pre", "rmse"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["x_ref", "x_alt", "theta_pre", "theta_est"] {
        h.extend((1..=dims).map(|d| format!("{prefix}_{d}")));
    }
    h.extend((1..=dims).map(|d| format!("mu_alpha_{d}")));
    h.extend((1..=dims).map(|d| format!("mu_gamma_{d}")));
    h
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// Drive a session against a simulated user with known parameters.
pub fn run_simulation(truth: &UserParams, config: &SessionConfig, seed: u64) -> Result<RunRecord> {
    truth.validate()?;
    check_dim(config.dims, truth.dims())?;
    let phi_true = truth.to_transformed()?;
    let mut session = Session::new(config.clone(), seed)?;
    let mut user_rng = user_rng(seed);
    let d = truth.dims();
    let mut rows = Vec::new();

    while let Some(trial) = session.state.current_trial.clone() {
        let started = Instant::now();
        let mi_bits = session.state.current_mi;
        let theta_pre = alpha_theta(&session, d);
        let response = sample_response(&trial, &phi_true, &mut user_rng);
        session.submit(response)?;
        let elapsed = started.elapsed();

        let theta_est = alpha_theta(&session, d);
        let answered: Vec<f64> = session.state.history.iter().filter_map(|h| h.mi_bits).collect();
        let (x_ref, x_alt) = trial.to_original();
        rows.push(RunRow {
            step: session.state.responses(),
            x_ref,
            x_alt,
            response: response.bit(),
            mi_bits,
            rsu: (!answered.is_empty()).then(|| answered.iter().sum::<f64>() / answered.len() as f64),
            rmse_pre: Some(rmse(&theta_pre, &truth.theta)?),
            rmse: Some(rmse(&theta_est, &truth.theta)?),
            theta_pre,
            theta_est,
            mu: session.state.belief.mean().iter().copied().collect(),
            sigma_trace: session.state.belief.trace(),
            elapsed,
        });
        tracing::debug!(step = rows.len(), ms = elapsed.as_secs_f64() * 1e3, "interaction");
    }

    let final_theta = alpha_theta(&session, d);
    Ok(RunRecord {
        seed,
        dims: d,
        truth: Some(truth.clone()),
        rows,
        status: session.state.status,
        final_rsu: session.state.rsu().ok(),
        final_theta,
    })
}

fn alpha_theta(s: &Session, d: usize) -> Vec<f64> {
    s.state.belief.mean().iter().take(d).map(|&a| normal::cdf(a)).collect()
}

fn user_rng(seed: u64) -> ChaCha8Rng {
    // disjoint from the session's streams
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Draw a simulated user: optimum uniform in [`TRUTH_THETA_RANGE`], sensitivity
/// log-uniform over [`TRUTH_LOG_LAMBDA_RANGE`].
pub fn random_truth<R: Rng + ?Sized>(dims: usize, rng: &mut R) -> UserParams {
    UserParams {
        theta: (0..dims)
            .map(|_| rng.random_range(TRUTH_THETA_RANGE.0..TRUTH_THETA_RANGE.1))
            .collect(),
        lambda: (0..dims)
            .map(|_| rng.random_range(TRUTH_LOG_LAMBDA_RANGE.0..TRUTH_LOG_LAMBDA_RANGE.1).exp())
            .collect(),
    }
}

/// Per-step aggregate over runs: median and the 15.87 / 84.13 percentile band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: usize,
    pub runs: usize,
    pub rmse_median: f64,
    pub rmse_lo: f64,
    pub rmse_hi: f64,
    /// Number of runs with a designed trial at this step.
    pub mi_runs: usize,
    pub mi_median: Option<f64>,
    pub mi_lo: Option<f64>,
    pub mi_hi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub rows: Vec<AggregateRow>,
    pub runs: Vec<RunRecord>,
}

pub const AGGREGATE_CSV_HEADER: [&str; 9] = [
    "step", "runs", "rmse_median", "rmse_lo", "rmse_hi", "mi_runs", "mi_median", "mi_lo", "mi_hi",
];

const SIGMA_LO: f64 = 0.158_655_253_931_457;
const SIGMA_HI: f64 = 0.841_344_746_068_543;

impl Benchmark {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(AGGREGATE_CSV_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.step.to_string(),
                r.runs.to_string(),
                fmt(r.rmse_median),
                fmt(r.rmse_lo),
                fmt(r.rmse_hi),
                r.mi_runs.to_string(),
                opt(r.mi_median),
                opt(r.mi_lo),
                opt(r.mi_hi),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Median over steps `from..=to` of the per-step median MI.
    pub fn median_mi_over(&self, from: usize, to: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| (from..=to).contains(&r.step))
            .filter_map(|r| r.mi_median)
            .collect();
        (!v.is_empty()).then(|| quantile(&v, 0.5))
    }
}

/// Seed of the `i`-th run of a benchmark.
pub fn run_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng.random()
}

/// `t_runs` independent simulations with fresh random truths, aggregated by step.
pub fn benchmark(t_runs: usize, config: &SessionConfig, seed: u64) -> Result<Benchmark> {
    let runs = (0..t_runs)
        .into_par_iter()
        .map(|i| {
            let s = run_seed(seed, i);
            let truth = random_truth(config.dims, &mut ChaCha8Rng::seed_from_u64(s));
            run_simulation(&truth, config, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark { rows: aggregate(&runs), runs })
}

pub fn aggregate(runs: &[RunRecord]) -> Vec<AggregateRow> {
    let steps = runs.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    (1..=steps)
        .map(|step| {
            let at: Vec<&RunRow> = runs.iter().filter_map(|r| r.rows.get(step - 1)).collect();
            let rmse: Vec<f64> = at.iter().filter_map(|r| r.rmse).collect();
            let mi: Vec<f64> = at.iter().filter_map(|r| r.mi_bits).collect();
            let q = |v: &[f64], p| (!v.is_empty()).then(|| quantile(v, p));
            AggregateRow {
                step,
                runs: at.len(),
                rmse_median: q(&rmse, 0.5).unwrap_or(f64::NAN),
                rmse_lo: q(&rmse, SIGMA_LO).unwrap_or(f64::NAN),
                rmse_hi: q(&rmse, SIGMA_HI).unwrap_or(f64::NAN),
                mi_runs: mi.len(),
                mi_median: q(&mi, 0.5),
                mi_lo: q(&mi, SIGMA_LO),
                mi_hi: q(&mi, SIGMA_HI),
            }
        })
        .collect()
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
