//! Active preference learning from pairwise comparisons.
//!
//! A simulated or human user compares a reference and an alternative proposal;
//! the engine keeps a Gaussian belief over the parameters of a unimodal
//! preference function, updates it by assumed density filtering after every
//! response, and designs the next comparison by maximizing the mutual
//! information between the response and the location of the optimum. The
//! running average of that maximized information is reported as the remaining
//! system uncertainty (RSU).

pub mod error;
pub mod inference;
pub mod model;
pub mod normal;
pub mod acquisition;
pub mod service;
pub mod session;
pub mod sim;

pub use error::{Error, Result};
