//! Mixture-of-Gaussian deep evidential regression.
//!
//! A small fully-connected network predicts, for every input, the location
//! `gamma` shared by all components, per-component Normal-Inverse-Gamma
//! hyperparameters `(nu_k, alpha_k, beta_k)` and soft responsibilities `p_k`.
//! Training alternates an expectation step (responsibilities) with gradient
//! steps on the responsibility-weighted Student-t loss plus an evidence
//! penalty. Prediction, per-component aleatoric variance and epistemic
//! variance all come out in closed form.

pub mod checkpoint;
pub mod classic;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod evidential;
pub mod gradcheck;
pub mod net;
pub mod objective;
pub mod optim;
pub mod oracle;
pub mod special;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
