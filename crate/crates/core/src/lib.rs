//! Two-phase physics-informed neural network training.
//!
//! A small dense network is first trained on a reduced loss built from a
//! subset of the boundary conditions plus the PDE residual, starting from a
//! variance-reduced initialization and on collocation points chosen where
//! several random networks have large residuals. Its first hidden layers and
//! output layer ("smart weights") are then grafted into a deeper network whose
//! remaining layers are freshly initialized, and that network is trained on the
//! complete loss. A single-phase baseline shares the same machinery.
//!
//! Modules, bottom-up:
//!
//! - [`autodiff`]: second-order input jets and a reverse-mode tape.
//! - [`network`]: architectures, initialization, grafting, batched evaluation.
//! - [`pde`]: Navier-Stokes (mixed form) and Burgers residuals, analytic fields.
//! - [`sampling`]: Latin hypercube and boundary sampling, residual-ensemble selection.
//! - [`loss`]: loss terms and their composition per benchmark and phase.
//! - [`optim`]: ADAM and L-BFGS.
//! - [`trainer`]: phase 1, phase 2 and the baseline.
//! - [`harness`]: configuration, experiment plans, checkpoints, reports.

pub mod autodiff;
mod error;
pub mod network;
pub mod optim;
pub mod harness;
pub mod loss;
pub mod pde;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
