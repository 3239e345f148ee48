//! Probabilistic forecast models trained under tail-calibration-regularized
//! proper scoring rules.
//!
//! The crate provides: forecast distributions (`dist`), proper and weighted
//! scoring rules with sample/fair variants (`scores`), calibration and
//! tail-calibration diagnostics (`calib`), composite training objectives
//! (`loss`), derivative-free and gradient optimizers (`optim`), a minimal
//! feedforward-network kernel (`nnet`), the three forecast model families
//! (`emos`, `genmodels`), the mixture-estimation simulation study
//! (`simstudy`), synthetic data and persistence (`data`), and the command
//! line front end (`cli`).

pub mod autodiff;
pub mod calib;
pub mod cli;
pub mod data;
pub mod dist;
pub mod emos;
pub mod genmodels;
pub mod metrics;
pub mod loss;
pub mod nnet;
pub mod optim;
pub mod scores;
pub mod simstudy;
pub mod special;
