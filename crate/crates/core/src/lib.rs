//! Quantum measurement modeled as unitary entanglement between an object and
//! pointer registers, with an explicit collapse mode for contrast.
//!
//! - [`hilbert`]: labeled tensor-product layouts, kets, density operators,
//!   partial trace, purity, fidelity and Schmidt rank.
//! - [`measurement`]: pointer-coupling unitaries, collapse draws, Born
//!   marginals and sub-ensemble conditioning.
//! - [`scenarios`]: Stern-Gerlach split and recombination, which-path records,
//!   Wigner's friend and Schrödinger's cat as executable protocols.
//! - [`wavepacket`]: free Gaussian packets on a periodic grid with spectral
//!   propagation and position/velocity statistics.
//! - [`ensemble`]: seeded Monte Carlo trials, post-selection and
//!   unitary-versus-collapse comparison reports.
//! - [`config`] and [`cli`]: the batch front end.

pub mod cli;
pub mod config;
pub mod ensemble;
pub mod hilbert;
pub mod measurement;
pub mod scenarios;
pub mod wavepacket;
