//! Multifidelity digital-twin engine for flexible net cage structural response.
//!
//! The crate learns the structural response of a floating net cage (mooring
//! line loads, sensor-point displacements, full deformation field) to ocean
//! currents by fusing cheap low-fidelity simulation data with scarce
//! high-fidelity observations, and serves predictions from streamed metocean
//! records.
//!
//! Layers, bottom up:
//!
//! * [`gp`] - single-fidelity Gaussian-process regression with SE-ARD kernels
//! * [`nargp`] - nonlinear autoregressive multifidelity recursion on top of [`gp`]
//! * [`pca`] - reduced-order representation of the 963-dimensional deformation field
//! * [`sim`] - synthetic cage simulator (topology, quasi-static solve, virtual sensors)
//! * [`gcn`] - graph-convolutional deformation surrogate with built-in training
//! * [`twin`] - the deployable runtime: training, persistence, streaming prediction

pub mod dataset;
pub mod encode;
pub mod gcn;
pub mod gp;
pub mod linalg;
pub mod nargp;
pub mod optim;
pub mod pca;
pub mod sim;
pub mod twin;
