//! Detection of phase transitions in autoregressive generative models.
//!
//! A control parameter (an integer in the prompt, the sampling temperature, or
//! a training checkpoint) is scanned over a uniform grid. At every midpoint the
//! samples generated on the `L` grid points to either side are pooled, and a
//! g-dissimilarity between the two pooled distributions is estimated from the
//! exact sequence probabilities the model assigns. Local maxima of the
//! resulting curve mark candidate transitions.
//!
//! - [`divergence`]: f-divergences, g-dissimilarities and exact kernels.
//! - [`models`]: the scored-generation interface, tabular toy models and the
//!   bridge client.
//! - [`scan`]: grids, the two-stage estimator, peaks and outlier checks.
//! - [`thermo`]: energy, mean energy and heat capacity along temperature.
//! - [`weights`]: histogram-based dissimilarity over checkpoint weights.

pub mod divergence;
pub mod models;
pub mod numeric;
pub mod scan;
pub mod thermo;
pub mod weights;
