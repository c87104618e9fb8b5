//! Cost model, partition-point optimizer and evaluation metrics for
//! split-inference cross-view localization over space-air-ground links.
//!
//! * [`netmodel`]: devices, Shannon-rate links, channel sampling.
//! * [`nnprofile`]: per-layer FLOPs and feature sizes, partition candidates.
//! * [`trico`]: communication/computation/confidentiality costs and the effect
//!   function, with an exhaustive oracle.
//! * [`rlopt`]: learning agents that search for partition decisions.
//! * [`retrieval`]: cosine retrieval, localization and Recall@K / AP.
//! * [`privmetrics`]: SSIM, histogram KL and confidentiality tables.

pub mod netmodel;
pub mod nnprofile;
pub mod trico;
pub mod privmetrics;
pub mod retrieval;
pub mod rlopt;
