//! Region classification from WiFi RSSI fingerprints.
//!
//! Fingerprints become nodes of a k-nearest-neighbor graph; a two-block
//! dynamic edge-convolution network ([`model`]) labels every node with a
//! region, trained only on the labels its training mask exposes. The crate
//! also carries the comparison baselines ([`baselines`]) and the experiment
//! harness ([`harness`]) behind the `indoorgnn` command-line tool.

pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod harness;
pub mod knn;
pub mod matrix;
pub mod model;
