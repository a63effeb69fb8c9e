//! VTBench: a benchmark toolkit for chart-based multimodal time-series
//! classification.
//!
//! The pipeline converts univariate series into deterministic chart raster
//! images (line / area / bar / scatter), trains CNN encoders over the charts
//! (optionally fused with a raw-sequence numeric branch), and reproduces the
//! benchmark's ablation grids and nonparametric statistical analyses.
//!
//! Module map:
//! - [`dataset`] — UCR archive loading, label remapping, stratified splits
//! - [`chart`] — deterministic rasterizer and the on-disk chart cache
//! - [`tensor`] / [`nn`] — dense f32 tensors, layers with hand-written
//!   backward passes, Adam, gradient checking
//! - [`encoders`] / [`fusion`] / [`model`] — branch encoders, fusion
//!   strategies and the assembled classifier
//! - [`train`] / [`metrics`] — the training protocol and split metrics
//! - [`runner`] — sweep expansion, resumable execution, report tables
//! - [`stats`] — Wilcoxon signed-rank, Cliff's delta, CIs, rank tables
//! - [`config`] — the TOML config file schema shared by the CLI

pub mod chart;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod runner;
pub mod selfcheck;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
