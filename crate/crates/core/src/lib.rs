//! Preprocessing and decision-fusion toolkit for slice-based CT classification.
//!
//! The pipeline reads raw CT series ([`ingest`]), converts stored values to
//! Hounsfield Units and renders them under one or more HU windows
//! ([`hu_norm`]), crops the background using a morphological lung mask
//! ([`lung_seg`]), drops closed-lung slices ([`slice_filter`]) and assembles
//! train/validation manifests ([`dataset`]). Per-slice classifier outputs are
//! pooled into patient-level diagnoses by [`decision`]. [`phantom`] produces
//! synthetic volumes and prediction streams with known ground truth.

pub mod class;
pub mod dataset;
pub mod decision;
pub mod grid;
pub mod histogram;
pub mod hu_norm;
pub mod ingest;
pub mod lung_seg;
pub mod phantom;
pub mod slice_filter;

pub use class::Class;
pub use grid::Grid;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
