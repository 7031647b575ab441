//! Quantitative lung-maturity pipeline for diffusion-weighted MRI.
//!
//! - [`grid`]: volumes, masks and 4D series on a shared `(z, y, x)` grid
//! - [`nifti`]: NIfTI-1 and `.bval` I/O
//! - [`lm`]: bounded Levenberg–Marquardt solver
//! - [`ivim`]: two-step voxel-wise IVIM fitting
//! - [`mask_ops`]: OLP/AVG/LC mask fusion, Dice and Hausdorff distance
//! - [`stats`]: CV, entropy, t / Mann–Whitney tests, regression
//! - [`fgr`]: observed-to-expected lung volume and ROC/Youden classification
//! - [`phantom`]: synthetic series with known ground truth
//! - [`report`]: subject summaries and cohort comparison tables
//!
//! Voxel fits run on rayon when the default `parallel` feature is enabled.

pub mod error;
pub mod fgr;
pub mod grid;
pub mod ivim;
pub mod lm;
pub mod mask_ops;
pub mod nifti;
pub mod phantom;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{
    average_by_bvalue, mask_volume_ml, BinaryMask, Dims, DwiSeries, Grid, IvimMaps, Parameter,
    Volume3D, VoxelSpacing, SENTINEL,
};
