//! Classical estimators and the exact-likelihood validation oracle:
//! Patlak graphical analysis, NNLS basis-library lp-ntPET fits with BIC
//! model selection, bounded nonlinear 2TCM least squares, and a tensor-grid
//! exact-likelihood posterior used to validate the ABC engine.
pub mod basis;
pub mod grid;
pub mod nnls;
pub mod patlak;
pub mod twotcm_fit;

pub use basis::{bic_select, nnls_lpntpet_fit, BasisGrids, BasisLibrary, FitResult, ModelChoice};
pub use grid::{grid_posterior, GridAxis, GridPosterior};
pub use nnls::nnls_solve;
pub use patlak::{patlak_ki, PatlakFit};
pub use twotcm_fit::{nnls_2tcm_fit, TwoTcmFit, TwoTcmFitConfig};
