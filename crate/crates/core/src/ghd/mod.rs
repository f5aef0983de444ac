//! Generalized-hydrodynamics kernels: equilibrium densities, the log-kernel
//! dressing operator and the quantities built from it.

pub mod interp;
pub mod kernels;
pub mod linalg;
pub mod profiles;
pub mod quadrature;

pub use interp::MonotoneCubic;
pub use kernels::{
    equilibrium_profiles, log_matrix, DressedKernel, DressedProfiles, EquilibriumProfiles, FineGrid, GhdConfig,
    GhdKernels, QuadratureGrid,
};
pub use linalg::Lu;
pub use profiles::{densities_at, mathfrak_f, rho_beta_at};
pub use quadrature::{GaussLegendre, Mat, Panel, PanelSet};
