//! Uncalibrated photometric stereo: light estimation from image stacks,
//! dataset ideality screening and surface recovery.

pub mod error;
pub mod integrate;
mod linalg;
pub mod linear;
pub mod model;
pub mod nonlinear;
pub mod pipeline;
pub mod screening;
pub mod synth;

pub use error::{PsError, Result};
pub use integrate::{gradients_from_normals, integrate_poisson, relative_error_inf};
pub use linear::{
    align_lights, apply_alignment, build_h, cholesky_factor, estimate_lights_linear, rank3_factor,
    solve_gram, Alignment, GramCandidate, LinearEstimate, Rank3Factorization,
};
pub use model::{
    grid_coordinates, normals_from_gradient, normals_from_lights, render_lambertian, DataMatrix,
    GradientField, GridSpec, LightSet, NormalAlbedoField, RenderOptions, SurfaceGrid,
};
pub use nonlinear::{eta_indicator, gauss_newton_solve, jacobian, residual, GnResult, TriangularParams};
pub use pipeline::{estimate_lights, reconstruct, LightEstimate, LightMethod, Reconstruction};
pub use screening::{
    compare_methods, indicators, screen_linear, screen_nonlinear, IdealityReport, Indicators, RemovalStep,
    ScreeningMethod,
};
pub use synth::{
    builtin_surface, default_nine_lights, generate_dataset, AlbedoPattern, Corruption, LightConfig,
    SurfaceKind, SyntheticDataset, SyntheticScenario,
};
