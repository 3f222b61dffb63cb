//! Numerical laboratory for the kinetic Vlasov-Poisson system between two
//! diffusely reflecting walls with a transverse magnetic field, its
//! auxiliary cell problem and diffusivity tensor, and the limiting
//! spherical-harmonics-expansion (SHE) diffusion model.

pub mod auxiliary;
pub mod azimuth;
pub mod config;
pub mod error;
pub mod field;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod kinetic;
pub mod quadrature;
pub mod she;
pub mod sphere;
pub mod tensor;

pub use error::{Error, Result};
pub use sphere::{
    coarea_integrate, quad_sphere, rotate_about_x, velocity_derivatives, EnergyGrid, Hemisphere,
    SphereFunction, SphereGrid,
};
pub use kernel::{apply_mirror, check_kernel, BoundaryKernel, KernelKind, KernelReport, Trace, Wall};
pub use auxiliary::{chi_components, solve_auxiliary, AuxiliaryProblem, AuxiliarySolution, BoundarySolve};
pub use field::{charge_density, solve_poisson, ElectricField, FieldState, ScalarProfile, XiGrid};
pub use kinetic::{
    estimate_moments, relax_step, sample_initial, sample_initial_stratified, step_kinetic, KineticSetup, MomentFields, Particle,
    ParticleEnsemble, ReducedState,
};
pub use tensor::{assemble_d, check_positivity, msd_oracle, tabulate_d, DiffTensor, DiffTensorTable, MsdEstimate};
pub use she::{run_she, DosChoice, FieldMode, SheCurrent, SheRunReport, SheState};
pub use config::{load_config, Config};
