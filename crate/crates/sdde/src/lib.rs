//! Truncated Euler–Maruyama (TEM) schemes for stochastic delay differential
//! equations with a single constant lag, plus the Monte Carlo machinery needed
//! to measure what the schemes promise: strong convergence rates and
//! exponential stability.
//!
//! The equations have the form
//!
//! ```text
//! dx(t) = f(x(t), x(t−τ)) dt + g(x(t), x(t−τ)) dW(t),   t ≥ 0,
//! x(t)  = ξ(t),                                         t ∈ [−τ, 0],
//! ```
//!
//! with drift `f: ℝᵈ×ℝᵈ → ℝᵈ`, diffusion `g: ℝᵈ×ℝᵈ → ℝᵈˣᵐ` driven by an
//! m-dimensional Brownian motion, and a deterministic initial segment ξ.
//! Coefficients may grow super-linearly (polynomially); the classic explicit
//! Euler–Maruyama scheme can then blow up, and the TEM scheme repairs it by
//! clamping each post-step state into a ball whose radius grows as the step
//! size shrinks.
//!
//! Module layout:
//!
//! * [`model`] — coefficient functions, initial segments, and a small catalog
//!   of built-in test systems (two cubic benchmark systems and an exactly
//!   solvable linear-decay oracle).
//! * [`truncation`] — growth profiles Φ, the step-size budget h(Δ) = KΔ^(−μ),
//!   and the radial clamp Υ that defines the scheme.
//! * [`brownian`] — seeded, exactly aggregatable Brownian increment lattices,
//!   so every step size in a study shares one underlying Brownian path.
//! * [`scheme`] — the steppers (generic TEM, stability TEM, classic EM), the
//!   delay-history ring buffer, path simulation, and the continuous-time
//!   interpolant used in error analysis.
//! * [`analysis`] — Monte Carlo studies (strong error, moment bounds,
//!   mean-square decay, almost-sure exponents) and the scalar solvers for the
//!   stability rate γ and the admissible step bound.
//!
//! Everything is deterministic given a master seed: per-path randomness comes
//! from independent counter-derived streams, and all parallel reductions run
//! in a fixed order, so results are bit-identical across thread counts.

pub mod analysis;
pub mod brownian;
pub mod model;
pub mod scheme;
pub mod truncation;

mod util;

pub use analysis::{
    as_exponent_study, gamma_feasibility, gamma_solve, max_stable_stepsize, moment_probe,
    ms_decay_study, rate_regress, stability_study, strong_error_study, AnalysisError,
    AsExponentReport, DecayFit, MomentReport, MsDecayReport, RateFit, StabilityReport,
    StrongErrorReport, StrongErrorRow,
};
pub use brownian::{BrownianError, BrownianLattice};
pub use model::{
    builtin_example_1, builtin_example_2, catalog, find_model, oracle_linear_delay_model,
    ModelCatalogEntry, ModelError, SddeModel, StabilityParams,
};
pub use scheme::{
    em_step, interpolate_aux, make_grid, simulate, stability_tem_step, tem_step, PathTrajectory,
    SchemeError, SchemeKind, SimulationGrid, TemStep,
};
pub use truncation::{
    polynomial_profile, quadratic_stability_profile, stability_profile,
    stability_profile_with_inverse, truncate, PolynomialGrowth, ProfileKind, TruncationError,
    TruncationProfile,
};
