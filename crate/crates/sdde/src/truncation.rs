//! Growth profiles and the radial truncation mapping.
//!
//! A profile packages a strictly increasing growth bound Φ: [1, ∞) → ℝ₊ that
//! dominates how fast the coefficients grow, together with its inverse and a
//! step-size exponent μ. For a step size Δ ∈ (0, 1] the scheme is allowed the
//! budget
//!
//! ```text
//! h(Δ) = K · Δ^(−μ),    K = Φ(max(‖ξ‖, 1)),
//! ```
//!
//! and every post-step state is clamped into the ball of radius Φ⁻¹(h(Δ)).
//! The budget grows as Δ shrinks, so the clamp interferes less and less on
//! finer grids; choosing K from the initial segment guarantees the ball always
//! contains the initial data.
//!
//! Two profile families are provided:
//!
//! * [`polynomial_profile`] — for coefficients with polynomial growth of
//!   degree α+1 in the state, i.e. dominated by `c₀ + 6·K₄·l^(α+2)`. The
//!   exponent μ = r(α+2) / (2(q−r)) couples the truncation strength to the
//!   moment order q the system supports and the error moment r being measured.
//! * [`stability_profile`] — for decay studies, where Φ̂ dominates the
//!   *relative* growth |f(x,y)|/(|x| + |y|∧1) and |g(x,y)|²/(|x| + |y|∧1)²;
//!   here μ must lie strictly below ½.
//!
//! Custom profiles can be assembled with [`TruncationProfile::from_parts`];
//! when no closed-form inverse is available the profile inverts Φ by bisection
//! on [1, 10¹²].

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::util::{all_finite, norm};

/// Errors from profile construction, budget evaluation, and truncation.
#[derive(Debug, Error)]
pub enum TruncationError {
    /// Step sizes must lie in (0, 1].
    #[error("step size {dt} outside the admissible range (0, 1]")]
    StepOutOfRange { dt: f64 },
    /// A profile parameter violates its constraint; the message names it.
    #[error("invalid profile parameter: {0}")]
    Parameter(String),
    /// The budget h(Δ) fell below Φ(1), so no truncation radius ≥ 1 exists.
    #[error("budget h({dt}) = {budget} is below phi(1) = {floor}; no truncation radius exists")]
    BudgetBelowDomain { dt: f64, budget: f64, floor: f64 },
    /// The profile produced a non-finite or non-monotone value.
    #[error("profile inconsistency: {0}")]
    Inconsistent(String),
    /// Truncation was asked to clamp a vector containing NaN or ±∞.
    #[error("non-finite state passed to truncation")]
    NonFiniteState,
    /// The clamp radius itself must be positive and finite.
    #[error("truncation bound must be positive and finite, got {0}")]
    InvalidBound(f64),
}

/// Which scheme family a profile is built for. The generic family allows
/// μ ∈ (0, ½]; the stability family needs the strict inequality μ < ½ so that
/// the step-size condition for exponential decay has room to hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Generic,
    Stability,
}

type GrowthFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A growth bound Φ with its inverse, the exponent μ, and the constant
/// K = Φ(max(‖ξ‖, 1)) baked in. Cheap to clone and safe to share across
/// threads.
#[derive(Clone)]
pub struct TruncationProfile {
    phi: Arc<GrowthFn>,
    phi_inv: Arc<GrowthFn>,
    mu: f64,
    k_const: f64,
    kind: ProfileKind,
}

impl fmt::Debug for TruncationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncationProfile")
            .field("mu", &self.mu)
            .field("k_const", &self.k_const)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

/// Upper end of the bisection domain used when no closed-form inverse is
/// supplied. Radii beyond this are astronomically past any desk-scale run.
const BISECT_HI: f64 = 1e12;
const BISECT_ITERS: usize = 200;

/// Grid used to spot-check that a supplied Φ is strictly increasing.
const MONOTONE_CHECK_POINTS: usize = 64;

impl TruncationProfile {
    /// Assemble a profile from explicit pieces.
    ///
    /// `phi` must be strictly increasing and finite on [1, ∞) (spot-checked on
    /// a log-spaced grid), `phi_inv` its inverse on [phi(1), ∞), and `k_const`
    /// at least phi(1) so that the truncation radius never falls below 1. The
    /// admissible μ range depends on `kind`: (0, ½] for `Generic`, (0, ½) for
    /// `Stability`.
    pub fn from_parts(
        phi: Arc<GrowthFn>,
        phi_inv: Arc<GrowthFn>,
        mu: f64,
        k_const: f64,
        kind: ProfileKind,
    ) -> Result<Self, TruncationError> {
        check_mu(mu, kind)?;
        if !k_const.is_finite() || k_const <= 0.0 {
            return Err(TruncationError::Parameter(format!(
                "k_const must be positive and finite, got {k_const}"
            )));
        }
        let phi_one = phi(1.0);
        if !phi_one.is_finite() || phi_one <= 0.0 {
            return Err(TruncationError::Inconsistent(format!(
                "phi(1) must be positive and finite, got {phi_one}"
            )));
        }
        if k_const < phi_one * (1.0 - 1e-12) {
            return Err(TruncationError::Parameter(format!(
                "k_const = {k_const} is below phi(1) = {phi_one}; the budget h(1) = K would \
                 admit no radius ≥ 1"
            )));
        }
        // Spot-check strict monotonicity on a log-spaced grid of [1, 1e6].
        let mut prev = phi_one;
        for i in 1..=MONOTONE_CHECK_POINTS {
            let l = 10f64.powf(6.0 * i as f64 / MONOTONE_CHECK_POINTS as f64);
            let v = phi(l);
            if !v.is_finite() || v <= prev {
                return Err(TruncationError::Inconsistent(format!(
                    "phi is not strictly increasing near l = {l} (phi = {v}, previous {prev})"
                )));
            }
            prev = v;
        }
        Ok(Self {
            phi,
            phi_inv,
            mu,
            k_const,
            kind,
        })
    }

    /// The exponent μ in h(Δ) = KΔ^(−μ).
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// The constant K = Φ(max(‖ξ‖, 1)).
    pub fn k_const(&self) -> f64 {
        self.k_const
    }

    /// Which scheme family this profile serves.
    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    /// Evaluate the growth bound Φ at `l ≥ 1`.
    pub fn phi(&self, l: f64) -> f64 {
        (self.phi)(l)
    }

    /// Evaluate the inverse Φ⁻¹ at `v ≥ Φ(1)`.
    pub fn phi_inv(&self, v: f64) -> f64 {
        (self.phi_inv)(v)
    }

    /// The step-size budget h(Δ) = KΔ^(−μ), defined for Δ ∈ (0, 1].
    pub fn budget(&self, dt: f64) -> Result<f64, TruncationError> {
        if !(dt > 0.0 && dt <= 1.0) || !dt.is_finite() {
            return Err(TruncationError::StepOutOfRange { dt });
        }
        Ok(self.k_const * dt.powf(-self.mu))
    }

    /// The truncation radius Φ⁻¹(h(Δ)).
    ///
    /// Monotone non-increasing in Δ and never below 1 (hence never below the
    /// initial data, since K = Φ(‖ξ‖∨1) makes the radius at Δ = 1 equal
    /// ‖ξ‖∨1).
    pub fn bound(&self, dt: f64) -> Result<f64, TruncationError> {
        let budget = self.budget(dt)?;
        let floor = (self.phi)(1.0);
        if budget < floor * (1.0 - 1e-12) {
            return Err(TruncationError::BudgetBelowDomain { dt, budget, floor });
        }
        let radius = (self.phi_inv)(budget.max(floor));
        if !radius.is_finite() || radius < 1.0 - 1e-9 {
            return Err(TruncationError::Inconsistent(format!(
                "phi_inv({budget}) produced an invalid truncation radius {radius}"
            )));
        }
        Ok(radius)
    }
}

fn check_mu(mu: f64, kind: ProfileKind) -> Result<(), TruncationError> {
    let ok = match kind {
        ProfileKind::Generic => mu > 0.0 && mu <= 0.5,
        ProfileKind::Stability => mu > 0.0 && mu < 0.5,
    };
    if mu.is_finite() && ok {
        Ok(())
    } else {
        let range = match kind {
            ProfileKind::Generic => "(0, 1/2]",
            ProfileKind::Stability => "(0, 1/2)",
        };
        Err(TruncationError::Parameter(format!(
            "mu = {mu} outside the admissible range {range} for {kind:?} profiles"
        )))
    }
}

/// Parameters of the polynomial growth family: coefficients dominated by
/// `(|f(0,0)| ∨ 2|g(0,0)|²) + 6·K₄·l^(α+2)` on the ball of radius `l`, for a
/// system whose exact solution carries bounded q-th moments while errors are
/// measured in the r-th moment.
#[derive(Debug, Clone, Copy)]
pub struct PolynomialGrowth {
    /// Degree offset: drift grows like |x|^(α+1).
    pub alpha: f64,
    /// Leading constant of the growth bound.
    pub k4: f64,
    /// |f(0,0)|.
    pub f00_norm: f64,
    /// |g(0,0)| in the Hilbert–Schmidt norm.
    pub g00_norm: f64,
    /// Moment order the exact solution supports.
    pub q: f64,
    /// Moment order of the error being measured (r ≥ 2).
    pub r: f64,
}

/// Build the polynomial-growth profile
///
/// ```text
/// Φ(l)    = c₀ + 6·K₄·l^(α+2),            c₀ = |f(0,0)| ∨ 2|g(0,0)|²,
/// Φ⁻¹(v)  = ((v − c₀) / (6·K₄))^(1/(α+2)),
/// μ       = r(α+2) / (2(q − r)),
/// K       = Φ(max(ξ_sup, 1)).
/// ```
///
/// The admissibility constraints `2 ≤ r ≤ q/(α+3) ∧ q/(2α)` force
/// μ ∈ (0, ½]; violations are reported naming the offending parameter.
pub fn polynomial_profile(
    growth: &PolynomialGrowth,
    xi_sup: f64,
) -> Result<TruncationProfile, TruncationError> {
    let PolynomialGrowth {
        alpha,
        k4,
        f00_norm,
        g00_norm,
        q,
        r,
    } = *growth;
    for (name, v) in [("alpha", alpha), ("k4", k4), ("q", q), ("r", r)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(TruncationError::Parameter(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    for (name, v) in [("f00_norm", f00_norm), ("g00_norm", g00_norm)] {
        if !v.is_finite() || v < 0.0 {
            return Err(TruncationError::Parameter(format!(
                "{name} must be nonnegative and finite, got {v}"
            )));
        }
    }
    if !xi_sup.is_finite() || xi_sup < 0.0 {
        return Err(TruncationError::Parameter(format!(
            "xi_sup must be nonnegative and finite, got {xi_sup}"
        )));
    }
    if r < 2.0 {
        return Err(TruncationError::Parameter(format!(
            "r = {r} violates r ≥ 2"
        )));
    }
    let r_cap = (q / (alpha + 3.0)).min(q / (2.0 * alpha));
    if r > r_cap * (1.0 + 1e-12) {
        return Err(TruncationError::Parameter(format!(
            "r = {r} violates r ≤ min(q/(α+3), q/(2α)) = {r_cap}"
        )));
    }
    let mu = r * (alpha + 2.0) / (2.0 * (q - r));
    // Implied by the r-range, but checked so a violation is named rather than
    // silently producing an inadmissible exponent.
    if !(mu > 0.0 && mu <= 0.5) {
        return Err(TruncationError::Parameter(format!(
            "derived mu = r(α+2)/(2(q−r)) = {mu} outside (0, 1/2]"
        )));
    }
    let c0 = f00_norm.max(2.0 * g00_norm * g00_norm);
    let pow = alpha + 2.0;
    let scale = 6.0 * k4;
    let phi = move |l: f64| c0 + scale * l.powf(pow);
    let phi_inv = move |v: f64| (((v - c0) / scale).max(0.0)).powf(1.0 / pow);
    let k_const = phi(xi_sup.max(1.0));
    TruncationProfile::from_parts(
        Arc::new(phi),
        Arc::new(phi_inv),
        mu,
        k_const,
        ProfileKind::Generic,
    )
}

/// Build a stability profile from a growth bound Φ̂ with no closed-form
/// inverse; the inverse is computed by bisection on [1, 10¹²].
///
/// Φ̂ must dominate the relative growth |f(x,y)|/(|x| + |y|∧1) and
/// |g(x,y)|²/(|x| + |y|∧1)² on balls, and μ must lie strictly in (0, ½).
pub fn stability_profile<F>(
    phi_hat: F,
    mu: f64,
    xi_sup: f64,
) -> Result<TruncationProfile, TruncationError>
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    let phi: Arc<GrowthFn> = Arc::new(phi_hat);
    let phi_for_inv = Arc::clone(&phi);
    let phi_inv: Arc<GrowthFn> = Arc::new(move |v: f64| bisect_inverse(&*phi_for_inv, v));
    build_stability(phi, phi_inv, mu, xi_sup)
}

/// Build a stability profile whose inverse is known in closed form.
pub fn stability_profile_with_inverse<F, G>(
    phi_hat: F,
    phi_hat_inv: G,
    mu: f64,
    xi_sup: f64,
) -> Result<TruncationProfile, TruncationError>
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
    G: Fn(f64) -> f64 + Send + Sync + 'static,
{
    build_stability(Arc::new(phi_hat), Arc::new(phi_hat_inv), mu, xi_sup)
}

fn build_stability(
    phi: Arc<GrowthFn>,
    phi_inv: Arc<GrowthFn>,
    mu: f64,
    xi_sup: f64,
) -> Result<TruncationProfile, TruncationError> {
    check_mu(mu, ProfileKind::Stability)?;
    if !xi_sup.is_finite() || xi_sup < 0.0 {
        return Err(TruncationError::Parameter(format!(
            "xi_sup must be nonnegative and finite, got {xi_sup}"
        )));
    }
    let k_const = phi(xi_sup.max(1.0));
    TruncationProfile::from_parts(phi, phi_inv, mu, k_const, ProfileKind::Stability)
}

/// The built-in quadratic stability bound Φ̂(l) = 2(1 + l²), inverted in
/// closed form as Φ̂⁻¹(v) = √(v/2 − 1).
///
/// Suitable for systems whose drift grows at most cubically against a
/// quadratic Lyapunov pair, such as the two-dimensional cubic benchmark in the
/// model catalog.
pub fn quadratic_stability_profile(
    mu: f64,
    xi_sup: f64,
) -> Result<TruncationProfile, TruncationError> {
    stability_profile_with_inverse(
        |l| 2.0 * (1.0 + l * l),
        |v| (v / 2.0 - 1.0).max(0.0).sqrt(),
        mu,
        xi_sup,
    )
}

/// Invert a strictly increasing function by bisection on [1, BISECT_HI].
/// Targets at or below f(1) clamp to 1; targets beyond f(BISECT_HI) clamp to
/// the upper end (far past any radius a desk-scale run can reach).
fn bisect_inverse(f: &GrowthFn, target: f64) -> f64 {
    let mut lo = 1.0f64;
    let mut hi = BISECT_HI;
    if target <= f(lo) {
        return lo;
    }
    if target >= f(hi) {
        return hi;
    }
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// States within this relative distance of the radius count as inside, so a
/// state sitting exactly on the ball surface is returned unchanged instead of
/// being rescaled by a factor that is 1 up to rounding.
const INSIDE_REL_TOL: f64 = 1e-15;

/// The radial clamp Υ(x) = (|x| ∧ bound) · x/|x|, with Υ(0) = 0.
///
/// Inside the ball the input is returned bit-identically; outside, the vector
/// is rescaled onto the sphere of radius `bound`, preserving direction.
pub fn truncate(x: &[f64], bound: f64) -> Result<Vec<f64>, TruncationError> {
    let mut out = vec![0.0; x.len()];
    truncate_into(x, bound, &mut out)?;
    Ok(out)
}

/// In-place form of [`truncate`]; returns whether the clamp was active.
pub(crate) fn truncate_into(
    x: &[f64],
    bound: f64,
    out: &mut [f64],
) -> Result<bool, TruncationError> {
    if !bound.is_finite() || bound <= 0.0 {
        return Err(TruncationError::InvalidBound(bound));
    }
    if !all_finite(x) {
        return Err(TruncationError::NonFiniteState);
    }
    debug_assert_eq!(x.len(), out.len());
    let n = norm(x);
    if n <= bound * (1.0 + INSIDE_REL_TOL) {
        out.copy_from_slice(x);
        Ok(false)
    } else {
        let scale = bound / n;
        for (o, v) in out.iter_mut().zip(x) {
            *o = scale * v;
        }
        Ok(true)
    }
}
