//! Time-steppers over a delay-history ring buffer.
//!
//! One explicit Euler step from grid index i to i+1 reads the current state
//! z_i and the delayed state z_{i−N} (N = steps per delay, so NΔ = τ) and
//! forms the pre-truncation state
//!
//! ```text
//! breve z_{i+1} = z_i + f(z_i, z_{i−N})·Δ + g(z_i, z_{i−N})·ΔW_i .
//! ```
//!
//! The truncated schemes then clamp, z_{i+1} = Υ(breve z_{i+1}), with the
//! radius supplied by a generic or stability profile; the classic
//! Euler–Maruyama baseline stores breve z_{i+1} as-is. Stored history is
//! already truncated, and the delayed argument is used exactly as stored —
//! the recursion never re-truncates it.
//!
//! On the first delay window the history comes from the initial segment:
//! z_i = ξ(iΔ) for i = −N..0. A full path therefore carries N + horizon + 1
//! states, indexed from −N.
//!
//! Blow-up policy: the truncated steppers treat a non-finite pre-truncation
//! state as a hard error carrying the step index (it cannot happen under the
//! scheme's hypotheses, so it signals a misconfiguration); the classic EM
//! baseline records the first non-finite step and keeps going, since
//! exhibiting divergence is exactly what the baseline is for.
//!
//! [`interpolate_aux`] evaluates the continuous-time interpolant used in the
//! error analysis: frozen coefficients plus the actual Brownian increment
//! within the current step,
//!
//! ```text
//! z̃(t) = z_i + f(z_i, z_{i−N})·(t − t_i) + g(z_i, z_{i−N})·(W(t) − W(t_i))
//! ```
//!
//! for t ∈ [t_i, t_{i+1}); it coincides with the grid states at grid times.

use thiserror::Error;

use crate::brownian::{steps_covering, BrownianError, BrownianLattice};
use crate::model::SddeModel;
use crate::truncation::{truncate_into, ProfileKind, TruncationError, TruncationProfile};
use crate::util::{all_finite, axpy, matvec_acc, norm};

/// Errors from grid construction and stepping.
#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("invalid scheme parameter: {0}")]
    Parameter(String),
    #[error("step size {dt} exceeds 1 (delay {delay} split into {n} steps)")]
    StepTooLarge { dt: f64, delay: f64, n: u32 },
    #[error("scheme/profile mismatch: {0}")]
    ProfileMismatch(String),
    #[error("model drives {model} noise coordinates but the lattice carries {lattice}")]
    NoiseDimMismatch { model: usize, lattice: usize },
    #[error("lattice holds {available} fine steps but the run needs {needed}")]
    LatticeTooShort { needed: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pre-truncation state is non-finite (scheme blow-up)")]
    NonFinitePre,
    #[error("scheme blow-up: non-finite pre-truncation state at step {step} (t = {time})")]
    BlowUpAt { step: usize, time: f64 },
    #[error(transparent)]
    Truncation(#[from] TruncationError),
    #[error(transparent)]
    Brownian(#[from] BrownianError),
}

/// Which update rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    /// Truncated Euler–Maruyama under a generic (convergence) profile.
    GenericTem,
    /// Truncated Euler–Maruyama under a stability profile.
    StabilityTem,
    /// Classic explicit Euler–Maruyama, no truncation.
    ClassicEm,
}

/// A uniform time grid: Δ = τ/N with N steps per delay, covering
/// `horizon_steps` steps past zero.
#[derive(Debug, Clone)]
pub struct SimulationGrid {
    dt: f64,
    steps_per_delay: u32,
    horizon_steps: usize,
}

impl SimulationGrid {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// N, the number of steps spanning one delay: NΔ = τ.
    pub fn steps_per_delay(&self) -> u32 {
        self.steps_per_delay
    }

    /// Number of steps past t = 0 the grid covers.
    pub fn horizon_steps(&self) -> usize {
        self.horizon_steps
    }

    /// The grid time t_i = i·Δ, computed from the integer index (never by
    /// accumulating additions).
    pub fn time_of(&self, index: i64) -> f64 {
        index as f64 * self.dt
    }

    /// The delay as the grid represents it, N·Δ.
    pub fn delay(&self) -> f64 {
        self.steps_per_delay as f64 * self.dt
    }
}

/// Build the grid with Δ = delay/steps_per_delay, covering `[0, horizon]`.
///
/// The step count over the horizon rounds up, snapping to an exact multiple
/// when `horizon/Δ` is an integer up to rounding. Step sizes above 1 are
/// rejected: every scheme guarantee here is stated for Δ ∈ (0, 1].
pub fn make_grid(
    delay: f64,
    steps_per_delay: u32,
    horizon: f64,
) -> Result<SimulationGrid, SchemeError> {
    if !delay.is_finite() || delay <= 0.0 {
        return Err(SchemeError::Parameter(format!(
            "delay must be positive and finite, got {delay}"
        )));
    }
    if steps_per_delay == 0 {
        return Err(SchemeError::Parameter(
            "steps_per_delay must be at least 1".to_string(),
        ));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(SchemeError::Parameter(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    let dt = delay / steps_per_delay as f64;
    if dt > 1.0 {
        return Err(SchemeError::StepTooLarge {
            dt,
            delay,
            n: steps_per_delay,
        });
    }
    let horizon_steps = steps_covering(horizon, dt);
    debug_assert!(
        (steps_per_delay as f64 * dt - delay).abs() <= 1e-12 * delay,
        "N·Δ must reproduce the delay"
    );
    Ok(SimulationGrid {
        dt,
        steps_per_delay,
        horizon_steps,
    })
}

/// One pre/post pair from a truncated step.
#[derive(Debug, Clone)]
pub struct TemStep {
    /// The explicit Euler state before clamping.
    pub pre: Vec<f64>,
    /// The stored state after clamping.
    pub post: Vec<f64>,
    /// Whether the clamp was active.
    pub truncated: bool,
}

fn check_step_dims(
    model: &SddeModel,
    current: &[f64],
    delayed: &[f64],
    dw: &[f64],
) -> Result<(), SchemeError> {
    let d = model.state_dim();
    let m = model.noise_dim();
    if current.len() != d || delayed.len() != d {
        return Err(SchemeError::DimensionMismatch(format!(
            "state vectors have lengths {} and {}, model expects {d}",
            current.len(),
            delayed.len()
        )));
    }
    if dw.len() != m {
        return Err(SchemeError::DimensionMismatch(format!(
            "increment has length {}, model drives {m} noise coordinates",
            dw.len()
        )));
    }
    Ok(())
}

/// The explicit Euler update z + f(z, z_del)·Δ + g(z, z_del)·ΔW, written into
/// `pre` using the caller's scratch buffers.
#[allow(clippy::too_many_arguments)]
fn euler_update(
    model: &SddeModel,
    dt: f64,
    current: &[f64],
    delayed: &[f64],
    dw: &[f64],
    f_buf: &mut [f64],
    g_buf: &mut [f64],
    pre: &mut [f64],
) {
    model.drift(current, delayed, f_buf);
    model.diffusion(current, delayed, g_buf);
    pre.copy_from_slice(current);
    axpy(dt, f_buf, pre);
    matvec_acc(g_buf, model.state_dim(), model.noise_dim(), dw, pre);
}

fn truncated_step(
    model: &SddeModel,
    profile: &TruncationProfile,
    expected_kind: ProfileKind,
    dt: f64,
    current: &[f64],
    delayed: &[f64],
    dw: &[f64],
) -> Result<TemStep, SchemeError> {
    if profile.kind() != expected_kind {
        return Err(SchemeError::ProfileMismatch(format!(
            "this stepper requires a {expected_kind:?} profile, got {:?}",
            profile.kind()
        )));
    }
    check_step_dims(model, current, delayed, dw)?;
    let bound = profile.bound(dt)?;
    let d = model.state_dim();
    let mut f_buf = vec![0.0; d];
    let mut g_buf = vec![0.0; d * model.noise_dim()];
    let mut pre = vec![0.0; d];
    euler_update(
        model, dt, current, delayed, dw, &mut f_buf, &mut g_buf, &mut pre,
    );
    if !all_finite(&pre) {
        return Err(SchemeError::NonFinitePre);
    }
    let mut post = vec![0.0; d];
    let truncated = truncate_into(&pre, bound, &mut post)?;
    Ok(TemStep {
        pre,
        post,
        truncated,
    })
}

/// One truncated Euler–Maruyama step under a generic profile.
pub fn tem_step(
    model: &SddeModel,
    profile: &TruncationProfile,
    dt: f64,
    current: &[f64],
    delayed: &[f64],
    dw: &[f64],
) -> Result<TemStep, SchemeError> {
    truncated_step(
        model,
        profile,
        ProfileKind::Generic,
        dt,
        current,
        delayed,
        dw,
    )
}

/// One truncated step under a stability profile — the identical update
/// algebra, with the radius coming from the stability bound.
pub fn stability_tem_step(
    model: &SddeModel,
    profile: &TruncationProfile,
    dt: f64,
    current: &[f64],
    delayed: &[f64],
    dw: &[f64],
) -> Result<TemStep, SchemeError> {
    truncated_step(
        model,
        profile,
        ProfileKind::Stability,
        dt,
        current,
        delayed,
        dw,
    )
}

/// One classic Euler–Maruyama step: the pre-truncation state, stored as-is.
/// Non-finite results are returned, not rejected — the caller records them.
pub fn em_step(
    model: &SddeModel,
    dt: f64,
    current: &[f64],
    delayed: &[f64],
    dw: &[f64],
) -> Result<Vec<f64>, SchemeError> {
    if !(dt > 0.0 && dt <= 1.0) || !dt.is_finite() {
        return Err(SchemeError::Parameter(format!(
            "step size must lie in (0, 1], got {dt}"
        )));
    }
    check_step_dims(model, current, delayed, dw)?;
    let d = model.state_dim();
    let mut f_buf = vec![0.0; d];
    let mut g_buf = vec![0.0; d * model.noise_dim()];
    let mut pre = vec![0.0; d];
    euler_update(
        model, dt, current, delayed, dw, &mut f_buf, &mut g_buf, &mut pre,
    );
    Ok(pre)
}

/// Fixed-size ring over the last N+1 states; `delayed()` is always the state
/// N steps behind `current()`.
struct DelayRing {
    data: Vec<f64>,
    d: usize,
    slots: usize,
    newest: usize,
}

impl DelayRing {
    fn new(d: usize, steps_per_delay: usize) -> Self {
        let slots = steps_per_delay + 1;
        Self {
            data: vec![0.0; slots * d],
            d,
            slots,
            newest: steps_per_delay,
        }
    }

    fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.data[slot * self.d..(slot + 1) * self.d]
    }

    fn current(&self) -> &[f64] {
        &self.data[self.newest * self.d..(self.newest + 1) * self.d]
    }

    fn delayed(&self) -> &[f64] {
        let slot = (self.newest + 1) % self.slots;
        &self.data[slot * self.d..(slot + 1) * self.d]
    }

    fn push(&mut self, state: &[f64]) {
        self.newest = (self.newest + 1) % self.slots;
        let d = self.d;
        self.data[self.newest * d..(self.newest + 1) * d].copy_from_slice(state);
    }
}

/// Per-step diagnostics handed to streaming observers.
pub(crate) struct StepInfo {
    pub pre_norm: f64,
    pub truncated: bool,
}

/// Summary returned by the streaming engine.
pub(crate) struct StreamOutcome {
    pub pre_truncation_last: Vec<f64>,
    pub truncation_bound: Option<f64>,
    pub first_nonfinite_step: Option<usize>,
}

/// Drive one path, invoking `observe(i, state, info)` at i = 0 (initial
/// state, no step info) and after every step i = 1..=horizon_steps. Keeps
/// only the delay ring in memory; allocation-free per step.
pub(crate) fn stream_simulate<F>(
    model: &SddeModel,
    profile: Option<&TruncationProfile>,
    grid: &SimulationGrid,
    kind: SchemeKind,
    lattice: &BrownianLattice,
    mut observe: F,
) -> Result<StreamOutcome, SchemeError>
where
    F: FnMut(usize, &[f64], Option<&StepInfo>),
{
    if model.noise_dim() != lattice.noise_dim() {
        return Err(SchemeError::NoiseDimMismatch {
            model: model.noise_dim(),
            lattice: lattice.noise_dim(),
        });
    }
    let expected = match kind {
        SchemeKind::GenericTem => Some(ProfileKind::Generic),
        SchemeKind::StabilityTem => Some(ProfileKind::Stability),
        SchemeKind::ClassicEm => None,
    };
    let bound = match expected {
        Some(want) => {
            let p = profile.ok_or_else(|| {
                SchemeError::ProfileMismatch(format!(
                    "{kind:?} requires a {want:?} truncation profile"
                ))
            })?;
            if p.kind() != want {
                return Err(SchemeError::ProfileMismatch(format!(
                    "{kind:?} requires a {want:?} profile, got {:?}",
                    p.kind()
                )));
            }
            Some(p.bound(grid.dt())?)
        }
        None => {
            if profile.is_some() {
                return Err(SchemeError::ProfileMismatch(
                    "the classic EM baseline takes no truncation profile".to_string(),
                ));
            }
            None
        }
    };

    let ratio = lattice.aggregation_ratio(grid.dt())?;
    let needed = grid.horizon_steps() * ratio;
    if needed > lattice.fine_steps() {
        return Err(SchemeError::LatticeTooShort {
            needed,
            available: lattice.fine_steps(),
        });
    }

    let d = model.state_dim();
    let m = model.noise_dim();
    let n_delay = grid.steps_per_delay() as usize;
    let mut ring = DelayRing::new(d, n_delay);
    for i in 0..=n_delay {
        let theta = grid.time_of(i as i64 - n_delay as i64);
        model.initial(theta, ring.slot_mut(i));
    }

    let mut f_buf = vec![0.0; d];
    let mut g_buf = vec![0.0; d * m];
    let mut pre = vec![0.0; d];
    let mut post = vec![0.0; d];
    let mut dw = vec![0.0; m];
    let mut first_nonfinite = None;

    observe(0, ring.current(), None);
    for i in 0..grid.horizon_steps() {
        lattice.coarse_increment_into(ratio, i, &mut dw)?;
        euler_update(
            model,
            grid.dt(),
            ring.current(),
            ring.delayed(),
            &dw,
            &mut f_buf,
            &mut g_buf,
            &mut pre,
        );
        let step = i + 1;
        match bound {
            Some(b) => {
                if !all_finite(&pre) {
                    return Err(SchemeError::BlowUpAt {
                        step,
                        time: grid.time_of(step as i64),
                    });
                }
                let truncated = truncate_into(&pre, b, &mut post)?;
                ring.push(&post);
                let info = StepInfo {
                    pre_norm: norm(&pre),
                    truncated,
                };
                observe(step, ring.current(), Some(&info));
            }
            None => {
                if !all_finite(&pre) && first_nonfinite.is_none() {
                    first_nonfinite = Some(step);
                }
                ring.push(&pre);
                let info = StepInfo {
                    pre_norm: norm(&pre),
                    truncated: false,
                };
                observe(step, ring.current(), Some(&info));
            }
        }
    }

    Ok(StreamOutcome {
        pre_truncation_last: pre,
        truncation_bound: bound,
        first_nonfinite_step: first_nonfinite,
    })
}

/// A fully stored path: the initial history (indices −N..=0 from ξ) plus
/// every stepped state, with per-step truncation diagnostics.
#[derive(Debug, Clone)]
pub struct PathTrajectory {
    grid: SimulationGrid,
    scheme_kind: SchemeKind,
    state_dim: usize,
    /// Flat storage of (N + horizon_steps + 1) states of length d; index i
    /// lives at offset (i + N)·d.
    states: Vec<f64>,
    /// |breve z_i| for steps i = 1..=horizon_steps.
    pre_norms: Vec<f64>,
    /// Whether the clamp fired at steps i = 1..=horizon_steps.
    truncated_steps: Vec<bool>,
    /// The last pre-truncation state, kept for diagnostics.
    pre_truncation_last: Vec<f64>,
    /// First step whose pre-truncation state was non-finite (EM only).
    first_nonfinite_step: Option<usize>,
    /// The clamp radius for this run's step size (TEM kinds).
    truncation_bound: Option<f64>,
}

impl PathTrajectory {
    pub fn grid(&self) -> &SimulationGrid {
        &self.grid
    }

    pub fn scheme_kind(&self) -> SchemeKind {
        self.scheme_kind
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Smallest stored index, −N.
    pub fn first_index(&self) -> i64 {
        -(self.grid.steps_per_delay() as i64)
    }

    /// Largest stored index, horizon_steps.
    pub fn last_index(&self) -> i64 {
        self.grid.horizon_steps() as i64
    }

    /// The state z_i for −N ≤ i ≤ horizon_steps.
    ///
    /// # Panics
    /// If `index` is outside the stored range.
    pub fn state(&self, index: i64) -> &[f64] {
        assert!(
            index >= self.first_index() && index <= self.last_index(),
            "index {index} outside stored range [{}, {}]",
            self.first_index(),
            self.last_index()
        );
        let off = (index + self.grid.steps_per_delay() as i64) as usize * self.state_dim;
        &self.states[off..off + self.state_dim]
    }

    /// The final state z at the horizon.
    pub fn terminal(&self) -> &[f64] {
        self.state(self.last_index())
    }

    /// |breve z_step| before clamping, for 1 ≤ step ≤ horizon_steps.
    pub fn pre_norm(&self, step: usize) -> f64 {
        self.pre_norms[step - 1]
    }

    /// Whether the clamp fired at `step` (always false for classic EM).
    pub fn was_truncated(&self, step: usize) -> bool {
        self.truncated_steps[step - 1]
    }

    /// The most recent pre-truncation state.
    pub fn pre_truncation_last(&self) -> &[f64] {
        &self.pre_truncation_last
    }

    /// First step at which classic EM became non-finite, if any.
    pub fn first_nonfinite_step(&self) -> Option<usize> {
        self.first_nonfinite_step
    }

    /// The clamp radius in force for this run (TEM kinds).
    pub fn truncation_bound(&self) -> Option<f64> {
        self.truncation_bound
    }
}

/// Simulate one full path and keep every state.
///
/// The lattice must carry at least as many fine steps as the grid needs, with
/// the grid step an integer multiple of the fine step; the initial history is
/// filled from ξ at the grid points iΔ, i = −N..0.
pub fn simulate(
    model: &SddeModel,
    profile: Option<&TruncationProfile>,
    grid: &SimulationGrid,
    kind: SchemeKind,
    lattice: &BrownianLattice,
) -> Result<PathTrajectory, SchemeError> {
    let d = model.state_dim();
    let n_delay = grid.steps_per_delay() as usize;
    let total = n_delay + grid.horizon_steps() + 1;
    let mut states = vec![0.0; total * d];
    // History from the initial segment; index i sits at offset (i + N)·d.
    for i in 0..n_delay {
        let theta = grid.time_of(i as i64 - n_delay as i64);
        model.initial(theta, &mut states[i * d..(i + 1) * d]);
    }
    let mut pre_norms = vec![0.0; grid.horizon_steps()];
    let mut truncated_steps = vec![false; grid.horizon_steps()];

    let outcome = stream_simulate(model, profile, grid, kind, lattice, |i, state, info| {
        let off = (n_delay + i) * d;
        states[off..off + d].copy_from_slice(state);
        if let Some(info) = info {
            pre_norms[i - 1] = info.pre_norm;
            truncated_steps[i - 1] = info.truncated;
        }
    })?;

    Ok(PathTrajectory {
        grid: grid.clone(),
        scheme_kind: kind,
        state_dim: d,
        states,
        pre_norms,
        truncated_steps,
        pre_truncation_last: outcome.pre_truncation_last,
        first_nonfinite_step: outcome.first_nonfinite_step,
        truncation_bound: outcome.truncation_bound,
    })
}

/// Evaluate the continuous-time interpolant z̃ at a fine-lattice time
/// t ∈ [0, horizon]: the grid state at grid times, and in between the frozen
/// Euler coefficients advanced by the elapsed time and the Brownian increment
/// accumulated since the last grid point.
///
/// `model` and `lattice` must be the ones the trajectory was simulated with.
pub fn interpolate_aux(
    trajectory: &PathTrajectory,
    model: &SddeModel,
    lattice: &BrownianLattice,
    t: f64,
) -> Result<Vec<f64>, SchemeError> {
    let grid = trajectory.grid();
    let horizon_time = grid.time_of(grid.horizon_steps() as i64);
    if !t.is_finite() || t < 0.0 || t > horizon_time * (1.0 + 1e-12) {
        return Err(SchemeError::Parameter(format!(
            "interpolation time {t} outside [0, {horizon_time}]"
        )));
    }
    let fine_index = match crate::util::integer_ratio(t, lattice.fine_dt(), 1e-9) {
        Some(k) if k >= 0 => k as usize,
        _ => {
            return Err(SchemeError::Brownian(BrownianError::OffGrid {
                t,
                fine_dt: lattice.fine_dt(),
            }))
        }
    };
    let ratio = lattice.aggregation_ratio(grid.dt())?;
    if fine_index > lattice.fine_steps() {
        return Err(SchemeError::LatticeTooShort {
            needed: fine_index,
            available: lattice.fine_steps(),
        });
    }
    let i = (fine_index / ratio).min(grid.horizon_steps());
    let d = model.state_dim();
    let m = model.noise_dim();
    let current = trajectory.state(i as i64);
    let delayed = trajectory.state(i as i64 - grid.steps_per_delay() as i64);

    let mut out = current.to_vec();
    let dt_frac = t - grid.time_of(i as i64);
    let mut f_buf = vec![0.0; d];
    model.drift(current, delayed, &mut f_buf);
    axpy(dt_frac, &f_buf, &mut out);
    let mut g_buf = vec![0.0; d * m];
    model.diffusion(current, delayed, &mut g_buf);
    let mut w_inc = vec![0.0; m];
    lattice.sum_range_into(i * ratio, fine_index, &mut w_inc);
    matvec_acc(&g_buf, d, m, &w_inc, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example_1, builtin_example_2, oracle_linear_delay_model};
    use crate::truncation::TruncationProfile;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn cubic_profile() -> TruncationProfile {
        builtin_example_1().recommended_profile
    }

    /// A formally valid profile whose radius is astronomically large, so the
    /// clamp never fires: Φ(l) = l with K = 10⁹.
    fn huge_bound_profile() -> TruncationProfile {
        TruncationProfile::from_parts(
            Arc::new(|l: f64| l),
            Arc::new(|v: f64| v),
            0.5,
            1e9,
            crate::truncation::ProfileKind::Generic,
        )
        .unwrap()
    }

    fn zero_lattice(m: usize, fine_dt: f64, steps: usize) -> BrownianLattice {
        BrownianLattice::from_increments(m, fine_dt, vec![0.0; steps * m]).unwrap()
    }

    #[test]
    fn grid_construction_matches_hand_values() {
        let g = make_grid(1.0, 128, 8.0).unwrap();
        assert_eq!(g.dt(), 2f64.powi(-7));
        assert_eq!(g.steps_per_delay(), 128);
        assert_eq!(g.horizon_steps(), 1024);
        assert_eq!(g.time_of(1024), 8.0);
        assert_eq!(g.delay(), 1.0);

        let tiny = make_grid(1.0, 1, 1.0).unwrap();
        assert_eq!(tiny.dt(), 1.0);
        assert_eq!(tiny.horizon_steps(), 1);
    }

    #[test]
    fn grid_rounds_horizon_up() {
        let g = make_grid(1.0, 4, 0.9).unwrap();
        assert_eq!(g.horizon_steps(), 4, "0.9/0.25 = 3.6 rounds up");
        let exact = make_grid(1.0, 4, 1.0).unwrap();
        assert_eq!(exact.horizon_steps(), 4);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(matches!(
            make_grid(2.0, 1, 1.0),
            Err(SchemeError::StepTooLarge { .. })
        ));
        assert!(make_grid(1.0, 0, 1.0).is_err());
        assert!(make_grid(1.0, 4, 0.0).is_err());
        assert!(make_grid(f64::NAN, 4, 1.0).is_err());
    }

    #[test]
    fn tem_step_matches_hand_computation() {
        // Cubic benchmark from z = 1 with zero noise at Δ = 2⁻⁴:
        // breve z = 1 + (1 − 8)·(1/16) = 0.5625, inside the radius √2.
        let entry = builtin_example_1();
        let step = tem_step(
            &entry.model,
            &entry.recommended_profile,
            2f64.powi(-4),
            &[1.0],
            &[1.0],
            &[0.0],
        )
        .unwrap();
        assert_eq!(step.pre, vec![0.5625]);
        assert_eq!(step.post, vec![0.5625]);
        assert!(!step.truncated);
    }

    #[test]
    fn tem_step_clamps_outside_states() {
        // Zero coefficients leave the state where it is; a state outside the
        // radius √2 (cubic profile at Δ = 2⁻⁴) is pulled back onto the sphere.
        let model = SddeModel::new(
            2,
            1,
            1.0,
            Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out.fill(0.0)),
            Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out.fill(0.0)),
            Arc::new(|_: f64, out: &mut [f64]| out.fill(0.0)),
            0.0,
        )
        .unwrap();
        let step = tem_step(
            &model,
            &cubic_profile(),
            2f64.powi(-4),
            &[1.2, 0.9],
            &[0.0, 0.0],
            &[0.0],
        )
        .unwrap();
        assert!(step.truncated);
        let bound = 2f64.sqrt();
        assert_relative_eq!(crate::util::norm(&step.post), bound, max_relative = 1e-12);
        // Direction preserved: post is a positive multiple of pre.
        assert_relative_eq!(
            step.post[0] / step.pre[0],
            step.post[1] / step.pre[1],
            max_relative = 1e-12
        );
    }

    #[test]
    fn stepper_kind_and_profile_must_match() {
        let e1 = builtin_example_1();
        let e2 = builtin_example_2();
        // Generic stepper with a stability profile and vice versa.
        assert!(matches!(
            tem_step(
                &e2.model,
                &e2.recommended_profile,
                0.5,
                &[0.0; 2],
                &[0.0; 2],
                &[0.0; 2]
            ),
            Err(SchemeError::ProfileMismatch(_))
        ));
        assert!(matches!(
            stability_tem_step(
                &e1.model,
                &e1.recommended_profile,
                0.5,
                &[0.0],
                &[0.0],
                &[0.0]
            ),
            Err(SchemeError::ProfileMismatch(_))
        ));
        assert!(stability_tem_step(
            &e2.model,
            &e2.recommended_profile,
            0.5,
            &[0.0; 2],
            &[0.0; 2],
            &[0.0; 2]
        )
        .is_ok());
    }

    #[test]
    fn em_step_equals_pre_truncation_state() {
        let entry = builtin_example_1();
        let tem = tem_step(
            &entry.model,
            &entry.recommended_profile,
            2f64.powi(-4),
            &[0.7],
            &[0.3],
            &[0.11],
        )
        .unwrap();
        let em = em_step(&entry.model, 2f64.powi(-4), &[0.7], &[0.3], &[0.11]).unwrap();
        assert_eq!(em, tem.pre);
    }

    #[test]
    fn steppers_reject_dimension_mismatches() {
        let entry = builtin_example_1();
        assert!(matches!(
            tem_step(
                &entry.model,
                &entry.recommended_profile,
                0.5,
                &[0.0, 1.0],
                &[0.0],
                &[0.0]
            ),
            Err(SchemeError::DimensionMismatch(_))
        ));
        assert!(matches!(
            em_step(&entry.model, 0.5, &[0.0], &[0.0], &[0.0, 0.0]),
            Err(SchemeError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn tem_blowup_is_a_hard_error() {
        let diverging = SddeModel::new(
            1,
            1,
            1.0,
            Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out[0] = f64::INFINITY),
            Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_: f64, out: &mut [f64]| out[0] = 0.0),
            0.0,
        )
        .unwrap();
        assert!(matches!(
            tem_step(
                &diverging,
                &huge_bound_profile(),
                0.5,
                &[0.0],
                &[0.0],
                &[0.0]
            ),
            Err(SchemeError::NonFinitePre)
        ));
        let grid = make_grid(1.0, 2, 1.0).unwrap();
        let lat = zero_lattice(1, 0.5, 2);
        let err = simulate(
            &diverging,
            Some(&huge_bound_profile()),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap_err();
        assert!(
            matches!(err, SchemeError::BlowUpAt { step: 1, .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn simulate_fills_history_from_the_segment() {
        let entry = builtin_example_1();
        let grid = make_grid(1.0, 4, 1.0).unwrap();
        let lat = zero_lattice(1, 0.25, 4);
        let traj = simulate(
            &entry.model,
            Some(&entry.recommended_profile),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap();
        for i in -4..=0i64 {
            let theta = 0.25 * i as f64;
            assert_eq!(traj.state(i), &[theta * theta], "history at index {i}");
        }
    }

    #[test]
    fn simulate_reproduces_linear_decay() {
        // dz = −z dt with no noise: z_i = (1 − Δ)^i exactly.
        let model = oracle_linear_delay_model(1.0);
        let profile = crate::model::find_model("linear-decay")
            .unwrap()
            .recommended_profile;
        let grid = make_grid(1.0, 16, 1.0).unwrap();
        let lat = zero_lattice(1, grid.dt(), 16);
        let traj = simulate(&model, Some(&profile), &grid, SchemeKind::GenericTem, &lat).unwrap();
        let q = 1.0 - grid.dt();
        for i in 0..=16i64 {
            assert_relative_eq!(traj.state(i)[0], q.powi(i as i32), max_relative = 1e-12);
            if i >= 1 {
                assert!(!traj.was_truncated(i as usize));
            }
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let entry = builtin_example_1();
        let grid = make_grid(1.0, 8, 2.0).unwrap();
        let lat = BrownianLattice::generate(3, 5, 1, grid.dt(), 2.0).unwrap();
        let a = simulate(
            &entry.model,
            Some(&entry.recommended_profile),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap();
        let b = simulate(
            &entry.model,
            Some(&entry.recommended_profile),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.pre_norms, b.pre_norms);
    }

    #[test]
    fn trajectories_respect_the_truncation_ceiling() {
        let entry = builtin_example_1();
        let grid = make_grid(1.0, 16, 3.0).unwrap();
        let lat = BrownianLattice::generate(17, 0, 1, grid.dt(), 3.0).unwrap();
        let traj = simulate(
            &entry.model,
            Some(&entry.recommended_profile),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap();
        let bound = traj.truncation_bound().unwrap();
        for i in 1..=grid.horizon_steps() {
            let n = crate::util::norm(traj.state(i as i64));
            assert!(
                n <= bound + 1e-9,
                "step {i}: |z| = {n} above the radius {bound}"
            );
        }
    }

    #[test]
    fn stability_scheme_respects_its_ceiling() {
        let entry = builtin_example_2();
        let grid = make_grid(1.0, 128, 4.0).unwrap();
        let lat = BrownianLattice::generate(5, 9, 2, grid.dt(), 4.0).unwrap();
        let traj = simulate(
            &entry.model,
            Some(&entry.recommended_profile),
            &grid,
            SchemeKind::StabilityTem,
            &lat,
        )
        .unwrap();
        let bound = traj.truncation_bound().unwrap();
        assert_relative_eq!(bound, 3.766_009_4, max_relative = 1e-7);
        for i in 1..=grid.horizon_steps() {
            assert!(crate::util::norm(traj.state(i as i64)) <= bound + 1e-9);
        }
    }

    #[test]
    fn inactive_bound_reproduces_classic_em_bitwise() {
        let entry = builtin_example_1();
        let grid = make_grid(1.0, 64, 2.0).unwrap();
        let lat = BrownianLattice::generate(21, 2, 1, grid.dt(), 2.0).unwrap();
        let tem = simulate(
            &entry.model,
            Some(&huge_bound_profile()),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap();
        let em = simulate(&entry.model, None, &grid, SchemeKind::ClassicEm, &lat).unwrap();
        assert_eq!(
            tem.states, em.states,
            "with the clamp inert, TEM must equal EM bit-for-bit"
        );
        assert!((1..=grid.horizon_steps()).all(|s| !tem.was_truncated(s)));
    }

    #[test]
    fn classic_em_records_divergence_instead_of_failing() {
        // Cubic drift from a large initial state at Δ = 1/4 overflows within
        // a few steps; the baseline must record the step, not error.
        let model = SddeModel::new(
            1,
            1,
            1.0,
            Arc::new(|x: &[f64], _: &[f64], out: &mut [f64]| out[0] = x[0] - 8.0 * x[0].powi(3)),
            Arc::new(|_: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0].abs().powf(1.5)),
            Arc::new(|_: f64, out: &mut [f64]| out[0] = 10.0),
            10.0,
        )
        .unwrap();
        let grid = make_grid(1.0, 4, 12.5).unwrap();
        let lat = BrownianLattice::generate(1, 0, 1, grid.dt(), 12.5).unwrap();
        let traj = simulate(&model, None, &grid, SchemeKind::ClassicEm, &lat).unwrap();
        let hit = traj
            .first_nonfinite_step()
            .expect("divergence must be flagged");
        assert!(hit <= 50, "non-finite within 50 steps, got {hit}");
        assert!(traj.terminal().iter().any(|v| !v.is_finite()));
    }

    #[test]
    fn scheme_profile_presence_is_strict() {
        let entry = builtin_example_1();
        let grid = make_grid(1.0, 4, 1.0).unwrap();
        let lat = zero_lattice(1, 0.25, 4);
        assert!(matches!(
            simulate(&entry.model, None, &grid, SchemeKind::GenericTem, &lat),
            Err(SchemeError::ProfileMismatch(_))
        ));
        assert!(matches!(
            simulate(
                &entry.model,
                Some(&entry.recommended_profile),
                &grid,
                SchemeKind::ClassicEm,
                &lat
            ),
            Err(SchemeError::ProfileMismatch(_))
        ));
    }

    #[test]
    fn simulate_validates_lattice_compatibility() {
        let entry = builtin_example_2();
        let grid = make_grid(1.0, 4, 1.0).unwrap();
        // Wrong noise dimension.
        let lat1 = zero_lattice(1, 0.25, 4);
        assert!(matches!(
            simulate(
                &entry.model,
                Some(&entry.recommended_profile),
                &grid,
                SchemeKind::StabilityTem,
                &lat1
            ),
            Err(SchemeError::NoiseDimMismatch { .. })
        ));
        // Too short.
        let lat2 = zero_lattice(2, 0.25, 2);
        assert!(matches!(
            simulate(
                &entry.model,
                Some(&entry.recommended_profile),
                &grid,
                SchemeKind::StabilityTem,
                &lat2
            ),
            Err(SchemeError::LatticeTooShort { .. })
        ));
        // Misaligned fine step.
        let lat3 = zero_lattice(2, 0.1, 20);
        assert!(matches!(
            simulate(
                &entry.model,
                Some(&entry.recommended_profile),
                &grid,
                SchemeKind::StabilityTem,
                &lat3
            ),
            Err(SchemeError::Brownian(BrownianError::GridMismatch { .. }))
        ));
    }

    #[test]
    fn interpolant_agrees_with_grid_states_at_grid_times() {
        let entry = builtin_example_1();
        let grid = make_grid(1.0, 8, 2.0).unwrap();
        let lat = BrownianLattice::generate(9, 1, 1, grid.dt(), 2.0).unwrap();
        let traj = simulate(
            &entry.model,
            Some(&entry.recommended_profile),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap();
        for i in 0..=grid.horizon_steps() {
            let t = grid.time_of(i as i64);
            let z = interpolate_aux(&traj, &entry.model, &lat, t).unwrap();
            assert_eq!(z.as_slice(), traj.state(i as i64), "t = {t}");
        }
    }

    #[test]
    fn interpolant_is_linear_between_nodes_without_noise() {
        // Drift-only dynamics on a lattice 4× finer than the grid: between
        // nodes the interpolant advances along the frozen drift line.
        let model = oracle_linear_delay_model(1.0);
        let profile = crate::model::find_model("linear-decay")
            .unwrap()
            .recommended_profile;
        let grid = make_grid(1.0, 4, 1.0).unwrap();
        let fine = grid.dt() / 4.0;
        let lat = zero_lattice(1, fine, 16);
        let traj = simulate(&model, Some(&profile), &grid, SchemeKind::GenericTem, &lat).unwrap();
        let z2 = traj.state(2)[0];
        for j in 1..4 {
            let t = grid.time_of(2) + j as f64 * fine;
            let z = interpolate_aux(&traj, &model, &lat, t).unwrap()[0];
            assert_relative_eq!(z, z2 - z2 * (j as f64 * fine), max_relative = 1e-12);
        }
    }

    #[test]
    fn interpolant_tracks_brownian_inside_steps() {
        // Pure diffusion dz = dW: z̃(t) must equal W(t) up to rounding at
        // every fine time, including off-node ones.
        let model = SddeModel::new(
            1,
            1,
            1.0,
            Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out[0] = 0.0),
            Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out[0] = 1.0),
            Arc::new(|_: f64, out: &mut [f64]| out[0] = 0.0),
            0.0,
        )
        .unwrap();
        let grid = make_grid(1.0, 4, 1.0).unwrap();
        let fine = grid.dt() / 8.0;
        let lat = BrownianLattice::generate(33, 0, 1, fine, 1.0).unwrap();
        let traj = simulate(
            &model,
            Some(&huge_bound_profile()),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap();
        for k in 0..=32usize {
            let t = k as f64 * fine;
            let z = interpolate_aux(&traj, &model, &lat, t).unwrap()[0];
            let w = lat.value_at(t).unwrap()[0];
            assert_relative_eq!(z, w, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn interpolant_rejects_off_grid_times() {
        let entry = builtin_example_1();
        let grid = make_grid(1.0, 4, 1.0).unwrap();
        let lat = zero_lattice(1, 0.25, 4);
        let traj = simulate(
            &entry.model,
            Some(&entry.recommended_profile),
            &grid,
            SchemeKind::GenericTem,
            &lat,
        )
        .unwrap();
        assert!(interpolate_aux(&traj, &entry.model, &lat, 0.1).is_err());
        assert!(interpolate_aux(&traj, &entry.model, &lat, -0.25).is_err());
        assert!(interpolate_aux(&traj, &entry.model, &lat, 1.25).is_err());
    }
}
