//! The four experiment commands. Each one resolves its configuration
//! completely (rejecting anything invalid before simulation work starts),
//! runs the corresponding library study, and writes CSV output plus a
//! `report.txt` that echoes the full resolved configuration.

use std::collections::BTreeMap;
use std::path::Path;

use sdde::{
    gamma_feasibility, gamma_solve, make_grid, max_stable_stepsize, polynomial_profile,
    quadratic_stability_profile, simulate, stability_study, strong_error_study, BrownianLattice,
    ModelCatalogEntry, PathTrajectory, PolynomialGrowth, ProfileKind, SchemeKind, SddeModel,
    TruncationProfile,
};

use crate::args::{Cli, Command, ConvergeArgs, GammaArgs, SchemeArg, SimulateArgs, StabilityArgs};
use crate::error::CliError;
use crate::output::{fmt_float, Csv, OutDir, Report};

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let Cli {
        out_dir,
        threads,
        command,
    } = cli;
    match threads {
        None => run_command(command, &out_dir, "default"),
        Some(0) => Err(CliError::Config("--threads must be at least 1".to_string())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| {
                    CliError::Config(format!("cannot build a {t}-thread worker pool: {e}"))
                })?;
            pool.install(|| run_command(command, &out_dir, &t.to_string()))
        }
    }
}

fn run_command(command: Command, out_dir: &Path, threads: &str) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => simulate_cmd(a, out_dir, threads),
        Command::Converge(a) => converge_cmd(a, out_dir, threads),
        Command::Stability(a) => stability_cmd(a, out_dir, threads),
        Command::Gamma(a) => gamma_cmd(a),
    }
}

// ---------------------------------------------------------------------------
// shared resolution helpers
// ---------------------------------------------------------------------------

fn lookup_model(name: &str) -> Result<ModelCatalogEntry, CliError> {
    sdde::find_model(name).ok_or_else(|| {
        let known: Vec<String> = sdde::catalog().into_iter().map(|e| e.name).collect();
        CliError::Config(format!(
            "unknown model '{name}' (available: {})",
            known.join(", ")
        ))
    })
}

fn scheme_kind(arg: SchemeArg) -> SchemeKind {
    match arg {
        SchemeArg::Tem => SchemeKind::GenericTem,
        SchemeArg::StabTem => SchemeKind::StabilityTem,
        SchemeArg::Em => SchemeKind::ClassicEm,
    }
}

fn scheme_name(arg: SchemeArg) -> &'static str {
    match arg {
        SchemeArg::Tem => "tem",
        SchemeArg::StabTem => "stab-tem",
        SchemeArg::Em => "em",
    }
}

/// Moment order used by `converge` when `--p` is not given. Mirrors the
/// catalog recommendation: the scalar cubic model is studied through its
/// third moment, everything else through the second.
fn default_moment_order(model_name: &str) -> f64 {
    if model_name == "example1" {
        3.0
    } else {
        2.0
    }
}

/// Resolve the truncation profile for a scheme choice: an explicit
/// `--profile` flag wins, otherwise the catalog recommendation is used when
/// its family matches the scheme. Returns the profile (None for the
/// classical scheme) plus a description echoed into the report.
fn resolve_profile(
    entry: &ModelCatalogEntry,
    scheme: SchemeArg,
    flag: Option<&str>,
) -> Result<(Option<TruncationProfile>, String), CliError> {
    if scheme == SchemeArg::Em {
        return match flag {
            None => Ok((None, "none (classical scheme does not clamp)".to_string())),
            Some(_) => Err(CliError::Config(
                "--profile is not accepted with --scheme em".to_string(),
            )),
        };
    }
    let wanted = match scheme {
        SchemeArg::Tem => ProfileKind::Generic,
        SchemeArg::StabTem => ProfileKind::Stability,
        SchemeArg::Em => unreachable!(),
    };
    let (profile, source) = match flag {
        Some(spec) => (parse_profile(spec, &entry.model)?, format!("flag '{spec}'")),
        None => (entry.recommended_profile.clone(), "recommended".to_string()),
    };
    if profile.kind() != wanted {
        return Err(CliError::Config(format!(
            "scheme '{}' needs a {:?}-family profile, but the {} profile is {:?}-family; \
             pick the matching scheme or pass a compatible --profile",
            scheme_name(scheme),
            wanted,
            source,
            profile.kind()
        )));
    }
    let desc = format!(
        "{source} ({:?} family, mu = {}, K = {})",
        profile.kind(),
        fmt_float(profile.mu()),
        fmt_float(profile.k_const())
    );
    Ok((Some(profile), desc))
}

fn parse_profile(spec: &str, model: &SddeModel) -> Result<TruncationProfile, CliError> {
    let (family, rest) = spec.split_once(':').ok_or_else(|| {
        CliError::Config(format!(
            "--profile '{spec}' must look like 'polynomial:alpha=..,k4=..,q=..,r=..' \
             or 'stability:mu=..'"
        ))
    })?;
    let mut kv = BTreeMap::new();
    for part in rest.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "--profile entry '{part}' is not of the form key=value"
            ))
        })?;
        let parsed: f64 = value.parse().map_err(|_| {
            CliError::Config(format!(
                "--profile value for '{key}' is not a number: '{value}'"
            ))
        })?;
        if kv.insert(key.to_string(), parsed).is_some() {
            return Err(CliError::Config(format!("--profile repeats key '{key}'")));
        }
    }
    let profile = match family {
        "polynomial" => {
            let alpha = take_key(&mut kv, family, "alpha")?;
            let k4 = take_key(&mut kv, family, "k4")?;
            let q = take_key(&mut kv, family, "q")?;
            let r = take_key(&mut kv, family, "r")?;
            reject_leftovers(&kv, family)?;
            let (f00_norm, g00_norm) = model.origin_norms();
            polynomial_profile(
                &PolynomialGrowth {
                    alpha,
                    k4,
                    f00_norm,
                    g00_norm,
                    q,
                    r,
                },
                model.initial_sup_norm(),
            )?
        }
        "stability" => {
            let mu = take_key(&mut kv, family, "mu")?;
            reject_leftovers(&kv, family)?;
            quadratic_stability_profile(mu, model.initial_sup_norm())?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown --profile family '{other}' (expected 'polynomial' or 'stability')"
            )))
        }
    };
    Ok(profile)
}

fn take_key(kv: &mut BTreeMap<String, f64>, family: &str, key: &str) -> Result<f64, CliError> {
    kv.remove(key)
        .ok_or_else(|| CliError::Config(format!("--profile {family} needs '{key}='")))
}

fn reject_leftovers(kv: &BTreeMap<String, f64>, family: &str) -> Result<(), CliError> {
    if let Some(key) = kv.keys().next() {
        return Err(CliError::Config(format!(
            "--profile {family} does not take '{key}'"
        )));
    }
    Ok(())
}

fn parse_window(spec: &str) -> Result<(f64, f64), CliError> {
    let (lo, hi) = spec
        .split_once(',')
        .ok_or_else(|| CliError::Config(format!("--fit-window '{spec}' must be 'lo,hi'")))?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("--fit-window start is not a number: '{lo}'")))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("--fit-window end is not a number: '{hi}'")))?;
    Ok((lo, hi))
}

fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn simulate_cmd(a: SimulateArgs, out_dir: &Path, threads: &str) -> Result<(), CliError> {
    let entry = lookup_model(&a.model)?;
    let (profile, profile_desc) = resolve_profile(&entry, a.scheme, a.profile.as_deref())?;
    if a.paths == 0 {
        return Err(CliError::Config("--paths must be at least 1".to_string()));
    }
    let grid = make_grid(entry.model.delay(), a.n, a.horizon)?;
    let out = OutDir::prepare(out_dir)?;

    let mut report = Report::new();
    report.entry("command", "simulate");
    report.entry("model", &entry.name);
    report.entry("scheme", scheme_name(a.scheme));
    report.entry("profile", &profile_desc);
    report.entry("n", a.n);
    report.float("dt", grid.dt());
    report.float("T", a.horizon);
    report.entry("horizon_steps", grid.horizon_steps());
    report.entry("paths", a.paths);
    report.entry("seed", a.seed);
    report.entry("threads", threads);
    report.entry("out_dir", out_dir.display());

    let kind = scheme_kind(a.scheme);
    for k in 0..a.paths {
        let lattice = BrownianLattice::generate(
            a.seed,
            u64::from(k),
            entry.model.noise_dim(),
            grid.dt(),
            a.horizon,
        )?;
        let traj = simulate(&entry.model, profile.as_ref(), &grid, kind, &lattice)?;
        let file = if a.paths == 1 {
            "path.csv".to_string()
        } else {
            format!("path_{k}.csv")
        };
        out.write(&file, &path_csv(&traj))?;

        let clamped = (1..=grid.horizon_steps())
            .filter(|&i| traj.was_truncated(i))
            .count();
        report.entry(&format!("path_{k}.file"), &file);
        report.entry(&format!("path_{k}.clamped_steps"), clamped);
        if let Some(bound) = traj.truncation_bound() {
            report.float(&format!("path_{k}.truncation_bound"), bound);
        }
        if let Some(step) = traj.first_nonfinite_step() {
            report.entry(&format!("path_{k}.first_nonfinite_step"), step);
        }
        report.float(&format!("path_{k}.terminal_norm"), l2_norm(traj.terminal()));
        println!(
            "path {k}: wrote {file} ({} steps, {clamped} clamped)",
            grid.horizon_steps()
        );
    }

    out.write("report.txt", &report.render())?;
    Ok(())
}

/// One row per grid point from t = 0 to the horizon: time, every state
/// coordinate, the pre- and post-clamp norms, and whether the clamp fired.
/// Row 0 is the initial condition, so pre = post = |ξ(0)| there. Non-finite
/// states (possible under the classical scheme) print as NaN/inf.
fn path_csv(traj: &PathTrajectory) -> String {
    let d = traj.state_dim();
    let mut header = String::from("t");
    for j in 1..=d {
        header.push_str(&format!(",x_{j}"));
    }
    header.push_str(",pre_norm,post_norm,truncated");
    let mut csv = Csv::new(&header);
    let mut fields: Vec<String> = Vec::with_capacity(d + 4);
    for i in 0..=traj.last_index() {
        let state = traj.state(i);
        let post = l2_norm(state);
        let (pre, clamped) = if i == 0 {
            (post, false)
        } else {
            (traj.pre_norm(i as usize), traj.was_truncated(i as usize))
        };
        fields.clear();
        fields.push(fmt_float(traj.grid().time_of(i)));
        fields.extend(state.iter().map(|&x| fmt_float(x)));
        fields.push(fmt_float(pre));
        fields.push(fmt_float(post));
        fields.push(if clamped { "1" } else { "0" }.to_string());
        csv.row(&fields);
    }
    csv.into_string()
}

// ---------------------------------------------------------------------------
// converge
// ---------------------------------------------------------------------------

fn converge_cmd(a: ConvergeArgs, out_dir: &Path, threads: &str) -> Result<(), CliError> {
    let entry = lookup_model(&a.model)?;
    // The coupled study always runs the growth-matched truncated scheme.
    let (profile, profile_desc) = resolve_profile(&entry, SchemeArg::Tem, a.profile.as_deref())?;
    let profile = profile.expect("tem resolution always yields a profile");
    let p = a.p.unwrap_or_else(|| default_moment_order(&entry.name));
    let out = OutDir::prepare(out_dir)?;

    let study = strong_error_study(
        &entry.model,
        &profile,
        a.horizon,
        p,
        &a.n_list,
        a.ref_n,
        a.samples,
        a.seed,
    )?;

    let mut csv = Csv::new("dt,samples,error,stderr");
    for row in &study.rows {
        println!(
            "dt = {:.6e}: error moment = {:.6e} (stderr {:.6e})",
            row.dt, row.error_estimate, row.standard_error
        );
        csv.row(&[
            fmt_float(row.dt),
            row.sample_count.to_string(),
            fmt_float(row.error_estimate),
            fmt_float(row.standard_error),
        ]);
    }
    out.write("converge.csv", &csv.into_string())?;

    let n_list = a
        .n_list
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut report = Report::new();
    report.entry("command", "converge");
    report.entry("model", &entry.name);
    report.entry("scheme", "tem");
    report.entry("profile", &profile_desc);
    report.float("p", p);
    report.float("T", a.horizon);
    report.entry("n_list", &n_list);
    report.entry("ref_n", a.ref_n);
    report.float("ref_dt", study.ref_dt);
    report.entry("samples", a.samples);
    report.entry("seed", a.seed);
    report.entry("threads", threads);
    report.entry("out_dir", out_dir.display());
    match &study.fit {
        Some(fit) => {
            report.float("fitted_slope", fit.slope);
            report.float("fitted_slope_ci_halfwidth", fit.ci_halfwidth);
            report.float("fitted_intercept", fit.intercept);
            println!(
                "fitted slope {:.4} (ci halfwidth {:.4}) over {} step sizes",
                fit.slope,
                fit.ci_halfwidth,
                study.rows.len()
            );
        }
        None => {
            report.entry(
                "fitted_slope",
                "unavailable (needs at least 3 step sizes with positive error)",
            );
        }
    }
    out.write("report.txt", &report.render())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

fn stability_cmd(a: StabilityArgs, out_dir: &Path, threads: &str) -> Result<(), CliError> {
    let entry = lookup_model(&a.model)?;
    let (profile, profile_desc) =
        resolve_profile(&entry, SchemeArg::StabTem, a.profile.as_deref())?;
    let profile = profile.expect("stab-tem resolution always yields a profile");
    let window = match &a.fit_window {
        Some(spec) => parse_window(spec)?,
        None => (entry.model.delay(), a.horizon),
    };
    let out = OutDir::prepare(out_dir)?;

    let study = stability_study(
        &entry.model,
        &profile,
        entry.stability.as_ref(),
        a.n,
        a.horizon,
        a.samples,
        a.as_samples,
        a.seed,
        a.epsilon,
        window,
    )?;

    let mut ms_csv = Csv::new("t,mean_square,stderr");
    for ((t, ms), se) in study
        .ms
        .times
        .iter()
        .zip(&study.ms.mean_squares)
        .zip(&study.ms.standard_errors)
    {
        ms_csv.row(&[fmt_float(*t), fmt_float(*ms), fmt_float(*se)]);
    }
    out.write("stability_ms.csv", &ms_csv.into_string())?;

    let mut as_csv = Csv::new("path,exponent");
    for (k, e) in study.as_report.exponents.iter().enumerate() {
        as_csv.row(&[k.to_string(), fmt_float(*e)]);
    }
    out.write("stability_as.csv", &as_csv.into_string())?;

    println!(
        "mean-square decay slope {:.4} over window [{}, {}]{}",
        study.ms.slope,
        window.0,
        window.1,
        if study.ms.extinct {
            " (paths hit zero inside the window)"
        } else {
            ""
        }
    );
    println!(
        "largest pathwise exponent {:.4} over {} paths",
        study.as_report.max_exponent,
        study.as_report.exponents.len()
    );

    let mut report = Report::new();
    report.entry("command", "stability");
    report.entry("model", &entry.name);
    report.entry("scheme", "stab-tem");
    report.entry("profile", &profile_desc);
    report.entry("n", a.n);
    report.float("dt", study.dt);
    report.float("T", a.horizon);
    report.entry("samples", a.samples);
    report.entry("as_samples", a.as_samples);
    report.float("epsilon", a.epsilon);
    report.float("fit_window_lo", window.0);
    report.float("fit_window_hi", window.1);
    report.entry("seed", a.seed);
    report.entry("threads", threads);
    report.entry("out_dir", out_dir.display());
    report.float("ms_slope", study.ms.slope);
    report.entry("ms_extinct", study.ms.extinct);
    report.float("as_max_exponent", study.as_report.max_exponent);
    match study.gamma_theoretical {
        Some(gamma) => {
            report.float("gamma_theoretical", gamma);
            let threshold = -(gamma - a.epsilon) / 2.0;
            report.float("as_exponent_threshold", threshold);
            report.float(
                "as_fraction_at_threshold",
                study.as_report.fraction_at_most(threshold),
            );
        }
        None => report.entry(
            "gamma_theoretical",
            "unavailable (no rate constants on file)",
        ),
    }
    match study.dt_bar {
        Some(bar) => {
            report.float("dt_bar", bar);
            let within = study.step_within_bound.unwrap_or(false);
            report.entry("step_within_bound", within);
        }
        None => report.entry("dt_bar", "unavailable (no rate constants on file)"),
    }
    out.write("report.txt", &report.render())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gamma
// ---------------------------------------------------------------------------

fn gamma_cmd(a: GammaArgs) -> Result<(), CliError> {
    let gamma = gamma_solve(a.k6bar, a.k6, a.k7bar, a.k7, a.tau)?;
    let (c1, c2) = gamma_feasibility(a.k6, a.k7, a.tau, gamma);
    println!("gamma_star = {gamma:.9}");
    println!(
        "at gamma_star: drift constraint k6*exp(gamma*tau) + gamma = {c1:.4} (bound {}), \
         noise constraint k7*exp(gamma*tau) = {c2:.4} (bound {})",
        a.k6bar, a.k7bar
    );
    // The supremum itself is unusable downstream (its constraints bind with
    // zero slack), so also quote a safely rounded-down two-decimal rate.
    let practical = (gamma * 100.0).floor() / 100.0;
    if practical > 0.0 {
        let (p1, p2) = gamma_feasibility(a.k6, a.k7, a.tau, practical);
        println!(
            "practical rate {practical} (gamma_star rounded down to 0.01): \
             drift constraint = {p1:.4}, noise constraint = {p2:.4}"
        );
    }

    if let Some(candidate) = a.gamma {
        if !(candidate > 0.0 && candidate.is_finite()) {
            return Err(CliError::Config(format!(
                "--gamma candidate must be positive and finite, got {candidate}"
            )));
        }
        let (d1, d2) = gamma_feasibility(a.k6, a.k7, a.tau, candidate);
        let feasible = d1 <= a.k6bar && d2 <= a.k7bar;
        println!(
            "at gamma = {candidate}: drift constraint = {d1:.4}, noise constraint = {d2:.4} -> {}",
            if feasible { "feasible" } else { "infeasible" }
        );
    }

    match (a.epsilon, a.k_hat, a.mu) {
        (None, None, None) => {}
        (Some(epsilon), Some(k_hat), Some(mu)) => {
            let bar = max_stable_stepsize(gamma, epsilon, a.k6, k_hat, mu, a.tau)?;
            println!(
                "max step size for decay at rate gamma - epsilon: {}",
                fmt_float(bar)
            );
        }
        _ => {
            return Err(CliError::Config(
                "--epsilon, --k-hat and --mu must be given together".to_string(),
            ))
        }
    }
    Ok(())
}
