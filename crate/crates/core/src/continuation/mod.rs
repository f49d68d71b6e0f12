//! Branches of periodic orbits in the delay, their assembly into connected
//! components, and the structural checks on them.
//!
//! Orbits are computed as zeros of a Fourier collocation system and followed
//! by pseudo-arclength continuation; this handles unstable orbits as well as
//! stable ones. When the collocation cannot resolve an orbit, stable orbits are
//! followed by natural continuation of simulations instead.

pub mod periodic;

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dde::{self, History, IntegrateOptions, Orbit, OrbitOptions};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::fit_slope;
use crate::spectral::{HopfCatalog, HopfPoint, Transversality};
use periodic::{Constraint, Grid, NewtonOptions, PeriodicState, System};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartAnchor {
    Hopf(HopfPoint),
    /// Limit cycle of the delay-free model.
    OdeLimitCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EndAnchor {
    /// Amplitude vanished at `tau`; `matched` is the catalog point within 2%.
    Hopf { tau: f64, matched: Option<HopfPoint> },
    Lost { tau: f64, reason: String },
    DomainBoundary { tau: f64 },
}

impl EndAnchor {
    pub fn tau(&self) -> f64 {
        match self {
            EndAnchor::Hopf { tau, .. } | EndAnchor::Lost { tau, .. } | EndAnchor::DomainBoundary { tau } => *tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    SimulationContinuation,
    PeriodicNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub tau: f64,
    pub orbit: Orbit,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub k: f64,
    pub start: StartAnchor,
    pub end: EndAnchor,
    pub points: Vec<BranchPoint>,
    /// The delay reversed direction somewhere along the branch (fold of cycles).
    pub fold_back: bool,
}

impl Branch {
    pub fn start_tau(&self) -> f64 {
        match self.start {
            StartAnchor::Hopf(h) => h.tau,
            StartAnchor::OdeLimitCycle => 0.0,
        }
    }

    /// `(tau_min, tau_max)` over stored points and anchors.
    pub fn tau_span(&self) -> (f64, f64) {
        let mut lo = self.start_tau().min(self.end.tau());
        let mut hi = self.start_tau().max(self.end.tau());
        for pt in &self.points {
            lo = lo.min(pt.tau);
            hi = hi.max(pt.tau);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Initial collocation nodes (odd).
    pub nodes: usize,
    pub max_nodes: usize,
    /// Midpoint defect above which the grid is refined.
    pub defect_tol: f64,
    /// First-harmonic amplitude of `ln x` for the first two orbits off a Hopf point.
    pub start_amplitude: f64,
    /// Largest delay increment per step, as a fraction of `tau_bar`.
    pub tau_step_fraction: f64,
    pub max_points: usize,
    /// Natural continuation by simulation when the collocation fails.
    pub simulation_fallback: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            nodes: 63,
            max_nodes: 511,
            defect_tol: 1e-6,
            start_amplitude: 0.02,
            tau_step_fraction: 1.0 / 200.0,
            max_points: 2000,
            simulation_fallback: true,
        }
    }
}

fn next_nodes(n: usize) -> usize {
    2 * n + 1
}

/// Continuation state shared by the Hopf and limit-cycle starts.
struct Tracer<'a> {
    p: &'a ModelParams,
    opts: TraceOptions,
    tau_bar: f64,
    tau_max: f64,
    grid: Grid,
}

impl<'a> Tracer<'a> {
    fn system(&self) -> System<'_> {
        System::new(self.p, &self.grid)
    }

    fn refine_grid(&mut self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let m = next_nodes(self.grid.n);
        if m > self.opts.max_nodes {
            return None;
        }
        let st = PeriodicState::from_vector(x).resample(&self.grid, m);
        self.grid = Grid::new(m);
        Some(st.to_vector())
    }

    /// Solves `con` from `guess`, refining the grid until the defect is small.
    fn solve_resolved(&mut self, guess: &DVector<f64>, con: &Constraint) -> Result<(DVector<f64>, usize, f64)> {
        let mut guess = guess.clone();
        let mut con = con.clone();
        loop {
            let (x, it) = self.system().solve(&guess, &con, &NewtonOptions::default())?;
            let defect = self.system().defect(&x);
            if defect <= self.opts.defect_tol {
                return Ok((x, it, defect));
            }
            let old_n = self.grid.n;
            let Some(g) = self.refine_grid(&x) else {
                return Err(Error::NoConvergence {
                    what: "periodic orbit resolution",
                    iterations: old_n,
                    residual: defect,
                });
            };
            if let Constraint::Arclength { base, tangent, ds } = &con {
                let m = self.grid.n;
                let old = Grid::new(old_n);
                let b = PeriodicState::from_vector(base).resample(&old, m).to_vector();
                let t = PeriodicState::from_vector(tangent).resample(&old, m).to_vector();
                con = Constraint::Arclength {
                    base: b,
                    tangent: t,
                    ds: *ds,
                };
            }
            guess = g;
        }
    }
}

/// Follows the branch born at `anchor` (at fixed `K`) in the delay.
pub fn trace_branch(p: &ModelParams, catalog: &HopfCatalog, anchor: &HopfPoint, opts: &TraceOptions) -> Result<Branch> {
    if anchor.crossing == Transversality::Tangential {
        return Err(Error::AnchorDegenerate { tau: anchor.tau });
    }
    let mut tr = new_tracer(p, opts)?;
    let eps = opts.start_amplitude;
    let st = periodic::hopf_guess(p, &tr.grid, anchor.tau, anchor.w, eps)?;
    let lost = |e: Error| Error::LostAtStart(format!("no small orbit at tau = {}: {e}", anchor.tau));
    let (x1, _, _) = tr.solve_resolved(&st.to_vector(), &Constraint::Amplitude(eps)).map_err(lost)?;
    let guess2 = {
        let mut s = PeriodicState::from_vector(&x1);
        let mu = s.u.iter().sum::<f64>() / s.u.len() as f64;
        let mv = s.v.iter().sum::<f64>() / s.v.len() as f64;
        s.u.iter_mut().for_each(|u| *u = mu + 2.0 * (*u - mu));
        s.v.iter_mut().for_each(|v| *v = mv + 2.0 * (*v - mv));
        s.to_vector()
    };
    let (x2, _, d2) = tr.solve_resolved(&guess2, &Constraint::Amplitude(2.0 * eps)).map_err(lost)?;
    let x1 = if x1.len() == x2.len() {
        x1
    } else {
        PeriodicState::from_vector(&x1)
            .resample(&Grid::new((x1.len() - 2) / 2), tr.grid.n)
            .to_vector()
    };
    let hint = &x2 - &x1;
    let mut points = Vec::new();
    for (x, d) in [(&x1, tr.system().defect(&x1)), (&x2, d2)] {
        let st = PeriodicState::from_vector(x);
        points.push(BranchPoint {
            tau: st.tau,
            orbit: st.to_orbit(&tr.grid, d),
            method: Method::PeriodicNewton,
        });
    }
    run(&mut tr, catalog, StartAnchor::Hopf(*anchor), x2, hint, points)
}

/// Follows the branch through the delay-free limit cycle (`K > K_0`).
pub fn trace_from_ode_cycle(p: &ModelParams, catalog: &HopfCatalog, opts: &TraceOptions) -> Result<Branch> {
    if p.k <= p.k_0()? {
        return Err(Error::HypothesisNotMet(format!(
            "the delay-free model has a limit cycle only for K > K_0 = {}",
            p.k_0()?
        )));
    }
    let orbit = ode_limit_cycle(p)?;
    let mut tr = new_tracer(p, opts)?;
    let st = periodic::state_from_orbit(&tr.grid, &orbit, 0.0);
    let lost = |e: Error| Error::LostAtStart(format!("limit cycle not resolved: {e}"));
    let (x0, _, d0) = tr.solve_resolved(&st.to_vector(), &Constraint::Tau(0.0)).map_err(lost)?;
    let mut hint = DVector::zeros(x0.len());
    hint[x0.len() - 1] = 1.0;
    let st = PeriodicState::from_vector(&x0);
    let points = vec![BranchPoint {
        tau: 0.0,
        orbit: st.to_orbit(&tr.grid, d0),
        method: Method::PeriodicNewton,
    }];
    run(&mut tr, catalog, StartAnchor::OdeLimitCycle, x0, hint, points)
}

/// Attracting limit cycle of the delay-free model, by simulation.
pub fn ode_limit_cycle(p: &ModelParams) -> Result<Orbit> {
    let h = History::default_for(p, 0.0);
    let mut t_end = 2000.0 / p.r.min(p.d).max(1e-3).min(1.0);
    for _ in 0..4 {
        let tr = dde::integrate_with(p, 0.0, &h, t_end, false, &IntegrateOptions {
            dt: None,
            keep_from: Some(0.6 * t_end),
        })?;
        if let dde::Attractor::Orbit(o) = dde::detect_attractor(&tr, 0.4) {
            return Ok(o);
        }
        t_end *= 2.0;
    }
    Err(Error::PeriodNotSettled { dispersion: f64::NAN })
}

fn new_tracer<'a>(p: &'a ModelParams, opts: &TraceOptions) -> Result<Tracer<'a>> {
    let tau_max = p.tau_max().ok_or(Error::OutOfDomain {
        what: "K",
        detail: "no interior equilibrium for any delay".into(),
    })?;
    let tau_bar = p.tau_bar().unwrap_or(tau_max);
    Ok(Tracer {
        p,
        opts: *opts,
        tau_bar,
        tau_max,
        grid: Grid::new(opts.nodes | 1),
    })
}

fn match_anchor(catalog: &HopfCatalog, tau: f64, exclude: Option<f64>) -> Option<HopfPoint> {
    catalog
        .points
        .iter()
        .filter(|h| Some(h.tau) != exclude)
        .filter(|h| (h.tau - tau).abs() <= 0.02 * h.tau.max(tau))
        .min_by(|a, b| (a.tau - tau).abs().total_cmp(&(b.tau - tau).abs()))
        .copied()
}

enum Mode {
    Newton { x: DVector<f64>, t: DVector<f64> },
    Simulation { traj: dde::Trajectory, tau: f64, orbit: Orbit },
}

struct RunState {
    points: Vec<BranchPoint>,
    amps: Vec<(f64, f64)>,
    peak_amp: f64,
    fold_back: bool,
    last_dir: f64,
}

impl RunState {
    fn record(&mut self, tau: f64, a1: f64, orbit: Orbit, method: Method) {
        if let Some(prev) = self.points.last() {
            let dir = (tau - prev.tau).signum();
            if dir != 0.0 && self.last_dir != 0.0 && dir != self.last_dir {
                self.fold_back = true;
            }
            if dir != 0.0 {
                self.last_dir = dir;
            }
        }
        self.peak_amp = self.peak_amp.max(a1.abs());
        self.amps.push((tau, a1));
        self.points.push(BranchPoint { tau, orbit, method });
    }
}

fn run(
    tr: &mut Tracer<'_>,
    catalog: &HopfCatalog,
    start: StartAnchor,
    x_start: DVector<f64>,
    hint: DVector<f64>,
    points: Vec<BranchPoint>,
) -> Result<Branch> {
    let opts = tr.opts;
    let tau_cap = opts.tau_step_fraction * tr.tau_bar;
    let start_tau = match start {
        StartAnchor::Hopf(h) => Some(h.tau),
        StartAnchor::OdeLimitCycle => None,
    };
    let t0 = tr.system().tangent(&x_start, &hint)?;
    let mut st = RunState {
        amps: points
            .iter()
            .map(|p| (p.tau, 0.5 * (p.orbit.xmax.ln() - p.orbit.xmin.ln())))
            .collect(),
        peak_amp: 0.0,
        fold_back: false,
        last_dir: t0[t0.len() - 1].signum(),
        points,
    };
    let mut ds = (0.1 * opts.start_amplitude.max(1e-3) / t0[t0.len() - 1].abs().clamp(1e-3, 1.0)).clamp(1e-4, 0.5);
    let ds_min = 1e-7;
    let sim_step0 = tr.tau_bar / 400.0;
    let sim_step_min = tr.tau_bar / 51200.0;
    let mut sim_step = sim_step0;
    let mut mode = Mode::Newton { x: x_start, t: t0 };

    let end = loop {
        if st.points.len() >= opts.max_points {
            break EndAnchor::Lost {
                tau: st.points.last().map_or(0.0, |p| p.tau),
                reason: "point limit reached".into(),
            };
        }
        match mode {
            Mode::Newton { ref mut x, ref mut t } => {
                let nt = t.len() - 1;
                if t[nt].abs() * ds > tau_cap {
                    ds = tau_cap / t[nt].abs();
                }
                let pred = &*x + &*t * ds;
                let con = Constraint::Arclength {
                    base: x.clone(),
                    tangent: t.clone(),
                    ds,
                };
                let n_before = tr.grid.n;
                match tr.solve_resolved(&pred, &con) {
                    Ok((xn, it, defect)) => {
                        let t_old = if tr.grid.n != n_before {
                            PeriodicState::from_vector(t).resample(&Grid::new(n_before), tr.grid.n).to_vector()
                        } else {
                            t.clone()
                        };
                        let tn = tr.system().tangent(&xn, &t_old)?;
                        let ps = PeriodicState::from_vector(&xn);
                        let a1 = tr.grid.first_harmonic(&ps.u).0;
                        if a1 <= 0.0 {
                            // stepped through the Hopf point onto the mirrored orbit
                            st.amps.push((ps.tau, a1));
                            let tau_end = extrapolate_end(&st.amps);
                            break EndAnchor::Hopf {
                                tau: tau_end,
                                matched: match_anchor(catalog, tau_end, start_tau),
                            };
                        }
                        st.record(ps.tau, a1, ps.to_orbit(&tr.grid, defect), Method::PeriodicNewton);
                        *x = xn;
                        *t = tn;
                        if ps.tau <= 0.0 || ps.tau >= tr.tau_max {
                            break EndAnchor::DomainBoundary {
                                tau: ps.tau.clamp(0.0, tr.tau_max),
                            };
                        }
                        let n = st.amps.len();
                        let shrinking = n >= 2 && a1 < st.amps[n - 2].1;
                        if st.peak_amp > 4.0 * opts.start_amplitude && shrinking && a1 < opts.start_amplitude {
                            let tau_end = extrapolate_end(&st.amps);
                            break EndAnchor::Hopf {
                                tau: tau_end,
                                matched: match_anchor(catalog, tau_end, start_tau),
                            };
                        }
                        if it <= 3 {
                            ds = (ds * 1.5).min(2.0);
                        } else if it >= 6 {
                            ds *= 0.7;
                        }
                    }
                    Err(e) => {
                        ds *= 0.5;
                        if ds >= ds_min {
                            continue;
                        }
                        let last = st.points.last().cloned();
                        let switched = match (opts.simulation_fallback, last) {
                            (true, Some(last)) => {
                                let dir = if st.last_dir != 0.0 { st.last_dir } else { 1.0 };
                                start_simulation(tr, &last, dir).ok().map(|(traj, orbit)| (traj, orbit, last.tau))
                            }
                            _ => None,
                        };
                        match switched {
                            Some((traj, orbit, tau)) => {
                                sim_step = sim_step0;
                                mode = Mode::Simulation { traj, tau, orbit };
                            }
                            None => {
                                break EndAnchor::Lost {
                                    tau: st.points.last().map_or(0.0, |p| p.tau),
                                    reason: e.to_string(),
                                }
                            }
                        }
                    }
                }
            }
            Mode::Simulation {
                ref traj,
                tau,
                ref orbit,
            } => {
                let dir = if st.last_dir != 0.0 { st.last_dir } else { 1.0 };
                let tau_new = tau + dir * sim_step;
                if tau_new <= 0.0 || tau_new >= tr.tau_max {
                    break EndAnchor::DomainBoundary {
                        tau: tau_new.clamp(0.0, tr.tau_max),
                    };
                }
                match simulation_step(tr.p, traj, tau_new, orbit) {
                    Ok((traj_new, orb)) => {
                        let ps = periodic::state_from_orbit(&tr.grid, &orb, tau_new);
                        let a1 = tr.grid.first_harmonic(&ps.u).0;
                        st.record(tau_new, a1, orb.clone(), Method::SimulationContinuation);
                        sim_step = (sim_step * 2.0).min(sim_step0);
                        // hand back to the collocation once the orbit is resolvable
                        match resume_newton(tr, &orb, tau_new, dir) {
                            Some((x, t)) => {
                                ds = tau_cap;
                                mode = Mode::Newton { x, t };
                            }
                            None => {
                                mode = Mode::Simulation {
                                    traj: traj_new,
                                    tau: tau_new,
                                    orbit: orb,
                                }
                            }
                        }
                    }
                    Err(e) => {
                        sim_step *= 0.5;
                        if sim_step < sim_step_min {
                            break EndAnchor::Lost {
                                tau,
                                reason: format!("simulation continuation: {e}"),
                            };
                        }
                    }
                }
            }
        }
    };
    Ok(Branch {
        k: tr.p.k,
        start,
        end,
        points: st.points,
        fold_back: st.fold_back,
    })
}

/// Nodes needed for the Fourier coefficients of `u` to decay below `tol`
/// relative to the largest one.
fn nodes_needed(u: &[f64], ladder: &[usize], tol: f64) -> Option<usize> {
    let fine = *ladder.last()?;
    let g = Grid::new(fine);
    let uf = if u.len() == fine { u.to_vec() } else { Grid::new(u.len()).resample(u, fine) };
    let half = (fine - 1) / 2;
    let mags: Vec<f64> = (1..=half)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in uf.iter().enumerate() {
                let th = 2.0 * PI * (k * j) as f64 / fine as f64;
                re += v * th.cos();
                im += v * th.sin();
            }
            (re * re + im * im).sqrt() / fine as f64
        })
        .collect();
    let top = mags.iter().copied().fold(0.0, f64::max);
    let _ = g;
    ladder.iter().copied().find(|&n| {
        let h = (n - 1) / 2;
        let cut = (0.8 * h as f64) as usize;
        mags.iter().skip(cut).all(|m| *m <= tol * top)
    })
}

fn resume_newton(tr: &mut Tracer<'_>, orbit: &Orbit, tau: f64, dir: f64) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut ladder = vec![tr.opts.nodes | 1];
    while next_nodes(*ladder.last()?) <= tr.opts.max_nodes {
        let n = next_nodes(*ladder.last()?);
        ladder.push(n);
    }
    let probe = Grid::new(*ladder.last()?);
    let ps = periodic::state_from_orbit(&probe, orbit, tau);
    let n = nodes_needed(&ps.u, &ladder, 1e-9)?;
    let grid = Grid::new(n);
    let guess = periodic::state_from_orbit(&grid, orbit, tau).to_vector();
    let saved = std::mem::replace(&mut tr.grid, grid);
    let res = tr.solve_resolved(&guess, &Constraint::Tau(tau)).ok().and_then(|(x, _, _)| {
        let sol = PeriodicState::from_vector(&x);
        let close = (sol.period - orbit.period).abs() < 1e-3 * orbit.period;
        let mut hint = DVector::zeros(x.len());
        hint[x.len() - 1] = dir;
        let t = tr.system().tangent(&x, &hint).ok()?;
        close.then_some((x, t))
    });
    if res.is_none() {
        tr.grid = saved;
    }
    res
}

/// Periodic extension of `orbit` sampled on `[-lag, 0]`.
pub fn history_from_orbit(orbit: &Orbit, lag: f64) -> Result<History> {
    let s = &orbit.samples;
    let per = orbit.period;
    let h = per / 400.0;
    let count = ((lag / h).ceil() as usize).max(2);
    let h = lag / count as f64;
    let at = |t: f64| -> (f64, f64) {
        let ph = t.rem_euclid(per);
        let k = s.partition_point(|q| q.0 <= ph).clamp(1, s.len() - 1);
        let (t0, x0, y0) = s[k - 1];
        let (t1, x1, y1) = s[k];
        let w = if t1 > t0 { (ph - t0) / (t1 - t0) } else { 0.0 };
        ((x0.ln() + w * (x1.ln() - x0.ln())).exp(), (y0.ln() + w * (y1.ln() - y0.ln())).exp())
    };
    let mut ts = Vec::with_capacity(count + 1);
    let mut xs = Vec::with_capacity(count + 1);
    let mut ys = Vec::with_capacity(count + 1);
    for k in 0..=count {
        let t = -lag + k as f64 * h;
        let t = if k == count { 0.0 } else { t };
        let (x, y) = at(t);
        ts.push(t);
        xs.push(x);
        ys.push(y);
    }
    History::sampled(ts, xs, ys)
}

/// Last `lag` of a trajectory as initial data.
fn tail_history(traj: &dde::Trajectory, lag: f64) -> Result<History> {
    let end = traj.end_time();
    if end - traj.start_time() < lag {
        return Err(Error::InvalidHistory("stored window shorter than the delay".into()));
    }
    let from = end - lag - traj.dt;
    let (mut ts, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for (t, x, y) in traj.nodes().filter(|n| n.0 >= from) {
        ts.push(t - end);
        xs.push(x);
        ys.push(y);
    }
    if let Some(last) = ts.last_mut() {
        *last = 0.0;
    }
    History::sampled(ts, xs, ys)
}

/// Runs to a settled orbit at `tau` from `history`, chunk by chunk.
fn settle(p: &ModelParams, tau: f64, mut history: History, period: f64) -> Result<(dde::Trajectory, Orbit)> {
    let chunk = 25.0 * period + 2.0 * tau;
    let mut last_err = Error::PeriodNotSettled { dispersion: f64::NAN };
    for _ in 0..8 {
        let traj = dde::integrate_with(p, tau, &history, chunk, false, &IntegrateOptions {
            dt: None,
            keep_from: Some(chunk - 14.0 * period - tau),
        })?;
        match dde::extract_orbit_with(&traj, &OrbitOptions::default()) {
            Ok(o) => return Ok((traj, o)),
            Err(e @ Error::PeriodNotSettled { .. }) => {
                last_err = e;
                history = tail_history(&traj, tau)?;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

fn similar(a: &Orbit, b: &Orbit, tol: f64) -> bool {
    let rel = |x: f64, y: f64| (x - y).abs() <= tol * x.abs().max(y.abs());
    rel(a.period, b.period) && rel(a.xmax, b.xmax) && rel(a.ymax, b.ymax)
}

fn start_simulation(tr: &Tracer<'_>, last: &BranchPoint, _dir: f64) -> Result<(dde::Trajectory, Orbit)> {
    let h = history_from_orbit(&last.orbit, last.tau)?;
    let (traj, orbit) = settle(tr.p, last.tau, h, last.orbit.period)?;
    if !similar(&orbit, &last.orbit, 0.02) {
        return Err(Error::ConditionNotMet("orbit is not attracting".into()));
    }
    Ok((traj, orbit))
}

fn simulation_step(p: &ModelParams, traj: &dde::Trajectory, tau: f64, prev: &Orbit) -> Result<(dde::Trajectory, Orbit)> {
    let h = tail_history(traj, tau)?;
    let (traj, orbit) = settle(p, tau, h, prev.period)?;
    if !similar(&orbit, prev, 0.05) {
        return Err(Error::ConditionNotMet("simulation jumped to a different attractor".into()));
    }
    Ok((traj, orbit))
}

/// Delay where the first harmonic vanishes, from `tau` linear in `a1^2`
/// over the last few points.
fn extrapolate_end(amps: &[(f64, f64)]) -> f64 {
    let n = amps.len();
    let tail: Vec<(f64, f64)> = amps.iter().rev().take(4).copied().collect();
    let xs: Vec<f64> = tail.iter().map(|p| p.1 * p.1).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let Some(slope) = fit_slope(&xs, &ys) else {
        return amps[n - 1].0;
    };
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    my - slope * mx
}

/// Follows every catalog Hopf point and, for `K > K_0`, the delay-free
/// limit cycle. Branches come back in catalog order, the limit-cycle
/// branch last.
pub fn trace_all(p: &ModelParams, catalog: &HopfCatalog, opts: &TraceOptions) -> Vec<Result<Branch>> {
    use rayon::prelude::*;
    let mut out: Vec<Result<Branch>> = catalog
        .points
        .par_iter()
        .map(|h| trace_branch(p, catalog, h, opts))
        .collect();
    if p.k_0().map(|k0| p.k > k0).unwrap_or(false) {
        out.push(trace_from_ode_cycle(p, catalog, opts));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coincidence {
    /// Traced from both anchors; each trace ends at the other anchor and the
    /// curves agree where they overlap.
    Coincident,
    /// Traced from one anchor only, ending at the other.
    Linked,
    /// Traced from both anchors, but the curves disagree.
    Mismatch,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPair {
    pub n: u32,
    pub tau_a: f64,
    pub tau_b: f64,
    pub coincidence: Coincidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub k: f64,
    pub pairs: Vec<ComponentPair>,
    /// Catalog points whose branches reached no other anchor.
    pub unpaired: Vec<f64>,
    /// End of the branch through the delay-free limit cycle, when it reached a Hopf point.
    pub ode_component_end: Option<f64>,
    /// Nesting of `[tau_n^-, tau_n^+]` over `n`.
    pub nesting: Verdict,
    /// Scaled-period bounds per branch start (`n >= 1`, `K < K_0`).
    pub scaled_periods: Vec<(f64, Verdict)>,
    pub fold_back: bool,
}

fn hopf_end(b: &Branch) -> Option<HopfPoint> {
    match &b.end {
        EndAnchor::Hopf { matched, .. } => *matched,
        _ => None,
    }
}

/// Largest relative mismatch of period and amplitude between points of `a`
/// and the segments of `b` bracketing the same delay.
fn curve_mismatch(a: &Branch, b: &Branch) -> Option<f64> {
    let amp_scale = b.points.iter().map(|p| p.orbit.amp_x()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut worst: Option<f64> = None;
    for pa in &a.points {
        let mut best: Option<f64> = None;
        for w in b.points.windows(2) {
            let (p0, p1) = (&w[0], &w[1]);
            let (lo, hi) = (p0.tau.min(p1.tau), p0.tau.max(p1.tau));
            if pa.tau < lo || pa.tau > hi || hi == lo {
                continue;
            }
            let f = (pa.tau - p0.tau) / (p1.tau - p0.tau);
            let per = p0.orbit.period + f * (p1.orbit.period - p0.orbit.period);
            // amplitude squared is close to linear in the delay near Hopf points
            let (a0, a1) = (p0.orbit.amp_x().powi(2), p1.orbit.amp_x().powi(2));
            let amp = (a0 + f * (a1 - a0)).max(0.0).sqrt();
            let e = ((pa.orbit.period - per).abs() / per).max((pa.orbit.amp_x() - amp).abs() / amp_scale);
            best = Some(best.map_or(e, |b: f64| b.min(e)));
        }
        if let Some(e) = best {
            worst = Some(worst.map_or(e, |w: f64| w.max(e)));
        }
    }
    worst
}

/// Pairs branches into components and checks coincidence, nesting and the
/// scaled-period bounds.
pub fn assemble_components(p: &ModelParams, catalog: &HopfCatalog, branches: &[Branch]) -> ComponentReport {
    let from = |tau: f64| {
        branches
            .iter()
            .find(|b| matches!(b.start, StartAnchor::Hopf(h) if h.tau == tau))
    };
    let mut pairs: Vec<ComponentPair> = Vec::new();
    let mut unpaired = Vec::new();
    for h in &catalog.points {
        if pairs.iter().any(|c| c.tau_a == h.tau || c.tau_b == h.tau) {
            continue;
        }
        let fwd = from(h.tau);
        let partner = fwd.and_then(hopf_end);
        let partner = partner.or_else(|| {
            // a branch started elsewhere may end here
            branches
                .iter()
                .filter_map(|b| match (b.start, hopf_end(b)) {
                    (StartAnchor::Hopf(s), Some(e)) if e.tau == h.tau => Some(s),
                    _ => None,
                })
                .next()
        });
        let Some(q) = partner else {
            unpaired.push(h.tau);
            continue;
        };
        let back = from(q.tau);
        let back_ok = back.and_then(hopf_end).map(|e| e.tau == h.tau).unwrap_or(false);
        let fwd_ok = fwd.and_then(hopf_end).map(|e| e.tau == q.tau).unwrap_or(false);
        let coincidence = match (fwd_ok, back_ok) {
            (true, true) => {
                let (a, b) = (fwd.unwrap(), back.unwrap());
                let m = curve_mismatch(a, b).into_iter().chain(curve_mismatch(b, a)).fold(0.0, f64::max);
                if m <= 0.01 {
                    Coincidence::Coincident
                } else {
                    Coincidence::Mismatch
                }
            }
            (true, false) | (false, true) => Coincidence::Linked,
            _ => Coincidence::Inconclusive,
        };
        let (tau_a, tau_b) = (h.tau.min(q.tau), h.tau.max(q.tau));
        pairs.push(ComponentPair {
            n: h.n,
            tau_a,
            tau_b,
            coincidence,
        });
    }
    pairs.sort_by(|a, b| (a.n, a.tau_a).partial_cmp(&(b.n, b.tau_a)).unwrap());

    let ode_component_end = branches
        .iter()
        .find(|b| b.start == StartAnchor::OdeLimitCycle)
        .and_then(hopf_end)
        .map(|h| h.tau);

    let nesting = nesting_verdict(catalog);
    let below_k0 = p.k_0().map(|k0| p.k < k0).unwrap_or(false);
    let scaled_periods = branches
        .iter()
        .filter_map(|b| match b.start {
            StartAnchor::Hopf(h) if h.n >= 1 && below_k0 => Some((h.tau, scaled_period_check(p, b, h.n).map(|c| c.verdict).unwrap_or(Verdict::Inconclusive))),
            _ => None,
        })
        .collect();
    ComponentReport {
        k: p.k,
        pairs,
        unpaired,
        ode_component_end,
        nesting,
        scaled_periods,
        fold_back: branches.iter().any(|b| b.fold_back),
    }
}

/// Strict nesting of the catalog intervals `[tau_n^-, tau_n^+]` for every
/// branch index with exactly two roots.
pub fn nesting_verdict(catalog: &HopfCatalog) -> Verdict {
    let mut intervals = Vec::new();
    for (n, &c) in catalog.chi.iter().enumerate() {
        match c {
            0 => continue,
            2 => {
                let b: Vec<&HopfPoint> = catalog.branch(n as u32).collect();
                if b.len() != 2 {
                    return Verdict::Inconclusive;
                }
                intervals.push((b[0].tau, b[1].tau));
            }
            _ => return Verdict::Inconclusive,
        }
    }
    if intervals.is_empty() {
        return Verdict::Inconclusive;
    }
    let ok = intervals.windows(2).all(|w| w[0].0 < w[1].0 && w[1].1 < w[0].1);
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodCheck {
    pub verdict: Verdict,
    /// Smallest and largest `T / tau` along the branch.
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// `T / tau` must lie in `(1/(n+1), 1/n)` for every orbit of a branch born
/// at a Hopf point of index `n >= 1`, when `K < K_0`.
pub fn scaled_period_check(p: &ModelParams, branch: &Branch, n: u32) -> Result<PeriodCheck> {
    let k0 = p.k_0()?;
    if p.k >= k0 {
        return Err(Error::HypothesisNotMet(format!("K = {} is not below K_0 = {k0}", p.k)));
    }
    if n == 0 {
        return Err(Error::HypothesisNotMet("branch index must be at least 1".into()));
    }
    let (lo, hi) = (1.0 / (n as f64 + 1.0), 1.0 / n as f64);
    let ratios: Vec<f64> = branch
        .points
        .iter()
        .filter(|pt| pt.tau > 0.0)
        .map(|pt| pt.orbit.period / pt.tau)
        .collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let verdict = if ratios.is_empty() {
        Verdict::Inconclusive
    } else if min_ratio > lo && max_ratio < hi {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(PeriodCheck {
        verdict,
        min_ratio,
        max_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Slope of `ln(amplitude)` against `ln|tau - tau_H|`.
    pub exponent: f64,
    /// `(|tau - tau_H|, x amplitude)` per computed orbit.
    pub samples: Vec<(f64, f64)>,
}

/// Small orbits at first-harmonic amplitudes spanning one decade from
/// `start_amplitude / 2`, and the fitted amplitude exponent.
pub fn hopf_scaling(p: &ModelParams, anchor: &HopfPoint, opts: &TraceOptions) -> Result<ScalingFit> {
    if anchor.crossing == Transversality::Tangential {
        return Err(Error::AnchorDegenerate { tau: anchor.tau });
    }
    let mut tr = new_tracer(p, opts)?;
    let base = 0.5 * opts.start_amplitude;
    let mut x = periodic::hopf_guess(p, &tr.grid, anchor.tau, anchor.w, base)?.to_vector();
    let mut samples = Vec::new();
    for k in 0..=8 {
        let eps = base * 10f64.powf(k as f64 / 8.0);
        let (xn, _, defect) = tr.solve_resolved(&x, &Constraint::Amplitude(eps))?;
        let st = PeriodicState::from_vector(&xn);
        let orbit = st.to_orbit(&tr.grid, defect);
        samples.push(((st.tau - anchor.tau).abs(), orbit.amp_x()));
        x = xn;
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let exponent = fit_slope(&xs, &ys).ok_or(Error::NoConvergence {
        what: "amplitude scaling fit",
        iterations: samples.len(),
        residual: f64::NAN,
    })?;
    Ok(ScalingFit { exponent, samples })
}

/// Amplitude exponent from a traced branch's own points next to the Hopf
/// point `tau_h`, over the last decade of amplitude.
pub fn branch_tail_exponent(branch: &Branch, tau_h: f64) -> Option<f64> {
    let (lo, hi) = branch.tau_span();
    let near: Vec<(f64, f64)> = branch
        .points
        .iter()
        .map(|pt| ((pt.tau - tau_h).abs(), pt.orbit.amp_x()))
        .filter(|(d, a)| *d > 0.0 && *d < 0.5 * (hi - lo) && *a > 0.0)
        .collect();
    let amin = near.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let sel: Vec<(f64, f64)> = near.into_iter().filter(|p| p.1 <= 10.0 * amin).collect();
    let xs: Vec<f64> = sel.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = sel.iter().map(|s| s.1.ln()).collect();
    (sel.len() >= 3).then(|| fit_slope(&xs, &ys)).flatten()
}
