//! Fixed-step RK4 integration of the delayed model, in original time (delay
//! `tau`) or in rescaled time `s = t / tau` (unit delay, right-hand side
//! multiplied by `tau`).
//!
//! The prey is carried as `ln x`, so it stays positive however deep it dips.
//! The step must divide the delay, so delayed stage values fall on stored
//! nodes or exactly half-way between two of them; the half-way values come
//! from the cubic Hermite interpolant built on node values and derivatives.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{interior_point, ModelParams};
use crate::numeric::refine_bracket;
use crate::spectral;

/// Initial data on `[-lag, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum History {
    Constant { x: f64, y: f64 },
    /// Samples at strictly increasing times covering `[-lag, 0]`, joined by
    /// cubic Hermite pieces with finite-difference slopes.
    Sampled { t: Vec<f64>, x: Vec<f64>, y: Vec<f64> },
}

fn check_state(x: f64, y: f64) -> Result<()> {
    if x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidHistory(format!(
            "history values must be finite and nonnegative (got x = {x}, y = {y})"
        )))
    }
}

impl History {
    pub fn constant(x: f64, y: f64) -> Result<Self> {
        check_state(x, y)?;
        Ok(History::Constant { x, y })
    }

    pub fn sampled(t: Vec<f64>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() < 2 || t.len() != x.len() || t.len() != y.len() {
            return Err(Error::InvalidHistory(
                "sampled history needs at least two (t, x, y) triples of equal length".into(),
            ));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidHistory("sample times must increase strictly".into()));
        }
        for (&xi, &yi) in x.iter().zip(&y) {
            check_state(xi, yi)?;
        }
        Ok(History::Sampled { t, x, y })
    }

    /// Default start: the interior equilibrium raised by 1%, or a generic
    /// positive state when there is none.
    pub fn default_for(p: &ModelParams, tau: f64) -> Self {
        match interior_point(p, tau).filter(|e| e.y > 0.0) {
            Some(e) => History::Constant {
                x: 1.01 * e.x,
                y: 1.01 * e.y,
            },
            None => History::Constant { x: 0.5 * p.k, y: 1.0 },
        }
    }

    fn validate_span(&self, lag: f64) -> Result<()> {
        if let History::Sampled { t, .. } = self {
            let tol = 1e-9 * lag.max(1.0);
            if t[0] > -lag + tol || t[t.len() - 1].abs() > tol {
                return Err(Error::InvalidHistory(format!(
                    "samples span [{}, {}], need [{}, 0]",
                    t[0],
                    t[t.len() - 1],
                    -lag
                )));
            }
        }
        Ok(())
    }

    fn min_y(&self) -> f64 {
        match self {
            History::Constant { y, .. } => *y,
            History::Sampled { y, .. } => y.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    fn max_xy(&self) -> (f64, f64) {
        match self {
            History::Constant { x, y } => (*x, *y),
            History::Sampled { x, y, .. } => (
                x.iter().copied().fold(0.0, f64::max),
                y.iter().copied().fold(0.0, f64::max),
            ),
        }
    }

    /// Value at `t` (clamped to the sampled span).
    pub fn eval(&self, t: f64) -> (f64, f64) {
        match self {
            History::Constant { x, y } => (*x, *y),
            History::Sampled { t: ts, x, y } => {
                let n = ts.len();
                let t = t.clamp(ts[0], ts[n - 1]);
                let j = match ts.partition_point(|&s| s <= t) {
                    0 => 0,
                    k => (k - 1).min(n - 2),
                };
                let slope = |v: &[f64], i: usize| -> f64 {
                    let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
                    (v[hi] - v[lo]) / (ts[hi] - ts[lo])
                };
                let h = ts[j + 1] - ts[j];
                let s = (t - ts[j]) / h;
                let xv = hermite(x[j], x[j + 1], slope(x, j), slope(x, j + 1), h, s);
                let yv = hermite(y[j], y[j + 1], slope(y, j), slope(y, j + 1), h, s);
                (xv.max(0.0), yv.max(0.0))
            }
        }
    }
}

/// Cubic Hermite on one interval of width `h`, at fraction `s`.
fn hermite(z0: f64, z1: f64, f0: f64, f1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * z0
        + (s3 - 2.0 * s2 + s) * h * f0
        + (-2.0 * s3 + 3.0 * s2) * z1
        + (s3 - s2) * h * f1
}

fn hermite_deriv(z0: f64, z1: f64, f0: f64, f1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    ((6.0 * s2 - 6.0 * s) * z0 + (6.0 * s - 6.0 * s2) * z1) / h
        + (3.0 * s2 - 4.0 * s + 1.0) * f0
        + (3.0 * s2 - 2.0 * s) * f1
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntegrateOptions {
    /// Step size; defaults to [`default_dt`].
    pub dt: Option<f64>,
    /// Nodes older than this time (minus one delay) may be discarded.
    pub keep_from: Option<f64>,
}

/// Right-hand side with the survival factor and time scale frozen.
#[derive(Debug, Clone, Copy)]
struct Field {
    r: f64,
    k: f64,
    m: f64,
    a: f64,
    d: f64,
    gain: f64,
    alpha: f64,
}

impl Field {
    fn new(p: &ModelParams, tau: f64, alpha: f64) -> Self {
        Self {
            r: p.r,
            k: p.k,
            m: p.m,
            a: p.a,
            d: p.d,
            gain: p.survival(tau) * p.c * p.m,
            alpha,
        }
    }

    /// Rates of `(ln x, y)` at prey `x = e^u`.
    #[inline]
    fn eval_log(&self, u: f64, y: f64, xl: f64, yl: f64) -> (f64, f64) {
        let x = u.exp();
        let du = self.r * (1.0 - x / self.k) - self.m * y / (self.a + x);
        let dy = -self.d * y + self.gain * xl * yl / (self.a + xl);
        (self.alpha * du, self.alpha * dy)
    }
}

/// A computed solution: nodes `i dt` with values and derivatives, plus the
/// history it started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: ModelParams,
    pub tau: f64,
    /// Time is `t / tau` and the delay is one.
    pub scaled: bool,
    pub dt: f64,
    pub history: History,
    first: usize,
    /// `ln x` and its derivative.
    u: Vec<f64>,
    y: Vec<f64>,
    fu: Vec<f64>,
    fy: Vec<f64>,
}

/// Steps per delay interval chosen so that `dt` times the fastest rate in
/// play stays below 0.25, and never fewer than 200.
pub fn default_steps_per_delay(p: &ModelParams, tau: f64) -> usize {
    let rate = default_rate(p, tau);
    ((tau * rate / 0.25).ceil() as usize).max(200)
}

fn default_rate(p: &ModelParams, tau: f64) -> f64 {
    p.r.max(p.m * p.predator_bound(tau) / p.a).max(p.d)
}

/// Like [`default_dt`], but also fast enough for the transient set off by
/// `history`.
pub fn default_dt_for(p: &ModelParams, tau: f64, scaled: bool, history: &History) -> f64 {
    let (hx, hy) = history.max_xy();
    let rate = default_rate(p, tau)
        .max(p.r * hx / p.k)
        .max(p.m * hy / p.a);
    if tau == 0.0 {
        return (0.25 / rate).min(0.01);
    }
    let n = ((tau * rate / 0.25).ceil() as usize).max(default_steps_per_delay(p, tau)) as f64;
    if scaled {
        1.0 / n
    } else {
        tau / n
    }
}

/// Default step in the time units of the chosen system.
pub fn default_dt(p: &ModelParams, tau: f64, scaled: bool) -> f64 {
    if tau == 0.0 {
        return (0.25 / default_rate(p, 0.0)).min(0.01);
    }
    let n = default_steps_per_delay(p, tau) as f64;
    if scaled {
        1.0 / n
    } else {
        tau / n
    }
}

/// Default run length, `400 max(2 pi / w, tau)`.
pub fn default_t_end(p: &ModelParams, tau: f64) -> f64 {
    let w = spectral::omega(p, tau).ok().filter(|w| *w > 1e-8);
    let period = match w {
        Some(w) => 2.0 * PI / w,
        None => 2.0 * PI / p.d.max(1e-3).min(1.0),
    };
    400.0 * period.max(tau)
}

pub fn integrate(p: &ModelParams, tau: f64, history: &History, t_end: f64, dt: Option<f64>) -> Result<Trajectory> {
    integrate_with(p, tau, history, t_end, false, &IntegrateOptions { dt, keep_from: None })
}

pub fn integrate_scaled(
    p: &ModelParams,
    tau: f64,
    history: &History,
    t_end: f64,
    dt: Option<f64>,
) -> Result<Trajectory> {
    integrate_with(p, tau, history, t_end, true, &IntegrateOptions { dt, keep_from: None })
}

/// Integrates up to `t_end`; with `scaled` the history lives on `[-1, 0]`
/// and times are in units of `tau`.
pub fn integrate_with(
    p: &ModelParams,
    tau: f64,
    history: &History,
    t_end: f64,
    scaled: bool,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let p = p.validated()?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::OutOfDomain {
            what: "tau",
            detail: format!("delay must be finite and nonnegative (got {tau})"),
        });
    }
    if scaled && tau == 0.0 {
        return Err(Error::OutOfDomain {
            what: "tau",
            detail: "the rescaled system needs a positive delay".into(),
        });
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::StepSizeInvalid(format!("t_end = {t_end} must be finite and nonnegative")));
    }
    let (lag, alpha) = if scaled { (1.0, tau) } else { (tau, 1.0) };
    history.validate_span(lag)?;

    let dt = opts.dt.unwrap_or_else(|| default_dt_for(&p, tau, scaled, history));
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::StepSizeInvalid(format!("dt = {dt} must be positive")));
    }
    let (dt, lag_steps) = if lag > 0.0 {
        let ratio = lag / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio {
            return Err(Error::StepSizeInvalid(format!("dt = {dt} does not divide the delay {lag}")));
        }
        if steps < 20.0 {
            return Err(Error::StepSizeInvalid(format!("dt = {dt} exceeds delay/20 = {}", lag / 20.0)));
        }
        (lag / steps, steps as usize)
    } else {
        (dt, 0)
    };

    let field = Field::new(&p, tau, alpha);
    let strict_y = history.min_y() > 0.0;
    let n_steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;

    let mut tr = Trajectory {
        params: p,
        tau,
        scaled,
        dt,
        history: history.clone(),
        first: 0,
        u: Vec::with_capacity(n_steps.min(1 << 22) + 1),
        y: Vec::with_capacity(n_steps.min(1 << 22) + 1),
        fu: Vec::with_capacity(n_steps.min(1 << 22) + 1),
        fy: Vec::with_capacity(n_steps.min(1 << 22) + 1),
    };

    let (x0, y0) = history.eval(0.0);
    let u0 = x0.ln();
    let (du0, dy0) = if lag_steps == 0 {
        field.eval_log(u0, y0, x0, y0)
    } else {
        let (xl, yl) = history.eval(-lag);
        field.eval_log(u0, y0, xl, yl)
    };
    tr.push(u0, y0, du0, dy0);

    let keep_idx = opts
        .keep_from
        .map(|k| ((k - lag) / dt).floor().max(0.0) as usize)
        .unwrap_or(0);

    for i in 0..n_steps {
        let t = i as f64 * dt;
        let (u, y, k1u, k1y) = tr.node_full(i);
        let h = dt;
        let (u2, y2) = (u + 0.5 * h * k1u, y + 0.5 * h * k1y);
        let (k2u, k2y, k3u, k3y, k4u, k4y);
        if lag_steps == 0 {
            (k2u, k2y) = field.eval_log(u2, y2, u2.exp(), y2);
            let (u3, y3) = (u + 0.5 * h * k2u, y + 0.5 * h * k2y);
            (k3u, k3y) = field.eval_log(u3, y3, u3.exp(), y3);
            let (u4, y4) = (u + h * k3u, y + h * k3y);
            (k4u, k4y) = field.eval_log(u4, y4, u4.exp(), y4);
        } else {
            let (xm, ym) = tr.delayed_mid(i, lag_steps, t + 0.5 * h - lag);
            let (xe, ye) = tr.delayed_node(i + 1, lag_steps);
            (k2u, k2y) = field.eval_log(u2, y2, xm, ym);
            let (u3, y3) = (u + 0.5 * h * k2u, y + 0.5 * h * k2y);
            (k3u, k3y) = field.eval_log(u3, y3, xm, ym);
            let (u4, y4) = (u + h * k3u, y + h * k3y);
            (k4u, k4y) = field.eval_log(u4, y4, xe, ye);
        }
        let un = u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        let yn = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        let t_new = t + h;
        let prey_lost = un.is_nan() || un == f64::INFINITY || (x0 > 0.0 && un == f64::NEG_INFINITY);
        if prey_lost || !yn.is_finite() || yn < 0.0 || (strict_y && yn <= 0.0) {
            return Err(Error::PositivityViolated {
                t: t_new,
                x: un.exp(),
                y: yn,
            });
        }
        let (fun, fyn) = if lag_steps == 0 {
            field.eval_log(un, yn, un.exp(), yn)
        } else {
            let (xl, yl) = tr.delayed_node(i + 1, lag_steps);
            field.eval_log(un, yn, xl, yl)
        };
        tr.push(un, yn, fun, fyn);

        // drop nodes no longer needed, amortised
        if opts.keep_from.is_some() {
            let need = (i + 1).saturating_sub(lag_steps + 2).min(keep_idx);
            if need > tr.first && need - tr.first > tr.u.len() / 2 && need - tr.first > 4096 {
                tr.drain_to(need);
            }
        }
    }
    Ok(tr)
}

impl Trajectory {
    fn push(&mut self, u: f64, y: f64, fu: f64, fy: f64) {
        self.u.push(u);
        self.y.push(y);
        self.fu.push(fu);
        self.fy.push(fy);
    }

    fn drain_to(&mut self, idx: usize) {
        let n = idx - self.first;
        self.u.drain(..n);
        self.y.drain(..n);
        self.fu.drain(..n);
        self.fy.drain(..n);
        self.first = idx;
    }

    #[inline]
    fn node_full(&self, i: usize) -> (f64, f64, f64, f64) {
        let j = i - self.first;
        (self.u[j], self.y[j], self.fu[j], self.fy[j])
    }

    /// State one delay before node `i`.
    #[inline]
    fn delayed_node(&self, i: usize, lag_steps: usize) -> (f64, f64) {
        if i >= lag_steps {
            let j = i - lag_steps - self.first;
            (self.u[j].exp(), self.y[j])
        } else {
            self.history.eval(-((lag_steps - i) as f64) * self.dt)
        }
    }

    /// State one delay before the midpoint of step `i`.
    #[inline]
    fn delayed_mid(&self, i: usize, lag_steps: usize, t_lag: f64) -> (f64, f64) {
        if i >= lag_steps {
            let j = i - lag_steps - self.first;
            let h = self.dt;
            let um = 0.5 * (self.u[j] + self.u[j + 1]) + h * (self.fu[j] - self.fu[j + 1]) / 8.0;
            let xm = um.exp();
            let ym = 0.5 * (self.y[j] + self.y[j + 1]) + h * (self.fy[j] - self.fy[j + 1]) / 8.0;
            (xm, ym)
        } else {
            self.history.eval(t_lag)
        }
    }

    /// Delay in the trajectory's own time units.
    pub fn lag(&self) -> f64 {
        if self.scaled {
            1.0
        } else {
            self.tau
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.first as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        (self.first + self.u.len() - 1) as f64 * self.dt
    }

    /// Stored nodes as `(t, x, y)`.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let (f, dt) = (self.first, self.dt);
        self.u
            .iter()
            .zip(&self.y)
            .enumerate()
            .map(move |(j, (&u, &y))| ((f + j) as f64 * dt, u.exp(), y))
    }

    /// Last stored state.
    pub fn last(&self) -> (f64, f64) {
        (self.u[self.u.len() - 1].exp(), self.y[self.y.len() - 1])
    }

    /// Dense value `(x, y)` at `t`, from the history for `t < 0`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        self.eval_full(t).map(|(x, y, _, _)| (x, y))
    }

    /// Dense value and time derivative at `t`.
    pub fn eval_full(&self, t: f64) -> Result<(f64, f64, f64, f64)> {
        let (start, end) = (self.start_time(), self.end_time());
        let slack = 1e-9 * self.dt;
        if t < 0.0 && self.first == 0 && t >= -self.lag() - slack {
            let (x, y) = self.history.eval(t);
            return Ok((x, y, f64::NAN, f64::NAN));
        }
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::OutOfWindow { t, start, end });
        }
        let u = (t / self.dt - self.first as f64).max(0.0);
        let j = (u.floor() as usize).min(self.u.len().saturating_sub(2));
        if self.u.len() == 1 {
            let x = self.u[0].exp();
            return Ok((x, self.y[0], x * self.fu[0], self.fy[0]));
        }
        let s = u - j as f64;
        let h = self.dt;
        let x = hermite(self.u[j], self.u[j + 1], self.fu[j], self.fu[j + 1], h, s).exp();
        let y = hermite(self.y[j], self.y[j + 1], self.fy[j], self.fy[j + 1], h, s);
        let dx = x * hermite_deriv(self.u[j], self.u[j + 1], self.fu[j], self.fu[j + 1], h, s);
        let dy = hermite_deriv(self.y[j], self.y[j + 1], self.fy[j], self.fy[j + 1], h, s);
        Ok((x, y, dx, dy))
    }

    /// Extremes over nodes with `t >= t0`.
    pub fn extremes_from(&self, t0: f64) -> (f64, f64, f64, f64) {
        self.nodes().filter(|(t, _, _)| *t >= t0).fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), (_, x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        )
    }

    /// Largest `x` and `y` over the last `tail_fraction` of the run.
    pub fn tail_maxima(&self, tail_fraction: f64) -> (f64, f64) {
        let (_, xmax, _, ymax) = self.extremes_from(self.tail_start(tail_fraction));
        (xmax, ymax)
    }

    fn tail_start(&self, tail_fraction: f64) -> f64 {
        let end = self.end_time();
        (end - tail_fraction.clamp(0.0, 1.0) * end).max(self.start_time())
    }

    /// Lyapunov functional of the prey-only state at time `t`:
    /// `x - K - K ln(x/K) + (mK/(da)) y + alpha (c m^2 K e^{-d tau}/(d a)) int_{t-lag}^t x y/(a+x)`,
    /// with `alpha = tau` in rescaled time and 1 otherwise.
    pub fn lyapunov_value(&self, t: f64) -> Result<f64> {
        let p = &self.params;
        let lag = self.lag();
        let (x, y) = self.eval(t)?;
        if t - lag < 0.0 && self.first > 0 {
            return Err(Error::OutOfWindow {
                t: t - lag,
                start: self.start_time(),
                end: self.end_time(),
            });
        }
        self.eval(t - lag)?;
        let alpha = if self.scaled { self.tau } else { 1.0 };
        let coef = alpha * p.c * p.m * p.m * p.k * p.survival(self.tau) / (p.d * p.a);
        let g = |s: f64| -> Result<f64> {
            let (xs, ys) = self.eval(s)?;
            Ok(xs * ys / (p.a + xs))
        };
        // Simpson on each piece between consecutive breakpoints
        let mut cuts = vec![t - lag];
        if lag > 0.0 {
            let j0 = ((t - lag) / self.dt).floor() as i64 + 1;
            let j1 = (t / self.dt).ceil() as i64 - 1;
            for j in j0..=j1 {
                let s = j as f64 * self.dt;
                if s > t - lag && s < t {
                    cuts.push(s);
                }
            }
            cuts.push(t);
        }
        let mut integral = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            integral += (b - a) / 6.0 * (g(a)? + 4.0 * g(0.5 * (a + b))? + g(b)?);
        }
        let k = p.k;
        let log_term = if x > 0.0 { x - k - k * (x / k).ln() } else { f64::INFINITY };
        Ok(log_term + p.m * k / (p.d * p.a) * y + coef * integral)
    }
}

/// Free-function form of [`Trajectory::lyapunov_value`].
pub fn lyapunov_value(traj: &Trajectory, t: f64) -> Result<f64> {
    traj.lyapunov_value(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrbitStability {
    /// Found as the attractor of a simulation.
    Stable,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub period: f64,
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    /// One period of `(t, x, y)`, `t` starting at zero on the section.
    pub samples: Vec<(f64, f64, f64)>,
    pub stability: OrbitStability,
    /// Relative mismatch between the state at the last return and one period earlier.
    pub closure: f64,
}

impl Orbit {
    pub fn amp_x(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn amp_y(&self) -> f64 {
        self.ymax - self.ymin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Attractor {
    Equilibrium { x: f64, y: f64 },
    Orbit(Orbit),
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitOptions {
    /// Section level `x = level`; defaults to the interior `x*`.
    pub section: Option<f64>,
    pub returns: usize,
    pub dispersion_tol: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            section: None,
            returns: 10,
            dispersion_tol: 1e-6,
        }
    }
}

/// Classifies the last `tail_fraction` of a run.
pub fn detect_attractor(traj: &Trajectory, tail_fraction: f64) -> Attractor {
    let t0 = traj.tail_start(tail_fraction);
    let (xmin, xmax, ymin, ymax) = traj.extremes_from(t0);
    let scale = xmax.abs().max(ymax.abs());
    if (xmax - xmin) < 1e-7 * scale && (ymax - ymin) < 1e-7 * scale {
        let (x, y) = traj.last();
        return Attractor::Equilibrium { x, y };
    }
    match extract_orbit_from(traj, t0, &OrbitOptions::default()) {
        Ok(orbit) => {
            // amplitude of the last two cycles must agree too
            let end = traj.end_time();
            let prev = traj.extremes_window(end - 2.0 * orbit.period, end - orbit.period);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
            let cur = traj.extremes_window(end - orbit.period, end);
            let ok = rel(prev.1 - prev.0, cur.1 - cur.0) < 1e-6 && rel(prev.3 - prev.2, cur.3 - cur.2) < 1e-6;
            if ok {
                Attractor::Orbit(orbit)
            } else {
                Attractor::Unresolved
            }
        }
        Err(_) => Attractor::Unresolved,
    }
}

impl Trajectory {
    fn extremes_window(&self, t0: f64, t1: f64) -> (f64, f64, f64, f64) {
        self.nodes().filter(|(t, _, _)| *t >= t0 && *t <= t1).fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), (_, x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        )
    }

    /// Upward crossings of `x = level` at or after `t0`, located on the dense output.
    pub fn section_crossings(&self, level: f64, t0: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let nodes: Vec<(f64, f64, f64)> = self.nodes().filter(|(t, _, _)| *t >= t0).collect();
        for w in nodes.windows(2) {
            let ((ta, xa, _), (tb, xb, _)) = (w[0], w[1]);
            if xa < level && xb >= level {
                let f = |t: f64| self.eval(t).map(|v| v.0 - level).unwrap_or(f64::NAN);
                out.push(refine_bracket(f, ta, tb, xa - level, xb - level, 0.0));
            }
        }
        out
    }
}

/// Periodic orbit from the Poincare section `x = x*`, `x' > 0`.
pub fn extract_orbit(traj: &Trajectory, section: Option<f64>) -> Result<Orbit> {
    extract_orbit_from(
        traj,
        traj.start_time(),
        &OrbitOptions {
            section,
            ..OrbitOptions::default()
        },
    )
}

pub fn extract_orbit_with(traj: &Trajectory, opts: &OrbitOptions) -> Result<Orbit> {
    extract_orbit_from(traj, traj.start_time(), opts)
}

fn extract_orbit_from(traj: &Trajectory, t0: f64, opts: &OrbitOptions) -> Result<Orbit> {
    let p = &traj.params;
    let (xmin, xmax, _, _) = traj.extremes_from(t0);
    let level = opts.section.unwrap_or_else(|| match interior_point(p, traj.tau) {
        Some(e) if e.y > 0.0 => e.x,
        _ => 0.5 * (xmin + xmax),
    });
    if !(xmax - xmin > 1e-9 * xmax.abs()) {
        return Err(Error::SectionNotCrossed { level });
    }
    let cross = traj.section_crossings(level, t0);
    if cross.len() < 2 {
        return Err(Error::SectionNotCrossed { level });
    }
    let returns: Vec<f64> = cross.windows(2).map(|w| w[1] - w[0]).collect();
    if returns.len() < opts.returns {
        return Err(Error::PeriodNotSettled {
            dispersion: f64::INFINITY,
        });
    }
    let last = &returns[returns.len() - opts.returns..];
    let period = last.iter().sum::<f64>() / last.len() as f64;
    let (lo, hi) = last
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let dispersion = (hi - lo) / period;
    if dispersion > opts.dispersion_tol {
        return Err(Error::PeriodNotSettled { dispersion });
    }

    let t_end = cross[cross.len() - 1];
    let t_start = t_end - period;
    let mut samples = vec![(0.0, traj.eval(t_start)?.0, traj.eval(t_start)?.1)];
    samples.extend(
        traj.nodes()
            .filter(|(t, _, _)| *t > t_start && *t < t_end)
            .map(|(t, x, y)| (t - t_start, x, y)),
    );
    let (xe, ye) = traj.eval(t_end)?;
    samples.push((period, xe, ye));
    let (ox0, ox1, oy0, oy1) = samples.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(_, x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    let (xs, ys) = (samples[0].1, samples[0].2);
    let closure = ((xe - xs).abs() / (ox1 - ox0).max(f64::MIN_POSITIVE))
        .max((ye - ys).abs() / (oy1 - oy0).max(f64::MIN_POSITIVE));

    if traj.scaled {
        if let Ok(k0) = p.k_0() {
            if p.k < k0 && (period - 1.0).abs() < 1e-3 {
                return Err(Error::ConditionNotMet(format!(
                    "orbit of rescaled period {period} near 1 with K < K_0"
                )));
            }
        }
    }
    Ok(Orbit {
        period,
        xmin: ox0,
        xmax: ox1,
        ymin: oy0,
        ymax: oy1,
        samples,
        stability: OrbitStability::Stable,
        closure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn onebranch() -> ModelParams {
        ModelParams::new(1.0, 7.0, 1.0, 5.0, 1.0, 0.1).unwrap()
    }

    fn ex1a() -> ModelParams {
        ModelParams::new(30.0, 1.0, 1.0, 1.0, 4.0, 0.1).unwrap()
    }

    fn ex1b() -> ModelParams {
        ModelParams::new(10.0, 20.0, 1.0, 5.0, 4.0, 0.1).unwrap()
    }

    #[test]
    fn prey_only_state_is_fixed() {
        let p = ex1a();
        let h = History::constant(p.k, 0.0).unwrap();
        let tr = integrate(&p, 5.0, &h, 50.0, None).unwrap();
        for (_, x, y) in tr.nodes() {
            assert_eq!((x, y), (p.k, 0.0));
        }
    }

    #[test]
    fn predator_free_logistic() {
        // oracle: closed-form logistic solution
        let p = ex1b();
        let h = History::constant(2.0, 0.0).unwrap();
        let tr = integrate(&p, 4.0, &h, 3.0, None).unwrap();
        let mut prev = 0.0;
        for (t, x, y) in tr.nodes() {
            assert_eq!(y, 0.0);
            assert!(x > prev && x < p.k);
            prev = x;
            let exact = p.k / (1.0 + (p.k / 2.0 - 1.0) * (-p.r * t).exp());
            assert!((x - exact).abs() < 1e-6 * exact, "t {t}: {x} vs {exact}");
        }
    }

    #[test]
    fn step_validation() {
        let p = ex1a();
        let h = History::default_for(&p, 10.0);
        assert!(matches!(integrate(&p, 10.0, &h, 1.0, Some(0.3)), Err(Error::StepSizeInvalid(_))));
        assert!(matches!(integrate(&p, 10.0, &h, 1.0, Some(1.0)), Err(Error::StepSizeInvalid(_))));
        assert!(integrate(&p, 10.0, &h, 1.0, Some(0.5)).is_ok());
        assert!(matches!(History::constant(-1.0, 1.0), Err(Error::InvalidHistory(_))));
        let bad = History::sampled(vec![-1.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(integrate(&p, 10.0, &bad, 1.0, None), Err(Error::InvalidHistory(_))));
    }

    #[test]
    fn prey_survives_dips_below_double_range() {
        let p = ex1a();
        let h = History::constant(0.5, 300.0).unwrap();
        let tr = integrate(&p, 1.0, &h, 1000.0, None).unwrap();
        let deepest = tr.u.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(deepest < -745.0, "{deepest}");
        let (x, y) = tr.last();
        assert!(x > 1e-6 && y > 0.0, "({x}, {y})");
    }

    #[test]
    fn scaled_matches_unscaled() {
        let p = ex1a();
        let tau = 6.0;
        let h = History::constant(0.3, 5.0).unwrap();
        let n = default_steps_per_delay(&p, tau);
        let a = integrate(&p, tau, &h, 60.0, Some(tau / n as f64)).unwrap();
        let b = integrate_scaled(&p, tau, &h, 10.0, Some(1.0 / n as f64)).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..=200 {
            let s = 10.0 * k as f64 / 200.0;
            let (xa, ya) = a.eval(s * tau).unwrap();
            let (xb, yb) = b.eval(s).unwrap();
            worst = worst.max((xa - xb).abs() / xa.abs().max(1e-300)).max((ya - yb).abs() / ya);
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn sampled_history_reproduces_constant() {
        let p = ex1b();
        let t: Vec<f64> = (0..=10).map(|i| -5.0 + 0.5 * i as f64).collect();
        let h1 = History::sampled(t.clone(), vec![6.0; 11], vec![3.0; 11]).unwrap();
        let h2 = History::constant(6.0, 3.0).unwrap();
        let a = integrate(&p, 5.0, &h1, 20.0, None).unwrap();
        let b = integrate(&p, 5.0, &h2, 20.0, None).unwrap();
        assert_eq!(a.last(), b.last());
    }

    fn endpoint(p: &ModelParams, tau: f64, n: usize, t_end: f64) -> (f64, f64) {
        let h = History::constant(7.0, 4.0).unwrap();
        integrate(p, tau, &h, t_end, Some(tau / n as f64)).unwrap().last()
    }

    #[test]
    fn fourth_order_convergence() {
        let p = ex1b();
        let tau = 5.0;
        let t_end = 25.0;
        let reference = endpoint(&p, tau, 1600, t_end);
        let e = |n| {
            let (x, y) = endpoint(&p, tau, n, t_end);
            (x - reference.0).abs().max((y - reference.1).abs())
        };
        let (e1, e2) = (e(100), e(200));
        let order = (e1 / e2).log2();
        assert!(order > 3.7, "order {order} ({e1:e}, {e2:e})");
    }

    #[test]
    fn equilibrium_detection() {
        let p = ex1a();
        let tau = 28.0;
        let h = History::default_for(&p, tau);
        let tr = integrate_with(&p, tau, &h, default_t_end(&p, tau), false, &IntegrateOptions {
            dt: None,
            keep_from: Some(0.0),
        })
        .unwrap();
        let e = interior_point(&p, tau).unwrap();
        match detect_attractor(&tr, 0.4) {
            Attractor::Equilibrium { x, y } => {
                assert_relative_eq!(x, e.x, max_relative = 1e-5);
                assert_relative_eq!(y, e.y, max_relative = 1e-5);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(extract_orbit(&tr, None), Err(Error::SectionNotCrossed { .. })));
    }

    #[test]
    fn beyond_tau_max_goes_to_prey_only() {
        let p = ex1b();
        let tau = 1.1 * p.tau_max().unwrap();
        let h = History::constant(3.0, 2.0).unwrap();
        let tr = integrate(&p, tau, &h, 3000.0, None).unwrap();
        let (x, y) = tr.last();
        assert!((x - p.k).abs() < 1e-4 && y < 1e-4, "{x} {y}");
    }

    #[test]
    fn ode_limit_cycle() {
        let p = onebranch();
        let h = History::constant(4.0, 5.0).unwrap();
        let tr = integrate(&p, 0.0, &h, 3000.0, Some(0.01)).unwrap();
        match detect_attractor(&tr, 0.4) {
            Attractor::Orbit(o) => {
                assert!(o.closure < 1e-6, "{}", o.closure);
                assert!(o.xmax <= p.k && o.xmin > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lyapunov_basics() {
        let p = ex1a();
        let tau = 1.2 * p.tau_max().unwrap();
        let h = History::constant(p.k, 0.0).unwrap();
        let tr = integrate_scaled(&p, tau, &h, 2.0, None).unwrap();
        assert_eq!(tr.lyapunov_value(1.5).unwrap(), 0.0);

        let h = History::constant(0.4, 3.0).unwrap();
        let tr = integrate_scaled(&p, tau, &h, 20.0, None).unwrap();
        let mut prev = f64::INFINITY;
        let v0 = tr.lyapunov_value(0.0).unwrap();
        for k in 0..=200 {
            let v = tr.lyapunov_value(0.1 * k as f64).unwrap();
            assert!(v >= 0.0);
            assert!(v <= prev + 1e-6 * v0, "step {k}: {v} > {prev}");
            prev = v;
        }
        assert!(matches!(tr.lyapunov_value(25.0), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn chunked_run_keeps_tail() {
        let p = ex1b();
        let h = History::default_for(&p, 5.0);
        let full = integrate(&p, 5.0, &h, 400.0, None).unwrap();
        let part = integrate_with(&p, 5.0, &h, 400.0, false, &IntegrateOptions {
            dt: None,
            keep_from: Some(300.0),
        })
        .unwrap();
        assert!(part.len() < full.len());
        assert!(part.start_time() <= 295.0);
        assert_eq!(part.last(), full.last());
        assert_eq!(part.eval(350.3).unwrap(), full.eval(350.3).unwrap());
        assert!(part.eval(10.0).is_err());
    }
}
