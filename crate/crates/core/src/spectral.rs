//! Characteristic equation at the interior equilibrium.
//!
//! With `H`, `L = dH + A` the delay-dependent coefficients, the linearisation
//! at `E*` has characteristic function
//!
//! ```text
//! P(lambda, tau) = lambda^2 + (d - H) lambda + e^{-lambda tau} (L - d lambda) - d H
//! ```
//!
//! A purely imaginary pair `±i w` exists at `tau` iff `tau w(tau)` meets one of
//! the angle curves `theta_n(tau)`; the roots of `S_n(tau) = tau - theta_n / w`
//! are the Hopf critical delays.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::{golden_max, refine_bracket};

/// Slack on `tau <= tau_bar` and on `|cos| <= 1`.
const EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hla {
    pub h: f64,
    pub l: f64,
    pub a: f64,
}

/// `H`, `L`, `A` at delay `tau` for `0 <= tau < tau_max`.
pub fn hla(p: &ModelParams, tau: f64) -> Result<Hla> {
    p.k_c()?;
    let tmax = p.tau_max().ok_or_else(|| Error::OutOfDomain {
        what: "tau",
        detail: "no interior equilibrium for any delay (K <= K_c)".into(),
    })?;
    if !(tau >= 0.0 && tau < tmax) {
        return Err(Error::OutOfDomain {
            what: "tau",
            detail: format!("tau = {tau} not in [0, tau_max = {tmax})"),
        });
    }
    Ok(hla_unchecked(p, tau))
}

pub(crate) fn hla_unchecked(p: &ModelParams, tau: f64) -> Hla {
    let (r, k, m, a, c, d) = (p.r, p.k, p.m, p.a, p.c, p.d);
    let s = p.survival(tau);
    let grow = (d * tau).exp();
    let den = c * s * m - d;
    let h = r * (d * grow / (c * m) - a * d / (k * den) - a * d * d * grow / (den * k * c * m));
    let aa = r * d * (k * c * s * m - k * d - d * a) / (k * m * c * s);
    Hla {
        h,
        l: d * h + aa,
        a: aa,
    }
}

fn require_hexic(p: &ModelParams) -> Result<f64> {
    let k2 = p.k_2()?;
    if p.k <= k2 {
        return Err(Error::NoHexicDomain { k: p.k, k2 });
    }
    p.tau_bar().ok_or(Error::NoHexicDomain { k: p.k, k2 })
}

fn omega_from(p: &ModelParams, c: &Hla) -> f64 {
    let (h, l, d) = (c.h, c.l, p.d);
    let h2 = h * h;
    let rad = (h2 * h2 - 4.0 * d * d * h2 + 4.0 * l * l).max(0.0).sqrt();
    // (sqrt(rad) - H^2)/2 rewritten without cancellation: L^2 - d^2 H^2 = A (L + dH)
    let z = 2.0 * c.a * (l + d * h) / (rad + h2);
    z.max(0.0).sqrt()
}

/// Crossing frequency `w(tau)`, the positive root of the hexic in `w`.
pub fn omega(p: &ModelParams, tau: f64) -> Result<f64> {
    let tbar = require_hexic(p)?;
    if !(tau >= 0.0 && tau <= tbar * (1.0 + EDGE_TOL)) {
        return Err(Error::OutOfDomain {
            what: "tau",
            detail: format!("tau = {tau} not in [0, tau_bar = {tbar}]"),
        });
    }
    let c = hla_unchecked(p, tau.min(tbar));
    Ok(omega_from(p, &c))
}

/// `sin(tau w)` and `cos(tau w)` as forced by a root at `i w`.
fn angle_terms(d: f64, c: &Hla, w: f64) -> (f64, f64) {
    let (h, l) = (c.h, c.l);
    let den = l * l + d * d * w * w;
    let sin = (d * w * l - h * w * l - d * d * w * h - d * w * w * w) / den;
    let cos = (l * d * h + l * w * w + d * d * w * w - d * h * w * w) / den;
    (sin, cos)
}

/// Everything the characteristic analysis knows at one delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub tau: f64,
    pub h: f64,
    pub l: f64,
    pub a: f64,
    pub w: Option<f64>,
    pub sin_tw: Option<f64>,
    pub cos_tw: Option<f64>,
}

pub fn profile(p: &ModelParams, tau: f64) -> Result<SpectralProfile> {
    let c = hla(p, tau)?;
    let w = omega(p, tau).ok().filter(|w| *w > 0.0);
    let (sin_tw, cos_tw) = match w {
        Some(w) => {
            let (s, co) = angle_terms(p.d, &c, w);
            (Some(s), Some(co))
        }
        None => (None, None),
    };
    Ok(SpectralProfile {
        tau,
        h: c.h,
        l: c.l,
        a: c.a,
        w,
        sin_tw,
        cos_tw,
    })
}

/// Whether the principal angle takes the negative branch at `tau`:
/// only for `K > K_0` before `tau_breve`, where `sin(tau w) < 0`.
fn negative_branch(p: &ModelParams, tau: f64) -> bool {
    match p.tau_breve() {
        Some(tb) => tau < tb,
        None => false,
    }
}

/// Principal angle `theta_0(tau)` in `[-pi, pi]`, and `w(tau)`.
fn base_angle(p: &ModelParams, tau: f64) -> Result<(f64, f64)> {
    let w = omega(p, tau)?;
    let tbar = p.tau_bar().unwrap_or(tau);
    let c = hla_unchecked(p, tau.min(tbar));
    let (sin, cos) = if w > 0.0 {
        angle_terms(p.d, &c, w)
    } else {
        (0.0, c.d_h_over_l(p.d))
    };
    if cos.abs() > 1.0 + EDGE_TOL || !cos.is_finite() {
        return Err(Error::OutOfDomain {
            what: "cos(tau w)",
            detail: format!("value {cos} outside [-1, 1] at tau = {tau}"),
        });
    }
    let ang = sin.abs().atan2(cos.clamp(-1.0, 1.0));
    Ok((if negative_branch(p, tau) { -ang } else { ang }, w))
}

impl Hla {
    // limit of the cos expression as w -> 0
    fn d_h_over_l(&self, d: f64) -> f64 {
        d * self.h / self.l
    }
}

/// Angle curve `theta_n(tau)`, continuous on `[0, tau_bar]`.
pub fn theta_n(p: &ModelParams, tau: f64, n: u32) -> Result<f64> {
    let (ang, _) = base_angle(p, tau)?;
    Ok(ang + 2.0 * PI * n as f64)
}

/// `tau w(tau) - theta_n(tau)`; its zeros (in `tau` or `K`) are Hopf points.
pub fn ell_n(p: &ModelParams, tau: f64, n: u32) -> Result<f64> {
    let (ang, w) = base_angle(p, tau)?;
    Ok(tau * w - ang - 2.0 * PI * n as f64)
}

/// `S_n(tau) = tau - theta_n / w`, with `-inf` once `w` has reached zero.
pub fn s_n(p: &ModelParams, tau: f64, n: u32) -> Result<f64> {
    let (ang, w) = base_angle(p, tau)?;
    if w <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let s = tau - (ang + 2.0 * PI * n as f64) / w;
    Ok(if s.is_finite() { s } else { f64::NEG_INFINITY })
}

/// Direction in which the root pair crosses the imaginary axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transversality {
    /// Left to right (`delta = +1`).
    Destabilizing,
    /// Right to left (`delta = -1`).
    Stabilizing,
    Tangential,
}

impl Transversality {
    pub fn delta(self) -> i32 {
        match self {
            Transversality::Destabilizing => 1,
            Transversality::Stabilizing => -1,
            Transversality::Tangential => 0,
        }
    }

    /// First crossing number, `-delta`.
    pub fn gamma1(self) -> i32 {
        -self.delta()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfPoint {
    pub n: u32,
    /// 1-based ordinal within branch `n`.
    pub i: usize,
    pub tau: f64,
    pub w: f64,
    pub period: f64,
    pub theta: f64,
    pub crossing: Transversality,
}

impl HopfPoint {
    pub fn delta(&self) -> i32 {
        self.crossing.delta()
    }

    pub fn gamma1(&self) -> i32 {
        self.crossing.gamma1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    /// Uniform grid points on `[0, tau_bar)` per branch index.
    pub grid: usize,
    /// `|S_n|` target of the bracket refinement.
    pub s_tol: f64,
    /// Slopes of `tau w - theta_n` below this are reported tangential.
    pub tangent_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            grid: 4096,
            s_tol: 1e-12,
            tangent_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfCatalog {
    pub k: f64,
    pub tau_bar: f64,
    /// All Hopf points, sorted by `(n, tau)`.
    pub points: Vec<HopfPoint>,
    /// Root counts for every scanned branch index.
    pub chi: Vec<usize>,
    /// `min theta_0` on `[0, tau_bar]`; only for `K < K_0`.
    pub zeta: Option<f64>,
    /// `max tau w(tau)` on `[0, tau_bar]`.
    pub m_max: f64,
    /// `N` with `(2N+1) pi < M < (2N+3) pi`, when such `N` exists.
    pub n_bound: Option<u32>,
}

impl HopfCatalog {
    pub fn branch(&self, n: u32) -> impl Iterator<Item = &HopfPoint> {
        self.points.iter().filter(move |h| h.n == n)
    }

    pub fn chi(&self, n: u32) -> usize {
        self.chi.get(n as usize).copied().unwrap_or(0)
    }
}

/// Enumerates the Hopf critical delays on `(0, tau_bar)`.
pub fn hopf_points(p: &ModelParams, opts: &ScanOptions) -> Result<HopfCatalog> {
    let tbar = require_hexic(p)?;
    let k0 = p.k_0()?;
    let g = opts.grid.max(16);
    let step = tbar / g as f64;

    let grid: Vec<(f64, f64, f64)> = (0..g)
        .map(|i| {
            let tau = step * i as f64;
            base_angle(p, tau).map(|(ang, w)| (tau, ang, w))
        })
        .collect::<Result<_>>()?;

    // M = max tau w, refined around the best grid point
    let (imax, _) = grid
        .iter()
        .enumerate()
        .map(|(i, (t, _, w))| (i, t * w))
        .fold((0, f64::MIN), |acc, v| if v.1 > acc.1 { v } else { acc });
    let lo = step * imax.saturating_sub(1) as f64;
    let hi = (step * (imax + 1) as f64).min(tbar);
    let (_, m_max) = golden_max(|t| t * omega(p, t).unwrap_or(0.0), lo, hi);

    let zeta = (p.k < k0).then(|| {
        let (imin, _) = grid
            .iter()
            .enumerate()
            .fold((0, f64::MAX), |acc, (i, (_, a, _))| if *a < acc.1 { (i, *a) } else { acc });
        let lo = step * imin.saturating_sub(1) as f64;
        let hi = (step * (imin + 1) as f64).min(tbar);
        let (_, neg) = golden_max(|t| -theta_n(p, t, 0).unwrap_or(PI), lo, hi);
        (-neg).min(PI)
    });

    let n_bound = if m_max > PI {
        let n = ((m_max / PI - 1.0) / 2.0).floor();
        let ok = (2.0 * n + 1.0) * PI < m_max && m_max < (2.0 * n + 3.0) * PI;
        ok.then_some(n as u32)
    } else {
        None
    };
    // theta_n >= (2n - 1) pi everywhere, so branches with (2n-1) pi > M are empty
    let mut n_last = 0u32;
    while (2.0 * n_last as f64 - 1.0) * PI <= m_max {
        n_last += 1;
    }
    if let Some(nb) = n_bound {
        n_last = n_last.max(nb + 2);
    }

    let per_branch: Vec<Vec<HopfPoint>> = (0..=n_last)
        .into_par_iter()
        .map(|n| scan_branch(p, n, &grid, tbar, opts))
        .collect::<Result<_>>()?;

    let chi = per_branch.iter().map(Vec::len).collect();
    let points = per_branch.into_iter().flatten().collect();
    Ok(HopfCatalog {
        k: p.k,
        tau_bar: tbar,
        points,
        chi,
        zeta,
        m_max,
        n_bound,
    })
}

fn scan_branch(
    p: &ModelParams,
    n: u32,
    grid: &[(f64, f64, f64)],
    tbar: f64,
    opts: &ScanOptions,
) -> Result<Vec<HopfPoint>> {
    let shift = 2.0 * PI * n as f64;
    let s_of = |tau: f64, ang: f64, w: f64| {
        if w > 0.0 {
            tau - (ang + shift) / w
        } else {
            f64::NEG_INFINITY
        }
    };
    let vals: Vec<f64> = grid.iter().map(|&(t, a, w)| s_of(t, a, w)).collect();
    let mut roots = Vec::new();
    for i in 0..vals.len() {
        let (ti, si) = (grid[i].0, vals[i]);
        if si == 0.0 && ti > 0.0 {
            roots.push(ti);
            continue;
        }
        if i + 1 == vals.len() {
            // the bracket would end at tau_bar where w = 0: not a Hopf point
            break;
        }
        let (tj, sj) = (grid[i + 1].0, vals[i + 1]);
        if si.is_finite() && sj.is_finite() && si * sj < 0.0 {
            let f = |t: f64| s_n(p, t, n).unwrap_or(f64::NAN);
            roots.push(refine_bracket(f, ti, tj, si, sj, opts.s_tol));
        }
    }

    let h = 1e-6 * tbar;
    roots
        .into_iter()
        .enumerate()
        .map(|(idx, tau)| {
            let w = omega(p, tau)?;
            let lo = (tau - h).max(0.0);
            let hi = (tau + h).min(tbar);
            let slope = (ell_n(p, hi, n)? - ell_n(p, lo, n)?) / (hi - lo);
            let crossing = if slope.abs() < opts.tangent_tol {
                Transversality::Tangential
            } else if slope > 0.0 {
                Transversality::Destabilizing
            } else {
                Transversality::Stabilizing
            };
            Ok(HopfPoint {
                n,
                i: idx + 1,
                tau,
                w,
                period: 2.0 * PI / w,
                theta: tau * w,
                crossing,
            })
        })
        .collect()
}

/// Characteristic function and its `lambda`-derivative.
pub fn char_function(p: &ModelParams, c: &Hla, tau: f64, lam: Complex64) -> (Complex64, Complex64) {
    let d = p.d;
    let e = (-lam * tau).exp();
    let lin = Complex64::new(c.l, 0.0) - lam * d;
    let val = lam * lam + lam * (d - c.h) + e * lin - d * c.h;
    let der = lam * 2.0 + (d - c.h) - e * d - e * lin * tau;
    (val, der)
}

/// Newton refinement of a characteristic root from `seed`.
pub fn char_root_refine(p: &ModelParams, tau: f64, seed: Complex64) -> Result<Complex64> {
    let c = hla(p, tau)?;
    let scale = 1.0 + c.l.abs() + (p.d * c.h).abs();
    let mut lam = seed;
    let mut res = f64::INFINITY;
    const MAX_IT: usize = 100;
    for _ in 0..MAX_IT {
        let (f, df) = char_function(p, &c, tau, lam);
        res = f.norm();
        if df.norm() == 0.0 || !res.is_finite() {
            break;
        }
        let step = f / df;
        lam -= step;
        if step.norm() <= 1e-15 * (1.0 + lam.norm()) {
            res = char_function(p, &c, tau, lam).0.norm();
            break;
        }
    }
    if res < 1e-10 * scale.max(lam.norm_sqr()) {
        Ok(lam)
    } else {
        Err(Error::NoConvergence {
            what: "characteristic root refinement",
            iterations: MAX_IT,
            residual: res,
        })
    }
}

/// Radius containing every characteristic root with positive real part:
/// there `|lambda|^2 <= (2d + |H|) |lambda| + |L| + d|H|`.
pub fn unstable_root_radius(p: &ModelParams, c: &Hla) -> f64 {
    let b = 2.0 * p.d + c.h.abs();
    let q = c.l.abs() + p.d * c.h.abs();
    0.5 * (b + (b * b + 4.0 * q).sqrt())
}

/// Number of characteristic roots (with multiplicity) in `Re lambda > 0`,
/// from the argument principle on a rectangle enclosing all of them.
pub fn unstable_root_count(p: &ModelParams, tau: f64) -> Result<usize> {
    let c = hla(p, tau)?;
    let radius = 1.1 * unstable_root_radius(p, &c);
    let w_max = if p.k > p.k_2()? {
        let tbar = p.tau_bar().unwrap_or(0.0);
        (0..=64)
            .map(|i| omega(p, tbar * i as f64 / 64.0).unwrap_or(0.0))
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    let re_max = (10.0 * p.d.max(p.r)).max(radius);
    let im_max = (4.0 * w_max).max(radius);
    let eps = 1e-6;
    let corners = [
        Complex64::new(eps, -im_max),
        Complex64::new(re_max, -im_max),
        Complex64::new(re_max, im_max),
        Complex64::new(eps, im_max),
    ];
    let f = |z: Complex64| char_function(p, &c, tau, z).0;
    let h = 0.25 / tau.max(1.0);
    let coarse = winding(&f, &corners, PI / 8.0, h)?;
    let fine = winding(&f, &corners, PI / 32.0, 0.5 * h)?;
    if coarse != fine || coarse < 0 {
        return Err(Error::ContourTooSmall { coarse, fine });
    }
    Ok(coarse as usize)
}

fn winding<F: Fn(Complex64) -> Complex64>(f: &F, corners: &[Complex64; 4], max_turn: f64, h: f64) -> Result<i64> {
    let mut total = 0.0;
    for k in 0..4 {
        let (z0, z1) = (corners[k], corners[(k + 1) % 4]);
        let n0 = (((z1 - z0).norm() / h).ceil() as usize).clamp(64, 200_000);
        let mut prev_z = z0;
        let mut prev_f = f(z0);
        for j in 1..=n0 {
            let z = z0 + (z1 - z0) * (j as f64 / n0 as f64);
            let fz = f(z);
            total += turn(f, prev_z, prev_f, z, fz, max_turn, 0)?;
            prev_z = z;
            prev_f = fz;
        }
    }
    let wn = total / (2.0 * PI);
    let rounded = wn.round();
    if (wn - rounded).abs() > 1e-3 {
        return Err(Error::ContourTooSmall {
            coarse: rounded as i64,
            fine: wn.floor() as i64,
        });
    }
    Ok(rounded as i64)
}

fn turn<F: Fn(Complex64) -> Complex64>(
    f: &F,
    z0: Complex64,
    f0: Complex64,
    z1: Complex64,
    f1: Complex64,
    max_turn: f64,
    depth: u32,
) -> Result<f64> {
    if f0.norm() == 0.0 || f1.norm() == 0.0 {
        return Err(Error::ContourTooSmall { coarse: 0, fine: 0 });
    }
    let dphi = (f1 / f0).arg();
    let zm = 0.5 * (z0 + z1);
    let fm = f(zm);
    if fm.norm() == 0.0 {
        return Err(Error::ContourTooSmall { coarse: 0, fine: 0 });
    }
    let split = (fm / f0).arg() + (f1 / fm).arg();
    if dphi.abs() <= max_turn && (split - dphi).abs() < 1e-6 {
        return Ok(dphi);
    }
    if depth > 40 {
        return Err(Error::ContourTooSmall { coarse: 0, fine: 0 });
    }
    Ok(turn(f, z0, f0, zm, fm, max_turn, depth + 1)? + turn(f, zm, fm, z1, f1, max_turn, depth + 1)?)
}
