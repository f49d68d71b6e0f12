//! Periodic orbits as zeros of a Fourier collocation system.
//!
//! In log coordinates `u = ln x`, `v = ln y` and normalised time `s = t / P`
//! an orbit of period `P` at delay `tau` satisfies
//!
//! ```text
//! u'(s) = P [ r (1 - e^u / K) - m e^v / (a + e^u) ]
//! v'(s) = P [ -d + e^{-d tau} c m q(u(s - sigma)) e^{v(s - sigma) - v(s)} ]
//! ```
//!
//! with `sigma = tau / P` and `q(u) = e^u / (a + e^u)`. Both functions are
//! sampled at `N` (odd) equispaced nodes; derivatives and delay shifts act
//! exactly on the trigonometric interpolant, so each is a circulant matrix.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dde::{Orbit, OrbitStability};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Node count and the kernels that do not depend on the delay shift.
#[derive(Debug, Clone)]
pub struct Grid {
    pub n: usize,
    half: usize,
    diff: Vec<f64>,
    sin1: Vec<f64>,
    cos1: Vec<f64>,
}

impl Grid {
    pub fn new(n: usize) -> Self {
        assert!(n % 2 == 1 && n >= 5, "node count must be odd and at least 5");
        let half = (n - 1) / 2;
        let nf = n as f64;
        let diff = (0..n)
            .map(|q| {
                let th = 2.0 * PI * q as f64 / nf;
                -(1..=half).map(|k| 4.0 * PI * k as f64 * (k as f64 * th).sin()).sum::<f64>() / nf
            })
            .collect();
        let sin1 = (0..n).map(|j| (2.0 * PI * j as f64 / nf).sin()).collect();
        let cos1 = (0..n).map(|j| (2.0 * PI * j as f64 / nf).cos()).collect();
        Self {
            n,
            half,
            diff,
            sin1,
            cos1,
        }
    }

    /// Kernel of `u -> u(s - sigma)` and its `sigma`-derivative.
    pub fn shift_kernel(&self, sigma: f64) -> (Vec<f64>, Vec<f64>) {
        let nf = self.n as f64;
        let mut c = vec![0.0; self.n];
        let mut dc = vec![0.0; self.n];
        for q in 0..self.n {
            let phi = 2.0 * PI * (q as f64 / nf - sigma);
            // cos(k phi), sin(k phi) by rotation
            let (s1, c1) = phi.sin_cos();
            let (mut sk, mut ck) = (0.0, 1.0);
            let mut acc = 1.0;
            let mut dacc = 0.0;
            for k in 1..=self.half {
                let (sn, cn) = (sk * c1 + ck * s1, ck * c1 - sk * s1);
                sk = sn;
                ck = cn;
                acc += 2.0 * ck;
                dacc += 4.0 * PI * k as f64 * sk;
            }
            c[q] = acc / nf;
            dc[q] = dacc / nf;
        }
        (c, dc)
    }

    pub fn circ(&self, kernel: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|j| {
                let mut s = 0.0;
                for (l, ul) in u.iter().enumerate() {
                    s += kernel[(j + n - l) % n] * ul;
                }
                s
            })
            .collect()
    }

    pub fn derivative(&self, u: &[f64]) -> Vec<f64> {
        self.circ(&self.diff, u)
    }

    /// `(2/N) sum u_j cos(2 pi j / N)`: first-harmonic amplitude once the
    /// phase condition holds.
    pub fn first_harmonic(&self, u: &[f64]) -> (f64, f64) {
        let nf = self.n as f64;
        let c = 2.0 / nf * u.iter().zip(&self.cos1).map(|(a, b)| a * b).sum::<f64>();
        let s = 2.0 / nf * u.iter().zip(&self.sin1).map(|(a, b)| a * b).sum::<f64>();
        (c, s)
    }

    /// Values of the interpolant of `u` on another odd grid.
    pub fn resample(&self, u: &[f64], m: usize) -> Vec<f64> {
        let nf = self.n as f64;
        let coeffs: Vec<(f64, f64)> = (0..=self.half)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, uj) in u.iter().enumerate() {
                    let th = 2.0 * PI * (k * j) as f64 / nf;
                    re += uj * th.cos();
                    im -= uj * th.sin();
                }
                (re / nf, im / nf)
            })
            .collect();
        let mh = (m - 1) / 2;
        (0..m)
            .map(|j| {
                let s = j as f64 / m as f64;
                let mut val = coeffs[0].0;
                for (k, (re, im)) in coeffs.iter().enumerate().skip(1).take(mh) {
                    let th = 2.0 * PI * k as f64 * s;
                    val += 2.0 * (re * th.cos() - im * th.sin());
                }
                val
            })
            .collect()
    }
}

/// Unknown vector layout: `[u (N), v (N), P, tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub period: f64,
    pub tau: f64,
}

impl PeriodicState {
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.u.len();
        let mut x = DVector::zeros(2 * n + 2);
        for j in 0..n {
            x[j] = self.u[j];
            x[n + j] = self.v[j];
        }
        x[2 * n] = self.period;
        x[2 * n + 1] = self.tau;
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = (x.len() - 2) / 2;
        Self {
            u: x.rows(0, n).iter().copied().collect(),
            v: x.rows(n, n).iter().copied().collect(),
            period: x[2 * n],
            tau: x[2 * n + 1],
        }
    }

    pub fn nodes(&self) -> usize {
        self.u.len()
    }

    /// Peak-to-peak of `u`.
    pub fn log_amplitude(&self) -> f64 {
        let (lo, hi) = self
            .u
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        hi - lo
    }

    pub fn resample(&self, grid: &Grid, m: usize) -> Self {
        Self {
            u: grid.resample(&self.u, m),
            v: grid.resample(&self.v, m),
            period: self.period,
            tau: self.tau,
        }
    }

    /// Orbit in original coordinates sampled on a grid twice as fine.
    pub fn to_orbit(&self, grid: &Grid, closure: f64) -> Orbit {
        let m = 2 * grid.n + 1;
        let u = grid.resample(&self.u, m);
        let v = grid.resample(&self.v, m);
        let mut samples: Vec<(f64, f64, f64)> = (0..m)
            .map(|j| (self.period * j as f64 / m as f64, u[j].exp(), v[j].exp()))
            .collect();
        samples.push((self.period, u[0].exp(), v[0].exp()));
        let (xmin, xmax, ymin, ymax) = samples.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(_, x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        Orbit {
            period: self.period,
            xmin,
            xmax,
            ymin,
            ymax,
            samples,
            stability: OrbitStability::Unknown,
            closure,
        }
    }
}

/// The extra scalar equation closing the system.
#[derive(Debug, Clone)]
pub enum Constraint {
    Tau(f64),
    /// First-harmonic amplitude of `u`.
    Amplitude(f64),
    /// `<t, X - base>_W = ds` with the weighted inner product of [`weighted_dot`].
    Arclength {
        base: DVector<f64>,
        tangent: DVector<f64>,
        ds: f64,
    },
}

/// `(1/N) sum (u u' + v v') + P P' + tau tau'`.
pub fn weighted_dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = (a.len() - 2) / 2;
    let w = 1.0 / n as f64;
    let mut s = 0.0;
    for i in 0..2 * n {
        s += a[i] * b[i];
    }
    s * w + a[2 * n] * b[2 * n] + a[2 * n + 1] * b[2 * n + 1]
}

pub fn weighted_norm(a: &DVector<f64>) -> f64 {
    weighted_dot(a, a).sqrt()
}

fn weight_row(t: &DVector<f64>) -> DVector<f64> {
    let n = (t.len() - 2) / 2;
    let w = 1.0 / n as f64;
    let mut r = t.clone();
    for i in 0..2 * n {
        r[i] *= w;
    }
    r
}

pub struct System<'a> {
    pub p: &'a ModelParams,
    pub grid: &'a Grid,
}

struct Pointwise {
    fu: Vec<f64>,
    fv: Vec<f64>,
    // partials of f_u
    fu_u: Vec<f64>,
    fu_v: Vec<f64>,
    // G E q, G E q'
    geq: Vec<f64>,
    geqp: Vec<f64>,
    fv_sigma: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> System<'a> {
    pub fn new(p: &'a ModelParams, grid: &'a Grid) -> Self {
        Self { p, grid }
    }

    fn pointwise(&self, u: &[f64], v: &[f64], period: f64, tau: f64) -> Pointwise {
        let p = self.p;
        let g = self.grid;
        let sigma = tau / period;
        let (c, dc) = g.shift_kernel(sigma);
        let ul = g.circ(&c, u);
        let vl = g.circ(&c, v);
        let us = g.circ(&dc, u);
        let vs = g.circ(&dc, v);
        let gain = p.survival(tau) * p.c * p.m;
        let n = g.n;
        let mut pw = Pointwise {
            fu: vec![0.0; n],
            fv: vec![0.0; n],
            fu_u: vec![0.0; n],
            fu_v: vec![0.0; n],
            geq: vec![0.0; n],
            geqp: vec![0.0; n],
            fv_sigma: vec![0.0; n],
            c,
        };
        for j in 0..n {
            let ex = u[j].exp();
            let ey = v[j].exp();
            let ax = p.a + ex;
            pw.fu[j] = p.r * (1.0 - ex / p.k) - p.m * ey / ax;
            pw.fu_u[j] = -p.r * ex / p.k + p.m * ey * ex / (ax * ax);
            pw.fu_v[j] = -p.m * ey / ax;
            let eu = ul[j].exp();
            let q = eu / (p.a + eu);
            let qp = p.a * eu / ((p.a + eu) * (p.a + eu));
            let e = (vl[j] - v[j]).exp();
            pw.geq[j] = gain * e * q;
            pw.geqp[j] = gain * e * qp;
            pw.fv[j] = -p.d + pw.geq[j];
            pw.fv_sigma[j] = pw.geqp[j] * us[j] + pw.geq[j] * vs[j];
        }
        pw
    }

    pub fn residual(&self, x: &DVector<f64>, con: &Constraint) -> DVector<f64> {
        let st = PeriodicState::from_vector(x);
        let g = self.grid;
        let n = g.n;
        let pw = self.pointwise(&st.u, &st.v, st.period, st.tau);
        let du = g.derivative(&st.u);
        let dv = g.derivative(&st.v);
        let mut r = DVector::zeros(2 * n + 2);
        for j in 0..n {
            r[j] = du[j] - st.period * pw.fu[j];
            r[n + j] = dv[j] - st.period * pw.fv[j];
        }
        r[2 * n] = g.first_harmonic(&st.u).1;
        r[2 * n + 1] = match con {
            Constraint::Tau(t) => st.tau - t,
            Constraint::Amplitude(a) => g.first_harmonic(&st.u).0 - a,
            Constraint::Arclength { base, tangent, ds } => weighted_dot(tangent, &(x - base)) - ds,
        };
        r
    }

    /// Jacobian of the `2N + 1` orbit equations, without the constraint row.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let st = PeriodicState::from_vector(x);
        let g = self.grid;
        let n = g.n;
        let (period, tau) = (st.period, st.tau);
        let pw = self.pointwise(&st.u, &st.v, period, tau);
        let d = self.p.d;
        let mut jac = DMatrix::zeros(2 * n + 2, 2 * n + 2);
        for j in 0..n {
            for l in 0..n {
                let dk = g.diff[(j + n - l) % n];
                let ck = pw.c[(j + n - l) % n];
                jac[(j, l)] = dk;
                jac[(n + j, n + l)] = dk - period * pw.geq[j] * ck;
                jac[(n + j, l)] = -period * pw.geqp[j] * ck;
            }
            jac[(j, j)] -= period * pw.fu_u[j];
            jac[(j, n + j)] = -period * pw.fu_v[j];
            jac[(j, 2 * n)] = -pw.fu[j];
            jac[(n + j, n + j)] += period * pw.geq[j];
            jac[(n + j, 2 * n)] = -pw.fv[j] + tau / period * pw.fv_sigma[j];
            jac[(n + j, 2 * n + 1)] = period * d * pw.geq[j] - pw.fv_sigma[j];
            jac[(2 * n, j)] = 2.0 / n as f64 * g.sin1[j];
        }
        jac
    }

    fn full_jacobian(&self, x: &DVector<f64>, con: &Constraint) -> DMatrix<f64> {
        let n = self.grid.n;
        let mut jac = self.jacobian(x);
        match con {
            Constraint::Tau(_) => jac[(2 * n + 1, 2 * n + 1)] = 1.0,
            Constraint::Amplitude(_) => {
                for j in 0..n {
                    jac[(2 * n + 1, j)] = 2.0 / n as f64 * self.grid.cos1[j];
                }
            }
            Constraint::Arclength { tangent, .. } => {
                let row = weight_row(tangent);
                for i in 0..2 * n + 2 {
                    jac[(2 * n + 1, i)] = row[i];
                }
            }
        }
        jac
    }

    /// Newton's method on the bordered system.
    pub fn solve(&self, x0: &DVector<f64>, con: &Constraint, opts: &NewtonOptions) -> Result<(DVector<f64>, usize)> {
        let mut x = x0.clone();
        let mut r = self.residual(&x, con);
        let r0 = r.amax();
        for it in 1..=opts.max_iter {
            let jac = self.full_jacobian(&x, con);
            let lu = jac.lu();
            let dx = lu.solve(&(-&r)).ok_or(Error::NoConvergence {
                what: "periodic orbit Newton (singular Jacobian)",
                iterations: it,
                residual: r.amax(),
            })?;
            x += &dx;
            if x[2 * self.grid.n] <= 0.0 || !x.iter().all(|v| v.is_finite()) {
                break;
            }
            r = self.residual(&x, con);
            let step = dx.amax();
            if !(r.amax() < 1e3 * r0.max(1.0)) {
                break;
            }
            if step <= opts.step_tol * (1.0 + x.amax()) && r.amax() <= opts.residual_tol {
                return Ok((x, it));
            }
        }
        Err(Error::NoConvergence {
            what: "periodic orbit Newton",
            iterations: opts.max_iter,
            residual: r.amax(),
        })
    }

    /// Tangent of the solution curve at a converged point, oriented along `hint`.
    pub fn tangent(&self, x: &DVector<f64>, hint: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.grid.n;
        let mut jac = self.jacobian(x);
        let row = weight_row(hint);
        for i in 0..2 * n + 2 {
            jac[(2 * n + 1, i)] = row[i];
        }
        let mut rhs = DVector::zeros(2 * n + 2);
        rhs[2 * n + 1] = 1.0;
        let t = jac.lu().solve(&rhs).ok_or(Error::NoConvergence {
            what: "branch tangent",
            iterations: 1,
            residual: f64::NAN,
        })?;
        let nrm = weighted_norm(&t);
        Ok(t / nrm)
    }

    /// Largest collocation defect half-way between nodes, relative to the
    /// size of the vector field.
    pub fn defect(&self, x: &DVector<f64>) -> f64 {
        let st = PeriodicState::from_vector(x);
        let g = self.grid;
        let half = 0.5 / g.n as f64;
        let (c, _) = g.shift_kernel(-half);
        let mid = PeriodicState {
            u: g.circ(&c, &st.u),
            v: g.circ(&c, &st.v),
            ..st.clone()
        };
        let pw = self.pointwise(&mid.u, &mid.v, mid.period, mid.tau);
        let du = g.derivative(&mid.u);
        let dv = g.derivative(&mid.v);
        let scale = pw
            .fu
            .iter()
            .chain(&pw.fv)
            .fold(0.0f64, |m, f| m.max((st.period * f).abs()))
            .max(1e-300);
        let worst = (0..g.n)
            .map(|j| {
                (du[j] - st.period * pw.fu[j])
                    .abs()
                    .max((dv[j] - st.period * pw.fv[j]).abs())
            })
            .fold(0.0, f64::max);
        worst / scale
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub step_tol: f64,
    pub residual_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 12,
            step_tol: 1e-10,
            residual_tol: 1e-8,
        }
    }
}

/// Small-amplitude guess from the critical eigenvector at a Hopf point.
pub fn hopf_guess(p: &ModelParams, grid: &Grid, tau: f64, w: f64, eps: f64) -> Result<PeriodicState> {
    let e = crate::model::interior_point(p, tau).filter(|e| e.y > 0.0).ok_or(Error::OutOfDomain {
        what: "tau",
        detail: format!("no positive interior equilibrium at tau = {tau}"),
    })?;
    let (xs, ys) = (e.x, e.y);
    let j11 = p.r * (1.0 - 2.0 * xs / p.k) - p.m * p.a * ys / ((p.a + xs) * (p.a + xs));
    let j12 = -p.m * xs / (p.a + xs);
    // eta = (i w - j11) xs / j12, in log coordinates divided by ys
    let (er, ei) = (-j11 * xs / (j12 * ys), w * xs / (j12 * ys));
    let n = grid.n;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for j in 0..n {
        let th = 2.0 * PI * j as f64 / n as f64;
        u[j] = xs.ln() + eps * th.cos();
        v[j] = ys.ln() + eps * (er * th.cos() - ei * th.sin());
    }
    Ok(PeriodicState {
        u,
        v,
        period: 2.0 * PI / w,
        tau,
    })
}

/// Collocation guess from a simulated orbit, shifted so the phase condition holds.
pub fn state_from_orbit(grid: &Grid, orbit: &Orbit, tau: f64) -> PeriodicState {
    let n = grid.n;
    let s = &orbit.samples;
    let sample = |t: f64| -> (f64, f64) {
        let k = s.partition_point(|q| q.0 <= t).clamp(1, s.len() - 1);
        let (t0, x0, y0) = s[k - 1];
        let (t1, x1, y1) = s[k];
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        let lx = x0.ln() + w * (x1.ln() - x0.ln());
        let ly = y0.ln() + w * (y1.ln() - y0.ln());
        (lx, ly)
    };
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for j in 0..n {
        let (a, b) = sample(orbit.period * j as f64 / n as f64);
        u[j] = a;
        v[j] = b;
    }
    // rotate so that the first harmonic of u is a pure cosine
    let (cc, ss) = grid.first_harmonic(&u);
    let shift = -ss.atan2(cc) / (2.0 * PI);
    let (k, _) = grid.shift_kernel(-shift);
    let (u, v) = (grid.circ(&k, &u), grid.circ(&k, &v));
    let mut st = PeriodicState {
        u,
        v,
        period: orbit.period,
        tau,
    };
    let (c1, _) = grid.first_harmonic(&st.u);
    if c1 < 0.0 {
        let (k, _) = grid.shift_kernel(0.5);
        st.u = grid.circ(&k, &st.u);
        st.v = grid.circ(&k, &st.v);
    }
    st
}
