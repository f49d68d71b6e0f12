//! The `(tau, K)` bifurcation diagram: the transcritical curve, the Hopf
//! curves `ell_n(tau, K) = 0`, stability regions, and Hopf thresholds in `K`
//! at a fixed delay.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::refine_bracket;
use crate::spectral::{self, ScanOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    Transcritical,
    Hopf(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    Line,
    Loop,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramCurve {
    pub kind: CurveKind,
    /// `(tau, K)` in tracing order.
    pub points: Vec<(f64, f64)>,
    pub topology: Topology,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionLabel {
    /// `E*` unstable.
    Va,
    /// `E*` locally stable.
    Vb,
    /// Prey-only state globally stable.
    Vc,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::Va => "V_a",
            RegionLabel::Vb => "V_b",
            RegionLabel::Vc => "V_c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    /// Arclength step in `(tau / tau_s, K / K_0)`, `tau_s = ln(cm/d)/d`.
    pub step: f64,
    /// Curves stop above `K = k_cap_factor * K_0`.
    pub k_cap_factor: f64,
    pub max_steps: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            step: 1e-2,
            k_cap_factor: 50.0,
            max_steps: 100_000,
        }
    }
}

/// `K = K_1(tau)` at each grid delay where it exists.
pub fn transcritical_curve(p: &ModelParams, taus: &[f64]) -> Result<DiagramCurve> {
    p.k_c()?;
    let points = taus
        .iter()
        .filter_map(|&t| p.k_1(t).map(|k| (t, k)))
        .collect();
    Ok(DiagramCurve {
        kind: CurveKind::Transcritical,
        points,
        topology: Topology::Line,
    })
}

/// `ell_n` at `(tau, K)`, `None` outside `K > K_2`, `0 <= tau <= tau_bar(K)`.
pub fn ell(p: &ModelParams, n: u32, tau: f64, k: f64) -> Option<f64> {
    if !(k > 0.0 && tau >= 0.0) {
        return None;
    }
    let q = p.with_k(k).ok()?;
    spectral::ell_n(&q, tau, n).ok()
}

/// Delay scale `ln(cm/d)/d`, the limit of `tau_max` as `K` grows.
pub fn delay_scale(p: &ModelParams) -> f64 {
    (p.cm() / p.d).ln() / p.d
}

struct Frame {
    ts: f64,
    k0: f64,
}

impl Frame {
    fn to_norm(&self, tau: f64, k: f64) -> (f64, f64) {
        (tau / self.ts, k / self.k0)
    }
    fn from_norm(&self, a: f64, b: f64) -> (f64, f64) {
        (a * self.ts, b * self.k0)
    }
}

fn grad(f: &dyn Fn(f64, f64) -> Option<f64>, a: f64, b: f64) -> Option<(f64, f64)> {
    let h = 1e-7;
    let ga = match (f(a + h, b), f(a - h, b)) {
        (Some(p), Some(m)) => (p - m) / (2.0 * h),
        (Some(p), None) => (p - f(a, b)?) / h,
        (None, Some(m)) => (f(a, b)? - m) / h,
        _ => return None,
    };
    let gb = match (f(a, b + h), f(a, b - h)) {
        (Some(p), Some(m)) => (p - m) / (2.0 * h),
        (Some(p), None) => (p - f(a, b)?) / h,
        (None, Some(m)) => (f(a, b)? - m) / h,
        _ => return None,
    };
    Some((ga, gb))
}

/// Newton along direction `(na, nb)` from `(a, b)` onto the zero set.
fn correct(f: &dyn Fn(f64, f64) -> Option<f64>, a: f64, b: f64, na: f64, nb: f64) -> Option<(f64, f64)> {
    let mut s = 0.0;
    for _ in 0..30 {
        let v = f(a + s * na, b + s * nb)?;
        if v.abs() < 1e-11 {
            return Some((a + s * na, b + s * nb));
        }
        let h = 1e-7;
        let dv = (f(a + (s + h) * na, b + (s + h) * nb)? - f(a + (s - h) * na, b + (s - h) * nb)?) / (2.0 * h);
        if dv == 0.0 || !dv.is_finite() {
            return None;
        }
        let step = v / dv;
        s -= step;
        if s.abs() > 0.5 {
            return None;
        }
    }
    let v = f(a + s * na, b + s * nb)?;
    (v.abs() < 1e-9).then_some((a + s * na, b + s * nb))
}

/// Continues `ell_n = 0` from `seed` (for `n = 0` the default seed is `(0, K_0)`).
pub fn hopf_curve(p: &ModelParams, n: u32, seed: Option<(f64, f64)>, opts: &CurveOptions) -> Result<DiagramCurve> {
    let k0 = p.k_0()?;
    let (tau0, kseed) = match (seed, n) {
        (Some(s), _) => s,
        (None, 0) => (0.0, k0),
        (None, _) => {
            return Err(Error::SeedNotOnCurve {
                tau: f64::NAN,
                k: f64::NAN,
                residual: f64::NAN,
            })
        }
    };
    let fr = Frame { ts: delay_scale(p), k0 };
    let f = |a: f64, b: f64| -> Option<f64> {
        let (t, k) = fr.from_norm(a, b);
        ell(p, n, t, k)
    };
    let (a0, b0) = fr.to_norm(tau0, kseed);
    let r0 = f(a0, b0);
    if !matches!(r0, Some(v) if v.abs() < 1e-8) {
        return Err(Error::SeedNotOnCurve {
            tau: tau0,
            k: kseed,
            residual: r0.unwrap_or(f64::NAN),
        });
    }
    let (ga, gb) = grad(&f, a0, b0).ok_or(Error::SeedNotOnCurve {
        tau: tau0,
        k: kseed,
        residual: f64::NAN,
    })?;
    // tangent, oriented towards larger delay
    let mut t = (-gb, ga);
    if t.0 < 0.0 {
        t = (-t.0, -t.1);
    }
    let forward = walk(&f, &fr, (a0, b0), t, opts);
    let (mut pts, looped) = forward;
    let topology = if looped {
        Topology::Loop
    } else if tau0 > 0.0 {
        // a seed in the interior: also walk the other way
        let (back, _) = walk(&f, &fr, (a0, b0), (-t.0, -t.1), opts);
        let mut all: Vec<(f64, f64)> = back.into_iter().skip(1).rev().collect();
        all.append(&mut pts);
        pts = all;
        // both walks stalled at the same sharp turn
        let (s, e) = (pts[0], pts[pts.len() - 1]);
        if pts.len() > 10 && (s.0 - e.0).hypot(s.1 - e.1) < 1e-3 {
            pts.push(s);
            Topology::Loop
        } else {
            Topology::Line
        }
    } else {
        Topology::Line
    };
    let points = pts.into_iter().map(|(a, b)| fr.from_norm(a, b)).collect();
    Ok(DiagramCurve {
        kind: CurveKind::Hopf(n),
        points,
        topology,
    })
}

fn walk(
    f: &dyn Fn(f64, f64) -> Option<f64>,
    fr: &Frame,
    start: (f64, f64),
    t0: (f64, f64),
    opts: &CurveOptions,
) -> (Vec<(f64, f64)>, bool) {
    let mut pts = vec![start];
    let nrm = |v: (f64, f64)| {
        let l = v.0.hypot(v.1);
        (v.0 / l, v.1 / l)
    };
    let mut t = nrm(t0);
    let mut cur = start;
    let mut h = opts.step;
    let mut steps = 0;
    while steps < opts.max_steps {
        let pred = (cur.0 + h * t.0, cur.1 + h * t.1);
        let next = correct(f, pred.0, pred.1, -t.1, t.0).filter(|q| {
            let d = (q.0 - cur.0).hypot(q.1 - cur.1);
            d < 2.0 * h && d > 0.2 * h
        });
        let Some(q) = next else {
            if h > opts.step * 1e-4 {
                h *= 0.5;
                continue;
            }
            break;
        };
        let (tau, k) = fr.from_norm(q.0, q.1);
        if tau < 0.0 || k > opts.k_cap_factor * fr.k0 {
            break;
        }
        let Some(g) = grad(f, q.0, q.1) else {
            break;
        };
        let mut tn = nrm((-g.1, g.0));
        if tn.0 * t.0 + tn.1 * t.1 < 0.0 {
            tn = (-tn.0, -tn.1);
        }
        pts.push(q);
        cur = q;
        t = tn;
        h = (h * 1.5).min(opts.step);
        steps += 1;
        if steps >= 10 && segment_distance(start, cur, pts[pts.len() - 2]) < 1e-3 {
            pts.pop();
            pts.push(start);
            return (pts, true);
        }
    }
    (pts, false)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l2 = dx * dx + dy * dy;
    let s = if l2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - a.0 - s * dx).hypot(p.1 - a.1 - s * dy)
}

/// Region of `(tau, K)`: `V_c` past `tau_max` (or with no interior state),
/// `V_b` where `E*` is stable, `V_a` where it is not.
pub fn classify_region(p: &ModelParams, tau: f64, k: f64) -> Result<RegionLabel> {
    let q = p.with_k(k)?;
    let Some(tmax) = q.tau_max() else {
        return Ok(RegionLabel::Vc);
    };
    if tau >= tmax {
        return Ok(RegionLabel::Vc);
    }
    if k <= q.k_2()? {
        return Ok(RegionLabel::Vb);
    }
    match q.tau_bar() {
        Some(tb) if tau < tb => {}
        _ => return Ok(RegionLabel::Vb),
    }
    let l0 = spectral::ell_n(&q, tau, 0)?;
    Ok(if l0 > 0.0 { RegionLabel::Va } else { RegionLabel::Vb })
}

/// Labels on a uniform grid, row-major in `K` then `tau`.
pub fn region_grid(p: &ModelParams, taus: &[f64], ks: &[f64]) -> Result<Vec<(f64, f64, RegionLabel)>> {
    ks.par_iter()
        .flat_map_iter(|&k| taus.iter().map(move |&t| (t, k)))
        .map(|(t, k)| classify_region(p, t, k).map(|l| (t, k, l)))
        .collect()
}

/// Smallest positive root of `ell_0(., K_0)` on `(0, tau_bar(K_0))`.
pub fn tau_star(p: &ModelParams) -> Result<f64> {
    if p.cm() <= (1.0 + SQRT_2) * p.d {
        return Err(Error::ConditionNotMet(format!(
            "c m = {} does not exceed (1 + sqrt 2) d = {}",
            p.cm(),
            (1.0 + SQRT_2) * p.d
        )));
    }
    let q = p.with_k(p.k_0()?)?;
    let tb = q.tau_bar().ok_or(Error::ConditionNotMet("K_0 <= K_2".into()))?;
    let f = |t: f64| spectral::ell_n(&q, t, 0).unwrap_or(f64::NAN);
    let g = 20_000;
    let mut prev_t = tb * 1e-6;
    let mut prev = f(prev_t);
    for i in 1..g {
        let t = tb * i as f64 / g as f64;
        let v = f(t);
        if prev.is_finite() && v.is_finite() && prev * v < 0.0 {
            return Ok(refine_bracket(f, prev_t, t, prev, v, 1e-13));
        }
        prev_t = t;
        prev = v;
    }
    Err(Error::ConditionNotMet("ell_0(., K_0) has no positive root below tau_bar".into()))
}

/// Smallest `K` with `tau_bar(K) > tau`.
fn k_floor(p: &ModelParams, tau: f64) -> Option<f64> {
    let k2 = p.k_2().ok()?;
    let tb = |k: f64| p.with_k(k).ok().and_then(|q| q.tau_bar()).unwrap_or(0.0);
    let mut hi = 2.0 * k2;
    let mut iters = 0;
    while tb(hi) <= tau {
        hi *= 2.0;
        iters += 1;
        if iters > 200 {
            return None;
        }
    }
    let mut lo = k2;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tb(mid) > tau {
            hi = mid
        } else {
            lo = mid
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KThreshold {
    pub k: f64,
    pub n: u32,
    pub w: f64,
}

/// Hopf thresholds in `K` at fixed `tau`, over all branch indices, sorted.
pub fn hopf_in_k(p: &ModelParams, tau: f64) -> Result<Vec<KThreshold>> {
    hopf_in_k_with(p, tau, 50.0, 8000)
}

pub fn hopf_in_k_with(p: &ModelParams, tau: f64, k_cap_factor: f64, grid: usize) -> Result<Vec<KThreshold>> {
    let k0 = p.k_0()?;
    let Some(klo) = k_floor(p, tau) else {
        return Ok(Vec::new());
    };
    let khi = k_cap_factor * k0.max(p.a).max(klo);
    if khi <= klo {
        return Ok(Vec::new());
    }
    let ks: Vec<f64> = (0..=grid)
        .map(|i| klo * (khi / klo).powf(i as f64 / grid as f64))
        .map(|k| k * (1.0 + 1e-12))
        .collect();
    // highest index reachable anywhere on the scan
    let top = ks
        .iter()
        .filter_map(|&k| ell(p, 0, tau, k))
        .fold(f64::NEG_INFINITY, f64::max);
    let n_max = if top > 0.0 { (top / (2.0 * std::f64::consts::PI)).ceil() as u32 + 1 } else { 0 };
    let mut out: Vec<KThreshold> = (0..=n_max)
        .into_par_iter()
        .flat_map_iter(|n| {
            let vals: Vec<Option<f64>> = ks.iter().map(|&k| ell(p, n, tau, k)).collect();
            let mut roots = Vec::new();
            for i in 0..ks.len() - 1 {
                if let (Some(a), Some(b)) = (vals[i], vals[i + 1]) {
                    if a * b < 0.0 {
                        let f = |k: f64| ell(p, n, tau, k).unwrap_or(f64::NAN);
                        let k = refine_bracket(f, ks[i], ks[i + 1], a, b, 1e-13);
                        roots.push((n, k));
                    }
                }
            }
            roots
        })
        .filter_map(|(n, k)| {
            let q = p.with_k(k).ok()?;
            let w = spectral::omega(&q, tau).ok()?;
            let lam = spectral::char_root_refine(&q, tau, Complex64::new(0.0, w)).ok()?;
            (lam.re.abs() < 1e-8).then_some(KThreshold { k, n, w: lam.im })
        })
        .collect();
    out.sort_by(|a, b| a.k.total_cmp(&b.k));
    Ok(out)
}

/// All components of `ell_n = 0` found from catalog seeds at sampled `K`.
pub fn hopf_curves(p: &ModelParams, n: u32, opts: &CurveOptions) -> Result<Vec<DiagramCurve>> {
    if n == 0 {
        return Ok(vec![hopf_curve(p, 0, None, opts)?]);
    }
    let k2 = p.k_2()?;
    let k0 = p.k_0()?;
    let khi = opts.k_cap_factor * k0;
    let samples = 48;
    let seeds: Vec<(f64, f64)> = (1..samples)
        .into_par_iter()
        .flat_map_iter(|i| {
            let k = k2 * (khi / k2).powf(i as f64 / samples as f64);
            let cat = p
                .with_k(k)
                .ok()
                .and_then(|q| spectral::hopf_points(&q, &ScanOptions { grid: 2048, ..ScanOptions::default() }).ok());
            cat.map(|c| c.branch(n).map(|h| (h.tau, k)).collect::<Vec<_>>())
                .unwrap_or_default()
        })
        .collect();
    let mut curves: Vec<DiagramCurve> = Vec::new();
    let fr = Frame { ts: delay_scale(p), k0 };
    for s in seeds {
        let (a, b) = fr.to_norm(s.0, s.1);
        let covered = curves.iter().any(|c| {
            c.points.iter().any(|&(t, k)| {
                let (x, y) = fr.to_norm(t, k);
                (x - a).hypot(y - b) < 2.0 * opts.step
            })
        });
        if covered {
            continue;
        }
        let c = hopf_curve(p, n, Some(s), opts)?;
        match curves.iter_mut().find(|o| o.topology == Topology::Line && joinable(&fr, o, &c)) {
            Some(o) => join(&fr, o, c),
            None => curves.push(c),
        }
    }
    Ok(curves)
}

fn ends(c: &DiagramCurve) -> [(f64, f64); 2] {
    [c.points[0], c.points[c.points.len() - 1]]
}

fn close(fr: &Frame, x: (f64, f64), y: (f64, f64)) -> bool {
    let (a, b) = fr.to_norm(x.0, x.1);
    let (c, d) = fr.to_norm(y.0, y.1);
    (a - c).hypot(b - d) < 1e-3
}

fn joinable(fr: &Frame, a: &DiagramCurve, b: &DiagramCurve) -> bool {
    b.topology == Topology::Line && ends(a).iter().any(|&x| ends(b).iter().any(|&y| close(fr, x, y)))
}

/// Splices `b` onto `a` at their shared end.
fn join(fr: &Frame, a: &mut DiagramCurve, mut b: DiagramCurve) {
    let [a0, _] = ends(a);
    let [b0, b1] = ends(&b);
    if close(fr, a0, b0) || close(fr, a0, b1) {
        a.points.reverse();
    }
    if close(fr, a.points[a.points.len() - 1], b1) {
        b.points.reverse();
    }
    a.points.extend(b.points);
}

impl DiagramCurve {
    /// `K` values where the curve crosses the given delay.
    pub fn slice_at(&self, tau: f64) -> Vec<f64> {
        self.points
            .windows(2)
            .filter(|w| (w[0].0 - tau) * (w[1].0 - tau) < 0.0 || w[1].0 == tau)
            .map(|w| {
                let s = (tau - w[0].0) / (w[1].0 - w[0].0);
                w[0].1 + s * (w[1].1 - w[0].1)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sec6() -> ModelParams {
        ModelParams::new(30.0, 1.0, 1.0, 1.0, 4.0, 0.1).unwrap()
    }

    #[test]
    fn transcritical_values() {
        let p = sec6();
        let taus: Vec<f64> = (0..100).map(|i| 0.3 * i as f64).collect();
        let c = transcritical_curve(&p, &taus).unwrap();
        assert_eq!(c.points[0].1, p.k_c().unwrap());
        assert!(c.points.windows(2).all(|w| w[1].1 > w[0].1));
        for &(t, k) in &c.points {
            let oracle = p.a * p.d / (p.c * p.m * (-p.d * t).exp() - p.d);
            assert!((k - oracle).abs() <= 1e-10 * oracle);
        }
        let c = transcritical_curve(&p, &[26.0]).unwrap();
        assert!((c.points[0].1 - 0.507).abs() < 1e-3);
    }

    #[test]
    fn tau_star_value_and_hypothesis() {
        let p = sec6();
        let ts = tau_star(&p).unwrap();
        assert!((ts - 24.1).abs() < 0.05, "{ts}");
        let q = p.with_k(p.k_0().unwrap()).unwrap();
        assert!(spectral::ell_n(&q, ts, 0).unwrap().abs() < 1e-9);
        let weak = ModelParams::new(1.0, 1.0, 1.0, 1.0, 0.2, 0.1).unwrap();
        assert!(matches!(tau_star(&weak), Err(Error::ConditionNotMet(_))));
    }

    #[test]
    fn k_thresholds_at_tau_26() {
        let p = sec6();
        let ks = hopf_in_k(&p, 26.0).unwrap();
        let expect = [1.32775, 1.53821, 1.67052, 1.76158, 1.84707, 1.99419, 2.13500, 2.39557, 2.73950, 3.99462];
        assert_eq!(ks.len(), expect.len(), "{ks:?}");
        for (k, e) in ks.iter().zip(expect) {
            assert!((k.k - e).abs() < 1e-4, "{} vs {e}", k.k);
        }
        assert!(ks[0].k > p.k_0().unwrap());
        let early = hopf_in_k(&p, 20.0).unwrap();
        assert!(early[0].k < p.k_0().unwrap());
    }

    #[test]
    fn lowest_hopf_curve_leaves_k0() {
        let p = sec6();
        let c = hopf_curve(&p, 0, None, &CurveOptions::default()).unwrap();
        assert_eq!(c.points[0], (0.0, p.k_0().unwrap()));
        let (t1, k1) = c.points[1];
        let (t2, k2) = c.points[2];
        let slope = (k2 - k1) / (t2 - t1);
        let (m, cc, a, d) = (p.m, p.c, p.a, p.d);
        let formula = -m * cc * a * (cc * cc * m * m - 2.0 * cc * m * d - d * d) / (cc * m - d).powi(2);
        assert!((slope - formula).abs() < 0.05 * formula.abs(), "{slope} vs {formula}");
        for &(t, k) in &c.points {
            assert!(ell(&p, 0, t, k).unwrap().abs() < 1e-8);
            if let Some(k1) = p.k_1(t) {
                assert!(k > k1);
            }
        }
        // below K_0 before tau*, above after
        let ts = tau_star(&p).unwrap();
        for &(t, k) in &c.points {
            if t > 0.05 * ts && t < 0.95 * ts {
                assert!(k < p.k_0().unwrap(), "({t}, {k})");
            }
        }
    }

    #[test]
    fn slope_sign_flips_with_cm() {
        let p = ModelParams::new(1.0, 1.0, 1.0, 1.0, 0.2, 0.1).unwrap();
        let c = hopf_curve(&p, 0, None, &CurveOptions::default()).unwrap();
        assert!(c.points[2].1 > c.points[0].1);
    }

    #[test]
    fn regions_agree_with_root_count() {
        let p = sec6();
        let tmax_far = delay_scale(&p);
        for i in 0..20 {
            for j in 0..20 {
                let tau = tmax_far * (i as f64 + 0.5) / 20.0;
                let k = 0.05 + 3.0 * (j as f64 + 0.5) / 20.0;
                let label = classify_region(&p, tau, k).unwrap();
                let q = p.with_k(k).unwrap();
                match label {
                    RegionLabel::Vc => assert!(q.tau_max().map_or(true, |t| tau >= t)),
                    RegionLabel::Va => assert!(spectral::unstable_root_count(&q, tau).unwrap() >= 2),
                    RegionLabel::Vb => assert_eq!(spectral::unstable_root_count(&q, tau).unwrap(), 0, "({tau}, {k})"),
                }
            }
        }
        assert_eq!(classify_region(&p, 5.0, 0.06).unwrap(), RegionLabel::Vb);
        assert_eq!(classify_region(&p, 10.0, 1.0).unwrap(), RegionLabel::Va);
    }

    #[test]
    fn curves_slice_matches_k_thresholds() {
        let p = sec6();
        let mut from_curves: Vec<f64> = (0..=6)
            .flat_map(|n| hopf_curves(&p, n, &CurveOptions::default()).unwrap())
            .flat_map(|c| c.slice_at(26.0))
            .filter(|&k| k < 50.0 * p.k_0().unwrap())
            .collect();
        from_curves.sort_by(f64::total_cmp);
        let direct = hopf_in_k(&p, 26.0).unwrap();
        assert_eq!(from_curves.len(), direct.len(), "{from_curves:?}");
        for (a, b) in from_curves.iter().zip(&direct) {
            assert!((a - b.k).abs() < 5e-3 * b.k, "{a} vs {}", b.k);
        }
    }

    #[test]
    fn closed_curve_is_reported_as_loop() {
        let p = sec6();
        let cs = hopf_curves(&p, 3, &CurveOptions::default()).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].topology, Topology::Loop);
        for &(t, k) in cs[0].points.iter().step_by(50) {
            assert!(ell(&p, 3, t, k).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn convex_at_critical_cm() {
        let d = 0.1;
        let p = ModelParams::new(1.0, 1.0, 1.0, 1.0, (1.0 + SQRT_2) * d, d).unwrap();
        let opts = CurveOptions { step: 1e-3, ..CurveOptions::default() };
        let c = hopf_curve(&p, 0, None, &opts).unwrap();
        let (t0, k0) = c.points[0];
        let (t1, k1) = c.points[3];
        let (t2, k2) = c.points[6];
        let s1 = (k1 - k0) / (t1 - t0);
        let s2 = (k2 - k1) / (t2 - t1);
        assert!(s2 > s1, "{s1} {s2}");
        assert!(s1.abs() < 0.05);
    }

    #[test]
    fn bad_seed_is_rejected() {
        let p = sec6();
        let r = hopf_curve(&p, 1, Some((10.0, 2.0)), &CurveOptions::default());
        assert!(matches!(r, Err(Error::SeedNotOnCurve { .. })));
    }
}
