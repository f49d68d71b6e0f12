//! Model parameters, equilibria and the closed-form thresholds of the
//! delayed Holling type II predator-prey system
//!
//! ```text
//! x'(t) = r x (1 - x/K) - m x y / (a + x)
//! y'(t) = -d y + e^{-d tau} c m x(t-tau) y(t-tau) / (a + x(t-tau))
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide that a parameter sits exactly on a
/// threshold (K = K_c, K = K_0, tau = tau_max).
pub const DEGENERATE_RTOL: f64 = 1e-12;

/// The six positive constants of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Prey intrinsic growth rate.
    pub r: f64,
    /// Carrying capacity.
    #[serde(rename = "K")]
    pub k: f64,
    /// Predation rate.
    pub m: f64,
    /// Half-saturation constant.
    pub a: f64,
    /// Conversion efficiency.
    pub c: f64,
    /// Predator death rate.
    pub d: f64,
}

impl ModelParams {
    /// Validates the six constants. `c*m <= d` is accepted; check
    /// [`ModelParams::c0_feasible`] before asking for interior quantities.
    pub fn new(r: f64, k: f64, m: f64, a: f64, c: f64, d: f64) -> Result<Self> {
        for (name, value) in [("r", r), ("K", k), ("m", m), ("a", a), ("c", c), ("d", d)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::NonPositiveParameter { name, value });
            }
        }
        Ok(Self { r, k, m, a, c, d })
    }

    /// Re-validates a record that was built field by field (e.g. deserialized).
    pub fn validated(self) -> Result<Self> {
        Self::new(self.r, self.k, self.m, self.a, self.c, self.d)
    }

    /// Same parameters with a different carrying capacity.
    pub fn with_k(&self, k: f64) -> Result<Self> {
        Self::new(self.r, k, self.m, self.a, self.c, self.d)
    }

    /// First half of condition C0: `c m > d`.
    pub fn c0_feasible(&self) -> bool {
        self.c * self.m > self.d
    }

    pub fn cm(&self) -> f64 {
        self.c * self.m
    }

    /// Predator survival through the maturation delay, `e^{-d tau}`.
    pub fn survival(&self, tau: f64) -> f64 {
        (-self.d * tau).exp()
    }

    fn require_c0(&self) -> Result<()> {
        if self.c0_feasible() {
            Ok(())
        } else {
            Err(Error::ConditionC0Violated {
                cm: self.cm(),
                d: self.d,
            })
        }
    }

    /// Transcritical threshold of the ODE model, `K_c = a d / (c m - d)`.
    pub fn k_c(&self) -> Result<f64> {
        self.require_c0()?;
        Ok(self.a * self.d / (self.c * self.m - self.d))
    }

    /// Hopf threshold of the ODE model, `K_0 = a (c m + d) / (c m - d)`.
    pub fn k_0(&self) -> Result<f64> {
        self.require_c0()?;
        let cm = self.cm();
        Ok(self.a * (cm + self.d) / (cm - self.d))
    }

    /// Below `K_2` no purely imaginary characteristic root exists.
    pub fn k_2(&self) -> Result<f64> {
        self.require_c0()?;
        let (cm, d) = (self.cm(), self.d);
        Ok(self.a * d * (3.0 * cm + d) / (cm * cm - d * d))
    }

    /// Coexistence threshold at delay `tau`, absent once `c m e^{-d tau} <= d`.
    pub fn k_1(&self, tau: f64) -> Option<f64> {
        let denom = self.c * self.m * self.survival(tau) - self.d;
        (denom > 0.0).then(|| self.a * self.d / denom)
    }

    /// Largest delay with a positive interior equilibrium.
    pub fn tau_max(&self) -> Option<f64> {
        let arg = self.k * self.cm() / (self.a * self.d + self.d * self.k);
        (arg > 1.0).then(|| arg.ln() / self.d)
    }

    /// Root of `L + dH` on `(0, tau_max)`; present iff `K > K_2`.
    pub fn tau_bar(&self) -> Option<f64> {
        let k2 = self.k_2().ok()?;
        if self.k <= k2 {
            return None;
        }
        let (a, k, cm, d) = (self.a, self.k, self.cm(), self.d);
        let num = cm * (9.0 * a * a + 4.0 * a * k + 4.0 * k * k).sqrt() - 3.0 * a * cm;
        let arg = num / (2.0 * (a * d + d * k));
        (arg > 1.0).then(|| arg.ln() / d)
    }

    /// Zero of `H`; present iff `K > a` and the log argument exceeds one
    /// (equivalently `K > K_0`).
    pub fn tau_breve(&self) -> Option<f64> {
        if self.k <= self.a {
            return None;
        }
        let arg = self.cm() * (self.k - self.a) / (self.d * (self.k + self.a));
        (arg > 1.0).then(|| arg.ln() / self.d)
    }

    /// Eventual upper bound on the predator from the comparison argument,
    /// `c e^{-d tau} (r+d)^2 K / (4 r d)`.
    pub fn predator_bound(&self, tau: f64) -> f64 {
        let (r, d) = (self.r, self.d);
        self.c * self.survival(tau) * (r + d).powi(2) * self.k / (4.0 * r * d)
    }

    /// Right-hand side of the model for the current state and the delayed state.
    pub fn rhs(&self, tau: f64, x: f64, y: f64, x_lag: f64, y_lag: f64) -> (f64, f64) {
        let dx = self.r * x * (1.0 - x / self.k) - self.m * x * y / (self.a + x);
        let dy = -self.d * y + self.survival(tau) * self.c * self.m * x_lag * y_lag / (self.a + x_lag);
        (dx, dy)
    }
}

/// All closed-form thresholds at one delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub k_c: f64,
    pub k_0: f64,
    pub k_1: Option<f64>,
    pub k_2: f64,
    pub tau_max: Option<f64>,
    pub tau_bar: Option<f64>,
    pub tau_breve: Option<f64>,
}

pub fn thresholds(p: &ModelParams, tau: f64) -> Result<Thresholds> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::OutOfDomain {
            what: "tau",
            detail: format!("tau = {tau} must be finite and non-negative"),
        });
    }
    Ok(Thresholds {
        k_c: p.k_c()?,
        k_0: p.k_0()?,
        k_1: p.k_1(tau),
        k_2: p.k_2()?,
        tau_max: p.tau_max(),
        tau_bar: p.tau_bar(),
        tau_breve: p.tau_breve(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    Origin,
    PreyOnly,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub x: f64,
    pub y: f64,
}

/// Interior equilibrium formula, returned whenever `c m e^{-d tau} > d` even if
/// it has left the first quadrant (for `tau > tau_max`, `y < 0`).
pub fn interior_point(p: &ModelParams, tau: f64) -> Option<Equilibrium> {
    let s = p.survival(tau);
    let denom = p.c * s * p.m - p.d;
    if denom <= 0.0 {
        return None;
    }
    let x = p.d * p.a / denom;
    let y = p.r * p.c * s * p.a * (p.k * p.c * s * p.m - p.k * p.d - p.d * p.a)
        / (p.k * denom * denom);
    Some(Equilibrium {
        kind: EquilibriumKind::Interior,
        x,
        y,
    })
}

/// Origin and prey-only states always; the interior state iff `c m > d` and
/// `tau < tau_max`. At `tau = tau_max` (to [`DEGENERATE_RTOL`]) the interior
/// state is reported too; it coincides with `(K, 0)`.
pub fn equilibria(p: &ModelParams, tau: f64) -> Vec<Equilibrium> {
    let mut out = vec![
        Equilibrium {
            kind: EquilibriumKind::Origin,
            x: 0.0,
            y: 0.0,
        },
        Equilibrium {
            kind: EquilibriumKind::PreyOnly,
            x: p.k,
            y: 0.0,
        },
    ];
    if let (Some(tmax), Some(e)) = (p.tau_max(), interior_point(p, tau)) {
        if tau < tmax || (tau - tmax).abs() <= DEGENERATE_RTOL * tmax.max(1.0) {
            out.push(Equilibrium { y: e.y.max(0.0), ..e });
        }
    }
    out
}

/// Long-term behaviour of the delay-free model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OdeRegime {
    PreyOnlyGas,
    InteriorGas,
    UniqueLimitCycle,
    /// K sits on K_c or K_0.
    Degenerate,
}

pub fn ode_classification(p: &ModelParams) -> Result<OdeRegime> {
    let kc = p.k_c()?;
    let k0 = p.k_0()?;
    let on = |t: f64| (p.k - t).abs() <= DEGENERATE_RTOL * t;
    Ok(if on(kc) || on(k0) {
        OdeRegime::Degenerate
    } else if p.k < kc {
        OdeRegime::PreyOnlyGas
    } else if p.k < k0 {
        OdeRegime::InteriorGas
    } else {
        OdeRegime::UniqueLimitCycle
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex1a() -> ModelParams {
        ModelParams::new(30.0, 1.0, 1.0, 1.0, 4.0, 0.1).unwrap()
    }

    fn ex1b() -> ModelParams {
        ModelParams::new(10.0, 20.0, 1.0, 5.0, 4.0, 0.1).unwrap()
    }

    fn onebranch() -> ModelParams {
        ModelParams::new(1.0, 7.0, 1.0, 5.0, 1.0, 0.1).unwrap()
    }

    #[test]
    fn validation() {
        assert!(ex1a().c0_feasible());
        let p = ModelParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert!(!p.c0_feasible());
        assert_eq!(
            ModelParams::new(0.0, 1.0, 1.0, 1.0, 4.0, 0.1),
            Err(Error::NonPositiveParameter { name: "r", value: 0.0 })
        );
        assert!(matches!(
            ModelParams::new(1.0, 1.0, 1.0, f64::NAN, 4.0, 0.1),
            Err(Error::NonPositiveParameter { name: "a", .. })
        ));
        assert!(matches!(thresholds(&p, 0.0), Err(Error::ConditionC0Violated { .. })));
    }

    #[test]
    fn published_threshold_values() {
        let t = thresholds(&ex1a(), 0.0).unwrap();
        assert!((t.k_0 - 41.0 / 39.0).abs() < 1e-12);
        let t = thresholds(&ex1b(), 0.0).unwrap();
        assert!((t.k_0 - 205.0 / 39.0).abs() < 1e-12);
        let k0 = onebranch().k_0().unwrap();
        assert!((k0 - 6.11).abs() < 5e-3, "{k0}");
    }

    #[test]
    fn taubar_and_taumax_match_bisection_oracle() {
        // Oracle: bisection on the defining equations, with H, L written out here.
        let p = ex1a();
        let (r, k, m, a, c, d) = (p.r, p.k, p.m, p.a, p.c, p.d);
        let lpdh = |tau: f64| {
            let e = (-d * tau).exp();
            let h = r * (d / e / (c * m) - a * d / (k * (c * e * m - d))
                - a * d * d / e / ((c * e * m - d) * k * c * m));
            let aa = r * d * (k * c * e * m - k * d - d * a) / (k * m * c * e);
            (d * h + aa) + d * h
        };
        let bisect = |f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(lo) * f(mid) <= 0.0 {
                    hi = mid
                } else {
                    lo = mid
                }
            }
            0.5 * (lo + hi)
        };
        let tbar = bisect(&lpdh, 0.0, 29.0);
        let tmax = bisect(&|t: f64| k * c * m * (-d * t).exp() - d * (a + k), 0.0, 100.0);
        assert!((p.tau_bar().unwrap() - tbar).abs() < 1e-9);
        assert!((p.tau_max().unwrap() - tmax).abs() < 1e-9);
        assert!((tbar - 24.187).abs() < 1e-3);
        assert!((tmax - 29.957).abs() < 1e-3);
    }

    #[test]
    fn tau_breve_presence() {
        assert!(ex1a().tau_breve().is_none());
        let b = ex1b();
        let tb = b.tau_breve().unwrap();
        assert!(tb > 0.0 && tb < b.tau_bar().unwrap());
        let at_k0 = b.with_k(b.k_0().unwrap()).unwrap();
        assert!(at_k0.tau_breve().is_none());
    }

    #[test]
    fn equilibria_examples() {
        let p = ex1a();
        let eq = equilibria(&p, 0.0);
        assert_eq!(eq.len(), 3);
        assert!((eq[2].x - 1.0 / 39.0).abs() < 1e-15);

        let tmax = p.tau_max().unwrap();
        let e = interior_point(&p, tmax).unwrap();
        assert!((e.x - p.k).abs() <= 1e-8 * p.k);
        assert!(e.y.abs() <= 1e-8 * p.k);
        assert_eq!(equilibria(&p, tmax).len(), 3);

        let b = ModelParams::new(10.0, 20.0, 1.0, 5.0, 4.0, 0.1).unwrap();
        let tmax_b = 10.0 * 32.0_f64.ln();
        assert!((b.tau_max().unwrap() - tmax_b).abs() < 1e-12);
        // direct sign of K c m e^{-d tau} - d (a + K) at tau = 35
        assert!(b.k * b.c * b.m * (-b.d * 35.0).exp() - b.d * (b.a + b.k) < 0.0);
        assert_eq!(equilibria(&b, 35.0).len(), 2);
    }

    #[test]
    fn ode_regimes() {
        assert_eq!(ode_classification(&ex1a()).unwrap(), OdeRegime::InteriorGas);
        assert_eq!(ode_classification(&onebranch()).unwrap(), OdeRegime::UniqueLimitCycle);
        let p = ex1a();
        let at_kc = p.with_k(p.k_c().unwrap()).unwrap();
        assert_eq!(ode_classification(&at_kc).unwrap(), OdeRegime::Degenerate);
        let low = p.with_k(0.01).unwrap();
        assert_eq!(ode_classification(&low).unwrap(), OdeRegime::PreyOnlyGas);
    }

    fn params() -> impl Strategy<Value = ModelParams> {
        (0.1f64..40.0, 0.05f64..50.0, 0.1f64..5.0, 0.1f64..10.0, 0.1f64..5.0, 0.01f64..2.0)
            .prop_filter_map("cm > d", |(r, k, m, a, c, d)| {
                let p = ModelParams::new(r, k, m, a, c, d).ok()?;
                p.c0_feasible().then_some(p)
            })
    }

    proptest! {
        #[test]
        fn threshold_ordering(p in params()) {
            let (kc, k2, k0) = (p.k_c().unwrap(), p.k_2().unwrap(), p.k_0().unwrap());
            prop_assert!(kc < k2 && k2 < k0);
            prop_assert_eq!(p.k_1(0.0).unwrap(), kc);
            if let Some(k1) = p.k_1(0.5) { prop_assert!(k1 > kc); }
        }

        #[test]
        fn monotone_thresholds(p in params(), t1 in 0.0f64..5.0, dt in 0.01f64..5.0) {
            if let (Some(a), Some(b)) = (p.k_1(t1), p.k_1(t1 + dt)) {
                prop_assert!(b > a);
            }
            let bigger = p.with_k(p.k * 1.3).unwrap();
            if let (Some(a), Some(b)) = (p.tau_max(), bigger.tau_max()) {
                prop_assert!(b > a);
            }
        }

        #[test]
        fn taubar_inside_taumax(p in params()) {
            if let Some(tb) = p.tau_bar() {
                prop_assert!(tb > 0.0 && tb < p.tau_max().unwrap());
            }
            prop_assert_eq!(p.tau_bar().is_some(), p.k > p.k_2().unwrap());
            if let Some(tb) = p.tau_breve() {
                prop_assert!(p.k > p.k_0().unwrap());
                prop_assert!(tb < p.tau_bar().unwrap());
            }
        }

        #[test]
        fn interior_is_stationary(p in params(), frac in 0.0f64..0.99) {
            if let Some(tmax) = p.tau_max() {
                let tau = frac * tmax;
                let e = interior_point(&p, tau).unwrap();
                prop_assert!(e.x > 0.0 && e.y > 0.0);
                let (fx, fy) = p.rhs(tau, e.x, e.y, e.x, e.y);
                let sx = p.r * e.x;
                let sy = p.d * e.y;
                prop_assert!(fx.abs() <= 1e-10 * sx, "fx {} scale {}", fx, sx);
                prop_assert!(fy.abs() <= 1e-10 * sy, "fy {} scale {}", fy, sy);
            }
        }
    }
}
