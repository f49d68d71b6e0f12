//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use hopfdde::continuation::{self, EndAnchor, TraceOptions, Verdict};
use hopfdde::dde::{self, History};
use hopfdde::diagram;
use hopfdde::spectral::{self, HopfCatalog, ScanOptions};
use hopfdde::ModelParams;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ex1a() -> ModelParams {
    ModelParams::new(30.0, 1.0, 1.0, 1.0, 4.0, 0.1).unwrap()
}

fn ex1b() -> ModelParams {
    ModelParams::new(10.0, 20.0, 1.0, 5.0, 4.0, 0.1).unwrap()
}

fn onebranch() -> ModelParams {
    ModelParams::new(1.0, 7.0, 1.0, 5.0, 1.0, 0.1).unwrap()
}

const EX1A_DELAYS: [(u32, f64, f64); 4] = [
    (0, 0.013562, 23.67336),
    (1, 3.8062, 21.49988),
    (2, 7.81234, 19.55209),
    (3, 12.7067, 17.10348),
];

const EX1B_DELAYS: [(u32, &[f64]); 3] = [
    (0, &[32.42808]),
    (1, &[6.2049, 32.22374]),
    (2, &[13.96008, 24.85518, 30.21286, 32.00694]),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn catalog(p: &ModelParams) -> HopfCatalog {
    spectral::hopf_points(p, &ScanOptions::default()).unwrap()
}

fn criterion_1() -> Outcome {
    let cat = catalog(&ex1a());
    let mut worst = 0.0_f64;
    let mut ok = cat.points.len() == 8;
    for (n, lo, hi) in EX1A_DELAYS {
        let b: Vec<_> = cat.branch(n).collect();
        if b.len() != 2 {
            ok = false;
            continue;
        }
        worst = worst.max((b[0].tau - lo).abs()).max((b[1].tau - hi).abs());
        ok &= b[0].delta() == 1 && b[1].delta() == -1;
    }
    ok &= (4..12).all(|n| cat.chi(n) == 0);
    ok &= worst < 1e-3;
    outcome(ok, format!("{} delays, max error {worst:.2e}", cat.points.len()))
}

fn criterion_2() -> Outcome {
    let cat = catalog(&ex1b());
    let mut worst = 0.0_f64;
    let mut ok = cat.points.len() == 7;
    for (n, expect) in EX1B_DELAYS {
        let b: Vec<_> = cat.branch(n).collect();
        ok &= cat.chi(n) == expect.len() && b.len() == expect.len();
        for (h, e) in b.iter().zip(expect) {
            worst = worst.max((h.tau - e).abs());
        }
    }
    ok &= worst < 1e-3;
    outcome(
        ok,
        format!(
            "chi = ({}, {}, {}), max error {worst:.2e}",
            cat.chi(0),
            cat.chi(1),
            cat.chi(2)
        ),
    )
}

fn criterion_3() -> Outcome {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let k0a = ex1a().k_0().unwrap();
    let k0b = ex1b().k_0().unwrap();
    let k0o = onebranch().k_0().unwrap();
    let k1 = ex1a().k_1(26.0).unwrap();
    let ok = rel(k0a, 41.0 / 39.0) < 1e-6
        && rel(k0b, 205.0 / 39.0) < 1e-6
        && rel(k0o, 55.0 / 9.0) < 1e-6
        && (k0o - 6.11).abs() < 5e-3
        && (k1 - 0.51).abs() < 1e-2
        && (k0a - 1.0512).abs() < 1e-2;
    outcome(
        ok,
        format!("K_0 = {k0a:.6}, {k0b:.6}, {k0o:.6}; K_1(26) = {k1:.5}"),
    )
}

fn criterion_4() -> Outcome {
    let mut worst_re = 0.0_f64;
    let mut worst_im = 0.0_f64;
    let mut ok = true;
    for p in [ex1a(), ex1b()] {
        for h in catalog(&p).points {
            match spectral::char_root_refine(&p, h.tau, Complex64::new(0.0, h.w)) {
                Ok(l) => {
                    worst_re = worst_re.max(l.re.abs());
                    worst_im = worst_im.max((l.im - h.w).abs() / h.w);
                }
                Err(_) => ok = false,
            }
        }
    }
    ok &= worst_re < 1e-8 && worst_im < 1e-6;
    outcome(ok, format!("max |Re| {worst_re:.2e}, max rel |Im - w| {worst_im:.2e}"))
}

fn criterion_5() -> Outcome {
    let p = ex1a();
    let ts = diagram::tau_star(&p).unwrap();
    let ks = diagram::hopf_in_k(&p, 26.0).unwrap();
    let ordered = ks.windows(2).all(|w| w[0].k < w[1].k);
    let first = ks.first().map_or(f64::NAN, |k| k.k);
    let last = ks.last().map_or(f64::NAN, |k| k.k);
    let ok = (ts - 24.1).abs() <= 0.2
        && ks.len() == 10
        && ordered
        && (first - 1.328).abs() <= 0.01
        && (last - 3.996).abs() <= 0.05;
    outcome(
        ok,
        format!("tau* = {ts:.4}, {} thresholds from {first:.5} to {last:.5}", ks.len()),
    )
}

fn criterion_6() -> Outcome {
    let p = ex1a();
    let cat = catalog(&p);
    let opts = TraceOptions::default();
    let mut ok = true;
    let mut notes = Vec::new();
    let mut spans = Vec::new();
    for (n, _, _) in EX1A_DELAYS {
        let b: Vec<_> = cat.branch(n).copied().collect();
        let (lo, hi) = (b[0], b[1]);
        let traced = continuation::trace_branch(&p, &cat, &lo, &opts);
        let connected = match &traced {
            Ok(br) => match &br.end {
                EndAnchor::Hopf { tau, .. } => (tau - hi.tau).abs() <= 0.02 * hi.tau,
                _ => false,
            },
            Err(_) => false,
        };
        if connected {
            let br = traced.unwrap();
            spans.push(br.tau_span());
            let pc = continuation::scaled_period_check(&p, &br, n);
            let per_ok = n == 0 || matches!(pc, Ok(ref c) if c.verdict == Verdict::Pass);
            ok &= per_ok;
            notes.push(format!(
                "n={n} joined {:.4}->{:.4}{}",
                lo.tau,
                br.end.tau(),
                match pc {
                    Ok(c) => format!(" T/tau in [{:.4}, {:.4}]", c.min_ratio, c.max_ratio),
                    Err(_) => String::new(),
                }
            ));
        } else {
            spans.push((lo.tau, hi.tau));
            let end = traced.as_ref().map(|b| b.end.tau()).unwrap_or(f64::NAN);
            let mut exps = Vec::new();
            for h in [lo, hi] {
                match continuation::hopf_scaling(&p, &h, &opts) {
                    Ok(f) => {
                        ok &= (f.exponent - 0.5).abs() <= 0.1;
                        exps.push(format!("{:.3}", f.exponent));
                    }
                    Err(e) => {
                        ok = false;
                        exps.push(e.to_string());
                    }
                }
            }
            notes.push(format!("n={n} unjoined (trace ended at {end:.3}), scaling exponents {}", exps.join("/")));
        }
    }
    let nested = spans.windows(2).all(|w| w[0].0 < w[1].0 && w[1].1 < w[0].1);
    ok &= nested && continuation::nesting_verdict(&cat) == Verdict::Pass;
    notes.push(format!("nested {nested}"));
    outcome(ok, notes.join("; "))
}

fn criterion_7() -> Outcome {
    let p = onebranch();
    let cat = catalog(&p);
    if cat.points.len() != 1 {
        return outcome(false, format!("{} catalog roots", cat.points.len()));
    }
    let root = cat.points[0];
    let br = match continuation::trace_from_ode_cycle(&p, &cat, &TraceOptions::default()) {
        Ok(b) => b,
        Err(e) => return outcome(false, e.to_string()),
    };
    let matched = matches!(br.end, EndAnchor::Hopf { matched: Some(h), .. } if h.tau == root.tau);
    let last = br.points.last().map_or(f64::NAN, |pt| pt.orbit.period);
    let target = 2.0 * PI / root.w;
    let ok = matched && (last - target).abs() <= 0.02 * target;
    outcome(
        ok,
        format!(
            "end at {:.5} (root {:.5}), endpoint period {last:.3} vs {target:.3}",
            br.end.tau(),
            root.tau
        ),
    )
}

fn decay_rate(p: &ModelParams, tau: f64) -> f64 {
    p.d - p.c * p.m * (-p.d * tau).exp() * p.k / (p.a + p.k)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0_f64;
    let mut lyap_ok = true;
    let mut runs = 0;
    for p in [ex1a(), ex1b(), onebranch(), ModelParams::new(2.0, 3.0, 0.5, 2.0, 1.5, 0.2).unwrap()] {
        let tau = 1.2 * p.tau_max().unwrap();
        let s_end = (30.0 / decay_rate(&p, tau) + 20.0 * tau) / tau;
        for _ in 0..8 {
            let h = History::constant(p.k * rng.random_range(0.05..2.0), p.c * p.k * rng.random_range(0.05..1.0)).unwrap();
            let tr = match dde::integrate_scaled(&p, tau, &h, s_end, None) {
                Ok(t) => t,
                Err(_) => {
                    worst = f64::INFINITY;
                    continue;
                }
            };
            runs += 1;
            let (x, y) = tr.last();
            worst = worst.max((x - p.k).hypot(y));
            let mut prev = f64::INFINITY;
            let mut s = 1.0;
            while s <= tr.end_time() {
                let v = tr.lyapunov_value(s).unwrap();
                lyap_ok &= v <= prev + 1e-7 * v.abs().max(1.0);
                prev = v;
                s += 0.25;
            }
        }
    }
    outcome(
        runs == 32 && worst < 1e-4 && lyap_ok,
        format!("{runs} runs at 1.2 tau_max, max distance {worst:.2e}, Lyapunov nonincreasing {lyap_ok}"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut positivity_fail = 0;
    let mut x_fail = 0;
    let mut y_fail = 0;
    let mut y_sharp_fail = 0;
    for _ in 0..100 {
        let p = ModelParams::new(
            rng.random_range(0.5..30.0),
            rng.random_range(0.5..20.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..5.0),
            rng.random_range(0.5..4.0),
            rng.random_range(0.05..0.5),
        )
        .unwrap();
        let tau_hi = p.tau_max().unwrap_or(10.0).max(1.0) * 1.5;
        let tau = rng.random_range(1.0..tau_hi);
        let h = History::constant(p.k * rng.random_range(0.05..2.0), p.c * p.k * rng.random_range(0.05..2.0)).unwrap();
        let t_end = 2000.0_f64.max(40.0 * tau);
        let tr = match dde::integrate(&p, tau, &h, t_end, None) {
            Ok(t) => t,
            Err(_) => {
                positivity_fail += 1;
                continue;
            }
        };
        let (xmax, ymax) = tr.tail_maxima(0.25);
        x_fail += usize::from(xmax > 1.01 * p.k);
        y_fail += usize::from(ymax > 1.01 * p.c * p.k);
        let sharp = p.c * (-p.d * tau).exp() * (p.r + p.d).powi(2) * p.k / (4.0 * p.r * p.d);
        y_sharp_fail += usize::from(ymax > 1.01 * sharp);
    }
    outcome(
        positivity_fail == 0 && x_fail == 0 && y_fail == 0,
        format!(
            "positivity failures {positivity_fail}, x > 1.01 K in {x_fail}, y > 1.01 cK in {y_fail}, \
             y above 1.01 c e^(-d tau) (r+d)^2 K / (4 r d) in {y_sharp_fail}"
        ),
    )
}

fn criterion_10() -> Outcome {
    let p = ex1a();
    let tau = 5.0;
    let h = History::constant(0.5, 10.0).unwrap();
    let t_end = 40.0;
    let sol = |n: usize| dde::integrate(&p, tau, &h, t_end, Some(tau / n as f64)).unwrap();
    let reference = sol(12800);
    let err = |n: usize| {
        let tr = sol(n);
        let mut e = 0.0_f64;
        for (t, x, y) in tr.nodes() {
            if t >= tau {
                let (xr, yr) = reference.eval(t).unwrap();
                e = e.max((x - xr).abs()).max((y - yr).abs());
            }
        }
        e
    };
    let errs: Vec<f64> = [400, 800, 1600].into_iter().map(err).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min >= 3.7,
        format!("errors {:.2e} {:.2e} {:.2e}, orders {:.3} {:.3}", errs[0], errs[1], errs[2], orders[0], orders[1]),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome, Duration); 10] = [
        (1, criterion_1, Duration::from_secs(10)),
        (2, criterion_2, Duration::from_secs(10)),
        (3, criterion_3, Duration::from_secs(1)),
        (4, criterion_4, Duration::from_secs(5)),
        (5, criterion_5, Duration::from_secs(60)),
        (6, criterion_6, Duration::from_secs(600)),
        (7, criterion_7, Duration::from_secs(300)),
        (8, criterion_8, Duration::from_secs(120)),
        (9, criterion_9, Duration::from_secs(120)),
        (10, criterion_10, Duration::from_secs(60)),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (n, f, budget) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let out = f();
        let dt = t0.elapsed();
        let pass = out.pass && dt <= budget;
        failed += usize::from(!pass);
        println!(
            "criterion {n:>2} {} ({:.2} s of {} s): {}",
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs(),
            out.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
