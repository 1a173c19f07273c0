//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line before asserting.
//!
//! The tests hold a shared lock so wall-clock limits are not distorted by
//! other criteria running at the same time.

use std::sync::Mutex;
use std::time::Instant;

use snlp_core::classical::{classical_exit_down, classical_exit_up, wq, zq, ScaleFunctions};
use snlp_core::generalized::{
    exit_down_functional, exit_up_laplace, local_time_laplace, supremum_atom, supremum_cdf, supremum_density,
    z_f_truncated, ExitSpec, Generalized, Grids,
};
use snlp_core::levy::LevyModel;
use snlp_core::potential::{BivariatePotential, NamedPotential, UnivariatePotential};
use snlp_core::quad::adaptive_simpson;
use snlp_core::simulate::{conditional_mc, occupation_mc, run_exit_mc, MCConfig};
use snlp_core::stats::ks_test;
use snlp_core::volterra;

static SERIAL: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn bm01() -> LevyModel {
    LevyModel::brownian(0.0, 1.0).unwrap()
}

fn unit() -> ExitSpec {
    ExitSpec::new(0.0, 0.5, 1.0).unwrap()
}

/// Exact Brownian exit-up probability with discount q, written with sinh.
fn sinh_exit(q: f64, x: f64, a: f64) -> f64 {
    if q == 0.0 {
        x / a
    } else {
        let d = (2.0 * q).sqrt();
        (d * x).sinh() / (d * a).sinh()
    }
}

#[test]
fn criterion_1_classical_identities() {
    let _g = lock();
    let start = Instant::now();
    let model = bm01();
    let mut worst_eq1: f64 = 0.0;
    let mut worst_eq3: f64 = 0.0;
    for q in [0.0, 0.5] {
        let up = classical_exit_up(&model, q, 0.0, 0.5, 1.0).unwrap();
        worst_eq1 = worst_eq1.max((up - sinh_exit(q, 0.5, 1.0)).abs());
        let sf = ScaleFunctions::new(model, q).unwrap();
        let tail = adaptive_simpson(|s| sf.w_prime(s).unwrap() / sf.w(s).unwrap(), 0.5, 1.0, 1e-13).unwrap();
        let ratio = sf.w(0.5).unwrap() / sf.w(1.0).unwrap();
        worst_eq3 = worst_eq3.max(((-tail.value).exp() - ratio).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_eq1 < 1e-8 && worst_eq3 < 1e-8 && secs < 1.0;
    report(1, pass, format!("eq1 err {worst_eq1:.2e}, eq3 err {worst_eq3:.2e} (tol 1e-8), {secs:.3}s (< 1s)"));
    assert!(pass);
}

#[test]
fn criterion_2_volterra_recovers_q_scale() {
    let _g = lock();
    let start = Instant::now();
    let model = bm01();
    let f = UnivariatePotential::constant(0.5).unwrap();
    let sol = volterra::solve(&model, &f, 0.0, 1.0, 2000).unwrap();
    let w_err = (sol.base.w_values[2000] - 2.0 * 1f64.sinh()).abs();
    let z_err = (sol.z_table.w_values[2000] - 1f64.cosh()).abs();
    let max_err = |n: usize| {
        let s = volterra::solve(&model, &f, 0.0, 1.0, n).unwrap();
        s.base
            .grid()
            .iter()
            .zip(&s.base.w_values)
            .map(|(u, v)| (v - 2.0 * u.sinh()).abs())
            .fold(0.0, f64::max)
    };
    let reduction = max_err(200) / max_err(400);
    let secs = start.elapsed().as_secs_f64();
    let pass = w_err < 1e-6 && z_err < 1e-6 && reduction >= 3.0 && secs < 5.0;
    report(
        2,
        pass,
        format!("W err {w_err:.2e}, Z err {z_err:.2e} (tol 1e-6), halving ratio {reduction:.2} (>= 3), {secs:.2}s (< 5s)"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_truncated_z_offset_constancy() {
    let _g = lock();
    let start = Instant::now();
    let model = bm01();
    let level = NamedPotential::Level { c: 0.5, r: 0.5 }.univariate().unwrap().unwrap();
    let lifted = BivariatePotential::lift(&level);
    let xs: Vec<f64> = (0..10).map(|k| 0.1 + k as f64 * 1.9 / 9.0).collect();
    let excursion = Generalized::new(&model, &lifted, 0.0, Grids::default()).unwrap().w_f(&xs).unwrap();
    let renewal = volterra::solve(&model, &level, 0.0, 2.0, 2000).unwrap();
    let ratios: Vec<f64> = xs.iter().zip(&excursion).map(|(x, e)| e / renewal.w_f(*x).unwrap()).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64).sqrt();
    let cv = sd / mean;
    let secs = start.elapsed().as_secs_f64();
    let pass = cv < 1e-5 && secs < 30.0;
    report(3, pass, format!("CV {cv:.2e} (< 1e-5), {secs:.2}s (< 30s)"));
    assert!(pass);
}

#[test]
fn criterion_4_supremum_potential_vs_mc() {
    let _g = lock();
    let start = Instant::now();
    let model = bm01();
    let spec = unit();
    let f = NamedPotential::Reflected { c: 0.4, bound: 2.0 }.bivariate().unwrap();
    let grids = Grids::default();
    let up = exit_up_laplace(&model, &f, &spec, grids.n_outer, grids.n_inner).unwrap();
    let down = exit_down_functional(&model, &f, |_| 1.0, &spec, grids.n_outer, grids.n_inner).unwrap();
    let cfg = MCConfig::new(1e-4, 200_000, 20240601);
    let mc = run_exit_mc(&model, &f, |_| 1.0, |_, _| 1.0, &spec, &cfg, false).unwrap();
    let z_up = mc.up_laplace.zscore(up);
    let z_down = mc.down_functional.zscore(down);
    let se = mc.up_laplace.std_error.max(mc.down_functional.std_error);
    let secs = start.elapsed().as_secs_f64();
    let pass = z_up.abs() < 3.0 && z_down.abs() < 3.0 && se < 2e-3 && secs < 300.0;
    report(
        4,
        pass,
        format!(
            "up det {up:.6} mc {:.6} z {z_up:.2}; down det {down:.6} mc {:.6} z {z_down:.2}; max se {se:.2e} (< 2e-3); {secs:.1}s (< 300s)",
            mc.up_laplace.mean, mc.down_functional.mean
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_conditional_law() {
    let _g = lock();
    let model = bm01();
    let spec = unit();
    let f = BivariatePotential::constant(0.5).unwrap();
    let cfg = MCConfig::new(1e-4, 1_000_000, 77);
    let r = conditional_mc(&model, &f, &spec, &cfg, 8).unwrap();
    let frac = r.fraction_within(3.0);
    let z_a = r.at_a.zscore(0.886819);

    // law of total expectation, each side computed on its own
    let eng = Generalized::new(&model, &f, 0.0, Grids::default()).unwrap();
    let m = 16;
    let h = (spec.a - spec.x) / m as f64;
    let vals: Vec<f64> = (0..=m)
        .map(|i| {
            let z = if i == m { spec.a - 1e-9 } else { spec.x + h * i as f64 };
            eng.conditional_laplace(&spec, z).unwrap() * supremum_density(&model, &spec, z).unwrap()
        })
        .collect();
    let simpson = h / 3.0
        * (vals[0] + vals[m] + (1..m).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * vals[i]).sum::<f64>());
    let atom = supremum_atom(&model, &spec).unwrap();
    let lhs = simpson * (1.0 - atom) + eng.conditional_laplace(&spec, spec.a).unwrap() * atom;
    let whole = eng.evaluate(&spec, |_| 1.0).unwrap();
    let identity_err = (lhs - whole.up_laplace - whole.down_value).abs();

    let pass = frac >= 0.9 && z_a.abs() < 3.0 && identity_err < 1e-5;
    let zs: Vec<String> = r.bins.iter().map(|b| b.zscore.map_or("empty".into(), |z| format!("{z:.2}"))).collect();
    report(
        5,
        pass,
        format!(
            "bins within 3se {:.0}% (>= 90%) z=[{}]; at a mc {:.6} z {z_a:.2}; identity err {identity_err:.2e} (< 1e-5)",
            100.0 * frac,
            zs.join(", "),
            r.at_a.mean
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_supremum_at_ruin_law() {
    let _g = lock();
    let model = bm01();
    let spec = unit();
    let total = adaptive_simpson(|z| supremum_density(&model, &spec, z).unwrap(), 0.5, 1.0 - 1e-15, 1e-12)
        .unwrap()
        .value;
    let shape_err = (0..50)
        .map(|i| {
            let z = 0.5 + 0.01 * i as f64;
            (supremum_density(&model, &spec, z).unwrap() - 1.0 / (z * z)).abs()
        })
        .fold(0.0, f64::max);
    let atom = supremum_atom(&model, &spec).unwrap();
    let cfg = MCConfig::new(1e-4, 100_000, 4242);
    let mc = run_exit_mc(&model, &BivariatePotential::zero(), |_| 1.0, |_, _| 1.0, &spec, &cfg, true).unwrap();
    let sups: Vec<f64> = mc.samples.unwrap().iter().filter(|s| !s.exited_up).map(|s| s.s_at_exit).collect();
    let ks = ks_test(&sups, |z| supremum_cdf(&model, &spec, z.clamp(spec.x, spec.a)).unwrap());
    let pass = (total - 1.0).abs() < 1e-8 && shape_err < 1e-12 && (atom - 0.5).abs() < 1e-15 && ks.p_value > 0.01;
    report(
        6,
        pass,
        format!(
            "integral of nu {total:.10} (tol 1e-8), nu vs 1/z^2 {shape_err:.1e}, atom {atom}; KS D {:.4} p {:.3} (> 0.01) n {}",
            ks.statistic, ks.p_value, ks.n
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_local_time_and_occupation() {
    let _g = lock();
    let model = bm01();
    let spec = unit();
    let half = UnivariatePotential::constant(0.5).unwrap();
    let grids = Grids::default();
    let lt = local_time_laplace(&model, &half, &spec, grids.n_outer, grids.n_inner).unwrap();
    let classical = classical_exit_up(&model, 0.5, 0.0, 0.5, 1.0).unwrap() + classical_exit_down(&model, 0.5, 0.0, 0.5, 1.0).unwrap();
    let lt_err = (lt - classical).abs();
    let coarse = occupation_mc(&model, &half, &spec, &MCConfig::new(1e-3, 4_000, 12), 1001).unwrap();
    let fine = occupation_mc(&model, &half, &spec, &MCConfig::new(2.5e-4, 4_000, 12), 1001).unwrap();
    let factor = coarse.mean_abs_discrepancy.mean / fine.mean_abs_discrepancy.mean;
    let pass = lt_err < 1e-5 && (lt - 0.886819).abs() < 1e-5 && factor >= 1.5;
    report(
        7,
        pass,
        format!(
            "local-time transform {lt:.7} vs classical {classical:.7} err {lt_err:.1e} (tol 1e-5); E|A-B| {:.3e} -> {:.3e}, factor {factor:.2} (>= 1.5)",
            coarse.mean_abs_discrepancy.mean, fine.mean_abs_discrepancy.mean
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_esscher_tilt_identity() {
    let _g = lock();
    let models = [bm01(), LevyModel::exp_jump_diffusion(0.3, 0.5, 1.0, 0.25).unwrap()];
    let mut worst: f64 = 0.0;
    for model in models {
        for q in [0.5, 1.0] {
            let phi = model.phi(q).unwrap();
            let tilted = model.esscher_tilt(phi).unwrap();
            for x in [0.5, 1.0, 2.0] {
                let direct = wq(&model, q, x).unwrap();
                let via_tilt = (phi * x).exp() * wq(&tilted, 0.0, x).unwrap();
                worst = worst.max((direct - via_tilt).abs() / direct);
            }
        }
    }
    let pass = worst < 1e-8;
    report(8, pass, format!("max relative error {worst:.2e} (< 1e-8)"));
    assert!(pass);
}

#[test]
fn criterion_9_z0_closed_form() {
    let _g = lock();
    let model = LevyModel::brownian(1.0, 1.0).unwrap();
    let zero = BivariatePotential::zero();
    let mut worst: f64 = 0.0;
    let mut spans = Vec::new();
    for x in [0.5, 1.0, 2.0] {
        let z = z_f_truncated(&model, &zero, 0.0, x, x + 1.0, 1e-10).unwrap();
        worst = worst.max((z.value - 1.0).abs());
        spans.push(z.a_max - x);
        // Z^(0) = 1 for every model
        assert_eq!(zq(&model, 0.0, x).unwrap(), 1.0);
    }
    let pass = worst < 1e-8;
    report(9, pass, format!("max |Z_0 - 1| {worst:.2e} (< 1e-8), truncation spans {spans:?}"));
    assert!(pass);
}
