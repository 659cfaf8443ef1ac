//! Acceptance run: one line per criterion, then a nonzero exit if any failed.
//!
//! Tolerances are pinned here rather than read from a config file, and every
//! criterion adds checks against values computed in this file: closed-form
//! tube modes, a composite Simpson rule for K₀, and eigenvalues straight from
//! the dense backend for the inertia counts.

use std::io::Write;
use std::time::Instant;

use gapflow::config::RunConfig;
use gapflow::eigensolve::inertia_count_perturbed;
use gapflow::experiments::lowest_eigenpairs;
use gapflow::gap::Approximant;
use gapflow::grid::TubeGrid;
use gapflow::greens::bessel_k0;
use gapflow::operator::build_laplacian;
use gapflow::verify::{self, CriterionResult, MathieuModel};
use serde_json::Value;

const FREE_REL: f64 = 2e-2;
const CROSSING: f64 = 1e-6;
const EQUIVALENCE: f64 = 1e-3;
const K0_REL: f64 = 1e-10;
const HS_REFINE: f64 = 0.02;
const HS_MATCH: f64 = 0.10;
const HS_RATIO: f64 = 2.0;
const LIPSCHITZ: f64 = 0.25;
const BV_SLACK: f64 = 1.05;
const DECAY_RESIDUAL: f64 = 0.1;
const WINDOW: f64 = 1e-9;
const BOUNDARY_ALLOWANCE: usize = 2;
const SEED: u64 = 7;

fn pinned() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = SEED;
    let t = &mut cfg.tol;
    t.free_rel = FREE_REL;
    t.crossing = CROSSING;
    t.equivalence = EQUIVALENCE;
    t.k0_rel = K0_REL;
    t.hs_refine = HS_REFINE;
    t.hs_match = HS_MATCH;
    t.hs_ratio = HS_RATIO;
    t.lipschitz = LIPSCHITZ;
    t.bv_slack = BV_SLACK;
    t.decay_residual = DECAY_RESIDUAL;
    t.window = WINDOW;
    t.boundary_allowance = BOUNDARY_ALLOWANCE;
    cfg
}

/// `(πm/20)²` for m = 1..10. The first transverse mode `(2π)²` lies far above.
const FREE_MODES: [f64; 10] = [
    0.024674011002723394,
    0.09869604401089358,
    0.2220660990245105,
    0.3947841760435743,
    0.6168502750680849,
    0.8882643961980423,
    1.2090265391334456,
    1.5791367041742972,
    1.9985948910208566,
    2.4674011002723395,
];

/// K₀ at a few radii, tabulated once from an arbitrary-precision library.
const K0_TABLE: [(f64, f64); 8] = [
    (0.01, 4.721244730161095),
    (0.1, 2.4270690247020164),
    (0.5, 0.9244190712276656),
    (1.0, 0.42102443824070823),
    (2.0, 0.1138938727495334),
    (5.0, 0.0036910983340425942),
    (10.0, 1.778006231616765e-05),
    (20.0, 5.741237815336524e-10),
];

/// Composite Simpson on `∫₀^S exp(−r cosh s) ds` with `S` where the
/// integrand has dropped below e^(−700).
fn k0_simpson(r: f64) -> f64 {
    let s_max = (700.0 / r).acosh();
    let n = 40_000;
    let h = s_max / n as f64;
    let f = |s: f64| (-r * s.cosh()).exp();
    let mut acc = f(0.0) + f(s_max);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    acc * h / 3.0
}

struct Line {
    id: usize,
    passed: bool,
    note: String,
}

fn report(out: &mut Vec<Line>, r: &CriterionResult, extra: Result<(), String>, note: String) {
    let passed = r.passed && extra.is_ok();
    let mut note = note;
    if let Err(e) = extra {
        note.push_str(&format!("; local check failed: {e}"));
    }
    if !r.passed {
        if let Some(e) = r.detail.get("error") {
            note.push_str(&format!("; error: {e}"));
        }
    }
    let line = format!(
        "criterion {:>2} {:<48} {} ({:.1} s) {}",
        r.id,
        r.title,
        if passed { "PASS" } else { "FAIL" },
        r.seconds,
        note
    );
    let mut so = std::io::stdout();
    writeln!(so, "{line}").unwrap();
    so.flush().unwrap();
    out.push(Line { id: r.id, passed, note });
}

fn num(v: &Value, key: &str) -> f64 {
    v.get(key).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn free_tube(cfg: &RunConfig, out: &mut Vec<Line>) {
    let r = verify::criterion_free_tube(cfg);
    let local = (|| {
        let g = TubeGrid::new(-10.0, 10.0, 400, 32).map_err(|e| e.to_string())?;
        let got = lowest_eigenpairs(&build_laplacian(&g), 10).map_err(|e| e.to_string())?.eigenvalues;
        let worst = got.iter().zip(FREE_MODES).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
        check(worst <= FREE_REL, format!("relative error {worst:e} against tabulated modes"))
    })();
    let d = &r.detail;
    let note = format!(
        "max_rel={:.3e} (tol {FREE_REL:e}) doubled={:.3e} ratio={:.3}",
        num(d, "max_rel_error"),
        num(d, "max_rel_error_doubled"),
        num(d, "ratio")
    );
    report(out, &r, local, note);
}

fn mathieu_block(cfg: &RunConfig, out: &mut Vec<Line>) {
    let start = Instant::now();
    let m: MathieuModel = match verify::mathieu_model() {
        Ok(m) => m,
        Err(e) => {
            for id in 2..=5 {
                let r = CriterionResult { id, title: "mathieu model", passed: false, seconds: 0.0, detail: serde_json::json!({ "error": e.to_string() }) };
                report(out, &r, Ok(()), String::new());
            }
            return;
        }
    };
    let built = start.elapsed().as_secs_f64();

    let r = verify::criterion_flow(cfg, &m);
    let e = m.choice.spec.e;
    let local = (|| {
        let s = &m.sweeps[0].1;
        check(!s.crossings.is_empty(), "no crossing at n = 20")?;
        // the crossing eigenvalue must be an eigenvalue of the approximant,
        // so the inertia count must jump across it
        let ap = &m.sweeps[0].0;
        let c = &s.crossings[0];
        let op = ap.operator(c.tau, gapflow::gap::InterfaceRule::HalfCell).map_err(|x| x.to_string())?;
        let (below, _) = inertia_count_perturbed(&op, c.eigenvalue - 1e-7).map_err(|x| x.to_string())?;
        let (above, _) = inertia_count_perturbed(&op, c.eigenvalue + 1e-7).map_err(|x| x.to_string())?;
        check(above > below, format!("no eigenvalue at {} for t = {}", c.eigenvalue, c.tau))?;
        check((c.eigenvalue - e).abs() <= CROSSING, format!("|λ − E| = {:e}", (c.eigenvalue - e).abs()))
    })();
    let first: Vec<f64> = m.sweeps.iter().map(|s| s.1.crossings.first().map_or(f64::NAN, |c| c.tau)).collect();
    report(out, &r, local, format!("E={e:.6} first tau n=20/40: {first:?} model built in {built:.1} s"));

    let r = verify::criterion_chain(&m);
    let local = (|| {
        let ts: Vec<f64> = (0..=16).map(|k| 0.5 * k as f64).collect();
        let mut c0 = Vec::new();
        for n in [20.0, 40.0, 80.0] {
            let ap = match m.sweeps.iter().find(|s| s.0.n == n) {
                Some(s) => s.0.clone(),
                None => Approximant::new(&m.family, &m.choice.spec, n, m.res, 64).map_err(|x| x.to_string())?,
            };
            for c in ap.chain(&ts).map_err(|x| x.to_string())? {
                check(c.n_full >= c.n_dec, format!("N_full < N_dec at n={n} t={}", c.t))?;
                check(c.n_dec == c.n1 + c.n2 + c.n3, format!("sum decomposition at n={n} t={}", c.t))?;
                check(c.n1 + c.n3 == c.n_dec0, format!("N1 + N3 ≠ N_dec(0) at n={n} t={}", c.t))?;
            }
            let (full, dec) = ap.sandwich().map_err(|x| x.to_string())?;
            check(full >= dec, "sandwich lower side")?;
            c0.push(full - dec);
        }
        check(c0.windows(2).all(|w| w[0] == w[1]), format!("c0 varies with n: {c0:?}"))
    })();
    let note = format!("c0={}", r.detail["c0"]);
    report(out, &r, local, note);

    let r = verify::criterion_growth(&m);
    let d = &r.detail;
    let local = (|| {
        let gap: Vec<u64> = d["count_gap"].as_array().ok_or("missing counts")?.iter().filter_map(Value::as_u64).collect();
        check(gap.len() == 40 && gap[39] >= gap[4] + 5, format!("count(40)={:?} count(5)={:?}", gap.get(39), gap.get(4)))
    })();
    let note = format!(
        "count(5)={} count(40)={} low-energy variation={}",
        d["count_gap"][4], d["count_gap"][39], d["low_variation"]
    );
    report(out, &r, local, note);

    let r = verify::criterion_decay(cfg, &m);
    let d = &r.detail;
    let local = (|| {
        let probes = d["combes_thomas"]["probes"].as_array().ok_or("missing probes")?;
        let v: Vec<f64> = probes.iter().map(|p| num(p, "measured_norm")).collect();
        check(v.len() == 4 && v.windows(2).all(|w| w[1] < w[0]), format!("norms not decreasing: {v:?}"))
    })();
    let note = format!("states={} eps0={:.4}", d["fits"].as_array().map_or(0, Vec::len), num(&d["combes_thomas"], "eps0"));
    report(out, &r, local, note);
}

fn decoupling(cfg: &RunConfig, out: &mut Vec<Line>) {
    let r = verify::criterion_decoupling(cfg);
    let d = &r.detail;
    let local = check(num(d, "hs_ratio") <= HS_RATIO, format!("HS max/min = {:.3} exceeds {HS_RATIO}", num(d, "hs_ratio")));
    let note = format!(
        "hs_ratio={:.3} (tol {HS_RATIO}) monotone_in_r={} spectral_shift={}/{} gap_count_max={}",
        num(d, "hs_ratio"),
        d["hs_monotone_in_r"],
        d["spectral_shift_holding"],
        d["members"],
        d["gap_count_max"]
    );
    report(out, &r, local, note);
}

fn kernels(cfg: &RunConfig, out: &mut Vec<Line>) {
    let r = verify::criterion_kernels(cfg);
    let local = (|| {
        for (x, want) in K0_TABLE {
            let got = bessel_k0(x).map_err(|e| e.to_string())?;
            check((got - want).abs() <= 1e-12 * want, format!("K0({x}) = {got:e}, table {want:e}"))?;
            let s = k0_simpson(x);
            check((got - s).abs() <= K0_REL * s, format!("K0({x}) = {got:e}, Simpson {s:e}"))?;
        }
        let rs: Vec<f64> = (0..60).map(|i| 0.01 * (2000.0f64).powf(i as f64 / 59.0)).collect();
        for r in rs {
            let got = bessel_k0(r).map_err(|e| e.to_string())?;
            let s = k0_simpson(r);
            check((got - s).abs() <= K0_REL * s, format!("K0({r}) = {got:e}, Simpson {s:e}"))?;
        }
        Ok(())
    })();
    let d = &r.detail;
    let note = format!(
        "k0_max_rel={:.2e} hs={:.5} refinement={:.2e} discrete={:.5} diff={:.2e}",
        num(d, "k0_max_rel_error"),
        num(d, "hs_fine"),
        num(d, "hs_refinement_change"),
        num(d, "hs_discrete"),
        num(d, "hs_discrete_difference")
    );
    report(out, &r, local, note);
}

fn transform(cfg: &RunConfig, out: &mut Vec<Line>) {
    let r = verify::criterion_transform(cfg);
    let d = &r.detail;
    let local = (|| {
        for row in d["equivalence"].as_array().ok_or("missing equivalence rows")? {
            check(num(row, "max_discrepancy") <= EQUIVALENCE, format!("t={} discrepancy {}", row["t"], row["max_discrepancy"]))?;
            check(row["counts"][0] == row["counts"][1], format!("t={} counts {}", row["t"], row["counts"]))?;
        }
        check(num(&d["lipschitz"], "max_relative_change") <= LIPSCHITZ, "difference quotients unstable")
    })();
    let note = format!("lipschitz_change={:.3} bv probes={}", num(&d["lipschitz"], "max_relative_change"), d["bv"].as_array().map_or(0, Vec::len));
    report(out, &r, local, note);
}

fn ids(cfg: &RunConfig, out: &mut Vec<Line>) {
    let r = verify::criterion_ids(cfg);
    let d = &r.detail;
    let local = (|| {
        let c: Vec<u64> = d["counts_tau"].as_array().ok_or("missing counts")?.iter().filter_map(Value::as_u64).collect();
        check(c.len() == 3 && c.windows(2).all(|w| w[1] >= w[0]), format!("counts at tau {c:?}"))?;
        let per: Vec<f64> = [4.0f64, 8.0, 16.0].iter().zip(&c).map(|(n, &k)| k as f64 / (n * n.ln())).collect();
        check(per.windows(2).skip(1).all(|w| w[1] <= w[0]), format!("count/(n log n) {per:?}"))?;
        let z: Vec<u64> = d["counts_zero"].as_array().ok_or("missing counts")?.iter().filter_map(Value::as_u64).collect();
        check(z.iter().all(|&k| k as usize <= BOUNDARY_ALLOWANCE), format!("counts at t=0 {z:?}"))
    })();
    let note = format!("tau={} counts={} t=0 counts={}", d["tau"], d["counts_tau"], d["counts_zero"]);
    report(out, &r, local, note);
}

fn engine(cfg: &RunConfig, out: &mut Vec<Line>) {
    let r = verify::criterion_engine(cfg);
    let local = (|| {
        for i in 0..5u64 {
            let op = verify::random_instance(SEED * 1000 + i).map_err(|e| e.to_string())?;
            let m = op.to_dense();
            let ev = m.self_adjoint_eigenvalues(faer::Side::Lower).map_err(|e| format!("{e:?}"))?;
            let mut ev = ev;
            ev.sort_by(f64::total_cmp);
            for k in [0, ev.len() / 2, ev.len() - 1] {
                let e = ev[k] + 1e-6;
                let (n, s) = inertia_count_perturbed(&op, e).map_err(|e| e.to_string())?;
                let want = ev.iter().filter(|&&l| l < s).count();
                check(n == want, format!("instance {i}: inertia {n}, dense {want}"))?;
            }
        }
        Ok(())
    })();
    let d = &r.detail;
    let note = format!(
        "count_mismatches={} window_diff={:.2e} (tol {WINDOW:e}) max_dim={}",
        d["count_mismatches"], num(d, "window_max_abs_difference"), d["max_dim"]
    );
    report(out, &r, local, note);
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this target
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let cfg = pinned();
    let mut out = Vec::new();
    free_tube(&cfg, &mut out);
    mathieu_block(&cfg, &mut out);
    decoupling(&cfg, &mut out);
    kernels(&cfg, &mut out);
    transform(&cfg, &mut out);
    ids(&cfg, &mut out);
    engine(&cfg, &mut out);
    out.sort_by_key(|l| l.id);
    let failed: Vec<&Line> = out.iter().filter(|l| !l.passed).collect();
    println!("acceptance: {} of {} criteria passed", out.len() - failed.len(), out.len());
    if !failed.is_empty() {
        for l in &failed {
            println!("failed: criterion {} ({})", l.id, l.note);
        }
        std::process::exit(1);
    }
}
