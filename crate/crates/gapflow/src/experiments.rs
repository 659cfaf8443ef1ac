//! Experiment orchestration: turns a [`RunConfig`] into output files.
//!
//! Each experiment writes its CSV and JSON files through one
//! [`OutputDir`] and finishes with `manifest.json`. Stage errors carry the
//! experiment and stage names.

use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, RunConfig};
use crate::decay::{
    combes_thomas_probe, decay_fit, gap_count_probe, gapped_ensemble, resolvent_hs_diff, scaled, spectral_shift_probe,
    DecayFit,
};
use crate::eigensolve::{inertia_count_perturbed, window_spectrum, SpectralResult};
use crate::error::{Error, Result, ResultExt};
use crate::gap::{
    floquet_gaps, h0_distance, interface_state_count, locate_gap, truncation, Approximant, GapPolicy, GapSpec,
    SweepOptions, SweepResult,
};
use crate::grid::{Resolution, TubeGrid};
use crate::greens::{
    bessel_k0, fit_k0_bounds, k0_exp_constant, kernel_hs_norm, kernel_hs_norm_region, kernel_samples, region_bound,
    HsQuadrature, KernelKind,
};
use crate::ids::{ids_scaling_run, plane_gaps, IdsRun};
use crate::operator::{build_laplacian, DiscreteOperator};
use crate::output::{float_list, sha256_hex, Cell, Manifest, OutputDir, StageTime};
use crate::par;
use crate::potential::{DislocationFamily, Preset, Sampler};
use crate::transform::{
    build_phi, bv_translation_bound, equivalence_check, lipschitz_scan, random_pl_ensemble, smooth_bump,
    strip_indicator, translation_lipschitz_probe, EquivalenceReport, EquivalenceSetup, GriddedFunction,
};
use crate::verify;

/// Stage timer and error labeller for one run.
pub struct Stages {
    experiment: Experiment,
    times: Mutex<Vec<StageTime>>,
}

impl Stages {
    pub fn new(experiment: Experiment) -> Self {
        Self { experiment, times: Mutex::new(Vec::new()) }
    }

    pub fn run<T>(&self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let r = f();
        self.times
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(StageTime { stage: name.to_string(), seconds: start.elapsed().as_secs_f64() });
        r.context(format!("{} / {name}", self.experiment))
    }

    pub fn times(&self) -> Vec<StageTime> {
        self.times.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

/// One verifiable statement measured by an experiment.
#[derive(Clone, Debug, Serialize)]
pub struct Probe {
    pub id: String,
    pub parameters: Value,
    pub measured: Value,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
}

impl Probe {
    pub fn new(id: &str, parameters: Value, measured: Value, passed: bool, slack: Option<f64>) -> Self {
        Self { id: id.to_string(), parameters, measured, passed, slack }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub manifest: Manifest,
    /// `false` when an experiment ran to the end but a checked statement failed
    pub passed: bool,
}

/// Runs `kind` with `cfg`, writing into `out_dir`.
pub fn run(cfg: &RunConfig, kind: Experiment, out_dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let out = OutputDir::create(out_dir)?;
    let stages = Stages::new(kind);
    let result = match kind {
        Experiment::Spectrum => spectrum(cfg, &out, &stages),
        Experiment::Sweep => sweep(cfg, &out, &stages),
        Experiment::Decay => decay(cfg, &out, &stages),
        Experiment::Decoupling => decoupling(cfg, &out, &stages),
        Experiment::Greens => greens(cfg, &out, &stages, GreensPart::All),
        Experiment::Transform => transform(cfg, &out, &stages, TransformPart::All),
        Experiment::Ids => ids(cfg, &out, &stages),
        Experiment::Verify => verify::run_suite(cfg, &out, &stages),
    };
    finish(cfg, kind, &out, &stages, start, result)
}

/// Only the `equivalence.csv` part of the transform experiment.
pub fn run_transform_compare(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let out = OutputDir::create(out_dir)?;
    let stages = Stages::new(Experiment::Transform);
    let r = transform(cfg, &out, &stages, TransformPart::Compare);
    finish(cfg, Experiment::Transform, &out, &stages, start, r)
}

/// Only the kernel dump of the greens experiment.
pub fn run_greens_dump(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let out = OutputDir::create(out_dir)?;
    let stages = Stages::new(Experiment::Greens);
    let r = greens(cfg, &out, &stages, GreensPart::Dump);
    finish(cfg, Experiment::Greens, &out, &stages, start, r)
}

fn finish(
    cfg: &RunConfig,
    kind: Experiment,
    out: &OutputDir,
    stages: &Stages,
    start: Instant,
    result: Result<bool>,
) -> Result<Outcome> {
    let status = match &result {
        Ok(true) => "passed".to_string(),
        Ok(false) => "failed".to_string(),
        Err(e) => format!("error: {e}"),
    };
    let manifest = Manifest {
        tool: "gapflow",
        version: env!("CARGO_PKG_VERSION"),
        experiment: kind.to_string(),
        config_sha256: sha256_hex(cfg.to_toml().as_bytes()),
        seed: cfg.seed,
        threads: par::threads(),
        parallel: par::is_parallel(),
        status,
        stages: stages.times(),
        total_seconds: start.elapsed().as_secs_f64(),
        files: out.files(),
    };
    out.json("manifest.json", &manifest)?;
    let passed = result?;
    Ok(Outcome { manifest, passed })
}

// ---------------------------------------------------------------------------
// shared pieces

/// Lowest `k` eigenpairs: bisection on inertia counts for an energy with
/// between `k` and `k + 8` eigenvalues below it and for a lower end close
/// under the smallest eigenvalue, then one window solve.
pub fn lowest_eigenpairs(op: &DiscreteOperator, k: usize) -> Result<SpectralResult> {
    if k == 0 || k > op.dim() {
        return Err(Error::Domain(format!("cannot take {k} eigenvalues of a dimension-{} operator", op.dim())));
    }
    let bound = op.norm_bound().max(1.0);
    let lo = -bound - 1.0;
    let (mut a, mut b) = (lo, bound + 1.0);
    let mut total = op.dim();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let c = inertia_count_perturbed(op, m)?.0;
        if c >= k {
            b = m;
            total = c;
            if c <= k + 8 {
                break;
            }
        } else {
            a = m;
        }
        if b - a < 1e-12 * bound {
            break;
        }
    }
    // keep the window (and the Lanczos shift at its middle) near the spectrum
    let (mut x, mut y) = (lo, b);
    for _ in 0..200 {
        if y - x <= 0.25 * (b - y) + 1e-12 * bound {
            break;
        }
        let m = 0.5 * (x + y);
        if inertia_count_perturbed(op, m)?.0 == 0 {
            x = m;
        } else {
            y = m;
        }
    }
    let mut s = window_spectrum(op, (x, b), total + 4)?;
    s.eigenvalues.truncate(k);
    s.residuals.truncate(k);
    if let Some(v) = s.eigenvectors.as_mut() {
        v.truncate(k);
    }
    Ok(s)
}

/// The operator of the `spectrum` experiment on `(x_min, x_max)`.
pub fn section_operator(cfg: &RunConfig) -> Result<DiscreteOperator> {
    let res = cfg.resolution()?;
    let grid = TubeGrid::with_spacing(cfg.grid.x_min, cfg.grid.x_max, res.hx, res.ny)?;
    let v = cfg.sampler()?;
    let field = crate::potential::sample(&*v, &grid)?;
    build_laplacian(&grid).plus_potential(&field.values)
}

/// Gap and target energy of a run, with how they were obtained.
#[derive(Clone, Debug, Serialize)]
pub struct GapChoice {
    pub spec: GapSpec,
    pub located: Option<(f64, f64)>,
    pub floquet: Option<(f64, f64)>,
    pub dist_h0: f64,
}

pub fn choose_gap(cfg: &RunConfig, family: &DislocationFamily, res: Resolution) -> Result<GapChoice> {
    let (a, b, located, floquet) = match (cfg.gap.a0, cfg.gap.b0) {
        (Some(a), Some(b)) => (a, b, None, None),
        _ => {
            let mut policy = GapPolicy::new(res);
            policy.e_max = cfg.gap.e_max;
            let gaps = locate_gap(family, &policy)?;
            let g = gaps.get(cfg.gap.index).ok_or_else(|| {
                Error::Config(format!(
                    "found {} gap(s) below {}, none with index {}",
                    gaps.len(),
                    cfg.gap.e_max,
                    cfg.gap.index
                ))
            })?;
            (g.a, g.b, Some((g.a, g.b)), g.floquet)
        }
    };
    let e = cfg.gap.e.unwrap_or(0.5 * (a + b));
    let (dist, _) = h0_distance(family, a, b, e, cfg.sweep.n, res)?;
    let spec = GapSpec::from_gap(a, b, Some(e), Some(dist))?;
    Ok(GapChoice { spec, located, floquet, dist_h0: dist })
}

/// Sweep of `H̃_{n,t}` over `[0, t_max]`.
pub fn sweep_at(
    family: &DislocationFamily,
    choice: &GapChoice,
    n: f64,
    t_max: f64,
    res: Resolution,
) -> Result<(Approximant, SweepResult)> {
    crate::gap::check_gap_precondition(family, &choice.spec, res, 2.0 * n)?;
    let tau_zero = choice.dist_h0 < 1e-8 * choice.spec.e.abs().max(1.0);
    let approx = Approximant::new(family, &choice.spec, n, res, 64)?;
    let sweep = approx.sweep(&SweepOptions::new(t_max), tau_zero)?;
    Ok((approx, sweep))
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

// ---------------------------------------------------------------------------
// spectrum

fn spectrum(cfg: &RunConfig, out: &OutputDir, st: &Stages) -> Result<bool> {
    let op = st.run("assemble", || section_operator(cfg))?;
    let s = st.run("eigensolve", || lowest_eigenpairs(&op, cfg.spectrum.count))?;
    out.csv(
        "spectrum.csv",
        &["index", "eigenvalue", "residual"],
        s.eigenvalues.iter().zip(&s.residuals).enumerate().map(|(i, (l, r))| vec![Cell::from(i), (*l).into(), (*r).into()]),
    )?;
    out.json(
        "spectrum.json",
        &json!({
            "dim": op.dim(),
            "grid": cfg.grid,
            "count": s.len(),
            "max_residual": s.residuals.iter().copied().fold(0.0, f64::max),
        }),
    )?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// sweep

fn sweep_rows(s: &SweepResult) -> Vec<Vec<Cell>> {
    s.samples
        .iter()
        .map(|x| vec![Cell::F(x.t), Cell::from(x.count_below_e), float_list(&x.gap_eigenvalues)])
        .collect()
}

fn sweep(cfg: &RunConfig, out: &OutputDir, st: &Stages) -> Result<bool> {
    let res = cfg.resolution()?;
    let family = cfg.family()?;
    let choice = st.run("gap", || choose_gap(cfg, &family, res))?;
    let (approx, s) = st.run("sweep", || sweep_at(&family, &choice, cfg.sweep.n, cfg.sweep.t_max, res))?;
    out.csv("sweep.csv", &["t", "count_below_E", "eigenvalues_in_gap"], sweep_rows(&s))?;
    let crossings: Vec<Value> = s
        .crossings
        .iter()
        .map(|c| {
            json!({
                "tau": c.tau,
                "eigenvalue": c.eigenvalue,
                "distance_to_E": c.distance_to(choice.spec.e),
                "residual": c.residual,
                "direction": c.direction,
                "count_jump": c.count_jump,
                "bracket": c.bracket,
            })
        })
        .collect();
    out.json(
        "crossings.json",
        &json!({ "gap": choice, "n": s.n, "tau_zero": s.tau_zero, "crossings": crossings }),
    )?;

    let chain = st.run("chain", || {
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        for &n in &cfg.sweep.chain_n {
            let ap = if n == approx.n { approx.clone() } else { Approximant::new(&family, &choice.spec, n, res, 64)? };
            let ts: Vec<f64> = linspace(0.0, cfg.sweep.t_max, cfg.sweep.chain_samples);
            let samples = ap.chain(&ts)?;
            let (full0, dec0) = ap.sandwich()?;
            let holds = samples.iter().all(|c| c.holds());
            for c in &samples {
                rows.push(vec![
                    Cell::F(n),
                    Cell::F(c.t),
                    Cell::from(c.n_full),
                    Cell::from(c.n_dec),
                    Cell::from(c.n1),
                    Cell::from(c.n2),
                    Cell::from(c.n3),
                    Cell::from(c.n_dec0),
                    Cell::from(usize::from(c.holds())),
                ]);
            }
            summary.push(json!({ "n": n, "c0": full0 as i64 - dec0 as i64, "all_hold": holds }));
        }
        Ok((rows, summary))
    })?;
    out.csv("chain.csv", &["n", "t", "n_full", "n_dec", "n1", "n2", "n3", "n_dec0", "holds"], chain.0)?;
    let c0: Vec<i64> = chain.1.iter().map(|v| v["c0"].as_i64().unwrap_or(i64::MIN)).collect();
    let all_hold = chain.1.iter().all(|v| v["all_hold"] == json!(true));
    let c0_constant = c0.windows(2).all(|w| w[0] == w[1]);
    out.json("chain.json", &json!({ "per_n": chain.1, "c0_constant": c0_constant, "all_hold": all_hold }))?;
    Ok(all_hold && c0_constant)
}

// ---------------------------------------------------------------------------
// decay

fn decay(cfg: &RunConfig, out: &OutputDir, st: &Stages) -> Result<bool> {
    let res = cfg.resolution()?;
    let family = cfg.family()?;
    let choice = st.run("gap", || choose_gap(cfg, &family, res))?;
    let e = choice.spec.e;
    let mut probes = Vec::new();

    let (_, s) = st.run("sweep", || sweep_at(&family, &choice, cfg.sweep.n, cfg.sweep.t_max, res))?;
    let fits: Vec<(f64, DecayFit)> = st.run("decay_fit", || {
        Ok(par::map(&s.crossings, |c| (c.tau, decay_fit(&c.eigenvector, &c.dof_x, 0.0))))
    })?;
    for (tau, f) in &fits {
        let ok = f.gamma > 0.0 && f.fit_residual < cfg.tol.decay_residual;
        probes.push(Probe::new(
            "eigenstate_decay",
            json!({ "tau": tau, "n": cfg.sweep.n, "E": e }),
            json!({ "gamma": f.gamma, "c": f.c, "fit_residual": f.fit_residual, "decades": f.decades, "k_range": f.k_range }),
            ok,
            Some(cfg.tol.decay_residual),
        ));
    }

    let ct = st.run("combes_thomas", || {
        let op = truncation(&*family.v1, cfg.decay.ct_length, res)?;
        let ks: Vec<usize> = cfg.decay.k_list.iter().map(|&k| k.round() as usize).collect();
        combes_thomas_probe(&op, e, &ks, 0.0)
    })?;
    probes.push(Probe::new(
        "combes_thomas",
        json!({ "lambda": e, "k_list": cfg.decay.k_list, "length": cfg.decay.ct_length }),
        serde_json::to_value(&ct)?,
        ct.eps0 > 0.0 && ct.monotone,
        None,
    ));

    let growth = st.run("interface_growth", || {
        let ts: Vec<f64> = (1..=40).map(|k| res.snap(k as f64)).collect();
        let bottom = lowest_eigenpairs(&truncation(&*family.v2, 64.0, res)?, 1)?.eigenvalues[0];
        let e_low = bottom - 0.5;
        let rows: Vec<Result<(f64, usize, usize)>> = par::map(&ts, |&t| {
            Ok((t, interface_state_count(t, &family, e, res)?, interface_state_count(t, &family, e_low, res)?))
        });
        let rows: Vec<(f64, usize, usize)> = rows.into_iter().collect::<Result<_>>()?;
        Ok((rows, e_low))
    })?;
    let (rows, e_low) = growth;
    out.csv(
        "interface_counts.csv",
        &["t", "count_gap", "count_below_bottom"],
        rows.iter().map(|&(t, a, b)| vec![Cell::F(t), Cell::from(a), Cell::from(b)]),
    )?;
    let at = |t: f64| rows.iter().find(|r| (r.0 - t).abs() < 1e-9).map(|r| r.1).unwrap_or(0);
    let low: Vec<usize> = rows.iter().map(|r| r.2).collect();
    let variation = low.iter().max().unwrap_or(&0) - low.iter().min().unwrap_or(&0);
    probes.push(Probe::new(
        "interface_growth",
        json!({ "E": e, "E_low": e_low, "t_range": [1, 40] }),
        json!({ "count_5": at(5.0), "count_40": at(40.0), "low_variation": variation }),
        at(40.0) >= at(5.0) + 5 && variation <= 1,
        None,
    ));
    let passed = probes.iter().all(|p| p.passed);
    out.json("probes.json", &probes)?;
    Ok(passed)
}

// ---------------------------------------------------------------------------
// decoupling

/// Resolvent HS differences over an ensemble at every scale and `r`.
pub fn hs_table(members: &[Preset], scales: &[f64], r_list: &[f64], len: f64, res: Resolution) -> Result<Vec<(usize, f64, f64, f64)>> {
    let jobs: Vec<(usize, f64)> = (0..members.len()).flat_map(|i| scales.iter().map(move |&s| (i, s))).collect();
    let rows: Vec<Result<Vec<(usize, f64, f64, f64)>>> = par::map(&jobs, |&(i, s)| {
        let w = scaled(&members[i], s)?;
        let op = truncation(&w, len, res)?;
        r_list.iter().map(|&r| Ok((i, s, r, resolvent_hs_diff(&op, 0.0, r)?))).collect()
    });
    Ok(rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

fn decoupling(cfg: &RunConfig, out: &OutputDir, st: &Stages) -> Result<bool> {
    let res = cfg.resolution()?;
    let d = &cfg.decoupling;
    let ens = st.run("ensemble", || gapped_ensemble(cfg.seed, d.members, res))?;
    let mut probes = Vec::new();

    let table = st.run("hs", || hs_table(&ens.members, &d.scales, &d.r_list, d.hs_length, res))?;
    out.csv(
        "hs.csv",
        &["member", "scale", "r", "hs"],
        table.iter().map(|&(i, s, r, v)| vec![Cell::from(i), s.into(), r.into(), v.into()]),
    )?;
    let r0 = d.r_list[0];
    let first: Vec<f64> = table.iter().filter(|x| x.2 == r0).map(|x| x.3).collect();
    let (mn, mx) = first.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let ratio = mx / mn;
    probes.push(Probe::new(
        "hs_uniformity",
        json!({ "scales": d.scales, "r": r0, "length": d.hs_length }),
        json!({ "min": mn, "max": mx, "ratio": ratio }),
        ratio <= cfg.tol.hs_ratio,
        Some(cfg.tol.hs_ratio),
    ));
    let mut monotone = true;
    for i in 0..ens.members.len() {
        for &s in &d.scales {
            let vals: Vec<f64> = table.iter().filter(|x| x.0 == i && x.1 == s).map(|x| x.3).collect();
            monotone &= vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
    probes.push(Probe::new("hs_monotone_in_r", json!({ "r_list": d.r_list }), json!({ "monotone": monotone }), monotone, None));

    let shifts = st.run("spectral_shift", || {
        let r: Vec<Result<_>> = par::map(&ens.members, |p| {
            let op = truncation(p, d.length, res)?;
            let cut = op.insert_dirichlet_cut(0.0)?;
            spectral_shift_probe(&op, &cut, ens.gap.e)
        });
        r.into_iter().collect::<Result<Vec<_>>>()
    })?;
    let holds = shifts.iter().filter(|r| r.holds).count();
    probes.push(Probe::new(
        "spectral_shift",
        json!({ "E": ens.gap.e, "length": d.length, "members": shifts.len() }),
        json!({ "holding": holds, "reports": shifts }),
        holds == shifts.len(),
        None,
    ));

    let counts = st.run("gap_count", || {
        let arcs = ens.samplers();
        let a = gap_count_probe(&arcs, &ens.gap, res, d.ring_length)?;
        let b = gap_count_probe(&arcs, &ens.gap, res, 2.0 * d.ring_length)?;
        Ok((a, b))
    })?;
    probes.push(Probe::new(
        "gap_count_uniformity",
        json!({ "ring_lengths": [d.ring_length, 2.0 * d.ring_length], "window": counts.0.window }),
        json!({ "max_count": [counts.0.max_count, counts.1.max_count], "skipped": [counts.0.skipped.len(), counts.1.skipped.len()] }),
        counts.0.max_count == counts.1.max_count,
        None,
    ));
    let passed = probes.iter().all(|p| p.passed);
    out.json("probes.json", &probes)?;
    Ok(passed)
}

// ---------------------------------------------------------------------------
// greens

#[derive(Clone, Copy, PartialEq, Eq)]
enum GreensPart {
    All,
    Dump,
}

fn greens(cfg: &RunConfig, out: &OutputDir, st: &Stages, part: GreensPart) -> Result<bool> {
    let g = &cfg.greens;
    let dump = st.run("dump", || {
        let x1 = linspace(-2.0, 2.0, g.dump_points);
        let x2 = linspace(0.0, 1.0, g.dump_points);
        let y = (0.5, g.dump_y);
        Ok((kernel_samples(KernelKind::Tube, &x1, &x2, y, 1e-13)?, kernel_samples(KernelKind::Difference, &x1, &x2, y, 1e-13)?))
    })?;
    let rows = |v: &[[f64; 5]]| -> Vec<Vec<Cell>> { v.iter().map(|r| r.iter().map(|&x| Cell::F(x)).collect()).collect() };
    out.csv("kernels.csv", &["x1", "x2", "y1", "y2", "value"], rows(&dump.0))?;
    out.csv("kernel_diff.csv", &["x1", "x2", "y1", "y2", "value"], rows(&dump.1))?;
    if part == GreensPart::Dump {
        return Ok(true);
    }

    let rs = logspace(g.r_min, g.r_max, g.samples);
    let k0: Vec<f64> = st.run("k0", || rs.iter().map(|&r| bessel_k0(r)).collect())?;
    let bounds = fit_k0_bounds(&rs)?;
    let bounds_hold = rs.iter().zip(&k0).all(|(&r, &k)| bounds.holds(r, k));
    out.csv("k0.csv", &["r", "k0"], rs.iter().zip(&k0).map(|(&r, &k)| vec![r.into(), k.into()]))?;

    let q = HsQuadrature::default();
    let (coarse, fine) = st.run("hs_norm", || Ok((kernel_hs_norm(&q)?, kernel_hs_norm(&q.refined())?)))?;
    let refine = (fine.value - coarse.value).abs() / fine.value;
    let region = st.run("hs_region", || kernel_hs_norm_region(&q, 1.0))?;
    let rb = region_bound(k0_exp_constant());
    let res = cfg.resolution()?;
    let discrete = st.run("discrete", || {
        let op = truncation(&Preset::Free, g.length, res)?;
        resolvent_hs_diff(&op, 0.0, 1.0)
    })?;
    let matched = (discrete - fine.value).abs() / fine.value;
    let probes = vec![
        Probe::new("k0_bounds", json!({ "r_min": g.r_min, "r_max": g.r_max }), serde_json::to_value(bounds)?, bounds_hold, None),
        Probe::new(
            "kernel_hs_refinement",
            json!({ "coarse": q, "fine": q.refined() }),
            json!({ "coarse": coarse, "fine": fine, "relative_change": refine }),
            fine.value.is_finite() && !fine.partial && refine <= cfg.tol.hs_refine,
            Some(cfg.tol.hs_refine),
        ),
        Probe::new(
            "kernel_hs_far_region",
            json!({ "s_min": 1.0 }),
            json!({ "norm": region.value, "bound": rb }),
            region.value <= rb,
            None,
        ),
        Probe::new(
            "kernel_hs_discrete_match",
            json!({ "hx": res.hx, "ny": res.ny, "length": g.length, "r": 1.0 }),
            json!({ "continuum": fine.value, "discrete": discrete, "relative_difference": matched }),
            matched <= cfg.tol.hs_match,
            Some(cfg.tol.hs_match),
        ),
    ];
    let passed = probes.iter().all(|p| p.passed);
    out.json("greens.json", &probes)?;
    Ok(passed)
}

// ---------------------------------------------------------------------------
// transform

#[derive(Clone, Copy, PartialEq, Eq)]
enum TransformPart {
    All,
    Compare,
}

/// Eigenvalue window of the transform runs: the gap common to both sides,
/// inset by `margin` of its width at each end.
pub fn transform_window(cfg: &RunConfig, family: &DislocationFamily, res: Resolution) -> Result<(f64, f64)> {
    let (a, b) = match (cfg.gap.a0, cfg.gap.b0) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            let mut common: Option<Vec<(f64, f64)>> = None;
            for v in [&family.v1, &family.v2] {
                let g = floquet_gaps(&**v, res, cfg.gap.e_min, cfg.gap.e_max)?.ok_or_else(|| {
                    Error::Config(format!("no band-structure oracle for {}; set gap.a0 and gap.b0", v.label()))
                })?;
                common = Some(match common {
                    None => g,
                    Some(c) => c
                        .iter()
                        .flat_map(|x| g.iter().map(move |y| (x.0.max(y.0), x.1.min(y.1))))
                        .filter(|x| x.1 > x.0)
                        .collect(),
                });
            }
            let gaps = common.unwrap_or_default();
            *gaps.get(cfg.gap.index).ok_or_else(|| {
                Error::Config(format!("{} common gap(s) found, none with index {}", gaps.len(), cfg.gap.index))
            })?
        }
    };
    let m = cfg.transform.margin * (b - a);
    Ok((a + m, b - m))
}

/// Gap number `index` of the band-structure oracle for `v` below 60, inset
/// by `margin` of its width at each end.
pub fn floquet_window(v: &dyn Sampler, res: Resolution, index: usize, margin: f64) -> Result<(f64, f64)> {
    let gaps = floquet_gaps(v, res, -100.0, 60.0)?
        .ok_or_else(|| Error::Config(format!("no band-structure oracle for {}", v.label())))?;
    let &(a, b) = gaps
        .get(index)
        .ok_or_else(|| Error::Config(format!("{} gap(s) found for {}, none with index {index}", gaps.len(), v.label())))?;
    let m = margin * (b - a);
    Ok((a + m, b - m))
}

fn bv_functions(seed: u64, count: usize) -> Result<Vec<(String, GriddedFunction)>> {
    let mut out: Vec<(String, GriddedFunction)> = random_pl_ensemble(seed, count, -2.0, 0.05, 81, 4, 1.0)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| (format!("random_{i}"), f))
        .collect();
    out.push(("strip".into(), strip_indicator(-0.3, 0.7, 0.05)?));
    out.push(("bump".into(), smooth_bump(0.02)?));
    Ok(out)
}

/// BV composition and translation probes over the test functions.
pub fn bv_probes(seed: u64, count: usize, slack: f64) -> Result<(Vec<Probe>, bool)> {
    let funcs = bv_functions(seed, count)?;
    let ts = [-0.5, -0.25, 0.1, 0.25, 0.5];
    let phis: Vec<_> = ts.iter().map(|&t| build_phi(t, 1.0)).collect::<Result<_>>()?;
    let rows: Vec<Result<(bool, bool, f64, f64)>> = par::map(&funcs, |(_, f)| {
        let mut bv_ok = true;
        let mut worst = 0.0f64;
        for p in &phis {
            let r = bv_translation_bound(f, p, slack)?;
            bv_ok &= r.holds;
            if r.bound > 0.0 {
                worst = worst.max(r.lhs / r.bound);
            }
        }
        let tr = translation_lipschitz_probe(f, &[0.4, 0.2, 0.1, 0.05, 0.025], slack)?;
        let tr_worst = tr.ratios.iter().map(|r| r.1 / tr.total_variation.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        Ok((bv_ok, tr.holds, worst, tr_worst))
    });
    let rows: Vec<(bool, bool, f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let bv_ok = rows.iter().all(|r| r.0);
    let tr_ok = rows.iter().all(|r| r.1);
    let probes = vec![
        Probe::new(
            "bv_translation_bound",
            json!({ "functions": funcs.len(), "t": ts }),
            json!({ "worst_ratio": rows.iter().map(|r| r.2).fold(0.0, f64::max) }),
            bv_ok,
            Some(slack),
        ),
        Probe::new(
            "translation_lipschitz",
            json!({ "functions": funcs.len() }),
            json!({ "worst_ratio_over_tv": rows.iter().map(|r| r.3).fold(0.0, f64::max) }),
            tr_ok,
            Some(slack),
        ),
    ];
    Ok((probes, bv_ok && tr_ok))
}

pub fn equivalence_rows(reports: &[EquivalenceReport]) -> Vec<Vec<Cell>> {
    reports
        .iter()
        .flat_map(|r| r.pairs.iter().map(move |p| vec![Cell::F(r.t), p.0.into(), p.1.into(), p.2.into()]))
        .collect()
}

fn transform(cfg: &RunConfig, out: &OutputDir, st: &Stages, part: TransformPart) -> Result<bool> {
    let tc = &cfg.transform;
    let res = Resolution::new(tc.hx, cfg.grid.ny)?;
    let family = cfg.family()?;
    let window = st.run("window", || transform_window(cfg, &family, res))?;
    let setup = EquivalenceSetup { half_length: tc.half_length, width: tc.width, rule: tc.rule, max_pairs: 64 };
    let reports = st.run("equivalence", || {
        par::map(&tc.t_list, |&t| equivalence_check(res.snap(t), &family, window, res, &setup))
            .into_iter()
            .collect::<Result<Vec<_>>>()
    })?;
    out.csv("equivalence.csv", &["t", "lambda_Ht", "lambda_Ct", "abs_diff"], equivalence_rows(&reports))?;
    let eq_ok = reports.iter().all(|r| r.counts_match && r.max_discrepancy <= cfg.tol.equivalence);
    let mut probes = vec![Probe::new(
        "equivalence",
        json!({ "window": window, "hx": tc.hx, "half_length": tc.half_length, "rule": tc.rule }),
        json!(reports
            .iter()
            .map(|r| json!({ "t": r.t, "max_discrepancy": r.max_discrepancy, "counts": [r.count_direct, r.count_transformed] }))
            .collect::<Vec<_>>()),
        eq_ok,
        Some(cfg.tol.equivalence),
    )];
    if part == TransformPart::Compare {
        out.json("transform.json", &probes)?;
        return Ok(eq_ok);
    }
    let scan = st.run("lipschitz", || {
        lipschitz_scan(&family, window, res, tc.half_length, (tc.t_start, tc.t_end), tc.dt0, tc.halvings, tc.rule)
    })?;
    probes.push(Probe::new(
        "branch_lipschitz",
        json!({ "t_range": [tc.t_start, tc.t_end], "dt0": tc.dt0, "halvings": tc.halvings }),
        serde_json::to_value(&scan)?,
        scan.levels.iter().all(|l| l.branches > 0) && scan.max_relative_change <= cfg.tol.lipschitz,
        Some(cfg.tol.lipschitz),
    ));
    let (bv, _) = st.run("bv", || bv_probes(cfg.seed, tc.ensemble, cfg.tol.bv_slack))?;
    probes.extend(bv);
    let passed = probes.iter().all(|p| p.passed);
    out.json("transform.json", &probes)?;
    Ok(passed)
}

// ---------------------------------------------------------------------------
// ids

/// Plane gap, tube gap spec, `τ₁` and window of a torus counting run.
#[derive(Clone, Debug, Serialize)]
pub struct IdsSetup {
    pub plane_gap: (f64, f64),
    pub gap: GapSpec,
    pub tau: f64,
    pub window: (f64, f64),
}

pub fn ids_setup(cfg: &RunConfig, family: &DislocationFamily, res: Resolution) -> Result<IdsSetup> {
    let plane = plane_gaps(&*family.v1, res, cfg.gap.e_min, cfg.gap.e_max)?
        .ok_or_else(|| Error::Config(format!("no plane band structure for {}", family.v1.label())))?;
    let pg = *plane
        .get(cfg.gap.index)
        .ok_or_else(|| Error::Config(format!("{} plane gap(s) found, none with index {}", plane.len(), cfg.gap.index)))?;
    let e = cfg.gap.e.unwrap_or(0.5 * (pg.0 + pg.1));
    let tube = floquet_gaps(&*family.v1, res, cfg.gap.e_min, cfg.gap.e_max)?
        .ok_or_else(|| Error::Config(format!("no tube band structure for {}", family.v1.label())))?;
    let tg = tube
        .into_iter()
        .find(|g| g.0 < e && g.1 > e)
        .ok_or_else(|| Error::Config(format!("E = {e} lies in no tube gap")))?;
    let gap = GapSpec::from_gap(tg.0, tg.1, Some(e), None)?;
    let tau = match cfg.ids.t {
        Some(t) => res.snap(t),
        None => {
            let choice = GapChoice { spec: gap, located: None, floquet: Some(tg), dist_h0: f64::INFINITY };
            let (_, s) = sweep_at(family, &choice, cfg.sweep.n, cfg.sweep.t_max, res)?;
            let c = s.crossings.first().ok_or(Error::NoCrossing { t_min: 0.0, t_max: cfg.sweep.t_max })?;
            res.snap(c.tau)
        }
    };
    let w = cfg.ids.window_fraction * (pg.1 - pg.0);
    Ok(IdsSetup { plane_gap: pg, gap, tau, window: (e - w, e + w) })
}

pub fn ids_rows(r: &IdsRun) -> Vec<Vec<Cell>> {
    r.run
        .n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            vec![Cell::F(n), Cell::from(r.run.counts[i]), r.fit.count_per_n[i].into(), r.fit.count_per_nlogn[i].into()]
        })
        .collect()
}

fn ids(cfg: &RunConfig, out: &OutputDir, st: &Stages) -> Result<bool> {
    let res = cfg.resolution()?;
    let family = cfg.family()?;
    let setup = st.run("setup", || ids_setup(cfg, &family, res))?;
    let n_list = &cfg.ids.n_list;
    let at_tau = st.run("count_tau", || {
        ids_scaling_run(&family, setup.tau, setup.window, n_list, res, cfg.ids.method, Some(setup.plane_gap))
    })?;
    let at_zero = st.run("count_zero", || {
        ids_scaling_run(&family, 0.0, setup.window, n_list, res, cfg.ids.method, Some(setup.plane_gap))
    })?;
    let header = ["n", "count", "count_per_n", "count_per_nlogn"];
    out.csv("ids.csv", &header, ids_rows(&at_tau))?;
    out.csv("ids_t0.csv", &header, ids_rows(&at_zero))?;
    let allowance = cfg.tol.boundary_allowance;
    let passed = at_tau.fit.nondecreasing
        && at_tau.fit.slope_top > 0.0
        && at_tau.fit.tail_nonincreasing
        && at_zero.run.counts.iter().all(|&c| c <= allowance);
    out.json("ids.json", &json!({ "setup": setup, "at_tau": at_tau, "at_zero": at_zero, "passed": passed }))?;
    Ok(passed)
}
