//! Potential samplers, the dislocation family and node sampling.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PotentialField, TubeGrid};

pub type XPart = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type YPart = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A bounded real function on the tube, 1-periodic in y.
pub trait Sampler: Send + Sync + fmt::Debug {
    fn value(&self, x: f64, y: f64) -> Result<f64>;

    /// Jump locations of the x-profile inside `[lo, hi]`, ascending.
    fn x_breaks(&self, _lo: f64, _hi: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Period in x, if the sampler has one.
    fn x_period(&self) -> Option<f64> {
        None
    }

    fn sup_norm(&self) -> f64;

    /// `(V1, V2)` with `V(x, y) = V1(x) + V2(y)`, when the sampler has that form.
    fn separable(&self) -> Option<(XPart, YPart)> {
        None
    }

    fn label(&self) -> String;
}

/// Built-in analytic potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preset {
    Free,
    Constant { c: f64 },
    /// `2q cos(2π(x - phase))`
    Mathieu { q: f64, phase: f64 },
    /// `2 q1 cos(2πx) + 2 q2 cos(2πy)`; the y-part has zero mean.
    Product { q1: f64, q2: f64 },
    /// `amp (cos x + eps cos πx)`
    Quasiperiodic { amp: f64, eps: f64 },
    /// `amp` on `frac(x) ∈ [lo, hi)`, zero elsewhere.
    Step { amp: f64, lo: f64, hi: f64 },
    /// `a (1 + cos 2π(x - px)) (1 + b cos 2π(y - py))`, nonnegative for |b| ≤ 1.
    Lattice { a: f64, b: f64, px: f64, py: f64 },
    /// `-depth` on `|x| < half_width`.
    Well { depth: f64, half_width: f64 },
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

impl Sampler for Preset {
    fn value(&self, x: f64, y: f64) -> Result<f64> {
        Ok(match *self {
            Preset::Free => 0.0,
            Preset::Constant { c } => c,
            Preset::Mathieu { q, phase } => 2.0 * q * (2.0 * PI * (x - phase)).cos(),
            Preset::Product { q1, q2 } => {
                2.0 * q1 * (2.0 * PI * x).cos() + 2.0 * q2 * (2.0 * PI * y).cos()
            }
            Preset::Quasiperiodic { amp, eps } => amp * (x.cos() + eps * (PI * x).cos()),
            Preset::Step { amp, lo, hi } => {
                let f = frac(x);
                if f >= lo && f < hi {
                    amp
                } else {
                    0.0
                }
            }
            Preset::Lattice { a, b, px, py } => {
                a * (1.0 + (2.0 * PI * (x - px)).cos()) * (1.0 + b * (2.0 * PI * (y - py)).cos())
            }
            Preset::Well { depth, half_width } => {
                if x.abs() < half_width {
                    -depth
                } else {
                    0.0
                }
            }
        })
    }

    fn x_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        match *self {
            Preset::Step { lo: a, hi: b, .. } => {
                let mut out = Vec::new();
                let mut k = lo.floor() - 1.0;
                while k <= hi.ceil() {
                    for p in [k + a, k + b] {
                        if p >= lo && p <= hi {
                            out.push(p);
                        }
                    }
                    k += 1.0;
                }
                out.sort_by(f64::total_cmp);
                out.dedup();
                out
            }
            Preset::Well { half_width, .. } => [-half_width, half_width]
                .into_iter()
                .filter(|p| *p >= lo && *p <= hi)
                .collect(),
            _ => Vec::new(),
        }
    }

    fn x_period(&self) -> Option<f64> {
        match self {
            Preset::Free | Preset::Constant { .. } => Some(1.0),
            Preset::Mathieu { .. } | Preset::Product { .. } | Preset::Step { .. } => Some(1.0),
            Preset::Lattice { .. } => Some(1.0),
            Preset::Quasiperiodic { .. } | Preset::Well { .. } => None,
        }
    }

    fn sup_norm(&self) -> f64 {
        match *self {
            Preset::Free => 0.0,
            Preset::Constant { c } => c.abs(),
            Preset::Mathieu { q, .. } => 2.0 * q.abs(),
            Preset::Product { q1, q2 } => 2.0 * (q1.abs() + q2.abs()),
            Preset::Quasiperiodic { amp, eps } => amp.abs() * (1.0 + eps.abs()),
            Preset::Step { amp, .. } => amp.abs(),
            Preset::Lattice { a, b, .. } => 2.0 * a.abs() * (1.0 + b.abs()),
            Preset::Well { depth, .. } => depth.abs(),
        }
    }

    fn separable(&self) -> Option<(XPart, YPart)> {
        let zero: YPart = Arc::new(|_| 0.0);
        let p = self.clone();
        let xonly = move |x: f64| p.value(x, 0.0).unwrap_or(f64::NAN);
        match *self {
            Preset::Free | Preset::Constant { .. } | Preset::Mathieu { .. } | Preset::Step { .. } => {
                Some((Arc::new(xonly), zero))
            }
            Preset::Quasiperiodic { .. } | Preset::Well { .. } => Some((Arc::new(xonly), zero)),
            Preset::Lattice { b, .. } if b == 0.0 => Some((Arc::new(xonly), zero)),
            Preset::Product { q1, q2 } => Some((
                Arc::new(move |x| 2.0 * q1 * (2.0 * PI * x).cos()),
                Arc::new(move |y| 2.0 * q2 * (2.0 * PI * y).cos()),
            )),
            Preset::Lattice { .. } => None,
        }
    }

    fn label(&self) -> String {
        match self {
            Preset::Free => "free".into(),
            Preset::Constant { c } => format!("constant(c={c})"),
            Preset::Mathieu { q, phase } => format!("mathieu(q={q}, phase={phase})"),
            Preset::Product { q1, q2 } => format!("product(q1={q1}, q2={q2})"),
            Preset::Quasiperiodic { amp, eps } => format!("quasiperiodic(amp={amp}, eps={eps})"),
            Preset::Step { amp, lo, hi } => format!("step(amp={amp}, [{lo}, {hi}))"),
            Preset::Lattice { a, b, px, py } => format!("lattice(a={a}, b={b}, px={px}, py={py})"),
            Preset::Well { depth, half_width } => format!("well(depth={depth}, w={half_width})"),
        }
    }
}

/// Tabulated potential on a tensor grid, linear in x and periodic-linear in y.
#[derive(Clone, Debug)]
pub struct GriddedSampler {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// `values[ix * ys.len() + iy]`
    values: Vec<f64>,
    sup: f64,
}

impl GriddedSampler {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || ys.is_empty() || values.len() != xs.len() * ys.len() {
            return Err(Error::Domain(format!(
                "gridded potential needs a full tensor grid, got {}x{} axes and {} values",
                xs.len(),
                ys.len(),
                values.len()
            )));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("gridded axes must be strictly increasing".into()));
        }
        if ys[0] < 0.0 || *ys.last().unwrap() >= 1.0 {
            return Err(Error::Domain("gridded y values must lie in [0, 1)".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("gridded potential contains non-finite values".into()));
        }
        let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self { xs, ys, values, sup })
    }

    /// Reads a CSV with header `x,y,value`. Rows may come in any order but
    /// must cover a full tensor grid.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        if names != ["x", "y", "value"] {
            return Err(Error::Domain(format!(
                "{}: expected header x,y,value, found {}",
                path.display(),
                names.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i).unwrap_or("").trim().parse::<f64>().map_err(|e| {
                    Error::Domain(format!("{} row {}: {e}", path.display(), k + 2))
                })
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?));
        }
        Self::from_rows(&rows)
    }

    pub fn from_rows(rows: &[(f64, f64, f64)]) -> Result<Self> {
        let mut xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        let mut values = vec![f64::NAN; xs.len() * ys.len()];
        for &(x, y, v) in rows {
            let ix = xs.binary_search_by(|p| p.total_cmp(&x)).unwrap();
            let iy = ys.binary_search_by(|p| p.total_cmp(&y)).unwrap();
            values[ix * ys.len() + iy] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Domain("gridded potential does not cover a tensor grid".into()));
        }
        Self::new(xs, ys, values)
    }

    fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.ys.len() + iy]
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }
}

impl Sampler for GriddedSampler {
    fn value(&self, x: f64, y: f64) -> Result<f64> {
        let (lo, hi) = self.x_range();
        let tol = 1e-9 * (hi - lo);
        if !(x >= lo - tol && x <= hi + tol) {
            return Err(Error::Domain(format!("gridded potential queried at x = {x} outside [{lo}, {hi}]")));
        }
        let x = x.clamp(lo, hi);
        let ix = match self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i - 1,
        };
        let sx = (x - self.xs[ix]) / (self.xs[ix + 1] - self.xs[ix]);

        let ny = self.ys.len();
        let y = frac(y);
        // periodic bracket in y
        let (iy0, iy1, sy) = match self.ys.binary_search_by(|p| p.total_cmp(&y)) {
            Ok(i) => (i, i, 0.0),
            Err(0) => {
                let gap = self.ys[0] + 1.0 - self.ys[ny - 1];
                (ny - 1, 0, (y + 1.0 - self.ys[ny - 1]) / gap)
            }
            Err(i) if i == ny => {
                let gap = self.ys[0] + 1.0 - self.ys[ny - 1];
                (ny - 1, 0, (y - self.ys[ny - 1]) / gap)
            }
            Err(i) => (i - 1, i, (y - self.ys[i - 1]) / (self.ys[i] - self.ys[i - 1])),
        };
        let row = |iy| (1.0 - sx) * self.at(ix, iy) + sx * self.at(ix + 1, iy);
        Ok((1.0 - sy) * row(iy0) + sy * row(iy1))
    }

    fn sup_norm(&self) -> f64 {
        self.sup
    }

    fn label(&self) -> String {
        format!("gridded({}x{})", self.xs.len(), self.ys.len())
    }
}

/// `V(x − dx, y)`.
#[derive(Clone, Debug)]
pub struct Shifted {
    pub inner: Arc<dyn Sampler>,
    pub dx: f64,
}

impl Sampler for Shifted {
    fn value(&self, x: f64, y: f64) -> Result<f64> {
        self.inner.value(x - self.dx, y)
    }

    fn x_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.inner.x_breaks(lo - self.dx, hi - self.dx).into_iter().map(|b| b + self.dx).collect()
    }

    fn x_period(&self) -> Option<f64> {
        self.inner.x_period()
    }

    fn sup_norm(&self) -> f64 {
        self.inner.sup_norm()
    }

    fn separable(&self) -> Option<(XPart, YPart)> {
        let (x, y) = self.inner.separable()?;
        let dx = self.dx;
        Some((Arc::new(move |s| x(s - dx)), y))
    }

    fn label(&self) -> String {
        format!("{} shifted by {}", self.inner.label(), self.dx)
    }
}

/// The pair `(V1, V2)`. At shift `t` the potential is `V1(x, y)` for
/// `x >= 0` and `V2(x + t, y)` for `x < 0`.
#[derive(Clone, Debug)]
pub struct DislocationFamily {
    pub v1: Arc<dyn Sampler>,
    pub v2: Arc<dyn Sampler>,
    pub t: f64,
}

impl DislocationFamily {
    pub fn new(v1: Arc<dyn Sampler>, v2: Arc<dyn Sampler>) -> Self {
        Self { v1, v2, t: 0.0 }
    }

    /// Same sampler on both sides.
    pub fn uniform(v: Arc<dyn Sampler>) -> Self {
        Self { v1: v.clone(), v2: v, t: 0.0 }
    }

    pub fn preset(p: Preset) -> Self {
        Self::uniform(Arc::new(p))
    }

    pub fn with_t(&self, t: f64) -> Self {
        Self { t, ..self.clone() }
    }

    pub fn value(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        if x >= 0.0 {
            self.v1.value(x, y)
        } else {
            self.v2.value(x + t, y)
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.v1.sup_norm().max(self.v2.sup_norm())
    }
}

/// Samples the dislocated potential at the nodes of `grid`.
pub fn sample_dislocation(family: &DislocationFamily, t: f64, grid: &TubeGrid) -> Result<PotentialField> {
    let mut values = Vec::with_capacity(grid.dim());
    for i in 0..grid.lines() {
        let mut x = grid.line_x(i);
        // a line that should sit on the interface must not slip to the left
        if x.abs() < 1e-9 * grid.hx {
            x = 0.0;
        }
        for j in 0..grid.ny {
            values.push(family.value(x, grid.y(j), t)?);
        }
    }
    PotentialField::new(*grid, values)
}

/// Samples a single sampler at the nodes of `grid`.
pub fn sample(v: &dyn Sampler, grid: &TubeGrid) -> Result<PotentialField> {
    let mut values = Vec::with_capacity(grid.dim());
    for i in 0..grid.lines() {
        let x = grid.line_x(i);
        for j in 0..grid.ny {
            values.push(v.value(x, grid.y(j))?);
        }
    }
    PotentialField::new(*grid, values)
}

/// Mean of `f` over `[a, b]`, exact across the listed jumps of `f` and
/// 8-point Gauss on each smooth piece.
pub fn cell_mean(f: impl Fn(f64) -> Result<f64>, a: f64, b: f64, breaks: &[f64]) -> Result<f64> {
    let mut knots = vec![a];
    knots.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    knots.push(b);
    let (nodes, weights) = crate::quad::gauss_legendre(8);
    let mut acc = 0.0;
    for w in knots.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (s, wt) in nodes.iter().zip(&weights) {
            acc += wt * half * f(mid + half * s)?;
        }
    }
    Ok(acc / (b - a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_zero_identical_halves() {
        let fam = DislocationFamily::preset(Preset::Mathieu { q: 1.5, phase: 0.2 });
        let g = TubeGrid::with_spacing(-3.0, 3.0, 0.125, 4).unwrap();
        let f = sample_dislocation(&fam, 0.0, &g).unwrap();
        let direct = sample(fam.v1.as_ref(), &g).unwrap();
        assert_eq!(f.values, direct.values);
    }

    #[test]
    fn period_shift_is_invisible() {
        let fam = DislocationFamily::preset(Preset::Step { amp: 2.0, lo: 0.25, hi: 0.75 });
        let g = TubeGrid::with_spacing(-3.0, 3.0, 0.125, 4).unwrap();
        let a = sample_dislocation(&fam, 0.0, &g).unwrap();
        let b = sample_dislocation(&fam, 1.0, &g).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn case_split() {
        let fam = DislocationFamily::new(
            Arc::new(Preset::Constant { c: 1.0 }),
            Arc::new(Preset::Constant { c: 2.0 }),
        );
        assert_eq!(fam.value(0.5, 0.3, 0.3).unwrap(), 1.0);
        assert_eq!(fam.value(-0.5, 0.3, 0.3).unwrap(), 2.0);
    }

    #[test]
    fn gridded_interpolates_and_wraps() {
        let mut rows = Vec::new();
        for ix in 0..3 {
            for iy in 0..4 {
                rows.push((ix as f64, iy as f64 * 0.25, (ix * 10 + iy) as f64));
            }
        }
        let s = GriddedSampler::from_rows(&rows).unwrap();
        assert!((s.value(0.5, 0.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((s.value(0.0, 0.125).unwrap() - 0.5).abs() < 1e-12);
        // wrap between y = 0.75 and y = 1.0 ≡ 0
        assert!((s.value(0.0, 0.875).unwrap() - 1.5).abs() < 1e-12);
        assert!(s.value(2.5, 0.0).is_err());
    }

    #[test]
    fn step_cell_mean_is_exact() {
        let p = Preset::Step { amp: 3.0, lo: 0.25, hi: 0.75 };
        let br = p.x_breaks(0.0, 1.0);
        let m = cell_mean(|x| p.value(x, 0.0), 0.0, 1.0, &br).unwrap();
        assert!((m - 1.5).abs() < 1e-14);
    }
}
