//! Run configuration: flat TOML with dotted sections.
//!
//! Every accepted key is listed in [`SCHEMA`] with its type and range.
//! Parsing collects all problems in one pass (unknown keys come with the
//! closest known key as a suggestion) before the typed [`RunConfig`] is
//! deserialized. [`RunConfig::to_toml`] writes every key back, and parsing
//! that text gives the same configuration.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Resolution;
use crate::ids::TorusMethod;
use crate::potential::{DislocationFamily, GriddedSampler, Preset, Sampler, Shifted};
use crate::transform::PotentialRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Spectrum,
    Sweep,
    Decay,
    Decoupling,
    Greens,
    Transform,
    Ids,
    Verify,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Spectrum,
        Experiment::Sweep,
        Experiment::Decay,
        Experiment::Decoupling,
        Experiment::Greens,
        Experiment::Transform,
        Experiment::Ids,
        Experiment::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Spectrum => "spectrum",
            Experiment::Sweep => "sweep",
            Experiment::Decay => "decay",
            Experiment::Decoupling => "decoupling",
            Experiment::Greens => "greens",
            Experiment::Transform => "transform",
            Experiment::Ids => "ids",
            Experiment::Verify => "verify",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Free,
    Constant,
    Mathieu,
    Product,
    Quasiperiodic,
    Halfspace,
    Step,
    Lattice,
    Well,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputCfg {
    pub dir: PathBuf,
}

impl Default for OutputCfg {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridCfg {
    pub hx: f64,
    pub ny: usize,
    /// section used by the `spectrum` experiment
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for GridCfg {
    fn default() -> Self {
        Self { hx: 0.0625, ny: 8, x_min: -10.0, x_max: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialCfg {
    pub preset: PresetName,
    /// CSV `x,y,value`; replaces the preset on both sides when given
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub q: f64,
    pub phase: f64,
    pub q1: f64,
    pub q2: f64,
    pub amp: f64,
    pub eps: f64,
    pub lo: f64,
    pub hi: f64,
    pub c: f64,
    pub depth: f64,
    pub half_width: f64,
    pub a: f64,
    pub b: f64,
    /// the left-side potential is `V(x − offset2)`
    pub offset2: f64,
}

impl Default for PotentialCfg {
    fn default() -> Self {
        Self {
            preset: PresetName::Mathieu,
            file: None,
            q: 2.0,
            phase: 0.0,
            q1: 20.0,
            q2: 20.0,
            amp: 3.0,
            eps: 0.5,
            lo: 0.25,
            hi: 0.75,
            c: 0.0,
            depth: 5.0,
            half_width: 0.5,
            a: 2.0,
            b: 0.0,
            offset2: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapCfg {
    /// target energy; the gap midpoint when absent
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e: Option<f64>,
    /// gap edges; located numerically when absent
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    /// which located gap to use, counted from below
    pub index: usize,
    /// energy range searched for gaps
    pub e_min: f64,
    pub e_max: f64,
}

impl Default for GapCfg {
    fn default() -> Self {
        Self { e: None, a0: None, b0: None, index: 0, e_min: -100.0, e_max: 40.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepCfg {
    pub n: f64,
    pub t_max: f64,
    /// truncations for the counting chain
    pub chain_n: Vec<f64>,
    pub chain_samples: usize,
}

impl Default for SweepCfg {
    fn default() -> Self {
        Self { n: 20.0, t_max: 8.0, chain_n: vec![20.0, 40.0, 80.0], chain_samples: 17 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumCfg {
    pub count: usize,
}

impl Default for SpectrumCfg {
    fn default() -> Self {
        Self { count: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayCfg {
    pub k_list: Vec<f64>,
    /// section length for the Combes–Thomas probe
    pub ct_length: f64,
}

impl Default for DecayCfg {
    fn default() -> Self {
        Self { k_list: vec![2.0, 4.0, 8.0, 16.0], ct_length: 80.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecouplingCfg {
    pub members: usize,
    pub scales: Vec<f64>,
    pub r_list: Vec<f64>,
    /// section length of the spectral-shift probe
    pub length: f64,
    /// section length of the resolvent HS probe
    pub hs_length: f64,
    pub ring_length: f64,
}

impl Default for DecouplingCfg {
    fn default() -> Self {
        Self { members: 20, scales: vec![1.0, 10.0], r_list: vec![1.0, 10.0], length: 8.0, hs_length: 16.0, ring_length: 16.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreensCfg {
    pub r_min: f64,
    pub r_max: f64,
    pub samples: usize,
    /// section length of the discrete comparison
    pub length: f64,
    /// kernel dump: `x1` and `x2` ranges and the transverse offset
    pub dump_points: usize,
    pub dump_y: f64,
}

impl Default for GreensCfg {
    fn default() -> Self {
        Self { r_min: 0.01, r_max: 20.0, samples: 200, length: 16.0, dump_points: 21, dump_y: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformCfg {
    pub t_list: Vec<f64>,
    pub hx: f64,
    pub half_length: f64,
    pub width: f64,
    pub rule: PotentialRule,
    pub dt0: f64,
    pub halvings: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub ensemble: usize,
    /// the eigenvalue window is the gap shrunk by this fraction of its width at each end
    pub margin: f64,
}

impl Default for TransformCfg {
    fn default() -> Self {
        Self {
            t_list: vec![0.0, 0.1, 0.25],
            hx: 0.0125,
            half_length: 6.0,
            width: 1.0,
            rule: PotentialRule::CellAverage,
            dt0: 0.04,
            halvings: 3,
            t_start: 0.0,
            t_end: 1.0,
            ensemble: 50,
            margin: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdsCfg {
    pub n_list: Vec<f64>,
    pub method: TorusMethod,
    /// half-width of the count window as a fraction of the plane gap width
    pub window_fraction: f64,
    /// dislocation parameter; the first sweep crossing when absent
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

impl Default for IdsCfg {
    fn default() -> Self {
        Self { n_list: vec![4.0, 8.0, 16.0], method: TorusMethod::Auto, window_fraction: 0.45, t: None }
    }
}

/// Acceptance tolerances; every one can be overridden under `tol.*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub free_rel: f64,
    pub crossing: f64,
    pub equivalence: f64,
    pub k0_rel: f64,
    pub hs_refine: f64,
    pub hs_match: f64,
    pub hs_ratio: f64,
    pub lipschitz: f64,
    pub bv_slack: f64,
    pub decay_residual: f64,
    pub window: f64,
    pub boundary_allowance: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            free_rel: 2e-2,
            crossing: 1e-6,
            equivalence: 1e-3,
            k0_rel: 1e-10,
            hs_refine: 0.02,
            hs_match: 0.10,
            hs_ratio: 2.0,
            lipschitz: 0.25,
            bv_slack: 1.05,
            decay_residual: 0.1,
            window: 1e-9,
            boundary_allowance: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub output: OutputCfg,
    pub grid: GridCfg,
    pub potential: PotentialCfg,
    pub gap: GapCfg,
    pub sweep: SweepCfg,
    pub spectrum: SpectrumCfg,
    pub decay: DecayCfg,
    pub decoupling: DecouplingCfg,
    pub greens: GreensCfg,
    pub transform: TransformCfg,
    pub ids: IdsCfg,
    pub tol: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 7,
            threads: None,
            output: OutputCfg::default(),
            grid: GridCfg::default(),
            potential: PotentialCfg::default(),
            gap: GapCfg::default(),
            sweep: SweepCfg::default(),
            spectrum: SpectrumCfg::default(),
            decay: DecayCfg::default(),
            decoupling: DecouplingCfg::default(),
            greens: GreensCfg::default(),
            transform: TransformCfg::default(),
            ids: IdsCfg::default(),
            tol: Tolerances::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    Float { min: f64, max: f64, open_min: bool },
    Int { min: i64, max: i64 },
    Choice(&'static [&'static str]),
    FloatList { min: f64, max: f64 },
    Path,
}

#[derive(Clone, Copy, Debug)]
pub struct Field {
    pub key: &'static str,
    pub kind: Kind,
    pub doc: &'static str,
}

const fn float(key: &'static str, min: f64, max: f64, doc: &'static str) -> Field {
    Field { key, kind: Kind::Float { min, max, open_min: false }, doc }
}

const fn positive(key: &'static str, max: f64, doc: &'static str) -> Field {
    Field { key, kind: Kind::Float { min: 0.0, max, open_min: true }, doc }
}

const fn int(key: &'static str, min: i64, max: i64, doc: &'static str) -> Field {
    Field { key, kind: Kind::Int { min, max }, doc }
}

const fn list(key: &'static str, min: f64, max: f64, doc: &'static str) -> Field {
    Field { key, kind: Kind::FloatList { min, max }, doc }
}

const BIG: f64 = 1e6;

/// Every accepted key.
pub const SCHEMA: &[Field] = &[
    Field {
        key: "experiment",
        kind: Kind::Choice(&["spectrum", "sweep", "decay", "decoupling", "greens", "transform", "ids", "verify"]),
        doc: "experiment kind; the CLI subcommand must agree",
    },
    int("seed", 0, i64::MAX, "seed of every random ensemble"),
    int("threads", 1, 1024, "worker threads"),
    Field { key: "output.dir", kind: Kind::Path, doc: "output directory (created)" },
    positive("grid.hx", 0.5, "x mesh width"),
    int("grid.ny", 4, 512, "nodes per unit length in y"),
    float("grid.x_min", -BIG, BIG, "left end of the spectrum section"),
    float("grid.x_max", -BIG, BIG, "right end of the spectrum section"),
    Field {
        key: "potential.preset",
        kind: Kind::Choice(&[
            "free",
            "constant",
            "mathieu",
            "product",
            "quasiperiodic",
            "halfspace",
            "step",
            "lattice",
            "well",
        ]),
        doc: "built-in potential",
    },
    Field { key: "potential.file", kind: Kind::Path, doc: "CSV x,y,value replacing the preset (must exist)" },
    float("potential.q", -BIG, BIG, "mathieu/halfspace: 2q cos 2πx"),
    float("potential.phase", -BIG, BIG, "mathieu/halfspace phase"),
    float("potential.q1", -BIG, BIG, "product: x amplitude"),
    float("potential.q2", -BIG, BIG, "product: y amplitude"),
    float("potential.amp", -BIG, BIG, "step / quasiperiodic amplitude"),
    float("potential.eps", -BIG, BIG, "quasiperiodic: second frequency weight"),
    float("potential.lo", 0.0, 1.0, "step: start of the raised part of each cell"),
    float("potential.hi", 0.0, 1.0, "step: end of the raised part of each cell"),
    float("potential.c", -BIG, BIG, "constant value"),
    float("potential.depth", -BIG, BIG, "well depth"),
    positive("potential.half_width", BIG, "well half width"),
    float("potential.a", 0.0, BIG, "lattice amplitude"),
    float("potential.b", -1.0, 1.0, "lattice y modulation"),
    float("potential.offset2", -BIG, BIG, "x offset of the left-side potential"),
    float("gap.e", -BIG, BIG, "target energy"),
    float("gap.a0", -BIG, BIG, "lower gap edge"),
    float("gap.b0", -BIG, BIG, "upper gap edge"),
    int("gap.index", 0, 64, "which located gap, from below"),
    float("gap.e_min", -BIG, BIG, "lower end of the gap search"),
    float("gap.e_max", -BIG, BIG, "upper end of the gap search"),
    positive("sweep.n", BIG, "truncation half-length n"),
    positive("sweep.t_max", BIG, "sweep range [0, t_max]"),
    list("sweep.chain_n", 1.0, BIG, "truncations of the counting chain"),
    int("sweep.chain_samples", 2, 10_000, "sampled t values of the chain"),
    int("spectrum.count", 1, 10_000, "number of lowest eigenvalues"),
    list("decay.k_list", 0.0, BIG, "Combes–Thomas distances"),
    positive("decay.ct_length", BIG, "Combes–Thomas section length"),
    int("decoupling.members", 1, 10_000, "ensemble size"),
    list("decoupling.scales", 0.0, BIG, "potential scalings"),
    list("decoupling.r_list", 1.0, BIG, "resolvent parameters (r ≥ 1)"),
    positive("decoupling.length", BIG, "section length of the spectral-shift probe"),
    positive("decoupling.hs_length", BIG, "section length of the resolvent HS probe"),
    positive("decoupling.ring_length", BIG, "ring length of the gap count probe"),
    positive("greens.r_min", BIG, "smallest K0 argument"),
    positive("greens.r_max", BIG, "largest K0 argument"),
    int("greens.samples", 2, 1_000_000, "K0 samples"),
    positive("greens.length", BIG, "section length of the discrete comparison"),
    int("greens.dump_points", 2, 10_000, "points per axis of the kernel dump"),
    float("greens.dump_y", -0.5, 0.5, "transverse offset of the kernel dump"),
    list("transform.t_list", -0.5, 0.5, "equivalence parameters"),
    positive("transform.hx", 0.5, "x mesh width of the transform runs"),
    positive("transform.half_length", BIG, "section half length"),
    Field { key: "transform.width", kind: Kind::Float { min: 0.0, max: 1.0, open_min: true }, doc: "mollifier radius" },
    Field { key: "transform.rule", kind: Kind::Choice(&["sample", "cell_average"]), doc: "node potential rule" },
    positive("transform.dt0", BIG, "coarsest branch spacing"),
    int("transform.halvings", 0, 12, "spacing halvings"),
    float("transform.t_start", -BIG, BIG, "branch range start"),
    float("transform.t_end", -BIG, BIG, "branch range end"),
    int("transform.ensemble", 1, 100_000, "random BV functions"),
    Field { key: "transform.margin", kind: Kind::Float { min: 0.0, max: 0.5, open_min: false }, doc: "window inset per end, as a fraction of the gap width" },
    list("ids.n_list", 1.0, BIG, "square half sizes"),
    Field { key: "ids.method", kind: Kind::Choice(&["auto", "direct", "kronecker"]), doc: "torus counting route" },
    Field { key: "ids.window_fraction", kind: Kind::Float { min: 0.0, max: 0.5, open_min: true }, doc: "window half width / gap width" },
    float("ids.t", -BIG, BIG, "dislocation parameter"),
    positive("tol.free_rel", 1.0, "relative error of the free-tube eigenvalues"),
    positive("tol.crossing", 1.0, "|λ − E| at a located crossing"),
    positive("tol.equivalence", 1.0, "direct vs transformed eigenvalue gap"),
    positive("tol.k0_rel", 1.0, "relative error of K0 against quadrature"),
    positive("tol.hs_refine", 1.0, "HS norm change under quadrature refinement"),
    positive("tol.hs_match", 1.0, "continuum vs discrete HS norm"),
    positive("tol.hs_ratio", BIG, "max/min HS norm over scales and r"),
    positive("tol.lipschitz", 1.0, "Lipschitz estimate drift over halvings"),
    Field { key: "tol.bv_slack", kind: Kind::Float { min: 1.0, max: 10.0, open_min: false }, doc: "slack factor on the BV translation bounds" },
    positive("tol.decay_residual", 1.0, "largest accepted log-decay fit residual"),
    positive("tol.window", 1.0, "window eigenvalues vs dense, absolute"),
    int("tol.boundary_allowance", 0, 1000, "torus window count allowed at t = 0"),
];

pub fn field(key: &str) -> Option<&'static Field> {
    SCHEMA.iter().find(|f| f.key == key)
}

/// Closest schema key by Jaro–Winkler similarity on the full key and on
/// its last segment.
pub fn suggest(key: &str) -> Option<&'static str> {
    let last = key.rsplit('.').next().unwrap_or(key);
    SCHEMA
        .iter()
        .map(|f| {
            let tail = f.key.rsplit('.').next().unwrap_or(f.key);
            let s = strsim::jaro_winkler(key, f.key).max(strsim::jaro_winkler(last, tail) - 0.02);
            (s, f.key)
        })
        .filter(|(s, _)| *s >= 0.75)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) if field(&key).is_none() => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(x) => Some(*x),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn check_value(f: &Field, v: &toml::Value, errors: &mut Vec<String>) {
    let key = f.key;
    match f.kind {
        Kind::Float { min, max, open_min } => match as_f64(v) {
            Some(x) if !x.is_finite() => errors.push(format!("`{key}` must be finite, got {x}")),
            Some(x) if (open_min && x <= min) || x < min || x > max => {
                let lb = if open_min { "(" } else { "[" };
                errors.push(format!("`{key}` = {x} is outside {lb}{min}, {max}]"))
            }
            Some(_) => {}
            None => errors.push(format!("`{key}` must be a number, got {}", v.type_str())),
        },
        Kind::Int { min, max } => match v {
            toml::Value::Integer(i) if *i < min || *i > max => {
                errors.push(format!("`{key}` = {i} is outside [{min}, {max}]"))
            }
            toml::Value::Integer(_) => {}
            _ => errors.push(format!("`{key}` must be an integer, got {}", v.type_str())),
        },
        Kind::Choice(options) => match v.as_str() {
            Some(s) if options.contains(&s) => {}
            Some(s) => errors.push(format!("`{key}` = \"{s}\" is not one of {options:?}")),
            None => errors.push(format!("`{key}` must be a string, got {}", v.type_str())),
        },
        Kind::FloatList { min, max } => match v.as_array() {
            Some(a) if a.is_empty() => errors.push(format!("`{key}` must not be empty")),
            Some(a) => {
                for (i, item) in a.iter().enumerate() {
                    match as_f64(item) {
                        Some(x) if x.is_finite() && x >= min && x <= max => {}
                        Some(x) => errors.push(format!("`{key}[{i}]` = {x} is outside [{min}, {max}]")),
                        None => errors.push(format!("`{key}[{i}]` must be a number")),
                    }
                }
            }
            None => errors.push(format!("`{key}` must be an array of numbers, got {}", v.type_str())),
        },
        Kind::Path => match v.as_str() {
            Some(s) if s.is_empty() => errors.push(format!("`{key}` must not be empty")),
            Some(_) => {}
            None => errors.push(format!("`{key}` must be a string path, got {}", v.type_str())),
        },
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates `text`, listing every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
        Error::Config(format!("syntax error on line {line}: {}", e.message()))
    })?;
    let mut flat = Vec::new();
    flatten("", &table, &mut flat);
    let mut errors = Vec::new();
    for (key, v) in &flat {
        match field(key) {
            Some(f) => check_value(f, v, &mut errors),
            None => match suggest(key) {
                Some(s) => errors.push(format!("unknown key `{key}`; did you mean `{s}`?")),
                None => errors.push(format!("unknown key `{key}`")),
            },
        }
    }
    if !errors.is_empty() {
        return Err(validation(errors));
    }
    // integers are accepted where floats are expected
    let mut normalized = toml::Table::new();
    for (key, v) in flat {
        let v = match (field(&key).map(|f| f.kind), v) {
            (Some(Kind::Float { .. }), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (Some(Kind::FloatList { .. }), toml::Value::Array(a)) => toml::Value::Array(
                a.into_iter()
                    .map(|x| match x {
                        toml::Value::Integer(i) => toml::Value::Float(i as f64),
                        other => other,
                    })
                    .collect(),
            ),
            (_, v) => v,
        };
        insert_dotted(&mut normalized, &key, v);
    }
    let cfg: RunConfig = toml::Value::Table(normalized)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("invalid configuration: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn insert_dotted(t: &mut toml::Table, key: &str, v: toml::Value) {
    match key.split_once('.') {
        None => {
            t.insert(key.to_string(), v);
        }
        Some((head, rest)) => {
            let sub = t.entry(head.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(sub) = sub {
                insert_dotted(sub, rest, v);
            }
        }
    }
}

fn validation(errors: Vec<String>) -> Error {
    Error::Config(format!("{} problem(s):\n  - {}", errors.len(), errors.join("\n  - ")))
}

impl RunConfig {
    /// Cross-field checks and file existence.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.grid.x_max <= self.grid.x_min {
            errors.push(format!("`grid.x_max` = {} must exceed `grid.x_min` = {}", self.grid.x_max, self.grid.x_min));
        }
        if let Some(p) = &self.potential.file {
            if !p.is_file() {
                errors.push(format!("`potential.file` = {} does not exist", p.display()));
            }
        }
        if self.potential.preset == PresetName::Step && self.potential.lo >= self.potential.hi {
            errors.push("`potential.lo` must be below `potential.hi`".into());
        }
        match (self.gap.a0, self.gap.b0) {
            (Some(a), Some(b)) if b <= a => errors.push(format!("`gap.b0` = {b} must exceed `gap.a0` = {a}")),
            (Some(_), None) | (None, Some(_)) => errors.push("`gap.a0` and `gap.b0` go together".into()),
            _ => {}
        }
        if let (Some(e), Some(a), Some(b)) = (self.gap.e, self.gap.a0, self.gap.b0) {
            if !(e > a && e < b) {
                errors.push(format!("`gap.e` = {e} must lie inside ({a}, {b})"));
            }
        }
        if self.gap.e_max <= self.gap.e_min {
            errors.push("`gap.e_max` must exceed `gap.e_min`".into());
        }
        if self.greens.r_max <= self.greens.r_min {
            errors.push("`greens.r_max` must exceed `greens.r_min`".into());
        }
        if self.transform.t_end <= self.transform.t_start {
            errors.push("`transform.t_end` must exceed `transform.t_start`".into());
        }
        for (key, l) in [("sweep.chain_n", &self.sweep.chain_n), ("ids.n_list", &self.ids.n_list)] {
            if l.windows(2).any(|w| w[1] <= w[0]) {
                errors.push(format!("`{key}` must be strictly increasing"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(validation(errors))
        }
    }

    /// Writes every key, with dotted sections.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("the configuration always serializes")
    }

    pub fn resolution(&self) -> Result<Resolution> {
        Resolution::new(self.grid.hx, self.grid.ny)
    }

    /// The right-side (`V1`) sampler.
    pub fn sampler(&self) -> Result<Arc<dyn Sampler>> {
        if let Some(p) = &self.potential.file {
            return Ok(Arc::new(GriddedSampler::from_csv(p)?));
        }
        let p = &self.potential;
        Ok(Arc::new(match p.preset {
            PresetName::Free | PresetName::Halfspace => Preset::Free,
            PresetName::Constant => Preset::Constant { c: p.c },
            PresetName::Mathieu => Preset::Mathieu { q: p.q, phase: p.phase },
            PresetName::Product => Preset::Product { q1: p.q1, q2: p.q2 },
            PresetName::Quasiperiodic => Preset::Quasiperiodic { amp: p.amp, eps: p.eps },
            PresetName::Step => Preset::Step { amp: p.amp, lo: p.lo, hi: p.hi },
            PresetName::Lattice => Preset::Lattice { a: p.a, b: p.b, px: 0.0, py: 0.0 },
            PresetName::Well => Preset::Well { depth: p.depth, half_width: p.half_width },
        }))
    }

    /// The dislocation family. `halfspace` pairs `V1 ≡ 0` with a Mathieu
    /// `V2`; every other preset uses the same sampler on both sides, the
    /// left one offset by `potential.offset2`.
    pub fn family(&self) -> Result<DislocationFamily> {
        let p = &self.potential;
        let v1 = self.sampler()?;
        let v2: Arc<dyn Sampler> = if p.preset == PresetName::Halfspace && p.file.is_none() {
            Arc::new(Preset::Mathieu { q: p.q, phase: p.phase })
        } else {
            v1.clone()
        };
        let v2: Arc<dyn Sampler> = if p.offset2 != 0.0 { Arc::new(Shifted { inner: v2, dx: p.offset2 }) } else { v2 };
        Ok(DislocationFamily::new(v1, v2))
    }

    pub fn transform_rule(&self) -> PotentialRule {
        self.transform.rule
    }
}

/// The schema as Markdown-ready lines `key  kind  doc`.
pub fn schema_reference() -> String {
    let mut out = String::new();
    for f in SCHEMA {
        let kind = match f.kind {
            Kind::Float { min, max, open_min } => {
                format!("float in {}{min}, {max}]", if open_min { "(" } else { "[" })
            }
            Kind::Int { min, max } => format!("integer in [{min}, {max}]"),
            Kind::Choice(c) => format!("one of {}", c.join(", ")),
            Kind::FloatList { min, max } => format!("list of floats in [{min}, {max}]"),
            Kind::Path => "path".to_string(),
        };
        out.push_str(&format!("{}\t{}\t{}\n", f.key, kind, f.doc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_defaults() {
        let c = parse_config("experiment = \"spectrum\"\n").unwrap();
        assert_eq!(c.experiment, Some(Experiment::Spectrum));
        assert_eq!(c.tol, Tolerances::default());
        assert_eq!(c.grid, GridCfg::default());
    }

    #[test]
    fn negative_ny_named() {
        let e = parse_config("grid.ny = -3\n").unwrap_err().to_string();
        assert!(e.contains("grid.ny"), "{e}");
    }

    #[test]
    fn unknown_key_suggestion() {
        let e = parse_config("gamma0 = 1.0\n").unwrap_err().to_string();
        assert!(e.contains("unknown key `gamma0`"), "{e}");
        let e = parse_config("[grid]\nhxx = 0.1\n").unwrap_err().to_string();
        assert!(e.contains("did you mean `grid.hx`"), "{e}");
    }

    #[test]
    fn all_errors_listed() {
        let e = parse_config("grid.ny = 1\ngrid.hx = -1\nfoo = 2\n").unwrap_err().to_string();
        assert!(e.contains("3 problem(s)"), "{e}");
    }

    #[test]
    fn syntax_error_line() {
        let e = parse_config("seed = 3\n\ngrid.hx = = 2\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn roundtrip() {
        let mut c = RunConfig::default();
        c.experiment = Some(Experiment::Ids);
        c.gap.e = Some(0.1 + 0.2);
        c.ids.t = Some(0.5);
        c.transform.rule = PotentialRule::Sample;
        let text = c.to_toml();
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}
