//! Run configuration: a strict flat key-value document with dotted
//! namespaces. Unknown keys are rejected, parse errors carry the line and
//! key, and render/parse round-trips exactly, which is what makes the run
//! manifest reproducible.

use crate::expr::{self, Expr};
use crate::grid::{Field, Grid};
use crate::problem::{Mode, ProblemSpec, SolverConfig, Source, SpaceTimeFn};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("key '{key}': {message}")]
    Invalid { key: String, message: String },
    #[error("missing required key '{key}'")]
    MissingKey { key: &'static str },
}

/// How one data slot (u0, u1 or h) is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Constant(f64),
    CosineMode(Vec<usize>),
    GaussianBump { center: f64, width: f64 },
    Manufactured(String),
    Expr(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSlot {
    InitialState,
    InitialVelocity,
    SourceTerm,
}

impl DataSpec {
    fn parse(key: &str, value: &str) -> Result<Self, ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            key: key.to_string(),
            message,
        };
        let value = value.trim();
        if let Some(rest) = value.strip_prefix("expr:") {
            let text = rest.trim().to_string();
            expr::parse(&text).map_err(|e| invalid(format!("bad expression: {e}")))?;
            return Ok(DataSpec::Expr(text));
        }
        if let Ok(v) = value.parse::<f64>() {
            return Ok(DataSpec::Constant(v));
        }
        let (name, args) = match value.find('(') {
            Some(open) if value.ends_with(')') => (
                &value[..open],
                value[open + 1..value.len() - 1]
                    .split(',')
                    .map(str::trim)
                    .collect::<Vec<_>>(),
            ),
            _ => {
                return Err(invalid(format!(
                    "expected a preset like cosine_mode(1), a number, or 'expr: ...', got '{value}'"
                )))
            }
        };
        match name {
            "constant" => {
                if args.len() != 1 {
                    return Err(invalid("constant(c) takes one argument".into()));
                }
                let c = args[0]
                    .parse()
                    .map_err(|_| invalid(format!("bad constant '{}'", args[0])))?;
                Ok(DataSpec::Constant(c))
            }
            "cosine_mode" => {
                let modes = args
                    .iter()
                    .map(|a| a.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| invalid("cosine_mode takes integer wavenumbers".into()))?;
                if modes.is_empty() {
                    return Err(invalid("cosine_mode needs at least one wavenumber".into()));
                }
                Ok(DataSpec::CosineMode(modes))
            }
            "gaussian_bump" => {
                if args.len() != 2 {
                    return Err(invalid("gaussian_bump(center, width) takes two arguments".into()));
                }
                let center = args[0]
                    .parse()
                    .map_err(|_| invalid(format!("bad center '{}'", args[0])))?;
                let width: f64 = args[1]
                    .parse()
                    .map_err(|_| invalid(format!("bad width '{}'", args[1])))?;
                if !(width > 0.0) {
                    return Err(invalid("gaussian width must be positive".into()));
                }
                Ok(DataSpec::GaussianBump { center, width })
            }
            "manufactured" => {
                if args.len() != 1 {
                    return Err(invalid("manufactured(name) takes one argument".into()));
                }
                let case = args[0].to_string();
                if manufactured(&case).is_none() {
                    return Err(invalid(format!(
                        "unknown manufactured case '{case}' (available: {})",
                        MANUFACTURED_NAMES.join(", ")
                    )));
                }
                Ok(DataSpec::Manufactured(case))
            }
            other => Err(invalid(format!("unknown preset '{other}'"))),
        }
    }

    fn render(&self) -> String {
        match self {
            DataSpec::Constant(c) => format!("constant({c})"),
            DataSpec::CosineMode(modes) => format!(
                "cosine_mode({})",
                modes
                    .iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            DataSpec::GaussianBump { center, width } => {
                format!("gaussian_bump({center},{width})")
            }
            DataSpec::Manufactured(name) => format!("manufactured({name})"),
            DataSpec::Expr(text) => format!("expr: {text}"),
        }
    }

    fn validate(&self, key: &str, dim: usize) -> Result<(), ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            key: key.to_string(),
            message,
        };
        match self {
            DataSpec::CosineMode(modes) if modes.len() != dim => Err(invalid(format!(
                "cosine_mode needs one wavenumber per axis ({dim}), got {}",
                modes.len()
            ))),
            DataSpec::Expr(text) => {
                let e = expr::parse(text).expect("validated at parse time");
                if let Some(max) = e.max_coord() {
                    if max >= dim {
                        return Err(invalid(format!(
                            "expression uses x{} but the grid has {dim} axes",
                            max + 1
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn closure(&self, slot: DataSlot, grid: &Arc<Grid>) -> SpaceTimeFn {
        match self {
            DataSpec::Constant(c) => {
                let c = *c;
                Arc::new(move |_, _| c)
            }
            DataSpec::CosineMode(modes) => {
                let modes = modes.clone();
                let bounds = grid.bounds().to_vec();
                Arc::new(move |_, x| {
                    let mut v = 1.0;
                    for (a, &k) in modes.iter().enumerate() {
                        let (low, high) = bounds[a];
                        v *= (k as f64 * std::f64::consts::PI * (x[a] - low) / (high - low))
                            .cos();
                    }
                    v
                })
            }
            DataSpec::GaussianBump { center, width } => {
                let (c, w) = (*center, *width);
                Arc::new(move |_, x| {
                    let r2: f64 = x.iter().map(|xi| (xi - c) * (xi - c)).sum();
                    (-r2 / (w * w)).exp()
                })
            }
            DataSpec::Manufactured(name) => {
                let case = manufactured(name).expect("validated at parse time");
                match slot {
                    DataSlot::InitialState => Arc::new(case.u0),
                    DataSlot::InitialVelocity => Arc::new(case.u1),
                    DataSlot::SourceTerm => Arc::new(case.h),
                }
            }
            DataSpec::Expr(text) => {
                let e: Expr = expr::parse(text).expect("validated at parse time");
                Arc::new(move |t, x| e.eval(t, x))
            }
        }
    }

    /// Spatial field at t = 0 (for u0/u1 slots).
    pub fn field(&self, slot: DataSlot, grid: &Arc<Grid>) -> Result<Field, ConfigError> {
        let f = self.closure(slot, grid);
        Field::from_fn(grid, |x| f(0.0, x)).map_err(|e| ConfigError::Invalid {
            key: "data".to_string(),
            message: e.to_string(),
        })
    }

    /// Time-dependent source for the h slot.
    pub fn source(&self, grid: &Arc<Grid>) -> Source {
        if matches!(self, DataSpec::Constant(c) if *c == 0.0) {
            return Source::Zero;
        }
        let f = self.closure(DataSlot::SourceTerm, grid);
        Source::Closed(f)
    }
}

/// A closed-form case with u0, u1 and the source that makes the chosen
/// solution exact.
pub struct ManufacturedCase {
    pub name: &'static str,
    pub u0: fn(f64, &[f64]) -> f64,
    pub u1: fn(f64, &[f64]) -> f64,
    pub h: fn(f64, &[f64]) -> f64,
    pub description: &'static str,
}

const MANUFACTURED_NAMES: [&str; 2] = ["wave_p3", "parabolic_p3"];

/// Hyperbolic p = 3 case: exact solution (1 + t^2/2) cos(pi x1).
fn wave_p3_u0(_t: f64, x: &[f64]) -> f64 {
    (std::f64::consts::PI * x[0]).cos()
}
fn wave_p3_u1(_t: f64, _x: &[f64]) -> f64 {
    0.0
}
fn wave_p3_h(t: f64, x: &[f64]) -> f64 {
    let pi = std::f64::consts::PI;
    let g = 1.0 + 0.5 * t * t;
    (pi * x[0]).cos() + g * g * pi.powi(3) * (2.0 * pi * x[0]).sin()
}

/// Parabolic p = 3 case: exact solution e^{-t} cos(pi x1).
fn parabolic_p3_u0(_t: f64, x: &[f64]) -> f64 {
    (std::f64::consts::PI * x[0]).cos()
}
fn parabolic_p3_h(t: f64, x: &[f64]) -> f64 {
    let pi = std::f64::consts::PI;
    let g = (-t).exp();
    -g * (pi * x[0]).cos() + g * g * pi.powi(3) * (2.0 * pi * x[0]).sin()
}

pub fn manufactured(name: &str) -> Option<ManufacturedCase> {
    match name {
        "wave_p3" => Some(ManufacturedCase {
            name: "wave_p3",
            u0: wave_p3_u0,
            u1: wave_p3_u1,
            h: wave_p3_h,
            description: "hyperbolic p=3, exact solution (1 + t^2/2) cos(pi x1)",
        }),
        "parabolic_p3" => Some(ManufacturedCase {
            name: "parabolic_p3",
            u0: parabolic_p3_u0,
            u1: wave_p3_u1,
            h: parabolic_p3_h,
            description: "parabolic p=3, exact solution e^{-t} cos(pi x1)",
        }),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Pairing,
    RhsBound,
    Energy,
    Gronwall,
    DsClass,
}

impl ReportKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "pairing" => Some(ReportKind::Pairing),
            "rhs_bound" => Some(ReportKind::RhsBound),
            "energy" => Some(ReportKind::Energy),
            "gronwall" => Some(ReportKind::Gronwall),
            "ds_class" => Some(ReportKind::DsClass),
            _ => None,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            ReportKind::Pairing => "pairing",
            ReportKind::RhsBound => "rhs_bound",
            ReportKind::Energy => "energy",
            ReportKind::Gronwall => "gronwall",
            ReportKind::DsClass => "ds_class",
        }
    }

    fn parabolic(&self) -> bool {
        matches!(self, ReportKind::Pairing | ReportKind::RhsBound)
    }
}

/// Everything one run needs: problem statement, solver settings, audit
/// selections and output policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub label: String,
    pub mode: Mode,
    pub p: f64,
    pub p2_diagnostic: bool,
    pub horizon: f64,
    pub nodes: Vec<usize>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub u0: DataSpec,
    pub u1: Option<DataSpec>,
    pub h: DataSpec,
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub eps_reg: f64,
    pub line_search: bool,
    pub reports: Vec<ReportKind>,
    pub pnorm: Option<(f64, f64, bool)>,
    pub bound_eps: f64,
    pub bound_eps1: f64,
    pub out_dir: PathBuf,
    pub snapshots: bool,
    pub snapshot_stride: usize,
    pub seed: u64,
}

const KNOWN_KEYS: [&str; 25] = [
    "label",
    "mode",
    "p",
    "p2_diagnostic",
    "T",
    "grid.dim",
    "grid.nodes",
    "grid.low",
    "grid.high",
    "data.u0",
    "data.u1",
    "data.h",
    "solver.dt",
    "solver.newton_tol",
    "solver.newton_max_iters",
    "solver.eps_reg",
    "solver.line_search",
    "audit.reports",
    "audit.pnorm_alpha",
    "audit.pnorm_beta",
    "audit.pnorm_zero_order",
    "audit.eps",
    "audit.eps1",
    "output.dir",
    "output.snapshots",
];
// output.snapshot_stride and seed round out the set; KNOWN_KEYS is only
// used for the membership test below together with these two.
const EXTRA_KEYS: [&str; 2] = ["output.snapshot_stride", "seed"];

struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw_line.find('#') {
                Some(cut) => &raw_line[..cut],
                None => raw_line,
            };
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Malformed {
                line,
                text: content.to_string(),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) && !EXTRA_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line, key });
            }
            if entries.contains_key(&key) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            entries.insert(key, (line, value));
        }
        Ok(RawConfig { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    fn required(&mut self, key: &'static str) -> Result<String, ConfigError> {
        self.take(key).ok_or(ConfigError::MissingKey { key })
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Invalid {
        key: key.to_string(),
        message: format!("cannot parse '{value}'"),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|s| parse_scalar(key, s.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ConfigError::Invalid {
            key: key.to_string(),
            message: format!("expected true or false, got '{other}'"),
        }),
    }
}

/// Parse a configuration document. Strict: unknown keys, duplicates and
/// invariant violations are errors naming the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut raw = RawConfig::parse(text)?;

    let mode: Mode = {
        let value = raw.required("mode")?;
        value.trim().parse().map_err(|message| ConfigError::Invalid {
            key: "mode".to_string(),
            message,
        })?
    };
    let p: f64 = parse_scalar("p", &raw.required("p")?)?;
    let p2_diagnostic = match raw.take("p2_diagnostic") {
        Some(v) => parse_bool("p2_diagnostic", &v)?,
        None => false,
    };
    let horizon: f64 = parse_scalar("T", &raw.required("T")?)?;
    let nodes: Vec<usize> = parse_list("grid.nodes", &raw.required("grid.nodes")?)?;
    let dim = nodes.len();
    if let Some(v) = raw.take("grid.dim") {
        let stated: usize = parse_scalar("grid.dim", &v)?;
        if stated != dim {
            return Err(ConfigError::Invalid {
                key: "grid.dim".to_string(),
                message: format!("grid.dim = {stated} but grid.nodes lists {dim} axes"),
            });
        }
    }
    let low: Vec<f64> = match raw.take("grid.low") {
        Some(v) => parse_list("grid.low", &v)?,
        None => vec![0.0; dim],
    };
    let high: Vec<f64> = match raw.take("grid.high") {
        Some(v) => parse_list("grid.high", &v)?,
        None => vec![1.0; dim],
    };

    let u0 = DataSpec::parse("data.u0", &raw.required("data.u0")?)?;
    let u1 = raw
        .take("data.u1")
        .map(|v| DataSpec::parse("data.u1", &v))
        .transpose()?;
    let h = match raw.take("data.h") {
        Some(v) => DataSpec::parse("data.h", &v)?,
        None => DataSpec::Constant(0.0),
    };

    let dt: f64 = parse_scalar("solver.dt", &raw.required("solver.dt")?)?;
    let newton_tol = match raw.take("solver.newton_tol") {
        Some(v) => parse_scalar("solver.newton_tol", &v)?,
        None => 1e-10,
    };
    let newton_max_iters = match raw.take("solver.newton_max_iters") {
        Some(v) => parse_scalar("solver.newton_max_iters", &v)?,
        None => 50,
    };
    let eps_reg = match raw.take("solver.eps_reg") {
        Some(v) => parse_scalar("solver.eps_reg", &v)?,
        None => 1e-8,
    };
    let line_search = match raw.take("solver.line_search") {
        Some(v) => parse_bool("solver.line_search", &v)?,
        None => true,
    };

    let reports = match raw.take("audit.reports") {
        Some(v) => v
            .split(',')
            .map(|s| {
                let s = s.trim();
                ReportKind::parse(s).ok_or_else(|| ConfigError::Invalid {
                    key: "audit.reports".to_string(),
                    message: format!(
                        "unknown report '{s}' (expected pairing, rhs_bound, energy, gronwall or ds_class)"
                    ),
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => match mode {
            Mode::Parabolic => vec![ReportKind::Pairing, ReportKind::RhsBound],
            _ => vec![ReportKind::DsClass],
        },
    };

    let pnorm_alpha = raw.take("audit.pnorm_alpha");
    let pnorm_beta = raw.take("audit.pnorm_beta");
    let pnorm_zero = raw.take("audit.pnorm_zero_order");
    let pnorm = match (pnorm_alpha, pnorm_beta, pnorm_zero) {
        (None, None, None) => None,
        (Some(a), Some(b), Some(z)) => Some((
            parse_scalar("audit.pnorm_alpha", &a)?,
            parse_scalar("audit.pnorm_beta", &b)?,
            parse_bool("audit.pnorm_zero_order", &z)?,
        )),
        _ => {
            return Err(ConfigError::Invalid {
                key: "audit.pnorm_alpha".to_string(),
                message:
                    "pnorm_alpha, pnorm_beta and pnorm_zero_order must be given together".into(),
            })
        }
    };
    let bound_eps = match raw.take("audit.eps") {
        Some(v) => parse_scalar("audit.eps", &v)?,
        None => 0.5,
    };
    let bound_eps1 = match raw.take("audit.eps1") {
        Some(v) => parse_scalar("audit.eps1", &v)?,
        None => 0.25,
    };

    let out_dir = PathBuf::from(raw.take("output.dir").unwrap_or_else(|| "runs".to_string()));
    let snapshots = match raw.take("output.snapshots") {
        Some(v) => parse_bool("output.snapshots", &v)?,
        None => false,
    };
    let snapshot_stride = match raw.take("output.snapshot_stride") {
        Some(v) => parse_scalar("output.snapshot_stride", &v)?,
        None => 10,
    };
    let seed = match raw.take("seed") {
        Some(v) => parse_scalar("seed", &v)?,
        None => 42,
    };
    let label = raw.take("label").unwrap_or_else(|| "run".to_string());

    let cfg = RunConfig {
        label,
        mode,
        p,
        p2_diagnostic,
        horizon,
        nodes,
        low,
        high,
        u0,
        u1,
        h,
        dt,
        newton_tol,
        newton_max_iters,
        eps_reg,
        line_search,
        reports,
        pnorm,
        bound_eps,
        bound_eps1,
        out_dir,
        snapshots,
        snapshot_stride,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::Invalid {
            key: key.to_string(),
            message,
        };
        let dim = self.nodes.len();
        if !(self.p > 2.0 || (self.p2_diagnostic && self.p >= 2.0)) {
            return Err(invalid(
                "p",
                "p must exceed 2 (or enable p2_diagnostic)".into(),
            ));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid("T", format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("solver.dt", format!("time step must be positive, got {}", self.dt)));
        }
        if self.low.len() != dim || self.high.len() != dim {
            return Err(invalid(
                "grid.low",
                format!("bounds lists must have {dim} entries"),
            ));
        }
        for a in 0..dim {
            if !(self.low[a] < self.high[a]) {
                return Err(invalid(
                    "grid.low",
                    format!("axis {a}: low {} >= high {}", self.low[a], self.high[a]),
                ));
            }
        }
        self.u0.validate("data.u0", dim)?;
        if let Some(u1) = &self.u1 {
            u1.validate("data.u1", dim)?;
        }
        self.h.validate("data.h", dim)?;
        if self.mode != Mode::Parabolic && self.u1.is_none() {
            return Err(invalid(
                "data.u1",
                "hyperbolic and integro runs need data.u1".into(),
            ));
        }
        for r in &self.reports {
            let fits = match self.mode {
                Mode::Parabolic => r.parabolic(),
                _ => !r.parabolic(),
            };
            if !fits {
                return Err(invalid(
                    "audit.reports",
                    format!("report '{}' does not apply to {} runs", r.as_str(), self.mode.as_str()),
                ));
            }
        }
        if let Some((alpha, beta, _)) = self.pnorm {
            if !(alpha >= 0.0 && beta >= 1.0) {
                return Err(invalid(
                    "audit.pnorm_alpha",
                    format!("need alpha >= 0 and beta >= 1, got alpha = {alpha}, beta = {beta}"),
                ));
            }
        }
        if !(self.bound_eps > 0.0 && self.bound_eps1 > 0.0) {
            return Err(invalid("audit.eps", "Young parameters must be positive".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(invalid("output.snapshot_stride", "stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical rendering; `parse_config(render(cfg)) == cfg`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("label", self.label.clone());
        push("mode", self.mode.as_str().to_string());
        push("p", format!("{}", self.p));
        push("p2_diagnostic", format!("{}", self.p2_diagnostic));
        push("T", format!("{}", self.horizon));
        push(
            "grid.nodes",
            self.nodes
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            "grid.low",
            self.low.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","),
        );
        push(
            "grid.high",
            self.high.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","),
        );
        push("data.u0", self.u0.render());
        if let Some(u1) = &self.u1 {
            push("data.u1", u1.render());
        }
        push("data.h", self.h.render());
        push("solver.dt", format!("{}", self.dt));
        push("solver.newton_tol", format!("{}", self.newton_tol));
        push("solver.newton_max_iters", format!("{}", self.newton_max_iters));
        push("solver.eps_reg", format!("{}", self.eps_reg));
        push("solver.line_search", format!("{}", self.line_search));
        push(
            "audit.reports",
            self.reports
                .iter()
                .map(|r| r.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        if let Some((alpha, beta, zero)) = self.pnorm {
            push("audit.pnorm_alpha", format!("{alpha}"));
            push("audit.pnorm_beta", format!("{beta}"));
            push("audit.pnorm_zero_order", format!("{zero}"));
        }
        push("audit.eps", format!("{}", self.bound_eps));
        push("audit.eps1", format!("{}", self.bound_eps1));
        push("output.dir", self.out_dir.display().to_string());
        push("output.snapshots", format!("{}", self.snapshots));
        push("output.snapshot_stride", format!("{}", self.snapshot_stride));
        push("seed", format!("{}", self.seed));
        out
    }

    /// Build the validated problem statement and solver settings.
    pub fn to_problem(&self) -> Result<(ProblemSpec, SolverConfig), ConfigError> {
        let bounds: Vec<(f64, f64)> = self.low.iter().cloned().zip(self.high.iter().cloned()).collect();
        let grid = Grid::new(&self.nodes, &bounds).map_err(|e| ConfigError::Invalid {
            key: "grid.nodes".to_string(),
            message: e.to_string(),
        })?;
        let u0 = self.u0.field(DataSlot::InitialState, &grid)?;
        let u1 = self
            .u1
            .as_ref()
            .map(|spec| spec.field(DataSlot::InitialVelocity, &grid))
            .transpose()?;
        let h = self.h.source(&grid);
        let build = if self.p2_diagnostic {
            ProblemSpec::new_diagnostic
        } else {
            ProblemSpec::new
        };
        let spec = build(self.mode, self.p, self.horizon, grid, u0, u1, h).map_err(|e| {
            ConfigError::Invalid {
                key: "mode".to_string(),
                message: e.to_string(),
            }
        })?;
        let cfg = SolverConfig {
            dt: self.dt,
            newton_tol: self.newton_tol,
            newton_max_iters: self.newton_max_iters,
            eps_reg: self.eps_reg,
            line_search: self.line_search,
        };
        Ok((spec, cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    const EXAMPLE: &str = "\
# heat-type run
mode = parabolic
p = 3
T = 0.1
grid.nodes = 65
data.u0 = cosine_mode(1)
data.h = 0
solver.dt = 1e-3
";

    #[test]
    fn parses_minimal_document() {
        let cfg = parse_config(EXAMPLE).unwrap();
        assert_eq!(cfg.mode, Mode::Parabolic);
        assert_eq!(cfg.p, 3.0);
        assert_eq!(cfg.nodes, vec![65]);
        assert_eq!(cfg.h, DataSpec::Constant(0.0));
        let (spec, solver) = cfg.to_problem().unwrap();
        assert!(spec.h.is_zero());
        assert_eq!(solver.dt, 1e-3);
    }

    #[test]
    fn rejects_small_p_with_exact_message() {
        let text = EXAMPLE.replace("p = 3", "p = 1.5");
        match parse_config(&text) {
            Err(ConfigError::Invalid { key, message }) => {
                assert_eq!(key, "p");
                assert_eq!(message, "p must exceed 2 (or enable p2_diagnostic)");
            }
            other => panic!("expected invalid p, got {other:?}"),
        }
        let ok = EXAMPLE.replace("p = 3", "p = 2") + "p2_diagnostic = true\n";
        assert!(parse_config(&ok).is_ok());
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys_with_line_numbers() {
        let text = format!("{EXAMPLE}bogus.key = 1\n");
        match parse_config(&text) {
            Err(ConfigError::UnknownKey { line, key }) => {
                assert_eq!(line, 9);
                assert_eq!(key, "bogus.key");
            }
            other => panic!("expected unknown key, got {other:?}"),
        }
        let text = format!("{EXAMPLE}p = 4\n");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::DuplicateKey { key, .. }) if key == "p"
        ));
        let text = format!("{EXAMPLE}nonsense line\n");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Malformed { line: 9, .. })
        ));
    }

    #[test]
    fn expression_matches_preset_cosine() {
        let preset = parse_config(EXAMPLE).unwrap();
        let text = EXAMPLE.replace(
            "data.u0 = cosine_mode(1)",
            "data.u0 = expr: cos(3.14159*x1)",
        );
        let via_expr = parse_config(&text).unwrap();
        let (spec_a, _) = preset.to_problem().unwrap();
        let (spec_b, _) = via_expr.to_problem().unwrap();
        assert!(spec_a.u0.sub(&spec_b.u0).max_abs() < 1e-4);
    }

    #[test]
    fn expression_coordinates_are_checked_against_dim() {
        let text = EXAMPLE.replace("data.u0 = cosine_mode(1)", "data.u0 = expr: cos(x2)");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Invalid { key, .. }) if key == "data.u0"
        ));
    }

    #[test]
    fn render_parse_round_trip() {
        let mut cfg = parse_config(EXAMPLE).unwrap();
        cfg.pnorm = Some((2.0, 2.0, true));
        cfg.u1 = None;
        cfg.label = "roundtrip".to_string();
        let text = cfg.render();
        let back = parse_config(&text).unwrap();
        assert_eq!(cfg, back);

        let hyper = "\
mode = hyperbolic
p = 3
T = 0.2
grid.nodes = 33,17
grid.low = 0,-1
grid.high = 1,1
data.u0 = gaussian_bump(0.5,0.2)
data.u1 = constant(0)
data.h = expr: t*cos(pi*x1)*cos(pi*x2)
solver.dt = 1e-4
seed = 7
";
        let cfg = parse_config(hyper).unwrap();
        let back = parse_config(&cfg.render()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn manufactured_case_satisfies_its_equation() {
        // h of wave_p3 equals u_tt - D(|Du| Du) for u = (1 + t^2/2) cos(pi x)
        let case = manufactured("wave_p3").unwrap();
        for (t, x) in [(0.0, 0.3), (0.5, 0.7), (1.0, 0.1)] {
            let g = 1.0 + 0.5 * t * t;
            let u_tt = (PI * x).cos();
            // d/dx |u_x| u_x with u_x = -pi g sin(pi x): |u_x| u_x = -pi^2 g^2 sin^2
            let dflux = -g * g * PI.powi(3) * (2.0 * PI * x).sin();
            assert_relative_eq!(
                (case.h)(t, &[x]),
                u_tt - dflux,
                max_relative = 1e-12
            );
        }
        assert!(manufactured("nope").is_none());
    }

    #[test]
    fn mode_mismatch_in_reports_is_rejected() {
        let text = format!("{EXAMPLE}audit.reports = gronwall\n");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Invalid { key, .. }) if key == "audit.reports"
        ));
    }
}
