//! Experiment configuration: TOML with `[system]`, `[grid]`, `[perturbation]`,
//! `[analysis]` and `[output]` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sbp::{build_sbp_operator, min_points, Grid1D};
use crate::solver::{SemiDiscreteProblem, DEFAULT_CFL};
use crate::systems::{
    boundary_eigenstructure, make_burgers_split, system_from_label, BoundaryCondition, DataBundle,
    Side,
};
use crate::uncertainty::{
    PerturbationKind, PerturbationSpec, Shape, RATE_TOL, RATE_WINDOW_TRANSIT_FRACTION,
};

pub const DEFAULT_T_END: f64 = 2.0;
pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_RATE_WINDOW: [f64; 2] = [0.01, 0.1];
pub const BURGERS_RATE_TOL: f64 = 0.10;

/// A scalar or a list in the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    /// Advection speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Wave speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Constant Burgers background state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: OneOrMany<usize>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub x_left: f64,
    #[serde(default = "one")]
    pub x_right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    pub kind: OneOrMany<PerturbationKind>,
    pub eps: OneOrMany<f64>,
    #[serde(default = "default_shape")]
    pub shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavenumber: Option<f64>,
    /// `left`, `right` or `both`; only read for boundary perturbations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_rate_window")]
    pub rate_window: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_tolerance: Option<f64>,
    #[serde(default = "one_usize")]
    pub stride: usize,
    #[serde(default = "one")]
    pub penalty_scale: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            cfl: DEFAULT_CFL,
            t_end: DEFAULT_T_END,
            rate_window: DEFAULT_RATE_WINDOW,
            delta0_window: None,
            horizon: None,
            rate_tolerance: None,
            stride: 1,
            penalty_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Zero lets the thread pool decide.
    #[serde(default)]
    pub workers: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            seed: 0,
            workers: 0,
        }
    }
}

fn default_order() -> usize {
    DEFAULT_ORDER
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_shape() -> String {
    "constant".into()
}
fn default_cfl() -> f64 {
    DEFAULT_CFL
}
fn default_t_end() -> f64 {
    DEFAULT_T_END
}
fn default_rate_window() -> [f64; 2] {
    DEFAULT_RATE_WINDOW
}
fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

/// The file as written, with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub system: SystemSection,
    pub grid: GridSection,
    pub perturbation: PerturbationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Advection,
    Wave,
    Burgers,
}

/// Validated configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub system: SystemKind,
    /// `a`, `c` or `u0` depending on the system.
    pub speed: f64,
    pub grid_sizes: Vec<usize>,
    pub order: usize,
    pub kinds: Vec<PerturbationKind>,
    pub amplitudes: Vec<f64>,
    pub shape: Shape,
    pub sides: Vec<Side>,
    pub cfl: f64,
    pub t_end: f64,
    pub rate_window: (f64, f64),
    pub delta0_window: (f64, f64),
    pub horizon: f64,
    pub rate_tolerance: f64,
    pub stride: usize,
    pub penalty_scale: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

fn parse_err(origin: &str, e: toml::de::Error) -> Error {
    let key = e
        .message()
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<input>".into());
    let at = e
        .span()
        .map(|s| format!(" (byte {} of {origin})", s.start))
        .unwrap_or_default();
    Error::config(key, format!("{}{at}", e.message().trim()))
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    parse_with_origin(text, "<inline>")
}

/// Reads, parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    parse_with_origin(&text, &path.display().to_string())
}

fn parse_with_origin(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| parse_err(origin, e))?;
    ExperimentConfig::from_raw(raw)
}

fn check_positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::config(
            key,
            format!("must be a positive finite number, got {v}"),
        ))
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let s = &raw.system;
        let unused = |key: &str, v: &Option<f64>| -> Result<()> {
            match v {
                Some(_) => Err(Error::config(
                    format!("system.{key}"),
                    format!("does not apply to system `{}`", s.name),
                )),
                None => Ok(()),
            }
        };
        let (system, speed) = match s.name.as_str() {
            "advection" => {
                unused("c", &s.c)?;
                unused("u0", &s.u0)?;
                (SystemKind::Advection, s.a.unwrap_or(1.0))
            }
            "wave" => {
                unused("a", &s.a)?;
                unused("u0", &s.u0)?;
                (SystemKind::Wave, s.c.unwrap_or(1.0))
            }
            "burgers" => {
                unused("a", &s.a)?;
                unused("c", &s.c)?;
                (SystemKind::Burgers, s.u0.unwrap_or(1.0))
            }
            other => {
                return Err(Error::config(
                    "system.name",
                    format!("unknown system `{other}`; expected advection, wave or burgers"),
                ))
            }
        };
        if system != SystemKind::Advection {
            check_positive("system", speed)?;
        } else if !(speed.is_finite() && speed != 0.0) {
            return Err(Error::config("system.a", "must be finite and nonzero"));
        }
        if system == SystemKind::Burgers && speed <= 0.0 {
            return Err(Error::config(
                "system.u0",
                "background state must be positive",
            ));
        }

        let g = &raw.grid;
        let order = g.order;
        let need = min_points(order).map_err(|e| Error::config("grid.order", e.to_string()))?;
        let grid_sizes = g.n.to_vec();
        if grid_sizes.is_empty() {
            return Err(Error::config("grid.n", "grid size list is empty"));
        }
        if let Some(&bad) = grid_sizes.iter().find(|&&n| n < need) {
            return Err(Error::config(
                "grid.n",
                format!("{bad} points is below the minimum {need} for order {order}"),
            ));
        }
        if !(g.x_left.is_finite() && g.x_right.is_finite() && g.x_right > g.x_left) {
            return Err(Error::config(
                "grid.x_right",
                "domain must satisfy x_left < x_right",
            ));
        }
        let length = g.x_right - g.x_left;

        let p = &raw.perturbation;
        let kinds = dedup(p.kind.to_vec());
        if kinds.is_empty() {
            return Err(Error::config("perturbation.kind", "kind list is empty"));
        }
        let amplitudes = p.eps.to_vec();
        if amplitudes.is_empty() {
            return Err(Error::config("perturbation.eps", "amplitude list is empty"));
        }
        if let Some(bad) = amplitudes.iter().find(|e| !e.is_finite()) {
            return Err(Error::config(
                "perturbation.eps",
                format!("amplitude {bad} is not finite"),
            ));
        }
        let shape = match p.shape.as_str() {
            "constant" => Shape::Constant,
            "gaussian" => Shape::Gaussian {
                center: p.center.unwrap_or(g.x_left + 0.5 * length),
                width: check_positive("perturbation.width", p.width.unwrap_or(0.1 * length))?,
            },
            "sine" => Shape::Sine {
                wavenumber: p.wavenumber.unwrap_or(1.0),
            },
            other => {
                return Err(Error::config(
                    "perturbation.shape",
                    format!("unknown shape `{other}`; expected constant, gaussian or sine"),
                ))
            }
        };
        let sides = match p.side.as_deref() {
            None | Some("both") => Vec::new(),
            Some("left") => vec![Side::Left],
            Some("right") => vec![Side::Right],
            Some(other) => {
                return Err(Error::config(
                    "perturbation.side",
                    format!("unknown side `{other}`; expected left, right or both"),
                ))
            }
        };

        let a = &raw.analysis;
        let cfl = a.cfl;
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::config(
                "analysis.cfl",
                format!("must lie in (0, 1], got {cfl}"),
            ));
        }
        let t_end = check_positive("analysis.t_end", a.t_end)?;
        if a.stride == 0 {
            return Err(Error::config("analysis.stride", "must be at least 1"));
        }
        if !a.penalty_scale.is_finite() {
            return Err(Error::config("analysis.penalty_scale", "must be finite"));
        }
        let transit = length / speed.abs();
        let [r1, r2] = a.rate_window;
        if !(r1 > 0.0 && r2 > r1 && r2 < t_end) {
            return Err(Error::config(
                "analysis.rate_window",
                format!("[{r1}, {r2}] must be increasing and inside (0, t_end = {t_end})"),
            ));
        }
        let limit = RATE_WINDOW_TRANSIT_FRACTION * transit;
        if r2 > limit + 1e-12 {
            return Err(Error::config(
                "analysis.rate_window",
                format!("ends at {r2}, after 0.3 of a transit time ({limit:.4})"),
            ));
        }
        let [d1, d2] = a.delta0_window.unwrap_or([0.0, t_end]);
        if !(d1 >= 0.0 && d2 > d1 && d2 <= t_end) {
            return Err(Error::config(
                "analysis.delta0_window",
                format!("[{d1}, {d2}] must be increasing and inside [0, t_end = {t_end}]"),
            ));
        }
        let horizon = a.horizon.unwrap_or(t_end);
        if !(horizon > 0.0 && horizon <= t_end) {
            return Err(Error::config(
                "analysis.horizon",
                format!("{horizon} must lie in (0, t_end = {t_end}]"),
            ));
        }
        if horizon < 2.0 * transit - 1e-12 {
            return Err(Error::config(
                "analysis.horizon",
                format!(
                    "{horizon} is shorter than two transit times ({:.4})",
                    2.0 * transit
                ),
            ));
        }
        let rate_tolerance = match a.rate_tolerance {
            Some(t) => check_positive("analysis.rate_tolerance", t)?,
            None if system == SystemKind::Burgers => BURGERS_RATE_TOL,
            None => RATE_TOL,
        };

        let cfg = Self {
            system,
            speed,
            grid_sizes,
            order,
            kinds,
            amplitudes,
            shape,
            sides,
            cfl,
            t_end,
            rate_window: (r1, r2),
            delta0_window: (d1, d2),
            horizon,
            rate_tolerance,
            stride: a.stride,
            penalty_scale: a.penalty_scale,
            out_dir: raw.output.dir.clone(),
            seed: raw.output.seed,
            workers: raw.output.workers,
            raw,
        };
        // Boundary data needs an inflow slot on each requested side.
        if cfg.kinds.contains(&PerturbationKind::Boundary) {
            let prob = cfg.base_problem(cfg.grid_sizes[0])?;
            cfg.perturbation(PerturbationKind::Boundary, 1.0)
                .boundary_sides(&prob)?;
        }
        Ok(cfg)
    }

    pub fn system_label(&self) -> &'static str {
        match self.system {
            SystemKind::Advection => "advection",
            SystemKind::Wave => "wave",
            SystemKind::Burgers => "burgers",
        }
    }

    pub fn domain_length(&self) -> f64 {
        self.raw.grid.x_right - self.raw.grid.x_left
    }

    pub fn grid(&self, n: usize) -> Result<Grid1D> {
        Grid1D::new(self.raw.grid.x_left, self.raw.grid.x_right, n)
    }

    /// Unperturbed problem: zero data for the linear systems, a constant
    /// state with matching inflow data for Burgers.
    pub fn base_problem(&self, n: usize) -> Result<SemiDiscreteProblem> {
        let op = Arc::new(build_sbp_operator(self.order, &self.grid(n)?)?);
        let (sys, data) = match self.system {
            SystemKind::Burgers => {
                let sys = make_burgers_split();
                let u0 = self.speed;
                let es = boundary_eigenstructure(&sys, Side::Left, &[u0])?;
                let g = es.incoming(&[u0])?;
                let data = DataBundle::zero()
                    .with_initial(Arc::new(move |_, out| out[0] = u0))
                    .with_boundary(BoundaryCondition::constant(Side::Left, g));
                (sys, data)
            }
            _ => (
                system_from_label(self.system_label(), self.speed)?,
                DataBundle::zero(),
            ),
        };
        Ok(SemiDiscreteProblem::new(sys, op, data)?.with_penalty_scale(self.penalty_scale))
    }

    pub fn perturbation(&self, kind: PerturbationKind, eps: f64) -> PerturbationSpec {
        PerturbationSpec::new(kind, eps)
            .with_shape(self.shape)
            .on_sides(if kind == PerturbationKind::Boundary {
                self.sides.clone()
            } else {
                Vec::new()
            })
    }

    /// Canonical TOML of the validated input.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.raw).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Config for a single `(n, kind, eps)` run, suitable for re-running it alone.
    pub fn single_run_toml(&self, n: usize, kind: PerturbationKind, eps: f64) -> String {
        let mut raw = self.raw.clone();
        raw.grid.n = OneOrMany::One(n);
        raw.perturbation.kind = OneOrMany::One(kind);
        raw.perturbation.eps = OneOrMany::One(eps);
        toml::to_string(&raw).expect("config serializes")
    }
}

fn dedup<T: PartialEq>(v: Vec<T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(v.len());
    for x in v {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
name = "advection"
a = 1.0

[grid]
n = 201
order = 4

[perturbation]
kind = "initial"
eps = 1e-3
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.cfl, 0.5);
        assert_eq!(c.t_end, 2.0);
        assert_eq!(c.grid_sizes, vec![201]);
        assert_eq!(c.kinds, vec![PerturbationKind::Initial]);
        assert_eq!(c.amplitudes, vec![1e-3]);
        assert_eq!(c.shape, Shape::Constant);
        assert_eq!(c.rate_window, (0.01, 0.1));
        assert_eq!(c.delta0_window, (0.0, 2.0));
        assert_eq!(c.horizon, 2.0);
        assert_eq!(c.rate_tolerance, RATE_TOL);
        assert_eq!(c.out_dir, PathBuf::from("results"));
    }

    #[test]
    fn lists_and_round_trip() {
        let text = MINIMAL.replace("n = 201", "n = [201, 401]").replace(
            "kind = \"initial\"",
            "kind = [\"forcing\", \"boundary\", \"initial\"]",
        );
        let c = parse_config_str(&text).unwrap();
        assert_eq!(c.grid_sizes, vec![201, 401]);
        assert_eq!(c.kinds.len(), 3);
        let again = parse_config_str(&c.to_toml()).unwrap();
        assert_eq!(again.raw, c.raw);
        assert_eq!(again.hash(), c.hash());
        let single =
            parse_config_str(&c.single_run_toml(401, PerturbationKind::Boundary, 1e-3)).unwrap();
        assert_eq!(single.grid_sizes, vec![401]);
        assert_eq!(single.kinds, vec![PerturbationKind::Boundary]);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("eps = 1e-3", "epsilonn = 1e-3\neps = 1e-3");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("epsilonn"), "{err}");
        let err = parse_config_str(&format!("{MINIMAL}\n[extra]\nx = 1\n")).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn missing_key_is_named() {
        let err = parse_config_str(&MINIMAL.replace("eps = 1e-3", "")).unwrap_err();
        assert!(err.to_string().contains("eps"), "{err}");
    }

    #[test]
    fn boundary_on_outflow_side_names_side() {
        let text = MINIMAL.replace(
            "kind = \"initial\"",
            "kind = \"boundary\"\nside = \"right\"",
        );
        let err = parse_config_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("right") && msg.contains("perturbation.side"),
            "{msg}"
        );
    }

    #[test]
    fn validation_errors() {
        let cases = [
            (MINIMAL.replace("n = 201", "n = []"), "grid.n"),
            (MINIMAL.replace("n = 201", "n = 5"), "grid.n"),
            (MINIMAL.replace("order = 4", "order = 3"), "grid.order"),
            (
                MINIMAL.replace("\"advection\"", "\"maxwell\""),
                "system.name",
            ),
            (MINIMAL.replace("a = 1.0", "c = 1.0"), "system.c"),
            (
                format!("{MINIMAL}\n[analysis]\nrate_window = [0.01, 0.5]\n"),
                "analysis.rate_window",
            ),
            (
                format!("{MINIMAL}\n[analysis]\nt_end = 1.0\nrate_window = [0.01, 1.5]\n"),
                "analysis.rate_window",
            ),
            (
                format!("{MINIMAL}\n[analysis]\nt_end = 1.0\n"),
                "analysis.horizon",
            ),
            (
                format!("{MINIMAL}\n[analysis]\ncfl = 1.5\n"),
                "analysis.cfl",
            ),
            (
                format!("{MINIMAL}\n[analysis]\ndelta0_window = [0.5, 3.0]\n"),
                "analysis.delta0_window",
            ),
        ];
        for (text, key) in cases {
            match parse_config_str(&text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("expected config error for {key}, got {other:?}"),
            }
        }
    }

    #[test]
    fn burgers_base_problem_is_steady() {
        let text = MINIMAL.replace(
            "name = \"advection\"\na = 1.0",
            "name = \"burgers\"\nu0 = 1.0",
        );
        let c = parse_config_str(&text).unwrap();
        assert_eq!(c.rate_tolerance, BURGERS_RATE_TOL);
        let prob = c.base_problem(41).unwrap();
        let u = prob.initial_state();
        let rhs = prob.assemble_rhs(&u, 0.0).unwrap();
        assert!(rhs.iter().all(|v| v.abs() < 1e-12));
    }
}
