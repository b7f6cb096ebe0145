//! Base/perturbed run pairs and the measurements made on their difference:
//! deviation norms, the outflow-to-energy ratio `η`, its integral `θ`, the
//! damping rate `δ₀`, the three data bounds, short-time growth exponents and
//! long-time classification.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{
    cfl_step, quad_dot, rk4_solve_with, weighted_norm_sq, SemiDiscreteProblem, SolveOptions, State,
    Trajectory,
};
use crate::systems::{boundary_term_split, BoundaryCondition, Side};

/// Deviations with `‖W‖² < ETA_FLOOR · length` have no defined `η`.
pub const ETA_FLOOR: f64 = 1e-20;
/// Bounds at or below this value are not used as ratio denominators.
pub const BOUND_FLOOR: f64 = 1e-14;
pub const LINEAR_BOUND_TOL: f64 = 1e-6;
/// Allowance for the trapezoidal `θ` in the sharper initial-data bound. The
/// quadrature lags where `η` spikes as a front leaves the domain.
pub const SHARPER_BOUND_TOL: f64 = 2e-3;
pub const NONLINEAR_BOUND_TOL: f64 = 0.05;
/// `η` below this counts as vanishing outflow.
pub const ETA_VANISH: f64 = 1e-12;
pub const RATE_TOL: f64 = 0.05;
pub const RATE_RMS_TOL: f64 = 0.02;
/// Below this `w_norm` there is nothing to fit.
pub const RATE_MIN_NORM: f64 = 1e-13;
/// Rate windows must end before this fraction of one transit time.
pub const RATE_WINDOW_TRANSIT_FRACTION: f64 = 0.3;
pub const DECAY_FRACTION: f64 = 1e-6;
pub const SATURATION_CHANGE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Forcing,
    Boundary,
    Initial,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 3] = [Self::Forcing, Self::Boundary, Self::Initial];

    /// Leading-order short-time exponent of `‖W‖_P`.
    pub fn target_slope(self) -> f64 {
        match self {
            Self::Forcing => 1.0,
            Self::Boundary => 0.5,
            Self::Initial => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Forcing => "forcing",
            Self::Boundary => "boundary",
            Self::Initial => "initial",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "forcing" => Ok(Self::Forcing),
            "boundary" => Ok(Self::Boundary),
            "initial" => Ok(Self::Initial),
            other => Err(format!(
                "unknown perturbation kind `{other}`; expected forcing, boundary or initial"
            )),
        }
    }
}

/// Profile of a perturbation. Spatial for forcing and initial data, temporal
/// for boundary data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Constant,
    Gaussian { center: f64, width: f64 },
    Sine { wavenumber: f64 },
}

impl Shape {
    /// Profile value at coordinate `s` on an interval of length `length`
    /// starting at `origin`.
    pub fn eval(&self, s: f64, origin: f64, length: f64) -> f64 {
        match *self {
            Shape::Constant => 1.0,
            Shape::Gaussian { center, width } => (-((s - center) / width).powi(2)).exp(),
            Shape::Sine { wavenumber } => {
                (2.0 * std::f64::consts::PI * wavenumber * (s - origin) / length).sin()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub amplitude: f64,
    pub shape: Shape,
    /// Sides receiving boundary-data perturbations; empty means every side
    /// with inflow characteristics.
    pub sides: Vec<Side>,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, amplitude: f64) -> Self {
        Self {
            kind,
            amplitude,
            shape: Shape::Constant,
            sides: Vec::new(),
        }
    }

    pub fn with_shape(mut self, shape: Shape) -> Self {
        self.shape = shape;
        self
    }

    pub fn on_sides(mut self, sides: Vec<Side>) -> Self {
        self.sides = sides;
        self
    }

    /// Sides that receive boundary data, validated against the inflow counts.
    pub fn boundary_sides(&self, prob: &SemiDiscreteProblem) -> Result<Vec<Side>> {
        if self.sides.is_empty() {
            let sides: Vec<Side> = Side::BOTH
                .into_iter()
                .filter(|&s| prob.inflow_count(s) > 0)
                .collect();
            if sides.is_empty() {
                return Err(Error::config(
                    "perturbation.side",
                    "no boundary has inflow characteristics",
                ));
            }
            return Ok(sides);
        }
        for &s in &self.sides {
            if prob.inflow_count(s) == 0 {
                return Err(Error::config(
                    "perturbation.side",
                    format!("the {s} boundary has no inflow characteristics, so it takes no boundary data"),
                ));
            }
        }
        Ok(self.sides.clone())
    }

    /// `δF(x, t)` sampled on the grid, zero for other kinds.
    pub fn forcing_field(&self, prob: &SemiDiscreteProblem) -> State {
        let mut f = State::zeros((prob.n_comp(), prob.n_points()));
        if self.kind == PerturbationKind::Forcing {
            let g = prob.grid();
            for (i, &x) in prob.coordinates().iter().enumerate() {
                let v = self.amplitude * self.shape.eval(x, g.x_left(), g.length());
                f.column_mut(i).fill(v);
            }
        }
        f
    }

    /// `δG(t)` on one side.
    pub fn boundary_value(&self, t: f64, n_neg: usize, period: f64) -> Vec<f64> {
        vec![self.amplitude * self.shape.eval(t, 0.0, period); n_neg]
    }

    /// Data of the perturbed problem.
    pub fn perturbed_problem(&self, base: &SemiDiscreteProblem) -> Result<SemiDiscreteProblem> {
        let mut data = base.data.clone();
        let grid = *base.grid();
        let (origin, length) = (grid.x_left(), grid.length());
        let eps = self.amplitude;
        let shape = self.shape;
        match self.kind {
            PerturbationKind::Forcing => {
                let prev = data.forcing.clone();
                data = data.with_forcing(Arc::new(move |x, t, out| {
                    if let Some(f) = &prev {
                        (f.0)(x, t, out);
                    }
                    let v = eps * shape.eval(x, origin, length);
                    out.iter_mut().for_each(|o| *o += v);
                }));
            }
            PerturbationKind::Initial => {
                let prev = data.initial.clone();
                data = data.with_initial(Arc::new(move |x, out| {
                    if let Some(h) = &prev {
                        (h.0)(x, out);
                    }
                    let v = eps * shape.eval(x, origin, length);
                    out.iter_mut().for_each(|o| *o += v);
                }));
            }
            PerturbationKind::Boundary => {
                for side in self.boundary_sides(base)? {
                    let n_neg = base.inflow_count(side);
                    let bc: BoundaryCondition = data.boundary(side).plus(Arc::new(move |t| {
                        vec![eps * shape.eval(t, 0.0, 1.0); n_neg]
                    }));
                    *data.boundary_mut(side) = bc;
                }
            }
        }
        Ok(
            SemiDiscreteProblem::new(base.system.clone(), base.op.clone(), data)?
                .with_penalty_scale(base.penalty_scale),
        )
    }
}

/// Both runs of a pair and their difference `W = U − V`.
#[derive(Debug, Clone)]
pub struct PerturbationRun {
    pub spec: PerturbationSpec,
    pub base_problem: SemiDiscreteProblem,
    pub perturbed_problem: SemiDiscreteProblem,
    pub base: Trajectory,
    pub perturbed: Trajectory,
    pub deviation: Trajectory,
}

/// Solves the base and perturbed problems on a shared time grid.
pub fn run_perturbation_pair(
    base: &SemiDiscreteProblem,
    pert: &PerturbationSpec,
    opts: &SolveOptions,
) -> Result<PerturbationRun> {
    let perturbed_problem = pert.perturbed_problem(base)?;
    let dt = match opts.dt {
        Some(dt) => dt,
        None => cfl_step(base, opts.cfl)?,
    };
    let opts = opts.with_dt(dt);
    let wrap = |run: &str| {
        let run = run.to_string();
        move |e| Error::Run {
            run,
            source: Box::new(e),
        }
    };
    let base_traj = rk4_solve_with(base, &opts).map_err(wrap("base"))?;
    let pert_traj = rk4_solve_with(&perturbed_problem, &opts).map_err(wrap("perturbed"))?;
    let states = base_traj
        .states
        .iter()
        .zip(&pert_traj.states)
        .map(|(v, u)| u - v)
        .collect();
    let deviation = Trajectory {
        times: base_traj.times.clone(),
        states,
        step_size: dt,
        system: base_traj.system.clone(),
        grid: base_traj.grid,
    };
    Ok(PerturbationRun {
        spec: pert.clone(),
        base_problem: base.clone(),
        perturbed_problem,
        base: base_traj,
        perturbed: pert_traj,
        deviation,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationSeries {
    pub kind: PerturbationKind,
    pub linear: bool,
    pub domain_length: f64,
    pub max_speed: f64,
    pub times: Vec<f64>,
    pub w_norm: Vec<f64>,
    pub w_norm_sq: Vec<f64>,
    pub outflow: Vec<f64>,
    pub eta: Vec<f64>,
    /// False where the deviation is below the floor and `η` is set to 0.
    pub eta_defined: Vec<bool>,
    /// `θ(0, t)` by cumulative trapezoidal integration.
    pub theta: Vec<f64>,
    pub dual_forcing_norm: Vec<f64>,
    pub boundary_data_norm_sq: Vec<f64>,
    /// `‖δH‖_P`.
    pub initial_norm: f64,
}

impl DeviationSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the last sample with time ≤ `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&s| s <= t + 1e-12);
        k.checked_sub(1)
    }

    pub fn transit_time(&self) -> f64 {
        self.domain_length / self.max_speed
    }

    /// `θ(ξ, t)` between two samples.
    pub fn theta_between(&self, from: usize, to: usize) -> f64 {
        self.theta[to] - self.theta[from]
    }
}

pub fn deviation_series(run: &PerturbationRun) -> Result<DeviationSeries> {
    let prob = &run.perturbed_problem;
    let op = &prob.op;
    let length = prob.grid().length();
    let n = run.deviation.len();
    let mut w_norm_sq = Vec::with_capacity(n);
    let mut outflow = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    let mut eta_defined = Vec::with_capacity(n);

    for (w, u) in run.deviation.states.iter().zip(&run.perturbed.states) {
        let e = prob.energy(w);
        let mut out = 0.0;
        for side in Side::BOTH {
            let es = prob.eigenstructure(side, u)?;
            out += boundary_term_split(&es, &prob.boundary_value(w, side))?.0;
        }
        let defined = e >= ETA_FLOOR * length;
        w_norm_sq.push(e);
        outflow.push(out);
        eta.push(if defined { out / e } else { 0.0 });
        eta_defined.push(defined);
    }

    let times = run.deviation.times.clone();
    let mut theta = vec![0.0; n];
    for k in 1..n {
        theta[k] = theta[k - 1] + 0.5 * (eta[k] + eta[k - 1]) * (times[k] - times[k - 1]);
    }

    let spec = &run.spec;
    let dual_forcing_norm = match spec.kind {
        PerturbationKind::Forcing => {
            // Constant in time for every supported shape.
            let f = spec.forcing_field(prob);
            let v = weighted_norm_sq(op, prob.system.mass_inv(), f.view()).sqrt();
            vec![v; n]
        }
        _ => vec![0.0; n],
    };
    let boundary_data_norm_sq = match spec.kind {
        PerturbationKind::Boundary => {
            let sides = spec.boundary_sides(&run.base_problem)?;
            times
                .iter()
                .map(|&t| {
                    sides
                        .iter()
                        .map(|&s| {
                            spec.boundary_value(t, prob.inflow_count(s), 1.0)
                                .iter()
                                .map(|g| g * g)
                                .sum::<f64>()
                        })
                        .sum()
                })
                .collect()
        }
        _ => vec![0.0; n],
    };

    let base_speed = run
        .base_problem
        .max_wave_speed(&run.base_problem.initial_state());
    Ok(DeviationSeries {
        kind: spec.kind,
        linear: prob.system.is_linear(),
        domain_length: length,
        max_speed: if base_speed > 0.0 { base_speed } else { 1.0 },
        w_norm: w_norm_sq.iter().map(|v| v.sqrt()).collect(),
        initial_norm: w_norm_sq.first().copied().unwrap_or(0.0).sqrt(),
        times,
        w_norm_sq,
        outflow,
        eta,
        eta_defined,
        theta,
        dual_forcing_norm,
        boundary_data_norm_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingMethod {
    InfimumOfMeanEta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DampingEstimate {
    pub delta0: f64,
    /// Sample window actually used: leading samples without a defined `η`
    /// are excluded.
    pub window: (f64, f64),
    pub first: usize,
    pub last: usize,
    pub method: DampingMethod,
}

impl DampingEstimate {
    /// Smallest `θ(ξ,t) − δ₀(t−ξ)` over all sampled pairs in the window.
    pub fn certificate_margin(&self, series: &DeviationSeries) -> f64 {
        let mut worst = f64::INFINITY;
        for i in self.first..=self.last {
            for j in i + 1..=self.last {
                let m =
                    series.theta_between(i, j) - self.delta0 * (series.times[j] - series.times[i]);
                worst = worst.min(m);
            }
        }
        worst
    }
}

/// Largest `δ₀ ≥ 0` with `θ(ξ,t) ≥ δ₀ (t − ξ)` over all sampled pairs in
/// `window`. The mean of `η` over any interval is a weighted mean of the
/// adjacent-sample means, so the infimum over pairs is attained by
/// neighbours.
pub fn estimate_delta0(series: &DeviationSeries, window: (f64, f64)) -> Result<DampingEstimate> {
    let (t0, t1) = window;
    let idx: Vec<usize> = (0..series.len())
        .filter(|&k| series.times[k] >= t0 - 1e-12 && series.times[k] <= t1 + 1e-12)
        .collect();
    if idx.len() < 2 || t1 <= t0 {
        return Err(Error::Analysis(format!(
            "delta0 window [{t0}, {t1}] holds fewer than two samples"
        )));
    }
    let last = *idx.last().unwrap();
    let first = idx
        .iter()
        .copied()
        .find(|&k| series.eta_defined[k])
        .unwrap_or(last);
    let est = |delta0| DampingEstimate {
        delta0,
        window: (series.times[first], series.times[last]),
        first,
        last,
        method: DampingMethod::InfimumOfMeanEta,
    };
    if first >= last {
        return Ok(est(0.0));
    }
    if (first..=last).any(|k| series.eta[k] <= ETA_VANISH) {
        return Ok(est(0.0));
    }
    let d = (first..last)
        .map(|k| series.theta_between(k, k + 1) / (series.times[k + 1] - series.times[k]))
        .fold(f64::INFINITY, f64::min);
    Ok(est(d.max(0.0)))
}

/// `(1 − e^{−δ₀ t}) / δ₀`, tending to `t` as `δ₀ → 0`.
pub fn forcing_bound_factor(delta0: f64, t: f64) -> f64 {
    let x = delta0 * t;
    if x.abs() < 1e-8 {
        t * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        -(-x).exp_m1() / delta0
    }
}

/// `(1 − e^{−2δ₀ t}) / δ₀`, tending to `2t` as `δ₀ → 0`.
pub fn boundary_bound_factor(delta0: f64, t: f64) -> f64 {
    let x = delta0 * t;
    if x.abs() < 1e-8 {
        2.0 * t * (1.0 - x + 2.0 * x * x / 3.0)
    } else {
        -(-2.0 * x).exp_m1() / delta0
    }
}

fn running_max_until(values: &[f64], k: usize) -> f64 {
    values[..=k].iter().copied().fold(0.0, f64::max)
}

/// Bound on `‖W‖_P` for a forcing perturbation.
pub fn bound_rhs_forcing(series: &DeviationSeries, d0: &DampingEstimate, t: f64) -> f64 {
    let Some(k) = series.index_at(t) else {
        return 0.0;
    };
    forcing_bound_factor(d0.delta0, t) * running_max_until(&series.dual_forcing_norm, k)
}

/// Bound on `‖W‖²_P` for a boundary-data perturbation.
pub fn bound_rhs_boundary(series: &DeviationSeries, d0: &DampingEstimate, t: f64) -> f64 {
    let Some(k) = series.index_at(t) else {
        return 0.0;
    };
    boundary_bound_factor(d0.delta0, t) * running_max_until(&series.boundary_data_norm_sq, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialBound {
    /// `e^{−2δ₀t} ‖δH‖²`.
    pub exponential: f64,
    /// `e^{−2θ(0,t)} ‖δH‖²`.
    pub sharper: f64,
}

/// Bounds on `‖W‖²_P` for an initial-data perturbation.
pub fn bound_rhs_initial(
    series: &DeviationSeries,
    d0: &DampingEstimate,
    t: f64,
    delta_h_norm: f64,
) -> InitialBound {
    let h2 = delta_h_norm * delta_h_norm;
    let theta = series.index_at(t).map_or(0.0, |k| series.theta[k]);
    InitialBound {
        exponential: (-2.0 * d0.delta0 * t).exp() * h2,
        sharper: (-2.0 * theta).exp() * h2,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SharperReport {
    pub bound: Vec<f64>,
    /// Max of measured / sharper bound.
    pub max_ratio: f64,
    /// Max of sharper / exponential bound; at most one.
    pub max_over_exponential: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub kind: PerturbationKind,
    /// True when `measured` and `bound` are squared norms.
    pub squared: bool,
    pub times: Vec<f64>,
    pub measured: Vec<f64>,
    pub bound: Vec<f64>,
    /// `measured / bound`, NaN where the bound is below the floor.
    pub ratio: Vec<f64>,
    pub max_ratio: f64,
    pub max_ratio_time: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub sharper: Option<SharperReport>,
}

fn ratio_of(measured: f64, bound: f64) -> f64 {
    if bound > BOUND_FLOOR {
        measured / bound
    } else if measured > BOUND_FLOOR {
        f64::INFINITY
    } else {
        f64::NAN
    }
}

fn max_finite_or_inf(values: &[f64]) -> (f64, usize) {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .fold(
            (0.0, 0),
            |(m, i), (k, &v)| if v > m { (v, k) } else { (m, i) },
        )
}

/// Checks the bound matching `kind` at every sample of the series.
pub fn verify_bound(
    kind: PerturbationKind,
    series: &DeviationSeries,
    d0: &DampingEstimate,
) -> Result<BoundReport> {
    if kind != series.kind {
        return Err(Error::KindMismatch {
            series: series.kind.to_string(),
            requested: kind.to_string(),
        });
    }
    let tolerance = if series.linear {
        LINEAR_BOUND_TOL
    } else {
        NONLINEAR_BOUND_TOL
    };
    let times = series.times.clone();
    let (measured, bound, sharper_bound): (Vec<f64>, Vec<f64>, Option<Vec<f64>>) = match kind {
        PerturbationKind::Forcing => (
            series.w_norm.clone(),
            times
                .iter()
                .map(|&t| bound_rhs_forcing(series, d0, t))
                .collect(),
            None,
        ),
        PerturbationKind::Boundary => (
            series.w_norm_sq.clone(),
            times
                .iter()
                .map(|&t| bound_rhs_boundary(series, d0, t))
                .collect(),
            None,
        ),
        PerturbationKind::Initial => {
            let b: Vec<InitialBound> = times
                .iter()
                .map(|&t| bound_rhs_initial(series, d0, t, series.initial_norm))
                .collect();
            (
                series.w_norm_sq.clone(),
                b.iter().map(|b| b.exponential).collect(),
                Some(b.iter().map(|b| b.sharper).collect()),
            )
        }
    };
    let ratio: Vec<f64> = measured
        .iter()
        .zip(&bound)
        .map(|(&m, &b)| ratio_of(m, b))
        .collect();
    let (max_ratio, at) = max_finite_or_inf(&ratio);
    let sharper = sharper_bound.map(|sb| {
        let r: Vec<f64> = measured
            .iter()
            .zip(&sb)
            .map(|(&m, &b)| ratio_of(m, b))
            .collect();
        let over: Vec<f64> = sb
            .iter()
            .zip(&bound)
            .map(|(&s, &b)| ratio_of(s, b))
            .collect();
        let max_ratio = max_finite_or_inf(&r).0;
        let max_over_exponential = max_finite_or_inf(&over).0;
        SharperReport {
            pass: max_ratio <= 1.0 + SHARPER_BOUND_TOL && max_over_exponential <= 1.0 + 1e-12,
            max_ratio,
            max_over_exponential,
            bound: sb,
        }
    });
    Ok(BoundReport {
        kind,
        squared: kind != PerturbationKind::Forcing,
        max_ratio_time: times.get(at).copied().unwrap_or(0.0),
        pass: max_ratio <= 1.0 + tolerance,
        times,
        measured,
        bound,
        ratio,
        max_ratio,
        tolerance,
        sharper,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub window: (f64, f64),
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
    pub target: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Least-squares slope of `log ‖W‖_P` against `log t` over `window`.
pub fn fit_short_time_rate(
    series: &DeviationSeries,
    window: (f64, f64),
    target_slope: f64,
    tolerance: f64,
) -> Result<RateFit> {
    let (t1, t2) = window;
    if !(t1 > 0.0 && t2 > t1) {
        return Err(Error::Analysis(format!(
            "rate window [{t1}, {t2}] must be strictly positive and increasing"
        )));
    }
    let limit = RATE_WINDOW_TRANSIT_FRACTION * series.transit_time();
    if t2 > limit + 1e-12 {
        return Err(Error::Analysis(format!(
            "rate window ends at {t2}, after {limit:.4} (0.3 of a transit time)"
        )));
    }
    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.w_norm)
        .filter(|(&t, _)| t >= t1 - 1e-12 && t <= t2 + 1e-12)
        .map(|(&t, &w)| (t, w))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Analysis(format!(
            "rate window [{t1}, {t2}] holds {} samples; need at least 3",
            pts.len()
        )));
    }
    if let Some((t, w)) = pts.iter().find(|(_, w)| *w < RATE_MIN_NORM) {
        return Err(Error::Analysis(format!(
            "deviation norm {w:.3e} at t = {t} is too small to fit"
        )));
    }
    let xs: Vec<f64> = pts.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, w)| w.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms_residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        window,
        slope,
        intercept,
        rms_residual,
        target: target_slope,
        tolerance,
        samples: pts.len(),
        pass: (slope - target_slope).abs() <= tolerance && rms_residual <= RATE_RMS_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LongTimeBehaviour {
    Decays,
    Saturates,
    Grows,
    /// Still falling at the horizon but not below the decay threshold.
    Inconclusive,
}

impl fmt::Display for LongTimeBehaviour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Decays => "decays",
            Self::Saturates => "saturates",
            Self::Grows => "grows",
            Self::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongTimeClass {
    pub behaviour: LongTimeBehaviour,
    pub horizon: f64,
    pub peak: f64,
    pub final_norm: f64,
    pub final_over_peak: f64,
    /// `(max − min) / final` over the last 20% of the horizon.
    pub relative_change: f64,
}

pub fn classify_longtime(series: &DeviationSeries, horizon: f64) -> Result<LongTimeClass> {
    let transit = series.transit_time();
    if horizon < 2.0 * transit - 1e-12 {
        return Err(Error::Analysis(format!(
            "horizon {horizon} is shorter than two transit times ({:.4})",
            2.0 * transit
        )));
    }
    let last_time = series.times.last().copied().unwrap_or(0.0);
    if horizon > last_time + 1e-12 {
        return Err(Error::Analysis(format!(
            "run ends at {last_time}, before the horizon {horizon}"
        )));
    }
    let end = series.index_at(horizon).unwrap_or(0);
    let peak = series.w_norm[..=end].iter().copied().fold(0.0, f64::max);
    let final_norm = series.w_norm[end];
    let tail: Vec<f64> = (0..=end)
        .filter(|&k| series.times[k] >= 0.8 * horizon - 1e-12)
        .map(|k| series.w_norm[k])
        .collect();
    let tail_start = tail.first().copied().unwrap_or(final_norm);
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let relative_change = if final_norm > 0.0 {
        (hi - lo) / final_norm
    } else {
        0.0
    };
    let final_over_peak = if peak > 0.0 { final_norm / peak } else { 0.0 };
    let behaviour = if final_norm <= DECAY_FRACTION * peak {
        LongTimeBehaviour::Decays
    } else if relative_change <= SATURATION_CHANGE {
        LongTimeBehaviour::Saturates
    } else if final_norm > tail_start {
        LongTimeBehaviour::Grows
    } else {
        LongTimeBehaviour::Inconclusive
    };
    Ok(LongTimeClass {
        behaviour,
        horizon,
        peak,
        final_norm,
        final_over_peak,
        relative_change,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CauchySchwarzCertificate {
    pub inner: f64,
    pub w_norm: f64,
    pub dual_norm: f64,
    pub holds: bool,
}

/// Checks `⟨W, δF⟩ ≤ ‖W‖_P ‖δF‖_{P⁻¹}` in the quadrature norm.
pub fn cauchy_schwarz_check(
    op: &crate::sbp::SbpOperator,
    w: &State,
    delta_f: &State,
    mass: &nalgebra::DMatrix<f64>,
) -> Result<CauchySchwarzCertificate> {
    let inv = mass
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidSystem("symmetrizer is singular".into()))?;
    if w.raw_dim() != delta_f.raw_dim() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            got: delta_f.len(),
        });
    }
    let inner = quad_dot(op, w.view(), delta_f.view());
    let w_norm = weighted_norm_sq(op, mass, w.view()).sqrt();
    let dual_norm = weighted_norm_sq(op, &inv, delta_f.view()).sqrt();
    Ok(CauchySchwarzCertificate {
        inner,
        w_norm,
        dual_norm,
        holds: inner <= w_norm * dual_norm + 1e-12,
    })
}

/// Per-sample CSV: `t, w_norm, w_norm_sq, outflow, eta, theta, bound_rhs, ratio`.
pub fn write_series_csv(series: &DeviationSeries, report: &BoundReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,w_norm,w_norm_sq,outflow,eta,theta,bound_rhs,ratio")?;
    for k in 0..series.len() {
        writeln!(
            f,
            "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            series.times[k],
            series.w_norm[k],
            series.w_norm_sq[k],
            series.outflow[k],
            series.eta[k],
            series.theta[k],
            report.bound[k],
            report.ratio[k],
        )?;
    }
    Ok(())
}
