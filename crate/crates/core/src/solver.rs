//! SBP-SAT semi-discretization of the split-form system, classic RK4 time
//! stepping and the discrete energy-rate identity.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sbp::{Grid1D, SbpOperator};
use crate::systems::{
    boundary_eigenstructure, boundary_term_split, BoundaryEigenstructure, DataBundle,
    FluxCoefficient, Side, SystemSpec,
};

pub const DEFAULT_CFL: f64 = 0.5;
pub const BLOW_UP_NORM: f64 = 1e12;

/// State array with shape `(n_comp, n_points)`.
pub type State = Array2<f64>;

#[derive(Debug, Clone)]
pub struct SemiDiscreteProblem {
    pub system: SystemSpec,
    pub op: Arc<SbpOperator>,
    pub data: DataBundle,
    /// SAT strength; 1.0 gives `d/dt‖u‖² = −2·outflow + 2|G|² − 2|√|Λ⁻|C⁻ − G|²`.
    pub penalty_scale: f64,
    inflow_counts: [usize; 2],
    fixed_eigs: Option<[BoundaryEigenstructure; 2]>,
    x: Vec<f64>,
}

impl SemiDiscreteProblem {
    pub fn new(system: SystemSpec, op: Arc<SbpOperator>, data: DataBundle) -> Result<Self> {
        let x = op.grid().coordinates();
        let mut prob = Self {
            system,
            op,
            data,
            penalty_scale: 1.0,
            inflow_counts: [0, 0],
            fixed_eigs: None,
            x,
        };
        let u0 = prob.initial_state();
        if matches!(prob.system.flux(), FluxCoefficient::Constant(_)) {
            let l = boundary_eigenstructure(&prob.system, Side::Left, &vec![0.0; prob.n_comp()])?;
            let r = boundary_eigenstructure(&prob.system, Side::Right, &vec![0.0; prob.n_comp()])?;
            prob.fixed_eigs = Some([l, r]);
        }
        for side in Side::BOTH {
            let es = prob.eigenstructure(side, &u0)?;
            prob.inflow_counts[side_index(side)] = es.n_neg;
            prob.data.boundary(side).eval(0.0, es.n_neg)?;
        }
        Ok(prob)
    }

    pub fn with_penalty_scale(mut self, scale: f64) -> Self {
        self.penalty_scale = scale;
        self
    }

    pub fn grid(&self) -> &Grid1D {
        self.op.grid()
    }

    pub fn n_comp(&self) -> usize {
        self.system.n_comp()
    }

    pub fn n_points(&self) -> usize {
        self.op.n_points()
    }

    pub fn coordinates(&self) -> &[f64] {
        &self.x
    }

    /// Number of boundary conditions imposed on each side.
    pub fn inflow_count(&self, side: Side) -> usize {
        self.inflow_counts[side_index(side)]
    }

    pub fn initial_state(&self) -> State {
        let mut u = State::zeros((self.n_comp(), self.n_points()));
        if let Some(h) = &self.data.initial {
            let mut buf = vec![0.0; self.n_comp()];
            for (i, &x) in self.x.iter().enumerate() {
                buf.iter_mut().for_each(|v| *v = 0.0);
                (h.0)(x, &mut buf);
                u.column_mut(i).assign(&ndarray::ArrayView1::from(&buf));
            }
        }
        u
    }

    /// Forcing `F(x_i, t)` sampled on the grid.
    pub fn forcing_field(&self, t: f64) -> Option<State> {
        let f = self.data.forcing.as_ref()?;
        let mut out = State::zeros((self.n_comp(), self.n_points()));
        let mut buf = vec![0.0; self.n_comp()];
        for (i, &x) in self.x.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            (f.0)(x, t, &mut buf);
            out.column_mut(i).assign(&ndarray::ArrayView1::from(&buf));
        }
        Some(out)
    }

    fn boundary_index(&self, side: Side) -> usize {
        match side {
            Side::Left => self.op.left_index(),
            Side::Right => self.op.right_index(),
        }
    }

    pub fn boundary_value(&self, state: &State, side: Side) -> Vec<f64> {
        state.column(self.boundary_index(side)).to_vec()
    }

    /// Boundary eigenstructure at the coefficient's evaluation point.
    pub fn eigenstructure(&self, side: Side, state: &State) -> Result<BoundaryEigenstructure> {
        if let Some(fixed) = &self.fixed_eigs {
            return Ok(fixed[side_index(side)].clone());
        }
        let i = self.boundary_index(side);
        let ub = self.boundary_value(state, side);
        let point = self.system.linearization_point(i, &ub).to_vec();
        boundary_eigenstructure(&self.system, side, &point)
    }

    /// `‖u‖²` in the quadrature norm weighted by the symmetrizer.
    pub fn energy(&self, state: &State) -> f64 {
        weighted_norm_sq(&self.op, self.system.mass(), state.view())
    }

    pub fn norm(&self, state: &State) -> f64 {
        self.energy(state).sqrt()
    }

    /// Largest characteristic speed over the grid for the given state.
    pub fn max_wave_speed(&self, state: &State) -> f64 {
        let mut col = vec![0.0; self.n_comp()];
        (0..self.n_points())
            .map(|i| {
                col.iter_mut()
                    .zip(state.column(i))
                    .for_each(|(c, v)| *c = *v);
                self.system
                    .wave_speed(self.system.linearization_point(i, &col))
            })
            .fold(0.0, f64::max)
    }

    /// Semi-discrete time derivative.
    pub fn assemble_rhs(&self, state: &State, t: f64) -> Result<State> {
        let mut out = State::zeros(state.raw_dim());
        self.rhs_into(state, t, &mut out)?;
        Ok(out)
    }

    fn rhs_into(&self, state: &State, t: f64, out: &mut State) -> Result<()> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        let nc = self.n_comp();
        let n = self.n_points();

        // A_i u_i at every node, then both derivatives per component.
        let mut a = vec![0.0; nc * nc * n];
        let mut au = State::zeros((nc, n));
        let mut col = vec![0.0; nc];
        for i in 0..n {
            col.iter_mut()
                .zip(state.column(i))
                .for_each(|(c, v)| *c = *v);
            let ai = &mut a[i * nc * nc..(i + 1) * nc * nc];
            self.system
                .flux_into(self.system.linearization_point(i, &col), ai);
            for r in 0..nc {
                au[(r, i)] = (0..nc).map(|c| ai[r * nc + c] * col[c]).sum();
            }
        }
        let mut d_au = State::zeros((nc, n));
        let mut d_u = State::zeros((nc, n));
        for r in 0..nc {
            let (src, dst) = (au.row(r), d_au.row_mut(r));
            self.op
                .diff_into(src.as_slice().unwrap(), dst.into_slice().unwrap());
            let (src, dst) = (state.row(r), d_u.row_mut(r));
            self.op
                .diff_into(src.to_vec().as_slice(), dst.into_slice().unwrap());
        }

        out.fill(0.0);
        for i in 0..n {
            let ai = &a[i * nc * nc..(i + 1) * nc * nc];
            for r in 0..nc {
                // Aᵀ: (Aᵀ d)_r = Σ_c A[c][r] d_c
                let at_du: f64 = (0..nc).map(|c| ai[c * nc + r] * d_u[(c, i)]).sum();
                out[(r, i)] = -d_au[(r, i)] - at_du;
            }
        }
        if let Some(f) = self.forcing_field(t) {
            *out += &f;
        }

        for side in Side::BOTH {
            let sat = self.sat_vector(state, t, side)?;
            let b = self.boundary_index(side);
            let w = self.op.quad_weights()[b];
            for r in 0..nc {
                out[(r, b)] += sat[r] / w;
            }
        }

        if !is_identity(self.system.mass()) {
            let pinv = self.system.mass_inv();
            let mut tmp = vec![0.0; nc];
            for i in 0..n {
                for (r, t) in tmp.iter_mut().enumerate() {
                    *t = (0..nc).map(|c| pinv[(r, c)] * out[(c, i)]).sum();
                }
                for (r, t) in tmp.iter().enumerate() {
                    out[(r, i)] = *t;
                }
            }
        }
        Ok(())
    }

    /// Inflow characteristic data and penalty inputs at one boundary:
    /// returns `(r, G)` with `r = √|Λ⁻| C⁻`.
    fn boundary_residual(
        &self,
        state: &State,
        t: f64,
        side: Side,
    ) -> Result<(BoundaryEigenstructure, Vec<f64>, Vec<f64>)> {
        let es = self.eigenstructure(side, state)?;
        let expected = self.inflow_count(side);
        if es.n_neg != expected {
            return Err(Error::Admissibility {
                side,
                t,
                expected,
                got: es.n_neg,
            });
        }
        let g = self.data.boundary(side).eval(t, es.n_neg)?;
        let r = es.incoming(&self.boundary_value(state, side))?;
        Ok((es, r, g))
    }

    /// Penalty term (before division by the boundary quadrature weight):
    /// `−2·penalty_scale · T⁻ √|Λ⁻| (r − G)`.
    fn sat_vector(&self, state: &State, t: f64, side: Side) -> Result<Vec<f64>> {
        let (es, r, g) = self.boundary_residual(state, t, side)?;
        let nc = self.n_comp();
        let mut sat = vec![0.0; nc];
        let start = es.inflow_start();
        for (k, (rk, gk)) in r.iter().zip(&g).enumerate() {
            let col = start + k;
            let coef = -2.0 * self.penalty_scale * es.negative[col].abs().sqrt() * (rk - gk);
            for (row, s) in sat.iter_mut().enumerate() {
                *s += es.rotation[(row, col)] * coef;
            }
        }
        Ok(sat)
    }
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

fn is_identity(m: &DMatrix<f64>) -> bool {
    m.iter().enumerate().all(|(k, &v)| {
        let (i, j) = (k % m.nrows(), k / m.nrows());
        v == if i == j { 1.0 } else { 0.0 }
    })
}

/// `Σ_i w_i u_iᵀ M u_i` for a `(n_comp, n_points)` field.
pub fn weighted_norm_sq(op: &SbpOperator, m: &DMatrix<f64>, u: ArrayView2<f64>) -> f64 {
    let nc = u.nrows();
    op.quad_weights()
        .iter()
        .zip(u.axis_iter(Axis(1)))
        .map(|(w, col)| {
            let mut q = 0.0;
            for r in 0..nc {
                for c in 0..nc {
                    q += col[r] * m[(r, c)] * col[c];
                }
            }
            w * q
        })
        .sum()
}

/// `Σ_i w_i u_iᵀ v_i`.
pub fn quad_dot(op: &SbpOperator, u: ArrayView2<f64>, v: ArrayView2<f64>) -> f64 {
    op.quad_weights()
        .iter()
        .zip(u.axis_iter(Axis(1)).zip(v.axis_iter(Axis(1))))
        .map(|(w, (a, b))| w * a.dot(&b))
        .sum()
}

/// Terms of the discrete energy balance `d/dt ‖u‖²_P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRate {
    /// `2⟨u, P·u_t⟩` from the assembled right-hand side.
    pub lhs: f64,
    /// `−2(outflow + inflow) + 2·penalty + 2⟨u, F⟩`.
    pub rhs: f64,
    pub residual: f64,
    /// `residual` over the summed magnitude of all terms.
    pub relative_residual: f64,
    pub outflow: f64,
    pub inflow: f64,
    pub penalty: f64,
    pub forcing: f64,
}

/// Evaluates both sides of the discrete energy identity independently.
pub fn energy_rate_identity(
    prob: &SemiDiscreteProblem,
    state: &State,
    t: f64,
) -> Result<EnergyRate> {
    let rhs_field = prob.assemble_rhs(state, t)?;
    let p = prob.system.mass();
    let nc = prob.n_comp();
    let mut p_rhs = State::zeros(rhs_field.raw_dim());
    for i in 0..prob.n_points() {
        for r in 0..nc {
            p_rhs[(r, i)] = (0..nc).map(|c| p[(r, c)] * rhs_field[(c, i)]).sum();
        }
    }
    let lhs = 2.0 * quad_dot(&prob.op, state.view(), p_rhs.view());

    let mut outflow = 0.0;
    let mut inflow = 0.0;
    let mut penalty = 0.0;
    for side in Side::BOTH {
        let (es, r, g) = prob.boundary_residual(state, t, side)?;
        let (o, i) = boundary_term_split(&es, &prob.boundary_value(state, side))?;
        outflow += o;
        inflow += i;
        penalty += -2.0
            * prob.penalty_scale
            * r.iter().zip(&g).map(|(rk, gk)| rk * (rk - gk)).sum::<f64>();
    }
    let forcing = prob
        .forcing_field(t)
        .map(|f| quad_dot(&prob.op, state.view(), f.view()))
        .unwrap_or(0.0);
    let rhs = -2.0 * (outflow + inflow) + 2.0 * penalty + 2.0 * forcing;
    let residual = (lhs - rhs).abs();
    let scale = lhs.abs() + 2.0 * (outflow.abs() + inflow.abs() + penalty.abs() + forcing.abs());
    Ok(EnergyRate {
        lhs,
        rhs,
        residual,
        relative_residual: if scale > 0.0 {
            residual / scale
        } else {
            residual
        },
        outflow,
        inflow,
        penalty,
        forcing,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub t_end: f64,
    pub cfl: f64,
    /// Keep every `stride`-th step (the final state is always kept).
    pub stride: usize,
    /// Overrides the CFL-derived step.
    pub dt: Option<f64>,
}

impl SolveOptions {
    pub fn new(t_end: f64, cfl: f64) -> Self {
        Self {
            t_end,
            cfl,
            stride: 1,
            dt: None,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub step_size: f64,
    pub system: String,
    pub grid: Grid1D,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &State {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let nc = self.states.first().map_or(0, |s| s.nrows());
        let mut header = vec!["t".to_string(), "x_index".to_string()];
        header.extend((0..nc).map(|c| format!("u{c}")));
        w.write_record(&header)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            for (i, col) in s.axis_iter(Axis(1)).enumerate() {
                let mut rec = vec![format!("{t:.12e}"), i.to_string()];
                rec.extend(col.iter().map(|v| format!("{v:.12e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Two-column summary `t, ‖u‖_P`.
    pub fn write_norm_csv(&self, prob: &SemiDiscreteProblem, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,norm_p")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(f, "{:.12e},{:.12e}", t, prob.norm(s))?;
        }
        Ok(())
    }
}

/// Step size `cfl·h / max speed` for the problem's initial state.
pub fn cfl_step(prob: &SemiDiscreteProblem, cfl: f64) -> Result<f64> {
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::InvalidTime(format!(
            "cfl must lie in (0, 1], got {cfl}"
        )));
    }
    let speed = prob.max_wave_speed(&prob.initial_state());
    let speed = if speed > 0.0 { speed } else { 1.0 };
    Ok(cfl * prob.grid().spacing() / speed)
}

pub fn rk4_solve(prob: &SemiDiscreteProblem, t_end: f64, cfl: f64) -> Result<Trajectory> {
    rk4_solve_with(prob, &SolveOptions::new(t_end, cfl))
}

pub fn rk4_solve_with(prob: &SemiDiscreteProblem, opts: &SolveOptions) -> Result<Trajectory> {
    if !(opts.t_end > 0.0 && opts.t_end.is_finite()) {
        return Err(Error::InvalidTime(format!(
            "t_end must be positive, got {}",
            opts.t_end
        )));
    }
    let dt = match opts.dt {
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => {
            return Err(Error::InvalidTime(format!(
                "step must be positive, got {dt}"
            )))
        }
        None => cfl_step(prob, opts.cfl)?,
    };
    let mut u = prob.initial_state();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![u.clone()];

    let shape = u.raw_dim();
    let mut k1 = State::zeros(shape);
    let mut k2 = State::zeros(shape);
    let mut k3 = State::zeros(shape);
    let mut k4 = State::zeros(shape);

    let n_full = (opts.t_end / dt * (1.0 + 1e-12)).floor() as usize;
    let remainder = opts.t_end - n_full as f64 * dt;
    let n_steps = if remainder > 1e-9 * dt {
        n_full + 1
    } else {
        n_full
    };
    for step in 0..n_steps {
        let h = if step + 1 == n_steps {
            opts.t_end - t
        } else {
            dt
        };
        prob.rhs_into(&u, t, &mut k1)?;
        let y = &u + &(&k1 * (h / 2.0));
        prob.rhs_into(&y, t + h / 2.0, &mut k2)?;
        let y = &u + &(&k2 * (h / 2.0));
        prob.rhs_into(&y, t + h / 2.0, &mut k3)?;
        let y = &u + &(&k3 * h);
        prob.rhs_into(&y, t + h, &mut k4)?;
        u.scaled_add(h / 6.0, &k1);
        u.scaled_add(h / 3.0, &k2);
        u.scaled_add(h / 3.0, &k3);
        u.scaled_add(h / 6.0, &k4);
        t = if step + 1 == n_steps {
            opts.t_end
        } else {
            (step + 1) as f64 * dt
        };

        let norm = prob.norm(&u);
        if !norm.is_finite() || norm > BLOW_UP_NORM {
            return Err(Error::BlowUp { t, norm });
        }
        if (step + 1) % opts.stride == 0 || step + 1 == n_steps {
            times.push(t);
            states.push(u.clone());
        }
    }
    Ok(Trajectory {
        times,
        states,
        step_size: dt,
        system: prob.system.label().to_string(),
        grid: *prob.grid(),
    })
}
