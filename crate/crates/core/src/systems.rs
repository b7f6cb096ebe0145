//! Model systems `P u_t + (A(ū) u)_x + A(ū)ᵀ u_x = F` in one space dimension,
//! their boundary eigenstructure and the characteristic boundary condition
//! `√|Λ⁻| C⁻ = G`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues with magnitude below this are treated as zero speed.
pub const EIGEN_SIGN_TOL: f64 = 1e-12;

/// Admissible range for the eigenvalues of the symmetrizer.
pub const MASS_EIGEN_RANGE: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    /// Outward unit normal.
    pub fn normal(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone)]
pub enum FluxCoefficient {
    Constant(DMatrix<f64>),
    /// Scalar split-form Burgers coefficient `A(ū) = ū / 3`.
    BurgersSplit,
}

/// Where the flux coefficient is evaluated.
#[derive(Debug, Clone)]
pub enum Linearization {
    /// Frozen background field `ū(x)`, one column per grid point; `None`
    /// for systems whose coefficient does not depend on `ū`.
    Frozen(Option<Arc<Vec<Vec<f64>>>>),
    /// `ū = u`, the nonlinear case.
    SelfState,
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    label: String,
    n_comp: usize,
    mass: DMatrix<f64>,
    mass_inv: DMatrix<f64>,
    flux: FluxCoefficient,
    linearization: Linearization,
    constant_speed: Option<f64>,
}

fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalues".into()));
    }
    Ok(eig)
}

impl SystemSpec {
    /// A system with constant flux coefficient `flux` and symmetrizer `mass`.
    pub fn constant(label: &str, mass: DMatrix<f64>, flux: DMatrix<f64>) -> Result<Self> {
        let n = mass.nrows();
        if flux.shape() != (n, n) || mass.ncols() != n || n == 0 {
            return Err(Error::InvalidSystem(format!(
                "mass {:?} and flux {:?} must be square and of equal size",
                mass.shape(),
                flux.shape()
            )));
        }
        let mut sys = Self::with_mass(label, mass, FluxCoefficient::Constant(flux.clone()))?;
        // Frozen-coefficient wave speed: spectral radius of P^{-1/2} (A + Aᵀ) P^{-1/2}.
        let eig = symmetric_eigen(&sys.mass)?;
        let inv_sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        let sym = &inv_sqrt * (&flux + flux.transpose()) * &inv_sqrt;
        let speeds = symmetric_eigen(&sym)?.eigenvalues;
        sys.constant_speed = Some(speeds.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        Ok(sys)
    }

    fn with_mass(label: &str, mass: DMatrix<f64>, flux: FluxCoefficient) -> Result<Self> {
        let n = mass.nrows();
        let asym = (&mass - mass.transpose()).amax();
        if asym > 1e-13 {
            return Err(Error::InvalidSystem(format!(
                "symmetrizer is not symmetric (defect {asym:.2e})"
            )));
        }
        let eig = symmetric_eigen(&mass)?;
        let (lo, hi) = MASS_EIGEN_RANGE;
        if let Some(bad) = eig.eigenvalues.iter().find(|&&l| !(lo..=hi).contains(&l)) {
            return Err(Error::InvalidSystem(format!(
                "symmetrizer eigenvalue {bad} outside [{lo}, {hi}]"
            )));
        }
        let mass_inv = mass
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidSystem("symmetrizer is singular".into()))?;
        Ok(Self {
            label: label.to_string(),
            n_comp: n,
            mass,
            mass_inv,
            flux,
            linearization: Linearization::Frozen(None),
            constant_speed: None,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn mass_inv(&self) -> &DMatrix<f64> {
        &self.mass_inv
    }

    pub fn flux(&self) -> &FluxCoefficient {
        &self.flux
    }

    pub fn linearization(&self) -> &Linearization {
        &self.linearization
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self.linearization, Linearization::SelfState)
    }

    /// Freeze a state-dependent coefficient at a background field
    /// (`background[i]` is the state at grid point `i`).
    pub fn with_background(mut self, background: Vec<Vec<f64>>) -> Result<Self> {
        if background.iter().any(|b| b.len() != self.n_comp) {
            return Err(Error::InvalidSystem(
                "background state has the wrong number of components".into(),
            ));
        }
        self.linearization = Linearization::Frozen(Some(Arc::new(background)));
        Ok(self)
    }

    /// Writes `A(ū)` in row-major order into `out` (length `n_comp²`).
    pub fn flux_into(&self, ubar: &[f64], out: &mut [f64]) {
        match &self.flux {
            FluxCoefficient::Constant(a) => {
                let n = self.n_comp;
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = a[(i, j)];
                    }
                }
            }
            FluxCoefficient::BurgersSplit => out[0] = ubar[0] / 3.0,
        }
    }

    pub fn flux_matrix(&self, ubar: &[f64]) -> DMatrix<f64> {
        let n = self.n_comp;
        let mut buf = vec![0.0; n * n];
        self.flux_into(ubar, &mut buf);
        DMatrix::from_row_slice(n, n, &buf)
    }

    /// The state at which the coefficient is evaluated at grid point `i`.
    pub fn linearization_point<'a>(&'a self, i: usize, state: &'a [f64]) -> &'a [f64] {
        match &self.linearization {
            Linearization::SelfState => state,
            Linearization::Frozen(Some(bg)) => &bg[i],
            Linearization::Frozen(None) => state,
        }
    }

    /// Upper bound on the characteristic speed at the given linearization point.
    pub fn wave_speed(&self, ubar: &[f64]) -> f64 {
        match (&self.flux, self.constant_speed) {
            (FluxCoefficient::Constant(_), Some(s)) => s,
            (FluxCoefficient::BurgersSplit, _) => ubar[0].abs() / self.mass[(0, 0)],
            (FluxCoefficient::Constant(_), None) => unreachable!("speed set at construction"),
        }
    }

    /// Symmetric part of `n·A(ū)` on the given side.
    pub fn normal_flux_sym(&self, side: Side, ubar: &[f64]) -> DMatrix<f64> {
        let a = self.flux_matrix(ubar);
        (&a + a.transpose()) * (0.5 * side.normal())
    }
}

/// Scalar advection `u_t + a u_x = F`, written with `A = a/2`.
pub fn make_advection(a: f64) -> Result<SystemSpec> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::InvalidSystem(format!(
            "advection speed must be finite and nonzero, got {a}"
        )));
    }
    SystemSpec::constant(
        "advection",
        DMatrix::identity(1, 1),
        DMatrix::from_element(1, 1, a / 2.0),
    )
}

/// The symmetric wave system `u_t = c v_x`, `v_t = c u_x`.
pub fn make_wave_system(c: f64) -> Result<SystemSpec> {
    if c <= 0.0 || !c.is_finite() {
        return Err(Error::InvalidSystem(format!(
            "wave speed must be positive, got {c}"
        )));
    }
    let a = DMatrix::from_row_slice(2, 2, &[0.0, -c / 2.0, -c / 2.0, 0.0]);
    SystemSpec::constant("wave", DMatrix::identity(2, 2), a)
}

/// Inviscid Burgers `u_t + u u_x = F` in split form with `A(u) = u/3`.
pub fn make_burgers_split() -> SystemSpec {
    let mut sys = SystemSpec::with_mass(
        "burgers",
        DMatrix::identity(1, 1),
        FluxCoefficient::BurgersSplit,
    )
    .expect("identity symmetrizer is admissible");
    sys.linearization = Linearization::SelfState;
    sys
}

#[derive(Debug, Clone)]
pub struct BoundaryEigenstructure {
    pub side: Side,
    pub normal: f64,
    /// Orthonormal rotation; column `k` belongs to `eigenvalues[k]`.
    pub rotation: DMatrix<f64>,
    /// Sorted in descending order.
    pub eigenvalues: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub n_neg: usize,
}

pub fn boundary_eigenstructure(
    sys: &SystemSpec,
    side: Side,
    boundary_state: &[f64],
) -> Result<BoundaryEigenstructure> {
    if boundary_state.len() != sys.n_comp() {
        return Err(Error::LengthMismatch {
            expected: sys.n_comp(),
            got: boundary_state.len(),
        });
    }
    let m = sys.normal_flux_sym(side, boundary_state);
    let eig = symmetric_eigen(&m)?;
    let n = sys.n_comp();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut rotation = DMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        rotation.set_column(k, &eig.eigenvectors.column(src));
        eigenvalues.push(eig.eigenvalues[src]);
    }
    let positive: Vec<f64> = eigenvalues
        .iter()
        .map(|&l| if l > EIGEN_SIGN_TOL { l } else { 0.0 })
        .collect();
    let negative: Vec<f64> = eigenvalues
        .iter()
        .map(|&l| if l < -EIGEN_SIGN_TOL { l } else { 0.0 })
        .collect();
    let n_neg = negative.iter().filter(|&&l| l < 0.0).count();
    Ok(BoundaryEigenstructure {
        side,
        normal: side.normal(),
        rotation,
        eigenvalues,
        positive,
        negative,
        n_neg,
    })
}

impl BoundaryEigenstructure {
    pub fn n_comp(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Index of the first inflow characteristic; inflow occupies the trailing block.
    pub fn inflow_start(&self) -> usize {
        self.n_comp() - self.n_neg
    }

    /// `C = Tᵀ w` (the rotation is orthogonal).
    pub fn characteristic(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n_comp() {
            return Err(Error::LengthMismatch {
                expected: self.n_comp(),
                got: w.len(),
            });
        }
        let c = self.rotation.transpose() * DVector::from_column_slice(w);
        Ok(c.iter().copied().collect())
    }

    /// `√|Λ⁻| C⁻`, the quantity the boundary condition prescribes.
    pub fn incoming(&self, w: &[f64]) -> Result<Vec<f64>> {
        let c = self.characteristic(w)?;
        Ok((self.inflow_start()..self.n_comp())
            .map(|k| self.negative[k].abs().sqrt() * c[k])
            .collect())
    }
}

pub fn count_required_bcs(es: &BoundaryEigenstructure) -> usize {
    es.n_neg
}

/// Splits `wᵀ (n·A_sym) w` into `((C⁺)ᵀΛ⁺C⁺, (C⁻)ᵀΛ⁻C⁻)`.
pub fn boundary_term_split(es: &BoundaryEigenstructure, w: &[f64]) -> Result<(f64, f64)> {
    let c = es.characteristic(w)?;
    let outflow = es.positive.iter().zip(&c).map(|(l, c)| l * c * c).sum();
    let inflow = es.negative.iter().zip(&c).map(|(l, c)| l * c * c).sum();
    Ok((outflow, inflow))
}

pub type TimeFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;

/// Characteristic boundary condition `√|Λ⁻| C⁻ = G(t)`.
#[derive(Clone)]
pub struct BoundaryCondition {
    pub side: Side,
    data: Option<TimeFn>,
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryCondition")
            .field("side", &self.side)
            .field("homogeneous", &self.data.is_none())
            .finish()
    }
}

impl BoundaryCondition {
    pub fn homogeneous(side: Side) -> Self {
        Self { side, data: None }
    }

    pub fn new(side: Side, data: TimeFn) -> Self {
        Self {
            side,
            data: Some(data),
        }
    }

    pub fn constant(side: Side, values: Vec<f64>) -> Self {
        Self::new(side, Arc::new(move |_| values.clone()))
    }

    pub fn is_homogeneous(&self) -> bool {
        self.data.is_none()
    }

    /// `G(t)`, checked against the number of inflow characteristics.
    pub fn eval(&self, t: f64, n_neg: usize) -> Result<Vec<f64>> {
        match &self.data {
            None => Ok(vec![0.0; n_neg]),
            Some(g) => {
                let v = g(t);
                if v.len() != n_neg {
                    return Err(Error::BoundaryDimension {
                        side: self.side,
                        expected: n_neg,
                        got: v.len(),
                    });
                }
                Ok(v)
            }
        }
    }

    /// Adds `other` to this condition's data.
    pub fn plus(&self, other: TimeFn) -> Self {
        let base = self.data.clone();
        Self::new(
            self.side,
            Arc::new(move |t| {
                let mut extra = other(t);
                if let Some(b) = &base {
                    for (e, v) in extra.iter_mut().zip(b(t)) {
                        *e += v;
                    }
                }
                extra
            }),
        )
    }
}

/// External data: forcing, boundary data on both sides, initial state.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub forcing: Option<ForcingFn>,
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    pub initial: Option<InitialFn>,
}

#[derive(Clone)]
pub struct ForcingFn(pub SpaceTimeFn);

#[derive(Clone)]
pub struct InitialFn(pub SpaceFn);

impl fmt::Debug for ForcingFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ForcingFn")
    }
}

impl fmt::Debug for InitialFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("InitialFn")
    }
}

impl DataBundle {
    /// Zero forcing, homogeneous boundary data, zero initial state.
    pub fn zero() -> Self {
        Self {
            forcing: None,
            left: BoundaryCondition::homogeneous(Side::Left),
            right: BoundaryCondition::homogeneous(Side::Right),
            initial: None,
        }
    }

    pub fn boundary(&self, side: Side) -> &BoundaryCondition {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn boundary_mut(&mut self, side: Side) -> &mut BoundaryCondition {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }

    pub fn with_forcing(mut self, f: SpaceTimeFn) -> Self {
        self.forcing = Some(ForcingFn(f));
        self
    }

    pub fn with_initial(mut self, h: SpaceFn) -> Self {
        self.initial = Some(InitialFn(h));
        self
    }

    pub fn with_boundary(mut self, bc: BoundaryCondition) -> Self {
        let side = bc.side;
        *self.boundary_mut(side) = bc;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipativityCertificate {
    /// `wᵀ (n·A_sym) w`.
    pub boundary_term: f64,
    /// `−GᵀG`.
    pub lower_bound: f64,
    pub margin: f64,
    pub outflow: f64,
    pub inflow: f64,
    pub residual: f64,
    pub holds: bool,
}

/// Residual tolerance for accepting a boundary state as satisfying its condition.
pub const BC_RESIDUAL_TOL: f64 = 1e-10;

/// Certifies `wᵀ(n·A_sym)w ≥ −GᵀG` for a boundary state that satisfies the
/// characteristic condition at time `t`.
pub fn verify_dissipativity(
    es: &BoundaryEigenstructure,
    bc: &BoundaryCondition,
    w: &[f64],
    t: f64,
) -> Result<DissipativityCertificate> {
    let g = bc.eval(t, es.n_neg)?;
    let r = es.incoming(w)?;
    let residual = r
        .iter()
        .zip(&g)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    if residual > BC_RESIDUAL_TOL * scale {
        return Err(Error::BoundaryResidual {
            residual,
            tolerance: BC_RESIDUAL_TOL * scale,
        });
    }
    let (outflow, inflow) = boundary_term_split(es, w)?;
    let boundary_term = outflow + inflow;
    let lower_bound = -g.iter().map(|v| v * v).sum::<f64>();
    let margin = boundary_term - lower_bound;
    Ok(DissipativityCertificate {
        boundary_term,
        lower_bound,
        margin,
        outflow,
        inflow,
        residual,
        holds: margin >= -1e-12 * (1.0 + lower_bound.abs()),
    })
}

/// Builds a model system from its CLI label and speed parameter.
pub fn system_from_label(label: &str, speed: f64) -> Result<SystemSpec> {
    match label {
        "advection" => make_advection(speed),
        "wave" => make_wave_system(speed),
        "burgers" => Ok(make_burgers_split()),
        other => Err(Error::InvalidSystem(format!(
            "unknown system `{other}`; expected advection, wave or burgers"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn es(sys: &SystemSpec, side: Side, state: &[f64]) -> BoundaryEigenstructure {
        boundary_eigenstructure(sys, side, state).unwrap()
    }

    #[test]
    fn advection_coefficients() {
        let sys = make_advection(1.0).unwrap();
        assert_eq!(sys.flux_matrix(&[0.0])[(0, 0)], 0.5);
        let right = es(&sys, Side::Right, &[0.0]);
        assert_eq!(right.eigenvalues, vec![0.5]);
        assert_eq!(right.positive, vec![0.5]);
        assert_eq!(right.negative, vec![0.0]);
        assert_eq!(count_required_bcs(&right), 0);
        assert_abs_diff_eq!(right.rotation[(0, 0)].abs(), 1.0);
        let left = es(&sys, Side::Left, &[0.0]);
        assert_eq!(left.eigenvalues, vec![-0.5]);
        assert_eq!(count_required_bcs(&left), 1);
        assert!(make_advection(0.0).is_err());
    }

    #[test]
    fn wave_eigenstructure() {
        let sys = make_wave_system(1.0).unwrap();
        for side in Side::BOTH {
            let e = es(&sys, side, &[0.0, 0.0]);
            assert_abs_diff_eq!(e.eigenvalues[0], 0.5, epsilon = 1e-14);
            assert_abs_diff_eq!(e.eigenvalues[1], -0.5, epsilon = 1e-14);
            assert_eq!(count_required_bcs(&e), 1);
        }
        // Right side: characteristic variables (u ∓ v)/√2 up to sign.
        let e = es(&sys, Side::Right, &[0.0, 0.0]);
        let c = e.characteristic(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(c[0].abs(), 1.0 / 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(c[1].abs(), 1.0 / 2f64.sqrt(), epsilon = 1e-14);
        let c = e.characteristic(&[1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(c[0].abs(), 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(c[1], 0.0, epsilon = 1e-14);
        assert!(make_wave_system(0.0).is_err());
        assert!(make_wave_system(-1.0).is_err());
    }

    #[test]
    fn burgers_coefficients() {
        let sys = make_burgers_split();
        assert!(!sys.is_linear());
        assert_eq!(sys.flux_matrix(&[3.0])[(0, 0)], 1.0);
        let left = es(&sys, Side::Left, &[1.0]);
        assert_abs_diff_eq!(left.eigenvalues[0], -1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(left.n_neg, 1);
        let right = es(&sys, Side::Right, &[1.0]);
        assert_eq!(right.n_neg, 0);
    }

    #[test]
    fn zero_flux_needs_no_conditions() {
        let sys =
            SystemSpec::constant("zero", DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let e = es(&sys, Side::Left, &[0.0, 0.0]);
        assert_eq!(e.eigenvalues, vec![0.0, 0.0]);
        assert_eq!(count_required_bcs(&e), 0);
    }

    #[test]
    fn rejects_bad_symmetrizer() {
        let a = DMatrix::zeros(2, 2);
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(SystemSpec::constant("x", skew, a.clone()).is_err());
        let tiny = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.01]));
        assert!(SystemSpec::constant("x", tiny, a).is_err());
    }

    #[test]
    fn non_finite_state_rejected() {
        let sys = make_burgers_split();
        assert!(matches!(
            boundary_eigenstructure(&sys, Side::Left, &[f64::NAN]),
            Err(Error::Eigen(_))
        ));
    }

    #[test]
    fn split_examples() {
        let sys = make_advection(1.0).unwrap();
        let right = es(&sys, Side::Right, &[0.0]);
        assert_eq!(boundary_term_split(&right, &[0.0]).unwrap(), (0.0, 0.0));
        assert_eq!(boundary_term_split(&right, &[2.0]).unwrap(), (2.0, 0.0));

        let wave = make_wave_system(1.0).unwrap();
        let e = es(&wave, Side::Right, &[0.0, 0.0]);
        let v: Vec<f64> = e.rotation.column(1).iter().copied().collect();
        let (out, inn) = boundary_term_split(&e, &v).unwrap();
        assert_abs_diff_eq!(out, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(inn, -0.5, epsilon = 1e-15);
        assert!(boundary_term_split(&e, &[1.0]).is_err());
    }

    #[test]
    fn dissipativity_examples() {
        let eps = 0.01;
        let sys = make_advection(1.0).unwrap();
        let left = es(&sys, Side::Left, &[0.0]);
        let bc = BoundaryCondition::constant(Side::Left, vec![eps]);
        let cert = verify_dissipativity(&left, &bc, &[eps * 2f64.sqrt()], 0.0).unwrap();
        assert_abs_diff_eq!(cert.boundary_term, -eps * eps, epsilon = 1e-15);
        assert_abs_diff_eq!(cert.lower_bound, -eps * eps, epsilon = 1e-18);
        assert_abs_diff_eq!(cert.margin, 0.0, epsilon = 1e-15);
        assert!(cert.holds);

        let hom = BoundaryCondition::homogeneous(Side::Left);
        let cert = verify_dissipativity(&left, &hom, &[0.0], 1.0).unwrap();
        assert_eq!(cert.margin, cert.outflow);
        assert!(verify_dissipativity(&left, &hom, &[0.1], 1.0).is_err());

        let wave = make_wave_system(1.0).unwrap();
        let e = es(&wave, Side::Right, &[0.0, 0.0]);
        let cminus = 0.3 / 0.5f64.sqrt();
        let cplus = 0.7;
        let w = &e.rotation * DVector::from_vec(vec![cplus, cminus]);
        let bc = BoundaryCondition::constant(Side::Right, vec![0.3]);
        let cert = verify_dissipativity(&e, &bc, w.as_slice(), 0.0).unwrap();
        assert_abs_diff_eq!(cert.inflow, -0.09, epsilon = 1e-14);
        assert_abs_diff_eq!(cert.margin, cert.outflow, epsilon = 1e-14);
        assert!(cert.holds);
    }

    #[test]
    fn boundary_data_dimension_checked() {
        let bc = BoundaryCondition::constant(Side::Right, vec![1.0, 2.0]);
        assert!(matches!(
            bc.eval(0.0, 1),
            Err(Error::BoundaryDimension {
                side: Side::Right,
                ..
            })
        ));
        assert_eq!(
            BoundaryCondition::homogeneous(Side::Left)
                .eval(0.0, 2)
                .unwrap(),
            vec![0.0; 2]
        );
    }

    fn random_system() -> impl Strategy<Value = (SystemSpec, Vec<f64>)> {
        prop_oneof![
            (-3.0f64..3.0)
                .prop_filter("nonzero", |a| a.abs() > 1e-3)
                .prop_map(|a| (make_advection(a).unwrap(), vec![0.0])),
            (0.1f64..3.0).prop_map(|c| (make_wave_system(c).unwrap(), vec![0.0, 0.0])),
            (0.05f64..5.0).prop_map(|u| (make_burgers_split(), vec![u])),
        ]
    }

    proptest! {
        #[test]
        fn reconstruction_and_split(
            (sys, state) in random_system(),
            right in any::<bool>(),
            w in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let side = if right { Side::Right } else { Side::Left };
            let e = boundary_eigenstructure(&sys, side, &state).unwrap();
            let m = sys.normal_flux_sym(side, &state);
            let lam = DMatrix::from_diagonal(&DVector::from_vec(e.eigenvalues.clone()));
            let rec = &e.rotation * lam * e.rotation.transpose();
            prop_assert!((rec - &m).amax() <= 1e-12);
            let tt = e.rotation.transpose() * &e.rotation;
            prop_assert!((tt - DMatrix::identity(sys.n_comp(), sys.n_comp())).amax() <= 1e-12);
            for (l, (p, n)) in e.eigenvalues.iter().zip(e.positive.iter().zip(&e.negative)) {
                prop_assert!(*p >= 0.0 && *n <= 0.0);
                prop_assert!((p + n - l).abs() <= EIGEN_SIGN_TOL);
            }
            let w = &w[..sys.n_comp()];
            let (out, inn) = boundary_term_split(&e, w).unwrap();
            let wv = DVector::from_column_slice(w);
            let full = wv.dot(&(&m * &wv));
            prop_assert!((out + inn - full).abs() <= 1e-12);

            // Remark: the inflow count is one for every model system at the
            // inflow side, and outflow-only sides need none.
            let expected = match (sys.label(), side) {
                ("wave", _) => 1,
                (_, s) => usize::from(sys.normal_flux_sym(s, &state)[(0, 0)] < 0.0),
            };
            prop_assert_eq!(count_required_bcs(&e), expected);

            // Under the boundary condition the inflow part equals −GᵀG.
            let g = e.incoming(w).unwrap();
            let gg: f64 = g.iter().map(|v| v * v).sum();
            prop_assert!((inn + gg).abs() <= 1e-12);
        }
    }
}
