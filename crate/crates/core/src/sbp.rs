//! Diagonal-norm summation-by-parts first-derivative operators.
//!
//! An operator is stored through its undivided matrix `Q` and the diagonal
//! quadrature weights `H` (which carry the grid spacing), so that
//! `D = H⁻¹ Q` and `Q + Qᵀ = B = e_R e_Rᵀ − e_L e_Lᵀ`.

#![allow(clippy::excessive_precision)]
#![allow(clippy::unreadable_literal)]

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    x_left: f64,
    x_right: f64,
    n_points: usize,
}

impl Grid1D {
    pub fn new(x_left: f64, x_right: f64, n_points: usize) -> Result<Self> {
        if !(x_left.is_finite() && x_right.is_finite()) || x_right <= x_left {
            return Err(Error::InvalidGrid(format!(
                "need x_right > x_left, got [{x_left}, {x_right}]"
            )));
        }
        if n_points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least two points, got {n_points}"
            )));
        }
        Ok(Self {
            x_left,
            x_right,
            n_points,
        })
    }

    /// The unit interval with `n_points` nodes.
    pub fn unit(n_points: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n_points)
    }

    pub fn x_left(&self) -> f64 {
        self.x_left
    }

    pub fn x_right(&self) -> f64 {
        self.x_right
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn length(&self) -> f64 {
        self.x_right - self.x_left
    }

    pub fn spacing(&self) -> f64 {
        self.length() / (self.n_points - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.x_right
        } else {
            self.x_left + i as f64 * self.spacing()
        }
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.coord(i)).collect()
    }
}

/// Boundary closure of a diagonal-norm operator: the leading norm weights,
/// the leading rows of the derivative (in units of 1/h) and the half-width
/// central interior stencil `c_1..c_s` with `(Du)_i = Σ c_k (u_{i+k} − u_{i−k}) / h`.
struct Closure {
    min_points: usize,
    norm: &'static [f64],
    block: &'static [&'static [f64]],
    interior: &'static [f64],
}

const SBP2: Closure = Closure {
    min_points: 4,
    norm: &[1.0 / 2.0],
    block: &[&[-1.0, 1.0]],
    interior: &[1.0 / 2.0],
};

const SBP4: Closure = Closure {
    min_points: 12,
    norm: &[17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0],
    block: &[
        &[
            -24.0 / 17.0,
            59.0 / 34.0,
            -4.0 / 17.0,
            -3.0 / 34.0,
            0.0,
            0.0,
        ],
        &[-1.0 / 2.0, 0.0, 1.0 / 2.0, 0.0, 0.0, 0.0],
        &[4.0 / 43.0, -59.0 / 86.0, 0.0, 59.0 / 86.0, -4.0 / 43.0, 0.0],
        &[3.0 / 98.0, 0.0, -59.0 / 98.0, 0.0, 32.0 / 49.0, -4.0 / 49.0],
    ],
    interior: &[2.0 / 3.0, -1.0 / 12.0],
};

// Free closure parameter fixed at q45 = 342523/518400.
const SBP6: Closure = Closure {
    min_points: 16,
    norm: &[
        13649.0 / 43200.0,
        12013.0 / 8640.0,
        2711.0 / 4320.0,
        5359.0 / 4320.0,
        7877.0 / 8640.0,
        43801.0 / 43200.0,
    ],
    block: &[
        &[
            -21600.0 / 13649.0,
            104009.0 / 54596.0,
            30443.0 / 81894.0,
            -33311.0 / 27298.0,
            16863.0 / 27298.0,
            -15025.0 / 163788.0,
            0.0,
            0.0,
            0.0,
        ],
        &[
            -104009.0 / 240260.0,
            0.0,
            -311.0 / 72078.0,
            20229.0 / 24026.0,
            -24337.0 / 48052.0,
            36661.0 / 360390.0,
            0.0,
            0.0,
            0.0,
        ],
        &[
            -30443.0 / 162660.0,
            311.0 / 32532.0,
            0.0,
            -11155.0 / 16266.0,
            41287.0 / 32532.0,
            -21999.0 / 54220.0,
            0.0,
            0.0,
            0.0,
        ],
        &[
            33311.0 / 107180.0,
            -20229.0 / 21436.0,
            485.0 / 1398.0,
            0.0,
            4147.0 / 21436.0,
            25427.0 / 321540.0,
            72.0 / 5359.0,
            0.0,
            0.0,
        ],
        &[
            -16863.0 / 78770.0,
            24337.0 / 31508.0,
            -41287.0 / 47262.0,
            -4147.0 / 15754.0,
            0.0,
            342523.0 / 472620.0,
            -1296.0 / 7877.0,
            144.0 / 7877.0,
            0.0,
        ],
        &[
            15025.0 / 525612.0,
            -36661.0 / 262806.0,
            21999.0 / 87602.0,
            -25427.0 / 262806.0,
            -342523.0 / 525612.0,
            0.0,
            32400.0 / 43801.0,
            -6480.0 / 43801.0,
            720.0 / 43801.0,
        ],
    ],
    interior: &[3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0],
};

pub const SUPPORTED_ORDERS: [usize; 3] = [2, 4, 6];

fn closure(order: usize) -> Result<&'static Closure> {
    match order {
        2 => Ok(&SBP2),
        4 => Ok(&SBP4),
        6 => Ok(&SBP6),
        _ => Err(Error::UnsupportedOrder { order }),
    }
}

/// Minimum number of grid points for an operator of the given interior order.
pub fn min_points(order: usize) -> Result<usize> {
    closure(order).map(|c| c.min_points)
}

#[derive(Debug, Clone)]
struct BandRow {
    start: usize,
    coeffs: Vec<f64>,
}

impl BandRow {
    fn get(&self, j: usize) -> f64 {
        if j < self.start {
            0.0
        } else {
            self.coeffs.get(j - self.start).copied().unwrap_or(0.0)
        }
    }

    fn dot(&self, u: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(&u[self.start..self.start + self.coeffs.len()])
            .map(|(c, v)| c * v)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct SbpOperator {
    order: usize,
    grid: Grid1D,
    weights: Vec<f64>,
    q_rows: Vec<BandRow>,
}

/// Builds the diagonal-norm SBP operator of interior order 2, 4 or 6.
pub fn build_sbp_operator(order: usize, grid: &Grid1D) -> Result<SbpOperator> {
    let cl = closure(order)?;
    let n = grid.n_points();
    if n < cl.min_points {
        return Err(Error::GridTooSmall {
            order,
            n_points: n,
            required: cl.min_points,
        });
    }
    let h = grid.spacing();
    let nb = cl.block.len();

    let mut weights = vec![h; n];
    for (i, &w) in cl.norm.iter().enumerate() {
        weights[i] = w * h;
        weights[n - 1 - i] = w * h;
    }

    let left: Vec<BandRow> = cl
        .block
        .iter()
        .zip(cl.norm)
        .map(|(row, &w)| BandRow {
            start: 0,
            coeffs: row.iter().map(|c| c * w).collect(),
        })
        .collect();

    let s = cl.interior.len();
    let mut stencil = vec![0.0; 2 * s + 1];
    for (k, &c) in cl.interior.iter().enumerate() {
        stencil[s + k + 1] = c;
        stencil[s - k - 1] = -c;
    }

    let mut q_rows = Vec::with_capacity(n);
    q_rows.extend(left.iter().cloned());
    for i in nb..n - nb {
        q_rows.push(BandRow {
            start: i - s,
            coeffs: stencil.clone(),
        });
    }
    for i in (0..nb).rev() {
        let row = &left[i];
        q_rows.push(BandRow {
            start: n - row.coeffs.len(),
            coeffs: row.coeffs.iter().rev().map(|c| -c).collect(),
        });
    }

    Ok(SbpOperator {
        order,
        grid: *grid,
        weights,
        q_rows,
    })
}

impl SbpOperator {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Accuracy of the boundary closure, half the interior order.
    pub fn boundary_order(&self) -> usize {
        self.order / 2
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn left_index(&self) -> usize {
        0
    }

    pub fn right_index(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn left_selector(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.n_points()];
        e[0] = 1.0;
        e
    }

    pub fn right_selector(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.n_points()];
        e[self.right_index()] = 1.0;
        e
    }

    /// Entry `Q[i][j]` of the undivided difference matrix.
    pub fn q_entry(&self, i: usize, j: usize) -> f64 {
        self.q_rows[i].get(j)
    }

    /// Column range of the nonzero band in row `i` of `Q`.
    pub fn q_row_support(&self, i: usize) -> std::ops::Range<usize> {
        let r = &self.q_rows[i];
        r.start..r.start + r.coeffs.len()
    }

    /// Writes `D u` into `out`.
    pub fn diff_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.n_points());
        assert_eq!(out.len(), self.n_points());
        for ((row, w), o) in self.q_rows.iter().zip(&self.weights).zip(out.iter_mut()) {
            *o = row.dot(u) / w;
        }
    }

    pub fn diff(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.diff_into(u, &mut out);
        out
    }

    /// `max |Q + Qᵀ − B|` over all entries.
    pub fn skew_defect(&self) -> f64 {
        let n = self.n_points();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in self.q_row_support(i) {
                let b = if i == j && i == 0 {
                    -1.0
                } else if i == j && i == n - 1 {
                    1.0
                } else {
                    0.0
                };
                worst = worst.max((self.q_entry(i, j) + self.q_entry(j, i) - b).abs());
            }
        }
        worst
    }

    /// Discrete inner product `Σ w_i u_i v_i`.
    pub fn inner_product(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let n = self.n_points();
        for len in [u.len(), v.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(self
            .weights
            .iter()
            .zip(u.iter().zip(v))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }
}

pub fn quad_inner_product(u: &[f64], v: &[f64], op: &SbpOperator) -> Result<f64> {
    op.inner_product(u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegreeError {
    pub degree: usize,
    pub max_error: f64,
    /// Whether the closure is exact for this degree (degree ≤ boundary order).
    pub within_closure_order: bool,
}

/// Max-norm error of `D xᵏ` against `k xᵏ⁻¹` for `k = 0..=order`.
pub fn polynomial_exactness_report(op: &SbpOperator, grid: &Grid1D) -> Vec<DegreeError> {
    let x = grid.coordinates();
    (0..=op.order())
        .map(|k| {
            let u: Vec<f64> = x.iter().map(|xi| xi.powi(k as i32)).collect();
            let du = op.diff(&u);
            let max_error = x
                .iter()
                .zip(&du)
                .map(|(xi, d)| {
                    let exact = if k == 0 {
                        0.0
                    } else {
                        k as f64 * xi.powi(k as i32 - 1)
                    };
                    (d - exact).abs()
                })
                .fold(0.0, f64::max);
            DegreeError {
                degree: k,
                max_error,
                within_closure_order: k <= op.boundary_order(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn op(order: usize, n: usize) -> SbpOperator {
        build_sbp_operator(order, &Grid1D::unit(n).unwrap()).unwrap()
    }

    #[test]
    fn order2_boundary_matrix_is_exact() {
        let grid = Grid1D::unit(5).unwrap();
        assert_eq!(grid.spacing(), 0.25);
        let d = build_sbp_operator(2, &grid).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = match (i, j) {
                    (0, 0) => -1.0,
                    (4, 4) => 1.0,
                    _ => 0.0,
                };
                assert_eq!(d.q_entry(i, j) + d.q_entry(j, i), expected);
            }
        }
    }

    #[test]
    fn constants_are_annihilated() {
        for order in SUPPORTED_ORDERS {
            for n in [16, 33, 101] {
                let d = op(order, n);
                let du = d.diff(&vec![1.0; n]);
                assert!(du.iter().all(|v| v.abs() < 1e-13), "order {order}, n {n}");
            }
        }
    }

    #[test]
    fn order4_differentiates_linear_exactly() {
        let grid = Grid1D::unit(20).unwrap();
        let d = build_sbp_operator(4, &grid).unwrap();
        let du = d.diff(&grid.coordinates());
        assert!(du.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn skew_structure_all_orders() {
        for order in SUPPORTED_ORDERS {
            for n in [16, 32, 201] {
                assert!(op(order, n).skew_defect() <= 1e-13);
            }
        }
    }

    #[test]
    fn weights_positive_and_sum_to_length() {
        for order in SUPPORTED_ORDERS {
            let grid = Grid1D::new(-1.0, 2.5, 57).unwrap();
            let d = build_sbp_operator(order, &grid).unwrap();
            assert!(d.quad_weights().iter().all(|&w| w > 0.0));
            let total: f64 = d.quad_weights().iter().sum();
            assert!((total - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_examples() {
        let d = op(2, 11);
        let one = vec![1.0; 11];
        assert!((d.inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-13);
        assert_eq!(d.inner_product(&[0.0; 11], &one).unwrap(), 0.0);

        let grid = Grid1D::unit(40).unwrap();
        let d = build_sbp_operator(4, &grid).unwrap();
        let x = grid.coordinates();
        assert!((d.inner_product(&x, &x).unwrap() - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn inner_product_rejects_mismatch() {
        let d = op(2, 11);
        assert!(matches!(
            d.inner_product(&[1.0; 10], &[1.0; 11]),
            Err(Error::LengthMismatch {
                expected: 11,
                got: 10
            })
        ));
    }

    #[test]
    fn construction_errors() {
        let small = Grid1D::unit(11).unwrap();
        assert!(matches!(
            build_sbp_operator(4, &small),
            Err(Error::GridTooSmall { required: 12, .. })
        ));
        assert!(matches!(
            build_sbp_operator(6, &Grid1D::unit(15).unwrap()),
            Err(Error::GridTooSmall { required: 16, .. })
        ));
        let err = build_sbp_operator(8, &small).unwrap_err();
        assert!(err.to_string().contains("2, 4, 6"));
        assert!(Grid1D::new(1.0, 1.0, 10).is_err());
    }

    #[test]
    fn exactness_report() {
        let grid = Grid1D::unit(32).unwrap();
        let r2 = polynomial_exactness_report(&build_sbp_operator(2, &grid).unwrap(), &grid);
        assert!(r2[..2].iter().all(|e| e.max_error <= 1e-12));
        let r4 = polynomial_exactness_report(&build_sbp_operator(4, &grid).unwrap(), &grid);
        assert!(r4[..3].iter().all(|e| e.max_error <= 1e-11));
        assert_eq!(r4.len(), 5);
        assert!(r4[4].max_error > 0.0 && !r4[4].within_closure_order);
        let r6 = polynomial_exactness_report(&build_sbp_operator(6, &grid).unwrap(), &grid);
        assert!(r6[..4].iter().all(|e| e.max_error <= 1e-11));
    }

    #[test]
    fn interior_is_exact_to_full_order() {
        for order in SUPPORTED_ORDERS {
            let grid = Grid1D::unit(64).unwrap();
            let d = build_sbp_operator(order, &grid).unwrap();
            let x = grid.coordinates();
            let u: Vec<f64> = x.iter().map(|v| v.powi(order as i32)).collect();
            let du = d.diff(&u);
            for i in 10..54 {
                let exact = order as f64 * x[i].powi(order as i32 - 1);
                assert!((du[i] - exact).abs() < 1e-9, "order {order} row {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn summation_by_parts_identity(
            order in prop::sample::select(SUPPORTED_ORDERS.to_vec()),
            n in 16usize..80,
            seed in prop::collection::vec(-1.0f64..1.0, 160),
        ) {
            let d = op(order, n);
            let u = &seed[..n];
            let v = &seed[80..80 + n];
            let lhs = d.inner_product(u, &d.diff(v)).unwrap() + d.inner_product(&d.diff(u), v).unwrap();
            let rhs = u[n - 1] * v[n - 1] - u[0] * v[0];
            let l2 = |w: &[f64]| w.iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * l2(u) * l2(v));
        }
    }
}
