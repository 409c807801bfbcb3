//! Geometry and fields on the unit-cube risk domain.
//!
//! Agents carry numerical risk grades in `[0, 1]` per tracked risk, so the
//! economy lives on the unit cube in `n` dimensions. This module provides the
//! discretization (a uniform Cartesian [`Grid`] with cell-center quadrature),
//! scalar and vector fields on that grid, and the reductions every other
//! module relies on: domain integrals, risk-weighted means, macro flows and a
//! conservative discrete divergence with zero boundary flux.

use crate::error::{Error, Result};
use crate::fmt::{fmt_coord, fmt_value};

/// A point in the risk domain: one grade per tracked risk, each in `[0, 1]`.
///
/// Grade 0 is the most secure, grade 1 the most risky.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskPoint {
    coords: Vec<f64>,
}

impl RiskPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParams(
                "a risk point needs at least one coordinate".into(),
            ));
        }
        for (i, &c) in coords.iter().enumerate() {
            if !c.is_finite() || !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidParams(format!(
                    "risk coordinate {i} = {c} outside [0, 1]"
                )));
            }
        }
        Ok(Self { coords })
    }

    /// Concatenates a seller point and a buyer point into one point on the
    /// doubled (seller x buyer) domain.
    pub fn pair(seller: &RiskPoint, buyer: &RiskPoint) -> RiskPoint {
        let mut coords = Vec::with_capacity(seller.dim() + buyer.dim());
        coords.extend_from_slice(seller.coords());
        coords.extend_from_slice(buyer.coords());
        RiskPoint { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Uniform Cartesian grid over the unit cube: `m` cells per axis, `n` axes.
///
/// Cell `(k_1, ..., k_n)` covers the half-open box `prod [k_j*h, (k_j+1)*h)`;
/// the last cell along each axis is closed so every point of the cube belongs
/// to exactly one cell. Flat indices are row-major with the last axis
/// contiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n: usize,
    m: usize,
}

/// Hard cap on the total cell count, to catch absurd grid requests early.
const MAX_CELLS: usize = 1 << 26;

impl Grid {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams("grid dimension must be >= 1".into()));
        }
        if m < 2 {
            return Err(Error::InvalidParams(
                "grid needs at least 2 cells per axis".into(),
            ));
        }
        let cells = (m as u128).pow(n as u32);
        if cells > MAX_CELLS as u128 {
            return Err(Error::InvalidParams(format!(
                "grid of {m}^{n} cells exceeds the supported size"
            )));
        }
        Ok(Self { n, m })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn cells_per_axis(&self) -> usize {
        self.m
    }

    /// Cell width `h = 1/m`.
    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Cell volume `h^n`, the quadrature weight of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.n as i32)
    }

    pub fn num_cells(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    /// Stride of `axis` in the flat index: the last axis varies fastest.
    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.n - 1 - axis) as u32)
    }

    /// Index of the cell along `axis` for a flat cell index.
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.m
    }

    /// Flat index of the cell containing `coords` (half-open boxes, last cell
    /// closed).
    pub fn cell_of(&self, coords: &[f64]) -> Result<usize> {
        if coords.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: coords.len(),
            });
        }
        let mut flat = 0;
        for &c in coords {
            let k = ((c * self.m as f64).floor() as usize).min(self.m - 1);
            flat = flat * self.m + k;
        }
        Ok(flat)
    }

    /// Center coordinates of a cell given by flat index.
    pub fn center(&self, flat: usize) -> Vec<f64> {
        (0..self.n)
            .map(|axis| self.axis_center(self.axis_index(flat, axis)))
            .collect()
    }

    /// Center coordinate of cell `k` along one axis.
    pub fn axis_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.m as f64
    }
}

/// Linear operations shared by field types, used for window averaging.
pub trait FieldOps: Clone {
    fn add_assign_field(&mut self, other: &Self) -> Result<()>;
    fn scale(&mut self, factor: f64);
}

/// A collective variable discretized on a grid: one value per cell.
///
/// Holds the per-cell aggregate of an additive agent variable (assets,
/// credits, supply, ...), optionally time-averaged by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    name: String,
    unit: String,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>, name: &str, unit: &str) -> Result<Self> {
        if values.len() != grid.num_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.num_cells(),
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite field value {bad}"
            )));
        }
        Ok(Self {
            grid,
            values,
            name: name.to_string(),
            unit: unit.to_string(),
        })
    }

    pub fn zeros(grid: Grid, name: &str, unit: &str) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.num_cells()],
            name: name.to_string(),
            unit: unit.to_string(),
        }
    }

    /// Builds a field by evaluating `f` at every cell center.
    pub fn from_fn(grid: Grid, name: &str, unit: &str, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.num_cells()).map(|c| f(&grid.center(c))).collect();
        Self {
            grid,
            values,
            name: name.to_string(),
            unit: unit.to_string(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    /// CSV dump: `cell_index,coord_1..coord_n,value`, cell centers with 17
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.grid.dim();
        let mut out = String::from("cell_index");
        for j in 1..=n {
            out.push_str(&format!(",coord_{j}"));
        }
        out.push_str(",value\n");
        for (c, v) in self.values.iter().enumerate() {
            out.push_str(&c.to_string());
            for x in self.grid.center(c) {
                out.push(',');
                out.push_str(&fmt_coord(x));
            }
            out.push(',');
            out.push_str(&fmt_value(*v));
            out.push('\n');
        }
        out
    }
}

impl FieldOps for ScalarField {
    fn add_assign_field(&mut self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("cannot add fields on different grids"));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// A flow (or velocity) field: one `n`-vector per cell, stored flat as
/// `cell * n + component`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, components: Vec<f64>) -> Result<Self> {
        if components.len() != grid.num_cells() * grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.num_cells() * grid.dim(),
                actual: components.len(),
            });
        }
        if let Some(bad) = components.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite vector component {bad}"
            )));
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            components: vec![0.0; grid.num_cells() * grid.dim()],
        }
    }

    /// Builds a vector field by evaluating `f` at every cell center.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        let mut components = Vec::with_capacity(grid.num_cells() * n);
        for c in 0..grid.num_cells() {
            let v = f(&grid.center(c));
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: v.len(),
                });
            }
            components.extend_from_slice(&v);
        }
        Self::new(grid, components)
    }

    /// Constant vector everywhere.
    pub fn constant(grid: Grid, vector: &[f64]) -> Result<Self> {
        if vector.len() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                actual: vector.len(),
            });
        }
        let mut components = Vec::with_capacity(grid.num_cells() * grid.dim());
        for _ in 0..grid.num_cells() {
            components.extend_from_slice(vector);
        }
        Self::new(grid, components)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// The vector stored in one cell.
    pub fn vector(&self, cell: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.components[cell * n..(cell + 1) * n]
    }

    pub fn component(&self, cell: usize, axis: usize) -> f64 {
        self.components[cell * self.grid.dim() + axis]
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [f64] {
        &mut self.components
    }

    /// Largest 1-norm of any cell vector; the wave speed used by CFL checks.
    pub fn max_speed(&self) -> f64 {
        let n = self.grid.dim();
        self.components
            .chunks(n)
            .map(|v| v.iter().map(|c| c.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// CSV dump: `cell_index,coord_1..coord_n,v_1..v_n`.
    pub fn to_csv(&self) -> String {
        let n = self.grid.dim();
        let mut out = String::from("cell_index");
        for j in 1..=n {
            out.push_str(&format!(",coord_{j}"));
        }
        for j in 1..=n {
            out.push_str(&format!(",v_{j}"));
        }
        out.push('\n');
        for c in 0..self.grid.num_cells() {
            out.push_str(&c.to_string());
            for x in self.grid.center(c) {
                out.push(',');
                out.push_str(&fmt_coord(x));
            }
            for &v in self.vector(c) {
                out.push(',');
                out.push_str(&fmt_value(v));
            }
            out.push('\n');
        }
        out
    }
}

impl FieldOps for VectorField {
    fn add_assign_field(&mut self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("cannot add fields on different grids"));
        }
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            *a += b;
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        for v in &mut self.components {
            *v *= factor;
        }
    }
}

/// Macro (domain-wide) view of a collective variable: its total, flow,
/// velocity and risk-weighted mean position.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    /// Domain total of the variable.
    pub total: f64,
    /// Domain total of the flow; equals `total * velocity` when mass is nonzero.
    pub flow: Vec<f64>,
    /// Macro velocity, `flow / total`.
    pub velocity: Vec<f64>,
    /// Mean risk: position weighted by the variable, componentwise in `[0, 1]`.
    pub mean_risk: Vec<f64>,
}

/// Midpoint-quadrature integral of a field over the whole domain.
///
/// This is the macro value of the variable the field discretizes.
pub fn integrate_field(field: &ScalarField) -> f64 {
    field.values().iter().sum::<f64>() * field.grid().cell_volume()
}

/// Risk-weighted mean position of a nonnegative field, using cell centers.
///
/// Returns `ZeroMass` when the field integrates to zero. For fields built
/// from agent aggregates this is the smoothed counterpart of the exact
/// agent-weighted mean; the two differ by at most half a cell width.
pub fn mean_risk_of_field(field: &ScalarField) -> Result<Vec<f64>> {
    let grid = field.grid();
    let total: f64 = field.values().iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroMass("field integrates to zero"));
    }
    let mut weighted = vec![0.0; grid.dim()];
    for (c, &v) in field.values().iter().enumerate() {
        for (axis, w) in weighted.iter_mut().enumerate() {
            *w += v * grid.axis_center(grid.axis_index(c, axis));
        }
    }
    Ok(weighted.into_iter().map(|w| w / total).collect())
}

/// Macro flow of a variable: the domain integral of `A(x) * v(x)` per
/// component. Dividing by [`integrate_field`] yields the macro velocity.
pub fn macro_flow(variable: &ScalarField, velocity: &VectorField) -> Result<Vec<f64>> {
    if variable.grid() != velocity.grid() {
        return Err(Error::GridMismatch(
            "variable and velocity live on different grids",
        ));
    }
    let grid = variable.grid();
    let mut flow = vec![0.0; grid.dim()];
    for (c, &a) in variable.values().iter().enumerate() {
        for (axis, f) in flow.iter_mut().enumerate() {
            *f += a * velocity.component(c, axis);
        }
    }
    let volume = grid.cell_volume();
    for f in &mut flow {
        *f *= volume;
    }
    Ok(flow)
}

/// Conservative discrete divergence of a flow field.
///
/// Face values are arithmetic means of the adjacent cell vectors; faces on
/// the domain boundary carry zero flux (no agents exist outside the cube).
/// Summed against the cell volume the result telescopes to zero, the discrete
/// form of the Gauss-theorem argument that makes domain totals move only
/// under explicit sources.
pub fn divergence(flow: &VectorField) -> ScalarField {
    let grid = flow.grid();
    let n = grid.dim();
    let m = grid.cells_per_axis();
    let inv_h = m as f64;
    let mut values = vec![0.0; grid.num_cells()];
    for (c, out) in values.iter_mut().enumerate() {
        let mut acc = 0.0;
        for axis in 0..n {
            let k = grid.axis_index(c, axis);
            let stride = grid.stride(axis);
            let here = flow.component(c, axis);
            let flux_right = if k + 1 < m {
                0.5 * (here + flow.component(c + stride, axis))
            } else {
                0.0
            };
            let flux_left = if k > 0 {
                0.5 * (flow.component(c - stride, axis) + here)
            } else {
                0.0
            };
            acc += (flux_right - flux_left) * inv_h;
        }
        *out = acc;
    }
    ScalarField {
        grid,
        values,
        name: "divergence".to_string(),
        unit: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid1(m: usize) -> Grid {
        Grid::new(1, m).unwrap()
    }

    #[test]
    fn risk_point_rejects_out_of_range() {
        assert!(RiskPoint::new(vec![0.5, 1.2]).is_err());
        assert!(RiskPoint::new(vec![-0.1]).is_err());
        assert!(RiskPoint::new(vec![]).is_err());
        assert!(RiskPoint::new(vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn cell_membership_is_half_open_with_closed_last_cell() {
        let g = grid1(4);
        assert_eq!(g.cell_of(&[0.0]).unwrap(), 0);
        assert_eq!(g.cell_of(&[0.25]).unwrap(), 1);
        assert_eq!(g.cell_of(&[0.9999]).unwrap(), 3);
        assert_eq!(g.cell_of(&[1.0]).unwrap(), 3);
    }

    #[test]
    fn flat_indexing_round_trips_through_axis_indices() {
        let g = Grid::new(3, 4).unwrap();
        for flat in 0..g.num_cells() {
            let rebuilt: usize = (0..3).fold(0, |acc, axis| acc * 4 + g.axis_index(flat, axis));
            assert_eq!(rebuilt, flat);
        }
    }

    #[test]
    fn integrate_zero_field_is_zero() {
        let f = ScalarField::zeros(grid1(7), "a", "");
        assert_eq!(integrate_field(&f), 0.0);
    }

    #[test]
    fn integrate_constant_field_matches_value() {
        let g = grid1(10);
        let f = ScalarField::new(g, vec![3.0; 10], "a", "").unwrap();
        assert!((integrate_field(&f) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn integrate_hand_quadrature() {
        let g = grid1(4);
        let f = ScalarField::new(g, vec![1.0, 2.0, 3.0, 4.0], "a", "").unwrap();
        assert_eq!(integrate_field(&f), 2.5);
    }

    #[test]
    fn mean_risk_single_cell_is_its_center() {
        let g = grid1(10);
        let mut v = vec![0.0; 10];
        v[3] = 5.0;
        let f = ScalarField::new(g, v, "a", "").unwrap();
        let x = mean_risk_of_field(&f).unwrap();
        assert!((x[0] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn mean_risk_of_constant_field_is_center_of_domain() {
        for m in [2, 5, 16] {
            let f = ScalarField::new(grid1(m), vec![2.0; m], "a", "").unwrap();
            let x = mean_risk_of_field(&f).unwrap();
            assert!((x[0] - 0.5).abs() < 1e-14, "m = {m}: {}", x[0]);
        }
    }

    #[test]
    fn mean_risk_hand_computation() {
        let f = ScalarField::new(grid1(2), vec![1.0, 3.0], "a", "").unwrap();
        let x = mean_risk_of_field(&f).unwrap();
        assert_eq!(x[0], 0.625);
    }

    #[test]
    fn mean_risk_of_empty_field_is_zero_mass() {
        let f = ScalarField::zeros(grid1(4), "a", "");
        assert!(matches!(mean_risk_of_field(&f), Err(Error::ZeroMass(_))));
    }

    #[test]
    fn macro_flow_zero_velocity() {
        let g = grid1(5);
        let f = ScalarField::new(g, vec![1.0; 5], "a", "").unwrap();
        let v = VectorField::zeros(g);
        assert_eq!(macro_flow(&f, &v).unwrap(), vec![0.0]);
    }

    #[test]
    fn macro_flow_of_constants() {
        let g = grid1(8);
        let f = ScalarField::new(g, vec![2.0; 8], "a", "").unwrap();
        let v = VectorField::constant(g, &[0.1]).unwrap();
        let p = macro_flow(&f, &v).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn macro_flow_hand_quadrature() {
        let g = grid1(2);
        let f = ScalarField::new(g, vec![1.0, 3.0], "a", "").unwrap();
        let v = VectorField::new(g, vec![0.2, -0.1]).unwrap();
        let p = macro_flow(&f, &v).unwrap();
        assert!((p[0] - (-0.05)).abs() < 1e-15);
    }

    #[test]
    fn macro_flow_grid_mismatch() {
        let f = ScalarField::zeros(grid1(4), "a", "");
        let v = VectorField::zeros(grid1(5));
        assert!(matches!(macro_flow(&f, &v), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn divergence_of_uniform_flow_vanishes_in_the_interior() {
        let g = grid1(6);
        let p = VectorField::constant(g, &[0.4]).unwrap();
        let d = divergence(&p);
        let h = g.h();
        assert!((d.values()[0] - 0.4 / h).abs() < 1e-12);
        assert!((d.values()[5] + 0.4 / h).abs() < 1e-12);
        for &v in &d.values()[1..5] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn divergence_of_linear_flux_is_constant_inside() {
        // Cell values linear in x make the mean face fluxes linear too, so
        // the interior divergence equals the slope.
        let g = grid1(4);
        let slope = 2.0;
        let p = VectorField::from_fn(g, |x| vec![slope * x[0]]).unwrap();
        let d = divergence(&p);
        for c in 1..3 {
            assert!((d.values()[c] - slope).abs() < 1e-12, "cell {c}");
        }
    }

    #[test]
    fn divergence_in_two_dimensions_conserves() {
        let g = Grid::new(2, 8).unwrap();
        let p = VectorField::from_fn(g, |x| vec![x[0] * x[1], 0.3 - x[1]]).unwrap();
        let d = divergence(&p);
        let total: f64 = d.values().iter().sum::<f64>() * g.cell_volume();
        assert!(total.abs() < 1e-13, "total = {total}");
    }

    #[test]
    fn scalar_csv_layout() {
        let f = ScalarField::new(grid1(2), vec![1.5, -2.0], "a", "").unwrap();
        let csv = f.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "cell_index,coord_1,value");
        assert_eq!(lines.next().unwrap(), "0,2.5000000000000000e-1,1.5");
        assert_eq!(lines.next().unwrap(), "1,7.5000000000000000e-1,-2");
    }

    proptest! {
        #[test]
        fn integrate_is_linear(
            values_a in proptest::collection::vec(-1e3f64..1e3, 8),
            values_b in proptest::collection::vec(-1e3f64..1e3, 8),
            a in -10.0f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let g = grid1(8);
            let fa = ScalarField::new(g, values_a.clone(), "a", "").unwrap();
            let fb = ScalarField::new(g, values_b.clone(), "b", "").unwrap();
            let combo: Vec<f64> = values_a.iter().zip(&values_b)
                .map(|(x, y)| a * x + b * y).collect();
            let fc = ScalarField::new(g, combo, "c", "").unwrap();
            let lhs = integrate_field(&fc);
            let rhs = a * integrate_field(&fa) + b * integrate_field(&fb);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
        }

        #[test]
        fn mean_risk_stays_inside_the_cell_center_band(
            values in proptest::collection::vec(0.0f64..1e3, 16),
        ) {
            let g = grid1(16);
            let f = ScalarField::new(g, values, "a", "").unwrap();
            if let Ok(x) = mean_risk_of_field(&f) {
                let half_h = 0.5 * g.h();
                prop_assert!(x[0] >= half_h - 1e-12 && x[0] <= 1.0 - half_h + 1e-12);
            }
        }

        #[test]
        fn mean_risk_is_scale_invariant(
            values in proptest::collection::vec(0.0f64..1e3, 12),
            scale in 1e-3f64..1e3,
        ) {
            let g = grid1(12);
            let f = ScalarField::new(g, values.clone(), "a", "").unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let fs = ScalarField::new(g, scaled, "a", "").unwrap();
            match (mean_risk_of_field(&f), mean_risk_of_field(&fs)) {
                (Ok(x), Ok(y)) => prop_assert!((x[0] - y[0]).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "scaling changed zero-mass status"),
            }
        }

        #[test]
        fn divergence_telescopes_to_zero(
            components in proptest::collection::vec(-1e2f64..1e2, 10),
        ) {
            let g = grid1(10);
            let p = VectorField::new(g, components).unwrap();
            let d = divergence(&p);
            let total: f64 = d.values().iter().sum::<f64>() * g.cell_volume();
            prop_assert!(total.abs() < 1e-11, "total = {total}");
        }
    }
}
