//! Rating-migration data and the velocities it induces.
//!
//! A published transition matrix gives the probability that an agent at one
//! numerical risk grade migrates to another over a horizon of `T` years. With
//! numerical grades the migration has a length, length over horizon is a
//! velocity, and the row-expectation of that velocity is the drift an agent
//! feels at each grade. Interpolating the per-grade drifts over a grid yields
//! the velocity field that moves collective variables around the domain.

use crate::domain::{Grid, VectorField};
use crate::error::{Error, Result};
use crate::fmt::fmt_value;
use rand::Rng;

/// Row sums may deviate from 1 by at most this much.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Strictly increasing numerical risk grades in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradeScale {
    grades: Vec<f64>,
}

impl GradeScale {
    pub fn new(grades: Vec<f64>) -> Result<Self> {
        if grades.len() < 2 {
            return Err(Error::InvalidParams(
                "a grade scale needs at least 2 grades".into(),
            ));
        }
        for &g in &grades {
            if !g.is_finite() || !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidParams(format!("grade {g} outside [0, 1]")));
            }
        }
        if grades.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams(
                "grades must be strictly increasing".into(),
            ));
        }
        Ok(Self { grades })
    }

    pub fn grades(&self) -> &[f64] {
        &self.grades
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the grade closest to `x` (ties resolve to the lower grade).
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &g) in self.grades.iter().enumerate() {
            let d = (x - g).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }
}

/// Row-stochastic migration probabilities over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    scale: GradeScale,
    /// Row-major `K x K` probabilities; `probs[i*K + j]` is grade `i` to `j`.
    probs: Vec<f64>,
    /// Migration horizon in years.
    horizon: f64,
}

impl TransitionMatrix {
    pub fn new(scale: GradeScale, probs: Vec<f64>, horizon: f64) -> Result<Self> {
        let k = scale.len();
        if probs.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                actual: probs.len(),
            });
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParams(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        for &p in &probs {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParams(format!(
                    "transition probability {p} outside [0, 1]"
                )));
            }
        }
        for row in 0..k {
            let sum: f64 = probs[row * k..(row + 1) * k].iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowNotStochastic { row, sum });
            }
        }
        Ok(Self {
            scale,
            probs,
            horizon,
        })
    }

    /// Rescales every row by its sum before validating; recovers matrices
    /// published with rounded entries. Fails if a row sums to zero.
    pub fn new_renormalized(scale: GradeScale, mut probs: Vec<f64>, horizon: f64) -> Result<Self> {
        let k = scale.len();
        if probs.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                actual: probs.len(),
            });
        }
        for row in 0..k {
            let slice = &mut probs[row * k..(row + 1) * k];
            let sum: f64 = slice.iter().sum();
            if !(sum.is_finite() && sum > 0.0) {
                return Err(Error::RowNotStochastic { row, sum });
            }
            for p in slice {
                *p /= sum;
            }
        }
        Self::new(scale, probs, horizon)
    }

    pub fn scale(&self) -> &GradeScale {
        &self.scale
    }

    pub fn grade_count(&self) -> usize {
        self.scale.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.grade_count() + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let k = self.grade_count();
        &self.probs[from * k..(from + 1) * k]
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.grade_count() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.grade_count(),
            });
        }
        Ok(())
    }

    /// Signed grade distance covered by the `from -> to` migration.
    pub fn displacement(&self, from: usize, to: usize) -> Result<f64> {
        self.check_index(from)?;
        self.check_index(to)?;
        Ok(self.scale.grades()[to] - self.scale.grades()[from])
    }

    /// Velocity of the `from -> to` migration in grades per year.
    pub fn pair_velocity(&self, from: usize, to: usize) -> Result<f64> {
        Ok(self.displacement(from, to)? / self.horizon)
    }

    /// Expected migration velocity of an agent sitting at grade `from`:
    /// the row-probability-weighted mean of the pair velocities.
    pub fn mean_velocity(&self, from: usize) -> Result<f64> {
        self.check_index(from)?;
        let row = self.row(from);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::RowNotStochastic { row: from, sum });
        }
        let grades = self.scale.grades();
        let from_grade = grades[from];
        let weighted: f64 = row
            .iter()
            .zip(grades)
            .map(|(&p, &g)| p * (g - from_grade))
            .sum();
        Ok(weighted / self.horizon)
    }

    /// Draws a destination grade from row `from`.
    pub fn sample_destination(&self, from: usize, rng: &mut impl Rng) -> Result<usize> {
        self.check_index(from)?;
        let row = self.row(from);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(j);
            }
        }
        Ok(row.len() - 1)
    }

    /// Velocity at every cell center of a 1-dimensional grid: piecewise
    /// linear interpolation of the per-grade mean velocities, constant
    /// extrapolation outside the grade range.
    pub fn velocity_field(&self, grid: Grid) -> Result<VectorField> {
        if grid.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: grid.dim(),
            });
        }
        let grades = self.scale.grades();
        let means: Vec<f64> = (0..self.grade_count())
            .map(|i| self.mean_velocity(i))
            .collect::<Result<_>>()?;
        let components = (0..grid.num_cells())
            .map(|c| interpolate(grades, &means, grid.axis_center(c)))
            .collect();
        VectorField::new(grid, components)
    }

    /// Serializes to the transition CSV format understood by
    /// [`parse_transition_csv`]; the round trip is exact.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grades");
        for &g in self.scale.grades() {
            out.push(',');
            out.push_str(&fmt_value(g));
        }
        out.push_str("\nhorizon,");
        out.push_str(&fmt_value(self.horizon));
        out.push('\n');
        let k = self.grade_count();
        for row in 0..k {
            let line: Vec<String> = self.row(row).iter().map(|&p| fmt_value(p)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        let _ = k;
        out
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    // xs is strictly increasing, so x lands in exactly one segment.
    let hi = xs.partition_point(|&g| g < x).min(xs.len() - 1);
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Parses the transition CSV format:
///
/// ```text
/// grades,<g1>,...,<gK>
/// horizon,<T>
/// <a_11>,...,<a_1K>
/// ...
/// <a_K1>,...,<a_KK>
/// ```
///
/// Decimal point, no grouping separators. Row `i` holds the probabilities of
/// migrating from grade `i`. Errors carry 1-based line and column positions.
pub fn parse_transition_csv(text: &str) -> Result<TransitionMatrix> {
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        line,
        column,
        message,
    };
    let mut lines = text.lines().enumerate();

    let (line_no, grades_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, 1, "empty input".into()))?;
    let mut fields = grades_line.split(',');
    let tag = fields.next().unwrap_or_default();
    if tag != "grades" {
        return Err(parse_err(
            line_no + 1,
            1,
            format!("expected 'grades', found '{tag}'"),
        ));
    }
    let mut grades = Vec::new();
    for (col, raw) in fields.enumerate() {
        let g: f64 = raw.trim().parse().map_err(|_| {
            parse_err(line_no + 1, col + 2, format!("invalid grade '{raw}'"))
        })?;
        grades.push(g);
    }
    let scale = GradeScale::new(grades).map_err(|e| parse_err(line_no + 1, 2, e.to_string()))?;
    let k = scale.len();

    let (line_no, horizon_line) = lines
        .next()
        .ok_or_else(|| parse_err(2, 1, "missing horizon line".into()))?;
    let mut fields = horizon_line.split(',');
    let tag = fields.next().unwrap_or_default();
    if tag != "horizon" {
        return Err(parse_err(
            line_no + 1,
            1,
            format!("expected 'horizon', found '{tag}'"),
        ));
    }
    let raw = fields.next().ok_or_else(|| {
        parse_err(line_no + 1, 2, "missing horizon value".into())
    })?;
    let horizon: f64 = raw.trim().parse().map_err(|_| {
        parse_err(line_no + 1, 2, format!("invalid horizon '{raw}'"))
    })?;
    if fields.next().is_some() {
        return Err(parse_err(
            line_no + 1,
            3,
            "unexpected extra field after horizon".into(),
        ));
    }

    let mut probs = Vec::with_capacity(k * k);
    let mut rows_read = 0;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == k {
            return Err(parse_err(
                line_no + 1,
                1,
                format!("expected {k} probability rows, found more"),
            ));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k {
            return Err(parse_err(
                line_no + 1,
                fields.len().min(k) + 1,
                format!("row has {} fields, expected {k}", fields.len()),
            ));
        }
        for (col, raw) in fields.iter().enumerate() {
            let p: f64 = raw.trim().parse().map_err(|_| {
                parse_err(line_no + 1, col + 1, format!("invalid probability '{raw}'"))
            })?;
            probs.push(p);
        }
        rows_read += 1;
    }
    if rows_read < k {
        return Err(parse_err(
            3 + rows_read,
            1,
            format!("expected {k} probability rows, found {rows_read}"),
        ));
    }
    TransitionMatrix::new(scale, probs, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_grade_matrix() -> TransitionMatrix {
        let scale = GradeScale::new(vec![0.2, 0.8]).unwrap();
        TransitionMatrix::new(scale, vec![0.75, 0.25, 0.1, 0.9], 2.0).unwrap()
    }

    fn identity_matrix(grades: Vec<f64>) -> TransitionMatrix {
        let k = grades.len();
        let scale = GradeScale::new(grades).unwrap();
        let mut probs = vec![0.0; k * k];
        for i in 0..k {
            probs[i * k + i] = 1.0;
        }
        TransitionMatrix::new(scale, probs, 1.0).unwrap()
    }

    #[test]
    fn grade_scale_rejects_non_increasing() {
        assert!(GradeScale::new(vec![0.2, 0.2]).is_err());
        assert!(GradeScale::new(vec![0.5, 0.2]).is_err());
        assert!(GradeScale::new(vec![0.5]).is_err());
    }

    #[test]
    fn displacement_examples() {
        let m = two_grade_matrix();
        assert_eq!(m.displacement(0, 0).unwrap(), 0.0);
        assert!((m.displacement(0, 1).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(
            m.displacement(0, 1).unwrap(),
            -m.displacement(1, 0).unwrap()
        );
        assert!(matches!(
            m.displacement(0, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn pair_velocity_examples() {
        let m = two_grade_matrix();
        assert_eq!(m.pair_velocity(1, 1).unwrap(), 0.0);
        assert!((m.pair_velocity(0, 1).unwrap() - 0.3).abs() < 1e-15);

        let unit = identity_matrix(vec![0.2, 0.8]);
        assert_eq!(
            unit.pair_velocity(0, 1).unwrap(),
            unit.displacement(0, 1).unwrap()
        );
    }

    #[test]
    fn mean_velocity_of_identity_is_zero() {
        let m = identity_matrix(vec![0.1, 0.4, 0.9]);
        for i in 0..3 {
            assert_eq!(m.mean_velocity(i).unwrap(), 0.0);
        }
    }

    #[test]
    fn mean_velocity_hand_expectation() {
        let m = two_grade_matrix();
        // (0.75 * 0 + 0.25 * 0.6) / 2
        assert!((m.mean_velocity(0).unwrap() - 0.075).abs() < 1e-15);
    }

    #[test]
    fn mean_velocity_of_symmetric_middle_row_is_zero() {
        let scale = GradeScale::new(vec![0.25, 0.5, 0.75]).unwrap();
        let probs = vec![
            0.8, 0.15, 0.05, //
            0.2, 0.6, 0.2, //
            0.05, 0.15, 0.8,
        ];
        let m = TransitionMatrix::new(scale, probs, 1.0).unwrap();
        assert!(m.mean_velocity(1).unwrap().abs() < 1e-15);
    }

    #[test]
    fn velocity_field_of_identity_is_zero() {
        let m = identity_matrix(vec![0.2, 0.8]);
        let grid = Grid::new(1, 10).unwrap();
        let f = m.velocity_field(grid).unwrap();
        assert!(f.components().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn velocity_field_reproduces_grade_nodes_and_midpoints() {
        // Grades at cell centers of an m = 4 grid: 0.125 and 0.625.
        let scale = GradeScale::new(vec![0.125, 0.625]).unwrap();
        let m = TransitionMatrix::new(scale, vec![0.5, 0.5, 0.25, 0.75], 1.0).unwrap();
        let v0 = m.mean_velocity(0).unwrap();
        let v1 = m.mean_velocity(1).unwrap();
        let grid = Grid::new(1, 4).unwrap();
        let f = m.velocity_field(grid).unwrap();
        // Cell 0 center = 0.125 (first grade), cell 2 center = 0.625 (second).
        assert_eq!(f.component(0, 0), v0);
        assert_eq!(f.component(2, 0), v1);
        // Cell 1 center = 0.375, midway between the grades.
        assert!((f.component(1, 0) - 0.5 * (v0 + v1)).abs() < 1e-15);
        // Cell 3 center = 0.875, past the last grade: flat extrapolation.
        assert_eq!(f.component(3, 0), v1);
    }

    #[test]
    fn velocity_field_requires_one_dimension() {
        let m = two_grade_matrix();
        let grid = Grid::new(2, 4).unwrap();
        assert!(matches!(
            m.velocity_field(grid),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn parse_identity_file() {
        let text = "grades,0.2,0.8\nhorizon,1\n1,0\n0,1\n";
        let m = parse_transition_csv(text).unwrap();
        assert_eq!(m.grade_count(), 2);
        assert_eq!(m.prob(0, 0), 1.0);
        assert_eq!(m.prob(0, 1), 0.0);
        assert_eq!(m.horizon(), 1.0);
    }

    #[test]
    fn parse_rejects_deficient_row() {
        let text = "grades,0.2,0.8\nhorizon,1\n0.8,0.1\n0,1\n";
        match parse_transition_csv(text) {
            Err(Error::RowNotStochastic { row, sum }) => {
                assert_eq!(row, 0);
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("expected RowNotStochastic, got {other:?}"),
        }
    }

    #[test]
    fn parse_reports_line_and_column() {
        let text = "grades,0.2,0.8\nhorizon,1\n1,0\n0,x\n";
        match parse_transition_csv(text) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(column, 2);
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn renormalize_recovers_rounded_rows() {
        let scale = GradeScale::new(vec![0.2, 0.8]).unwrap();
        let m =
            TransitionMatrix::new_renormalized(scale, vec![0.45, 0.45, 0.2, 0.6], 1.0).unwrap();
        assert!((m.prob(0, 0) - 0.5).abs() < 1e-15);
        assert!((m.prob(1, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_confirms_mean_velocity() {
        // Brute-force oracle: sample destinations and average pair velocities.
        let m = two_grade_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        for row in 0..m.grade_count() {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..draws {
                let dest = m.sample_destination(row, &mut rng).unwrap();
                let v = m.pair_velocity(row, dest).unwrap();
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / draws as f64;
            let var = (sumsq / draws as f64 - mean * mean).max(0.0);
            let stderr = (var / draws as f64).sqrt();
            let expected = m.mean_velocity(row).unwrap();
            assert!(
                (mean - expected).abs() <= 3.0 * stderr + 1e-12,
                "row {row}: mc {mean} vs exact {expected} (se {stderr})"
            );
        }
    }

    fn arbitrary_matrix() -> impl Strategy<Value = TransitionMatrix> {
        (2usize..=6)
            .prop_flat_map(|k| {
                let grades = proptest::collection::vec(0.0f64..1.0, k);
                let weights = proptest::collection::vec(0.01f64..1.0, k * k);
                let horizon = 0.5f64..5.0;
                (Just(k), grades, weights, horizon)
            })
            .prop_filter_map("degenerate grades", |(k, mut grades, weights, horizon)| {
                grades.sort_by(|a, b| a.partial_cmp(b).unwrap());
                grades.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
                if grades.len() != k {
                    return None;
                }
                let scale = GradeScale::new(grades).ok()?;
                TransitionMatrix::new_renormalized(scale, weights, horizon).ok()
            })
    }

    proptest! {
        #[test]
        fn mean_velocity_respects_convex_bounds(m in arbitrary_matrix()) {
            let grades = m.scale().grades().to_vec();
            let horizon = m.horizon();
            let top = grades[grades.len() - 1];
            let bottom = grades[0];
            for i in 0..m.grade_count() {
                let v = m.mean_velocity(i).unwrap();
                let lo = (bottom - grades[i]) / horizon;
                let hi = (top - grades[i]) / horizon;
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn csv_round_trip_is_identity(m in arbitrary_matrix()) {
            let text = m.to_csv();
            let back = parse_transition_csv(&text).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
