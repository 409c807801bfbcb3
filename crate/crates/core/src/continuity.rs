//! Conservative transport of collective variables and their flows.
//!
//! Variables obey a continuity equation: the change of the amount in a cell
//! is the net face flux plus an explicit source. The discretization is
//! first-order donor-cell upwinding with face velocities averaged from the
//! adjacent cells, explicit Euler in time, and zero flux through the domain
//! boundary (no agents exist outside the cube). With those boundary faces the
//! cell totals telescope, so the domain total moves only by the integrated
//! source; that discrete identity is what the tests pin down.

use crate::domain::{integrate_field, macro_flow, Grid, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::fmt::fmt_value;
use crate::parallel::fill_indexed;
use std::borrow::Cow;

/// CFL safety factor: `dt <= 0.5 * h / max|v|`.
pub const CFL_FACTOR: f64 = 0.5;

/// Time-dependent input data, sampled at the start of each step.
#[derive(Debug, Clone)]
pub enum TimeSeries<F> {
    /// The same field at every step.
    Constant(F),
    /// `base` scaled by `factors[step]`; the factor list must cover every
    /// recorded step, including the final state.
    Scaled { base: F, factors: Vec<f64> },
}

impl<F: crate::domain::FieldOps> TimeSeries<F> {
    /// Sample for one step: borrows the constant field, scales a copy
    /// otherwise. `None` when the factor list is exhausted.
    fn at(&self, step: usize) -> Option<Cow<'_, F>> {
        match self {
            TimeSeries::Constant(f) => Some(Cow::Borrowed(f)),
            TimeSeries::Scaled { base, factors } => {
                let factor = *factors.get(step)?;
                let mut f = base.clone();
                f.scale(factor);
                Some(Cow::Owned(f))
            }
        }
    }

    fn covers(&self, steps: usize) -> bool {
        match self {
            TimeSeries::Constant(_) => true,
            TimeSeries::Scaled { factors, .. } => factors.len() > steps,
        }
    }
}

impl TimeSeries<ScalarField> {
    fn grid(&self) -> Grid {
        match self {
            TimeSeries::Constant(f) => f.grid(),
            TimeSeries::Scaled { base, .. } => base.grid(),
        }
    }
}

impl TimeSeries<VectorField> {
    fn grid(&self) -> Grid {
        match self {
            TimeSeries::Constant(f) => f.grid(),
            TimeSeries::Scaled { base, .. } => base.grid(),
        }
    }

    /// Largest wave speed over all steps, for the CFL bound.
    fn max_speed(&self) -> f64 {
        match self {
            TimeSeries::Constant(f) => f.max_speed(),
            TimeSeries::Scaled { base, factors } => {
                let peak = factors.iter().fold(0.0f64, |m, f| m.max(f.abs()));
                base.max_speed() * peak
            }
        }
    }
}

fn cfl_limit(grid: Grid, max_speed: f64) -> f64 {
    if max_speed == 0.0 {
        f64::INFINITY
    } else {
        CFL_FACTOR * grid.h() / max_speed
    }
}

fn check_cfl(grid: Grid, max_speed: f64, dt: f64) -> Result<()> {
    let limit = cfl_limit(grid, max_speed);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    Ok(())
}

/// Upwind donor-cell flux through the face between `lo` and `hi` along one
/// axis: the face velocity is the mean of the adjacent cell velocities and
/// picks the upwind cell's density.
#[inline]
fn face_flux(v_lo: f64, v_hi: f64, q_lo: f64, q_hi: f64) -> f64 {
    let v_face = 0.5 * (v_lo + v_hi);
    if v_face >= 0.0 {
        v_face * q_lo
    } else {
        v_face * q_hi
    }
}

/// One conservative explicit step of the variable equation:
/// interior face fluxes by upwinding, zero boundary flux, then `dt` times
/// the source.
pub fn step_variable(
    variable: &ScalarField,
    velocity: &VectorField,
    source: &ScalarField,
    dt: f64,
) -> Result<ScalarField> {
    let grid = variable.grid();
    if velocity.grid() != grid || source.grid() != grid {
        return Err(Error::GridMismatch(
            "variable, velocity and source must share a grid",
        ));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParams(format!(
            "dt must be positive, got {dt}"
        )));
    }
    check_cfl(grid, velocity.max_speed(), dt)?;
    let n = grid.dim();
    let m = grid.cells_per_axis();
    let inv_h = m as f64;
    let a = variable.values();
    let src = source.values();
    let mut out = vec![0.0; a.len()];
    fill_indexed(&mut out, |c| {
        let mut net = 0.0;
        for axis in 0..n {
            let k = grid.axis_index(c, axis);
            let stride = grid.stride(axis);
            let v_here = velocity.component(c, axis);
            if k + 1 < m {
                let up = c + stride;
                net += face_flux(v_here, velocity.component(up, axis), a[c], a[up]);
            }
            if k > 0 {
                let down = c - stride;
                net -= face_flux(velocity.component(down, axis), v_here, a[down], a[c]);
            }
        }
        a[c] - dt * inv_h * net + dt * src[c]
    });
    ScalarField::new(grid, out, variable.name(), variable.unit())
}

/// One conservative explicit step of the flow equation, applied to each
/// flow component independently with the same upwinding.
pub fn step_flow(
    flow: &VectorField,
    velocity: &VectorField,
    source: &VectorField,
    dt: f64,
) -> Result<VectorField> {
    let grid = flow.grid();
    if velocity.grid() != grid || source.grid() != grid {
        return Err(Error::GridMismatch(
            "flow, velocity and source must share a grid",
        ));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParams(format!(
            "dt must be positive, got {dt}"
        )));
    }
    check_cfl(grid, velocity.max_speed(), dt)?;
    let n = grid.dim();
    let m = grid.cells_per_axis();
    let inv_h = m as f64;
    let p = flow.components();
    let src = source.components();
    let mut out = vec![0.0; p.len()];
    fill_indexed(&mut out, |idx| {
        let c = idx / n;
        let comp = idx % n;
        let mut net = 0.0;
        for axis in 0..n {
            let k = grid.axis_index(c, axis);
            let stride = grid.stride(axis);
            let v_here = velocity.component(c, axis);
            if k + 1 < m {
                let up = c + stride;
                net += face_flux(
                    v_here,
                    velocity.component(up, axis),
                    p[idx],
                    p[up * n + comp],
                );
            }
            if k > 0 {
                let down = c - stride;
                net -= face_flux(
                    velocity.component(down, axis),
                    v_here,
                    p[down * n + comp],
                    p[idx],
                );
            }
        }
        p[idx] - dt * inv_h * net + dt * src[idx]
    });
    VectorField::new(grid, out)
}

/// Macro velocity recovered from a flow and its density, `v = P / A`, with
/// cells below `1e-12` of the density peak treated as empty (zero velocity).
pub fn velocity_from_flow(flow: &VectorField, density: &ScalarField) -> Result<VectorField> {
    let grid = density.grid();
    if flow.grid() != grid {
        return Err(Error::GridMismatch("flow and density grids differ"));
    }
    let peak = density.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-12 * peak;
    let n = grid.dim();
    let mut components = vec![0.0; flow.components().len()];
    for (idx, out) in components.iter_mut().enumerate() {
        let a = density.values()[idx / n];
        *out = if peak == 0.0 || a.abs() < floor {
            0.0
        } else {
            flow.components()[idx] / a
        };
    }
    VectorField::new(grid, components)
}

/// A transport problem: initial field, prescribed velocity, explicit
/// sources, and the step/horizon. The CFL bound is enforced here, over all
/// sampled times.
#[derive(Debug, Clone)]
pub struct ContinuityProblem {
    pub initial: ScalarField,
    pub velocity: TimeSeries<VectorField>,
    pub source: TimeSeries<ScalarField>,
    /// When present the flow is co-evolved by its own continuity equation,
    /// starting from `initial * velocity(0)`; otherwise the trace reports
    /// the diagnostic flow `A * v`.
    pub flow_source: Option<TimeSeries<VectorField>>,
    pub dt: f64,
    pub t_end: f64,
}

impl ContinuityProblem {
    pub fn new(
        initial: ScalarField,
        velocity: TimeSeries<VectorField>,
        source: TimeSeries<ScalarField>,
        flow_source: Option<TimeSeries<VectorField>>,
        dt: f64,
        t_end: f64,
    ) -> Result<Self> {
        let grid = initial.grid();
        if velocity.grid() != grid || source.grid() != grid {
            return Err(Error::GridMismatch(
                "initial, velocity and source must share a grid",
            ));
        }
        if let Some(fs) = &flow_source {
            if fs.grid() != grid {
                return Err(Error::GridMismatch("flow source grid differs"));
            }
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParams(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "t_end must be nonnegative, got {t_end}"
            )));
        }
        check_cfl(grid, velocity.max_speed(), dt)?;
        let steps = (t_end / dt + 1e-9).floor() as usize;
        if !velocity.covers(steps) || !source.covers(steps) {
            return Err(Error::InvalidParams(
                "time-sampled inputs do not cover every step".into(),
            ));
        }
        if let Some(fs) = &flow_source {
            if !fs.covers(steps) {
                return Err(Error::InvalidParams(
                    "flow source samples do not cover every step".into(),
                ));
            }
        }
        Ok(Self {
            initial,
            velocity,
            source,
            flow_source,
            dt,
            t_end,
        })
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }
}

/// Full history of a solve: field and flow snapshots at every step plus the
/// macro series (total, flow, velocity, mean risk).
#[derive(Debug, Clone)]
pub struct SolutionTrace {
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
    pub flows: Vec<VectorField>,
    pub totals: Vec<f64>,
    pub flow_totals: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// Mean risk per step; NaN components where the total vanishes.
    pub mean_risks: Vec<Vec<f64>>,
}

impl SolutionTrace {
    /// Macro series CSV: `t,A,P_1..P_n,v_1..v_n,X_1..X_n`.
    pub fn to_csv(&self) -> String {
        let n = self
            .flow_totals
            .first()
            .map(Vec::len)
            .unwrap_or(1);
        let mut out = String::from("t,A");
        for j in 1..=n {
            out.push_str(&format!(",P_{j}"));
        }
        for j in 1..=n {
            out.push_str(&format!(",v_{j}"));
        }
        for j in 1..=n {
            out.push_str(&format!(",X_{j}"));
        }
        out.push('\n');
        for (k, &t) in self.times.iter().enumerate() {
            out.push_str(&fmt_value(t));
            out.push(',');
            out.push_str(&fmt_value(self.totals[k]));
            for &p in &self.flow_totals[k] {
                out.push(',');
                out.push_str(&fmt_value(p));
            }
            for &v in &self.velocities[k] {
                out.push(',');
                out.push_str(&fmt_value(v));
            }
            for &x in &self.mean_risks[k] {
                out.push(',');
                out.push_str(&fmt_value(x));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the explicit solver over the whole horizon, recording the state and
/// the macro reductions at every step (including the initial one).
pub fn solve(problem: &ContinuityProblem) -> Result<SolutionTrace> {
    let steps = problem.steps();
    let grid = problem.initial.grid();
    let n = grid.dim();
    let volume = grid.cell_volume();

    let mut field = problem.initial.clone();
    let mut evolved_flow: Option<VectorField> = None;
    if problem.flow_source.is_some() {
        let v0 = problem
            .velocity
            .at(0)
            .ok_or_else(|| Error::InvalidParams("velocity sample missing at step 0".into()))?;
        let mut components = vec![0.0; grid.num_cells() * n];
        for (idx, out) in components.iter_mut().enumerate() {
            *out = field.values()[idx / n] * v0.components()[idx];
        }
        evolved_flow = Some(VectorField::new(grid, components)?);
    }

    let mut trace = SolutionTrace {
        times: Vec::with_capacity(steps + 1),
        fields: Vec::with_capacity(steps + 1),
        flows: Vec::with_capacity(steps + 1),
        totals: Vec::with_capacity(steps + 1),
        flow_totals: Vec::with_capacity(steps + 1),
        velocities: Vec::with_capacity(steps + 1),
        mean_risks: Vec::with_capacity(steps + 1),
    };

    for step in 0..=steps {
        let t = step as f64 * problem.dt;
        let velocity = problem
            .velocity
            .at(step)
            .ok_or_else(|| Error::InvalidParams(format!("velocity sample missing at step {step}")))?;

        let flow_field = match &evolved_flow {
            Some(p) => p.clone(),
            None => {
                let mut components = vec![0.0; grid.num_cells() * n];
                for (idx, out) in components.iter_mut().enumerate() {
                    *out = field.values()[idx / n] * velocity.components()[idx];
                }
                VectorField::new(grid, components)?
            }
        };

        let total = integrate_field(&field);
        let flow_total = match &evolved_flow {
            Some(p) => {
                let mut acc = vec![0.0; n];
                for chunk in p.components().chunks(n) {
                    for (a, &v) in acc.iter_mut().zip(chunk) {
                        *a += v;
                    }
                }
                acc.into_iter().map(|v| v * volume).collect()
            }
            None => macro_flow(&field, &velocity)?,
        };
        let macro_velocity: Vec<f64> = if total != 0.0 {
            flow_total.iter().map(|p| p / total).collect()
        } else {
            vec![f64::NAN; n]
        };
        let mean_risk = if total != 0.0 {
            crate::domain::mean_risk_of_field(&field).unwrap_or(vec![f64::NAN; n])
        } else {
            vec![f64::NAN; n]
        };

        trace.times.push(t);
        trace.totals.push(total);
        trace.flow_totals.push(flow_total);
        trace.velocities.push(macro_velocity);
        trace.mean_risks.push(mean_risk);
        trace.fields.push(field.clone());
        trace.flows.push(flow_field);

        if step == steps {
            break;
        }

        let source = problem
            .source
            .at(step)
            .ok_or_else(|| Error::InvalidParams(format!("source sample missing at step {step}")))?;
        let next_field = step_variable(&field, &velocity, &source, problem.dt)?;
        if let Some(p) = &evolved_flow {
            let fs = problem
                .flow_source
                .as_ref()
                .expect("evolved flow implies a flow source")
                .at(step)
                .ok_or_else(|| {
                    Error::InvalidParams(format!("flow source sample missing at step {step}"))
                })?;
            evolved_flow = Some(step_flow(p, &velocity, &fs, problem.dt)?);
        }
        field = next_field;
    }
    Ok(trace)
}
