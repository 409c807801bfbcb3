//! The linearized supply-demand cycle.
//!
//! Small disturbances of supply and demand on the one-dimensional risk
//! domain couple through their flows: demand flow toward risk raises supply,
//! supply flow toward risk lowers demand. In the linear regime the velocity
//! moments obey a harmonic oscillator with frequency `omega = sqrt(-alpha*beta)`,
//! and the disturbances, their first moments and the mean-risk disturbances
//! all oscillate at that same frequency.
//!
//! Three mutually validating solution routes are provided:
//! closed-form expressions ([`analytic_state`]), a ten-component moment ODE
//! integrated by classical RK4 ([`integrate_cycle`]), and a spatially
//! resolved PDE whose moments are reduced on the fly ([`spatial_cycle`]).

use crate::domain::Grid;
use crate::error::{Error, Result};
use crate::fmt::fmt_value;

/// Beyond this disturbance magnitude the linearization is no longer trusted;
/// traces carry a warning flag instead of failing.
pub const LINEARITY_LIMIT: f64 = 0.5;

/// Coefficients of the linearized supply-demand model.
///
/// `alpha` (> 0) and `beta` (< 0) couple the velocities of supply and demand
/// to each other; `a` and `b` couple the risk-weighted flows into the
/// disturbance changes (they default to `alpha` and `beta` when nothing else
/// is known). The three amplitudes fix the zeroth, first and second velocity
/// moments of the oscillation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleParams {
    /// Base supply level, > 0.
    pub s0: f64,
    /// Base demand level, > 0.
    pub d0: f64,
    /// Demand-velocity-to-supply-velocity coupling, > 0.
    pub alpha: f64,
    /// Supply-velocity-to-demand-velocity coupling, < 0.
    pub beta: f64,
    /// Demand-flow-to-supply coupling (defaults to `alpha`).
    pub a: f64,
    /// Supply-flow-to-demand coupling (defaults to `beta`).
    pub b: f64,
    /// Amplitude of the supply-velocity moment `v_s`.
    pub v_s0: f64,
    /// Amplitude of the first moment `v_sx`.
    pub v_sx0: f64,
    /// Amplitude of the second moment `v_sx2`.
    pub v_sx20: f64,
}

impl CycleParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        s0: f64,
        d0: f64,
        alpha: f64,
        beta: f64,
        a: f64,
        b: f64,
        v_s0: f64,
        v_sx0: f64,
        v_sx20: f64,
    ) -> Result<Self> {
        let params = Self {
            s0,
            d0,
            alpha,
            beta,
            a,
            b,
            v_s0,
            v_sx0,
            v_sx20,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.s0, self.d0, self.alpha, self.beta, self.a, self.b, self.v_s0, self.v_sx0,
            self.v_sx20,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite cycle parameter".into()));
        }
        if self.s0 <= 0.0 || self.d0 <= 0.0 {
            return Err(Error::InvalidParams(
                "base supply and demand must be positive".into(),
            ));
        }
        if self.alpha * self.beta >= 0.0 {
            return Err(Error::InvalidParams(
                "alpha*beta must be negative".into(),
            ));
        }
        Ok(())
    }

    /// Oscillation frequency, `sqrt(-alpha*beta)`.
    pub fn omega(&self) -> f64 {
        (-(self.alpha * self.beta)).sqrt()
    }

    /// Ratio of every demand cosine amplitude to its supply sine amplitude.
    fn demand_gain(&self) -> f64 {
        self.omega() * self.s0 / (self.alpha * self.d0)
    }
}

/// The ten moments the cycle reduces to: disturbances, their first moments,
/// and the zeroth/first/second velocity moments of both sides.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CycleState {
    /// Supply disturbance `s(t)`.
    pub s: f64,
    /// Demand disturbance `d(t)`.
    pub d: f64,
    /// First moment of the supply disturbance, `integral of x*s`.
    pub f: f64,
    /// First moment of the demand disturbance, `integral of x*d`.
    pub g: f64,
    /// Supply velocity moment `integral of v_s`.
    pub v_s: f64,
    /// Demand velocity moment `integral of v_d`.
    pub v_d: f64,
    /// First supply velocity moment `integral of x*v_s`.
    pub v_sx: f64,
    /// First demand velocity moment `integral of x*v_d`.
    pub v_dx: f64,
    /// Second supply velocity moment `integral of x^2*v_s`.
    pub v_sx2: f64,
    /// Second demand velocity moment `integral of x^2*v_d`.
    pub v_dx2: f64,
}

impl CycleState {
    pub fn to_array(self) -> [f64; 10] {
        [
            self.s, self.d, self.f, self.g, self.v_s, self.v_d, self.v_sx, self.v_dx, self.v_sx2,
            self.v_dx2,
        ]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        Self {
            s: a[0],
            d: a[1],
            f: a[2],
            g: a[3],
            v_s: a[4],
            v_d: a[5],
            v_sx: a[6],
            v_dx: a[7],
            v_sx2: a[8],
            v_dx2: a[9],
        }
    }

    /// Supply mean-risk disturbance, `x_s = 2f - s`.
    pub fn x_s(&self) -> f64 {
        2.0 * self.f - self.s
    }

    /// Demand mean-risk disturbance, `x_d = 2g - d`.
    pub fn x_d(&self) -> f64 {
        2.0 * self.g - self.d
    }

    /// Mean supply risk `X_s = (1 + x_s) / 2`.
    pub fn supply_risk(&self) -> f64 {
        0.5 * (1.0 + self.x_s())
    }

    /// Mean demand risk `X_d = (1 + x_d) / 2`.
    pub fn demand_risk(&self) -> f64 {
        0.5 * (1.0 + self.x_d())
    }
}

/// Closed-form state at time `t`: every moment is a pure sine or cosine at
/// the cycle frequency, with integration constants chosen so the motion is a
/// pure oscillation around the resting state.
///
/// The supply mean-risk disturbance carries the factor `2*v_sx20 - v_sx0`,
/// which follows from `x_s = 2f - s`; see `docs` in the README for why this
/// differs from one printed form.
pub fn analytic_state(params: &CycleParams, t: f64) -> CycleState {
    let omega = params.omega();
    let gain = params.demand_gain();
    let sin = (omega * t).sin();
    let cos = (omega * t).cos();
    let supply_sources = params.a / params.alpha;
    let demand_sources = params.b * params.s0 / (omega * params.d0);
    CycleState {
        v_s: params.v_s0 * sin,
        v_d: gain * params.v_s0 * cos,
        v_sx: params.v_sx0 * sin,
        v_dx: gain * params.v_sx0 * cos,
        v_sx2: params.v_sx20 * sin,
        v_dx2: gain * params.v_sx20 * cos,
        s: supply_sources * params.v_sx0 * sin,
        d: -demand_sources * params.v_sx0 * cos,
        f: supply_sources * params.v_sx20 * sin - params.v_s0 / omega * cos,
        g: params.s0 / (params.alpha * params.d0) * params.v_s0 * sin
            - demand_sources * params.v_sx20 * cos,
    }
}

/// Time derivative of the moment system:
///
/// ```text
/// s'  = (a*D0/S0) * v_dx          d'  = (b*S0/D0) * v_sx
/// f'  = v_s + (a*D0/S0) * v_dx2   g'  = v_d + (b*S0/D0) * v_sx2
/// u'  = (alpha*D0/S0) * w         w'  = (beta*S0/D0) * u
/// ```
///
/// where the last line couples each supply velocity moment `u` to its demand
/// counterpart `w`.
pub fn ode_rhs(state: &CycleState, params: &CycleParams) -> CycleState {
    let velocity_supply = params.alpha * params.d0 / params.s0;
    let velocity_demand = params.beta * params.s0 / params.d0;
    let source_supply = params.a * params.d0 / params.s0;
    let source_demand = params.b * params.s0 / params.d0;
    CycleState {
        s: source_supply * state.v_dx,
        d: source_demand * state.v_sx,
        f: state.v_s + source_supply * state.v_dx2,
        g: state.v_d + source_demand * state.v_sx2,
        v_s: velocity_supply * state.v_d,
        v_d: velocity_demand * state.v_s,
        v_sx: velocity_supply * state.v_dx,
        v_dx: velocity_demand * state.v_sx,
        v_sx2: velocity_supply * state.v_dx2,
        v_dx2: velocity_demand * state.v_sx2,
    }
}

/// A time series of cycle states with the shared time axis.
#[derive(Debug, Clone)]
pub struct CycleTrace {
    pub times: Vec<f64>,
    pub states: Vec<CycleState>,
    /// Set when any |s| or |d| left the small-disturbance regime.
    pub linearity_warning: bool,
}

impl CycleTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Extracts one scalar series from the states.
    pub fn series(&self, pick: impl Fn(&CycleState) -> f64) -> Vec<f64> {
        self.states.iter().map(pick).collect()
    }

    /// Trace CSV with the derived risk columns.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("t,s,d,x_s,x_d,X_s,X_d,v_s,v_d,v_sx,v_dx,v_sx2,v_dx2,f,g\n");
        for (t, st) in self.times.iter().zip(&self.states) {
            let row = [
                *t,
                st.s,
                st.d,
                st.x_s(),
                st.x_d(),
                st.supply_risk(),
                st.demand_risk(),
                st.v_s,
                st.v_d,
                st.v_sx,
                st.v_dx,
                st.v_sx2,
                st.v_dx2,
                st.f,
                st.g,
            ];
            let fields: Vec<String> = row.iter().map(|&v| fmt_value(v)).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

fn rk4_step(state: [f64; 10], params: &CycleParams, dt: f64) -> [f64; 10] {
    let deriv = |y: [f64; 10]| ode_rhs(&CycleState::from_array(y), params).to_array();
    let add = |y: [f64; 10], k: [f64; 10], c: f64| {
        let mut out = y;
        for i in 0..10 {
            out[i] += c * k[i];
        }
        out
    };
    let k1 = deriv(state);
    let k2 = deriv(add(state, k1, dt / 2.0));
    let k3 = deriv(add(state, k2, dt / 2.0));
    let k4 = deriv(add(state, k3, dt));
    let mut out = state;
    for i in 0..10 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Integrates the moment system with classical RK4 from the analytic resting
/// start (all sine moments zero, cosine moments at their peak), recording
/// every step.
pub fn integrate_cycle(params: &CycleParams, dt: f64, t_end: f64) -> Result<CycleTrace> {
    params.validate()?;
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
    let steps = (t_end / dt + 1e-9).floor() as usize;
    let mut state = analytic_state(params, 0.0).to_array();
    let mut trace = CycleTrace {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        linearity_warning: false,
    };
    for step in 0..=steps {
        let cycle_state = CycleState::from_array(state);
        if cycle_state.s.abs() > LINEARITY_LIMIT || cycle_state.d.abs() > LINEARITY_LIMIT {
            trace.linearity_warning = true;
        }
        trace.times.push(step as f64 * dt);
        trace.states.push(cycle_state);
        if step < steps {
            state = rk4_step(state, params, dt);
        }
    }
    Ok(trace)
}

/// Largest absolute deviation of any of the ten series from the closed form,
/// over the whole trace.
pub fn max_error_vs_analytic(trace: &CycleTrace, params: &CycleParams) -> f64 {
    let mut worst = 0.0f64;
    for (t, st) in trace.times.iter().zip(&trace.states) {
        let exact = analytic_state(params, *t).to_array();
        for (a, b) in st.to_array().iter().zip(exact) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Frequency estimate from linear-interpolated zero crossings: consecutive
/// crossings of a sinusoid are half a period apart.
///
/// Needs at least three sign changes; exact zero samples sandwiched between
/// opposite signs count as crossings at their own time.
pub fn estimate_frequency(series: &[f64], times: &[f64]) -> Result<f64> {
    if series.len() != times.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            actual: series.len(),
        });
    }
    let mut crossings: Vec<f64> = Vec::new();
    let mut prev: Option<usize> = None;
    for (i, &y) in series.iter().enumerate() {
        if y == 0.0 {
            continue;
        }
        if let Some(p) = prev {
            if (series[p] > 0.0) != (y > 0.0) {
                let t_cross = if i == p + 1 {
                    // Linear interpolation inside one sample interval.
                    let y0 = series[p];
                    let y1 = y;
                    times[p] + (times[i] - times[p]) * (y0 / (y0 - y1))
                } else {
                    // A run of exact zeros separates the signs; its midpoint
                    // is the crossing.
                    let zero_times = &times[p + 1..i];
                    zero_times.iter().sum::<f64>() / zero_times.len() as f64
                };
                crossings.push(t_cross);
            }
        }
        prev = Some(i);
    }
    if crossings.len() < 3 {
        return Err(Error::InsufficientOscillation {
            found: crossings.len(),
            required: 3,
        });
    }
    let spacings: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_spacing = spacings.iter().sum::<f64>() / spacings.len() as f64;
    Ok(std::f64::consts::PI / mean_spacing)
}

/// Initial spatial profiles for [`spatial_cycle`].
///
/// The velocity profiles must vanish at both endpoints; that is what lets
/// the moment reduction drop its boundary terms.
#[derive(Debug, Clone, Copy)]
pub enum SpatialProfile {
    /// Default construction: the demand velocity is a three-mode sine series
    /// whose zeroth/first/second moments hit the analytic start exactly, the
    /// supply velocity starts at rest, and the disturbance profiles are the
    /// linear functions matching the analytic zeroth and first moments.
    MomentMatched,
    /// Explicit profiles evaluated at cell centers. Velocities are endpoint
    /// checked; the disturbances carry no spatial derivative and are free.
    Custom {
        supply_velocity: fn(f64) -> f64,
        demand_velocity: fn(f64) -> f64,
        supply: fn(f64) -> f64,
        demand: fn(f64) -> f64,
    },
}

/// Field snapshot of the spatial solver at one instant.
#[derive(Debug, Clone)]
pub struct SpatialSnapshot {
    pub time: f64,
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    pub supply_velocity: Vec<f64>,
    pub demand_velocity: Vec<f64>,
}

/// Result of a spatial run: the moment trace plus optional field snapshots.
#[derive(Debug, Clone)]
pub struct SpatialCycle {
    pub trace: CycleTrace,
    pub snapshots: Vec<SpatialSnapshot>,
}

/// Moments of `sin(k*pi*x)` on `[0, 1]` against 1, x and x^2.
fn sine_moments(k: usize) -> [f64; 3] {
    let a = k as f64 * std::f64::consts::PI;
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    [
        (1.0 - sign) / a,
        -sign / a,
        -sign / a + 2.0 * (sign - 1.0) / (a * a * a),
    ]
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col].abs() < 1e-14 {
            return Err(Error::InvalidParams("singular profile system".into()));
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let factor = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Ok(x)
}

struct SpatialFields {
    supply: Vec<f64>,
    demand: Vec<f64>,
    supply_velocity: Vec<f64>,
    demand_velocity: Vec<f64>,
}

fn build_profiles(
    params: &CycleParams,
    grid: Grid,
    profile: &SpatialProfile,
) -> Result<SpatialFields> {
    let m = grid.num_cells();
    let centers: Vec<f64> = (0..m).map(|k| grid.axis_center(k)).collect();
    match profile {
        SpatialProfile::MomentMatched => {
            let omega = params.omega();
            let gain = params.demand_gain();
            // Demand velocity: three sine modes matching the analytic
            // zeroth/first/second moments at t = 0.
            let matrix = [
                [sine_moments(1)[0], sine_moments(2)[0], sine_moments(3)[0]],
                [sine_moments(1)[1], sine_moments(2)[1], sine_moments(3)[1]],
                [sine_moments(1)[2], sine_moments(2)[2], sine_moments(3)[2]],
            ];
            let targets = [
                gain * params.v_s0,
                gain * params.v_sx0,
                gain * params.v_sx20,
            ];
            let c = solve3(matrix, targets)?;
            let demand_velocity = centers
                .iter()
                .map(|&x| {
                    (1..=3)
                        .map(|k| c[k - 1] * (k as f64 * std::f64::consts::PI * x).sin())
                        .sum()
                })
                .collect();
            // Linear profiles pinning both the zeroth and first moments of
            // the disturbances to the analytic start.
            let start = analytic_state(params, 0.0);
            let supply_slope = 12.0 * start.f;
            let supply_offset = -6.0 * start.f;
            let demand_slope = 12.0 * start.g - 6.0 * start.d;
            let demand_offset = 4.0 * start.d - 6.0 * start.g;
            Ok(SpatialFields {
                supply: centers
                    .iter()
                    .map(|&x| supply_offset + supply_slope * x)
                    .collect(),
                demand: centers
                    .iter()
                    .map(|&x| demand_offset + demand_slope * x)
                    .collect(),
                supply_velocity: vec![0.0; m],
                demand_velocity,
            })
        }
        SpatialProfile::Custom {
            supply_velocity,
            demand_velocity,
            supply,
            demand,
        } => {
            for endpoint in [0.0, 1.0] {
                for fun in [supply_velocity, demand_velocity] {
                    let value = fun(endpoint);
                    if value.abs() > 1e-12 {
                        return Err(Error::ProfileBoundaryViolation {
                            x: endpoint,
                            value: value.abs(),
                        });
                    }
                }
            }
            Ok(SpatialFields {
                supply: centers.iter().map(|&x| supply(x)).collect(),
                demand: centers.iter().map(|&x| demand(x)).collect(),
                supply_velocity: centers.iter().map(|&x| supply_velocity(x)).collect(),
                demand_velocity: centers.iter().map(|&x| demand_velocity(x)).collect(),
            })
        }
    }
}

/// Evolves the spatially resolved linearized system and reduces its moments
/// every step.
///
/// The velocity fields have no transport term and oscillate harmonically in
/// place; the disturbances gain the conservative face difference of the
/// velocity profile plus the pointwise risk-weighted source. Time stepping
/// is RK4, so the moment trace deviates from [`integrate_cycle`] only by the
/// second-order midpoint quadrature of the profiles.
pub fn spatial_cycle(
    params: &CycleParams,
    grid: Grid,
    profile: &SpatialProfile,
    dt: f64,
    t_end: f64,
    snapshot_every: Option<usize>,
) -> Result<SpatialCycle> {
    params.validate()?;
    if grid.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: grid.dim(),
        });
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

    let fields = build_profiles(params, grid, profile)?;
    let m = grid.num_cells();
    let omega = params.omega();
    let velocity_supply = params.alpha * params.d0 / params.s0;
    let velocity_demand = params.beta * params.s0 / params.d0;
    let source_supply = params.a * params.d0 / params.s0;
    let source_demand = params.b * params.s0 / params.d0;

    // Harmonic envelope per cell bounds the velocity for all time, which
    // gives an a-priori CFL check.
    let mut peak: f64 = 0.0;
    for k in 0..m {
        let vs = fields.supply_velocity[k];
        let vd = fields.demand_velocity[k];
        let amp_s = (vs * vs + (velocity_supply * vd / omega).powi(2)).sqrt();
        let amp_d = (vd * vd + (velocity_demand * vs / omega).powi(2)).sqrt();
        peak = peak.max(amp_s).max(amp_d);
    }
    if peak > 0.0 {
        let limit = 0.5 * grid.h() / peak;
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
    }

    // State layout: [s | d | v_s | v_d], each of length m.
    let mut state = Vec::with_capacity(4 * m);
    state.extend_from_slice(&fields.supply);
    state.extend_from_slice(&fields.demand);
    state.extend_from_slice(&fields.supply_velocity);
    state.extend_from_slice(&fields.demand_velocity);

    let centers: Vec<f64> = (0..m).map(|k| grid.axis_center(k)).collect();
    let inv_h = m as f64;
    let derivative = |y: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.resize(4 * m, 0.0);
        // The disturbances never feed back: only the velocity blocks drive
        // the derivative.
        let vs = &y[2 * m..3 * m];
        let vd = &y[3 * m..4 * m];
        // Face value of a velocity profile left of cell k; both walls carry
        // zero because the profiles vanish there.
        let face = |v: &[f64], k: usize| -> f64 {
            if k == 0 || k == m {
                0.0
            } else {
                0.5 * (v[k - 1] + v[k])
            }
        };
        for k in 0..m {
            let x = centers[k];
            out[k] = -(face(vs, k + 1) - face(vs, k)) * inv_h + source_supply * x * vd[k];
            out[m + k] = -(face(vd, k + 1) - face(vd, k)) * inv_h + source_demand * x * vs[k];
            out[2 * m + k] = velocity_supply * vd[k];
            out[3 * m + k] = velocity_demand * vs[k];
        }
    };

    let steps = (t_end / dt + 1e-9).floor() as usize;
    let mut trace = CycleTrace {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        linearity_warning: false,
    };
    let mut snapshots = Vec::new();

    let h = grid.h();
    let reduce = |y: &[f64]| -> CycleState {
        let moment = |offset: usize, weight: &dyn Fn(f64) -> f64| -> f64 {
            (0..m).map(|k| weight(centers[k]) * y[offset + k]).sum::<f64>() * h
        };
        let one = |_x: f64| 1.0;
        let x1 = |x: f64| x;
        let x2 = |x: f64| x * x;
        CycleState {
            s: moment(0, &one),
            d: moment(m, &one),
            f: moment(0, &x1),
            g: moment(m, &x1),
            v_s: moment(2 * m, &one),
            v_d: moment(3 * m, &one),
            v_sx: moment(2 * m, &x1),
            v_dx: moment(3 * m, &x1),
            v_sx2: moment(2 * m, &x2),
            v_dx2: moment(3 * m, &x2),
        }
    };

    let mut k1 = Vec::new();
    let mut k2 = Vec::new();
    let mut k3 = Vec::new();
    let mut k4 = Vec::new();
    let mut scratch = vec![0.0; 4 * m];

    for step in 0..=steps {
        let t = step as f64 * dt;
        let moments = reduce(&state);
        if moments.s.abs() > LINEARITY_LIMIT || moments.d.abs() > LINEARITY_LIMIT {
            trace.linearity_warning = true;
        }
        trace.times.push(t);
        trace.states.push(moments);
        if let Some(every) = snapshot_every {
            if every > 0 && step % every == 0 {
                snapshots.push(SpatialSnapshot {
                    time: t,
                    supply: state[..m].to_vec(),
                    demand: state[m..2 * m].to_vec(),
                    supply_velocity: state[2 * m..3 * m].to_vec(),
                    demand_velocity: state[3 * m..].to_vec(),
                });
            }
        }
        if step == steps {
            break;
        }

        derivative(&state, &mut k1);
        for i in 0..4 * m {
            scratch[i] = state[i] + 0.5 * dt * k1[i];
        }
        derivative(&scratch, &mut k2);
        for i in 0..4 * m {
            scratch[i] = state[i] + 0.5 * dt * k2[i];
        }
        derivative(&scratch, &mut k3);
        for i in 0..4 * m {
            scratch[i] = state[i] + dt * k3[i];
        }
        derivative(&scratch, &mut k4);
        for i in 0..4 * m {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    Ok(SpatialCycle { trace, snapshots })
}
