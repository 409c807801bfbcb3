//! The microscopic layer: agents moving in the risk domain.
//!
//! Each agent carries a position (its risk rating), a velocity in grades per
//! year, and a map of named additive variables. Aggregating amounts per grid
//! cell produces the collective fields of [`crate::domain`]; summing exactly
//! over agents produces macro totals, flows and mean risks without grid
//! quantization. Both routes are provided because they answer different
//! questions and differ by at most half a cell width.

use crate::domain::{FieldOps, Grid, MacroState, RiskPoint, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::fmt::fmt_value;
use crate::transitions::TransitionMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// One economic agent: position in the risk domain, migration velocity and
/// named additive variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u64,
    pub position: RiskPoint,
    /// Velocity in grades per year, one component per risk dimension.
    pub velocity: Vec<f64>,
    pub variables: BTreeMap<String, f64>,
}

impl Agent {
    pub fn new(
        id: u64,
        position: RiskPoint,
        velocity: Vec<f64>,
        variables: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if velocity.len() != position.dim() {
            return Err(Error::DimensionMismatch {
                expected: position.dim(),
                actual: velocity.len(),
            });
        }
        if velocity.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite agent velocity".into()));
        }
        if variables.values().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite variable amount".into()));
        }
        Ok(Self {
            id,
            position,
            velocity,
            variables,
        })
    }

    pub fn amount(&self, name: &str) -> f64 {
        self.variables.get(name).copied().unwrap_or(0.0)
    }
}

/// A population of agents with a reproducibility seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    agents: Vec<Agent>,
    rng_seed: u64,
}

impl Population {
    pub fn new(agents: Vec<Agent>, rng_seed: u64) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let dim = agents.first().map(|a| a.position.dim());
        for agent in &agents {
            if !ids.insert(agent.id) {
                return Err(Error::InvalidParams(format!(
                    "duplicate agent id {}",
                    agent.id
                )));
            }
            if Some(agent.position.dim()) != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim.unwrap_or(1),
                    actual: agent.position.dim(),
                });
            }
        }
        Ok(Self { agents, rng_seed })
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    /// Risk-space dimension, `None` for an empty population.
    pub fn dim(&self) -> Option<usize> {
        self.agents.first().map(|a| a.position.dim())
    }

    /// Draws a population from the spec: i.i.d. positions, configured
    /// amounts, zero velocities. Identical specs give bit-identical
    /// populations.
    pub fn generate(spec: &PopulationSpec) -> Result<Population> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut agents = Vec::with_capacity(spec.count);
        for id in 0..spec.count {
            let coords = spec.positions.sample(spec.dim, &mut rng);
            let mut variables = BTreeMap::new();
            for (name, amount) in &spec.variables {
                variables.insert(name.clone(), amount.sample(&mut rng));
            }
            agents.push(Agent::new(
                id as u64,
                RiskPoint::new(coords)?,
                vec![0.0; spec.dim],
                variables,
            )?);
        }
        Population::new(agents, spec.seed)
    }

    /// Sets every agent's velocity to the matrix drift at its nearest grade.
    /// One-dimensional populations only.
    pub fn set_velocities_from_matrix(&mut self, matrix: &TransitionMatrix) -> Result<()> {
        if self.dim().unwrap_or(1) != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: self.dim().unwrap_or(0),
            });
        }
        for agent in &mut self.agents {
            let grade = matrix.scale().nearest(agent.position.coords()[0]);
            agent.velocity = vec![matrix.mean_velocity(grade)?];
        }
        Ok(())
    }

    /// Draws one migration per agent from its nearest grade's row and sets
    /// the velocity that covers the sampled displacement over the horizon.
    /// Meant to be re-drawn at horizon boundaries.
    pub fn sample_velocities_from_matrix(
        &mut self,
        matrix: &TransitionMatrix,
        rng: &mut impl Rng,
    ) -> Result<()> {
        if self.dim().unwrap_or(1) != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: self.dim().unwrap_or(0),
            });
        }
        for agent in &mut self.agents {
            let from = matrix.scale().nearest(agent.position.coords()[0]);
            let to = matrix.sample_destination(from, rng)?;
            agent.velocity = vec![matrix.pair_velocity(from, to)?];
        }
        Ok(())
    }

    /// Sets every agent's velocity to the shared field sampled at the
    /// agent's cell.
    pub fn set_velocities_from_field(&mut self, field: &VectorField) -> Result<()> {
        for agent in &mut self.agents {
            let cell = field.grid().cell_of(agent.position.coords())?;
            agent.velocity = field.vector(cell).to_vec();
        }
        Ok(())
    }

    /// Snapshot CSV: `id,x_1..x_n,v_1..v_n,<var1>,...` with variable columns
    /// sorted by name.
    pub fn to_csv(&self) -> String {
        let n = self.dim().unwrap_or(1);
        let names: BTreeSet<&str> = self
            .agents
            .iter()
            .flat_map(|a| a.variables.keys().map(String::as_str))
            .collect();
        let mut out = String::from("id");
        for j in 1..=n {
            out.push_str(&format!(",x_{j}"));
        }
        for j in 1..=n {
            out.push_str(&format!(",v_{j}"));
        }
        for name in &names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for agent in &self.agents {
            out.push_str(&agent.id.to_string());
            for &x in agent.position.coords() {
                out.push(',');
                out.push_str(&fmt_value(x));
            }
            for &v in &agent.velocity {
                out.push(',');
                out.push_str(&fmt_value(v));
            }
            for name in &names {
                out.push(',');
                out.push_str(&fmt_value(agent.amount(name)));
            }
            out.push('\n');
        }
        out
    }

    /// Parses a snapshot CSV produced by [`Population::to_csv`].
    pub fn from_csv(text: &str, seed: u64) -> Result<Population> {
        let parse_err = |line: usize, column: usize, message: String| Error::Parse {
            line,
            column,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, 1, "empty snapshot".into()))?;
        let columns: Vec<&str> = header.split(',').collect();
        if columns.first() != Some(&"id") {
            return Err(parse_err(1, 1, "header must start with 'id'".into()));
        }
        let n = columns.iter().filter(|c| c.starts_with("x_")).count();
        let v = columns.iter().filter(|c| c.starts_with("v_")).count();
        if n == 0 || v != n {
            return Err(parse_err(
                1,
                2,
                format!("header needs matching x_1..x_n and v_1..v_n, found {n} and {v}"),
            ));
        }
        let var_names: Vec<String> = columns[1 + 2 * n..].iter().map(|s| s.to_string()).collect();
        let mut agents = Vec::new();
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns.len() {
                return Err(parse_err(
                    line_no + 1,
                    fields.len().min(columns.len()) + 1,
                    format!("row has {} fields, expected {}", fields.len(), columns.len()),
                ));
            }
            let mut parse_f64 = |col: usize| -> Result<f64> {
                fields[col].trim().parse().map_err(|_| {
                    parse_err(
                        line_no + 1,
                        col + 1,
                        format!("invalid number '{}'", fields[col]),
                    )
                })
            };
            let id: u64 = fields[0].trim().parse().map_err(|_| {
                parse_err(line_no + 1, 1, format!("invalid id '{}'", fields[0]))
            })?;
            let coords: Vec<f64> = (0..n).map(|j| parse_f64(1 + j)).collect::<Result<_>>()?;
            let velocity: Vec<f64> = (0..n)
                .map(|j| parse_f64(1 + n + j))
                .collect::<Result<_>>()?;
            let mut variables = BTreeMap::new();
            for (k, name) in var_names.iter().enumerate() {
                variables.insert(name.clone(), parse_f64(1 + 2 * n + k)?);
            }
            let position = RiskPoint::new(coords)
                .map_err(|e| parse_err(line_no + 1, 2, e.to_string()))?;
            agents.push(Agent::new(id, position, velocity, variables)?);
        }
        Population::new(agents, seed)
    }
}

/// Where the velocity used by a population step comes from.
#[derive(Debug, Clone, Copy)]
pub enum VelocitySource<'a> {
    /// Use each agent's stored velocity.
    Stored,
    /// Sample a shared field at each agent's cell.
    Field(&'a VectorField),
}

/// What happens at the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Stop at the wall: clamp the position and zero that velocity component.
    Clamp,
    /// Bounce off the wall: mirror the position and flip that component.
    Reflect,
}

/// Advances every agent by one explicit Euler step of length `dt` years.
///
/// Positions stay inside the unit cube. Under [`Boundary::Clamp`] an agent
/// hitting a wall sticks to it and loses that velocity component; under
/// [`Boundary::Reflect`] it bounces back with the component negated. The
/// effective velocity (after boundary handling) is written back to the
/// agent so snapshots and flow aggregates reflect the actual motion.
pub fn step_population(
    pop: &Population,
    source: VelocitySource,
    boundary: Boundary,
    dt: f64,
) -> Result<Population> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParams(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let mut agents = pop.agents.clone();
    for agent in &mut agents {
        let velocity = match source {
            VelocitySource::Stored => agent.velocity.clone(),
            VelocitySource::Field(field) => {
                let cell = field.grid().cell_of(agent.position.coords())?;
                field.vector(cell).to_vec()
            }
        };
        if velocity.len() != agent.position.dim() {
            return Err(Error::DimensionMismatch {
                expected: agent.position.dim(),
                actual: velocity.len(),
            });
        }
        let mut coords = agent.position.coords().to_vec();
        let mut effective = velocity;
        for (j, x) in coords.iter_mut().enumerate() {
            let mut moved = *x + effective[j] * dt;
            match boundary {
                Boundary::Clamp => {
                    if moved <= 0.0 {
                        moved = moved.max(0.0);
                        if moved == 0.0 && effective[j] < 0.0 {
                            effective[j] = 0.0;
                        }
                    }
                    if moved >= 1.0 {
                        moved = moved.min(1.0);
                        if moved == 1.0 && effective[j] > 0.0 {
                            effective[j] = 0.0;
                        }
                    }
                }
                Boundary::Reflect => {
                    while moved < 0.0 || moved > 1.0 {
                        if moved < 0.0 {
                            moved = -moved;
                            effective[j] = -effective[j];
                        }
                        if moved > 1.0 {
                            moved = 2.0 - moved;
                            effective[j] = -effective[j];
                        }
                    }
                }
            }
            *x = moved;
        }
        agent.position = RiskPoint::new(coords)?;
        agent.velocity = effective;
    }
    Population::new(agents, pop.rng_seed)
}

/// Per-cell sum of one named variable at this instant, before any time
/// averaging. Agents without the variable contribute zero.
pub fn instantaneous_variable(pop: &Population, grid: Grid, name: &str) -> Result<ScalarField> {
    check_dim(pop, grid)?;
    let mut field = ScalarField::zeros(grid, name, "");
    for agent in pop.agents() {
        let cell = grid.cell_of(agent.position.coords())?;
        field.values_mut()[cell] += agent.amount(name);
    }
    Ok(field)
}

/// Per-cell sum of amount times velocity at this instant.
pub fn instantaneous_flow(pop: &Population, grid: Grid, name: &str) -> Result<VectorField> {
    check_dim(pop, grid)?;
    let n = grid.dim();
    let mut flow = VectorField::zeros(grid);
    for agent in pop.agents() {
        let cell = grid.cell_of(agent.position.coords())?;
        let amount = agent.amount(name);
        for j in 0..n {
            flow.components_mut()[cell * n + j] += amount * agent.velocity[j];
        }
    }
    Ok(flow)
}

fn check_dim(pop: &Population, grid: Grid) -> Result<()> {
    if let Some(dim) = pop.dim() {
        if dim != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                actual: dim,
            });
        }
    }
    Ok(())
}

/// Sliding box average over the last `span` instantaneous fields.
///
/// Observations of economic variables always smooth over some interval; the
/// window holds the most recent snapshots and averages whatever it has, so
/// early steps average over a partial buffer.
#[derive(Debug, Clone)]
pub struct AveragingWindow<F: FieldOps> {
    span: usize,
    buffer: VecDeque<F>,
}

impl<F: FieldOps> AveragingWindow<F> {
    pub fn new(span: usize) -> Result<Self> {
        if span == 0 {
            return Err(Error::InvalidParams("averaging span must be >= 1".into()));
        }
        Ok(Self {
            span,
            buffer: VecDeque::with_capacity(span),
        })
    }

    pub fn span(&self) -> usize {
        self.span
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn push(&mut self, field: F) {
        if self.buffer.len() == self.span {
            self.buffer.pop_front();
        }
        self.buffer.push_back(field);
    }

    /// Uniform average of the buffered fields, `None` while empty.
    pub fn average(&self) -> Option<Result<F>> {
        let first = self.buffer.front()?;
        let mut acc = first.clone();
        for field in self.buffer.iter().skip(1) {
            if let Err(e) = acc.add_assign_field(field) {
                return Some(Err(e));
            }
        }
        acc.scale(1.0 / self.buffer.len() as f64);
        Some(Ok(acc))
    }
}

/// Aggregates one named variable to a grid field and box-averages it over
/// the window: pushes this instant's field, returns the running average.
pub fn aggregate_variable(
    pop: &Population,
    grid: Grid,
    name: &str,
    window: &mut AveragingWindow<ScalarField>,
) -> Result<ScalarField> {
    window.push(instantaneous_variable(pop, grid, name)?);
    window.average().expect("window just received a field")
}

/// Aggregates the flow of one named variable, box-averaged like
/// [`aggregate_variable`].
pub fn aggregate_flow(
    pop: &Population,
    grid: Grid,
    name: &str,
    window: &mut AveragingWindow<VectorField>,
) -> Result<VectorField> {
    window.push(instantaneous_flow(pop, grid, name)?);
    window.average().expect("window just received a field")
}

/// Exact macro state of one variable from raw agent data: total, flow,
/// velocity and mean risk with no grid quantization.
///
/// Fails with `ZeroMass` when the amounts sum to zero, which leaves the
/// velocity and mean risk undefined.
pub fn macro_of(pop: &Population, name: &str) -> Result<MacroState> {
    let dim = pop.dim().ok_or(Error::ZeroMass("empty population"))?;
    let mut total = 0.0;
    let mut flow = vec![0.0; dim];
    let mut weighted = vec![0.0; dim];
    for agent in pop.agents() {
        let amount = agent.amount(name);
        total += amount;
        for j in 0..dim {
            flow[j] += amount * agent.velocity[j];
            weighted[j] += amount * agent.position.coords()[j];
        }
    }
    if total == 0.0 {
        return Err(Error::ZeroMass("variable amounts sum to zero"));
    }
    let velocity: Vec<f64> = flow.iter().map(|f| f / total).collect();
    let mean_risk: Vec<f64> = weighted.iter().map(|w| w / total).collect();
    Ok(MacroState {
        total,
        flow,
        velocity,
        mean_risk,
    })
}

/// Initial-position distribution for generated populations.
#[derive(Debug, Clone, PartialEq)]
pub enum PositionDistribution {
    /// Uniform over the unit cube.
    Uniform,
    /// Gaussian truncated to the cube by rejection, componentwise.
    TruncatedGaussian { mean: Vec<f64>, sigma: f64 },
}

impl PositionDistribution {
    fn sample(&self, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            PositionDistribution::Uniform => (0..dim).map(|_| rng.random::<f64>()).collect(),
            PositionDistribution::TruncatedGaussian { mean, sigma } => (0..dim)
                .map(|j| {
                    let mu = mean[j];
                    for _ in 0..10_000 {
                        let x = mu + sigma * standard_normal(rng);
                        if (0.0..=1.0).contains(&x) {
                            return x;
                        }
                    }
                    mu.clamp(0.0, 1.0)
                })
                .collect(),
        }
    }
}

/// Box-Muller without caching the second draw, to keep the stream simple.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// How an agent's variable amount is drawn at generation time.
#[derive(Debug, Clone, PartialEq)]
pub enum AmountSpec {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
}

impl AmountSpec {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            AmountSpec::Constant(v) => *v,
            AmountSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Recipe for a reproducible random population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub count: usize,
    pub dim: usize,
    pub positions: PositionDistribution,
    pub variables: BTreeMap<String, AmountSpec>,
    pub seed: u64,
}

impl PopulationSpec {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParams("dimension must be >= 1".into()));
        }
        if let PositionDistribution::TruncatedGaussian { mean, sigma } = &self.positions {
            if mean.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: mean.len(),
                });
            }
            if mean.iter().any(|m| !(0.0..=1.0).contains(m)) {
                return Err(Error::InvalidParams(
                    "gaussian mean must lie in the unit cube".into(),
                ));
            }
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "gaussian sigma must be positive, got {sigma}"
                )));
            }
        }
        for (name, spec) in &self.variables {
            if let AmountSpec::Uniform { lo, hi } = spec {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidParams(format!(
                        "variable '{name}' has an invalid uniform range [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}
