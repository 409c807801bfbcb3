//! Buy-sell transactions on the doubled seller x buyer domain.
//!
//! A trade couples a seller at risk position `x` with a buyer at `y`, so
//! collective trade data lives on the unit cube of dimension `2n` with
//! coordinates `z = (x, y)`. Each trade carries an amount traded (volume) and
//! a payment (value); both sides of a deal settle simultaneously, so one
//! record holds both. Seller motion transports volume and value along the
//! seller axes, buyer motion along the buyer axes, which gives four distinct
//! flows, four velocities and four mean risks.

use crate::agents::AveragingWindow;
use crate::domain::{FieldOps, Grid, RiskPoint, ScalarField};
use crate::error::{Error, Result};
use crate::fmt::fmt_value;

/// One executed deal: seller and buyer positions, the traded volume and the
/// paid value, plus the endpoint velocities at trade time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trade {
    seller_pos: RiskPoint,
    buyer_pos: RiskPoint,
    volume: f64,
    value: f64,
    seller_vel: Vec<f64>,
    buyer_vel: Vec<f64>,
}

impl Trade {
    pub fn new(
        seller_pos: RiskPoint,
        buyer_pos: RiskPoint,
        volume: f64,
        value: f64,
        seller_vel: Vec<f64>,
        buyer_vel: Vec<f64>,
    ) -> Result<Self> {
        if buyer_pos.dim() != seller_pos.dim() {
            return Err(Error::DimensionMismatch {
                expected: seller_pos.dim(),
                actual: buyer_pos.dim(),
            });
        }
        if seller_vel.len() != seller_pos.dim() || buyer_vel.len() != seller_pos.dim() {
            return Err(Error::DimensionMismatch {
                expected: seller_pos.dim(),
                actual: seller_vel.len().max(buyer_vel.len()),
            });
        }
        if !(volume.is_finite() && volume >= 0.0 && value.is_finite() && value >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "volume and value must be finite and nonnegative, got {volume} and {value}"
            )));
        }
        if seller_vel.iter().chain(&buyer_vel).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite trade velocity".into()));
        }
        Ok(Self {
            seller_pos,
            buyer_pos,
            volume,
            value,
            seller_vel,
            buyer_vel,
        })
    }

    pub fn seller_pos(&self) -> &RiskPoint {
        &self.seller_pos
    }

    pub fn buyer_pos(&self) -> &RiskPoint {
        &self.buyer_pos
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn dim(&self) -> usize {
        self.seller_pos.dim()
    }
}

/// Collective trade data on the doubled domain: per-cell volume and value
/// plus the four axis flows (volume/value moved by seller/buyer motion).
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionField {
    /// Grid over dimension `2n`; the first `n` axes are the seller's.
    pair_grid: Grid,
    side_dim: usize,
    volume: Vec<f64>,
    value: Vec<f64>,
    /// Flows flattened as `cell * side_dim + component`.
    volume_flow_seller: Vec<f64>,
    volume_flow_buyer: Vec<f64>,
    value_flow_seller: Vec<f64>,
    value_flow_buyer: Vec<f64>,
}

impl TransactionField {
    fn zeros(side_grid: Grid) -> Result<Self> {
        let n = side_grid.dim();
        let pair_grid = Grid::new(2 * n, side_grid.cells_per_axis())?;
        let cells = pair_grid.num_cells();
        Ok(Self {
            pair_grid,
            side_dim: n,
            volume: vec![0.0; cells],
            value: vec![0.0; cells],
            volume_flow_seller: vec![0.0; cells * n],
            volume_flow_buyer: vec![0.0; cells * n],
            value_flow_seller: vec![0.0; cells * n],
            value_flow_buyer: vec![0.0; cells * n],
        })
    }

    pub fn pair_grid(&self) -> Grid {
        self.pair_grid
    }

    /// Dimension of one side of the market (`n`, half the grid dimension).
    pub fn side_dim(&self) -> usize {
        self.side_dim
    }

    /// Grid of one side of the market.
    pub fn side_grid(&self) -> Grid {
        Grid::new(self.side_dim, self.pair_grid.cells_per_axis())
            .expect("side grid parameters were validated at construction")
    }

    pub fn volume(&self) -> &[f64] {
        &self.volume
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn volume_flow_seller(&self) -> &[f64] {
        &self.volume_flow_seller
    }

    pub fn volume_flow_buyer(&self) -> &[f64] {
        &self.volume_flow_buyer
    }

    pub fn value_flow_seller(&self) -> &[f64] {
        &self.value_flow_seller
    }

    pub fn value_flow_buyer(&self) -> &[f64] {
        &self.value_flow_buyer
    }
}

impl FieldOps for TransactionField {
    fn add_assign_field(&mut self, other: &Self) -> Result<()> {
        if self.pair_grid != other.pair_grid {
            return Err(Error::GridMismatch(
                "cannot add transaction fields on different grids",
            ));
        }
        let pairs = [
            (&mut self.volume, &other.volume),
            (&mut self.value, &other.value),
            (&mut self.volume_flow_seller, &other.volume_flow_seller),
            (&mut self.volume_flow_buyer, &other.volume_flow_buyer),
            (&mut self.value_flow_seller, &other.value_flow_seller),
            (&mut self.value_flow_buyer, &other.value_flow_buyer),
        ];
        for (mine, theirs) in pairs {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        for arr in [
            &mut self.volume,
            &mut self.value,
            &mut self.volume_flow_seller,
            &mut self.volume_flow_buyer,
            &mut self.value_flow_seller,
            &mut self.value_flow_buyer,
        ] {
            for v in arr.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Macro view of the whole market: totals, the four flows, and where
/// defined the four velocities and four mean risks. Quantities that divide
/// by a zero total are `None` instead of failing the whole reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionMacro {
    pub volume_total: f64,
    pub value_total: f64,
    pub volume_flow_seller: Vec<f64>,
    pub volume_flow_buyer: Vec<f64>,
    pub value_flow_seller: Vec<f64>,
    pub value_flow_buyer: Vec<f64>,
    pub volume_velocity_seller: Option<Vec<f64>>,
    pub volume_velocity_buyer: Option<Vec<f64>>,
    pub value_velocity_seller: Option<Vec<f64>>,
    pub value_velocity_buyer: Option<Vec<f64>>,
    pub volume_risk_seller: Option<Vec<f64>>,
    pub volume_risk_buyer: Option<Vec<f64>>,
    pub value_risk_seller: Option<Vec<f64>>,
    pub value_risk_buyer: Option<Vec<f64>>,
}

/// Per-cell sums of a batch of trades at this instant, before averaging.
pub fn instantaneous_trades(trades: &[Trade], side_grid: Grid) -> Result<TransactionField> {
    let mut field = TransactionField::zeros(side_grid)?;
    let n = side_grid.dim();
    for trade in trades {
        if trade.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: trade.dim(),
            });
        }
        let z = RiskPoint::pair(&trade.seller_pos, &trade.buyer_pos);
        let cell = field.pair_grid.cell_of(z.coords())?;
        field.volume[cell] += trade.volume;
        field.value[cell] += trade.value;
        for j in 0..n {
            field.volume_flow_seller[cell * n + j] += trade.volume * trade.seller_vel[j];
            field.volume_flow_buyer[cell * n + j] += trade.volume * trade.buyer_vel[j];
            field.value_flow_seller[cell * n + j] += trade.value * trade.seller_vel[j];
            field.value_flow_buyer[cell * n + j] += trade.value * trade.buyer_vel[j];
        }
    }
    Ok(field)
}

/// Aggregates trades to the doubled domain and box-averages over the window,
/// like the agent-variable aggregation.
pub fn aggregate_trades(
    trades: &[Trade],
    side_grid: Grid,
    window: &mut AveragingWindow<TransactionField>,
) -> Result<TransactionField> {
    window.push(instantaneous_trades(trades, side_grid)?);
    window.average().expect("window just received a field")
}

/// Integrates out the buyer coordinates: total volume and value sold from
/// each seller cell, as fields on the seller grid.
pub fn marginal_sales(field: &TransactionField) -> Result<(ScalarField, ScalarField)> {
    let side_grid = field.side_grid();
    let side_cells = side_grid.num_cells();
    let weight = side_grid.cell_volume();
    let mut volume = vec![0.0; side_cells];
    let mut value = vec![0.0; side_cells];
    for x_cell in 0..side_cells {
        let base = x_cell * side_cells;
        let mut u = 0.0;
        let mut c = 0.0;
        for y_cell in 0..side_cells {
            u += field.volume[base + y_cell];
            c += field.value[base + y_cell];
        }
        volume[x_cell] = u * weight;
        value[x_cell] = c * weight;
    }
    Ok((
        ScalarField::new(side_grid, volume, "sales_volume", "")?,
        ScalarField::new(side_grid, value, "sales_value", "")?,
    ))
}

/// Integrates out the seller coordinates: total volume and value bought in
/// each buyer cell, as fields on the buyer grid.
pub fn marginal_purchases(field: &TransactionField) -> Result<(ScalarField, ScalarField)> {
    let side_grid = field.side_grid();
    let side_cells = side_grid.num_cells();
    let weight = side_grid.cell_volume();
    let mut volume = vec![0.0; side_cells];
    let mut value = vec![0.0; side_cells];
    for y_cell in 0..side_cells {
        let mut u = 0.0;
        let mut c = 0.0;
        for x_cell in 0..side_cells {
            let z = x_cell * side_cells + y_cell;
            u += field.volume[z];
            c += field.value[z];
        }
        volume[y_cell] = u * weight;
        value[y_cell] = c * weight;
    }
    Ok((
        ScalarField::new(side_grid, volume, "purchases_volume", "")?,
        ScalarField::new(side_grid, value, "purchases_value", "")?,
    ))
}

/// Full macro reduction of a transaction field: totals, axis flows, and
/// where mass is nonzero the velocities and cell-center mean risks.
pub fn macro_transaction(field: &TransactionField) -> TransactionMacro {
    let grid = field.pair_grid;
    let n = field.side_dim;
    let weight = grid.cell_volume();

    let volume_total: f64 = field.volume.iter().sum::<f64>() * weight;
    let value_total: f64 = field.value.iter().sum::<f64>() * weight;

    let sum_flow = |flow: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for chunk in flow.chunks(n) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        for o in &mut out {
            *o *= weight;
        }
        out
    };
    let volume_flow_seller = sum_flow(&field.volume_flow_seller);
    let volume_flow_buyer = sum_flow(&field.volume_flow_buyer);
    let value_flow_seller = sum_flow(&field.value_flow_seller);
    let value_flow_buyer = sum_flow(&field.value_flow_buyer);

    // Mean risks: density-weighted cell centers along the seller axes
    // (offset 0) and buyer axes (offset n).
    let weighted_center = |density: &[f64], offset: usize| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (cell, &rho) in density.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += rho * grid.axis_center(grid.axis_index(cell, offset + j));
            }
        }
        out
    };
    let divide = |nums: Vec<f64>, total: f64| -> Option<Vec<f64>> {
        (total != 0.0).then(|| nums.iter().map(|v| v / total).collect())
    };

    let volume_raw: f64 = field.volume.iter().sum();
    let value_raw: f64 = field.value.iter().sum();
    let volume_risk_seller = divide(weighted_center(&field.volume, 0), volume_raw);
    let volume_risk_buyer = divide(weighted_center(&field.volume, n), volume_raw);
    let value_risk_seller = divide(weighted_center(&field.value, 0), value_raw);
    let value_risk_buyer = divide(weighted_center(&field.value, n), value_raw);

    TransactionMacro {
        volume_velocity_seller: divide(volume_flow_seller.clone(), volume_total),
        volume_velocity_buyer: divide(volume_flow_buyer.clone(), volume_total),
        value_velocity_seller: divide(value_flow_seller.clone(), value_total),
        value_velocity_buyer: divide(value_flow_buyer.clone(), value_total),
        volume_total,
        value_total,
        volume_flow_seller,
        volume_flow_buyer,
        value_flow_seller,
        value_flow_buyer,
        volume_risk_seller,
        volume_risk_buyer,
        value_risk_seller,
        value_risk_buyer,
    }
}

/// Macro reduction straight from the trade records, using exact coordinates
/// instead of cell centers. This is the reference the gridded reduction is
/// checked against; the two agree within half a cell width per component.
///
/// Totals here are raw sums (no quadrature weight), so compare mean risks
/// and velocities across the two routes, not totals.
pub fn exact_macro_transaction(trades: &[Trade]) -> Result<TransactionMacro> {
    let n = trades
        .first()
        .ok_or_else(|| Error::InvalidParams("empty trade list".into()))?
        .dim();
    let mut volume_total = 0.0;
    let mut value_total = 0.0;
    let mut volume_flow_seller = vec![0.0; n];
    let mut volume_flow_buyer = vec![0.0; n];
    let mut value_flow_seller = vec![0.0; n];
    let mut value_flow_buyer = vec![0.0; n];
    let mut volume_x_seller = vec![0.0; n];
    let mut volume_x_buyer = vec![0.0; n];
    let mut value_x_seller = vec![0.0; n];
    let mut value_x_buyer = vec![0.0; n];
    for trade in trades {
        if trade.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: trade.dim(),
            });
        }
        volume_total += trade.volume;
        value_total += trade.value;
        for j in 0..n {
            volume_flow_seller[j] += trade.volume * trade.seller_vel[j];
            volume_flow_buyer[j] += trade.volume * trade.buyer_vel[j];
            value_flow_seller[j] += trade.value * trade.seller_vel[j];
            value_flow_buyer[j] += trade.value * trade.buyer_vel[j];
            volume_x_seller[j] += trade.volume * trade.seller_pos.coords()[j];
            volume_x_buyer[j] += trade.volume * trade.buyer_pos.coords()[j];
            value_x_seller[j] += trade.value * trade.seller_pos.coords()[j];
            value_x_buyer[j] += trade.value * trade.buyer_pos.coords()[j];
        }
    }
    let divide = |nums: Vec<f64>, total: f64| -> Option<Vec<f64>> {
        (total != 0.0).then(|| nums.iter().map(|v| v / total).collect())
    };
    Ok(TransactionMacro {
        volume_velocity_seller: divide(volume_flow_seller.clone(), volume_total),
        volume_velocity_buyer: divide(volume_flow_buyer.clone(), volume_total),
        value_velocity_seller: divide(value_flow_seller.clone(), value_total),
        value_velocity_buyer: divide(value_flow_buyer.clone(), value_total),
        volume_risk_seller: divide(volume_x_seller, volume_total),
        volume_risk_buyer: divide(volume_x_buyer, volume_total),
        value_risk_seller: divide(value_x_seller, value_total),
        value_risk_buyer: divide(value_x_buyer, value_total),
        volume_total,
        value_total,
        volume_flow_seller,
        volume_flow_buyer,
        value_flow_seller,
        value_flow_buyer,
    })
}

/// Serializes trades as `x_1..x_n,y_1..y_n,volume,value,sv_1..sv_n,bv_1..bv_n`.
pub fn trades_to_csv(trades: &[Trade], dim: usize) -> String {
    let mut out = String::new();
    let mut cols = Vec::new();
    for j in 1..=dim {
        cols.push(format!("x_{j}"));
    }
    for j in 1..=dim {
        cols.push(format!("y_{j}"));
    }
    cols.push("volume".into());
    cols.push("value".into());
    for j in 1..=dim {
        cols.push(format!("sv_{j}"));
    }
    for j in 1..=dim {
        cols.push(format!("bv_{j}"));
    }
    out.push_str(&cols.join(","));
    out.push('\n');
    for t in trades {
        let mut fields = Vec::new();
        fields.extend(t.seller_pos.coords().iter().map(|&v| fmt_value(v)));
        fields.extend(t.buyer_pos.coords().iter().map(|&v| fmt_value(v)));
        fields.push(fmt_value(t.volume));
        fields.push(fmt_value(t.value));
        fields.extend(t.seller_vel.iter().map(|&v| fmt_value(v)));
        fields.extend(t.buyer_vel.iter().map(|&v| fmt_value(v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Parses the trade-list CSV written by [`trades_to_csv`].
pub fn parse_trades_csv(text: &str) -> Result<Vec<Trade>> {
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        line,
        column,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, 1, "empty trade file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let n = columns.iter().filter(|c| c.starts_with("x_")).count();
    let expected = 4 * n + 2;
    if n == 0 || columns.len() != expected {
        return Err(parse_err(
            1,
            1,
            format!(
                "header must be x_1..x_n,y_1..y_n,volume,value,sv_1..sv_n,bv_1..bv_n; \
                 found {} columns",
                columns.len()
            ),
        ));
    }
    let mut trades = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(parse_err(
                line_no + 1,
                fields.len().min(expected) + 1,
                format!("row has {} fields, expected {expected}", fields.len()),
            ));
        }
        let num = |col: usize| -> Result<f64> {
            fields[col].trim().parse().map_err(|_| {
                parse_err(
                    line_no + 1,
                    col + 1,
                    format!("invalid number '{}'", fields[col]),
                )
            })
        };
        let collect = |from: usize| -> Result<Vec<f64>> { (from..from + n).map(num).collect() };
        let seller = RiskPoint::new(collect(0)?)
            .map_err(|e| parse_err(line_no + 1, 1, e.to_string()))?;
        let buyer = RiskPoint::new(collect(n)?)
            .map_err(|e| parse_err(line_no + 1, n + 1, e.to_string()))?;
        let volume = num(2 * n)?;
        let value = num(2 * n + 1)?;
        let seller_vel = collect(2 * n + 2)?;
        let buyer_vel = collect(3 * n + 2)?;
        trades.push(
            Trade::new(seller, buyer, volume, value, seller_vel, buyer_vel)
                .map_err(|e| parse_err(line_no + 1, 1, e.to_string()))?,
        );
    }
    Ok(trades)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trade1(x: f64, y: f64, volume: f64, value: f64, sv: f64, bv: f64) -> Trade {
        Trade::new(
            RiskPoint::new(vec![x]).unwrap(),
            RiskPoint::new(vec![y]).unwrap(),
            volume,
            value,
            vec![sv],
            vec![bv],
        )
        .unwrap()
    }

    fn grid1(m: usize) -> Grid {
        Grid::new(1, m).unwrap()
    }

    #[test]
    fn no_trades_aggregate_to_zero() {
        let field = instantaneous_trades(&[], grid1(2)).unwrap();
        assert!(field.volume().iter().all(|&v| v == 0.0));
        assert!(field.volume_flow_seller().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_trade_lands_in_the_right_pair_cell() {
        let field =
            instantaneous_trades(&[trade1(0.25, 0.75, 10.0, 20.0, 0.1, 0.0)], grid1(2)).unwrap();
        // Seller cell 0, buyer cell 1 -> pair cell 0*2 + 1 = 1.
        assert_eq!(field.volume(), &[0.0, 10.0, 0.0, 0.0]);
        assert_eq!(field.value(), &[0.0, 20.0, 0.0, 0.0]);
        assert!((field.volume_flow_seller()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_sales_concentrates_in_seller_cell() {
        let field =
            instantaneous_trades(&[trade1(0.25, 0.75, 10.0, 20.0, 0.0, 0.0)], grid1(2)).unwrap();
        let (volume, value) = marginal_sales(&field).unwrap();
        assert_eq!(volume.values(), &[5.0, 0.0]);
        assert_eq!(value.values(), &[10.0, 0.0]);
        let (bought, _) = marginal_purchases(&field).unwrap();
        assert_eq!(bought.values(), &[0.0, 5.0]);
    }

    #[test]
    fn zero_field_has_zero_marginals() {
        let field = instantaneous_trades(&[], grid1(4)).unwrap();
        let (volume, value) = marginal_sales(&field).unwrap();
        assert!(volume.values().iter().all(|&v| v == 0.0));
        assert!(value.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn macro_point_mass_risks_are_cell_centers() {
        let field =
            instantaneous_trades(&[trade1(0.25, 0.75, 10.0, 20.0, 0.0, 0.0)], grid1(2)).unwrap();
        let macro_tx = macro_transaction(&field);
        assert_eq!(macro_tx.volume_risk_seller.unwrap(), vec![0.25]);
        assert_eq!(macro_tx.volume_risk_buyer.unwrap(), vec![0.75]);
    }

    #[test]
    fn macro_totals_scale_but_risks_do_not() {
        let base = [trade1(0.2, 0.6, 1.0, 2.0, 0.0, 0.0), trade1(0.7, 0.3, 3.0, 1.0, 0.0, 0.0)];
        let scaled: Vec<Trade> = base
            .iter()
            .map(|t| {
                trade1(
                    t.seller_pos.coords()[0],
                    t.buyer_pos.coords()[0],
                    t.volume * 4.0,
                    t.value * 4.0,
                    0.0,
                    0.0,
                )
            })
            .collect();
        let a = macro_transaction(&instantaneous_trades(&base, grid1(4)).unwrap());
        let b = macro_transaction(&instantaneous_trades(&scaled, grid1(4)).unwrap());
        assert!((b.volume_total - 4.0 * a.volume_total).abs() < 1e-12);
        assert_eq!(a.volume_risk_seller, b.volume_risk_seller);
        assert_eq!(a.value_risk_buyer, b.value_risk_buyer);
    }

    #[test]
    fn macro_weighted_mean_example() {
        let trades = [
            trade1(0.25, 0.5, 1.0, 1.0, 0.0, 0.0),
            trade1(0.75, 0.5, 3.0, 1.0, 0.0, 0.0),
        ];
        let macro_tx = macro_transaction(&instantaneous_trades(&trades, grid1(2)).unwrap());
        assert_eq!(macro_tx.volume_risk_seller.unwrap(), vec![0.625]);
    }

    #[test]
    fn zero_mass_leaves_risks_undefined_but_totals_present() {
        let field =
            instantaneous_trades(&[trade1(0.2, 0.8, 0.0, 5.0, 0.1, 0.1)], grid1(2)).unwrap();
        let macro_tx = macro_transaction(&field);
        assert_eq!(macro_tx.volume_total, 0.0);
        assert!(macro_tx.volume_risk_seller.is_none());
        assert!(macro_tx.value_risk_seller.is_some());
    }

    #[test]
    fn exact_single_trade_returns_raw_positions() {
        let macro_tx =
            exact_macro_transaction(&[trade1(0.31, 0.77, 10.0, 20.0, 0.0, 0.0)]).unwrap();
        assert_eq!(macro_tx.volume_risk_seller.unwrap(), vec![0.31]);
        assert_eq!(macro_tx.value_risk_buyer.unwrap(), vec![0.77]);
    }

    #[test]
    fn exact_symmetric_trades_average_to_the_middle() {
        let trades = [
            trade1(0.1, 0.5, 2.0, 1.0, 0.0, 0.0),
            trade1(0.9, 0.5, 2.0, 1.0, 0.0, 0.0),
        ];
        let macro_tx = exact_macro_transaction(&trades).unwrap();
        assert_eq!(macro_tx.volume_risk_seller.unwrap(), vec![0.5]);
    }

    #[test]
    fn trade_csv_round_trips() {
        let trades = vec![
            trade1(0.25, 0.75, 10.0, 20.0, 0.1, -0.05),
            trade1(0.5, 0.125, 1.5, 0.25, 0.0, 0.3),
        ];
        let text = trades_to_csv(&trades, 1);
        let back = parse_trades_csv(&text).unwrap();
        assert_eq!(back, trades);
    }

    #[test]
    fn trade_csv_reports_bad_numbers() {
        let text = "x_1,y_1,volume,value,sv_1,bv_1\n0.2,0.8,oops,1,0,0\n";
        match parse_trades_csv(text) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 3);
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    fn arbitrary_trades(max_len: usize) -> impl Strategy<Value = Vec<Trade>> {
        proptest::collection::vec(
            (
                0.0f64..1.0,
                0.0f64..1.0,
                0.0f64..10.0,
                0.0f64..10.0,
                -0.5f64..0.5,
                -0.5f64..0.5,
            ),
            1..max_len,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(x, y, u, c, sv, bv)| trade1(x, y, u, c, sv, bv))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn three_volume_totals_agree(trades in arbitrary_trades(100)) {
            let grid = grid1(8);
            let field = instantaneous_trades(&trades, grid).unwrap();
            let direct = macro_transaction(&field).volume_total;
            let (sales, _) = marginal_sales(&field).unwrap();
            let (purchases, _) = marginal_purchases(&field).unwrap();
            let via_sales = crate::domain::integrate_field(&sales);
            let via_purchases = crate::domain::integrate_field(&purchases);
            let scale = 1.0 + direct.abs();
            prop_assert!((direct - via_sales).abs() <= 1e-12 * scale);
            prop_assert!((direct - via_purchases).abs() <= 1e-12 * scale);
        }

        #[test]
        fn mean_risks_stay_in_the_unit_interval(trades in arbitrary_trades(60)) {
            let field = instantaneous_trades(&trades, grid1(8)).unwrap();
            let macro_tx = macro_transaction(&field);
            for risk in [
                &macro_tx.volume_risk_seller,
                &macro_tx.volume_risk_buyer,
                &macro_tx.value_risk_seller,
                &macro_tx.value_risk_buyer,
            ].into_iter().flatten() {
                for &x in risk {
                    prop_assert!((0.0..=1.0).contains(&x), "risk {x} escaped");
                }
            }
        }

        #[test]
        fn flow_equals_total_times_velocity(trades in arbitrary_trades(60)) {
            let field = instantaneous_trades(&trades, grid1(4)).unwrap();
            let macro_tx = macro_transaction(&field);
            if let Some(v) = &macro_tx.volume_velocity_seller {
                let recomposed = macro_tx.volume_total * v[0];
                prop_assert!((recomposed - macro_tx.volume_flow_seller[0]).abs()
                    <= 1e-12 * (1.0 + recomposed.abs()));
            }
        }

        #[test]
        fn grid_risks_match_exact_risks_within_half_a_cell(trades in arbitrary_trades(60)) {
            let grid = grid1(16);
            let field = instantaneous_trades(&trades, grid).unwrap();
            let gridded = macro_transaction(&field);
            let exact = exact_macro_transaction(&trades).unwrap();
            let half_h = 0.5 * grid.h();
            for (a, b) in [
                (&gridded.volume_risk_seller, &exact.volume_risk_seller),
                (&gridded.volume_risk_buyer, &exact.volume_risk_buyer),
                (&gridded.value_risk_seller, &exact.value_risk_seller),
                (&gridded.value_risk_buyer, &exact.value_risk_buyer),
            ] {
                match (a, b) {
                    (Some(a), Some(b)) => {
                        prop_assert!((a[0] - b[0]).abs() <= half_h + 1e-12);
                    }
                    (None, None) => {}
                    _ => prop_assert!(false, "zero-mass status diverged"),
                }
            }
        }
    }
}
