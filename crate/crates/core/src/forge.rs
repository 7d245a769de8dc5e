//! Derived regression variables: inflation, tightness, slack, lagged
//! relative prices, regime dummies and interactions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Column, PanelDataset, Quarter};

pub const PI: &str = "pi_core_4q";
pub const THETA: &str = "theta";
pub const SLACK: &str = "slack";
pub const REL_P_LAG: &str = "rel_p_lag";
pub const PANDEMIC: &str = "pandemic_period_num";
pub const TIGHT: &str = "tight_market_dummy";
pub const SHIFT_SHARE: &str = "shift_share";

pub const CPI_CORE: &str = "CPI_core";
pub const CPI: &str = "CPI";
pub const VU: &str = "vu";

/// Name of the product column built by [`interact`] through recipes.
pub fn interaction_name(a: &str, b: &str) -> String {
    format!("{a}_x_{b}")
}

/// Value `x_{i,t-lag}` for cell `idx`, or `None` when the lag falls before
/// the index.
fn lagged(data: &PanelDataset, col: &[Option<f64>], idx: usize, lag: usize) -> Option<f64> {
    let (_, t) = data.cell_coords(idx);
    if t < lag {
        None
    } else {
        col[idx - lag]
    }
}

fn logs_of_positive(data: &PanelDataset, name: &str, what: &'static str) -> Result<Vec<Option<f64>>> {
    data.column(name)?
        .iter()
        .enumerate()
        .map(|(idx, v)| match *v {
            Some(x) if x > 0.0 => Ok(Some(x.ln())),
            Some(x) => Err(data.domain_error(what, idx, x)),
            None => Ok(None),
        })
        .collect()
}

/// `scale * (ln x_t - ln x_{t-4})`; missing when either end is missing.
pub fn four_quarter_log_diff(data: &PanelDataset, col: &str, scale: f64) -> Result<Column> {
    let logs = logs_of_positive(data, col, "nonpositive price level")?;
    Ok((0..data.n_cells())
        .map(|idx| Some(scale * (logs[idx]? - lagged(data, &logs, idx, 4)?)))
        .collect())
}

/// Tightness is the vacancy-to-unemployment ratio itself.
pub fn tightness(data: &PanelDataset) -> Result<Column> {
    data.column(VU)?
        .iter()
        .enumerate()
        .map(|(idx, v)| match *v {
            Some(x) if x < 0.0 => Err(data.domain_error("negative v/u ratio", idx, x)),
            other => Ok(other),
        })
        .collect()
}

/// Inverse tightness minus its cross-sectional mean in the same quarter,
/// taken over the units with an observed tightness that quarter.
pub fn slack_demeaned(data: &PanelDataset) -> Result<Column> {
    let theta = data.column(THETA)?;
    let mut out = vec![None; data.n_cells()];
    for t in 0..data.n_quarters() {
        let mut sum = 0.0;
        let mut n = 0usize;
        for u in 0..data.n_units() {
            let idx = data.cell(u, t);
            if let Some(th) = theta[idx] {
                if th == 0.0 {
                    return Err(data.domain_error("zero tightness (slack undefined)", idx, th));
                }
                if th < 0.0 {
                    return Err(data.domain_error("negative tightness", idx, th));
                }
                let inv = 1.0 / th;
                out[idx] = Some(inv);
                sum += inv;
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let mean = sum / n as f64;
        for u in 0..data.n_units() {
            let idx = data.cell(u, t);
            if let Some(v) = out[idx].as_mut() {
                *v -= mean;
            }
        }
    }
    Ok(out)
}

/// `ln(CPI_core) - ln(CPI)` evaluated four quarters back.
pub fn relative_price_lag(data: &PanelDataset) -> Result<Column> {
    let core = logs_of_positive(data, CPI_CORE, "nonpositive core price level")?;
    let all = logs_of_positive(data, CPI, "nonpositive price level")?;
    let rp: Vec<Option<f64>> = core
        .iter()
        .zip(&all)
        .map(|(c, a)| Some((*c)? - (*a)?))
        .collect();
    Ok((0..data.n_cells()).map(|idx| lagged(data, &rp, idx, 4)).collect())
}

/// 1 from `onset` on, for every unit.
pub fn pandemic_dummy(data: &PanelDataset, onset: Quarter) -> Column {
    (0..data.n_cells())
        .map(|idx| {
            let (_, t) = data.cell_coords(idx);
            Some(if data.quarter_at(t) >= onset { 1.0 } else { 0.0 })
        })
        .collect()
}

/// 1 when `theta > tau` strictly, missing where theta is missing.
pub fn tight_dummy(data: &PanelDataset, tau: f64) -> Result<Column> {
    Ok(data
        .column(THETA)?
        .iter()
        .map(|v| v.map(|th| if th > tau { 1.0 } else { 0.0 }))
        .collect())
}

/// Returns `(pandemic_period, tight_dummy)`.
pub fn regime_dummies(data: &PanelDataset, onset: Quarter, tau: f64) -> Result<(Column, Column)> {
    let tight = tight_dummy(data, tau)?;
    Ok((pandemic_dummy(data, onset), tight))
}

pub fn interact(data: &PanelDataset, a: &str, b: &str, name: &str) -> Result<Column> {
    if data.has_column(name) {
        return Err(Error::ColumnExists(name.to_string()));
    }
    let (ca, cb) = (data.column(a)?, data.column(b)?);
    Ok(ca.iter().zip(cb).map(|(x, y)| Some((*x)? * (*y)?)).collect())
}

/// A named derived column and how to compute it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    LogDiff4 { name: String, input: String, scale: f64 },
    Theta,
    Slack,
    RelPriceLag,
    Pandemic { onset: Quarter },
    Tight { tau: f64 },
    Interact { a: String, b: String },
}

impl Recipe {
    pub fn output(&self) -> String {
        match self {
            Recipe::LogDiff4 { name, .. } => name.clone(),
            Recipe::Theta => THETA.into(),
            Recipe::Slack => SLACK.into(),
            Recipe::RelPriceLag => REL_P_LAG.into(),
            Recipe::Pandemic { .. } => PANDEMIC.into(),
            Recipe::Tight { .. } => TIGHT.into(),
            Recipe::Interact { a, b } => interaction_name(a, b),
        }
    }

    pub fn inputs(&self) -> Vec<String> {
        match self {
            Recipe::LogDiff4 { input, .. } => vec![input.clone()],
            Recipe::Theta => vec![VU.into()],
            Recipe::Slack | Recipe::Tight { .. } => vec![THETA.into()],
            Recipe::RelPriceLag => vec![CPI_CORE.into(), CPI.into()],
            Recipe::Pandemic { .. } => vec![],
            Recipe::Interact { a, b } => vec![a.clone(), b.clone()],
        }
    }

    /// Evaluates the recipe and appends its column to `data`.
    pub fn apply(&self, data: &mut PanelDataset) -> Result<()> {
        let name = self.output();
        if data.has_column(&name) {
            return Err(Error::ColumnExists(name));
        }
        for input in self.inputs() {
            data.column(&input)?;
        }
        let column = match self {
            Recipe::LogDiff4 { input, scale, .. } => four_quarter_log_diff(data, input, *scale)?,
            Recipe::Theta => tightness(data)?,
            Recipe::Slack => slack_demeaned(data)?,
            Recipe::RelPriceLag => relative_price_lag(data)?,
            Recipe::Pandemic { onset } => pandemic_dummy(data, *onset),
            Recipe::Tight { tau } => tight_dummy(data, *tau)?,
            Recipe::Interact { a, b } => interact(data, a, b, &name)?,
        };
        data.add_column(name, column)
    }
}

/// Regime settings shared by the variable build.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeParams {
    pub pandemic_onset: Quarter,
    pub tau: f64,
}

impl Default for RegimeParams {
    fn default() -> Self {
        RegimeParams {
            pandemic_onset: Quarter::from_index(2020 * 4),
            tau: 1.0,
        }
    }
}

/// Every derived column the two models need, in dependency order.
pub fn standard_recipes(params: RegimeParams) -> Vec<Recipe> {
    vec![
        Recipe::LogDiff4 {
            name: PI.into(),
            input: CPI_CORE.into(),
            scale: 100.0,
        },
        Recipe::Theta,
        Recipe::Slack,
        Recipe::RelPriceLag,
        Recipe::Pandemic {
            onset: params.pandemic_onset,
        },
        Recipe::Tight { tau: params.tau },
        Recipe::Interact { a: SLACK.into(), b: PANDEMIC.into() },
        Recipe::Interact { a: SLACK.into(), b: TIGHT.into() },
        Recipe::Interact { a: SHIFT_SHARE.into(), b: PANDEMIC.into() },
        Recipe::Interact { a: SHIFT_SHARE.into(), b: TIGHT.into() },
    ]
}

/// Copy of `data` with all standard derived columns appended.
pub fn build_standard(data: &PanelDataset, params: RegimeParams) -> Result<PanelDataset> {
    let mut out = data.clone();
    for recipe in standard_recipes(params) {
        recipe.apply(&mut out)?;
    }
    Ok(out)
}
