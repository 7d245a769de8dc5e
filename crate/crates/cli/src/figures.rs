//! Data behind the figure outputs. Inputs are panels that already carry
//! the constructed variables.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use pc_anatomy_core::fe::{ols_fit, Absorber, FixedEffect};
use pc_anatomy_core::forge::{PI, REL_P_LAG, SLACK, THETA};
use pc_anatomy_core::panel::{PanelDataset, Period, Quarter, QuarterRange};
use pc_anatomy_core::{Error, Result};
use serde::Serialize;

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Figure2Row {
    pub quarter: Quarter,
    pub mean_pi: Option<f64>,
    pub mean_theta: Option<f64>,
}

/// Cross-MSA mean inflation and tightness per quarter.
pub fn figure2(data: &PanelDataset) -> Result<Vec<Figure2Row>> {
    let (pi, theta) = (data.column(PI)?, data.column(THETA)?);
    Ok((0..data.n_quarters())
        .map(|t| {
            let cells = (0..data.n_units()).map(|u| data.cell(u, t));
            Figure2Row {
                quarter: data.quarter_at(t),
                mean_pi: mean(cells.clone().filter_map(|i| pi[i])),
                mean_theta: mean(cells.filter_map(|i| theta[i])),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Figure3 {
    pub msa: Vec<String>,
    pub quarters: Vec<Quarter>,
    /// `slack[t][j]` for quarter `t` and MSA `msa[j]`.
    pub slack: Vec<Vec<Option<f64>>>,
}

/// Slack paths of the named MSAs.
pub fn figure3(data: &PanelDataset, ids: &[String]) -> Result<Figure3> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("Figure III needs at least one MSA id".into()));
    }
    let mut units = Vec::with_capacity(ids.len());
    for id in ids {
        match data.unit_pos(id) {
            Some(u) => units.push(u),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "unknown MSA id `{id}`; available: {}",
                    data.units().join(", ")
                )))
            }
        }
    }
    let slack = data.column(SLACK)?;
    Ok(Figure3 {
        msa: ids.to_vec(),
        quarters: data.quarters().collect(),
        slack: (0..data.n_quarters())
            .map(|t| units.iter().map(|&u| slack[data.cell(u, t)]).collect())
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    /// MSA fixed effects and the lagged relative price.
    NoTimeFe,
    /// The same plus quarter fixed effects.
    WithTimeFe,
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Treatment::NoTimeFe => "no_time_fe",
            Treatment::WithTimeFe => "with_time_fe",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub period: Period,
    pub treatment: Treatment,
    pub msa: String,
    pub quarter: Quarter,
    pub slack: f64,
    pub pi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FittedSlope {
    pub period: Period,
    pub treatment: Treatment,
    pub slope: f64,
    pub n_obs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bin {
    pub period: Period,
    pub treatment: Treatment,
    pub bin: usize,
    pub slack: f64,
    pub pi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Figure4 {
    pub points: Vec<ScatterPoint>,
    pub slopes: Vec<FittedSlope>,
}

impl Figure4 {
    pub fn slope(&self, period: Period, treatment: Treatment) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.period == period && s.treatment == treatment)
            .map(|s| s.slope)
    }
}

struct PeriodSample {
    cells: Vec<(usize, usize)>,
    pi: Vec<f64>,
    slack: Vec<f64>,
    rel: Vec<f64>,
}

fn period_sample(data: &PanelDataset, range: QuarterRange) -> Result<PeriodSample> {
    let (pi, slack, rel) = (data.column(PI)?, data.column(SLACK)?, data.column(REL_P_LAG)?);
    let mut s = PeriodSample {
        cells: Vec::new(),
        pi: Vec::new(),
        slack: Vec::new(),
        rel: Vec::new(),
    };
    for u in 0..data.n_units() {
        for t in 0..data.n_quarters() {
            if !range.contains(data.quarter_at(t)) {
                continue;
            }
            let i = data.cell(u, t);
            if let (Some(p), Some(x), Some(r)) = (pi[i], slack[i], rel[i]) {
                s.cells.push((u, t));
                s.pi.push(p);
                s.slack.push(x);
                s.rel.push(r);
            }
        }
    }
    Ok(s)
}

/// Residuals of `y` after the fixed effects and the control.
fn residualize(absorber: &Absorber, y: &[f64], control: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut y = y.to_vec();
    absorber.demean(&mut y)?;
    let fit = ols_fit(&DVector::from_vec(y), control, &[REL_P_LAG.to_string()])?;
    Ok(fit.resid)
}

/// Slack and inflation residualized against MSA fixed effects and the lagged
/// relative price, with and without quarter fixed effects, separately for
/// the quarters of `window` before and from `onset`, with the OLS slope of
/// the residual scatter.
pub fn figure4(data: &PanelDataset, window: QuarterRange, onset: Quarter) -> Result<Figure4> {
    let mut periods = Vec::new();
    if onset > window.start {
        periods.push((Period::Pre, QuarterRange::new(window.start, (onset - 1).min(window.end))?));
    }
    if onset <= window.end {
        periods.push((Period::Post, QuarterRange::new(onset.max(window.start), window.end)?));
    }
    let mut out = Figure4 {
        points: Vec::new(),
        slopes: Vec::new(),
    };
    for (period, range) in periods {
        let s = period_sample(data, range)?;
        if s.cells.is_empty() {
            continue;
        }
        let units: Vec<usize> = s.cells.iter().map(|c| c.0).collect();
        let times: Vec<usize> = s.cells.iter().map(|c| c.1).collect();
        for (treatment, fe) in [
            (Treatment::NoTimeFe, vec![FixedEffect::Unit]),
            (Treatment::WithTimeFe, vec![FixedEffect::Unit, FixedEffect::Time]),
        ] {
            let absorber = Absorber::new(&units, &times, &fe)?;
            let mut rel = s.rel.clone();
            absorber.demean(&mut rel)?;
            let control = DMatrix::from_column_slice(rel.len(), 1, &rel);
            let rs = residualize(&absorber, &s.slack, &control)?;
            let rp = residualize(&absorber, &s.pi, &control)?;
            let sxx = rs.norm_squared();
            if sxx == 0.0 {
                return Err(Error::RankDeficient {
                    stage: format!("Figure IV ({period}, {treatment})"),
                    column: SLACK.into(),
                });
            }
            out.slopes.push(FittedSlope {
                period,
                treatment,
                slope: rs.dot(&rp) / sxx,
                n_obs: rs.len(),
            });
            for (k, &(u, t)) in s.cells.iter().enumerate() {
                out.points.push(ScatterPoint {
                    period,
                    treatment,
                    msa: data.units()[u].clone(),
                    quarter: data.quarter_at(t),
                    slack: rs[k],
                    pi: rp[k],
                });
            }
        }
    }
    Ok(out)
}

/// Equal-count bins of the residual scatter ordered by slack, per period and
/// treatment; bin `b` of `n` points holds ranks `b*n/bins .. (b+1)*n/bins`.
pub fn bin_points(fig: &Figure4, bins: usize) -> Result<Vec<Bin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be positive".into()));
    }
    let mut out = Vec::new();
    for s in &fig.slopes {
        let mut pts: Vec<(f64, f64)> = fig
            .points
            .iter()
            .filter(|p| p.period == s.period && p.treatment == s.treatment)
            .map(|p| (p.slack, p.pi))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pts.len();
        for b in 0..bins.min(n) {
            let chunk = &pts[b * n / bins.min(n)..(b + 1) * n / bins.min(n)];
            out.push(Bin {
                period: s.period,
                treatment: s.treatment,
                bin: b + 1,
                slack: mean(chunk.iter().map(|p| p.0)).unwrap_or(f64::NAN),
                pi: mean(chunk.iter().map(|p| p.1)).unwrap_or(f64::NAN),
                count: chunk.len(),
            });
        }
    }
    Ok(out)
}
