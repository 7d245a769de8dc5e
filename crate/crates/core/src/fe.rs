//! Fixed-effect absorption, OLS, 2SLS and AR(1) persistence.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::inference::{
    first_stage_f, wu_hausman_prepared, CovKind, CovarianceRequest, FirstStageF, WuHausman,
};
use crate::linalg::{column_norms, PivotedQr};
use crate::panel::{PanelDataset, QuarterRange};

pub const ABSORB_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 10_000;
pub const INTERCEPT: &str = "_cons";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedEffect {
    Unit,
    Time,
}

/// Alternating-projection demeaner for one- and two-way fixed effects.
#[derive(Clone, Debug)]
pub struct Absorber {
    groups: Vec<(Vec<usize>, Vec<f64>)>,
}

fn densify(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &id in ids {
        let next = map.len();
        map.entry(id).or_insert(next);
    }
    (ids.iter().map(|id| map[id]).collect(), map.len())
}

impl Absorber {
    pub fn new(units: &[usize], times: &[usize], fe: &[FixedEffect]) -> Result<Self> {
        if fe.is_empty() {
            return Err(Error::InvalidDesign(
                "within transform needs at least one fixed-effect dimension".into(),
            ));
        }
        if units.len() != times.len() {
            return Err(Error::InvalidArgument("unit and time ids differ in length".into()));
        }
        let mut groups = Vec::new();
        for dim in [FixedEffect::Unit, FixedEffect::Time] {
            if !fe.contains(&dim) {
                continue;
            }
            let ids = if dim == FixedEffect::Unit { units } else { times };
            let (dense, n) = densify(ids);
            let mut counts = vec![0.0; n];
            for &g in &dense {
                counts[g] += 1.0;
            }
            groups.push((dense, counts));
        }
        Ok(Absorber { groups })
    }

    /// Demeans `col` in place; returns the number of sweeps used.
    pub fn demean(&self, col: &mut [f64]) -> Result<usize> {
        let scale = col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = ABSORB_TOL * scale;
        let mut means: Vec<Vec<f64>> = self.groups.iter().map(|(_, c)| vec![0.0; c.len()]).collect();
        let mut last = f64::INFINITY;
        for sweep in 1..=MAX_SWEEPS {
            let mut delta = 0.0f64;
            for ((ids, counts), m) in self.groups.iter().zip(means.iter_mut()) {
                m.iter_mut().for_each(|v| *v = 0.0);
                for (v, &g) in col.iter().zip(ids) {
                    m[g] += v;
                }
                for (mg, c) in m.iter_mut().zip(counts) {
                    *mg /= c;
                    delta = delta.max(mg.abs());
                }
                for (v, &g) in col.iter_mut().zip(ids) {
                    *v -= m[g];
                }
            }
            // one dimension is a single exact projection
            if self.groups.len() == 1 || delta < tol {
                return Ok(sweep);
            }
            last = delta;
        }
        Err(Error::NotConverged {
            sweeps: MAX_SWEEPS,
            last_delta: last,
        })
    }

    pub fn demean_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = x.clone();
        for mut c in out.column_iter_mut() {
            self.demean(c.as_mut_slice())?;
        }
        Ok(out)
    }
}

/// Within transformation of every column of `x`.
pub fn within_transform(x: &DMatrix<f64>, units: &[usize], times: &[usize], fe: &[FixedEffect]) -> Result<DMatrix<f64>> {
    Absorber::new(units, times, fe)?.demean_matrix(x)
}

#[derive(Clone, Debug)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub resid: DVector<f64>,
}

pub fn ols_fit(y: &DVector<f64>, x: &DMatrix<f64>, names: &[String]) -> Result<OlsFit> {
    let qr = PivotedQr::new(x, names, None, "OLS")?;
    let coef = qr.solve(y);
    let resid = y - x * &coef;
    Ok(OlsFit { coef, resid })
}

fn default_fe() -> Vec<FixedEffect> {
    vec![FixedEffect::Unit, FixedEffect::Time]
}

/// One regression: dependent variable, regressors, excluded instruments,
/// fixed effects, sample window and covariance estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub depvar: String,
    #[serde(default)]
    pub exog: Vec<String>,
    #[serde(default)]
    pub endog: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
    #[serde(default = "default_fe")]
    pub fe: Vec<FixedEffect>,
    #[serde(default)]
    pub window: Option<QuarterRange>,
    #[serde(default)]
    pub cov: CovarianceRequest,
    #[serde(default)]
    pub wu_hausman: bool,
}

impl DesignSpec {
    pub fn ols(depvar: &str, regressors: &[&str]) -> Self {
        DesignSpec {
            depvar: depvar.into(),
            exog: regressors.iter().map(|s| s.to_string()).collect(),
            endog: vec![],
            instruments: vec![],
            fe: default_fe(),
            window: None,
            cov: CovarianceRequest::default(),
            wu_hausman: false,
        }
    }

    pub fn iv(depvar: &str, exog: &[&str], endog: &[&str], instruments: &[&str]) -> Self {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        DesignSpec {
            depvar: depvar.into(),
            exog: owned(exog),
            endog: owned(endog),
            instruments: owned(instruments),
            fe: default_fe(),
            window: None,
            cov: CovarianceRequest::default(),
            wu_hausman: false,
        }
    }

    /// Same regressors with the endogenous ones treated as exogenous.
    pub fn as_ols(&self) -> DesignSpec {
        let mut s = self.clone();
        let mut exog = s.endog.clone();
        exog.append(&mut s.exog);
        s.exog = exog;
        s.endog.clear();
        s.instruments.clear();
        s.wu_hausman = false;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.instruments.len() < self.endog.len() {
            return Err(Error::OrderCondition {
                instruments: self.instruments.len(),
                endog: self.endog.len(),
            });
        }
        if self.endog.is_empty() && !self.instruments.is_empty() {
            return Err(Error::InvalidDesign("instruments given without endogenous regressors".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for r in self.endog.iter().chain(&self.exog) {
            if r == &self.depvar {
                return Err(Error::InvalidDesign(format!("dependent variable `{r}` used as regressor")));
            }
            if !seen.insert(r) {
                return Err(Error::InvalidDesign(format!("`{r}` listed more than once among regressors")));
            }
        }
        for z in &self.instruments {
            if self.exog.contains(z) || z == &self.depvar {
                return Err(Error::InvalidDesign(format!(
                    "excluded instrument `{z}` is also the dependent variable or an exogenous regressor"
                )));
            }
        }
        if self.fe.is_empty() && self.exog.iter().any(|c| c == INTERCEPT) {
            return Err(Error::InvalidDesign(format!("`{INTERCEPT}` is reserved")));
        }
        Ok(())
    }

    /// Every column the regression reads.
    pub fn columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = vec![self.depvar.as_str()];
        for c in self.exog.iter().chain(&self.endog).chain(&self.instruments) {
            if !out.contains(&c.as_str()) {
                out.push(c);
            }
        }
        out
    }
}

/// Estimation sample after listwise deletion and absorption.
#[derive(Clone, Debug)]
pub(crate) struct Sample {
    pub unit_ids: Vec<usize>,
    pub quarter_index: Vec<i32>,
    pub n_units: usize,
    pub n_periods: usize,
    pub y: DVector<f64>,
    pub exog: DMatrix<f64>,
    pub endog: DMatrix<f64>,
    pub instr: DMatrix<f64>,
    pub exog_names: Vec<String>,
    pub endog_names: Vec<String>,
    pub instr_names: Vec<String>,
    pub exog_ref: Vec<f64>,
    pub endog_ref: Vec<f64>,
    pub instr_ref: Vec<f64>,
    pub y_tss: f64,
}

impl Sample {
    pub fn first_stage_regressors(&self) -> DMatrix<f64> {
        hcat(&self.instr, &self.exog)
    }

    pub fn first_stage_names(&self) -> Vec<String> {
        self.instr_names.iter().chain(&self.exog_names).cloned().collect()
    }

    pub fn first_stage_ref_norms(&self) -> Vec<f64> {
        self.instr_ref.iter().chain(&self.exog_ref).copied().collect()
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub(crate) fn prepare(spec: &DesignSpec, data: &PanelDataset) -> Result<Sample> {
    spec.validate()?;
    let window = match spec.window {
        Some(w) => w,
        None => data.range(),
    };
    let cols: Vec<&[Option<f64>]> = spec
        .columns()
        .iter()
        .map(|c| data.column(c))
        .collect::<Result<_>>()?;
    let rows: Vec<usize> = (0..data.n_cells())
        .filter(|&idx| {
            let (_, t) = data.cell_coords(idx);
            window.contains(data.quarter_at(t)) && cols.iter().all(|c| c[idx].is_some())
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptySample);
    }
    let units: Vec<usize> = rows.iter().map(|&i| data.cell_coords(i).0).collect();
    let times: Vec<usize> = rows.iter().map(|&i| data.cell_coords(i).1).collect();
    let quarter_index = times.iter().map(|&t| data.quarter_at(t).index()).collect();
    let (unit_ids, n_units) = densify(&units);
    let n_periods = densify(&times).1;

    let gather = |names: &[String]| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows.len(), names.len());
        for (j, name) in names.iter().enumerate() {
            let c = data.column(name)?;
            for (r, &idx) in rows.iter().enumerate() {
                m[(r, j)] = c[idx].unwrap();
            }
        }
        Ok(m)
    };
    let mut y = gather(std::slice::from_ref(&spec.depvar))?;
    let mut exog_names = spec.exog.clone();
    let mut exog = gather(&exog_names)?;
    let mut endog = gather(&spec.endog)?;
    let mut instr = gather(&spec.instruments)?;
    if spec.fe.is_empty() {
        exog_names.push(INTERCEPT.into());
        let k = exog.ncols();
        exog = exog.insert_column(k, 1.0);
    }
    let (exog_ref, endog_ref, instr_ref) = (column_norms(&exog), column_norms(&endog), column_norms(&instr));
    let y_tss;
    if spec.fe.is_empty() {
        let m = y.mean();
        y_tss = y.iter().map(|v| (v - m).powi(2)).sum();
    } else {
        let absorber = Absorber::new(&units, &times, &spec.fe)?;
        y = absorber.demean_matrix(&y)?;
        exog = absorber.demean_matrix(&exog)?;
        endog = absorber.demean_matrix(&endog)?;
        instr = absorber.demean_matrix(&instr)?;
        y_tss = y.norm_squared();
    }
    Ok(Sample {
        unit_ids,
        quarter_index,
        n_units,
        n_periods,
        y: y.column(0).into_owned(),
        exog,
        endog,
        instr,
        exog_names,
        endog_names: spec.endog.clone(),
        instr_names: spec.instruments.clone(),
        exog_ref,
        endog_ref,
        instr_ref,
        y_tss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FirstStage {
    pub endog: String,
    /// Regressor names: excluded instruments, then exogenous controls.
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub f_stat: FirstStageF,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub n_obs: usize,
    pub n_units: usize,
    pub n_periods: usize,
    /// Units when clustering, periods under Driscoll-Kraay.
    pub n_clusters: usize,
    pub r2_within: f64,
    pub first_stage: Vec<FirstStage>,
    pub wu_hausman: Option<WuHausman>,
    pub cov: CovarianceRequest,
    /// Bandwidth actually used under Driscoll-Kraay.
    pub dk_lags: Option<usize>,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coef[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.vcov[(i, i)].max(0.0).sqrt())
    }

    /// Degrees of freedom of the t reference distribution: clusters − 1.
    pub fn df(&self) -> usize {
        self.n_clusters.saturating_sub(1).max(1)
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        let (b, se) = (self.coef(name)?, self.se(name)?);
        if se == 0.0 {
            return Some(if b == 0.0 { 1.0 } else { 0.0 });
        }
        let t = StudentsT::new(0.0, 1.0, self.df() as f64).ok()?;
        Some(2.0 * t.sf((b / se).abs()))
    }

    /// Two-sided confidence interval at level `1 - alpha`.
    pub fn conf_int(&self, name: &str, alpha: f64) -> Option<(f64, f64)> {
        let (b, se) = (self.coef(name)?, self.se(name)?);
        let t = StudentsT::new(0.0, 1.0, self.df() as f64).ok()?;
        let c = t.inverse_cdf(1.0 - alpha / 2.0);
        Some((b - c * se, b + c * se))
    }

    pub fn first_stage_for(&self, endog: &str) -> Option<&FirstStage> {
        self.first_stage.iter().find(|f| f.endog == endog)
    }
}

/// 2SLS (OLS when the design lists no endogenous regressors).
pub fn tsls_fit(spec: &DesignSpec, data: &PanelDataset) -> Result<FitResult> {
    let sample = prepare(spec, data)?;
    fit_sample(spec, &sample)
}

fn fit_sample(spec: &DesignSpec, s: &Sample) -> Result<FitResult> {
    let n = s.y.len();
    let k = s.endog.ncols() + s.exog.ncols();
    if n <= k {
        return Err(Error::InvalidDesign(format!(
            "{n} observations for {k} regressors"
        )));
    }
    let n_clusters = match spec.cov.kind {
        CovKind::Cluster => s.n_units,
        CovKind::Dk => s.n_periods,
    };
    let mut names = s.endog_names.clone();
    names.extend(s.exog_names.iter().cloned());
    let x_orig = hcat(&s.endog, &s.exog);

    let mut first_stage = Vec::with_capacity(s.endog.ncols());
    let mut first_resid = Vec::with_capacity(s.endog.ncols());
    let x_second = if s.endog.ncols() == 0 {
        x_orig.clone()
    } else {
        let w = s.first_stage_regressors();
        let qr_w = PivotedQr::new(&w, &s.first_stage_names(), Some(&s.first_stage_ref_norms()), "first stage")?;
        let bread_w = qr_w.xtx_inv();
        let mut fitted = DMatrix::zeros(n, s.endog.ncols());
        let instrument_idx: Vec<usize> = (0..s.instr.ncols()).collect();
        for j in 0..s.endog.ncols() {
            let xj = s.endog.column(j).into_owned();
            let gamma = qr_w.solve(&xj);
            let fit_j = &w * &gamma;
            let v = &xj - &fit_j;
            let vcov_w = spec.cov.sandwich(&bread_w, &w, &v, s)?;
            let f_stat = first_stage_f(
                &gamma,
                &vcov_w,
                &instrument_idx,
                v.norm_squared(),
                xj.norm_squared(),
                &format!("first stage of {}", s.endog_names[j]),
            )?;
            fitted.set_column(j, &fit_j);
            first_stage.push(FirstStage {
                endog: s.endog_names[j].clone(),
                names: s.first_stage_names(),
                coef: gamma.iter().copied().collect(),
                f_stat,
            });
            first_resid.push(v);
        }
        hcat(&fitted, &s.exog)
    };
    let mut refs = s.endog_ref.clone();
    refs.extend(s.exog_ref.iter().copied());
    let stage = if s.endog.ncols() == 0 { "OLS" } else { "second stage" };
    let qr = PivotedQr::new(&x_second, &names, Some(&refs), stage)?;
    let beta = qr.solve(&s.y);
    let resid = &s.y - &x_orig * &beta;
    let vcov = spec.cov.sandwich(&qr.xtx_inv(), &x_second, &resid, s)?;
    let r2_within = if s.y_tss > 0.0 {
        1.0 - resid.norm_squared() / s.y_tss
    } else {
        f64::NAN
    };
    let wu_hausman = if spec.wu_hausman && s.endog.ncols() > 0 {
        Some(wu_hausman_prepared(spec, s, &first_resid)?)
    } else {
        None
    };
    Ok(FitResult {
        names,
        coef: beta.iter().copied().collect(),
        vcov,
        n_obs: n,
        n_units: s.n_units,
        n_periods: s.n_periods,
        n_clusters,
        r2_within,
        first_stage,
        wu_hausman,
        cov: spec.cov,
        dk_lags: (spec.cov.kind == CovKind::Dk).then(|| spec.cov.resolved_lags(s.n_periods)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ar1Fit {
    pub rho: f64,
    pub n_obs: usize,
    pub window: QuarterRange,
}

/// Within-unit AR(1) coefficient of `col`, using pairs (t-1, t) that both lie
/// inside `window`.
pub fn ar1_persistence(data: &PanelDataset, col: &str, window: QuarterRange) -> Result<Ar1Fit> {
    if window.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "AR(1) window {window} has fewer than 3 quarters"
        )));
    }
    let c = data.column(col)?;
    let (mut y, mut x, mut units, mut times) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for u in 0..data.n_units() {
        for t in 1..data.n_quarters() {
            let (q, q_lag) = (data.quarter_at(t), data.quarter_at(t - 1));
            if !(window.contains(q) && window.contains(q_lag)) {
                continue;
            }
            if let (Some(now), Some(lag)) = (c[data.cell(u, t)], c[data.cell(u, t - 1)]) {
                y.push(now);
                x.push(lag);
                units.push(u);
                times.push(t);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    let absorber = Absorber::new(&units, &times, &[FixedEffect::Unit])?;
    let raw = DMatrix::from_column_slice(x.len(), 1, &x);
    let ref_norm = column_norms(&raw);
    let xm = absorber.demean_matrix(&raw)?;
    let ym = absorber.demean_matrix(&DMatrix::from_column_slice(y.len(), 1, &y))?;
    let qr = PivotedQr::new(&xm, &[format!("L.{col}")], Some(&ref_norm), "AR(1)")?;
    let rho = qr.solve(&ym.column(0).into_owned())[0];
    Ok(Ar1Fit {
        rho,
        n_obs: y.len(),
        window,
    })
}
