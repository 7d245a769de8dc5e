//! Sandwich covariance estimators and the specification tests built on them.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::fe::{prepare, DesignSpec, Sample};
use crate::linalg::{spd_solve, symmetrize, PivotedQr};
use crate::panel::PanelDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovKind {
    /// Clustered by unit.
    Cluster,
    /// Driscoll-Kraay: Bartlett HAC over cross-sectional sums.
    Dk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceRequest {
    pub kind: CovKind,
    /// Driscoll-Kraay bandwidth; `None` picks [`newey_west_lags`].
    #[serde(default)]
    pub dk_lags: Option<usize>,
    /// CR1 factor `G/(G-1) * (n-1)/(n-k)` on the cluster estimator.
    #[serde(default = "yes")]
    pub small_sample: bool,
}

fn yes() -> bool {
    true
}

impl Default for CovarianceRequest {
    fn default() -> Self {
        CovarianceRequest {
            kind: CovKind::Cluster,
            dk_lags: None,
            small_sample: true,
        }
    }
}

impl CovarianceRequest {
    pub fn cluster() -> Self {
        Self::default()
    }

    pub fn dk(lags: Option<usize>) -> Self {
        CovarianceRequest {
            kind: CovKind::Dk,
            dk_lags: lags,
            small_sample: true,
        }
    }

    pub fn resolved_lags(&self, n_periods: usize) -> usize {
        self.dk_lags.unwrap_or_else(|| newey_west_lags(n_periods))
    }

    /// Sandwich `bread * meat * bread` for regressors `x` and residuals `e`,
    /// where `bread = (x'x)^{-1}`.
    pub(crate) fn sandwich(
        &self,
        bread: &DMatrix<f64>,
        x: &DMatrix<f64>,
        e: &DVector<f64>,
        sample: &Sample,
    ) -> Result<DMatrix<f64>> {
        match self.kind {
            CovKind::Cluster => cluster_sandwich(bread, x, e, &sample.unit_ids, self.small_sample),
            CovKind::Dk => {
                let lags = self.resolved_lags(sample.n_periods);
                dk_sandwich(bread, x, e, &sample.quarter_index, lags)
            }
        }
    }
}

/// `floor(4 (T/100)^(2/9))`.
pub fn newey_west_lags(n_periods: usize) -> usize {
    (4.0 * (n_periods as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

fn bread_of(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let names: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    Ok(PivotedQr::new(x, &names, None, "covariance")?.xtx_inv())
}

fn score(x: &DMatrix<f64>, e: &DVector<f64>, row: usize, acc: &mut DVector<f64>) {
    let ei = e[row];
    for j in 0..x.ncols() {
        acc[j] += x[(row, j)] * ei;
    }
}

fn finish(bread: &DMatrix<f64>, meat: &DMatrix<f64>, factor: f64) -> DMatrix<f64> {
    let mut v = bread * meat * bread * factor;
    symmetrize(&mut v);
    v
}

/// Cluster-robust covariance with clusters given by arbitrary ids.
pub fn cluster_cov(x: &DMatrix<f64>, e: &DVector<f64>, clusters: &[usize], small_sample: bool) -> Result<DMatrix<f64>> {
    cluster_sandwich(&bread_of(x)?, x, e, clusters, small_sample)
}

pub(crate) fn cluster_sandwich(
    bread: &DMatrix<f64>,
    x: &DMatrix<f64>,
    e: &DVector<f64>,
    clusters: &[usize],
    small_sample: bool,
) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    let mut sums: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for (row, &g) in clusters.iter().enumerate() {
        score(x, e, row, sums.entry(g).or_insert_with(|| DVector::zeros(k)));
    }
    let g = sums.len();
    if g < 2 {
        return Err(Error::TooFewClusters(g));
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in sums.values() {
        meat.ger(1.0, s, s, 1.0);
    }
    let factor = if small_sample {
        (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - k) as f64)
    } else {
        1.0
    };
    Ok(finish(bread, &meat, factor))
}

/// Eicker-White HC0 covariance.
pub fn hc0_cov(x: &DMatrix<f64>, e: &DVector<f64>) -> Result<DMatrix<f64>> {
    let bread = bread_of(x)?;
    let k = x.ncols();
    let mut meat = DMatrix::zeros(k, k);
    let mut s = DVector::zeros(k);
    for row in 0..x.nrows() {
        s.fill(0.0);
        score(x, e, row, &mut s);
        meat.ger(1.0, &s, &s, 1.0);
    }
    Ok(finish(&bread, &meat, 1.0))
}

/// Driscoll-Kraay covariance. `periods` holds each row's time index; lag
/// distance is the difference of those indices.
pub fn driscoll_kraay_cov(x: &DMatrix<f64>, e: &DVector<f64>, periods: &[i32], lags: usize) -> Result<DMatrix<f64>> {
    dk_sandwich(&bread_of(x)?, x, e, periods, lags)
}

pub(crate) fn dk_sandwich(
    bread: &DMatrix<f64>,
    x: &DMatrix<f64>,
    e: &DVector<f64>,
    periods: &[i32],
    lags: usize,
) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    let mut sums: BTreeMap<i32, DVector<f64>> = BTreeMap::new();
    for (row, &t) in periods.iter().enumerate() {
        score(x, e, row, sums.entry(t).or_insert_with(|| DVector::zeros(k)));
    }
    let t_count = sums.len();
    if lags >= t_count {
        return Err(Error::TooManyLags {
            lags,
            periods: t_count,
        });
    }
    let mut meat = DMatrix::zeros(k, k);
    for h in sums.values() {
        meat.ger(1.0, h, h, 1.0);
    }
    for j in 1..=lags {
        let w = 1.0 - j as f64 / (lags as f64 + 1.0);
        let mut omega = DMatrix::zeros(k, k);
        for (t, h) in &sums {
            if let Some(h_lag) = sums.get(&(t - j as i32)) {
                omega.ger(1.0, h, h_lag, 1.0);
            }
        }
        meat += (&omega + omega.transpose()) * w;
    }
    Ok(finish(bread, &meat, 1.0))
}

/// Wald statistic `b' V^{-1} b` divided by the number of restrictions.
pub fn wald_f(b: &DVector<f64>, v: &DMatrix<f64>, label: &str) -> Result<f64> {
    let q = b.len();
    if q == 0 {
        return Ok(0.0);
    }
    let sol = spd_solve(v, b).ok_or_else(|| Error::SingularCovariance(label.to_string()))?;
    Ok(b.dot(&sol) / q as f64)
}

/// Submatrix for the given coefficient positions.
pub(crate) fn sub_block(v: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| v[(idx[a], idx[b])])
}

/// First-stage partial F beyond this is reported as capped.
pub const F_CAP: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FirstStageF {
    pub value: f64,
    /// Set when the endogenous column is fit (numerically) exactly, in which
    /// case `value` is [`F_CAP`].
    pub capped: bool,
}

/// Partial F for the excluded instruments in one first-stage equation.
/// `coef` and `vcov` cover the first-stage regressors; `instrument_idx`
/// picks the excluded instruments.
pub fn first_stage_f(
    coef: &DVector<f64>,
    vcov: &DMatrix<f64>,
    instrument_idx: &[usize],
    ssr: f64,
    tss: f64,
    label: &str,
) -> Result<FirstStageF> {
    if ssr <= 1e-20 * tss {
        return Ok(FirstStageF {
            value: F_CAP,
            capped: true,
        });
    }
    let b = DVector::from_iterator(instrument_idx.len(), instrument_idx.iter().map(|&i| coef[i]));
    let f = wald_f(&b, &sub_block(vcov, instrument_idx), label)?;
    Ok(if f.is_finite() && f < F_CAP {
        FirstStageF {
            value: f,
            capped: false,
        }
    } else {
        FirstStageF {
            value: F_CAP,
            capped: true,
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WuHausman {
    pub statistic: f64,
    pub p_value: f64,
    pub df_num: usize,
    pub df_den: usize,
}

/// Control-function endogeneity test for a 2SLS design.
pub fn wu_hausman(spec: &DesignSpec, data: &PanelDataset) -> Result<WuHausman> {
    let sample = prepare(spec, data)?;
    let qr = PivotedQr::new(
        &sample.first_stage_regressors(),
        &sample.first_stage_names(),
        Some(&sample.first_stage_ref_norms()),
        "first stage",
    )?;
    let resid: Vec<DVector<f64>> = (0..sample.endog.ncols())
        .map(|j| {
            let x = sample.endog.column(j).into_owned();
            let fitted = sample.first_stage_regressors() * qr.solve(&x);
            x - fitted
        })
        .collect();
    wu_hausman_prepared(spec, &sample, &resid)
}

pub(crate) fn wu_hausman_prepared(spec: &DesignSpec, sample: &Sample, first_resid: &[DVector<f64>]) -> Result<WuHausman> {
    let n = sample.y.len();
    let base_k = sample.endog.ncols() + sample.exog.ncols();
    // residuals that vanish mean that regressor is its own instrument
    let kept: Vec<usize> = (0..first_resid.len())
        .filter(|&j| first_resid[j].norm() > 1e-10 * sample.endog.column(j).norm())
        .collect();
    if kept.is_empty() {
        return Ok(WuHausman {
            statistic: 0.0,
            p_value: 1.0,
            df_num: 0,
            df_den: n.saturating_sub(base_k),
        });
    }
    let m = kept.len();
    let k = base_k + m;
    let mut x = DMatrix::zeros(n, k);
    x.columns_mut(0, sample.endog.ncols()).copy_from(&sample.endog);
    x.columns_mut(sample.endog.ncols(), sample.exog.ncols())
        .copy_from(&sample.exog);
    let mut names = sample.endog_names.clone();
    names.extend(sample.exog_names.iter().cloned());
    let mut refs = sample.endog_ref.clone();
    refs.extend(sample.exog_ref.iter().copied());
    for (c, &j) in kept.iter().enumerate() {
        x.set_column(base_k + c, &first_resid[j]);
        names.push(format!("v_{}", sample.endog_names[j]));
        refs.push(first_resid[j].norm());
    }
    if n <= k {
        return Err(Error::EmptySample);
    }
    let qr = PivotedQr::new(&x, &names, Some(&refs), "Wu-Hausman augmented regression")?;
    let b = qr.solve(&sample.y);
    let e = &sample.y - &x * &b;
    let v = spec.cov.sandwich(&qr.xtx_inv(), &x, &e, sample)?;
    let idx: Vec<usize> = (base_k..k).collect();
    let sub = DVector::from_iterator(m, idx.iter().map(|&i| b[i]));
    let stat = wald_f(&sub, &sub_block(&v, &idx), "first-stage residuals")?;
    let df_den = n - k;
    let dist = FisherSnedecor::new(m as f64, df_den as f64)
        .map_err(|e| Error::InvalidArgument(format!("F distribution: {e}")))?;
    Ok(WuHausman {
        statistic: stat,
        p_value: dist.sf(stat),
        df_num: m,
        df_den,
    })
}

/// True when `v` is symmetric to `sym_tol` and its eigenvalues are above
/// `-psd_tol * max|eigenvalue|`.
pub fn is_symmetric_psd(v: &DMatrix<f64>, sym_tol: f64, psd_tol: f64) -> bool {
    let asym = (v - v.transpose()).amax();
    if asym > sym_tol * v.amax().max(1e-300) {
        return false;
    }
    let eig = v.clone().symmetric_eigen().eigenvalues;
    let top = eig.amax();
    eig.iter().all(|&l| l >= -psd_tol * top)
}
