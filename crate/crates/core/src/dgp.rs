//! Synthetic regional economy with known slopes, used as the correctness
//! oracle for the estimators.
//!
//! A latent log labor-market index follows a unit AR(1) driven by a
//! shift-share instrument, a demand innovation and (optionally) an aggregate
//! shock. Inverse tightness is the quarter's level times the exponentiated
//! index relative to its cross-sectional mean, so it stays positive and
//! averages to the level exactly. Inflation loads on the demeaned inverse
//! tightness with a regime-dependent slope. The
//! inflation error shares the demand innovation with weight `endog_corr`,
//! which is what makes OLS inconsistent. Prices and v/u are then built so
//! that the variable construction reproduces the generated series exactly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::{tsls_fit, FitResult};
use crate::forge::{build_standard, RegimeParams, CPI, CPI_CORE, SHIFT_SHARE, VU};
use crate::models::Model;
use crate::panel::{Column, PanelDataset, Quarter, QuarterRange};

const BURN_IN: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n_units: usize,
    /// Quarters emitted, including the four lost to the inflation lag.
    pub n_quarters: usize,
    pub start: Quarter,
    pub pandemic_onset: Quarter,

    pub psi_base: f64,
    pub delta_psi: f64,
    pub beta2_tight: f64,
    pub phi: f64,
    pub tau: f64,

    pub rho_slack: f64,
    /// Response of the latent index to the shift-share instrument.
    pub instrument_loading: f64,
    pub n_industries: usize,

    pub sigma_demand: f64,
    pub sigma_supply: f64,
    pub sigma_measure: f64,
    pub endog_corr: f64,

    /// Mean inverse tightness before and after the onset.
    pub level_pre: f64,
    pub level_post: f64,

    pub unit_fe_sd: f64,
    pub base_inflation: f64,
    pub pandemic_inflation: f64,
    pub national_sd: f64,

    pub rel_price_rho: f64,
    pub rel_price_sd: f64,

    pub agg_shock_sd: f64,
    /// Aggregate shocks hit only from the pandemic onset on.
    pub agg_shock_post_only: bool,
    /// Loading of the aggregate shock on the latent index of price-reporting units.
    pub agg_slack_loading: f64,
    pub agg_inflation_loading: f64,
    /// Share of units that report prices; the rest carry v/u and the
    /// instrument only.
    pub price_coverage: f64,

    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_units: 50,
            n_quarters: 98,
            start: Quarter::from_index(2000 * 4),
            pandemic_onset: Quarter::from_index(2020 * 4),
            psi_base: -0.7,
            delta_psi: -0.3,
            beta2_tight: 0.0,
            phi: 0.1,
            tau: 1.0,
            rho_slack: 0.8,
            instrument_loading: 0.7,
            n_industries: 10,
            sigma_demand: 0.22,
            sigma_supply: 1.0,
            sigma_measure: 0.0,
            endog_corr: 0.8,
            level_pre: 1.7,
            level_post: 0.76,
            unit_fe_sd: 0.5,
            base_inflation: 2.0,
            pandemic_inflation: 2.0,
            national_sd: 0.3,
            rel_price_rho: 0.9,
            rel_price_sd: 0.02,
            agg_shock_sd: 0.0,
            agg_shock_post_only: false,
            agg_slack_loading: 0.0,
            agg_inflation_loading: 0.0,
            price_coverage: 1.0,
            seed: 20240601,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.n_units == 0 {
            return bad("n_units", "must be at least 1");
        }
        if self.n_quarters < 5 {
            return bad("n_quarters", "must be at least 5 (four are lost to the inflation lag)");
        }
        if self.n_industries == 0 {
            return bad("n_industries", "must be at least 1");
        }
        for (name, v) in [
            ("sigma_demand", self.sigma_demand),
            ("sigma_supply", self.sigma_supply),
            ("sigma_measure", self.sigma_measure),
            ("unit_fe_sd", self.unit_fe_sd),
            ("national_sd", self.national_sd),
            ("rel_price_sd", self.rel_price_sd),
            ("agg_shock_sd", self.agg_shock_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, "standard deviations must be finite and nonnegative");
            }
        }
        if !(self.endog_corr.abs() <= 1.0) {
            return bad("endog_corr", "must lie in [-1, 1]");
        }
        if !(self.rho_slack.abs() < 1.0) {
            return bad("rho_slack", "must lie in (-1, 1)");
        }
        if !(self.rel_price_rho.abs() < 1.0) {
            return bad("rel_price_rho", "must lie in (-1, 1)");
        }
        if !(self.price_coverage > 0.0 && self.price_coverage <= 1.0) {
            return bad("price_coverage", "must lie in (0, 1]");
        }
        if !(self.level_pre > 0.0 && self.level_post > 0.0) {
            return bad("level_pre/level_post", "inverse-tightness levels must be positive");
        }
        for (name, v) in [
            ("psi_base", self.psi_base),
            ("delta_psi", self.delta_psi),
            ("beta2_tight", self.beta2_tight),
            ("phi", self.phi),
            ("tau", self.tau),
            ("instrument_loading", self.instrument_loading),
            ("agg_slack_loading", self.agg_slack_loading),
            ("agg_inflation_loading", self.agg_inflation_loading),
            ("base_inflation", self.base_inflation),
            ("pandemic_inflation", self.pandemic_inflation),
        ] {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        Ok(())
    }

    pub fn range(&self) -> QuarterRange {
        QuarterRange {
            start: self.start,
            end: self.start + (self.n_quarters as i32 - 1),
        }
    }

    pub fn regime(&self) -> RegimeParams {
        RegimeParams {
            pandemic_onset: self.pandemic_onset,
            tau: self.tau,
        }
    }

    pub fn n_priced(&self) -> usize {
        ((self.price_coverage * self.n_units as f64).round() as usize).clamp(1, self.n_units)
    }

    pub fn with_seed(&self, seed: u64) -> DgpConfig {
        DgpConfig { seed, ..self.clone() }
    }
}

/// `Z[i, t] = sum_k shares[i, k] * shocks[k, t]` with base-period shares.
pub fn gen_shift_share(shares: &DMatrix<f64>, shocks: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if shares.ncols() != shocks.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} industries in shares but {} in shocks",
            shares.ncols(),
            shocks.nrows()
        )));
    }
    for (i, row) in shares.row_iter().enumerate() {
        if row.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidArgument(format!("unit {i} has a negative industry share")));
        }
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("unit {i} shares sum to {sum}, not 1")));
        }
    }
    Ok(shares * shocks)
}

/// Generated panel plus the series the variable build must reproduce.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPanel {
    pub panel: PanelDataset,
    pub truth: DgpConfig,
    pub pi: Column,
    pub slack: Column,
    pub rel_p_lag: Column,
    pub tight: Column,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gen_panel(cfg: &DgpConfig) -> Result<SyntheticPanel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, nt, nk) = (cfg.n_units, cfg.n_quarters, cfg.n_industries);
    let total_t = nt + BURN_IN;
    let n_priced = cfg.n_priced();

    // base-period industry shares, Dirichlet(1)
    let mut shares = DMatrix::zeros(n, nk);
    for i in 0..n {
        let draws: Vec<f64> = (0..nk).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let sum: f64 = draws.iter().sum();
        for (k, d) in draws.iter().enumerate() {
            shares[(i, k)] = d / sum;
        }
    }
    let shocks = DMatrix::from_fn(nk, total_t, |_, _| normal(&mut rng));
    let z = gen_shift_share(&shares, &shocks)?;

    let alpha: Vec<f64> = (0..n).map(|_| cfg.unit_fe_sd * normal(&mut rng)).collect();
    let first_post = cfg.pandemic_onset - cfg.start + BURN_IN as i32;
    let agg: Vec<f64> = (0..total_t)
        .map(|t| {
            let draw = cfg.agg_shock_sd * normal(&mut rng);
            if cfg.agg_shock_post_only && (t as i32) < first_post {
                0.0
            } else {
                draw
            }
        })
        .collect();
    let national: Vec<f64> = (0..nt).map(|_| cfg.national_sd * normal(&mut rng)).collect();

    // latent index and its innovations, unit-major over total_t
    let mut x = vec![0.0; n * total_t];
    let mut demand = vec![0.0; n * total_t];
    for i in 0..n {
        let loading = if i < n_priced { cfg.agg_slack_loading } else { 0.0 };
        let mut prev = 0.0;
        for t in 0..total_t {
            let d = normal(&mut rng);
            demand[i * total_t + t] = d;
            let v = cfg.rho_slack * prev
                + cfg.instrument_loading * z[(i, t)]
                + cfg.sigma_demand * d
                + loading * agg[t];
            x[i * total_t + t] = v;
            prev = v;
        }
    }
    let measure: Vec<f64> = (0..n * nt).map(|_| cfg.sigma_measure * normal(&mut rng)).collect();
    let idio: Vec<f64> = (0..n * nt).map(|_| normal(&mut rng)).collect();
    let mut rp = vec![0.0; n * nt];
    let rp_sd0 = cfg.rel_price_sd / (1.0 - cfg.rel_price_rho.powi(2)).sqrt();
    for i in 0..n {
        let mut prev = rp_sd0 * normal(&mut rng);
        for t in 0..nt {
            if t > 0 {
                prev = cfg.rel_price_rho * prev + cfg.rel_price_sd * normal(&mut rng);
            }
            rp[i * nt + t] = prev;
        }
    }

    let range = cfg.range();
    let units: Vec<String> = (0..n).map(|i| format!("MSA{:03}", i + 1)).collect();
    let mut panel = PanelDataset::new(units, range)?;
    let cell = |i: usize, t: usize| i * nt + t;

    let mut s_true = vec![0.0; n * nt];
    let mut s_obs = vec![0.0; n * nt];
    let mut vu = vec![0.0; n * nt];
    let mut tight = vec![0.0; n * nt];
    for t in 0..nt {
        let tt = t + BURN_IN;
        let post = range.start + t as i32 >= cfg.pandemic_onset;
        let level = if post { cfg.level_post } else { cfg.level_pre };
        let true_ratio: Vec<f64> = (0..n).map(|i| x[i * total_t + tt].exp()).collect();
        let obs_ratio: Vec<f64> = (0..n)
            .map(|i| (x[i * total_t + tt] + measure[cell(i, t)]).exp())
            .collect();
        let mean_true = true_ratio.iter().sum::<f64>() / n as f64;
        let mean_obs = obs_ratio.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            s_true[cell(i, t)] = level * (true_ratio[i] / mean_true - 1.0);
            let inv = level * obs_ratio[i] / mean_obs;
            s_obs[cell(i, t)] = inv - level;
            let v = 1.0 / inv;
            vu[cell(i, t)] = v;
            tight[cell(i, t)] = if v > cfg.tau { 1.0 } else { 0.0 };
        }
    }

    let mut pi = vec![None; n * nt];
    let mut core = vec![None; n * nt];
    let mut cpi = vec![None; n * nt];
    let mut rel_p_lag = vec![None; n * nt];
    let c = cfg.endog_corr;
    let orth = (1.0 - c * c).max(0.0).sqrt();
    for i in 0..n_priced {
        for t in 0..nt {
            let q = range.start + t as i32;
            let post = q >= cfg.pandemic_onset;
            if t >= 4 {
                let tt = t + BURN_IN;
                let slope = cfg.psi_base
                    + if post { cfg.delta_psi } else { 0.0 }
                    + cfg.beta2_tight * tight[cell(i, t)];
                let delta_t = cfg.base_inflation
                    + if post { cfg.pandemic_inflation } else { 0.0 }
                    + national[t];
                let eps = cfg.sigma_supply * (c * demand[i * total_t + tt] + orth * idio[cell(i, t)]);
                let lag_rp = rp[cell(i, t - 4)];
                let value = alpha[i]
                    + delta_t
                    + slope * s_true[cell(i, t)]
                    + cfg.phi * lag_rp
                    + cfg.agg_inflation_loading * agg[tt]
                    + eps;
                pi[cell(i, t)] = Some(value);
                rel_p_lag[cell(i, t)] = Some(lag_rp);
                let base: f64 = core[cell(i, t - 4)].unwrap();
                core[cell(i, t)] = Some(base * (value / 100.0).exp());
            } else {
                core[cell(i, t)] = Some(100.0);
            }
            cpi[cell(i, t)] = Some(core[cell(i, t)].unwrap() * (-rp[cell(i, t)]).exp());
        }
    }

    let z_col: Column = (0..n * nt)
        .map(|idx| Some(z[(idx / nt, idx % nt + BURN_IN)]))
        .collect();
    panel.add_column(CPI_CORE, core)?;
    panel.add_column(CPI, cpi)?;
    panel.add_column(VU, vu.iter().map(|v| Some(*v)).collect())?;
    panel.add_column(SHIFT_SHARE, z_col)?;
    Ok(SyntheticPanel {
        panel,
        truth: cfg.clone(),
        pi,
        slack: s_obs.into_iter().map(Some).collect(),
        rel_p_lag,
        tight: tight.into_iter().map(Some).collect(),
    })
}

/// Monte Carlo summary of one coefficient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Share of replications whose 95% interval covers the truth.
    pub coverage: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub coef: f64,
    pub se: f64,
    pub ci: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    pub tsls: Vec<Estimate>,
    pub ols: Vec<Estimate>,
    pub wu_hausman_p: Option<f64>,
    pub first_stage_f: Vec<f64>,
    /// Share of estimation-sample observations in the tight regime.
    pub tight_share: f64,
    /// The same share among post-onset observations.
    pub tight_share_post: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McReport {
    pub model: Model,
    pub n_reps: usize,
    pub params: Vec<String>,
    pub tsls: Vec<ParamSummary>,
    pub ols: Vec<ParamSummary>,
    pub replications: Vec<Replication>,
    /// Replications that failed to estimate, with the error message.
    pub failures: Vec<(usize, String)>,
}

impl McReport {
    pub fn tsls_param(&self, name: &str) -> Option<&ParamSummary> {
        self.tsls.iter().find(|p| p.name == name)
    }

    pub fn ols_param(&self, name: &str) -> Option<&ParamSummary> {
        self.ols.iter().find(|p| p.name == name)
    }

    /// Share of replications rejecting exogeneity at `level`.
    pub fn wu_hausman_rejection_rate(&self, level: f64) -> f64 {
        let ps: Vec<f64> = self.replications.iter().filter_map(|r| r.wu_hausman_p).collect();
        ps.iter().filter(|p| **p < level).count() as f64 / ps.len().max(1) as f64
    }

    pub fn mean_tight_share_post(&self) -> f64 {
        let n = self.replications.len().max(1) as f64;
        self.replications.iter().map(|r| r.tight_share_post).sum::<f64>() / n
    }
}

/// Coefficient truths for `model` under `cfg`, in [`Model::params`] order.
pub fn truths(cfg: &DgpConfig, model: Model) -> [f64; 3] {
    match model {
        Model::PandemicShift => [cfg.psi_base, cfg.delta_psi, cfg.phi],
        Model::Threshold => [cfg.psi_base, cfg.beta2_tight, cfg.phi],
    }
}

fn estimates(fit: &FitResult, params: &[String]) -> Result<Vec<Estimate>> {
    params
        .iter()
        .map(|p| {
            let missing = || Error::InvalidDesign(format!("coefficient `{p}` missing from fit"));
            Ok(Estimate {
                coef: fit.coef(p).ok_or_else(missing)?,
                se: fit.se(p).ok_or_else(missing)?,
                ci: fit.conf_int(p, 0.05).ok_or_else(missing)?,
            })
        })
        .collect()
}

fn run_replication(cfg: &DgpConfig, model: Model, rep: usize) -> Result<Replication> {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let sim = gen_panel(&cfg.with_seed(seed))?;
    let data = build_standard(&sim.panel, cfg.regime())?;
    let spec = model.design();
    let params = model.params();
    let fit = tsls_fit(&spec, &data)?;
    let ols = tsls_fit(&spec.as_ols(), &data)?;

    let (mut n_obs, mut n_tight, mut n_post, mut n_tight_post) = (0usize, 0usize, 0usize, 0usize);
    for idx in 0..data.n_cells() {
        if sim.pi[idx].is_none() {
            continue;
        }
        let (_, t) = data.cell_coords(idx);
        let tight = sim.tight[idx] == Some(1.0);
        n_obs += 1;
        n_tight += tight as usize;
        if data.quarter_at(t) >= cfg.pandemic_onset {
            n_post += 1;
            n_tight_post += tight as usize;
        }
    }
    Ok(Replication {
        rep,
        seed,
        tsls: estimates(&fit, &params)?,
        ols: estimates(&ols, &params)?,
        wu_hausman_p: fit.wu_hausman.as_ref().map(|w| w.p_value),
        first_stage_f: fit.first_stage.iter().map(|f| f.f_stat.value).collect(),
        tight_share: n_tight as f64 / n_obs.max(1) as f64,
        tight_share_post: n_tight_post as f64 / n_post.max(1) as f64,
    })
}

fn summarize(name: &str, truth: f64, draws: &[&Estimate]) -> ParamSummary {
    let n = draws.len();
    let nf = n.max(1) as f64;
    let mean = draws.iter().map(|e| e.coef).sum::<f64>() / nf;
    let var = if n > 1 {
        draws.iter().map(|e| (e.coef - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let mse = draws.iter().map(|e| (e.coef - truth).powi(2)).sum::<f64>() / nf;
    let covered = draws.iter().filter(|e| e.ci.0 <= truth && truth <= e.ci.1).count();
    ParamSummary {
        name: name.to_string(),
        truth,
        mean,
        sd: var.sqrt(),
        bias: mean - truth,
        rmse: mse.sqrt(),
        coverage: covered as f64 / nf,
        n,
    }
}

/// Runs `n_reps` independent replications (seed `cfg.seed + rep`) of `model`
/// and summarizes 2SLS and OLS estimates against the truth.
pub fn mc_study(cfg: &DgpConfig, n_reps: usize, model: Model) -> Result<McReport> {
    if n_reps < 2 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least 2 replications".into()));
    }
    cfg.validate()?;
    let mut outcomes: Vec<(usize, Result<Replication>)> = (0..n_reps)
        .into_par_iter()
        .map(|rep| (rep, run_replication(cfg, model, rep)))
        .collect();
    outcomes.sort_by_key(|(rep, _)| *rep);
    let mut replications = Vec::with_capacity(n_reps);
    let mut failures = Vec::new();
    for (rep, out) in outcomes {
        match out {
            Ok(r) => replications.push(r),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let params: Vec<String> = model.params().to_vec();
    let truth = truths(cfg, model);
    let table = |pick: fn(&Replication) -> &Vec<Estimate>| -> Vec<ParamSummary> {
        params
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let draws: Vec<&Estimate> = replications.iter().map(|r| &pick(r)[j]).collect();
                summarize(name, truth[j], &draws)
            })
            .collect()
    };
    let tsls = table(|r| &r.tsls);
    let ols = table(|r| &r.ols);
    Ok(McReport {
        model,
        n_reps,
        params,
        tsls,
        ols,
        replications,
        failures,
    })
}
