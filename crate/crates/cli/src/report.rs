//! Report records and their text rendering. Text tables print 4 decimals;
//! the JSON forms carry full precision.

use std::fmt::Write as _;

use pc_anatomy_core::dgp::{McReport, ParamSummary};
use pc_anatomy_core::fe::FitResult;
use pc_anatomy_core::panel::SummaryStats;
use serde::Serialize;

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_else(|| "-".into())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefRow {
    pub name: String,
    pub label: String,
    pub coef: f64,
    pub se: f64,
    pub p_value: f64,
    pub stars: &'static str,
}

impl CoefRow {
    pub fn from_fit(fit: &FitResult, name: &str, label: &str) -> Option<CoefRow> {
        let p = fit.p_value(name)?;
        Some(CoefRow {
            name: name.to_string(),
            label: label.to_string(),
            coef: fit.coef(name)?,
            se: fit.se(name)?,
            p_value: p,
            stars: stars(p),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KappaRow {
    pub regime: String,
    pub psi: f64,
    pub rho: f64,
    /// Where `rho` came from: an AR(1) window or a user value.
    pub rho_source: String,
    pub beta: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FirstStageRow {
    pub endog: String,
    pub f: f64,
    pub capped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WuHausmanRow {
    pub statistic: f64,
    pub p_value: f64,
    pub df_num: usize,
    pub df_den: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub title: String,
    pub model: Option<u8>,
    pub window: String,
    pub covariance: String,
    pub dk_lags: Option<usize>,
    pub tau: f64,
    pub pandemic_onset: String,
    pub coefficients: Vec<CoefRow>,
    /// Base slope plus interaction, with its standard error.
    pub implied: Option<CoefRow>,
    pub kappa: Vec<KappaRow>,
    pub first_stage: Vec<FirstStageRow>,
    pub wu_hausman: Option<WuHausmanRow>,
    pub n_obs: usize,
    pub n_units: usize,
    pub n_clusters: usize,
    pub r2_within: f64,
}

impl EstimateReport {
    pub fn diagnostics_from(&mut self, fit: &FitResult) {
        self.first_stage = fit
            .first_stage
            .iter()
            .map(|f| FirstStageRow {
                endog: f.endog.clone(),
                f: f.f_stat.value,
                capped: f.f_stat.capped,
            })
            .collect();
        self.wu_hausman = fit.wu_hausman.as_ref().map(|w| WuHausmanRow {
            statistic: w.statistic,
            p_value: w.p_value,
            df_num: w.df_num,
            df_den: w.df_den,
        });
        self.n_obs = fit.n_obs;
        self.n_units = fit.n_units;
        self.n_clusters = fit.n_clusters;
        self.r2_within = fit.r2_within;
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = 44;
        let _ = writeln!(s, "{}", self.title);
        let cov = match self.dk_lags {
            Some(l) => format!("{} (lags {l})", self.covariance),
            None => self.covariance.clone(),
        };
        let _ = writeln!(
            s,
            "window {}   covariance {}   tau {}   onset {}",
            self.window,
            cov,
            fmt4(self.tau),
            self.pandemic_onset
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<w$} {:>12} {:>10}", "Reduced-form slope estimates", "coef", "(se)");
        let row = |s: &mut String, r: &CoefRow| {
            let _ = writeln!(
                s,
                "{:<w$} {:>9}{:<3} {:>10}",
                r.label,
                fmt4(r.coef),
                r.stars,
                format!("({})", fmt4(r.se))
            );
        };
        for r in &self.coefficients {
            row(&mut s, r);
        }
        if let Some(r) = &self.implied {
            row(&mut s, r);
        }
        if !self.kappa.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Structural slope estimates (kappa = psi (1 - beta rho))");
            for k in &self.kappa {
                let _ = writeln!(
                    s,
                    "{:<w$} {:>9}    psi {}  rho {} [{}]  beta {}",
                    format!("kappa ({})", k.regime),
                    fmt4(k.kappa),
                    fmt4(k.psi),
                    fmt4(k.rho),
                    k.rho_source,
                    fmt4(k.beta)
                );
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Diagnostics");
        for f in &self.first_stage {
            let cap = if f.capped { " (capped: exact fit)" } else { "" };
            let _ = writeln!(s, "{:<w$} {:>9}{cap}", format!("first-stage F, {}", f.endog), fmt4(f.f));
        }
        if let Some(h) = &self.wu_hausman {
            let _ = writeln!(
                s,
                "{:<w$} {:>9}    p = {}",
                format!("Wu-Hausman F({}, {})", h.df_num, h.df_den),
                fmt4(h.statistic),
                fmt4(h.p_value)
            );
        }
        let _ = writeln!(s, "{:<w$} {:>9}", "observations", self.n_obs);
        let _ = writeln!(s, "{:<w$} {:>9}", "MSAs", self.n_units);
        let _ = writeln!(s, "{:<w$} {:>9}", "clusters", self.n_clusters);
        let _ = writeln!(s, "{:<w$} {:>9}", "within R-squared", fmt4(self.r2_within));
        let _ = writeln!(s, "* p<0.10, ** p<0.05, *** p<0.01");
        s
    }
}

pub fn describe_text(stats: &SummaryStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Summary statistics (split at {})", stats.split);
    let _ = writeln!(
        s,
        "{:<22} {:<5} {:>7} {:>10} {:>10} {:>10} {:>10}",
        "variable", "block", "n", "mean", "sd", "min", "max"
    );
    for r in &stats.rows {
        let _ = writeln!(
            s,
            "{:<22} {:<5} {:>7} {:>10} {:>10} {:>10} {:>10}",
            r.column,
            r.period.to_string(),
            r.count,
            fmt_opt(r.mean),
            fmt_opt(r.sd),
            fmt_opt(r.min),
            fmt_opt(r.max)
        );
    }
    s
}

pub fn describe_csv(stats: &SummaryStats) -> String {
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::from("variable,block,n,mean,sd,min,max\n");
    for r in &stats.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.column,
            r.period,
            r.count,
            cell(r.mean),
            cell(r.sd),
            cell(r.min),
            cell(r.max)
        );
    }
    s
}

fn mc_block(s: &mut String, title: &str, rows: &[ParamSummary]) {
    let _ = writeln!(s, "{title}");
    let _ = writeln!(
        s,
        "{:<34} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "parameter", "truth", "mean", "bias", "sd", "rmse", "coverage"
    );
    for p in rows {
        let _ = writeln!(
            s,
            "{:<34} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            p.name,
            fmt4(p.truth),
            fmt4(p.mean),
            fmt4(p.bias),
            fmt4(p.sd),
            fmt4(p.rmse),
            fmt4(p.coverage)
        );
    }
}

pub fn mc_text(r: &McReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Monte Carlo: {}, {} replications ({} failed)",
        r.model,
        r.n_reps,
        r.failures.len()
    );
    mc_block(&mut s, "2SLS", &r.tsls);
    mc_block(&mut s, "OLS", &r.ols);
    let _ = writeln!(s, "Wu-Hausman rejection rate at 5%: {}", fmt4(r.wu_hausman_rejection_rate(0.05)));
    let _ = writeln!(s, "mean tight share after onset: {}", fmt4(r.mean_tight_share_post()));
    for (rep, msg) in &r.failures {
        let _ = writeln!(s, "replication {rep} failed: {msg}");
    }
    s
}
