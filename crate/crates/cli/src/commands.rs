use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pc_anatomy_core::dgp::{gen_panel, mc_study, DgpConfig};
use pc_anatomy_core::fe::{ar1_persistence, tsls_fit, DesignSpec, FitResult};
use pc_anatomy_core::forge::{build_standard, RegimeParams, PI, REL_P_LAG, SHIFT_SHARE, SLACK, THETA};
use pc_anatomy_core::inference::CovKind;
use pc_anatomy_core::models::Model;
use pc_anatomy_core::panel::{read_csv, summary_stats, PanelDataset, QuarterRange, REQUIRED_COLUMNS};
use pc_anatomy_core::structural::{default_beta, implied_post_slope, kappa_from_psi};
use pc_anatomy_core::Error as CoreError;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::args::{Cli, Command, DescribeArgs, EstimateArgs, FiguresArgs, InputArgs, McArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::figures::{bin_points, figure2, figure3, figure4};
use crate::manifest::{ensure_dir, sha256_hex, sidecar_path, write_file, InputDigest, RunManifest};
use crate::report::{describe_csv, describe_text, mc_text, stars, CoefRow, EstimateReport, KappaRow};

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let text = match &cli.command {
        Command::Describe(a) => describe(a)?,
        Command::Estimate(a) => estimate(a)?,
        Command::Figures(a) => figures(a)?,
        Command::Simulate(a) => simulate(a)?,
        Command::Mc(a) => mc(a)?,
    };
    out.write_all(text.as_bytes()).map_err(|source| CliError::Output {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

struct Loaded {
    data: PanelDataset,
    digest: InputDigest,
}

fn load(path: &Path) -> CliResult<Loaded> {
    let context = format!("reading {}", path.display());
    let bytes = fs::read(path).map_err(|e| CliError::Stage {
        context: context.clone(),
        source: CoreError::Io {
            path: path.to_path_buf(),
            source: e,
        },
        hint: None,
    })?;
    let data = read_csv(&bytes[..], &REQUIRED_COLUMNS).map_err(CliError::stage(context))?;
    Ok(Loaded {
        data,
        digest: InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        },
    })
}

/// Loads the input and builds every variable on the full file, so lags
/// reach back before the window.
fn prepare(args: &InputArgs) -> CliResult<(PanelDataset, InputDigest)> {
    let Loaded { data, digest } = load(&args.input)?;
    let params = RegimeParams {
        pandemic_onset: args.pandemic_onset,
        tau: args.tau,
    };
    let forged = build_standard(&data, params).map_err(CliError::stage("variable construction"))?;
    Ok((forged, digest))
}

fn windowed(data: &PanelDataset, window: &QuarterRange) -> CliResult<PanelDataset> {
    data.select_window(window).map_err(CliError::stage("sample window"))
}

fn manifest_for(command: &str, input: &InputArgs, digest: InputDigest, config: serde_json::Value) -> RunManifest {
    let mut m = RunManifest::new(command, config);
    m.input = Some(digest);
    m.window = Some(input.window.to_string());
    m
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn describe(a: &DescribeArgs) -> CliResult<String> {
    let (data, digest) = prepare(&a.input)?;
    let data = windowed(&data, &a.input.window)?;
    let split = a.split.unwrap_or(a.input.pandemic_onset);
    let stats = summary_stats(&data, &[PI, SLACK, THETA, SHIFT_SHARE, REL_P_LAG], split)
        .map_err(CliError::stage("summary statistics"))?;
    let text = describe_text(&stats);
    if let Some(dir) = &a.input.out_dir {
        let dir = ensure_dir(dir)?;
        write_file(&dir.join("describe.txt"), text.as_bytes())?;
        write_file(&dir.join("describe.csv"), describe_csv(&stats).as_bytes())?;
        let mut m = manifest_for(
            "describe",
            &a.input,
            digest,
            serde_json::json!({
                "split": split.to_string(),
                "tau": a.input.tau,
                "pandemic_onset": a.input.pandemic_onset.to_string(),
            }),
        );
        m.outputs = vec!["describe.txt".into(), "describe.csv".into()];
        m.write(&dir.join("describe.manifest.json"))?;
    }
    Ok(text)
}

fn bad_beta(beta: f64) -> Option<CliError> {
    (!(beta > 0.0 && beta < 1.0)).then(|| usage(format!("--beta must lie in (0, 1), got {beta}")))
}

/// Share of estimation rows (observed inflation inside the window) with the
/// regime dummy on.
fn regime_share(data: &PanelDataset, model: Model, window: &QuarterRange) -> Option<f64> {
    let (pi, d) = (data.column(PI).ok()?, data.column(model.regime_column()).ok()?);
    let (mut on, mut n) = (0usize, 0usize);
    for (idx, (p, d)) in pi.iter().zip(d).enumerate() {
        let (_, t) = data.cell_coords(idx);
        if let (Some(_), Some(d), true) = (p, d, window.contains(data.quarter_at(t))) {
            n += 1;
            on += (*d != 0.0) as usize;
        }
    }
    (n > 0).then(|| on as f64 / n as f64)
}

/// Adds a remediation hint to a rank failure caused by an empty or
/// all-covering regime.
fn regime_hint(err: CoreError, model: Model, data: &PanelDataset, a: &EstimateArgs) -> CliError {
    let degenerate = matches!(err, CoreError::RankDeficient { .. })
        && matches!(regime_share(data, model, &a.input.window), Some(s) if s == 0.0 || s == 1.0);
    let hint = degenerate.then(|| match model {
        Model::Threshold => {
            let (lo, hi) = data
                .column(THETA)
                .map(|c| {
                    c.iter()
                        .flatten()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
                })
                .unwrap_or((f64::NAN, f64::NAN));
            format!(
                "the tight-market regime (theta > {}) is empty or covers every observation, so the \
                 interaction is all zero or equal to slack; choose --tau inside the observed theta range [{lo:.4}, {hi:.4}]",
                a.input.tau
            )
        }
        Model::PandemicShift => format!(
            "the window {} has no quarters on one side of the onset {}; widen --window or move --pandemic-onset",
            a.input.window, a.input.pandemic_onset
        ),
    });
    CliError::Stage {
        context: format!("estimation ({model})"),
        source: err,
        hint,
    }
}

fn linear_combination(fit: &FitResult, a: &str, b: &str, label: &str) -> CoefRow {
    let (i, j) = (fit.index(a).unwrap(), fit.index(b).unwrap());
    let coef = implied_post_slope(fit.coef[i], fit.coef[j]);
    let var = fit.vcov[(i, i)] + fit.vcov[(j, j)] + 2.0 * fit.vcov[(i, j)];
    let se = var.max(0.0).sqrt();
    let p = if se > 0.0 {
        let t = StudentsT::new(0.0, 1.0, fit.df() as f64).expect("positive df");
        2.0 * t.sf((coef / se).abs())
    } else {
        1.0
    };
    CoefRow {
        name: format!("{a}+{b}"),
        label: label.to_string(),
        coef,
        se,
        p_value: p,
        stars: stars(p),
    }
}

fn base_report(title: String, model: Option<u8>, a: &EstimateArgs, fit: &FitResult) -> EstimateReport {
    let mut r = EstimateReport {
        title,
        model,
        window: a.input.window.to_string(),
        covariance: match fit.cov.kind {
            CovKind::Cluster => "cluster (MSA)".into(),
            CovKind::Dk => "Driscoll-Kraay".into(),
        },
        dk_lags: fit.dk_lags,
        tau: a.input.tau,
        pandemic_onset: a.input.pandemic_onset.to_string(),
        coefficients: Vec::new(),
        implied: None,
        kappa: Vec::new(),
        first_stage: Vec::new(),
        wu_hausman: None,
        n_obs: 0,
        n_units: 0,
        n_clusters: 0,
        r2_within: 0.0,
    };
    r.diagnostics_from(fit);
    r
}

fn rho_for(
    data: &PanelDataset,
    supplied: Option<f64>,
    window: Option<QuarterRange>,
    default: CliResult<QuarterRange>,
    which: &str,
) -> CliResult<(f64, String)> {
    if let Some(rho) = supplied {
        return Ok((rho, "supplied".into()));
    }
    let window = match window {
        Some(w) => w,
        None => default?,
    };
    let fit = ar1_persistence(data, SLACK, window).map_err(CliError::stage(format!("slack AR(1), {which} window")))?;
    Ok((fit.rho, format!("estimated AR(1) {window}")))
}

fn estimate_report(a: &EstimateArgs) -> CliResult<(EstimateReport, RunManifest)> {
    let (data, digest) = prepare(&a.input)?;
    let beta = a.beta.unwrap_or_else(default_beta);
    if let Some(e) = bad_beta(beta) {
        return Err(e);
    }
    let cov = a.cov.request();

    if let Some(path) = &a.spec {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let mut spec: DesignSpec = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        spec.window.get_or_insert(a.input.window);
        if a.cov.dk_lags.is_some() || a.cov.cov != crate::args::CovArg::Cluster {
            spec.cov = cov;
        }
        let fit = tsls_fit(&spec, &data).map_err(CliError::stage("estimation (custom design)"))?;
        let mut report = base_report(format!("Custom design: {}", spec.depvar), None, a, &fit);
        report.window = spec.window.map(|w| w.to_string()).unwrap_or_default();
        report.coefficients = fit.names.iter().filter_map(|n| CoefRow::from_fit(&fit, n, n)).collect();
        let config = serde_json::to_value(&spec).expect("spec serializes");
        return Ok((report, manifest_for("estimate", &a.input, digest, config)));
    }

    let model = Model::from_number(a.model).ok_or_else(|| usage("--model must be 1 or 2"))?;
    let mut spec = model.design();
    spec.window = Some(a.input.window);
    spec.cov = cov;
    let fit = tsls_fit(&spec, &data).map_err(|e| regime_hint(e, model, &data, a))?;

    let (inter_label, implied_label, regimes) = match model {
        Model::PandemicShift => (
            "slack x pandemic (delta psi)",
            "slack, post-pandemic (implied)",
            ["pre-pandemic", "post-pandemic"],
        ),
        Model::Threshold => (
            "slack x tight market (beta_2)",
            "slack, tight market (implied)",
            ["not tight", "tight market"],
        ),
    };
    let [s, inter, rel] = model.params();
    let mut report = base_report(model.to_string(), Some(model.number()), a, &fit);
    report.coefficients = vec![
        CoefRow::from_fit(&fit, &s, "slack").unwrap(),
        CoefRow::from_fit(&fit, &inter, inter_label).unwrap(),
        CoefRow::from_fit(&fit, &rel, "rel_p_lag").unwrap(),
    ];
    let implied = linear_combination(&fit, &s, &inter, implied_label);

    let w = a.input.window;
    let onset = a.input.pandemic_onset;
    let pre_default = QuarterRange::new(w.start, (onset - 1).min(w.end))
        .map_err(|_| usage(format!("window {w} has no quarters before the onset; pass --ar1-pre or --rho-pre")));
    let post_default = QuarterRange::new(onset.max(w.start), w.end)
        .map_err(|_| usage(format!("window {w} has no quarters from the onset; pass --ar1-post or --rho-post")));
    let (rho_pre, src_pre) = rho_for(&data, a.rho_pre, a.ar1_pre, pre_default, "pre")?;
    let (rho_post, src_post) = rho_for(&data, a.rho_post, a.ar1_post, post_default, "post")?;
    for (regime, psi, rho, src) in [
        (regimes[0], report.coefficients[0].coef, rho_pre, src_pre),
        (regimes[1], implied.coef, rho_post, src_post),
    ] {
        let kappa = kappa_from_psi(psi, rho, beta).map_err(CliError::stage("structural mapping"))?;
        report.kappa.push(KappaRow {
            regime: regime.into(),
            psi,
            rho,
            rho_source: src,
            beta,
            kappa,
        });
    }
    report.implied = Some(implied);

    let config = serde_json::json!({
        "model": model.number(),
        "tau": a.input.tau,
        "pandemic_onset": onset.to_string(),
        "covariance": spec.cov,
        "beta": beta,
        "rho_pre": a.rho_pre,
        "rho_post": a.rho_post,
        "ar1_pre": a.ar1_pre.map(|w| w.to_string()),
        "ar1_post": a.ar1_post.map(|w| w.to_string()),
    });
    Ok((report, manifest_for("estimate", &a.input, digest, config)))
}

fn estimate(a: &EstimateArgs) -> CliResult<String> {
    let (report, mut manifest) = estimate_report(a)?;
    let text = report.to_text();
    let json = format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(dir) = &a.input.out_dir {
        let dir = ensure_dir(dir)?;
        write_file(&dir.join("estimate.txt"), text.as_bytes())?;
        write_file(&dir.join("estimate.json"), json.as_bytes())?;
        manifest.outputs = vec!["estimate.txt".into(), "estimate.json".into()];
        manifest.write(&dir.join("estimate.manifest.json"))?;
    }
    Ok(if a.json { json } else { text })
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn figures(a: &FiguresArgs) -> CliResult<String> {
    if a.which == 1 {
        return Err(usage(
            "Figure I needs an aggregate inflation-expectations series that is not part of the input schema; it is omitted",
        ));
    }
    if !(2..=4).contains(&a.which) {
        return Err(usage(format!("--which must be 2, 3 or 4, got {}", a.which)));
    }
    let (data, digest) = prepare(&a.input)?;
    let data = windowed(&data, &a.input.window)?;
    let mut files: Vec<(String, String)> = Vec::new();
    let mut summary = String::new();
    match a.which {
        2 => {
            let rows = figure2(&data).map_err(CliError::stage("Figure II"))?;
            let mut csv = String::from("quarter,mean_pi,mean_theta\n");
            for r in &rows {
                let _ = writeln!(csv, "{},{},{}", r.quarter, cell(r.mean_pi), cell(r.mean_theta));
            }
            let _ = writeln!(summary, "Figure II: {} quarters", rows.len());
            files.push(("figure2.csv".into(), csv));
        }
        3 => {
            if a.msa.is_empty() {
                return Err(usage(format!(
                    "Figure III needs --msa with at least one id; available: {}",
                    data.units().join(", ")
                )));
            }
            let fig = figure3(&data, &a.msa).map_err(|e| match e {
                CoreError::InvalidArgument(m) => usage(m),
                e => CliError::Stage {
                    context: "Figure III".into(),
                    source: e,
                    hint: None,
                },
            })?;
            let mut csv = format!("quarter,{}\n", fig.msa.join(","));
            for (q, row) in fig.quarters.iter().zip(&fig.slack) {
                let cells: Vec<String> = row.iter().map(|v| cell(*v)).collect();
                let _ = writeln!(csv, "{q},{}", cells.join(","));
            }
            let _ = writeln!(summary, "Figure III: {} MSAs over {} quarters", fig.msa.len(), fig.quarters.len());
            files.push(("figure3.csv".into(), csv));
        }
        _ => {
            let fig = figure4(&data, a.input.window, a.input.pandemic_onset).map_err(CliError::stage("Figure IV"))?;
            let bins = bin_points(&fig, a.bins).map_err(|e| usage(e.to_string()))?;
            let mut points = String::from("period,treatment,msa_id,quarter,slack_resid,pi_resid\n");
            for p in &fig.points {
                let _ = writeln!(points, "{},{},{},{},{},{}", p.period, p.treatment, p.msa, p.quarter, p.slack, p.pi);
            }
            let mut binned = String::from("period,treatment,bin,slack_resid,pi_resid,count\n");
            for b in &bins {
                let _ = writeln!(binned, "{},{},{},{},{},{}", b.period, b.treatment, b.bin, b.slack, b.pi, b.count);
            }
            let mut slopes = String::from("period,treatment,slope,n_obs\n");
            let _ = writeln!(summary, "Figure IV fitted slopes");
            for s in &fig.slopes {
                let _ = writeln!(slopes, "{},{},{},{}", s.period, s.treatment, s.slope, s.n_obs);
                let _ = writeln!(summary, "{:<5} {:<13} {:>9}  (n = {})", s.period, s.treatment, format!("{:.4}", s.slope), s.n_obs);
            }
            files.push(("figure4_points.csv".into(), points));
            files.push(("figure4_binned.csv".into(), binned));
            files.push(("figure4_slopes.csv".into(), slopes));
        }
    }
    let dir = ensure_dir(a.input.out_dir.as_deref().unwrap_or(Path::new(".")))?;
    for (name, body) in &files {
        write_file(&dir.join(name), body.as_bytes())?;
        let _ = writeln!(summary, "wrote {}", dir.join(name).display());
    }
    let mut m = manifest_for(
        "figures",
        &a.input,
        digest,
        serde_json::json!({
            "which": a.which,
            "msa": a.msa,
            "bins": a.bins,
            "tau": a.input.tau,
            "pandemic_onset": a.input.pandemic_onset.to_string(),
        }),
    );
    m.outputs = files.iter().map(|f| f.0.clone()).collect();
    m.write(&dir.join(format!("figure{}.manifest.json", a.which)))?;
    Ok(summary)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<DgpConfig> {
    let mut cfg = match path {
        None => DgpConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config {
                path: p.to_path_buf(),
                reason: e.to_string(),
            })?;
            toml::from_str(&text).map_err(|e| CliError::Config {
                path: p.to_path_buf(),
                reason: e.to_string(),
            })?
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(CliError::stage("DGP config"))?;
    Ok(cfg)
}

fn simulate(a: &SimulateArgs) -> CliResult<String> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let sim = gen_panel(&cfg).map_err(CliError::stage("simulation"))?;
    let mut csv = Vec::new();
    sim.panel.write_csv(&mut csv).map_err(CliError::stage("writing panel"))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_file(&a.out, &csv)?;
    let mut m = RunManifest::new("simulate", serde_json::to_value(&cfg).expect("config serializes"));
    m.seed = Some(cfg.seed);
    m.window = Some(cfg.range().to_string());
    m.outputs = vec![a.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()];
    let sidecar = sidecar_path(&a.out);
    m.write(&sidecar)?;
    Ok(format!(
        "wrote {} ({} MSAs x {} quarters, sha256 {})\nwrote {}\n",
        a.out.display(),
        sim.panel.n_units(),
        sim.panel.n_quarters(),
        sha256_hex(&csv),
        sidecar.display()
    ))
}

fn mc(a: &McArgs) -> CliResult<String> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let model = Model::from_number(a.model).ok_or_else(|| usage("--model must be 1 or 2"))?;
    if a.reps < 2 {
        return Err(usage("--reps must be at least 2"));
    }
    let report = mc_study(&cfg, a.reps, model).map_err(CliError::stage("Monte Carlo"))?;
    let text = mc_text(&report);
    if let Some(dir) = &a.out_dir {
        let dir = ensure_dir(dir)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&dir.join("mc.json"), format!("{json}\n").as_bytes())?;
        write_file(&dir.join("mc.txt"), text.as_bytes())?;
        let mut m = RunManifest::new(
            "mc",
            serde_json::json!({ "dgp": cfg, "model": model.number(), "reps": a.reps }),
        );
        m.seed = Some(cfg.seed);
        m.outputs = vec!["mc.json".into(), "mc.txt".into()];
        m.write(&dir.join("mc.manifest.json"))?;
    }
    Ok(text)
}
