use nalgebra::{DMatrix, DVector};
use pc_anatomy_core::fe::{tsls_fit, DesignSpec, FixedEffect};
use pc_anatomy_core::inference::{cluster_cov, driscoll_kraay_cov, hc0_cov, CovarianceRequest, F_CAP};
use pc_anatomy_core::panel::{Column, PanelDataset, QuarterRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn empty_panel(n_units: usize, n_t: usize) -> PanelDataset {
    let units = (0..n_units).map(|i| format!("u{i:03}")).collect();
    let start = "2001q1".parse().unwrap();
    PanelDataset::new(units, QuarterRange::new(start, start + (n_t as i32 - 1)).unwrap()).unwrap()
}

/// Panel with y, x1, x2, z1, z2 where x1 is endogenous and unit and time
/// effects enter everything.
fn random_panel(n_units: usize, n_t: usize, seed: u64, missing: f64) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = empty_panel(n_units, n_t);
    let n = n_units * n_t;
    let a: Vec<f64> = (0..n_units).map(|_| 2.0 * normal(&mut rng)).collect();
    let d: Vec<f64> = (0..n_t).map(|_| 2.0 * normal(&mut rng)).collect();
    let mut cols: Vec<Column> = vec![Vec::with_capacity(n); 5];
    for u in 0..n_units {
        for t in 0..n_t {
            let z1 = normal(&mut rng) + 0.3 * a[u];
            let z2 = normal(&mut rng) - 0.2 * d[t];
            let e = normal(&mut rng);
            let x1 = z1 + 0.5 * z2 + 0.6 * e + a[u] - d[t] + 0.3 * normal(&mut rng);
            let x2 = normal(&mut rng) + d[t];
            let y = 1.5 * x1 - 0.5 * x2 + a[u] + d[t] + e;
            let drop = rng.random::<f64>() < missing;
            for (c, v) in cols.iter_mut().zip([y, x1, x2, z1, z2]) {
                c.push(if drop { None } else { Some(v) });
            }
        }
    }
    for (name, c) in ["y", "x1", "x2", "z1", "z2"].iter().zip(cols) {
        p.add_column(*name, c).unwrap();
    }
    p
}

/// Adds unit dummies (all but the first) and quarter dummies (all but the
/// first) so the no-FE design with an intercept spans the same space.
fn with_dummies(p: &PanelDataset) -> (PanelDataset, Vec<String>) {
    let mut q = p.clone();
    let mut names = Vec::new();
    for u in 1..p.n_units() {
        let name = format!("du{u}");
        let col = (0..p.n_cells()).map(|i| Some((p.cell_coords(i).0 == u) as u8 as f64)).collect();
        q.add_column(name.clone(), col).unwrap();
        names.push(name);
    }
    for t in 1..p.n_quarters() {
        let name = format!("dt{t}");
        let col = (0..p.n_cells()).map(|i| Some((p.cell_coords(i).1 == t) as u8 as f64)).collect();
        q.add_column(name.clone(), col).unwrap();
        names.push(name);
    }
    (q, names)
}

/// OLS through an SVD least-squares solve of the dense dummy design.
fn dense_dummy_ols(p: &PanelDataset, regressors: &[&str]) -> Vec<f64> {
    let (y, x1, x2) = (p.column("y").unwrap(), p.column(regressors[0]).unwrap(), p.column(regressors[1]).unwrap());
    let rows: Vec<usize> = (0..p.n_cells()).filter(|&i| y[i].is_some() && x1[i].is_some()).collect();
    let k = 2 + 1 + (p.n_units() - 1) + (p.n_quarters() - 1);
    let mut x = DMatrix::zeros(rows.len(), k);
    let mut yv = DVector::zeros(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        let (u, t) = p.cell_coords(i);
        yv[r] = y[i].unwrap();
        x[(r, 0)] = x1[i].unwrap();
        x[(r, 1)] = x2[i].unwrap();
        x[(r, 2)] = 1.0;
        if u > 0 {
            x[(r, 2 + u)] = 1.0;
        }
        if t > 0 {
            x[(r, 2 + (p.n_units() - 1) + t)] = 1.0;
        }
    }
    let b = x.svd(true, true).solve(&yv, 1e-12).unwrap();
    vec![b[0], b[1]]
}

fn check_fwl(n_units: usize, n_t: usize, missing: f64) {
    let p = random_panel(n_units, n_t, 11 + n_units as u64, missing);
    let within = tsls_fit(&DesignSpec::ols("y", &["x1", "x2"]), &p).unwrap();
    let oracle = dense_dummy_ols(&p, &["x1", "x2"]);
    for j in 0..2 {
        assert!(
            (within.coef[j] - oracle[j]).abs() < 1e-8,
            "{n_units}x{n_t}: within {} vs dummies {}",
            within.coef[j],
            oracle[j]
        );
    }

    let (pd, dummies) = with_dummies(&p);
    let mut regs = vec!["x1", "x2"];
    regs.extend(dummies.iter().map(|s| s.as_str()));
    let mut spec = DesignSpec::ols("y", &regs);
    spec.fe.clear();
    let explicit = tsls_fit(&spec, &pd).unwrap();
    for j in 0..2 {
        assert!((within.coef[j] - explicit.coef[j]).abs() < 1e-8);
    }

    let mut iv = DesignSpec::iv("y", &["x2"], &["x1"], &["z1", "z2"]);
    iv.fe = vec![FixedEffect::Unit, FixedEffect::Time];
    let within_iv = tsls_fit(&iv, &p).unwrap();
    let mut exog: Vec<&str> = vec!["x2"];
    exog.extend(dummies.iter().map(|s| s.as_str()));
    let mut iv_dummies = DesignSpec::iv("y", &exog, &["x1"], &["z1", "z2"]);
    iv_dummies.fe.clear();
    let explicit_iv = tsls_fit(&iv_dummies, &pd).unwrap();
    assert!((within_iv.coef("x1").unwrap() - explicit_iv.coef("x1").unwrap()).abs() < 1e-8);
    assert!((within_iv.coef("x2").unwrap() - explicit_iv.coef("x2").unwrap()).abs() < 1e-8);
}

#[test]
fn within_matches_dummies_small_panel() {
    check_fwl(3, 6, 0.0);
}

#[test]
fn within_matches_dummies_large_panel() {
    check_fwl(50, 50, 0.0);
}

#[test]
fn within_matches_dummies_unbalanced() {
    check_fwl(12, 15, 0.15);
}

#[test]
fn tsls_with_self_instruments_is_ols() {
    let mut p = random_panel(20, 12, 3, 0.0);
    let x1 = p.column("x1").unwrap().to_vec();
    p.add_column("z_self", x1).unwrap();
    let ols = tsls_fit(&DesignSpec::ols("y", &["x1", "x2"]), &p).unwrap();
    let mut spec = DesignSpec::iv("y", &["x2"], &["x1"], &["z_self"]);
    spec.wu_hausman = true;
    let iv = tsls_fit(&spec, &p).unwrap();
    for name in ["x1", "x2"] {
        assert!((ols.coef(name).unwrap() - iv.coef(name).unwrap()).abs() < 1e-10);
        assert!((ols.se(name).unwrap() - iv.se(name).unwrap()).abs() < 1e-10);
    }
    let wh = iv.wu_hausman.unwrap();
    assert_eq!(wh.statistic, 0.0);
    assert_eq!(wh.p_value, 1.0);
    let f = &iv.first_stage[0].f_stat;
    assert!(f.capped);
    assert_eq!(f.value, F_CAP);
}

#[test]
fn just_identified_iv_is_covariance_ratio() {
    // one endogenous regressor, one instrument, no FE: b = cov(z, y) / cov(z, x)
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = empty_panel(10, 30);
    let n = p.n_cells();
    let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let e: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let x: Vec<f64> = (0..n).map(|i| z[i] + 0.8 * e[i] + normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|i| 2.0 - x[i] + e[i]).collect();
    for (name, v) in [("y", &y), ("x", &x), ("z", &z)] {
        p.add_column(name, v.iter().map(|v| Some(*v)).collect()).unwrap();
    }
    let mut spec = DesignSpec::iv("y", &[], &["x"], &["z"]);
    spec.fe.clear();
    let fit = tsls_fit(&spec, &p).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mz, mx, my) = (mean(&z), mean(&x), mean(&y));
    let czy: f64 = (0..n).map(|i| (z[i] - mz) * (y[i] - my)).sum();
    let czx: f64 = (0..n).map(|i| (z[i] - mz) * (x[i] - mx)).sum();
    assert!((fit.coef("x").unwrap() - czy / czx).abs() < 1e-10);
    assert!((fit.coef("_cons").unwrap() - (my - czy / czx * mx)).abs() < 1e-10);
}

#[test]
fn rescaling_instruments_changes_nothing() {
    let p = random_panel(15, 20, 21, 0.05);
    let mut q = p.clone();
    for (src, dst, s) in [("z1", "z1s", 1e3), ("z2", "z2s", -1e-3)] {
        let col = p.column(src).unwrap().iter().map(|v| v.map(|v| v * s)).collect();
        q.add_column(dst, col).unwrap();
    }
    let mut a = DesignSpec::iv("y", &["x2"], &["x1"], &["z1", "z2"]);
    a.wu_hausman = true;
    let mut b = DesignSpec::iv("y", &["x2"], &["x1"], &["z1s", "z2s"]);
    b.wu_hausman = true;
    let (fa, fb) = (tsls_fit(&a, &p).unwrap(), tsls_fit(&b, &q).unwrap());
    for j in 0..2 {
        assert!((fa.coef[j] - fb.coef[j]).abs() < 1e-9 * fa.coef[j].abs().max(1.0));
        assert!((fa.vcov[(j, j)] - fb.vcov[(j, j)]).abs() < 1e-9 * fa.vcov[(j, j)]);
    }
    let (f1, f2) = (fa.first_stage[0].f_stat.value, fb.first_stage[0].f_stat.value);
    assert!((f1 - f2).abs() < 1e-8 * f1);
    let (w1, w2) = (fa.wu_hausman.unwrap(), fb.wu_hausman.unwrap());
    assert!((w1.statistic - w2.statistic).abs() < 1e-8 * w1.statistic.max(1.0));
}

#[test]
fn rescaling_regressors_leaves_statistics() {
    let p = random_panel(15, 20, 22, 0.0);
    let mut q = p.clone();
    let col = p.column("x2").unwrap().iter().map(|v| v.map(|v| 250.0 * v)).collect();
    q.add_column("x2s", col).unwrap();
    let mut a = DesignSpec::iv("y", &["x2"], &["x1"], &["z1", "z2"]);
    a.wu_hausman = true;
    let mut b = DesignSpec::iv("y", &["x2s"], &["x1"], &["z1", "z2"]);
    b.wu_hausman = true;
    let (fa, fb) = (tsls_fit(&a, &p).unwrap(), tsls_fit(&b, &q).unwrap());
    assert!((fa.coef("x2").unwrap() - 250.0 * fb.coef("x2s").unwrap()).abs() < 1e-9);
    let t = |f: &pc_anatomy_core::fe::FitResult, n: &str| f.coef(n).unwrap() / f.se(n).unwrap();
    assert!((t(&fa, "x2") - t(&fb, "x2s")).abs() < 1e-8);
    assert!((t(&fa, "x1") - t(&fb, "x1")).abs() < 1e-8);
    let (w1, w2) = (fa.wu_hausman.unwrap(), fb.wu_hausman.unwrap());
    assert!((w1.statistic - w2.statistic).abs() < 1e-8 * w1.statistic.max(1.0));
}

#[test]
fn covariance_choice_leaves_coefficients() {
    let p = random_panel(15, 20, 23, 0.0);
    let a = DesignSpec::iv("y", &["x2"], &["x1"], &["z1", "z2"]);
    let mut b = a.clone();
    b.cov = CovarianceRequest::dk(Some(2));
    let (fa, fb) = (tsls_fit(&a, &p).unwrap(), tsls_fit(&b, &p).unwrap());
    assert_eq!(fa.coef, fb.coef);
    assert_ne!(fa.vcov, fb.vcov);
    assert_eq!(fb.n_clusters, 20);
    assert_eq!(fb.dk_lags, Some(2));
}

#[test]
fn dk_single_unit_lag0_is_hc0() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 40;
    let x = DMatrix::from_fn(n, 3, |_, _| normal(&mut rng));
    let e = DVector::from_fn(n, |_, _| normal(&mut rng));
    let periods: Vec<i32> = (0..n as i32).collect();
    let dk = driscoll_kraay_cov(&x, &e, &periods, 0).unwrap();
    let hc = hc0_cov(&x, &e).unwrap();
    assert!((dk - hc).amax() < 1e-12);
}

#[test]
fn one_obs_per_cluster_is_hc0() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 30;
    let x = DMatrix::from_fn(n, 2, |_, _| normal(&mut rng));
    let e = DVector::from_fn(n, |_, _| normal(&mut rng));
    let ids: Vec<usize> = (0..n).collect();
    let cl = cluster_cov(&x, &e, &ids, false).unwrap();
    let hc = hc0_cov(&x, &e).unwrap();
    assert!((cl - hc).amax() < 1e-12);
}
