use pc_anatomy_core::inference::*;
use nalgebra::{DMatrix, DVector};
use pc_anatomy_core::Error;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_design(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (x, e)
}

#[test]
fn one_obs_per_cluster_is_hc0() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, e) = random_design(&mut rng, 40, 3);
    let ids: Vec<usize> = (0..40).collect();
    let c = cluster_cov(&x, &e, &ids, false).unwrap();
    let h = hc0_cov(&x, &e).unwrap();
    assert!((c - h).amax() < 1e-12);
}

#[test]
fn hand_built_two_cluster_sandwich() {
    // 2 clusters x 2 obs, one regressor: X'X = 1+4+9+16 = 30
    let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
    let e = DVector::from_vec(vec![0.5, -1.0, 2.0, 1.0]);
    // cluster sums: 1*0.5 + 2*(-1) = -1.5 ; 3*2 + 4*1 = 10
    let meat = 1.5f64.powi(2) + 10.0f64.powi(2);
    let want = meat / 900.0;
    let got = cluster_cov(&x, &e, &[7, 7, 3, 3], false).unwrap();
    assert_abs_diff_eq!(got[(0, 0)], want, epsilon = 1e-14);
    let adj = cluster_cov(&x, &e, &[7, 7, 3, 3], true).unwrap();
    assert_abs_diff_eq!(adj[(0, 0)], want * 2.0 * 3.0 / 3.0, epsilon = 1e-14);
}

#[test]
fn hand_built_two_regressor_sandwich() {
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, -1.0]);
    let e = DVector::from_vec(vec![1.0, -2.0, 0.5, 1.5]);
    let clusters = [0, 0, 1, 1];
    // brute force: explicit sums of x_i e_i per cluster
    let mut meat = DMatrix::<f64>::zeros(2, 2);
    for g in 0..2 {
        let mut s = [0.0; 2];
        for i in 0..4 {
            if clusters[i] == g {
                s[0] += x[(i, 0)] * e[i];
                s[1] += x[(i, 1)] * e[i];
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    let xtx = x.transpose() * &x;
    let inv = xtx.try_inverse().unwrap();
    let want = &inv * meat * &inv;
    let got = cluster_cov(&x, &e, &clusters, false).unwrap();
    assert!((got - want).amax() < 1e-13);
}

#[test]
fn single_cluster_rejected() {
    let x = DMatrix::from_element(3, 1, 1.0);
    let e = DVector::from_element(3, 1.0);
    assert!(matches!(
        cluster_cov(&x, &e, &[4, 4, 4], true),
        Err(Error::TooFewClusters(1))
    ));
}

#[test]
fn se_scales_with_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, e) = random_design(&mut rng, 30, 2);
    let ids: Vec<usize> = (0..30).map(|i| i / 3).collect();
    let a = cluster_cov(&x, &e, &ids, true).unwrap();
    let b = cluster_cov(&x, &(&e * -3.0), &ids, true).unwrap();
    for j in 0..2 {
        assert_abs_diff_eq!(b[(j, j)].sqrt(), 3.0 * a[(j, j)].sqrt(), epsilon = 1e-12);
    }
}

#[test]
fn cluster_relabeling_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, e) = random_design(&mut rng, 60, 3);
    let ids: Vec<usize> = (0..60).map(|i| i % 7).collect();
    let relabeled: Vec<usize> = ids.iter().map(|g| 1000 - 13 * g).collect();
    let a = cluster_cov(&x, &e, &ids, true).unwrap();
    let b = cluster_cov(&x, &e, &relabeled, true).unwrap();
    assert!((&a - &b).amax() < 1e-12 * a.amax());
    assert!(is_symmetric_psd(&a, 1e-12, 1e-10));
}

#[test]
fn dk_lag0_single_unit_is_hc0() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, e) = random_design(&mut rng, 25, 2);
    let periods: Vec<i32> = (0..25).collect();
    let dk = driscoll_kraay_cov(&x, &e, &periods, 0).unwrap();
    let h = hc0_cov(&x, &e).unwrap();
    assert!((dk - h).amax() < 1e-12);
}

#[test]
fn dk_lag0_is_cross_sectional_sum_white() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, e) = random_design(&mut rng, 30, 2);
    let periods: Vec<i32> = (0..30).map(|i| (i % 10) as i32).collect();
    let dk = driscoll_kraay_cov(&x, &e, &periods, 0).unwrap();
    // lag 0 DK is clustering by period with no adjustment
    let ids: Vec<usize> = periods.iter().map(|p| *p as usize).collect();
    let c = cluster_cov(&x, &e, &ids, false).unwrap();
    assert!((dk - c).amax() < 1e-13);
}

#[test]
fn dk_rejects_too_many_lags() {
    let x = DMatrix::from_element(4, 1, 1.0);
    let e = DVector::from_vec(vec![1.0, -1.0, 2.0, 0.0]);
    assert!(matches!(
        driscoll_kraay_cov(&x, &e, &[0, 1, 2, 3], 4),
        Err(Error::TooManyLags { lags: 4, periods: 4 })
    ));
    assert!(driscoll_kraay_cov(&x, &e, &[0, 1, 2, 3], 3).is_ok());
}

#[test]
fn dk_is_psd_with_bartlett_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, e) = random_design(&mut rng, 200, 4);
    let periods: Vec<i32> = (0..200).map(|i| (i / 5) as i32).collect();
    for lags in [0, 1, 3, 8] {
        let v = driscoll_kraay_cov(&x, &e, &periods, lags).unwrap();
        assert!(is_symmetric_psd(&v, 1e-12, 1e-10), "lags {lags}");
    }
}

#[test]
fn newey_west_rule() {
    assert_eq!(newey_west_lags(94), 3);
    assert_eq!(newey_west_lags(100), 4);
    assert_eq!(newey_west_lags(10), 2);
}

/// Serially independent errors: DK and cluster standard errors should agree
/// on average; MA(3) common errors with a persistent common regressor push
/// DK(3) above DK(0).
#[test]
fn dk_versus_cluster_and_serial_correlation() {
    let (n_units, n_t, reps) = (30usize, 60usize, 200usize);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut dk_iid, mut cl_iid, mut dk0, mut dk3) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..reps {
        let n = n_units * n_t;
        let periods: Vec<i32> = (0..n).map(|r| (r % n_t) as i32).collect();
        let units: Vec<usize> = (0..n).map(|r| r / n_t).collect();
        // common, persistent regressor component plus idiosyncratic noise
        let mut f = vec![0.0; n_t];
        for t in 1..n_t {
            f[t] = 0.8 * f[t - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        let x = DMatrix::from_fn(n, 1, |r, _| f[r % n_t] + rng.sample::<f64, _>(StandardNormal));
        let e_iid = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = dk_single(&x, &e_iid, &periods, 0);
        dk_iid += v;
        cl_iid += cluster_cov(&x, &e_iid, &units, false).unwrap()[(0, 0)].sqrt();
        // MA(3) common error: four overlapping quarterly innovations
        let u: Vec<f64> = (0..n_t + 3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let e_ma = DVector::from_fn(n, |r, _| {
            let t = r % n_t;
            u[t] + u[t + 1] + u[t + 2] + u[t + 3] + rng.sample::<f64, _>(StandardNormal)
        });
        dk0 += dk_single(&x, &e_ma, &periods, 0);
        dk3 += dk_single(&x, &e_ma, &periods, 3);
    }
    let (dk_iid, cl_iid) = (dk_iid / reps as f64, cl_iid / reps as f64);
    assert!((dk_iid / cl_iid - 1.0).abs() < 0.1, "{dk_iid} vs {cl_iid}");
    assert!(dk3 > dk0 * 1.2, "{dk3} vs {dk0}");
}

fn dk_single(x: &DMatrix<f64>, e: &DVector<f64>, periods: &[i32], lags: usize) -> f64 {
    driscoll_kraay_cov(x, e, periods, lags).unwrap()[(0, 0)].sqrt()
}
