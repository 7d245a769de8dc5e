//! Reduced-form to structural slope mapping and the Calvo slope.

use crate::error::{Error, Result};

/// Quarterly discount factor used for the slope mapping, `0.99^(1/4)`.
pub fn default_beta() -> f64 {
    0.99f64.powf(0.25)
}

/// Discount factor in the Calvo illustration.
pub const CALVO_BETA: f64 = 0.99;

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("discount factor {beta} outside (0, 1)")))
    }
}

/// `kappa = psi * (1 - beta * rho)`.
pub fn kappa_from_psi(psi: f64, rho: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(psi * (1.0 - beta * rho))
}

/// Inverse of [`kappa_from_psi`].
pub fn psi_from_kappa(kappa: f64, rho: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(kappa / (1.0 - beta * rho))
}

/// Persistence that maps `psi` to `kappa`: `(1 - kappa/psi) / beta`.
pub fn implied_rho(psi: f64, kappa: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if psi == 0.0 {
        return Err(Error::InvalidArgument("implied persistence undefined for psi = 0".into()));
    }
    Ok((1.0 - kappa / psi) / beta)
}

/// Slope in the shifted regime: base slope plus interaction coefficient.
pub fn implied_post_slope(psi_base: f64, delta: f64) -> f64 {
    psi_base + delta
}

/// `(1 - xi)(1 - beta xi) / xi` for non-adjustment probability `xi`.
pub fn calvo_kappa(xi: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Calvo probability {xi} outside (0, 1]"
        )));
    }
    Ok((1.0 - xi) * (1.0 - beta * xi) / xi)
}

/// One regime's slope mapping.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SlopeMapping {
    pub psi: f64,
    pub rho: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl SlopeMapping {
    pub fn new(psi: f64, rho: f64, beta: f64) -> Result<Self> {
        Ok(SlopeMapping {
            psi,
            rho,
            beta,
            kappa: kappa_from_psi(psi, rho, beta)?,
        })
    }
}
