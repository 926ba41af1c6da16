//! System dimensions, power levels and BS/IRS/user geometry.
//!
//! Everything here is linear-scale once constructed: the noise power is
//! converted from dBm a single time when a configuration is loaded and
//! path-loss figures are turned into power gains by [`link_gain`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where the nonzero delay taps of each link sit inside the `D`-tap window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPlacement {
    /// Nonzero taps occupy delays `0..ceil(D/2)`.
    #[default]
    Leading,
    /// Nonzero delays are drawn uniformly without replacement, per link.
    Random,
}

/// Dimensions and power budget of the downlink.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Number of OFDM subcarriers `N`.
    pub n_subcarriers: usize,
    /// BS transmit antennas `N_t`.
    pub n_tx: usize,
    /// Single-antenna users `K`.
    pub n_users: usize,
    /// IRS reflecting elements `M`.
    pub n_irs: usize,
    /// Channel taps `D`.
    pub n_taps: usize,
    /// Cyclic prefix length `N_cp`.
    pub cp_len: usize,
    /// Noise power per user and subcarrier, watts.
    pub noise_power: f64,
    /// Total transmit power over all subcarriers, watts.
    pub tx_power: f64,
    /// Phase-shifter resolution in bits; `None` is a continuous-phase IRS.
    pub quant_bits: Option<u32>,
    pub rng_seed: u64,
    pub tap_placement: TapPlacement,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            n_tx: 8,
            n_users: 3,
            n_irs: 64,
            n_taps: 16,
            cp_len: 16,
            noise_power: dbm_to_watts(-70.0),
            tx_power: 1.0,
            quant_bits: None,
            rng_seed: 1,
            tap_placement: TapPlacement::Leading,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_subcarriers == 0 || self.n_tx == 0 || self.n_users == 0 || self.n_irs == 0 {
            return bad("N, N_t, K and M must all be at least 1".into());
        }
        if !(1 <= self.n_taps && self.n_taps <= self.cp_len && self.cp_len <= self.n_subcarriers) {
            return bad(format!(
                "need 1 <= D <= N_cp <= N, got D={}, N_cp={}, N={}",
                self.n_taps, self.cp_len, self.n_subcarriers
            ));
        }
        if self.n_users > self.n_tx {
            return bad(format!(
                "K={} users exceed N_t={} antennas",
                self.n_users, self.n_tx
            ));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return bad(format!(
                "noise power must be positive, got {}",
                self.noise_power
            ));
        }
        if !(self.tx_power > 0.0 && self.tx_power.is_finite()) {
            return bad(format!(
                "transmit power must be positive, got {}",
                self.tx_power
            ));
        }
        if self.quant_bits == Some(0) {
            return bad("quant_bits must be at least 1".into());
        }
        Ok(())
    }
}

/// Distances and path-loss parameters of the three links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkGeometry {
    /// BS to IRS distance, meters.
    pub d_bs_irs: f64,
    /// IRS to user distance, meters (common to all users).
    pub d_irs_user: f64,
    /// Fixed BS to user distances. When absent they are drawn per trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_bs_user: Option<Vec<f64>>,
    /// Attenuation at the 1 m reference distance, dB.
    pub ref_loss_db: f64,
    pub exp_bs_irs: f64,
    pub exp_irs_user: f64,
    pub exp_bs_user: f64,
}

impl Default for LinkGeometry {
    fn default() -> Self {
        Self {
            d_bs_irs: 50.0,
            d_irs_user: 3.0,
            d_bs_user: None,
            ref_loss_db: 30.0,
            exp_bs_irs: 2.8,
            exp_irs_user: 2.5,
            exp_bs_user: 3.5,
        }
    }
}

impl LinkGeometry {
    /// Admissible range of BS-user distances, `[d_BI - d_IU, d_BI + d_IU]`.
    pub fn user_distance_range(&self) -> (f64, f64) {
        (
            self.d_bs_irs - self.d_irs_user,
            self.d_bs_irs + self.d_irs_user,
        )
    }

    pub fn validate(&self, n_users: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.d_bs_irs >= 1.0 && self.d_irs_user >= 1.0) {
            return bad(format!(
                "distances must be at least 1 m (d_BI={}, d_IU={})",
                self.d_bs_irs, self.d_irs_user
            ));
        }
        for (name, e) in [
            ("exp_bs_irs", self.exp_bs_irs),
            ("exp_irs_user", self.exp_irs_user),
            ("exp_bs_user", self.exp_bs_user),
        ] {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("{name} must be positive, got {e}"));
            }
        }
        if !self.ref_loss_db.is_finite() {
            return bad("ref_loss_db must be finite".into());
        }
        if let Some(d) = &self.d_bs_user {
            if d.len() != n_users {
                return bad(format!(
                    "{} BS-user distances given for {} users",
                    d.len(),
                    n_users
                ));
            }
            let (lo, hi) = self.user_distance_range();
            if let Some(x) = d.iter().find(|&&x| !(x >= 1.0 && x >= lo && x <= hi)) {
                return bad(format!(
                    "BS-user distance {x} outside [{lo}, {hi}] or below 1 m"
                ));
            }
        }
        Ok(())
    }
}

/// A validated system configuration together with its geometry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub system: SystemConfig,
    pub geometry: LinkGeometry,
}

impl Scenario {
    pub fn new(system: SystemConfig, geometry: LinkGeometry) -> Result<Self> {
        system.validate()?;
        geometry.validate(system.n_users)?;
        Ok(Self { system, geometry })
    }
}

/// Per-trial, per-user large-scale power gains of the three links.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    pub bs_user: Vec<f64>,
    pub bs_irs: f64,
    pub irs_user: f64,
}

impl LinkGains {
    pub fn from_distances(geometry: &LinkGeometry, d_bs_user: &[f64]) -> Result<Self> {
        let bs_user = d_bs_user
            .iter()
            .map(|&d| link_gain(d, geometry.exp_bs_user, geometry.ref_loss_db))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bs_user,
            bs_irs: link_gain(geometry.d_bs_irs, geometry.exp_bs_irs, geometry.ref_loss_db)?,
            irs_user: link_gain(
                geometry.d_irs_user,
                geometry.exp_irs_user,
                geometry.ref_loss_db,
            )?,
        })
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Linear power gain `10^(-L/10) * d^(-alpha)` of a link of length `distance`.
pub fn link_gain(distance: f64, exponent: f64, ref_loss_db: f64) -> Result<f64> {
    if !(distance >= 1.0) {
        return Err(Error::Domain(format!(
            "path-loss model is referenced at 1 m; got distance {distance}"
        )));
    }
    Ok(10f64.powf(-ref_loss_db / 10.0) * distance.powf(-exponent))
}

/// Draws each BS-user distance independently and uniformly from
/// `[d_BI - d_IU, d_BI + d_IU]`.
pub fn sample_user_distances<R: Rng + ?Sized>(
    geometry: &LinkGeometry,
    n_users: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (lo, hi) = geometry.user_distance_range();
    if lo < 1.0 {
        return Err(Error::Domain(format!(
            "d_BI - d_IU = {lo} m is below the 1 m reference distance"
        )));
    }
    Ok((0..n_users)
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect())
}
