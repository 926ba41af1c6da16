//! SINR, average sum-rate, modified MSE and the weighted-MSE objective.
//!
//! All functionals take [`EffectiveChannels`], computed once per phase
//! vector, so metric evaluation never touches the `M x N_t` channels.

use std::f64::consts::{LN_2, PI};

use crate::channel::EffectiveChannels;
use crate::{CVec, Error, Result, ToneGrid, C64};

/// Resolution of the IRS phase shifters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseResolution {
    Continuous,
    /// `b`-bit shifters with grid spacing `Δ = 2π / 2^b`.
    Bits(u32),
}

impl PhaseResolution {
    /// `None` maps to continuous phases.
    pub fn from_bits(bits: Option<u32>) -> Self {
        bits.map_or(Self::Continuous, Self::Bits)
    }

    pub fn bits(self) -> Option<u32> {
        match self {
            Self::Continuous => None,
            Self::Bits(b) => Some(b),
        }
    }

    pub fn delta(self) -> Option<f64> {
        match self {
            Self::Continuous => None,
            Self::Bits(b) => Some(2.0 * PI / 2f64.powi(b as i32)),
        }
    }

    /// Unit-modulus coefficient with phase `angle`, rounded to the grid when quantized.
    pub fn unimodular(self, angle: f64) -> C64 {
        match self {
            Self::Continuous => C64::from_polar(1.0, angle),
            Self::Bits(b) => {
                let delta = self.delta().unwrap();
                let levels = 2f64.powi(b as i32);
                let q = (angle / delta).round().rem_euclid(levels);
                C64::from_polar(1.0, q * delta)
            }
        }
    }
}

/// IRS reflection coefficients, the diagonal of `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    values: Vec<C64>,
    resolution: PhaseResolution,
}

impl PhaseVector {
    pub fn from_angles(angles: &[f64], resolution: PhaseResolution) -> Self {
        Self {
            values: angles.iter().map(|&a| resolution.unimodular(a)).collect(),
            resolution,
        }
    }

    /// All-ones (zero phase) reflection.
    pub fn identity(n_irs: usize, resolution: PhaseResolution) -> Self {
        Self::from_angles(&vec![0.0; n_irs], resolution)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn resolution(&self) -> PhaseResolution {
        self.resolution
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.values
    }

    pub(crate) fn set(&mut self, m: usize, value: C64) {
        self.values[m] = value;
    }

    /// `max_m ||φ_m| - 1|`.
    pub fn modulus_residual(&self) -> f64 {
        self.values
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest distance (in units of `Δ`) of any phase from the nearest grid
    /// point; zero in continuous mode.
    pub fn grid_residual(&self) -> f64 {
        let Some(delta) = self.resolution.delta() else {
            return 0.0;
        };
        self.values
            .iter()
            .map(|z| {
                let t = z.arg() / delta;
                (t - t.round()).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Combined feasibility residual: modulus error plus grid error.
    pub fn feasibility_residual(&self) -> f64 {
        self.modulus_residual() + self.grid_residual()
    }
}

/// Per-subcarrier, per-user precoding vectors `w_{k,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    w: ToneGrid<CVec>,
}

impl BeamformerSet {
    pub fn zeros(n_subcarriers: usize, n_users: usize, n_tx: usize) -> Self {
        Self {
            w: ToneGrid::filled(n_subcarriers, n_users, CVec::zeros(n_tx)),
        }
    }

    pub fn from_fn(
        n_subcarriers: usize,
        n_users: usize,
        f: impl FnMut(usize, usize) -> CVec,
    ) -> Self {
        Self {
            w: ToneGrid::from_fn(n_subcarriers, n_users, f),
        }
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> &CVec {
        self.w.get(i, k)
    }

    pub fn get_mut(&mut self, k: usize, i: usize) -> &mut CVec {
        self.w.get_mut(i, k)
    }

    /// Beamformers of all users on subcarrier `i`, i.e. the columns of `W_i`.
    pub fn tone(&self, i: usize) -> &[CVec] {
        self.w.tone(i)
    }

    pub fn n_subcarriers(&self) -> usize {
        self.w.n_subcarriers()
    }

    pub fn n_users(&self) -> usize {
        self.w.n_users()
    }

    /// `Σ_i ‖W_i‖²_F`.
    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|v| v.norm_squared()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.w.iter_mut() {
            *v *= C64::new(factor, 0.0);
        }
    }

    /// Rescales to total power `power`. Returns `false` (and leaves the set
    /// untouched) when the set is all-zero.
    pub fn normalize_to(&mut self, power: f64) -> bool {
        let current = self.total_power();
        if current > 0.0 {
            self.scale((power / current).sqrt());
            true
        } else {
            false
        }
    }
}

fn received<'a>(
    eff: &'a EffectiveChannels,
    w: &'a BeamformerSet,
    k: usize,
    i: usize,
) -> impl Iterator<Item = C64> + 'a {
    let h = eff.get(k, i);
    w.tone(i).iter().map(move |wp| h.dotc(wp))
}

/// `γ_{k,i}`: desired power over interference plus noise on subcarrier `i`.
pub fn sinr(eff: &EffectiveChannels, w: &BeamformerSet, k: usize, i: usize, sigma2: f64) -> f64 {
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (p, y) in received(eff, w, k, i).enumerate() {
        if p == k {
            signal = y.norm_sqr();
        } else {
            interference += y.norm_sqr();
        }
    }
    signal / (interference + sigma2)
}

/// Average over subcarriers of the users' rates, bits/s/Hz.
pub fn sum_rate(eff: &EffectiveChannels, w: &BeamformerSet, sigma2: f64) -> f64 {
    let n = eff.n_subcarriers();
    let total: f64 = (0..n)
        .flat_map(|i| (0..eff.n_users()).map(move |k| (k, i)))
        .map(|(k, i)| (1.0 + sinr(eff, w, k, i, sigma2)).log2())
        .sum();
    total / n as f64
}

/// Modified MSE of user `k` on subcarrier `i` with receive scalar `varpi`.
pub fn mse(
    eff: &EffectiveChannels,
    w: &BeamformerSet,
    varpi: C64,
    k: usize,
    i: usize,
    sigma2: f64,
) -> f64 {
    let mut total = varpi.norm_sqr() * sigma2 + 1.0;
    for (p, y) in received(eff, w, k, i).enumerate() {
        let z = varpi.conj() * y;
        total += z.norm_sqr();
        if p == k {
            total -= 2.0 * z.re;
        }
    }
    total
}

/// Weighted-MSE objective in bits:
/// `(1/N) Σ_i Σ_k (ln ρ_{k,i} - ρ_{k,i} MSE_{k,i} + 1) / ln 2`.
///
/// Its maximizer over `ρ` is `1/MSE`, and at `ρ = 1/MSE(ϖ*)` it equals the
/// average sum-rate.
pub fn wmmse_objective(
    eff: &EffectiveChannels,
    w: &BeamformerSet,
    rho: &ToneGrid<f64>,
    varpi: &ToneGrid<C64>,
    sigma2: f64,
) -> Result<f64> {
    let n = eff.n_subcarriers();
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..eff.n_users() {
            let r = *rho.get(i, k);
            if !(r > 0.0) {
                return Err(Error::Domain(format!(
                    "weight rho[{k},{i}] = {r} is not positive"
                )));
            }
            let e = mse(eff, w, *varpi.get(i, k), k, i, sigma2);
            total += r.ln() - r * e + 1.0;
        }
    }
    Ok(total / (n as f64 * LN_2))
}
