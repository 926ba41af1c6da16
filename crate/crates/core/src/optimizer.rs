//! Block coordinate descent over `(ρ, ϖ, W, φ)`.
//!
//! One outer iteration updates, in order: the MSE weights `ρ`, the receive
//! scalars `ϖ`, the beamformers `W` (unconstrained minimizer followed by a
//! single power normalization) and the IRS phases `φ` (element-wise sweeps on
//! the quadratic `φᴴAφ - 2Re{φᴴb}` until the sweep objective settles).
//!
//! The `ρ`, `ϖ` and `φ` steps are exact conditional optimizers and never
//! decrease the weighted-MSE objective; the normalized `W` step is not, so
//! the trace records per-block objective values and flags sum-rate dips.

use std::fmt::Write as _;

use nalgebra::linalg::Cholesky;
use rand::Rng;

use crate::channel::{EffectiveChannels, FrequencyChannels};
use crate::metrics::{self, BeamformerSet, PhaseResolution, PhaseVector};
use crate::scenario::SystemConfig;
use crate::{CMat, CVec, Error, Result, ToneGrid, C64};

/// Relative regularization added to the per-subcarrier Gram matrix.
pub const GRAM_REGULARIZATION: f64 = 1e-12;

/// Stopping rules for the outer loop and the inner phase sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stopping {
    /// Relative change of the weighted-MSE objective that ends the outer loop.
    pub tol: f64,
    pub max_outer: usize,
    /// Relative change of the phase quadratic that ends a sweep.
    pub phi_tol: f64,
    pub max_sweeps: usize,
}

impl Default for Stopping {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_outer: 100,
            phi_tol: 1e-6,
            max_sweeps: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub stopping: Stopping,
    /// Keep `φ` at its initial value (beamforming-only baselines).
    pub freeze_phi: bool,
    /// Re-evaluate the phase quadratic after every element update.
    pub audit_elements: bool,
}

/// `ρ_{k,i} = 1 / MSE_{k,i}` at the current `(W, φ, ϖ)`.
pub fn update_rho(
    eff: &EffectiveChannels,
    w: &BeamformerSet,
    varpi: &ToneGrid<C64>,
    sigma2: f64,
) -> Result<ToneGrid<f64>> {
    let mut out = ToneGrid::filled(eff.n_subcarriers(), eff.n_users(), 0.0);
    for i in 0..eff.n_subcarriers() {
        for k in 0..eff.n_users() {
            let e = metrics::mse(eff, w, *varpi.get(i, k), k, i, sigma2);
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Domain(format!("MSE[{k},{i}] = {e} is not positive")));
            }
            *out.get_mut(i, k) = 1.0 / e;
        }
    }
    Ok(out)
}

/// MMSE receive scalar `ϖ_{k,i} = ĥᴴw_k / (Σ_p |ĥᴴw_p|² + σ²)`.
pub fn optimal_varpi(
    eff: &EffectiveChannels,
    w: &BeamformerSet,
    k: usize,
    i: usize,
    sigma2: f64,
) -> C64 {
    let h = eff.get(k, i);
    let mut denom = sigma2;
    let mut desired = C64::new(0.0, 0.0);
    for (p, wp) in w.tone(i).iter().enumerate() {
        let y = h.dotc(wp);
        denom += y.norm_sqr();
        if p == k {
            desired = y;
        }
    }
    desired / denom
}

pub fn update_varpi(eff: &EffectiveChannels, w: &BeamformerSet, sigma2: f64) -> ToneGrid<C64> {
    ToneGrid::from_fn(eff.n_subcarriers(), eff.n_users(), |i, k| {
        optimal_varpi(eff, w, k, i, sigma2)
    })
}

/// Minimizers `w̃_{k,i} = (Σ_p ρ_p h_p h_pᴴ + εI)⁻¹ ρ_k h_k` of the
/// per-subcarrier beamformer subproblems, with equivalent channels
/// `h_{k,i} = ϖ_{k,i} ĥ_{k,i}` and `ε = 1e-12 · trace / N_t`.
///
/// With `H = [√ρ_1 h_1, …, √ρ_K h_K]` the push-through identity
/// `(HHᴴ + εI)⁻¹H = H(HᴴH + εI)⁻¹` turns the rank-deficient `N_t x N_t`
/// solve into a well-conditioned `K x K` one.
pub fn unconstrained_beamformers(
    eff: &EffectiveChannels,
    rho: &ToneGrid<f64>,
    varpi: &ToneGrid<C64>,
) -> BeamformerSet {
    let (n_sub, n_users) = (eff.n_subcarriers(), eff.n_users());
    let n_tx = eff.get(0, 0).len();
    let mut out = BeamformerSet::zeros(n_sub, n_users, n_tx);
    for i in 0..n_sub {
        let h = CMat::from_fn(n_tx, n_users, |r, p| {
            eff.get(p, i)[r] * *varpi.get(i, p) * rho.get(i, p).sqrt()
        });
        let mut gram = h.ad_mul(&h);
        let trace: f64 = (0..n_users).map(|p| gram[(p, p)].re).sum();
        if !(trace > 0.0) {
            continue;
        }
        let eps = GRAM_REGULARIZATION * trace / n_tx as f64;
        for p in 0..n_users {
            gram[(p, p)] += C64::new(eps, 0.0);
        }
        let scales = CMat::from_diagonal(&CVec::from_fn(n_users, |p, _| {
            C64::new(rho.get(i, p).sqrt(), 0.0)
        }));
        let coeffs = match Cholesky::new(gram.clone()) {
            Some(ch) => ch.solve(&scales),
            None => match gram.lu().solve(&scales) {
                Some(x) => x,
                None => continue,
            },
        };
        let w = &h * coeffs;
        for k in 0..n_users {
            *out.get_mut(k, i) = w.column(k).into_owned();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerUpdate {
    pub w: BeamformerSet,
    /// `false` when every unconstrained beamformer was zero; `w` is then zero.
    pub normalized: bool,
}

/// Unconstrained beamformers scaled by one common factor to total power `tx_power`.
pub fn update_beamformers(
    eff: &EffectiveChannels,
    rho: &ToneGrid<f64>,
    varpi: &ToneGrid<C64>,
    tx_power: f64,
) -> BeamformerUpdate {
    let mut w = unconstrained_beamformers(eff, rho, varpi);
    let normalized = w.normalize_to(tx_power);
    BeamformerUpdate { w, normalized }
}

/// The phase subproblem `min_φ φᴴAφ - 2Re{φᴴb}` with `A` Hermitian PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiQuadratic {
    pub a: CMat,
    pub b: CVec,
}

impl PhiQuadratic {
    pub fn n_irs(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, phi: &[C64]) -> f64 {
        let phi = CVec::from_column_slice(phi);
        let quad = phi.dotc(&(&self.a * &phi)).re;
        quad - 2.0 * phi.dotc(&self.b).re
    }

    /// `c = b(m) - Σ_{n≠m} A(m,n) φ_n`.
    pub fn coupling(&self, phi: &[C64], m: usize) -> C64 {
        // A is Hermitian: row m is the conjugate of column m
        let col = self.a.column(m);
        let row_dot: C64 = col.iter().zip(phi).map(|(a, p)| a.conj() * p).sum();
        self.b[m] - (row_dot - self.a[(m, m)] * phi[m])
    }

    /// `Σ|A(m,n)| + 2Σ|b(m)|`, a bound on `|objective|` over unimodular `φ`.
    pub fn magnitude_bound(&self) -> f64 {
        self.a.iter().map(|z| z.norm()).sum::<f64>()
            + 2.0 * self.b.iter().map(|z| z.norm()).sum::<f64>()
    }
}

/// Assembles `A = Σ_{i,k} ρ|ϖ|² Σ_p v vᴴ` and
/// `b = Σ_{i,k} ρ(ϖ v_{k,k,i} - |ϖ|² Σ_p v_{k,p,i} h̄_{k,p,i})` with
/// `v_{k,p,i} = conj(G_i w_{p,i}) ⊙ h^r_{k,i}` and `h̄_{k,p,i} = (h^d_{k,i})ᴴ w_{p,i}`.
pub fn build_phi_quadratic(
    fc: &FrequencyChannels,
    w: &BeamformerSet,
    rho: &ToneGrid<f64>,
    varpi: &ToneGrid<C64>,
) -> PhiQuadratic {
    let (n_sub, n_users, n_irs) = (fc.n_subcarriers(), fc.n_users(), fc.n_irs());
    // rows are √(ρ|ϖ|²) v_{k,p,i}ᴴ, so A = UᴴU
    let mut u = CMat::zeros(n_sub * n_users * n_users, n_irs);
    let mut b = CVec::zeros(n_irs);
    let mut row = 0;
    for i in 0..n_sub {
        let reflected: Vec<CVec> = w.tone(i).iter().map(|wp| &fc.bs_irs[i] * wp).collect();
        for k in 0..n_users {
            let hr = fc.irs_user.get(i, k);
            let hd = fc.direct.get(i, k);
            let r = *rho.get(i, k);
            let vp = *varpi.get(i, k);
            let weight = r * vp.norm_sqr();
            let root = weight.sqrt();
            for (p, gw) in reflected.iter().enumerate() {
                let hbar = hd.dotc(w.get(p, i));
                let coef = if p == k {
                    C64::new(r, 0.0) * vp - hbar * weight
                } else {
                    -hbar * weight
                };
                for m in 0..n_irs {
                    let v = gw[m].conj() * hr[m];
                    b[m] += coef * v;
                    u[(row, m)] = v.conj() * root;
                }
                row += 1;
            }
        }
    }
    let mut a = u.ad_mul(&u);
    // exact Hermitian symmetry
    for m in 0..n_irs {
        a[(m, m)].im = 0.0;
        for n in (m + 1)..n_irs {
            let z = (a[(m, n)] + a[(n, m)].conj()) * 0.5;
            a[(m, n)] = z;
            a[(n, m)] = z.conj();
        }
    }
    PhiQuadratic { a, b }
}

/// Continuous element update `φ_m ← c/|c|`; returns whether `φ_m` changed.
/// A vanishing `c` leaves `φ_m` in place.
pub fn update_phi_element(quad: &PhiQuadratic, phi: &mut [C64], m: usize) -> bool {
    let c = quad.coupling(phi, m);
    let mag = c.norm();
    if mag == 0.0 {
        return false;
    }
    let next = c / mag;
    let changed = next != phi[m];
    phi[m] = next;
    changed
}

/// Quantized element update `φ_m ← exp(j·round(∠c/Δ)·Δ)`, `Δ = 2π/2^b`.
pub fn quantize_phi_element(quad: &PhiQuadratic, phi: &mut [C64], m: usize, bits: u32) -> bool {
    let c = quad.coupling(phi, m);
    if c.norm() == 0.0 {
        return false;
    }
    let next = PhaseResolution::Bits(bits).unimodular(c.arg());
    let changed = next != phi[m];
    phi[m] = next;
    changed
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Full passes over `m = 1..M` performed.
    pub sweeps: usize,
    pub converged: bool,
    /// Phase-quadratic value before the first pass and after each pass.
    pub objective_trace: Vec<f64>,
    /// Largest increase of the phase quadratic across a single element
    /// update, relative to [`PhiQuadratic::magnitude_bound`]. Present only
    /// when element auditing is on.
    pub max_element_increase: Option<f64>,
}

/// Repeated element-wise passes until the quadratic changes by less than
/// `tol` relatively, a pass leaves every element unchanged, or `max_sweeps`
/// passes have run.
pub fn sweep_phi(
    quad: &PhiQuadratic,
    phi: &mut PhaseVector,
    tol: f64,
    max_sweeps: usize,
    audit_elements: bool,
) -> SweepReport {
    let resolution = phi.resolution();
    let mut values = phi.as_slice().to_vec();
    let mut f = quad.objective(&values);
    let mut report = SweepReport {
        sweeps: 0,
        converged: false,
        objective_trace: vec![f],
        max_element_increase: audit_elements.then_some(f64::NEG_INFINITY),
    };
    let bound = quad.magnitude_bound().max(f64::MIN_POSITIVE);
    for _ in 0..max_sweeps {
        let mut changed = false;
        for m in 0..values.len() {
            let before = if audit_elements {
                quad.objective(&values)
            } else {
                0.0
            };
            changed |= match resolution {
                PhaseResolution::Continuous => update_phi_element(quad, &mut values, m),
                PhaseResolution::Bits(b) => quantize_phi_element(quad, &mut values, m, b),
            };
            if let Some(worst) = report.max_element_increase.as_mut() {
                let inc = (quad.objective(&values) - before) / bound;
                *worst = worst.max(inc);
            }
        }
        report.sweeps += 1;
        let next = quad.objective(&values);
        report.objective_trace.push(next);
        let settled = (f - next).abs() <= tol * next.abs().max(f64::MIN_POSITIVE);
        f = next;
        if !changed || settled {
            report.converged = true;
            break;
        }
    }
    for (m, z) in values.into_iter().enumerate() {
        phi.set(m, z);
    }
    report
}

/// Starting point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub w: BeamformerSet,
    pub phi: PhaseVector,
}

/// Uniform random phases (grid-snapped when quantized) and matched-filter
/// beamformers `w_{k,i} ∝ ĥ_{k,i}` normalized to `tx_power`.
pub fn initialize<R: Rng + ?Sized>(
    fc: &FrequencyChannels,
    resolution: PhaseResolution,
    tx_power: f64,
    rng: &mut R,
) -> Initialization {
    let angles: Vec<f64> = (0..fc.n_irs())
        .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
        .collect();
    let phi = PhaseVector::from_angles(&angles, resolution);
    Initialization {
        w: matched_filter(fc, &phi, tx_power),
        phi,
    }
}

/// Matched-filter beamformers to the effective channels under `phi`.
pub fn matched_filter(fc: &FrequencyChannels, phi: &PhaseVector, tx_power: f64) -> BeamformerSet {
    let eff = EffectiveChannels::compute(fc, phi.as_slice());
    let mut w = BeamformerSet::from_fn(fc.n_subcarriers(), fc.n_users(), |i, k| {
        eff.get(k, i).clone()
    });
    w.normalize_to(tx_power);
    w
}

/// Weighted-MSE objective after each block of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockObjectives {
    pub start: f64,
    pub after_rho: f64,
    pub after_varpi: f64,
    pub after_w: f64,
    pub after_phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub sum_rate: f64,
    /// `|Σ_i ‖W_i‖²_F - P| / P` after the beamformer update.
    pub power_residual: f64,
    pub phi_residual: f64,
    pub inner_sweeps: usize,
    pub sweep_converged: bool,
    pub sum_rate_dip: bool,
    pub zero_beamformer: bool,
    pub blocks: BlockObjectives,
    pub max_element_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub w: BeamformerSet,
    pub phi: PhaseVector,
    pub rho: ToneGrid<f64>,
    pub varpi: ToneGrid<C64>,
    pub trace: Vec<IterationRecord>,
    pub initial_sum_rate: f64,
    pub converged: bool,
}

impl OptimizerState {
    pub fn sum_rate(&self) -> f64 {
        self.trace
            .last()
            .map_or(self.initial_sum_rate, |r| r.sum_rate)
    }

    /// Outer iterations performed.
    pub fn outer_iters(&self) -> usize {
        self.trace.len()
    }

    /// Total phase sweeps over all outer iterations.
    pub fn inner_sweeps_total(&self) -> usize {
        self.trace.iter().map(|r| r.inner_sweeps).sum()
    }

    /// `iter,wmmse_objective,sum_rate,power_residual,phi_feasibility_residual` rows.
    pub fn trace_csv(&self) -> String {
        let mut out =
            String::from("iter,wmmse_objective,sum_rate,power_residual,phi_feasibility_residual\n");
        for r in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iter, r.objective, r.sum_rate, r.power_residual, r.phi_residual
            );
        }
        out
    }
}

/// Runs the block coordinate descent from `init`.
pub fn run(
    system: &SystemConfig,
    fc: &FrequencyChannels,
    init: Initialization,
    options: &RunOptions,
) -> Result<OptimizerState> {
    let sigma2 = system.noise_power;
    let power = system.tx_power;
    let stop = options.stopping;
    let (n_sub, n_users) = (fc.n_subcarriers(), fc.n_users());
    if init.phi.len() != fc.n_irs()
        || init.w.n_subcarriers() != n_sub
        || init.w.n_users() != n_users
    {
        return Err(Error::Dimension(
            "initial point does not match the channels".into(),
        ));
    }

    let Initialization { mut w, mut phi } = init;
    let mut eff = EffectiveChannels::compute(fc, phi.as_slice());
    let mut varpi = update_varpi(&eff, &w, sigma2);
    let mut rho = ToneGrid::filled(n_sub, n_users, 1.0);
    let initial_sum_rate = metrics::sum_rate(&eff, &w, sigma2);

    let objective =
        |eff: &EffectiveChannels, w: &BeamformerSet, rho: &ToneGrid<f64>, varpi: &ToneGrid<C64>| {
            metrics::wmmse_objective(eff, w, rho, varpi, sigma2)
        };

    let mut prev_obj = objective(&eff, &w, &rho, &varpi)?;
    let mut prev_rate = initial_sum_rate;
    let mut trace = Vec::new();
    let mut converged = false;

    for iter in 1..=stop.max_outer {
        let start = prev_obj;
        rho = update_rho(&eff, &w, &varpi, sigma2)?;
        let after_rho = objective(&eff, &w, &rho, &varpi)?;

        varpi = update_varpi(&eff, &w, sigma2);
        let after_varpi = objective(&eff, &w, &rho, &varpi)?;

        let update = update_beamformers(&eff, &rho, &varpi, power);
        w = update.w;
        let power_residual = (w.total_power() - power).abs() / power;
        let after_w = objective(&eff, &w, &rho, &varpi)?;

        let (inner_sweeps, sweep_converged, max_element_increase) = if options.freeze_phi {
            (0, true, None)
        } else {
            let quad = build_phi_quadratic(fc, &w, &rho, &varpi);
            let report = sweep_phi(
                &quad,
                &mut phi,
                stop.phi_tol,
                stop.max_sweeps,
                options.audit_elements,
            );
            eff = EffectiveChannels::compute(fc, phi.as_slice());
            (report.sweeps, report.converged, report.max_element_increase)
        };
        let after_phi = objective(&eff, &w, &rho, &varpi)?;
        let sum_rate = metrics::sum_rate(&eff, &w, sigma2);

        trace.push(IterationRecord {
            iter,
            objective: after_phi,
            sum_rate,
            power_residual,
            phi_residual: phi.feasibility_residual(),
            inner_sweeps,
            sweep_converged,
            sum_rate_dip: sum_rate < prev_rate,
            zero_beamformer: !update.normalized,
            blocks: BlockObjectives {
                start,
                after_rho,
                after_varpi,
                after_w,
                after_phi,
            },
            max_element_increase,
        });

        let change = (after_phi - prev_obj).abs();
        prev_obj = after_phi;
        prev_rate = sum_rate;
        if change <= stop.tol * after_phi.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    Ok(OptimizerState {
        w,
        phi,
        rho,
        varpi,
        trace,
        initial_sum_rate,
        converged,
    })
}
