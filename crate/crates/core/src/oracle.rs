//! Brute-force references and comparison baselines.
//!
//! The block-cyclic construction materializes the time-domain channel
//! matrices of the CP-OFDM link and transforms them with explicit DFT
//! matrices, giving an independent route to the per-subcarrier effective
//! channels. [`exhaustive_phi`] enumerates the whole phase grid on tiny
//! instances. These paths are `O(N³)` and `O(2^{bM})` by construction.
//!
//! The baselines hold the beamforming method fixed (the same `ρ/ϖ/W`
//! blocks with `φ` frozen) and vary only the IRS: random unimodular phases,
//! or no reflected path at all.

use rand::Rng;

use crate::channel::{ChannelTaps, FrequencyChannels};
use crate::metrics::{BeamformerSet, PhaseResolution, PhaseVector};
use crate::optimizer::{self, Initialization, OptimizerState, PhiQuadratic, RunOptions, Stopping};
use crate::scenario::SystemConfig;
use crate::{CMat, CVec, Error, Result, C64};

/// Largest `N · max(N_t, M)` accepted by [`build_block_cyclic`].
pub const MAX_BLOCK_CYCLIC_DIM: usize = 256;
/// Largest grid accepted by [`exhaustive_phi`], `2^16` points.
pub const MAX_EXHAUSTIVE_POINTS: u64 = 1 << 16;
/// Off-diagonal energy fraction above which diagonalization is declared broken.
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-9;

/// Explicit block-cyclic channel matrices of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCyclicChannel {
    /// `N x N·N_t` per user.
    pub hd_full: Vec<CMat>,
    /// `M·N x N·N_t`.
    pub g_full: CMat,
    /// `N x N·M` per user.
    pub hr_full: Vec<CMat>,
    pub n_subcarriers: usize,
    pub n_tx: usize,
    pub n_irs: usize,
}

/// Builds the block-cyclic matrices whose first block columns are the
/// zero-padded tap sequences; block `(r, c)` holds tap `(r - c) mod N`.
pub fn build_block_cyclic(taps: &ChannelTaps, n_subcarriers: usize) -> Result<BlockCyclicChannel> {
    let (n, n_tx, n_irs, n_taps) = (n_subcarriers, taps.n_tx(), taps.n_irs(), taps.n_taps());
    if n * n_tx.max(n_irs) > MAX_BLOCK_CYCLIC_DIM {
        return Err(Error::TooLarge(format!(
            "block-cyclic oracle limited to N*max(N_t, M) <= {MAX_BLOCK_CYCLIC_DIM}"
        )));
    }
    if n_taps > n || n == 0 {
        return Err(Error::Dimension(format!("D={n_taps} exceeds N={n}")));
    }
    let delay = |r: usize, c: usize| (r + n - c) % n;

    let row_blocks = |seq: &[CVec], width: usize| {
        let mut out = CMat::zeros(n, n * width);
        for r in 0..n {
            for c in 0..n {
                let d = delay(r, c);
                if d < n_taps {
                    for e in 0..width {
                        out[(r, c * width + e)] = seq[d][e].conj();
                    }
                }
            }
        }
        out
    };
    let hd_full = taps.direct.iter().map(|s| row_blocks(s, n_tx)).collect();
    let hr_full = taps.irs_user.iter().map(|s| row_blocks(s, n_irs)).collect();

    let mut g_full = CMat::zeros(n * n_irs, n * n_tx);
    for r in 0..n {
        for c in 0..n {
            let d = delay(r, c);
            if d < n_taps {
                g_full
                    .view_mut((r * n_irs, c * n_tx), (n_irs, n_tx))
                    .copy_from(&taps.bs_irs[d]);
            }
        }
    }
    Ok(BlockCyclicChannel {
        hd_full,
        g_full,
        hr_full,
        n_subcarriers: n,
        n_tx,
        n_irs,
    })
}

/// Normalized DFT matrix, `F(m, n) = e^{-j2π mn/N} / √N` (0-based).
pub fn dft_matrix(n: usize) -> CMat {
    let scale = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |r, c| {
        C64::from_polar(
            scale,
            -2.0 * std::f64::consts::PI * ((r * c) % n) as f64 / n as f64,
        )
    })
}

fn kron_identity(a: &CMat, size: usize) -> CMat {
    let mut out = CMat::zeros(a.nrows() * size, a.ncols() * size);
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            for e in 0..size {
                out[(r * size + e, c * size + e)] = a[(r, c)];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyOracle {
    /// `effective[k][i]` is the vector `ĥ_{k,i}` whose conjugate transpose
    /// is the i-th diagonal block of user k's transformed channel.
    pub effective: Vec<Vec<CVec>>,
    /// Worst per-user ratio of off-diagonal block energy to total energy.
    pub off_diagonal_ratio: f64,
}

/// Computes `F (H̃^d_k + H̃^r_k (I_N ⊗ Φ) G̃) (Fᴴ ⊗ I_{N_t})` explicitly and
/// splits it into diagonal blocks and off-diagonal residue.
pub fn frequency_oracle(bc: &BlockCyclicChannel, phi: &[C64]) -> Result<FrequencyOracle> {
    let (n, n_tx) = (bc.n_subcarriers, bc.n_tx);
    if phi.len() != bc.n_irs {
        return Err(Error::Dimension(format!(
            "{} phases for {} elements",
            phi.len(),
            bc.n_irs
        )));
    }
    let f = dft_matrix(n);
    let f_tx = kron_identity(&f.adjoint(), n_tx);
    let mut reflect = CMat::zeros(n * bc.n_irs, n * bc.n_irs);
    for blk in 0..n {
        for (m, &p) in phi.iter().enumerate() {
            reflect[(blk * bc.n_irs + m, blk * bc.n_irs + m)] = p;
        }
    }
    let cascade = &reflect * &bc.g_full;

    let mut effective = Vec::with_capacity(bc.hd_full.len());
    let mut worst: f64 = 0.0;
    for (hd, hr) in bc.hd_full.iter().zip(&bc.hr_full) {
        let total = &f * (hd + hr * &cascade) * &f_tx;
        let energy = total.norm_squared();
        let mut diag_energy = 0.0;
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            let row = total.view((i, i * n_tx), (1, n_tx));
            diag_energy += row.norm_squared();
            blocks.push(CVec::from_iterator(n_tx, row.iter().map(|z| z.conj())));
        }
        if energy > 0.0 {
            worst = worst.max(((energy - diag_energy) / energy).max(0.0));
        }
        effective.push(blocks);
    }
    if worst > OFF_DIAGONAL_TOLERANCE {
        return Err(Error::Structural(format!(
            "off-diagonal block energy fraction {worst:e} exceeds {OFF_DIAGONAL_TOLERANCE:e}"
        )));
    }
    Ok(FrequencyOracle {
        effective,
        off_diagonal_ratio: worst,
    })
}

/// Minimizes `φᴴAφ - 2Re{φᴴb}` over every point of the `b`-bit grid.
pub fn exhaustive_phi(quad: &PhiQuadratic, bits: u32) -> Result<(Vec<C64>, f64)> {
    let m = quad.n_irs();
    let levels = 1u64 << bits.min(63);
    let points = (bits as u64)
        .checked_mul(m as u64)
        .filter(|&e| e <= 16)
        .map(|e| 1u64 << e);
    let Some(points) = points.filter(|&p| p <= MAX_EXHAUSTIVE_POINTS) else {
        return Err(Error::TooLarge(format!(
            "2^({bits}*{m}) grid points exceed the 2^16 enumeration limit"
        )));
    };
    let res = PhaseResolution::Bits(bits);
    let delta = res.delta().unwrap();
    let mut phi = vec![C64::new(1.0, 0.0); m];
    let mut best = (phi.clone(), f64::INFINITY);
    for idx in 0..points {
        let mut rest = idx;
        for z in phi.iter_mut() {
            *z = res.unimodular((rest % levels) as f64 * delta);
            rest /= levels;
        }
        let f = quad.objective(&phi);
        if f < best.1 {
            best = (phi.clone(), f);
        }
    }
    Ok(best)
}

/// Comparison IRS configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Uniform random unimodular phases, held fixed.
    RandomIrs,
    /// Reflected links removed; BS-user link only.
    NoIrs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub w: BeamformerSet,
    pub phi: PhaseVector,
    pub sum_rate: f64,
    pub state: OptimizerState,
}

/// Beamforming-only optimization under a fixed IRS configuration.
pub fn baseline<R: Rng + ?Sized>(
    fc: &FrequencyChannels,
    mode: BaselineMode,
    system: &SystemConfig,
    stopping: Stopping,
    rng: &mut R,
) -> Result<BaselineResult> {
    let options = RunOptions {
        stopping,
        freeze_phi: true,
        audit_elements: false,
    };
    let (channels, phi) = match mode {
        BaselineMode::RandomIrs => {
            let angles: Vec<f64> = (0..fc.n_irs())
                .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
                .collect();
            (
                None,
                PhaseVector::from_angles(&angles, PhaseResolution::Continuous),
            )
        }
        BaselineMode::NoIrs => (
            Some(fc.without_reflection()),
            PhaseVector::identity(fc.n_irs(), PhaseResolution::Continuous),
        ),
    };
    let fc = channels.as_ref().unwrap_or(fc);
    let init = Initialization {
        w: optimizer::matched_filter(fc, &phi, system.tx_power),
        phi,
    };
    let state = optimizer::run(system, fc, init, &options)?;
    Ok(BaselineResult {
        w: state.w.clone(),
        phi: state.phi.clone(),
        sum_rate: state.sum_rate(),
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{effective_channel, sample_taps, to_frequency};
    use crate::scenario::LinkGains;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn taps(seed: u64, n_tx: usize, n_irs: usize, n_users: usize, n_taps: usize) -> ChannelTaps {
        let cfg = SystemConfig {
            n_subcarriers: 8,
            n_tx,
            n_users,
            n_irs,
            n_taps,
            cp_len: n_taps,
            ..Default::default()
        };
        let gains = LinkGains {
            bs_user: vec![1.0; n_users],
            bs_irs: 1.0,
            irs_user: 1.0,
        };
        sample_taps(&cfg, &gains, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn dense_taps(
        seed: u64,
        n_tx: usize,
        n_irs: usize,
        n_users: usize,
        n_taps: usize,
    ) -> ChannelTaps {
        // every delay populated, unlike the half-occupied sampler
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rnd = || c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let mut t = ChannelTaps::zeros(n_tx, n_irs, n_users, n_taps);
        t.direct
            .iter_mut()
            .flatten()
            .for_each(|h| h.iter_mut().for_each(|z| *z = rnd()));
        t.irs_user
            .iter_mut()
            .flatten()
            .for_each(|h| h.iter_mut().for_each(|z| *z = rnd()));
        t.bs_irs
            .iter_mut()
            .for_each(|g| g.iter_mut().for_each(|z| *z = rnd()));
        t
    }

    #[test]
    fn single_tap_is_block_diagonal() {
        let t = dense_taps(1, 2, 2, 1, 1);
        let bc = build_block_cyclic(&t, 4).unwrap();
        let hd = &bc.hd_full[0];
        for r in 0..4 {
            for cblk in 0..4 {
                for e in 0..2 {
                    let expected = if r == cblk {
                        t.direct[0][0][e].conj()
                    } else {
                        c(0.0, 0.0)
                    };
                    assert_eq!(hd[(r, cblk * 2 + e)], expected);
                }
            }
        }
    }

    #[test]
    fn two_by_two_layout() {
        let t = dense_taps(2, 2, 1, 1, 2);
        let bc = build_block_cyclic(&t, 2).unwrap();
        let h0: Vec<C64> = t.direct[0][0].iter().map(|z| z.conj()).collect();
        let h1: Vec<C64> = t.direct[0][1].iter().map(|z| z.conj()).collect();
        let hd = &bc.hd_full[0];
        assert_eq!(
            (hd[(0, 0)], hd[(0, 1)], hd[(0, 2)], hd[(0, 3)]),
            (h0[0], h0[1], h1[0], h1[1])
        );
        assert_eq!(
            (hd[(1, 0)], hd[(1, 1)], hd[(1, 2)], hd[(1, 3)]),
            (h1[0], h1[1], h0[0], h0[1])
        );
    }

    #[test]
    fn block_columns_share_energy() {
        let t = dense_taps(3, 2, 3, 2, 3);
        let bc = build_block_cyclic(&t, 6).unwrap();
        let energies: Vec<f64> = (0..6)
            .map(|blk| bc.g_full.columns(blk * 2, 2).norm_squared())
            .collect();
        for e in &energies {
            assert!((e / energies[0] - 1.0).abs() < 1e-12);
        }
        let hd: Vec<f64> = (0..6)
            .map(|blk| bc.hd_full[1].columns(blk * 2, 2).norm_squared())
            .collect();
        for e in &hd {
            assert!((e / hd[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_matches_subcarrier_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..5 {
            let t = dense_taps(seed, 2, 3, 2, 3);
            let bc = build_block_cyclic(&t, 8).unwrap();
            let phi: Vec<C64> = (0..3)
                .map(|_| C64::from_polar(1.0, rng.random::<f64>() * 6.3))
                .collect();
            let oracle = frequency_oracle(&bc, &phi).unwrap();
            assert!(oracle.off_diagonal_ratio <= 1e-9);
            let fc = to_frequency(&t, 8).unwrap();
            for k in 0..2 {
                for i in 0..8 {
                    let h = effective_channel(&fc, &phi, k, i);
                    let rel = (&h - &oracle.effective[k][i]).norm() / h.norm();
                    assert!(rel <= 1e-10, "k={k} i={i} rel={rel}");
                }
            }
        }
    }

    #[test]
    fn oracle_without_reflection_is_direct_dft() {
        let t = taps(5, 2, 3, 2, 3).without_reflection();
        let bc = build_block_cyclic(&t, 8).unwrap();
        let oracle = frequency_oracle(&bc, &[c(1.0, 0.0); 3]).unwrap();
        let fc = to_frequency(&t, 8).unwrap();
        for i in 0..8 {
            assert!((fc.direct.get(i, 1) - &oracle.effective[1][i]).norm() < 1e-12);
        }
    }

    #[test]
    fn oracle_single_subcarrier() {
        let t = dense_taps(6, 2, 2, 1, 1);
        let bc = build_block_cyclic(&t, 1).unwrap();
        assert_eq!(dft_matrix(1)[(0, 0)], c(1.0, 0.0));
        let phi = [c(0.0, 1.0), c(1.0, 0.0)];
        let oracle = frequency_oracle(&bc, &phi).unwrap();
        let fc = to_frequency(&t, 1).unwrap();
        assert!((effective_channel(&fc, &phi, 0, 0) - &oracle.effective[0][0]).norm() < 1e-14);
    }

    #[test]
    fn oracle_detects_broken_structure() {
        let t = dense_taps(7, 2, 2, 1, 2);
        let mut bc = build_block_cyclic(&t, 4).unwrap();
        bc.hd_full[0][(0, 0)] += c(5.0, 0.0);
        assert!(matches!(
            frequency_oracle(&bc, &[c(1.0, 0.0); 2]),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn oracle_size_guard() {
        let t = ChannelTaps::zeros(8, 64, 1, 2);
        assert!(matches!(
            build_block_cyclic(&t, 64),
            Err(Error::TooLarge(_))
        ));
    }

    fn quad(seed: u64, m: usize) -> PhiQuadratic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rnd = || c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let v = CMat::from_fn(m + 1, m, |_, _| rnd());
        PhiQuadratic {
            a: v.ad_mul(&v),
            b: CVec::from_fn(m, |_, _| rnd()),
        }
    }

    #[test]
    fn exhaustive_single_element_matches_quantizer() {
        for seed in 0..20 {
            let q = quad(seed, 1);
            for bits in 1..=4 {
                let (best, _) = exhaustive_phi(&q, bits).unwrap();
                let mut phi = vec![c(1.0, 0.0)];
                optimizer::quantize_phi_element(&q, &mut phi, 0, bits);
                assert!((phi[0] - best[0]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn exhaustive_separable_objective() {
        let b = CVec::from_vec(vec![
            C64::from_polar(1.0, 0.1),
            C64::from_polar(2.0, 2.0),
            C64::from_polar(0.5, -2.4),
        ]);
        let q = PhiQuadratic {
            a: CMat::zeros(3, 3),
            b: b.clone(),
        };
        let (best, _) = exhaustive_phi(&q, 2).unwrap();
        for m in 0..3 {
            assert!((best[m] - PhaseResolution::Bits(2).unimodular(b[m].arg())).norm() < 1e-12);
        }
    }

    #[test]
    fn exhaustive_never_worse_than_sweep() {
        for seed in 0..30 {
            let q = quad(100 + seed, 2);
            let (_, best) = exhaustive_phi(&q, 2).unwrap();
            let mut phi = PhaseVector::identity(2, PhaseResolution::Bits(2));
            optimizer::sweep_phi(&q, &mut phi, 1e-12, 100, false);
            assert!(best <= q.objective(phi.as_slice()) + 1e-12);
        }
    }

    #[test]
    fn exhaustive_guard() {
        assert!(matches!(
            exhaustive_phi(&quad(1, 9), 2),
            Err(Error::TooLarge(_))
        ));
        assert!(matches!(
            exhaustive_phi(&quad(1, 2), 40),
            Err(Error::TooLarge(_))
        ));
    }

    fn small_system() -> SystemConfig {
        SystemConfig {
            n_subcarriers: 8,
            n_tx: 3,
            n_users: 2,
            n_irs: 4,
            n_taps: 2,
            cp_len: 2,
            noise_power: 0.01,
            tx_power: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn no_irs_baseline_equals_full_run_without_reflection() {
        let cfg = small_system();
        let gains = LinkGains {
            bs_user: vec![1.0; 2],
            bs_irs: 1.0,
            irs_user: 1.0,
        };
        let t = sample_taps(&cfg, &gains, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap()
            .without_reflection();
        let fc = to_frequency(&t, 8).unwrap();
        let base = baseline(
            &fc,
            BaselineMode::NoIrs,
            &cfg,
            Stopping::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let init = optimizer::initialize(
            &fc,
            PhaseResolution::Continuous,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let full = optimizer::run(&cfg, &fc, init, &RunOptions::default()).unwrap();
        assert_eq!(base.sum_rate, full.sum_rate());
    }

    #[test]
    fn random_baseline_is_deterministic() {
        let cfg = small_system();
        let gains = LinkGains {
            bs_user: vec![1.0; 2],
            bs_irs: 1.0,
            irs_user: 1.0,
        };
        let t = sample_taps(&cfg, &gains, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let fc = to_frequency(&t, 8).unwrap();
        let a = baseline(
            &fc,
            BaselineMode::RandomIrs,
            &cfg,
            Stopping::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let b = baseline(
            &fc,
            BaselineMode::RandomIrs,
            &cfg,
            Stopping::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.state.trace.iter().all(|r| r.inner_sweeps == 0));
    }
}
