use irs_wmmse::channel::{effective_channel, sample_taps, to_frequency, EffectiveChannels};
use irs_wmmse::metrics::{self, BeamformerSet, PhaseResolution, PhaseVector};
use irs_wmmse::optimizer::{self, PhiQuadratic};
use irs_wmmse::oracle;
use irs_wmmse::scenario::{LinkGains, SystemConfig};
use irs_wmmse::{CMat, CVec, ToneGrid, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_quadratic(seed: u64, m: usize) -> PhiQuadratic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = || C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
    let rows = 1 + (seed as usize % (m + 2));
    let u = CMat::from_fn(rows, m, |_, _| z());
    let a = u.ad_mul(&u);
    PhiQuadratic {
        a: (&a + a.adjoint()) * C64::new(0.5, 0.0),
        b: CVec::from_fn(m, |_, _| z()),
    }
}

fn system(n: usize, n_tx: usize, k: usize, m: usize, d: usize) -> SystemConfig {
    SystemConfig {
        n_subcarriers: n,
        n_tx,
        n_users: k,
        n_irs: m,
        n_taps: d,
        cp_len: d,
        noise_power: 0.1,
        ..Default::default()
    }
}

fn gains(k: usize) -> LinkGains {
    LinkGains {
        bs_user: vec![1.0; k],
        bs_irs: 1.0,
        irs_user: 1.0,
    }
}

fn angles(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m)
        .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn continuous_element_updates_never_increase(seed in any::<u64>(), m in 1usize..8) {
        let quad = random_quadratic(seed, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut phi: Vec<C64> = angles(&mut rng, m).into_iter().map(|t| C64::from_polar(1.0, t)).collect();
        let scale = quad.magnitude_bound().max(1.0);
        for _ in 0..3 {
            for e in 0..m {
                let before = quad.objective(&phi);
                optimizer::update_phi_element(&quad, &mut phi, e);
                prop_assert!(quad.objective(&phi) <= before + 1e-12 * scale);
                prop_assert!((phi[e].norm() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn quantized_sweep_stays_on_grid_and_above_optimum(seed in any::<u64>(), m in 1usize..4, bits in 1u32..3) {
        let quad = random_quadratic(seed, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let res = PhaseResolution::Bits(bits);
        let mut phi = PhaseVector::from_angles(&angles(&mut rng, m), res);
        let report = optimizer::sweep_phi(&quad, &mut phi, 1e-6, 50, false);
        prop_assert!(report.sweeps >= 1);
        prop_assert!(phi.grid_residual() <= 1e-12);
        prop_assert!(phi.modulus_residual() <= 1e-12);
        let (best_phi, best) = oracle::exhaustive_phi(&quad, bits).unwrap();
        prop_assert!((quad.objective(&best_phi) - best).abs() <= 1e-12 * quad.magnitude_bound().max(1.0));
        prop_assert!(best <= quad.objective(phi.as_slice()) + 1e-12 * quad.magnitude_bound().max(1.0));
    }

    #[test]
    fn block_cyclic_diagonalization(seed in any::<u64>(), n in 1usize..9, n_tx in 1usize..3, m in 1usize..4, d in 1usize..4) {
        prop_assume!(d <= n);
        let cfg = system(n, n_tx, 1, m, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taps = sample_taps(&cfg, &gains(1), &mut rng).unwrap();
        let phi: Vec<C64> = angles(&mut rng, m).into_iter().map(|t| C64::from_polar(1.0, t)).collect();
        let bc = oracle::build_block_cyclic(&taps, n).unwrap();
        let reference = oracle::frequency_oracle(&bc, &phi).unwrap();
        prop_assert!(reference.off_diagonal_ratio <= 1e-9);
        let fc = to_frequency(&taps, n).unwrap();
        for i in 0..n {
            let h = effective_channel(&fc, &phi, 0, i);
            prop_assert!((&h - &reference.effective[0][i]).norm() <= 1e-10 * h.norm().max(1e-300));
        }
    }

    #[test]
    fn optimal_weights_close_the_rate_identity(seed in any::<u64>(), k in 1usize..4) {
        let cfg = system(4, 3, k, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taps = sample_taps(&cfg, &gains(k), &mut rng).unwrap();
        let fc = to_frequency(&taps, 4).unwrap();
        let phi = PhaseVector::from_angles(&angles(&mut rng, 3), PhaseResolution::Continuous);
        let eff = EffectiveChannels::compute(&fc, phi.as_slice());
        let mut w = BeamformerSet::from_fn(4, k, |_, _| {
            CVec::from_fn(3, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        });
        w.normalize_to(1.0);
        let varpi = optimizer::update_varpi(&eff, &w, cfg.noise_power);
        let rho = optimizer::update_rho(&eff, &w, &varpi, cfg.noise_power).unwrap();
        let obj = metrics::wmmse_objective(&eff, &w, &rho, &varpi, cfg.noise_power).unwrap();
        let rate = metrics::sum_rate(&eff, &w, cfg.noise_power);
        prop_assert!((obj - rate).abs() <= 1e-9 * rate.max(1e-12));
        // any other weights do no better
        let other = ToneGrid::filled(4, k, 1.0);
        prop_assert!(metrics::wmmse_objective(&eff, &w, &other, &varpi, cfg.noise_power).unwrap() <= obj + 1e-12);
    }

    #[test]
    fn beamformer_update_meets_power_exactly(seed in any::<u64>(), power in 0.01f64..100.0) {
        let cfg = system(4, 4, 2, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taps = sample_taps(&cfg, &gains(2), &mut rng).unwrap();
        let fc = to_frequency(&taps, 4).unwrap();
        let phi = PhaseVector::from_angles(&angles(&mut rng, 3), PhaseResolution::Continuous);
        let w0 = optimizer::matched_filter(&fc, &phi, power);
        let eff = EffectiveChannels::compute(&fc, phi.as_slice());
        let varpi = optimizer::update_varpi(&eff, &w0, cfg.noise_power);
        let rho = optimizer::update_rho(&eff, &w0, &varpi, cfg.noise_power).unwrap();
        let update = optimizer::update_beamformers(&eff, &rho, &varpi, power);
        prop_assert!(update.normalized);
        prop_assert!((update.w.total_power() - power).abs() <= 1e-12 * power);
    }
}
