//! Tap-delay-line channels for the BS-user, BS-IRS and IRS-user links and
//! their per-subcarrier frequency responses.
//!
//! Tap conventions follow the received-signal model: the BS-user and
//! IRS-user taps `h̃` enter the convolution conjugate-transposed, so their
//! per-subcarrier channels are `h_i = Σ_d h̃_d e^{+j2π i d/N}` (the
//! conjugated eigenvalues of the corresponding cyclic matrices), while the
//! BS-IRS taps enter as-is and `G_i = Σ_d G̃_d e^{-j2π i d/N}`. With these
//! definitions `(h^d_i)ᴴ + (h^r_i)ᴴ Φ G_i` is exactly the i-th diagonal block
//! of the DFT-transformed block-cyclic channel.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::scenario::{LinkGains, SystemConfig, TapPlacement};
use crate::{CMat, CVec, Error, Result, ToneGrid, C64};

/// Time-domain impulse responses of all links.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTaps {
    /// `direct[k][d]`: BS to user `k`, an `N_t`-vector per delay.
    pub direct: Vec<Vec<CVec>>,
    /// `bs_irs[d]`: an `M x N_t` matrix per delay.
    pub bs_irs: Vec<CMat>,
    /// `irs_user[k][d]`: IRS to user `k`, an `M`-vector per delay.
    pub irs_user: Vec<Vec<CVec>>,
}

impl ChannelTaps {
    /// All-zero taps of the given dimensions.
    pub fn zeros(n_tx: usize, n_irs: usize, n_users: usize, n_taps: usize) -> Self {
        Self {
            direct: vec![vec![CVec::zeros(n_tx); n_taps]; n_users],
            bs_irs: vec![CMat::zeros(n_irs, n_tx); n_taps],
            irs_user: vec![vec![CVec::zeros(n_irs); n_taps]; n_users],
        }
    }

    pub fn n_users(&self) -> usize {
        self.direct.len()
    }

    pub fn n_taps(&self) -> usize {
        self.bs_irs.len()
    }

    pub fn n_tx(&self) -> usize {
        self.bs_irs.first().map_or(0, |g| g.ncols())
    }

    pub fn n_irs(&self) -> usize {
        self.bs_irs.first().map_or(0, |g| g.nrows())
    }

    /// Copy with the BS-IRS and IRS-user links zeroed.
    pub fn without_reflection(&self) -> Self {
        let mut out = self.clone();
        out.bs_irs
            .iter_mut()
            .for_each(|g| g.fill(C64::new(0.0, 0.0)));
        out.irs_user
            .iter_mut()
            .flatten()
            .for_each(|h| h.fill(C64::new(0.0, 0.0)));
        out
    }

    /// `a * self + other`, entrywise.
    pub fn axpy(&self, a: C64, other: &Self) -> Self {
        let vv = |x: &[Vec<CVec>], y: &[Vec<CVec>]| -> Vec<Vec<CVec>> {
            x.iter()
                .zip(y)
                .map(|(xs, ys)| xs.iter().zip(ys).map(|(u, v)| u * a + v).collect())
                .collect()
        };
        Self {
            direct: vv(&self.direct, &other.direct),
            bs_irs: self
                .bs_irs
                .iter()
                .zip(&other.bs_irs)
                .map(|(u, v)| u * a + v)
                .collect(),
            irs_user: vv(&self.irs_user, &other.irs_user),
        }
    }

    /// Energy `Σ_d ‖h̃_{k,d}‖²` of user `k`'s direct link.
    pub fn direct_energy(&self, k: usize) -> f64 {
        self.direct[k].iter().map(|h| h.norm_squared()).sum()
    }

    pub fn irs_user_energy(&self, k: usize) -> f64 {
        self.irs_user[k].iter().map(|h| h.norm_squared()).sum()
    }

    pub fn bs_irs_energy(&self) -> f64 {
        self.bs_irs.iter().map(|g| g.norm_squared()).sum()
    }

    /// SHA-256 over the canonical byte layout of every tap, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (n, v) in [self.n_users(), self.n_taps(), self.n_tx(), self.n_irs()]
            .into_iter()
            .enumerate()
        {
            hasher.update([n as u8]);
            hasher.update((v as u64).to_le_bytes());
        }
        let mut feed = |z: &C64| {
            hasher.update(z.re.to_le_bytes());
            hasher.update(z.im.to_le_bytes());
        };
        self.direct
            .iter()
            .flatten()
            .flat_map(|h| h.iter())
            .for_each(&mut feed);
        self.bs_irs
            .iter()
            .flat_map(|g| g.iter())
            .for_each(&mut feed);
        self.irs_user
            .iter()
            .flatten()
            .flat_map(|h| h.iter())
            .for_each(&mut feed);
        hasher
            .finalize()
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// Writes the taps as `link,k,d,row,col,re,im` records; zero entries are omitted.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_dump_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_dump_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# n_users={} n_taps={} n_tx={} n_irs={}",
            self.n_users(),
            self.n_taps(),
            self.n_tx(),
            self.n_irs()
        );
        out.push_str("link,k,d,row,col,re,im\n");
        let mut rec = |link: &str, k: Option<usize>, d: usize, r: usize, c: usize, z: C64| {
            if z != C64::new(0.0, 0.0) {
                let k = k.map_or_else(|| "-".to_string(), |k| k.to_string());
                let _ = writeln!(out, "{link},{k},{d},{r},{c},{},{}", z.re, z.im);
            }
        };
        for (k, taps) in self.direct.iter().enumerate() {
            for (d, h) in taps.iter().enumerate() {
                h.iter()
                    .enumerate()
                    .for_each(|(r, &z)| rec("direct", Some(k), d, r, 0, z));
            }
        }
        for (d, g) in self.bs_irs.iter().enumerate() {
            for r in 0..g.nrows() {
                for c in 0..g.ncols() {
                    rec("bs_irs", None, d, r, c, g[(r, c)]);
                }
            }
        }
        for (k, taps) in self.irs_user.iter().enumerate() {
            for (d, h) in taps.iter().enumerate() {
                h.iter()
                    .enumerate()
                    .for_each(|(r, &z)| rec("irs_user", Some(k), d, r, 0, z));
            }
        }
        out
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_dump_str(&text)
    }

    pub fn from_dump_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty channel dump".into(),
        })?;
        let mut dims = [None; 4];
        for field in header.trim_start_matches('#').split_whitespace() {
            let (key, val) = field.split_once('=').ok_or(Error::Parse {
                line: 1,
                msg: format!("malformed header field `{field}`"),
            })?;
            let slot = match key {
                "n_users" => 0,
                "n_taps" => 1,
                "n_tx" => 2,
                "n_irs" => 3,
                _ => {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("unknown header key `{key}`"),
                    })
                }
            };
            dims[slot] = Some(val.parse::<usize>().map_err(|e| Error::Parse {
                line: 1,
                msg: e.to_string(),
            })?);
        }
        let [Some(n_users), Some(n_taps), Some(n_tx), Some(n_irs)] = dims else {
            return Err(Error::Parse {
                line: 1,
                msg: "header must give n_users, n_taps, n_tx and n_irs".into(),
            });
        };
        let mut taps = Self::zeros(n_tx, n_irs, n_users, n_taps);
        for (lineno, line) in lines {
            let line_no = lineno + 1;
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            if line.is_empty() || line.starts_with("link,") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(perr(format!("expected 7 fields, got {}", f.len())));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|e| perr(format!("`{s}`: {e}")));
            let val = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("`{s}`: {e}")));
            let (d, r, c) = (idx(f[2])?, idx(f[3])?, idx(f[4])?);
            let z = C64::new(val(f[5])?, val(f[6])?);
            if d >= n_taps {
                return Err(perr(format!("delay {d} out of range")));
            }
            let slot = match f[0] {
                "direct" | "irs_user" => {
                    let k = idx(f[1])?;
                    let (link, len) = if f[0] == "direct" {
                        (&mut taps.direct, n_tx)
                    } else {
                        (&mut taps.irs_user, n_irs)
                    };
                    if k >= n_users || r >= len || c != 0 {
                        return Err(perr("index out of range".into()));
                    }
                    &mut link[k][d][r]
                }
                "bs_irs" => {
                    if f[1] != "-" || r >= n_irs || c >= n_tx {
                        return Err(perr("index out of range".into()));
                    }
                    &mut taps.bs_irs[d][(r, c)]
                }
                other => return Err(perr(format!("unknown link `{other}`"))),
            };
            *slot = z;
        }
        Ok(taps)
    }
}

/// Number of nonzero delay taps used for a `D`-tap window: `ceil(D/2)`.
pub fn nonzero_tap_count(n_taps: usize) -> usize {
    n_taps.div_ceil(2)
}

fn cscg<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

fn delays<R: Rng + ?Sized>(rng: &mut R, n_taps: usize, placement: TapPlacement) -> Vec<usize> {
    let count = nonzero_tap_count(n_taps);
    match placement {
        TapPlacement::Leading => (0..count).collect(),
        TapPlacement::Random => {
            let mut d = index::sample(rng, n_taps, count).into_vec();
            d.sort_unstable();
            d
        }
    }
}

/// Draws one realization of all link taps.
///
/// Each link gets its own child stream seeded from `rng`, and IRS elements
/// are drawn element-major, so a realization with `M` elements is the
/// leading-element restriction of one with more elements under the same seed.
pub fn sample_taps<R: Rng + ?Sized>(
    config: &SystemConfig,
    gains: &LinkGains,
    rng: &mut R,
) -> Result<ChannelTaps> {
    let (n_tx, n_irs, n_users, n_taps) = (config.n_tx, config.n_irs, config.n_users, config.n_taps);
    if gains.bs_user.len() != n_users {
        return Err(Error::Dimension(format!(
            "{} BS-user gains for {} users",
            gains.bs_user.len(),
            n_users
        )));
    }
    let count = nonzero_tap_count(n_taps) as f64;
    let direct_seeds: Vec<u64> = (0..n_users).map(|_| rng.random()).collect();
    let bs_irs_seed: u64 = rng.random();
    let irs_user_seeds: Vec<u64> = (0..n_users).map(|_| rng.random()).collect();

    let mut taps = ChannelTaps::zeros(n_tx, n_irs, n_users, n_taps);

    for (k, &seed) in direct_seeds.iter().enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let var = gains.bs_user[k] / count;
        for d in delays(&mut r, n_taps, config.tap_placement) {
            for n in 0..n_tx {
                taps.direct[k][d][n] = cscg(&mut r, var);
            }
        }
    }

    let mut r = ChaCha8Rng::seed_from_u64(bs_irs_seed);
    let var = gains.bs_irs / count;
    let bs_irs_delays = delays(&mut r, n_taps, config.tap_placement);
    for m in 0..n_irs {
        for &d in &bs_irs_delays {
            for n in 0..n_tx {
                taps.bs_irs[d][(m, n)] = cscg(&mut r, var);
            }
        }
    }

    for (k, &seed) in irs_user_seeds.iter().enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let var = gains.irs_user / count;
        let dl = delays(&mut r, n_taps, config.tap_placement);
        for m in 0..n_irs {
            for &d in &dl {
                taps.irs_user[k][d][m] = cscg(&mut r, var);
            }
        }
    }
    Ok(taps)
}

/// Per-subcarrier channels `h^d_{k,i}`, `h^r_{k,i}` and `G_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyChannels {
    pub direct: ToneGrid<CVec>,
    pub irs_user: ToneGrid<CVec>,
    pub bs_irs: Vec<CMat>,
}

impl FrequencyChannels {
    pub fn n_subcarriers(&self) -> usize {
        self.bs_irs.len()
    }

    pub fn n_users(&self) -> usize {
        self.direct.n_users()
    }

    pub fn n_tx(&self) -> usize {
        self.bs_irs[0].ncols()
    }

    pub fn n_irs(&self) -> usize {
        self.bs_irs[0].nrows()
    }

    /// Copy with the reflected links (`h^r`, `G`) zeroed.
    pub fn without_reflection(&self) -> Self {
        Self {
            direct: self.direct.clone(),
            irs_user: self.irs_user.map(|h| CVec::zeros(h.len())),
            bs_irs: self
                .bs_irs
                .iter()
                .map(|g| CMat::zeros(g.nrows(), g.ncols()))
                .collect(),
        }
    }
}

/// Evaluates the tap responses on each of the `n_subcarriers` subcarriers.
///
/// Direct per-subcarrier evaluation, `O(N·D)` per scalar channel.
pub fn to_frequency(taps: &ChannelTaps, n_subcarriers: usize) -> Result<FrequencyChannels> {
    let n_taps = taps.n_taps();
    if n_taps > n_subcarriers || n_subcarriers == 0 {
        return Err(Error::Dimension(format!(
            "D={n_taps} taps do not fit in N={n_subcarriers} subcarriers"
        )));
    }
    let n = n_subcarriers;
    // twiddle[(i*d) mod N] = e^{-j2π (i d mod N)/N}
    let twiddle: Vec<C64> = (0..n)
        .map(|t| C64::from_polar(1.0, -2.0 * std::f64::consts::PI * t as f64 / n as f64))
        .collect();
    let conjugated_response = |seq: &[CVec], i: usize| -> CVec {
        let mut acc = CVec::zeros(seq[0].len());
        for (d, h) in seq.iter().enumerate() {
            acc.axpy(twiddle[(i * d) % n].conj(), h, C64::new(1.0, 0.0));
        }
        acc
    };
    let direct = ToneGrid::from_fn(n, taps.n_users(), |i, k| {
        conjugated_response(&taps.direct[k], i)
    });
    let irs_user = ToneGrid::from_fn(n, taps.n_users(), |i, k| {
        conjugated_response(&taps.irs_user[k], i)
    });
    let bs_irs = (0..n)
        .map(|i| {
            let mut acc = CMat::zeros(taps.n_irs(), taps.n_tx());
            for (d, g) in taps.bs_irs.iter().enumerate() {
                acc.zip_apply(g, |a, b| *a += b * twiddle[(i * d) % n]);
            }
            acc
        })
        .collect();
    Ok(FrequencyChannels {
        direct,
        irs_user,
        bs_irs,
    })
}

/// The vector `ĥ` with `ĥᴴ = (h^d_{k,i})ᴴ + (h^r_{k,i})ᴴ diag(φ) G_i`.
///
/// `phi` is not required to be unimodular here; the oracle uses `φ = 0`.
pub fn effective_channel(fc: &FrequencyChannels, phi: &[C64], k: usize, i: usize) -> CVec {
    let hr = fc.irs_user.get(i, k);
    let weighted: CVec =
        CVec::from_iterator(hr.len(), hr.iter().zip(phi).map(|(h, p)| p.conj() * h));
    let mut out = fc.direct.get(i, k).clone();
    out.gemv_ad(
        C64::new(1.0, 0.0),
        &fc.bs_irs[i],
        &weighted,
        C64::new(1.0, 0.0),
    );
    out
}

/// Effective channels of every (subcarrier, user) pair for one phase vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    grid: ToneGrid<CVec>,
}

impl EffectiveChannels {
    pub fn compute(fc: &FrequencyChannels, phi: &[C64]) -> Self {
        Self {
            grid: ToneGrid::from_fn(fc.n_subcarriers(), fc.n_users(), |i, k| {
                effective_channel(fc, phi, k, i)
            }),
        }
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> &CVec {
        self.grid.get(i, k)
    }

    pub fn n_subcarriers(&self) -> usize {
        self.grid.n_subcarriers()
    }

    pub fn n_users(&self) -> usize {
        self.grid.n_users()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{LinkGains, LinkGeometry};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn small_config() -> SystemConfig {
        SystemConfig {
            n_subcarriers: 8,
            n_tx: 2,
            n_users: 2,
            n_irs: 3,
            n_taps: 4,
            cp_len: 4,
            ..Default::default()
        }
    }

    fn unit_gains(k: usize) -> LinkGains {
        LinkGains {
            bs_user: vec![1.0; k],
            bs_irs: 1.0,
            irs_user: 1.0,
        }
    }

    fn random_taps(seed: u64, cfg: &SystemConfig) -> ChannelTaps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_taps(cfg, &unit_gains(cfg.n_users), &mut rng).unwrap()
    }

    #[test]
    fn leading_half_taps_nonzero() {
        let cfg = SystemConfig::default();
        let geo = LinkGeometry::default();
        let gains = LinkGains::from_distances(&geo, &[50.0, 49.0, 51.0]).unwrap();
        let taps = sample_taps(&cfg, &gains, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for d in 0..16 {
            let nonzero = d < 8;
            for k in 0..3 {
                assert_eq!(taps.direct[k][d].iter().all(|z| z.norm() > 0.0), nonzero);
                assert_eq!(
                    taps.direct[k][d].iter().all(|z| *z == c(0.0, 0.0)),
                    !nonzero
                );
                assert_eq!(
                    taps.irs_user[k][d].iter().all(|z| *z == c(0.0, 0.0)),
                    !nonzero
                );
            }
            assert_eq!(taps.bs_irs[d].iter().all(|z| *z == c(0.0, 0.0)), !nonzero);
        }
    }

    #[test]
    fn random_placement_uses_half_the_window() {
        let cfg = SystemConfig {
            tap_placement: TapPlacement::Random,
            ..SystemConfig::default()
        };
        let taps = sample_taps(&cfg, &unit_gains(3), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for k in 0..3 {
            let nz = taps.direct[k].iter().filter(|h| h.norm() > 0.0).count();
            assert_eq!(nz, 8);
        }
        assert_eq!(taps.bs_irs.iter().filter(|g| g.norm() > 0.0).count(), 8);
    }

    #[test]
    fn tap_variance_matches_link_gain() {
        // mean of Σ_d |h̃_d(n)|² over draws estimates the link gain
        let cfg = SystemConfig {
            n_tx: 1,
            n_users: 1,
            n_irs: 1,
            n_taps: 4,
            cp_len: 4,
            n_subcarriers: 4,
            ..Default::default()
        };
        let g = 2.5e-7;
        let gains = LinkGains {
            bs_user: vec![g],
            bs_irs: 3.0 * g,
            irs_user: 0.5 * g,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 20_000;
        let mut samples = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..draws {
            let t = sample_taps(&cfg, &gains, &mut rng).unwrap();
            samples[0].push(t.direct_energy(0));
            samples[1].push(t.bs_irs_energy());
            samples[2].push(t.irs_user_energy(0));
        }
        for (s, target) in samples.iter().zip([g, 3.0 * g, 0.5 * g]) {
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            assert!(
                (mean - target).abs() < 3.0 * se,
                "mean {mean} target {target} se {se}"
            );
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = small_config();
        assert_eq!(random_taps(42, &cfg), random_taps(42, &cfg));
        assert_ne!(random_taps(42, &cfg), random_taps(43, &cfg));
    }

    #[test]
    fn irs_elements_are_nested_across_sizes() {
        let small = small_config();
        let large = SystemConfig {
            n_irs: 7,
            ..small.clone()
        };
        let a = random_taps(8, &small);
        let b = random_taps(8, &large);
        assert_eq!(a.direct, b.direct);
        for d in 0..small.n_taps {
            assert_eq!(a.bs_irs[d], b.bs_irs[d].rows(0, 3).into_owned());
            for k in 0..2 {
                assert_eq!(a.irs_user[k][d], b.irs_user[k][d].rows(0, 3).into_owned());
            }
        }
    }

    #[test]
    fn single_zero_delay_tap_is_flat() {
        let mut taps = ChannelTaps::zeros(2, 2, 1, 1);
        taps.direct[0][0] = CVec::from_vec(vec![c(1.0, -2.0), c(0.5, 0.25)]);
        taps.irs_user[0][0] = CVec::from_vec(vec![c(0.1, 0.0), c(0.0, 3.0)]);
        taps.bs_irs[0][(1, 0)] = c(-1.0, 1.0);
        let fc = to_frequency(&taps, 16).unwrap();
        for i in 0..16 {
            assert_eq!(fc.direct.get(i, 0), &taps.direct[0][0]);
            assert_eq!(fc.irs_user.get(i, 0), &taps.irs_user[0][0]);
            assert_eq!(fc.bs_irs[i], taps.bs_irs[0]);
        }
    }

    #[test]
    fn two_point_dft() {
        let v = CVec::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.0)]);
        let mut taps = ChannelTaps::zeros(2, 1, 1, 2);
        taps.direct[0][0] = v.clone();
        taps.direct[0][1] = v.clone();
        let fc = to_frequency(&taps, 2).unwrap();
        assert!((fc.direct.get(0, 0) - &v * c(2.0, 0.0)).norm() < 1e-15);
        assert!(fc.direct.get(1, 0).norm() < 1e-15);
    }

    #[test]
    fn rejects_more_taps_than_subcarriers() {
        let taps = ChannelTaps::zeros(1, 1, 1, 5);
        assert!(to_frequency(&taps, 4).is_err());
    }

    #[test]
    fn parseval_holds() {
        let cfg = SystemConfig {
            n_subcarriers: 32,
            n_taps: 8,
            cp_len: 8,
            ..small_config()
        };
        for seed in 0..5 {
            let taps = random_taps(seed, &cfg);
            let fc = to_frequency(&taps, cfg.n_subcarriers).unwrap();
            let n = cfg.n_subcarriers as f64;
            for k in 0..cfg.n_users {
                let fd: f64 = (0..cfg.n_subcarriers)
                    .map(|i| fc.direct.get(i, k).norm_squared())
                    .sum::<f64>()
                    / n;
                assert!((fd / taps.direct_energy(k) - 1.0).abs() < 1e-10);
                let fr: f64 = (0..cfg.n_subcarriers)
                    .map(|i| fc.irs_user.get(i, k).norm_squared())
                    .sum::<f64>()
                    / n;
                assert!((fr / taps.irs_user_energy(k) - 1.0).abs() < 1e-10);
            }
            let fg: f64 = fc.bs_irs.iter().map(|g| g.norm_squared()).sum::<f64>() / n;
            assert!((fg / taps.bs_irs_energy() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn no_reflected_path_gives_direct_channel() {
        let cfg = small_config();
        let taps = random_taps(1, &cfg).without_reflection();
        let fc = to_frequency(&taps, cfg.n_subcarriers).unwrap();
        let phi = [c(0.0, 1.0), c(-1.0, 0.0), C64::from_polar(1.0, 0.3)];
        for i in 0..cfg.n_subcarriers {
            for k in 0..cfg.n_users {
                assert_eq!(&effective_channel(&fc, &phi, k, i), fc.direct.get(i, k));
            }
        }
    }

    #[test]
    fn rank_one_composition() {
        // M = 1, φ = 1, G = e uᵀ, h^r = c: ĥᴴ = h^dᴴ + c* e uᵀ, so ĥ = h^d + (c e*) u*
        let hd = CVec::from_vec(vec![c(0.3, 0.1), c(-1.0, 0.5)]);
        let u = [c(2.0, -1.0), c(0.5, 0.5)];
        let e = c(0.7, -0.2);
        let cr = c(-0.4, 1.1);
        let fc = FrequencyChannels {
            direct: ToneGrid::filled(1, 1, hd.clone()),
            irs_user: ToneGrid::filled(1, 1, CVec::from_vec(vec![cr])),
            bs_irs: vec![CMat::from_row_slice(1, 2, &[e * u[0], e * u[1]])],
        };
        let h = effective_channel(&fc, &[c(1.0, 0.0)], 0, 0);
        for n in 0..2 {
            let expected = hd[n] + (cr.conj() * e * u[n]).conj();
            assert!((h[n] - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn dump_round_trip_and_fingerprint() {
        let cfg = small_config();
        let taps = random_taps(17, &cfg);
        let text = taps.to_dump_string();
        let back = ChannelTaps::from_dump_str(&text).unwrap();
        assert_eq!(back, taps);
        assert_eq!(back.fingerprint(), taps.fingerprint());
        assert_ne!(random_taps(18, &cfg).fingerprint(), taps.fingerprint());
        assert!(text.lines().nth(2).unwrap().starts_with("direct,0,0,0,0,"));
        assert!(text.contains("bs_irs,-,"));
    }

    #[test]
    fn dump_rejects_bad_records() {
        let bad =
            "# n_users=1 n_taps=1 n_tx=1 n_irs=1\nlink,k,d,row,col,re,im\ndirect,0,3,0,0,1,0\n";
        assert!(matches!(
            ChannelTaps::from_dump_str(bad),
            Err(Error::Parse { line: 3, .. })
        ));
        let bad = "# n_users=1 n_taps=1\n";
        assert!(ChannelTaps::from_dump_str(bad).is_err());
    }

    proptest! {
        #[test]
        fn frequency_map_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let cfg = small_config();
            let (t1, t2) = (random_taps(s1, &cfg), random_taps(s2, &cfg));
            let a = c(re, im);
            let lhs = to_frequency(&t1.axpy(a, &t2), 8).unwrap();
            let f1 = to_frequency(&t1, 8).unwrap();
            let f2 = to_frequency(&t2, 8).unwrap();
            for i in 0..8 {
                for k in 0..2 {
                    let d = lhs.direct.get(i, k) - (f1.direct.get(i, k) * a + f2.direct.get(i, k));
                    prop_assert!(d.norm() < 1e-12);
                    let r = lhs.irs_user.get(i, k) - (f1.irs_user.get(i, k) * a + f2.irs_user.get(i, k));
                    prop_assert!(r.norm() < 1e-12);
                }
                let g = &lhs.bs_irs[i] - (&f1.bs_irs[i] * a + &f2.bs_irs[i]);
                prop_assert!(g.norm() < 1e-12);
            }
        }
    }
}
