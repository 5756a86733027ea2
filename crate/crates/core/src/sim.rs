//! Monte Carlo ABEP runs and polar-grid condition-number sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{noise_psd_for, received_electrical_power};
use crate::channel::{channel_matrix, ChannelMatrix};
use crate::codebook::Codebook;
use crate::detect::{Detector, DetectorSpec, Scratch};
use crate::error::{Error, Result};
use crate::geometry::{build_scene, SceneConfig};
use crate::par::{self, Parallelism};

/// Symbols per batch. Early stopping is only checked between batches, which
/// keeps the stopping point independent of the worker count.
pub const BATCH_SYMBOLS: u64 = 4096;

pub const DEFAULT_EARLY_STOP_ERRORS: u64 = 200;

/// Which signal power the Eb/N0 axis is normalized by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrConvention {
    #[default]
    Transmit,
    Received,
}

#[derive(Debug, Clone)]
pub struct SimRun<'a> {
    pub seed: u64,
    pub n_symbols: u64,
    pub snr_grid_db: Vec<f64>,
    pub detector: DetectorSpec,
    pub codebook: &'a Codebook,
    pub channel: &'a ChannelMatrix,
    /// Stop a point once this many bit errors are counted.
    pub early_stop: Option<u64>,
    pub convention: SnrConvention,
    pub parallelism: Parallelism,
}

impl<'a> SimRun<'a> {
    pub fn new(codebook: &'a Codebook, channel: &'a ChannelMatrix, snr_grid_db: Vec<f64>) -> Self {
        SimRun {
            seed: 1,
            n_symbols: 1_000_000,
            snr_grid_db,
            detector: DetectorSpec::default(),
            codebook,
            channel,
            early_stop: Some(DEFAULT_EARLY_STOP_ERRORS),
            convention: SnrConvention::Transmit,
            parallelism: Parallelism::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_symbols == 0 {
            return Err(Error::validation("n_symbols", "must be at least 1"));
        }
        validate_snr_grid(&self.snr_grid_db)?;
        if self.channel.n_t() != self.codebook.n_t() {
            return Err(Error::ConfigMismatch(format!(
                "channel has {} LEDs, codewords have {} entries",
                self.channel.n_t(),
                self.codebook.n_t()
            )));
        }
        Ok(())
    }

    /// Signal power the Eb/N0 axis refers to.
    pub fn reference_power(&self) -> Result<f64> {
        Ok(match self.convention {
            SnrConvention::Transmit => self.codebook.transmit_power(),
            SnrConvention::Received => received_electrical_power(self.channel, self.codebook)?.empirical,
        })
    }
}

pub fn validate_snr_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("snr_grid_db", "must not be empty"));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("snr_grid_db", "entries must be finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("snr_grid_db", "must be strictly increasing"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbepPoint {
    pub eb_n0_db: f64,
    pub abep: f64,
    pub bit_errors: u64,
    pub bits_sent: u64,
    pub symbols_sent: u64,
    pub symbol_errors: u64,
    pub repairs: u64,
    pub repair_rate: f64,
}

impl AbepPoint {
    /// Binomial standard deviation of the ABEP estimate.
    pub fn std_error(&self) -> f64 {
        if self.bits_sent == 0 {
            return 0.0;
        }
        let p = self.abep;
        (p * (1.0 - p) / self.bits_sent as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbepCurve {
    pub points: Vec<AbepPoint>,
}

impl AbepCurve {
    /// `false` if any point exceeds one half, which only a broken setup yields.
    pub fn is_sane(&self) -> bool {
        self.points.iter().all(|p| p.abep <= 0.5)
    }

    /// Eb/N0 (dB) where the curve crosses `target`.
    pub fn eb_n0_at(&self, target: f64) -> Option<f64> {
        ebn0_at_abep(&self.points, target)
    }
}

/// Log-linear interpolation of the first downward crossing of `target`.
pub fn ebn0_at_abep(points: &[AbepPoint], target: f64) -> Option<f64> {
    if !(target > 0.0) {
        return None;
    }
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.abep >= target && b.abep < target {
            if b.abep <= 0.0 || a.abep <= 0.0 {
                return None;
            }
            let (la, lb, lt) = (a.abep.log10(), b.abep.log10(), target.log10());
            if la == lb {
                return Some(a.eb_n0_db);
            }
            return Some(a.eb_n0_db + (lt - la) / (lb - la) * (b.eb_n0_db - a.eb_n0_db));
        }
    }
    None
}

#[derive(Debug, Default)]
struct Tally {
    bit_errors: u64,
    symbol_errors: u64,
    repairs: u64,
    scratch: Scratch,
    y: Vec<f64>,
}

fn merge(mut a: Tally, b: Tally) -> Tally {
    a.bit_errors += b.bit_errors;
    a.symbol_errors += b.symbol_errors;
    a.repairs += b.repairs;
    a
}

/// Generator for one SNR point; each symbol uses its own stream.
fn point_rng(seed: u64, snr_index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(snr_index as u64).to_le_bytes());
    key[16..24].copy_from_slice(b"abep-mc\0");
    ChaCha8Rng::from_seed(key)
}

/// Simulates one Eb/N0 point.
fn run_point(run: &SimRun<'_>, snr_index: usize, power: f64) -> Result<AbepPoint> {
    let cb = run.codebook;
    let h = run.channel;
    let eb_n0_db = run.snr_grid_db[snr_index];
    let eta = cb.n_bits() as f64;
    let n0 = noise_psd_for(power, eta, eb_n0_db)?;
    let sigma = n0.sqrt();
    let detector = Detector::new(&run.detector, h, cb, n0)?;
    let images: Vec<Vec<f64>> = cb.vectors().iter().map(|s| h.apply(s)).collect();
    let base = point_rng(run.seed, snr_index);
    let c = cb.len() as u32;

    let symbol = |acc: &mut Tally, k: u64| {
        let mut rng = base.clone();
        rng.set_stream(k);
        let label: u32 = rng.random_range(0..c);
        let t = cb.index_of_label(label);
        acc.y.clear();
        for &x in &images[t] {
            let z: f64 = rng.sample(StandardNormal);
            acc.y.push(x + sigma * z);
        }
        let (t_hat, repaired) = detector.detect_index(&acc.y, &mut acc.scratch);
        let errs = (label ^ cb.label(t_hat)).count_ones() as u64;
        acc.bit_errors += errs;
        acc.symbol_errors += u64::from(t_hat != t);
        acc.repairs += u64::from(repaired);
    };

    let mut total = Tally::default();
    let mut sent = 0u64;
    while sent < run.n_symbols {
        let end = (sent + BATCH_SYMBOLS).min(run.n_symbols);
        let part = par::fold_range(sent, end, symbol, merge);
        total = merge(total, part);
        sent = end;
        if run.early_stop.is_some_and(|limit| total.bit_errors >= limit) {
            break;
        }
    }
    let bits_sent = sent * cb.n_bits() as u64;
    Ok(AbepPoint {
        eb_n0_db,
        abep: total.bit_errors as f64 / bits_sent as f64,
        bit_errors: total.bit_errors,
        bits_sent,
        symbols_sent: sent,
        symbol_errors: total.symbol_errors,
        repairs: total.repairs,
        repair_rate: total.repairs as f64 / sent as f64,
    })
}

/// Monte Carlo ABEP over the run's Eb/N0 grid.
///
/// Symbol `k` at grid index `i` draws its label and noise from a ChaCha
/// stream keyed by `(seed, i)` with stream id `k`, so results are identical
/// for any worker count and a longer run extends a shorter one.
pub fn run_abep(run: &SimRun<'_>) -> Result<AbepCurve> {
    run.validate()?;
    let power = run.reference_power()?;
    run.parallelism.install(|| {
        let points = (0..run.snr_grid_db.len())
            .map(|i| run_point(run, i, power))
            .collect::<Result<Vec<_>>>()?;
        Ok(AbepCurve { points })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnPoint {
    pub r_cm: f64,
    pub omega_deg: f64,
    pub cn_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnMap {
    pub grid: Vec<CnPoint>,
    pub radial_step_cm: f64,
    pub angular_step_deg: f64,
    pub cell_radius_cm: f64,
    /// Mean and population standard deviation over finite entries.
    pub mean_db: f64,
    pub std_db: f64,
    /// Grid points with a rank-deficient channel.
    pub infinite_count: usize,
}

/// Radii `0, step, 2 step, ..` up to the cell radius.
pub fn radial_grid(cell_radius_cm: f64, step_cm: f64) -> Vec<f64> {
    let n = (cell_radius_cm / step_cm * (1.0 + 1e-12)).floor() as usize;
    (0..=n).map(|k| k as f64 * step_cm).collect()
}

/// Azimuths `0, step, ..` strictly below 360 degrees.
pub fn angular_grid(step_deg: f64) -> Vec<f64> {
    let n = (360.0 / step_deg * (1.0 - 1e-12)).ceil() as usize;
    (0..n).map(|k| k as f64 * step_deg).collect()
}

/// Condition number (dB) at one UE position.
pub fn cn_at(template: &SceneConfig, r_cm: f64, omega_deg: f64) -> Result<f64> {
    let scene = build_scene(&template.with_ue(r_cm, omega_deg.to_radians()))?;
    Ok(channel_matrix(&scene)?.condition_number_db())
}

pub fn sweep_cn(template: &SceneConfig, radial_step_cm: f64, angular_step_deg: f64) -> Result<CnMap> {
    if !(radial_step_cm > 0.0 && angular_step_deg > 0.0) {
        return Err(Error::Domain(format!(
            "grid steps must be positive, got {radial_step_cm} cm and {angular_step_deg} deg"
        )));
    }
    let cell = template.cell_radius_cm()?;
    let radii = radial_grid(cell, radial_step_cm);
    let angles = angular_grid(angular_step_deg);
    let n_a = angles.len();
    let cns = par::map_range(radii.len() * n_a, |i| cn_at(template, radii[i / n_a], angles[i % n_a]));
    let mut grid = Vec::with_capacity(cns.len());
    for (i, cn) in cns.into_iter().enumerate() {
        grid.push(CnPoint {
            r_cm: radii[i / n_a],
            omega_deg: angles[i % n_a],
            cn_db: cn?,
        });
    }
    let finite: Vec<f64> = grid.iter().map(|p| p.cn_db).filter(|x| x.is_finite()).collect();
    let n = finite.len() as f64;
    let (mean_db, std_db) = if finite.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    Ok(CnMap {
        infinite_count: grid.len() - finite.len(),
        grid,
        radial_step_cm,
        angular_step_deg,
        cell_radius_cm: cell,
        mean_db,
        std_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_universe, codebook_size, pam_alphabet, Scheme};
    use crate::detect::DetectorKind;

    fn flim4() -> Codebook {
        let a = pam_alphabet(1, 500.0, 800.0).unwrap();
        let u = build_universe(Scheme::Flim, 4, &a).unwrap();
        let c = codebook_size(u.len());
        Codebook::new(Scheme::Flim, a, u.len(), u, (0..c as u32).collect()).unwrap()
    }

    fn edge_channel() -> ChannelMatrix {
        channel_matrix(&build_scene(&SceneConfig::default().with_ue(80.0, 0.7)).unwrap()).unwrap()
    }

    #[test]
    fn noiseless_ml_is_error_free() {
        let cb = flim4();
        let h = edge_channel();
        let mut run = SimRun::new(&cb, &h, vec![400.0]);
        run.n_symbols = 10_000;
        run.detector.kind = DetectorKind::Ml;
        let curve = run_abep(&run).unwrap();
        assert_eq!(curve.points[0].bit_errors, 0);
        assert_eq!(curve.points[0].bits_sent, 40_000);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cb = flim4();
        let h = edge_channel();
        let mut run = SimRun::new(&cb, &h, vec![150.0, 160.0, 170.0]);
        run.n_symbols = 20_000;
        run.early_stop = Some(500);
        run.parallelism = Parallelism::with_threads(1);
        let one = run_abep(&run).unwrap();
        run.parallelism = Parallelism::with_threads(8);
        let eight = run_abep(&run).unwrap();
        assert_eq!(one, eight);
        assert!(one.points.iter().any(|p| p.bit_errors > 0));
    }

    #[test]
    fn longer_run_extends_shorter_one() {
        let cb = flim4();
        let h = edge_channel();
        let mut run = SimRun::new(&cb, &h, vec![155.0]);
        run.early_stop = None;
        run.n_symbols = 3 * BATCH_SYMBOLS;
        let short = run_abep(&run).unwrap().points[0].clone();
        run.n_symbols *= 2;
        let long = run_abep(&run).unwrap().points[0].clone();
        assert!(short.bit_errors > 0);
        assert!(long.bit_errors >= short.bit_errors);
        // The first half of the long run is the short run.
        let mut first_half = run.clone();
        first_half.n_symbols = 3 * BATCH_SYMBOLS;
        assert_eq!(run_abep(&first_half).unwrap().points[0], short);
    }

    #[test]
    fn validation_rejects_bad_runs() {
        let cb = flim4();
        let h = edge_channel();
        let mut run = SimRun::new(&cb, &h, vec![10.0, 5.0]);
        assert!(matches!(run_abep(&run), Err(Error::Validation { .. })));
        run.snr_grid_db = vec![1.0];
        run.n_symbols = 0;
        assert!(matches!(run_abep(&run), Err(Error::Validation { .. })));
        let narrow = ChannelMatrix::identity(2);
        let run = SimRun::new(&cb, &narrow, vec![1.0]);
        assert!(matches!(run_abep(&run), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn interpolation_is_log_linear() {
        let pt = |db: f64, p: f64| AbepPoint {
            eb_n0_db: db,
            abep: p,
            bit_errors: 0,
            bits_sent: 0,
            symbols_sent: 0,
            symbol_errors: 0,
            repairs: 0,
            repair_rate: 0.0,
        };
        let pts = [pt(0.0, 1e-1), pt(10.0, 1e-2), pt(20.0, 1e-4)];
        assert!((ebn0_at_abep(&pts, 1e-3).unwrap() - 15.0).abs() < 1e-12);
        assert!((ebn0_at_abep(&pts, 1e-1).unwrap() - 0.0).abs() < 1e-12);
        assert_eq!(ebn0_at_abep(&pts, 1e-6), None);
    }

    #[test]
    fn grid_arithmetic() {
        assert_eq!(radial_grid(100.4, 2.5).len(), 41);
        assert_eq!(radial_grid(100.0, 2.5).len(), 41);
        assert_eq!(angular_grid(1.0).len(), 360);
        assert!(angular_grid(0.7).last().copied().unwrap() < 360.0);
    }

    #[test]
    fn coarse_sweep_shape() {
        let map = sweep_cn(&SceneConfig::default(), 25.0, 90.0).unwrap();
        assert_eq!(map.grid.len(), 5 * 4);
        assert_eq!(map.infinite_count, 0);
        assert!(map.mean_db.is_finite() && map.std_db > 0.0);
        assert!(sweep_cn(&SceneConfig::default(), 0.0, 1.0).is_err());
    }
}
