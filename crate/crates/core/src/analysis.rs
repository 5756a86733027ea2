//! Power and SNR accounting, pairwise error probabilities and the union
//! bound on bit error probability.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::codebook::{activation_pmf, sq_dist, Codebook};
use crate::error::{Error, Result};
use crate::par;

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Closed-form `E{s_i^2}` for an LED that is off with probability `nu` and
/// otherwise uniform over the `M` PAM levels. Undefined for `M = 1`.
pub fn symbol_second_moment(nu: f64, m: usize, i_lower: f64, i_upper: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Domain(format!("zero probability {nu} outside [0, 1]")));
    }
    if m < 2 {
        return Err(Error::Domain(
            "closed-form second moment needs M >= 2; use the empirical moment".into(),
        ));
    }
    let span = i_upper - i_lower;
    let mf = m as f64;
    Ok((1.0 - nu)
        * (i_lower * i_lower + i_lower * span + (2.0 * mf - 1.0) / (6.0 * (mf - 1.0)) * span * span))
}

/// Per-LED empirical moments over the codewords.
pub fn column_moments(codebook: &Codebook) -> (Vec<f64>, Vec<f64>) {
    let c = codebook.len() as f64;
    let n_t = codebook.n_t();
    let mut mean = vec![0.0; n_t];
    let mut second = vec![0.0; n_t];
    for v in codebook.vectors() {
        for i in 0..n_t {
            mean[i] += v[i] / c;
            second[i] += v[i] * v[i] / c;
        }
    }
    (mean, second)
}

/// Received electrical signal power two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceivedPower {
    /// Sum of per-LED second moments plus cross terms built from per-LED
    /// means, which presumes independent LED symbols.
    pub closed_form: f64,
    /// Mean `||H s||^2` over the codewords.
    pub empirical: f64,
}

impl ReceivedPower {
    pub fn relative_gap(&self) -> f64 {
        if self.empirical == 0.0 {
            self.closed_form.abs()
        } else {
            (self.closed_form - self.empirical).abs() / self.empirical
        }
    }
}

pub fn received_electrical_power(h: &ChannelMatrix, codebook: &Codebook) -> Result<ReceivedPower> {
    check_dims(h, codebook)?;
    let (mean, second) = column_moments(codebook);
    let n_t = codebook.n_t();
    let mut closed_form = 0.0;
    for j in 0..h.n_r() {
        for k in 0..n_t {
            closed_form += h.get(j, k).powi(2) * second[k];
            for l in (0..n_t).filter(|&l| l != k) {
                closed_form += h.get(j, k) * h.get(j, l) * mean[k] * mean[l];
            }
        }
    }
    let empirical = codebook
        .vectors()
        .iter()
        .map(|s| h.apply(s).iter().map(|r| r * r).sum::<f64>())
        .sum::<f64>()
        / codebook.len() as f64;
    Ok(ReceivedPower {
        closed_form,
        empirical,
    })
}

/// `Eb/N0 = P / (eta N0)` on a linear scale.
pub fn snr_per_bit(power: f64, eta_bpcu: f64, n0: f64) -> Result<f64> {
    if !(eta_bpcu > 0.0) {
        return Err(Error::Domain(format!("spectral efficiency {eta_bpcu} must be positive")));
    }
    if !(n0 > 0.0) {
        return Err(Error::Domain(format!("N0 = {n0} must be positive")));
    }
    Ok(power / (eta_bpcu * n0))
}

/// Noise PSD giving the requested `Eb/N0` (dB) for a signal power; with unit
/// bandwidth this is also the per-PD noise variance.
pub fn noise_psd_for(power: f64, eta_bpcu: f64, eb_n0_db: f64) -> Result<f64> {
    if !(eta_bpcu > 0.0 && power > 0.0) {
        return Err(Error::Domain(format!(
            "cannot set Eb/N0 for power {power} and eta {eta_bpcu}"
        )));
    }
    Ok(power / (eta_bpcu * from_db(eb_n0_db)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub p_elec_received: f64,
    pub p_elec_transmit: f64,
    pub eta_bpcu: f64,
    pub eb_n0_db_received: f64,
    pub eb_n0_db_transmit: f64,
}

impl PowerReport {
    pub fn new(h: &ChannelMatrix, codebook: &Codebook, n0: f64) -> Result<Self> {
        let eta = codebook.n_bits() as f64;
        let p_rx = received_electrical_power(h, codebook)?.empirical;
        let p_tx = codebook.transmit_power();
        Ok(PowerReport {
            p_elec_received: p_rx,
            p_elec_transmit: p_tx,
            eta_bpcu: eta,
            eb_n0_db_received: to_db(snr_per_bit(p_rx, eta, n0)?),
            eb_n0_db_transmit: to_db(snr_per_bit(p_tx, eta, n0)?),
        })
    }

    /// Electrical path loss in dB (transmit minus received Eb/N0).
    pub fn path_loss_db(&self) -> f64 {
        self.eb_n0_db_transmit - self.eb_n0_db_received
    }
}

pub fn pairwise_error_probability(h: &ChannelMatrix, s_i: &[f64], s_j: &[f64], sigma_n: f64) -> f64 {
    let diff: Vec<f64> = s_i.iter().zip(s_j).map(|(a, b)| a - b).collect();
    let d = h.apply(&diff).iter().map(|x| x * x).sum::<f64>().sqrt();
    q_function(d / (2.0 * sigma_n))
}

/// Union bound on the bit error probability of ML detection.
pub fn union_bound_bep(h: &ChannelMatrix, codebook: &Codebook, sigma_n: f64) -> Result<f64> {
    check_dims(h, codebook)?;
    if !(sigma_n > 0.0) {
        return Err(Error::Domain(format!("sigma_n = {sigma_n} must be positive")));
    }
    let images: Vec<Vec<f64>> = codebook.vectors().iter().map(|s| h.apply(s)).collect();
    let c = codebook.len();
    let labels = codebook.labels();
    let total = par::sum_range(c, |i| {
        (0..c)
            .filter(|&j| j != i)
            .map(|j| {
                let dh = (labels[i] ^ labels[j]).count_ones() as f64;
                dh * q_function(sq_dist(&images[i], &images[j]).sqrt() / (2.0 * sigma_n))
            })
            .sum()
    });
    Ok(total / (c as f64 * (c as f64).log2()))
}

/// Noise standard deviation at which the union bound equals `target`, found
/// by bisection on a log scale.
pub fn sigma_for_union_bound(h: &ChannelMatrix, codebook: &Codebook, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 0.5) {
        return Err(Error::Domain(format!("target bound {target} outside (0, 0.5)")));
    }
    let scale = codebook
        .vectors()
        .iter()
        .flat_map(|s| h.apply(s))
        .fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Err(Error::Domain("codebook images are all zero".into()));
    }
    let (mut lo, mut hi) = ((scale * 1e-30).ln(), (scale * 1e3).ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if union_bound_bep(h, codebook, mid.exp())? > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Closed-form second moment of every LED using the codebook's own zero
/// probabilities; used as a cross-check against [`column_moments`].
pub fn closed_form_column_moments(codebook: &Codebook) -> Result<Vec<f64>> {
    let a = codebook.alphabet();
    activation_pmf(codebook)
        .nu
        .iter()
        .map(|&nu| symbol_second_moment(nu, a.order, a.i_lower_ma, a.i_upper_ma))
        .collect()
}

fn check_dims(h: &ChannelMatrix, codebook: &Codebook) -> Result<()> {
    if h.n_t() != codebook.n_t() {
        return Err(Error::ConfigMismatch(format!(
            "channel has {} LEDs, codebook vectors have {}",
            h.n_t(),
            codebook.n_t()
        )));
    }
    Ok(())
}
