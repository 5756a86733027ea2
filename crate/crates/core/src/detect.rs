//! Joint ML detection and the linear MMSE + element-wise detector.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::codebook::{label_to_bits, sq_dist, Codebook};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Ml,
    #[default]
    Mmse,
}

/// What an MMSE decision falls back to when the element-wise result is not a
/// codeword of the selected subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairPolicy {
    /// Codeword nearest to the quantized vector.
    #[default]
    NearestToQuantized,
    /// Codeword nearest to the unquantized filter output.
    NearestToEqualized,
}

/// Second-order statistic used for the filter's signal term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RsVariant {
    /// `E[s s^T]`.
    #[default]
    Raw,
    /// `E[(s - mu)(s - mu)^T]` with the mean added back after filtering.
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub repair: RepairPolicy,
    pub rs: RsVariant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub vector_index: usize,
    pub bits: String,
    /// Filter output, MMSE path only.
    pub equalized: Option<Vec<f64>>,
    pub repaired: bool,
}

impl Decision {
    fn new(codebook: &Codebook, vector_index: usize, equalized: Option<Vec<f64>>, repaired: bool) -> Self {
        Decision {
            vector_index,
            bits: codebook.label_bits(vector_index),
            equalized,
            repaired,
        }
    }
}

/// Recovers the bit label of a decided codeword.
pub fn inverse_map(decision: &Decision, codebook: &Codebook) -> String {
    label_to_bits(codebook.label(decision.vector_index), codebook.n_bits())
}

fn check_dims(y: &[f64], h: &ChannelMatrix, codebook: &Codebook) -> Result<()> {
    if h.n_t() != codebook.n_t() || h.n_r() != y.len() {
        return Err(Error::ConfigMismatch(format!(
            "y has {} samples, H is {}x{}, codewords have {} entries",
            y.len(),
            h.n_r(),
            h.n_t(),
            codebook.n_t()
        )));
    }
    Ok(())
}

/// Exhaustive ML search with the received images `H s` cached.
#[derive(Debug, Clone)]
pub struct MlDetector<'a> {
    codebook: &'a Codebook,
    images: Vec<f64>,
    n_r: usize,
}

impl<'a> MlDetector<'a> {
    pub fn new(h: &ChannelMatrix, codebook: &'a Codebook) -> Result<Self> {
        if h.n_t() != codebook.n_t() {
            return Err(Error::ConfigMismatch("channel and codebook widths differ".into()));
        }
        let images = codebook.vectors().iter().flat_map(|s| h.apply(s)).collect();
        Ok(MlDetector {
            codebook,
            images,
            n_r: h.n_r(),
        })
    }

    /// Index of the codeword minimizing `||y - H s||`; the lowest index wins ties.
    pub fn detect_index(&self, y: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (t, image) in self.images.chunks_exact(self.n_r).enumerate() {
            let d = sq_dist(y, image);
            if d < best_d {
                best_d = d;
                best = t;
            }
        }
        best
    }

    pub fn detect(&self, y: &[f64]) -> Decision {
        Decision::new(self.codebook, self.detect_index(y), None, false)
    }
}

pub fn ml_detect(y: &[f64], h: &ChannelMatrix, codebook: &Codebook) -> Result<Decision> {
    check_dims(y, h, codebook)?;
    Ok(MlDetector::new(h, codebook)?.detect(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmseFilter {
    /// `Nt x Nr` feed-forward matrix.
    pub f: DMatrix<f64>,
    /// Signal correlation the filter was built from (mA^2).
    pub r_s: DMatrix<f64>,
    pub sigma_w2: f64,
    /// Mean added back after filtering (`Centered` only; zeros otherwise).
    pub offset: DVector<f64>,
    /// `H` times the offset, removed from `y` before filtering.
    received_offset: DVector<f64>,
}

impl MmseFilter {
    /// Filter output `F (y - H mu) + mu`.
    pub fn equalize(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y) - &self.received_offset;
        (&self.f * y + &self.offset).iter().copied().collect()
    }
}

fn signal_statistics(codebook: &Codebook, variant: RsVariant) -> (DMatrix<f64>, DVector<f64>) {
    let n_t = codebook.n_t();
    let c = codebook.len() as f64;
    let mean = match variant {
        RsVariant::Raw => DVector::zeros(n_t),
        RsVariant::Centered => {
            let mut m = DVector::zeros(n_t);
            for s in codebook.vectors() {
                m += DVector::from_column_slice(s) / c;
            }
            m
        }
    };
    let mut r = DMatrix::zeros(n_t, n_t);
    for s in codebook.vectors() {
        let v = DVector::from_column_slice(s) - &mean;
        r += &v * v.transpose() / c;
    }
    // Symmetrize away round-off.
    let r = (&r + r.transpose()) * 0.5;
    (r, mean)
}

/// Builds `F = R_s H^T (H R_s H^T + sigma^2 I)^-1`.
///
/// Evaluated through the SVD of `H R_s^(1/2)` so ill-conditioned channels do
/// not square their condition number: with `H R_s^(1/2) = U S V^T`,
/// `F = R_s^(1/2) V diag(s / (s^2 + sigma^2)) U^T`.
pub fn mmse_filter_with(
    h: &ChannelMatrix,
    codebook: &Codebook,
    sigma_n2: f64,
    variant: RsVariant,
) -> Result<MmseFilter> {
    if h.n_t() != codebook.n_t() {
        return Err(Error::ConfigMismatch("channel and codebook widths differ".into()));
    }
    if !(sigma_n2 >= 0.0 && sigma_n2.is_finite()) {
        return Err(Error::Domain(format!("noise variance {sigma_n2} must be finite and >= 0")));
    }
    let (r_s, mean) = signal_statistics(codebook, variant);

    let eig = SymmetricEigen::new(r_s.clone());
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();

    let hm = h.matrix();
    let g = hm * &root;
    let svd = g.svd(true, true);
    let u = svd.u.expect("left singular vectors");
    let v_t = svd.v_t.expect("right singular vectors");
    let s = &svd.singular_values;

    let s_max = s.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = s_max * (h.n_r().max(h.n_t()) as f64) * f64::EPSILON;
    if sigma_n2 == 0.0 && (h.n_r() > s.len() || s.iter().any(|&x| x <= tol)) {
        return Err(Error::SingularSystem(
            "H R_s H^T is rank deficient and the noise variance is zero".into(),
        ));
    }
    let gains = s.map(|x| if x > 0.0 { x / (x * x + sigma_n2) } else { 0.0 });
    let f = &root * v_t.transpose() * DMatrix::from_diagonal(&gains) * u.transpose();

    Ok(MmseFilter {
        received_offset: hm * &mean,
        f,
        r_s,
        sigma_w2: sigma_n2,
        offset: mean,
    })
}

pub fn mmse_filter(h: &ChannelMatrix, codebook: &Codebook, sigma_n2: f64) -> Result<MmseFilter> {
    mmse_filter_with(h, codebook, sigma_n2, RsVariant::Raw)
}

/// MMSE filtering followed by per-LED nearest-level decisions.
#[derive(Debug, Clone)]
pub struct MmseDetector<'a> {
    codebook: &'a Codebook,
    filter: MmseFilter,
    /// Row-major copy of `F`.
    f_rows: Vec<f64>,
    offset: Vec<f64>,
    received_offset: Vec<f64>,
    alphabet: Vec<f64>,
    /// Symbol index of `alphabet[0]` in the codebook's `[I0, levels..]` numbering.
    symbol_base: u8,
    repair: RepairPolicy,
    n_r: usize,
}

/// Reusable buffers for the allocation-free detection path.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    equalized: Vec<f64>,
    quantized: Vec<f64>,
    symbols: Vec<u8>,
}

impl<'a> MmseDetector<'a> {
    pub fn new(codebook: &'a Codebook, filter: MmseFilter, repair: RepairPolicy) -> Self {
        let (n_t, n_r) = filter.f.shape();
        let mut f_rows = Vec::with_capacity(n_t * n_r);
        for i in 0..n_t {
            for j in 0..n_r {
                f_rows.push(filter.f[(i, j)]);
            }
        }
        let scheme = codebook.scheme();
        MmseDetector {
            alphabet: codebook.alphabet().per_led_alphabet(scheme),
            symbol_base: if scheme.has_zero_level() { 0 } else { 1 },
            offset: filter.offset.iter().copied().collect(),
            received_offset: filter.received_offset.iter().copied().collect(),
            codebook,
            filter,
            f_rows,
            repair,
            n_r,
        }
    }

    pub fn filter(&self) -> &MmseFilter {
        &self.filter
    }

    /// Nearest alphabet entry; the lower level wins a tie.
    fn quantize(&self, x: f64) -> (u8, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &a) in self.alphabet.iter().enumerate() {
            let d = (x - a).abs();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        (best as u8 + self.symbol_base, self.alphabet[best])
    }

    /// `(codeword index, repaired)` without allocating once `scratch` is warm.
    pub fn detect_index(&self, y: &[f64], scratch: &mut Scratch) -> (usize, bool) {
        let n_t = self.offset.len();
        scratch.equalized.clear();
        scratch.quantized.clear();
        scratch.symbols.clear();
        for i in 0..n_t {
            let row = &self.f_rows[i * self.n_r..(i + 1) * self.n_r];
            let mut acc = self.offset[i];
            for j in 0..self.n_r {
                acc += row[j] * (y[j] - self.received_offset[j]);
            }
            let (sym, level) = self.quantize(acc);
            scratch.equalized.push(acc);
            scratch.quantized.push(level);
            scratch.symbols.push(sym);
        }
        if let Some(t) = self.codebook.index_of_symbols(&scratch.symbols) {
            return (t, false);
        }
        let target = match self.repair {
            RepairPolicy::NearestToQuantized => &scratch.quantized,
            RepairPolicy::NearestToEqualized => &scratch.equalized,
        };
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (t, s) in self.codebook.vectors().iter().enumerate() {
            let d = sq_dist(target, s);
            if d < best_d {
                best_d = d;
                best = t;
            }
        }
        (best, true)
    }

    pub fn detect(&self, y: &[f64]) -> Decision {
        let mut scratch = Scratch::default();
        let (t, repaired) = self.detect_index(y, &mut scratch);
        Decision::new(self.codebook, t, Some(scratch.equalized), repaired)
    }
}

pub fn elementwise_detect(y: &[f64], filter: &MmseFilter, codebook: &Codebook) -> Result<Decision> {
    elementwise_detect_with(y, filter, codebook, RepairPolicy::default())
}

pub fn elementwise_detect_with(
    y: &[f64],
    filter: &MmseFilter,
    codebook: &Codebook,
    repair: RepairPolicy,
) -> Result<Decision> {
    if filter.f.nrows() != codebook.n_t() || filter.f.ncols() != y.len() {
        return Err(Error::ConfigMismatch("filter, codebook and y dimensions disagree".into()));
    }
    Ok(MmseDetector::new(codebook, filter.clone(), repair).detect(y))
}

/// A ready-to-use detector for one (channel, codebook, noise) triple.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Detector<'a> {
    Ml(MlDetector<'a>),
    Mmse(MmseDetector<'a>),
}

impl<'a> Detector<'a> {
    pub fn new(spec: &DetectorSpec, h: &ChannelMatrix, codebook: &'a Codebook, sigma_n2: f64) -> Result<Self> {
        Ok(match spec.kind {
            DetectorKind::Ml => Detector::Ml(MlDetector::new(h, codebook)?),
            DetectorKind::Mmse => Detector::Mmse(MmseDetector::new(
                codebook,
                mmse_filter_with(h, codebook, sigma_n2, spec.rs)?,
                spec.repair,
            )),
        })
    }

    pub fn detect_index(&self, y: &[f64], scratch: &mut Scratch) -> (usize, bool) {
        match self {
            Detector::Ml(d) => (d.detect_index(y), false),
            Detector::Mmse(d) => d.detect_index(y, scratch),
        }
    }

    pub fn detect(&self, y: &[f64]) -> Decision {
        match self {
            Detector::Ml(d) => d.detect(y),
            Detector::Mmse(d) => d.detect(y),
        }
    }
}
