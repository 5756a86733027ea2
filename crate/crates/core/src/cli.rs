//! Command-line orchestration: TOML configuration, codebook construction,
//! subcommands and CSV/JSON artifacts.
//!
//! Units in configuration files are degrees, centimetres and milliamps.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{noise_psd_for, sigma_for_union_bound, union_bound_bep};
use crate::channel::{channel_matrix, ChannelMatrix};
use crate::codebook::{
    assign_labels, build_universe, codebook_size, optimize_design, pam_alphabet, select_subset_indices,
    spectral_efficiency, Codebook, DistanceSpace, LabelStrategy, PamAlphabet, Scheme, SeScheme, SearchParams,
    SubsetStrategy,
};
use crate::detect::{DetectorKind, DetectorSpec, RepairPolicy, RsVariant};
use crate::error::{Error, Result};
use crate::geometry::{build_scene, ReceiverKind, SceneConfig};
use crate::par::Parallelism;
use crate::sim::{run_abep, sweep_cn, validate_snr_grid, AbepCurve, CnMap, SimRun, SnrConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReceiverChoice {
    Square,
    #[default]
    SquarePerturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub n_t: usize,
    pub n_r: usize,
    pub led_spacing_cm: f64,
    pub pd_spacing_cm: f64,
    pub h_lum_cm: f64,
    pub h_ue_cm: f64,
    pub semi_angle_deg: f64,
    pub fov_half_deg: f64,
    pub pd_area_cm2: f64,
    pub receiver: ReceiverChoice,
    /// `(polar, azimuth)` tilt per photodiode, used by `square-perturbed`.
    pub perturbation_deg: Vec<(f64, f64)>,
    pub ue_radius_cm: f64,
    pub ue_angle_deg: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        let d = SceneConfig::default();
        let angles = match ReceiverKind::reference_perturbed() {
            ReceiverKind::SquarePerturbed(a) => a,
            ReceiverKind::Square => Vec::new(),
        };
        SceneSection {
            n_t: d.n_t,
            n_r: d.n_r,
            led_spacing_cm: d.led_separation_cm,
            pd_spacing_cm: d.pd_separation_cm,
            h_lum_cm: d.h_lum_cm,
            h_ue_cm: d.h_ue_cm,
            semi_angle_deg: d.semi_angle_deg,
            fov_half_deg: d.fov_half_deg,
            pd_area_cm2: d.area_cm2,
            receiver: ReceiverChoice::SquarePerturbed,
            perturbation_deg: angles,
            ue_radius_cm: d.ue_radius_cm,
            ue_angle_deg: d.ue_angle_rad.to_degrees(),
        }
    }
}

impl SceneSection {
    pub fn to_scene_config(&self) -> SceneConfig {
        SceneConfig {
            n_t: self.n_t,
            n_r: self.n_r,
            led_separation_cm: self.led_spacing_cm,
            h_lum_cm: self.h_lum_cm,
            h_ue_cm: self.h_ue_cm,
            pd_separation_cm: self.pd_spacing_cm,
            receiver_kind: match self.receiver {
                ReceiverChoice::Square => ReceiverKind::Square,
                ReceiverChoice::SquarePerturbed => ReceiverKind::SquarePerturbed(self.perturbation_deg.clone()),
            },
            semi_angle_deg: self.semi_angle_deg,
            fov_half_deg: self.fov_half_deg,
            area_cm2: self.pd_area_cm2,
            ue_radius_cm: self.ue_radius_cm,
            ue_angle_rad: self.ue_angle_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PamSection {
    pub i_lower_ma: f64,
    pub i_upper_ma: f64,
}

impl Default for PamSection {
    fn default() -> Self {
        PamSection {
            i_lower_ma: 500.0,
            i_upper_ma: 800.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetChoice {
    /// Whole universe when it has exactly `C` vectors, otherwise a max-min
    /// distance subset (received space for GSM-II, transmit space otherwise).
    #[default]
    Auto,
    All,
    MaxMinTransmit,
    MaxMinReceived,
    /// Exhaustive union-bound subset search with natural labels.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelChoice {
    /// Joint subset/label search for GSM-II; per-LED Gray where it forms a
    /// bijection; min-distance/max-Hamming otherwise.
    #[default]
    Auto,
    Natural,
    Gray,
    MinDistMaxHamming,
    MinDistMaxHammingReceived,
    /// Union-bound label search over a fixed subset.
    Search,
    /// Union-bound search over both subset and labels.
    Design,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub name: String,
    #[serde(rename = "M", alias = "m", default = "default_order")]
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_a: Option<usize>,
    #[serde(default)]
    pub subset: SubsetChoice,
    #[serde(default)]
    pub labels: LabelChoice,
    /// Pinned codebook JSON; skips construction when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<PathBuf>,
}

fn default_order() -> usize {
    2
}

impl SchemeSection {
    pub fn new(name: &str, m: usize, n_a: Option<usize>) -> Self {
        SchemeSection {
            name: name.to_string(),
            m,
            n_a,
            subset: SubsetChoice::Auto,
            labels: LabelChoice::Auto,
            codebook: None,
        }
    }

    /// Defaults for a scheme named on the command line but absent from the
    /// configuration; all of them give 4 bpcu on a 4-LED luminaire.
    pub fn default_for(name: &str, n_t: usize) -> Result<Self> {
        Ok(match canonical_scheme_name(name)? {
            "flim" => SchemeSection::new("flim", 1, None),
            "smx" => SchemeSection::new("smx", 2, None),
            "sm" => SchemeSection::new("sm", 4, None),
            _ => SchemeSection::new("gsm2", 2, Some((n_t / 2).max(1))),
        })
    }

    pub fn scheme(&self) -> Result<Scheme> {
        Ok(match canonical_scheme_name(&self.name)? {
            "flim" => Scheme::Flim,
            "smx" => Scheme::Smx,
            "sm" => Scheme::Sm,
            _ => Scheme::Gsm2 {
                n_active: self
                    .n_a
                    .ok_or_else(|| Error::validation("scheme.n_a", "gsm2 requires the number of active LEDs n_a"))?,
            },
        })
    }

    /// File-name tag such as `gsm2_na2_M2`.
    pub fn tag(&self) -> Result<String> {
        Ok(match self.scheme()? {
            Scheme::Gsm2 { n_active } => format!("gsm2_na{n_active}_M{}", self.m),
            s => format!("{}_M{}", s.name(), self.m),
        })
    }
}

fn canonical_scheme_name(name: &str) -> Result<&'static str> {
    match name.to_ascii_lowercase().as_str() {
        "flim" => Ok("flim"),
        "smx" => Ok("smx"),
        "sm" => Ok("sm"),
        "gsm2" | "gsm-ii" | "gsmii" => Ok("gsm2"),
        other => Err(Error::validation("scheme.name", format!("unknown scheme `{other}`"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DetectorArg {
    Ml,
    #[default]
    Mmse,
}

impl From<DetectorArg> for DetectorKind {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Ml => DetectorKind::Ml,
            DetectorArg::Mmse => DetectorKind::Mmse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    pub repair: RepairPolicy,
    pub rs: RsVariant,
}

impl DetectorSection {
    pub fn spec(&self) -> DetectorSpec {
        DetectorSpec {
            kind: self.kind,
            repair: self.repair,
            rs: self.rs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub seed: u64,
    pub n_symbols: u64,
    /// Eb/N0 grid in dB, strictly increasing.
    pub snr_grid_db: Vec<f64>,
    /// Bit errors after which a point stops; 0 disables early stopping.
    pub early_stop: u64,
    pub convention: SnrConvention,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            seed: 1,
            n_symbols: 1_000_000,
            snr_grid_db: (0..=40).map(|k| 180.0 + 5.0 * k as f64).collect(),
            early_stop: 200,
            convention: SnrConvention::Transmit,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    /// Moves proposed by the union-bound search.
    pub budget: usize,
    pub seed: u64,
    /// Transmit Eb/N0 (dB) the search optimizes at; absent means the point
    /// where the starting design's union bound equals `reference_bound`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_eb_n0_db: Option<f64>,
    pub reference_bound: f64,
    /// Cap on subsets visited by the exhaustive strategy.
    pub max_subsets: u64,
}

impl Default for DesignSection {
    fn default() -> Self {
        DesignSection {
            budget: 1000,
            seed: 7,
            reference_eb_n0_db: None,
            reference_bound: 1e-3,
            max_subsets: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnSection {
    pub radial_step_cm: f64,
    pub angular_step_deg: f64,
}

impl Default for CnSection {
    fn default() -> Self {
        CnSection {
            radial_step_cm: 2.5,
            angular_step_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeTableSection {
    pub n_t: Vec<usize>,
    pub schemes: Vec<String>,
    #[serde(rename = "M", alias = "m")]
    pub m: usize,
    /// Active LEDs for the subset-based schemes; absent means `n_t / 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_a: Option<usize>,
}

impl Default for SeTableSection {
    fn default() -> Self {
        SeTableSection {
            n_t: (1..=10).collect(),
            schemes: SeScheme::ALL.iter().map(|s| s.name().to_string()).collect(),
            m: 2,
            n_a: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

fn default_schemes() -> Vec<SchemeSection> {
    vec![
        SchemeSection::new("flim", 1, None),
        SchemeSection::new("gsm2", 2, Some(2)),
        SchemeSection::new("smx", 2, None),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSection,
    pub pam: PamSection,
    pub scheme: Vec<SchemeSection>,
    pub detector: DetectorSection,
    pub sim: SimSection,
    pub design: DesignSection,
    pub cn: CnSection,
    pub se_table: SeTableSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneSection::default(),
            pam: PamSection::default(),
            scheme: default_schemes(),
            detector: DetectorSection::default(),
            sim: SimSection::default(),
            design: DesignSection::default(),
            cn: CnSection::default(),
            se_table: SeTableSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    /// Cross-field checks, run before any computation.
    pub fn validate(&self) -> Result<()> {
        self.scene.to_scene_config().validate()?;
        if self.scene.receiver == ReceiverChoice::SquarePerturbed && self.scene.perturbation_deg.len() != self.scene.n_r {
            return Err(Error::validation(
                "scene.perturbation_deg",
                format!("{} angle pairs for {} photodiodes", self.scene.perturbation_deg.len(), self.scene.n_r),
            ));
        }
        if !(self.pam.i_lower_ma > 0.0 && self.pam.i_lower_ma < self.pam.i_upper_ma) {
            return Err(Error::validation("pam", "need 0 < i_lower_ma < i_upper_ma"));
        }
        for (i, s) in self.scheme.iter().enumerate() {
            let field = |f: &str| format!("scheme[{i}].{f}");
            let scheme = s.scheme().map_err(|e| match e {
                Error::Validation { message, .. } => Error::Validation {
                    field: field(if message.contains("n_a") { "n_a" } else { "name" }),
                    message,
                },
                other => other,
            })?;
            if s.m == 0 {
                return Err(Error::validation(field("M"), "PAM order must be at least 1"));
            }
            if let Scheme::Gsm2 { n_active } = scheme {
                if n_active == 0 || n_active > self.scene.n_t {
                    return Err(Error::validation(
                        field("n_a"),
                        format!("must lie in 1..={}, got {n_active}", self.scene.n_t),
                    ));
                }
            }
        }
        validate_snr_grid(&self.sim.snr_grid_db)?;
        if self.sim.n_symbols == 0 {
            return Err(Error::validation("sim.n_symbols", "must be at least 1"));
        }
        if !(self.cn.radial_step_cm > 0.0 && self.cn.angular_step_deg > 0.0) {
            return Err(Error::validation("cn", "grid steps must be positive"));
        }
        for name in &self.se_table.schemes {
            if SeScheme::parse(name).is_none() {
                return Err(Error::validation("se_table.schemes", format!("unknown scheme `{name}`")));
            }
        }
        if !(self.design.reference_bound > 0.0 && self.design.reference_bound < 1.0) {
            return Err(Error::validation("design.reference_bound", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn scene_config(&self) -> SceneConfig {
        self.scene.to_scene_config()
    }

    pub fn channel(&self) -> Result<ChannelMatrix> {
        channel_matrix(&build_scene(&self.scene_config())?)
    }

    pub fn parallelism(&self) -> Parallelism {
        Parallelism {
            threads: self.sim.threads,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a TOML configuration.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads a TOML configuration, or the configuration echoed in a run manifest
/// when the file has a `.json` extension.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        manifest.config.validate()?;
        return Ok(manifest.config);
    }
    parse_config_str(&text)
}

/// Builds the labelled codebook for one scheme on the given channel.
pub fn build_codebook(
    section: &SchemeSection,
    n_t: usize,
    pam: &PamSection,
    channel: &ChannelMatrix,
    design: &DesignSection,
) -> Result<Codebook> {
    let scheme = section.scheme()?;
    if let Some(path) = &section.codebook {
        let cb = Codebook::from_json(&fs::read_to_string(path)?)?;
        if cb.scheme() != scheme || cb.n_t() != n_t || cb.alphabet().order != section.m {
            return Err(Error::ConfigMismatch(format!(
                "codebook {} is {} with n_t = {}, M = {}; configuration asks for {} with n_t = {n_t}, M = {}",
                path.display(),
                cb.scheme(),
                cb.n_t(),
                cb.alphabet().order,
                scheme,
                section.m
            )));
        }
        return Ok(cb);
    }

    let alphabet = pam_alphabet(section.m, pam.i_lower_ma, pam.i_upper_ma)?;
    let universe = build_universe(scheme, n_t, &alphabet)?;
    let size = universe.len();
    let c = codebook_size(size);

    let subset_strategy = match section.subset {
        SubsetChoice::Auto if c == size => SubsetStrategy::All,
        SubsetChoice::Auto if matches!(scheme, Scheme::Gsm2 { .. }) => {
            SubsetStrategy::MaxMinDistance(DistanceSpace::Received(channel.clone()))
        }
        SubsetChoice::Auto | SubsetChoice::MaxMinTransmit => SubsetStrategy::MaxMinDistance(DistanceSpace::Transmit),
        SubsetChoice::All => SubsetStrategy::All,
        SubsetChoice::MaxMinReceived => SubsetStrategy::MaxMinDistance(DistanceSpace::Received(channel.clone())),
        SubsetChoice::Exhaustive => {
            // Natural labels are part of this strategy's objective; the
            // reference noise level comes from the max-min starting subset.
            let start = select_subset_indices(&universe, c, &SubsetStrategy::MaxMinDistance(DistanceSpace::Transmit))?;
            let vectors: Vec<Vec<f64>> = start.iter().map(|&i| universe[i].clone()).collect();
            let seed_cb = Codebook::new(scheme, alphabet.clone(), size, vectors, (0..c as u32).collect())?;
            SubsetStrategy::ExhaustiveUnionBound {
                channel: channel.clone(),
                sigma_n: reference_sigma(channel, &seed_cb, design)?,
                max_subsets: design.max_subsets,
            }
        }
    };
    let selected = select_subset_indices(&universe, c, &subset_strategy)?;
    let vectors: Vec<Vec<f64>> = selected.iter().map(|&i| universe[i].clone()).collect();

    let label_choice = match section.labels {
        LabelChoice::Auto if matches!(scheme, Scheme::Gsm2 { .. }) => LabelChoice::Design,
        LabelChoice::Auto if matches!(section.subset, SubsetChoice::Exhaustive) => LabelChoice::Natural,
        LabelChoice::Auto => {
            if assign_labels(&vectors, &alphabet, &LabelStrategy::GrayPerLed).is_ok() {
                LabelChoice::Gray
            } else {
                LabelChoice::MinDistMaxHamming
            }
        }
        other => other,
    };

    let start_labels = |vs: &[Vec<f64>]| assign_labels(vs, &alphabet, &LabelStrategy::MinDistMaxHamming(DistanceSpace::Transmit));
    match label_choice {
        LabelChoice::Search | LabelChoice::Design => {
            let labels = start_labels(&vectors)?;
            let start = Codebook::new(scheme, alphabet.clone(), size, vectors, labels.clone())?;
            let params = SearchParams {
                channel: channel.clone(),
                sigma_n: reference_sigma(channel, &start, design)?,
                budget: design.budget,
                seed: design.seed,
            };
            let (selected, labels) = if label_choice == LabelChoice::Design {
                optimize_design(&universe, selected, labels, &params)?
            } else {
                let labels = assign_labels(start.vectors(), &alphabet, &LabelStrategy::UnionBoundSearch(params))?;
                (selected, labels)
            };
            let vectors = selected.iter().map(|&i| universe[i].clone()).collect();
            Codebook::new(scheme, alphabet, size, vectors, labels)
        }
        other => {
            let strategy = match other {
                LabelChoice::Natural => LabelStrategy::Natural,
                LabelChoice::Gray => LabelStrategy::GrayPerLed,
                LabelChoice::MinDistMaxHammingReceived => {
                    LabelStrategy::MinDistMaxHamming(DistanceSpace::Received(channel.clone()))
                }
                _ => LabelStrategy::MinDistMaxHamming(DistanceSpace::Transmit),
            };
            let labels = assign_labels(&vectors, &alphabet, &strategy)?;
            Codebook::new(scheme, alphabet, size, vectors, labels)
        }
    }
}

/// Noise standard deviation the design objectives are evaluated at.
fn reference_sigma(channel: &ChannelMatrix, start: &Codebook, design: &DesignSection) -> Result<f64> {
    match design.reference_eb_n0_db {
        Some(db) => Ok(noise_psd_for(start.transmit_power(), start.n_bits() as f64, db)?.sqrt()),
        None => sigma_for_union_bound(channel, start, design.reference_bound),
    }
}

pub fn alphabet_for(section: &SchemeSection, pam: &PamSection) -> Result<PamAlphabet> {
    pam_alphabet(section.m, pam.i_lower_ma, pam.i_upper_ma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Monte Carlo ABEP curve per scheme.
    Abep,
    /// Condition-number map over the cell.
    CnMap,
    /// Export the designed codebooks as JSON.
    Codebook,
    /// Union bound on the ABEP per scheme.
    Bound,
    /// Spectral-efficiency table.
    SeTable,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Abep => "abep",
            Command::CnMap => "cn-map",
            Command::Codebook => "codebook",
            Command::Bound => "bound",
            Command::SeTable => "se-table",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "flim", version, about = "Optical MIMO link simulator for FLIM, SMX, SM and GSM-II")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration, or a run manifest (`.json`) to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Symbols per Eb/N0 point.
    #[arg(long, global = true)]
    pub symbols: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Restrict to these schemes (repeatable); unknown ones get defaults.
    #[arg(long = "scheme", global = true)]
    pub schemes: Vec<String>,
    #[arg(long, global = true, value_enum)]
    pub detector: Option<DetectorArg>,
}

impl Cli {
    /// Loads the configuration and applies command-line overrides.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => parse_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.sim.seed = seed;
        }
        if let Some(n) = self.symbols {
            config.sim.n_symbols = n;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        if let Some(d) = self.detector {
            config.detector.kind = d.into();
        }
        if !self.schemes.is_empty() {
            let mut chosen = Vec::with_capacity(self.schemes.len());
            for name in &self.schemes {
                let canonical = canonical_scheme_name(name)?;
                let mut found = false;
                for s in &config.scheme {
                    if canonical_scheme_name(&s.name)? == canonical && !chosen.contains(s) {
                        chosen.push(s.clone());
                        found = true;
                    }
                }
                if !found {
                    chosen.push(SchemeSection::default_for(canonical, config.scene.n_t)?);
                }
            }
            config.scheme = chosen;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookRecord {
    pub tag: String,
    pub scheme: String,
    pub n_bits: u32,
    pub sha256: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub codebooks: Vec<CodebookRecord>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct AbepRow {
    eb_n0_db: f64,
    abep: f64,
    bit_errors: u64,
    bits_sent: u64,
    repair_rate: f64,
}

#[derive(Debug, Serialize)]
struct BoundRow {
    eb_n0_db: f64,
    union_bound: f64,
}

#[derive(Debug, Serialize)]
struct CnRow {
    r_cm: f64,
    omega_deg: f64,
    cn_db: f64,
}

#[derive(Debug, Serialize)]
struct SeRow {
    scheme: &'static str,
    n_t: usize,
    n_a: Option<usize>,
    #[serde(rename = "M")]
    m: usize,
    eta_bpcu: f64,
}

#[derive(Debug, Serialize)]
struct CnSummary<'a> {
    mean_db: f64,
    std_db: f64,
    infinite_count: usize,
    points: usize,
    radial_step_cm: f64,
    angular_step_deg: f64,
    cell_radius_cm: f64,
    receiver: &'a ReceiverChoice,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn abep_csv(path: &Path, curve: &AbepCurve) -> Result<()> {
    write_csv(
        path,
        curve.points.iter().map(|p| AbepRow {
            eb_n0_db: p.eb_n0_db,
            abep: p.abep,
            bit_errors: p.bit_errors,
            bits_sent: p.bits_sent,
            repair_rate: p.repair_rate,
        }),
    )
}

pub fn cn_csv(path: &Path, map: &CnMap) -> Result<()> {
    write_csv(
        path,
        map.grid.iter().map(|p| CnRow {
            r_cm: p.r_cm,
            omega_deg: p.omega_deg,
            cn_db: p.cn_db,
        }),
    )
}

/// Files written by a command, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub manifest: Manifest,
}

/// Runs one subcommand against a validated configuration.
pub fn run_command(command: Command, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let dir = &config.output.dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut codebooks = Vec::new();
    let n_t = config.scene.n_t;

    match command {
        Command::Abep | Command::Codebook | Command::Bound => {
            let h = config.channel()?;
            for section in &config.scheme {
                let cb = build_codebook(section, n_t, &config.pam, &h, &config.design)?;
                let tag = section.tag()?;
                codebooks.push(CodebookRecord {
                    tag: tag.clone(),
                    scheme: cb.scheme().to_string(),
                    n_bits: cb.n_bits(),
                    sha256: cb.content_hash(),
                });
                match command {
                    Command::Abep => {
                        let run = SimRun {
                            seed: config.sim.seed,
                            n_symbols: config.sim.n_symbols,
                            snr_grid_db: config.sim.snr_grid_db.clone(),
                            detector: config.detector.spec(),
                            codebook: &cb,
                            channel: &h,
                            early_stop: (config.sim.early_stop > 0).then_some(config.sim.early_stop),
                            convention: config.sim.convention,
                            parallelism: config.parallelism(),
                        };
                        let curve = run_abep(&run)?;
                        let name = format!("abep_{tag}.csv");
                        abep_csv(&dir.join(&name), &curve)?;
                        files.push(name);
                    }
                    Command::Codebook => {
                        let name = format!("codebook_{tag}.json");
                        fs::write(dir.join(&name), cb.to_json()? + "\n")?;
                        files.push(name);
                    }
                    _ => {
                        let power = match config.sim.convention {
                            SnrConvention::Transmit => cb.transmit_power(),
                            SnrConvention::Received => {
                                crate::analysis::received_electrical_power(&h, &cb)?.empirical
                            }
                        };
                        let eta = cb.n_bits() as f64;
                        let rows = config
                            .sim
                            .snr_grid_db
                            .iter()
                            .map(|&db| {
                                let sigma = noise_psd_for(power, eta, db)?.sqrt();
                                Ok(BoundRow {
                                    eb_n0_db: db,
                                    union_bound: union_bound_bep(&h, &cb, sigma)?,
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let name = format!("bound_{tag}.csv");
                        write_csv(&dir.join(&name), rows)?;
                        files.push(name);
                    }
                }
            }
        }
        Command::CnMap => {
            let map = config
                .parallelism()
                .install(|| sweep_cn(&config.scene_config(), config.cn.radial_step_cm, config.cn.angular_step_deg))?;
            cn_csv(&dir.join("cn_map.csv"), &map)?;
            write_json(
                &dir.join("cn_summary.json"),
                &CnSummary {
                    mean_db: map.mean_db,
                    std_db: map.std_db,
                    infinite_count: map.infinite_count,
                    points: map.grid.len(),
                    radial_step_cm: map.radial_step_cm,
                    angular_step_deg: map.angular_step_deg,
                    cell_radius_cm: map.cell_radius_cm,
                    receiver: &config.scene.receiver,
                },
            )?;
            files.push("cn_map.csv".into());
            files.push("cn_summary.json".into());
        }
        Command::SeTable => {
            let t = &config.se_table;
            let mut rows = Vec::new();
            for name in &t.schemes {
                let scheme = SeScheme::parse(name).expect("validated scheme name");
                for &n in &t.n_t {
                    let n_a = t.n_a.unwrap_or((n / 2).max(1));
                    if scheme.uses_n_active() && n_a > n {
                        continue;
                    }
                    rows.push(SeRow {
                        scheme: scheme.name(),
                        n_t: n,
                        n_a: scheme.uses_n_active().then_some(n_a),
                        m: t.m,
                        eta_bpcu: spectral_efficiency(scheme, n, n_a, t.m)?,
                    });
                }
            }
            write_csv(&dir.join("se.csv"), rows)?;
            files.push("se.csv".into());
        }
    }

    let manifest = Manifest {
        command: command.name().to_string(),
        seed: config.sim.seed,
        config: config.clone(),
        codebooks,
        outputs: files.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    files.push("manifest.json".into());
    Ok(RunReport {
        out_dir: dir.clone(),
        files,
        manifest,
    })
}

/// Machine-readable error document printed on failure.
pub fn error_json(err: &Error) -> String {
    let mut doc = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
    });
    match err {
        Error::Parse { line, .. } => doc["line"] = (*line).into(),
        Error::Validation { field, .. } => doc["field"] = field.clone().into(),
        _ => {}
    }
    doc.to_string()
}

/// Exit status for an error: 2 for bad input, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Validation { .. } => 2,
        _ => 1,
    }
}

pub fn execute(cli: &Cli) -> Result<RunReport> {
    let config = cli.resolve_config()?;
    run_command(cli.command, &config)
}
