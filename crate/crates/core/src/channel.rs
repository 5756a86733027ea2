//! Line-of-sight DC gains and the resulting MIMO channel matrix.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LedElement, PdElement, Scene, Vec3};

/// Lambertian radiation order `m = -1 / log2(cos Φ½)`.
pub fn lambertian_mode(semi_angle_deg: f64) -> Result<f64> {
    if !(semi_angle_deg > 0.0 && semi_angle_deg < 90.0) {
        return Err(Error::Domain(format!(
            "semi-angle {semi_angle_deg} deg outside (0, 90)"
        )));
    }
    Ok(-1.0 / semi_angle_deg.to_radians().cos().log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambertianParams {
    pub m: f64,
    pub semi_angle_deg: f64,
}

impl LambertianParams {
    pub fn from_semi_angle(semi_angle_deg: f64) -> Result<Self> {
        Ok(LambertianParams {
            m: lambertian_mode(semi_angle_deg)?,
            semi_angle_deg,
        })
    }
}

/// DC gain of the direct path from `led` to photodiode `pd` of a UE at
/// `ue_position`.
///
/// Zero when the photodiode faces away, when the incidence angle exceeds the
/// FoV half-angle (the boundary itself is accepted), or when the photodiode
/// sits behind the LED.
pub fn los_gain(led: &LedElement, pd: &PdElement, ue_position: Vec3, m: f64) -> Result<f64> {
    let d = led.position - ue_position - pd.rel_position;
    let dist = d.norm();
    if !(dist > 0.0) {
        return Err(Error::DegenerateGeometry(
            "photodiode coincides with LED".to_string(),
        ));
    }
    let cos_incidence = pd.orientation.dot(d) / dist;
    if cos_incidence <= 0.0 {
        return Ok(0.0);
    }
    let incidence_deg = cos_incidence.min(1.0).acos().to_degrees();
    if incidence_deg > pd.fov_half_deg {
        return Ok(0.0);
    }
    let cos_emission = led.orientation.dot(-d) / dist;
    if cos_emission <= 0.0 {
        return Ok(0.0);
    }
    Ok((m + 1.0) * pd.area_cm2 / (2.0 * PI * dist * dist) * cos_emission.powf(m) * cos_incidence)
}

/// `Nr x Nt` matrix of nonnegative DC gains; row `j` is photodiode `j`,
/// column `i` is LED `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrix {
    entries: DMatrix<f64>,
}

impl ChannelMatrix {
    /// Wraps a gain matrix; every entry must be finite and within `[0, 1]`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Domain(format!("channel gain {bad} outside [0, 1]")));
        }
        Ok(ChannelMatrix { entries })
    }

    pub fn from_rows(n_r: usize, n_t: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != n_r * n_t {
            return Err(Error::ConfigMismatch(format!(
                "{} gains supplied for a {n_r}x{n_t} channel",
                rows.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n_r, n_t, rows))
    }

    pub fn identity(n: usize) -> Self {
        ChannelMatrix {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn n_t(&self) -> usize {
        self.entries.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, pd: usize, led: usize) -> f64 {
        self.entries[(pd, led)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `H s` for a transmit vector of length `Nt`.
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        debug_assert_eq!(s.len(), self.n_t());
        (0..self.n_r())
            .map(|j| (0..self.n_t()).map(|i| self.entries[(j, i)] * s[i]).sum())
            .collect()
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_r() * self.n_t());
        for j in 0..self.n_r() {
            for i in 0..self.n_t() {
                out.push(self.entries[(j, i)]);
            }
        }
        out
    }

    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.entries)
    }

    pub fn condition_number_db(&self) -> f64 {
        condition_number_db(&self.entries)
    }
}

pub fn channel_matrix(scene: &Scene) -> Result<ChannelMatrix> {
    let (n_r, n_t) = (scene.pds.len(), scene.leds.len());
    let mut entries = DMatrix::zeros(n_r, n_t);
    for (j, pd) in scene.pds.iter().enumerate() {
        for (i, led) in scene.leds.iter().enumerate() {
            entries[(j, i)] = los_gain(led, pd, scene.ue_position, scene.mode)?;
        }
    }
    ChannelMatrix::new(entries)
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// 2-norm condition number in dB, `20 log10(σmax / σmin)`. Rank-deficient
/// (or empty) matrices give `+inf` so grid sweeps can carry on.
pub fn condition_number_db(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => 20.0 * (max / min).log10(),
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_scene, ReceiverKind, SceneConfig};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn coaxial(distance: f64, m: f64) -> f64 {
        let led = LedElement::new(Vec3::new(0.0, 0.0, distance), 60.0);
        let pd = PdElement::new(Vec3::default(), 0.0, 0.0, 1.0, 85.0).unwrap();
        los_gain(&led, &pd, Vec3::default(), m).unwrap()
    }

    #[test]
    fn lambertian_mode_values() {
        assert_relative_eq!(lambertian_mode(60.0).unwrap(), 1.0, max_relative = 1e-12);
        assert_abs_diff_eq!(lambertian_mode(30.0).unwrap(), 4.818_841_679, epsilon = 1e-8);
        let near = [80.0, 85.0, 89.0, 89.9].map(|a| lambertian_mode(a).unwrap());
        assert!(near.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        assert!(lambertian_mode(0.0).is_err());
        assert!(lambertian_mode(90.0).is_err());
    }

    #[test]
    fn coaxial_gain_is_area_over_pi_d_squared() {
        assert_relative_eq!(coaxial(156.0, 1.0), 1.0 / (PI * 156.0 * 156.0), max_relative = 1e-12);
    }

    #[test]
    fn inverse_square_scaling() {
        for m in [0.5, 1.0, 3.0, 7.2] {
            let g1 = coaxial(100.0, m);
            let g3 = coaxial(300.0, m);
            assert_relative_eq!(g1 / g3, 9.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn fov_indicator_cuts_link() {
        // PD tilted so the LED arrives at 86° incidence, FoV 85°.
        let led = LedElement::new(Vec3::new(0.0, 0.0, 100.0), 60.0);
        let pd = PdElement::new(Vec3::default(), 86.0, 0.0, 1.0, 85.0).unwrap();
        assert_eq!(los_gain(&led, &pd, Vec3::default(), 1.0).unwrap(), 0.0);
        let wide = PdElement::new(Vec3::default(), 86.0, 0.0, 1.0, 87.0).unwrap();
        assert!(los_gain(&led, &wide, Vec3::default(), 1.0).unwrap() > 0.0);
    }

    #[test]
    fn pd_facing_away_gets_nothing() {
        let led = LedElement::new(Vec3::new(0.0, 0.0, 100.0), 60.0);
        let pd = PdElement::new(Vec3::default(), 180.0, 0.0, 1.0, 90.0).unwrap();
        assert_eq!(los_gain(&led, &pd, Vec3::default(), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let led = LedElement::new(Vec3::new(1.0, 2.0, 3.0), 60.0);
        let pd = PdElement::new(Vec3::default(), 0.0, 0.0, 1.0, 85.0).unwrap();
        assert!(matches!(
            los_gain(&led, &pd, Vec3::new(1.0, 2.0, 3.0), 1.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn all_links_outside_fov_give_zero_matrix() {
        let cfg = SceneConfig {
            receiver_kind: ReceiverKind::SquarePerturbed(vec![(120.0, 0.0); 4]),
            ..SceneConfig::default()
        };
        let h = channel_matrix(&build_scene(&cfg).unwrap()).unwrap();
        assert!(h.matrix().iter().all(|&v| v == 0.0));
        assert!(h.condition_number_db().is_infinite());
    }

    #[test]
    fn square_centre_is_rotation_symmetric() {
        let cfg = SceneConfig {
            receiver_kind: ReceiverKind::Square,
            ..SceneConfig::default()
        };
        let h = channel_matrix(&build_scene(&cfg).unwrap()).unwrap();
        // Row-major 2x2 layout: a 90° turn sends element k to ROT[k].
        const ROT: [usize; 4] = [1, 3, 0, 2];
        let mut rotated = DMatrix::zeros(4, 4);
        for j in 0..4 {
            for i in 0..4 {
                rotated[(ROT[j], ROT[i])] = h.get(j, i);
                assert_relative_eq!(h.get(ROT[j], ROT[i]), h.get(j, i), max_relative = 1e-12);
            }
        }
        let a = h.singular_values();
        let b = singular_values(&rotated);
        assert_relative_eq!(a[0], b[0], max_relative = 1e-12);
        assert_relative_eq!(a[1], b[1], max_relative = 1e-9);
    }

    #[test]
    fn perturbed_centre_entries_are_distinct() {
        let h = channel_matrix(&build_scene(&SceneConfig::default()).unwrap()).unwrap();
        let mut v = h.to_row_major();
        v.sort_by(f64::total_cmp);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert!(v.iter().all(|&g| g > 0.0 && g <= 1.0));
    }

    #[test]
    fn condition_numbers_of_known_matrices() {
        assert_abs_diff_eq!(condition_number_db(&DMatrix::identity(4, 4)), 0.0, epsilon = 1e-12);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![10.0, 1.0]));
        assert_abs_diff_eq!(condition_number_db(&d), 20.0, epsilon = 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(condition_number_db(&singular) > 250.0);
        assert!(condition_number_db(&DMatrix::zeros(3, 3)).is_infinite());
    }

    #[test]
    fn square_receiver_is_worse_conditioned_on_average() {
        // Coarse 10 cm / 10° grid: the perturbed receiver lowers the mean CN.
        let mean = |kind: ReceiverKind| {
            let base = SceneConfig {
                receiver_kind: kind,
                ..SceneConfig::default()
            };
            let mut acc = Vec::new();
            for r in (0..=10).map(|k| k as f64 * 10.0) {
                for w in (0..36).map(|k| (k as f64 * 10.0).to_radians()) {
                    let h = channel_matrix(&build_scene(&base.with_ue(r, w)).unwrap()).unwrap();
                    let cn = h.condition_number_db();
                    if cn.is_finite() {
                        acc.push(cn);
                    }
                }
            }
            acc.iter().sum::<f64>() / acc.len() as f64
        };
        assert!(mean(ReceiverKind::Square) > mean(ReceiverKind::reference_perturbed()));
    }

    #[test]
    fn gains_bounded_by_one_on_table_geometry() {
        let base = SceneConfig::default();
        for r in [0.0, 25.0, 50.0, 100.0] {
            for w in [0.0, 1.0, 2.0, 4.0] {
                let h = channel_matrix(&build_scene(&base.with_ue(r, w)).unwrap()).unwrap();
                assert!(h.matrix().iter().all(|&g| (0.0..=1.0).contains(&g)));
            }
        }
    }
}
