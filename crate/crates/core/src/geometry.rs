//! Scene construction: a downward-facing LED luminaire above a mobile
//! receiver carrying a small photodiode array.
//!
//! All positions are in centimetres. The origin is the luminaire centre
//! projected onto the floor; `z` points up.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::channel::lambertian_mode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const UNIT_X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const UNIT_Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const UNIT_Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector along `self`; `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// Unit orientation from a polar tilt (from +z) and an azimuth (from +x),
/// both in degrees.
pub fn orientation_vector(polar_deg: f64, azimuth_deg: f64) -> Vec3 {
    let (sg, cg) = polar_deg.to_radians().sin_cos();
    let (sb, cb) = azimuth_deg.to_radians().sin_cos();
    Vec3::new(sg * cb, sg * sb, cg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdElement {
    /// Offset from the UE reference point.
    pub rel_position: Vec3,
    pub polar_deg: f64,
    pub azimuth_deg: f64,
    pub orientation: Vec3,
    pub area_cm2: f64,
    pub fov_half_deg: f64,
}

impl PdElement {
    pub fn new(
        rel_position: Vec3,
        polar_deg: f64,
        azimuth_deg: f64,
        area_cm2: f64,
        fov_half_deg: f64,
    ) -> Result<Self> {
        if !(area_cm2 > 0.0) {
            return Err(Error::Domain(format!("photodiode area {area_cm2} cm^2 must be positive")));
        }
        if !(fov_half_deg > 0.0 && fov_half_deg <= 90.0) {
            return Err(Error::Domain(format!(
                "FoV half-angle {fov_half_deg} deg outside (0, 90]"
            )));
        }
        Ok(PdElement {
            rel_position,
            polar_deg,
            azimuth_deg,
            orientation: orientation_vector(polar_deg, azimuth_deg),
            area_cm2,
            fov_half_deg,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedElement {
    pub position: Vec3,
    /// Always `-z`: the luminaire faces the floor.
    pub orientation: Vec3,
    pub semi_angle_deg: f64,
}

impl LedElement {
    pub fn new(position: Vec3, semi_angle_deg: f64) -> Self {
        LedElement {
            position,
            orientation: -Vec3::UNIT_Z,
            semi_angle_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReceiverKind {
    /// Every photodiode points straight up.
    Square,
    /// Per-photodiode `(polar, azimuth)` tilts in degrees, in photodiode order.
    SquarePerturbed(Vec<(f64, f64)>),
}

impl ReceiverKind {
    /// The fixed tilt realization used for the angle-diversity receiver.
    pub fn reference_perturbed() -> Self {
        ReceiverKind::SquarePerturbed(vec![(-5.0, 6.0), (-8.0, 1.0), (-10.0, 2.0), (15.0, 1.0)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub led_separation_cm: f64,
    pub h_lum_cm: f64,
    pub h_ue_cm: f64,
    pub pd_separation_cm: f64,
    pub receiver_kind: ReceiverKind,
    pub semi_angle_deg: f64,
    pub fov_half_deg: f64,
    pub area_cm2: f64,
    pub ue_radius_cm: f64,
    pub ue_angle_rad: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_t: 4,
            n_r: 4,
            led_separation_cm: 2.0,
            h_lum_cm: 300.0,
            h_ue_cm: 144.0,
            pd_separation_cm: 2.0,
            receiver_kind: ReceiverKind::reference_perturbed(),
            semi_angle_deg: 60.0,
            fov_half_deg: 85.0,
            area_cm2: 1.0,
            ue_radius_cm: 0.0,
            ue_angle_rad: 0.0,
        }
    }
}

impl SceneConfig {
    /// Same scene with the UE moved to polar position `(radius_cm, angle_rad)`.
    pub fn with_ue(&self, radius_cm: f64, angle_rad: f64) -> SceneConfig {
        SceneConfig {
            ue_radius_cm: radius_cm,
            ue_angle_rad: angle_rad,
            ..self.clone()
        }
    }

    pub fn lambertian_mode(&self) -> Result<f64> {
        lambertian_mode(self.semi_angle_deg)
    }

    pub fn cell_radius_cm(&self) -> Result<f64> {
        Ok(cell_radius(self.h_lum_cm, self.h_ue_cm, self.lambertian_mode()?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r == 0 {
            return Err(Error::validation("scene.n_t/n_r", "element counts must be positive"));
        }
        if !(self.h_lum_cm > self.h_ue_cm) {
            return Err(Error::validation(
                "scene.h_lum_cm",
                format!("luminaire height {} must exceed UE height {}", self.h_lum_cm, self.h_ue_cm),
            ));
        }
        if !(self.led_separation_cm >= 0.0 && self.pd_separation_cm >= 0.0) {
            return Err(Error::validation("scene.separation", "separations must be nonnegative"));
        }
        if !(0.0..2.0 * PI).contains(&self.ue_angle_rad) {
            return Err(Error::validation(
                "scene.ue_angle",
                format!("UE angle {} rad outside [0, 2pi)", self.ue_angle_rad),
            ));
        }
        let r_cell = self.cell_radius_cm()?;
        // Allow round-off when a grid lands exactly on the cell boundary.
        if !(self.ue_radius_cm >= 0.0 && self.ue_radius_cm <= r_cell * (1.0 + 1e-12)) {
            return Err(Error::validation(
                "scene.ue_radius_cm",
                format!("UE radius {} cm outside [0, {r_cell}]", self.ue_radius_cm),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub leds: Vec<LedElement>,
    pub pds: Vec<PdElement>,
    pub ue_position: Vec3,
    /// Lambertian mode number of the LEDs.
    pub mode: f64,
}

/// Offsets of `count` elements on a centred square grid with pitch `spacing`,
/// row-major with `x` varying fastest. Four elements sit at `(±s/2, ±s/2)`.
fn square_layout(count: usize, spacing: f64) -> Result<Vec<(f64, f64)>> {
    let side = (count as f64).sqrt().round() as usize;
    if side * side != count {
        return Err(Error::LayoutUnsupported { count });
    }
    let half = (side as f64 - 1.0) / 2.0;
    Ok((0..count)
        .map(|k| {
            let (row, col) = (k / side, k % side);
            ((col as f64 - half) * spacing, (row as f64 - half) * spacing)
        })
        .collect())
}

pub fn build_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;

    let tilts: Vec<(f64, f64)> = match &config.receiver_kind {
        ReceiverKind::Square => vec![(0.0, 0.0); config.n_r],
        ReceiverKind::SquarePerturbed(angles) => {
            if angles.len() != config.n_r {
                return Err(Error::AngleListMismatch {
                    expected: config.n_r,
                    got: angles.len(),
                });
            }
            angles.clone()
        }
    };

    let leds = square_layout(config.n_t, config.led_separation_cm)?
        .into_iter()
        .map(|(x, y)| LedElement::new(Vec3::new(x, y, config.h_lum_cm), config.semi_angle_deg))
        .collect();

    let pds = square_layout(config.n_r, config.pd_separation_cm)?
        .into_iter()
        .zip(tilts)
        .map(|((x, y), (polar, azimuth))| {
            PdElement::new(
                Vec3::new(x, y, 0.0),
                polar,
                azimuth,
                config.area_cm2,
                config.fov_half_deg,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let (s, c) = config.ue_angle_rad.sin_cos();
    let ue_position = Vec3::new(
        config.ue_radius_cm * c,
        config.ue_radius_cm * s,
        config.h_ue_cm,
    );

    Ok(Scene {
        leds,
        pds,
        ue_position,
        mode: config.lambertian_mode()?,
    })
}

/// Radius (cm) at which the received power from a luminaire falls to half its
/// on-axis value.
pub fn cell_radius(h_lum_cm: f64, h_ue_cm: f64, m: f64) -> f64 {
    (4f64.powf(1.0 / (m + 3.0)) - 1.0).sqrt() * (h_lum_cm - h_ue_cm)
}
