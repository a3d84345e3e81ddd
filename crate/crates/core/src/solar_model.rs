//! PVWatts-style generation model for a fixed-tilt panel.
//!
//! Three pure steps: the angle of incidence between the sun's ray and the
//! panel normal, the irradiance transmitted onto the plane of array, and the
//! AC power produced from that irradiance. All angles at the public surface
//! are in degrees.

use serde::{Deserialize, Serialize};

/// Irradiance at which the nameplate capacity is realized, W/m².
pub const REFERENCE_IRRADIANCE: f64 = 1000.0;

/// Sun position as seen from the site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarPosition {
    pub zenith_deg: f64,
    /// Clockwise from north.
    pub azimuth_deg: f64,
}

impl SolarPosition {
    pub fn is_daylight(&self) -> bool {
        self.zenith_deg < 90.0
    }
}

/// Orientation of a fixed panel: azimuth clockwise from north, tilt from horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceOrientation {
    pub azimuth_deg: f64,
    pub tilt_deg: f64,
}

impl SurfaceOrientation {
    pub fn new(azimuth_deg: f64, tilt_deg: f64) -> Self {
        Self {
            azimuth_deg,
            tilt_deg,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..360.0).contains(&self.azimuth_deg) && (0.0..=90.0).contains(&self.tilt_deg)
    }
}

/// Irradiance components incident on the tilted plane, W/m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrradianceComponents {
    pub normal: f64,
    pub sky_diffuse: f64,
    pub ground_diffuse: f64,
}

impl IrradianceComponents {
    /// Isotropic transposition of horizontal measurements onto a surface of
    /// the given tilt.
    pub fn isotropic(dni: f64, dhi: f64, ghi: f64, tilt_deg: f64, albedo: f64) -> Self {
        let cos_tilt = tilt_deg.to_radians().cos();
        Self {
            normal: dni,
            sky_diffuse: dhi * (1.0 + cos_tilt) / 2.0,
            ground_diffuse: ghi * albedo * (1.0 - cos_tilt) / 2.0,
        }
    }
}

/// Electrical parameters of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelParams {
    pub nameplate_w: f64,
    /// Fractional power change per °C, typically negative.
    pub temp_coeff_per_c: f64,
    pub ref_temp_c: f64,
    /// Lumped losses not modeled explicitly, in (0, 1].
    pub derate: f64,
}

impl Default for PanelParams {
    fn default() -> Self {
        Self {
            nameplate_w: 5000.0,
            temp_coeff_per_c: -0.0035,
            ref_temp_c: 25.0,
            derate: 0.86,
        }
    }
}

impl PanelParams {
    pub fn is_valid(&self) -> bool {
        self.nameplate_w > 0.0 && self.derate > 0.0 && self.derate <= 1.0
    }
}

/// Transmission through the panel glass as a function of incidence angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attenuation {
    /// 1 in front of the panel, 0 behind it.
    #[default]
    Step,
    /// ASHRAE incidence-angle modifier `1 - b0 (1/cos θ - 1)`, clipped to [0, 1].
    Ashrae { b0: f64 },
}

impl Attenuation {
    pub fn factor(&self, theta_deg: f64) -> f64 {
        if theta_deg >= 90.0 {
            return 0.0;
        }
        match *self {
            Attenuation::Step => 1.0,
            Attenuation::Ashrae { b0 } => {
                let cos = theta_deg.to_radians().cos();
                if cos <= 0.0 {
                    0.0
                } else {
                    (1.0 - b0 * (1.0 / cos - 1.0)).clamp(0.0, 1.0)
                }
            }
        }
    }
}

/// Angle between the sun's ray and the panel normal, degrees.
pub fn incidence_angle(sun: SolarPosition, surface: SurfaceOrientation) -> f64 {
    let zs = sun.zenith_deg.to_radians();
    let tilt = surface.tilt_deg.to_radians();
    let daz = (surface.azimuth_deg - sun.azimuth_deg).to_radians();
    let cos_theta = zs.sin() * daz.cos() * tilt.sin() + zs.cos() * tilt.cos();
    cos_theta.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Default step attenuation.
pub fn attenuation_factor(theta_deg: f64) -> f64 {
    Attenuation::Step.factor(theta_deg)
}

pub fn plane_of_array_irradiance(theta_deg: f64, irr: IrradianceComponents) -> f64 {
    plane_of_array_irradiance_with(theta_deg, irr, Attenuation::Step)
}

/// Transmitted plane-of-array irradiance. The beam term never goes negative,
/// so the result is floored at the diffuse sum.
pub fn plane_of_array_irradiance_with(
    theta_deg: f64,
    irr: IrradianceComponents,
    attenuation: Attenuation,
) -> f64 {
    let beam = attenuation.factor(theta_deg) * theta_deg.to_radians().cos() * irr.normal;
    beam.max(0.0) + irr.sky_diffuse + irr.ground_diffuse
}

/// AC output in watts; `poa` is normalized by [`REFERENCE_IRRADIANCE`].
pub fn ac_power(poa: f64, cell_temp_c: f64, params: &PanelParams) -> f64 {
    let temperature = 1.0 + params.temp_coeff_per_c * (cell_temp_c - params.ref_temp_c);
    let p = params.derate * params.nameplate_w * temperature * (poa / REFERENCE_IRRADIANCE);
    p.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sun(z: f64, a: f64) -> SolarPosition {
        SolarPosition {
            zenith_deg: z,
            azimuth_deg: a,
        }
    }

    #[test]
    fn flat_panel_sees_zenith() {
        let theta = incidence_angle(sun(30.0, 200.0), SurfaceOrientation::new(123.0, 0.0));
        assert!((theta - 30.0).abs() < 1e-9);
    }

    #[test]
    fn aligned_normal_gives_zero_incidence() {
        let theta = incidence_angle(sun(45.0, 180.0), SurfaceOrientation::new(180.0, 45.0));
        assert!(theta.abs() < 1e-6, "{theta}");
    }

    #[test]
    fn hand_evaluated_incidence() {
        // cos θ = sin60·cos90·sin30 + cos60·cos30 = 0.4330
        let theta = incidence_angle(sun(60.0, 180.0), SurfaceOrientation::new(90.0, 30.0));
        assert!((theta - 0.4330127018922193_f64.acos().to_degrees()).abs() < 1e-9);
        assert!((theta - 64.34).abs() < 0.01);
    }

    #[test]
    fn step_attenuation() {
        assert_eq!(attenuation_factor(0.0), 1.0);
        assert_eq!(attenuation_factor(45.0), 1.0);
        assert_eq!(attenuation_factor(120.0), 0.0);
        let ashrae = Attenuation::Ashrae { b0: 0.05 };
        assert_eq!(ashrae.factor(0.0), 1.0);
        assert!(ashrae.factor(60.0) < 1.0);
        assert_eq!(ashrae.factor(95.0), 0.0);
    }

    #[test]
    fn poa_examples() {
        let c = |n, s, g| IrradianceComponents {
            normal: n,
            sky_diffuse: s,
            ground_diffuse: g,
        };
        assert_eq!(plane_of_array_irradiance(30.0, c(0.0, 50.0, 10.0)), 60.0);
        assert_eq!(plane_of_array_irradiance(0.0, c(800.0, 100.0, 20.0)), 920.0);
        assert!((plane_of_array_irradiance(60.0, c(800.0, 100.0, 20.0)) - 520.0).abs() < 0.01);
        // behind the panel: diffuse only
        assert_eq!(
            plane_of_array_irradiance(120.0, c(800.0, 100.0, 20.0)),
            120.0
        );
    }

    #[test]
    fn ac_power_examples() {
        let mut p = PanelParams {
            nameplate_w: 1000.0,
            temp_coeff_per_c: -0.004,
            ref_temp_c: 25.0,
            derate: 1.0,
        };
        assert!((ac_power(800.0, 25.0, &p) - 800.0).abs() < 1e-9);
        assert_eq!(ac_power(0.0, 40.0, &p), 0.0);
        p = PanelParams {
            nameplate_w: 2000.0,
            temp_coeff_per_c: -0.005,
            ref_temp_c: 25.0,
            derate: 0.9,
        };
        assert!((ac_power(1000.0, 45.0, &p) - 1620.0).abs() < 0.01);
    }

    #[test]
    fn isotropic_transposition() {
        let flat = IrradianceComponents::isotropic(700.0, 100.0, 600.0, 0.0, 0.2);
        assert_eq!(flat.sky_diffuse, 100.0);
        assert_eq!(flat.ground_diffuse, 0.0);
        let vertical = IrradianceComponents::isotropic(700.0, 100.0, 600.0, 90.0, 0.2);
        assert!((vertical.sky_diffuse - 50.0).abs() < 1e-9);
        assert!((vertical.ground_diffuse - 60.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn tilt_zero_ignores_azimuths(z in 0.0..179.9f64, sa in 0.0..360.0f64, ga in 0.0..360.0f64) {
            let theta = incidence_angle(sun(z, sa), SurfaceOrientation::new(ga, 0.0));
            prop_assert!((theta - z).abs() < 1e-9);
        }

        #[test]
        fn symmetric_in_azimuth_offset(z in 0.0..179.9f64, sa in 0.0..360.0f64, x in 0.0..180.0f64, tilt in 0.0..=90.0f64) {
            let plus = incidence_angle(sun(z, sa), SurfaceOrientation::new(sa + x, tilt));
            let minus = incidence_angle(sun(z, sa), SurfaceOrientation::new(sa - x, tilt));
            prop_assert!((plus - minus).abs() < 1e-9);
        }

        #[test]
        fn poa_monotone_in_components(theta in 0.0..180.0f64, n in 0.0..1000.0f64, s in 0.0..300.0f64,
                                      g in 0.0..100.0f64, bump in 0.0..100.0f64) {
            let base = IrradianceComponents { normal: n, sky_diffuse: s, ground_diffuse: g };
            let i0 = plane_of_array_irradiance(theta, base);
            let bumped = IrradianceComponents { normal: n + bump, ..base };
            prop_assert!(plane_of_array_irradiance(theta, bumped) >= i0);
            let bumped = IrradianceComponents { sky_diffuse: s + bump, ..base };
            prop_assert!(plane_of_array_irradiance(theta, bumped) >= i0);
            let bumped = IrradianceComponents { ground_diffuse: g + bump, ..base };
            prop_assert!(plane_of_array_irradiance(theta, bumped) >= i0);
        }

        #[test]
        fn ac_power_linear_in_nameplate_and_derate(poa in 0.0..1200.0f64, t in -10.0..60.0f64,
                                                   cap in 100.0..10000.0f64, derate in 0.1..0.5f64) {
            let p = PanelParams { nameplate_w: cap, temp_coeff_per_c: -0.004, ref_temp_c: 25.0, derate };
            let base = ac_power(poa, t, &p);
            let doubled_cap = ac_power(poa, t, &PanelParams { nameplate_w: 2.0 * cap, ..p });
            let doubled_derate = ac_power(poa, t, &PanelParams { derate: 2.0 * derate, ..p });
            prop_assert!((doubled_cap - 2.0 * base).abs() <= 1e-9 * base.max(1.0));
            prop_assert!((doubled_derate - 2.0 * base).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn ac_power_proportional_to_poa_at_reference_temp(poa in 1.0..1200.0f64, k in 0.1..3.0f64) {
            let p = PanelParams::default();
            let a = ac_power(poa, p.ref_temp_c, &p);
            let b = ac_power(k * poa, p.ref_temp_c, &p);
            prop_assert!((b - k * a).abs() <= 1e-9 * b.max(1.0));
        }
    }
}
