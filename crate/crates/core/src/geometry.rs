//! Array and propagation geometry.
//!
//! Everything here is a pure function of its arguments. Antenna indices are
//! 1-based throughout the public API: element `i` of an `M`-element array sits
//! at signed offset `(M - 2i + 1) * spacing / 2` along the array axis, so the
//! array is centred on its reference point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; keep -0.0 out of the way.
    if a == 0.0 {
        0.0
    } else {
        a
    }
}

pub fn wavelength(carrier_frequency: f64) -> f64 {
    SPEED_OF_LIGHT / carrier_frequency
}

/// Uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub num_elements: usize,
    /// Inter-element spacing in metres.
    pub spacing: f64,
    /// Axis tilt w.r.t. the x-axis, radians.
    pub tilt: f64,
}

impl ArraySpec {
    pub fn new(num_elements: usize, spacing: f64, tilt: f64) -> Result<Self> {
        if num_elements == 0 {
            return Err(Error::domain("array needs at least one element"));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::domain(format!(
                "array spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self {
            num_elements,
            spacing,
            tilt: wrap_angle(tilt),
        })
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index == 0 || index > self.num_elements {
            return Err(Error::domain(format!(
                "antenna index {index} outside 1..={}",
                self.num_elements
            )));
        }
        Ok(())
    }

    /// Signed coordinate of element `index` along the array axis.
    pub fn element_offset(&self, index: usize) -> Result<f64> {
        self.check_index(index)?;
        Ok(self.offset(index))
    }

    /// Unchecked variant for hot loops; `index` must already be valid.
    #[inline]
    pub(crate) fn offset(&self, index: usize) -> f64 {
        (self.num_elements as f64 - 2.0 * index as f64 + 1.0) * self.spacing / 2.0
    }

    /// Offsets of all elements, element 1 first.
    pub fn offsets(&self) -> Vec<f64> {
        (1..=self.num_elements).map(|i| self.offset(i)).collect()
    }

    /// Largest absolute element offset.
    pub fn half_aperture(&self) -> f64 {
        (self.num_elements as f64 - 1.0) * self.spacing / 2.0
    }
}

/// Polar position of a scatterer (or of the MS) seen from both array centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub range: f64,
    pub azimuth_tx: f64,
    pub azimuth_rx: f64,
}

impl Placement {
    pub fn new(range: f64, azimuth_tx: f64, azimuth_rx: f64) -> Result<Self> {
        if !(range > 0.0) {
            return Err(Error::domain(format!("range must be positive, got {range}")));
        }
        Ok(Self {
            range,
            azimuth_tx: wrap_angle(azimuth_tx),
            azimuth_rx: wrap_angle(azimuth_rx),
        })
    }
}

/// MS velocity in polar form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub speed: f64,
    pub heading: f64,
}

impl Motion {
    pub fn new(speed: f64, heading: f64) -> Result<Self> {
        if !(speed >= 0.0) {
            return Err(Error::domain(format!("speed must be >= 0, got {speed}")));
        }
        Ok(Self {
            speed,
            heading: wrap_angle(heading),
        })
    }

    pub fn max_doppler(&self, wavelength: f64) -> f64 {
        self.speed / wavelength
    }
}

pub fn element_offset(array: &ArraySpec, index: usize) -> Result<f64> {
    array.element_offset(index)
}

/// Exact cluster-to-element distance by the law of cosines.
pub fn distance_exact(
    cluster_range: f64,
    cluster_azimuth_tx: f64,
    array: &ArraySpec,
    p: usize,
) -> Result<f64> {
    let d = array.element_offset(p)?;
    let r = cluster_range;
    let sq = r * r + d * d - 2.0 * d * r * (cluster_azimuth_tx - array.tilt).cos();
    Ok(sq.max(0.0).sqrt())
}

/// Second-order (parabolic) approximation of [`distance_exact`].
///
/// Stays total inside the array aperture; use
/// [`parabolic_error_bound`] to judge the quality of the approximation.
pub fn distance_parabolic(
    cluster_range: f64,
    cluster_azimuth_tx: f64,
    array: &ArraySpec,
    p: usize,
) -> Result<f64> {
    let d = array.element_offset(p)?;
    let psi = cluster_azimuth_tx - array.tilt;
    let s = psi.sin();
    Ok(cluster_range - d * psi.cos() + d * d * s * s / (2.0 * cluster_range))
}

/// Third-order remainder bound `d^3 / (2 R^2)` on the parabolic distance error.
pub fn parabolic_error_bound(cluster_range: f64, array: &ArraySpec, p: usize) -> Result<f64> {
    let d = array.element_offset(p)?.abs();
    Ok(d.powi(3) / (2.0 * cluster_range * cluster_range))
}

/// Plane-wave phase difference of element pair `(p, q)` relative to the array centres.
pub fn phase_planar(
    aod: f64,
    aoa: f64,
    tx: &ArraySpec,
    rx: &ArraySpec,
    p: usize,
    q: usize,
    wavelength: f64,
) -> Result<f64> {
    let dt = tx.element_offset(p)?;
    let dr = rx.element_offset(q)?;
    Ok(planar(aod, aoa, tx, rx, dt, dr, wavelength))
}

#[inline]
pub(crate) fn planar(
    aod: f64,
    aoa: f64,
    tx: &ArraySpec,
    rx: &ArraySpec,
    dt: f64,
    dr: f64,
    wavelength: f64,
) -> f64 {
    let kappa = 2.0 * PI / wavelength;
    kappa * (dt * (aod - tx.tilt).cos() + dr * (aoa - rx.tilt).cos())
}

/// Parabolic (near-field) phase correction at BS element `p`.
///
/// For the LOS path pass `D_TR` as `cluster_range` and the LOS AoD as `aod`.
pub fn phase_parabolic(
    aod: f64,
    cluster_range: f64,
    tx: &ArraySpec,
    p: usize,
    wavelength: f64,
) -> Result<f64> {
    let dt = tx.element_offset(p)?;
    Ok(parabolic(aod, cluster_range, tx, dt, wavelength))
}

#[inline]
pub(crate) fn parabolic(aod: f64, range: f64, tx: &ArraySpec, dt: f64, wavelength: f64) -> f64 {
    let kappa = 2.0 * PI / wavelength;
    let s = (aod - tx.tilt).sin();
    -kappa * dt * dt * s * s / (2.0 * range)
}

/// Doppler shift of an NLOS ray; independent of both antenna indices.
pub fn doppler_nlos(aoa: f64, motion: &Motion, wavelength: f64) -> f64 {
    motion.max_doppler(wavelength) * (aoa - motion.heading).cos()
}

/// LOS angle of arrival seen from BS element `p`, linearised in the element offset.
pub fn los_aoa_drift(los_aod: f64, tx: &ArraySpec, p: usize, d_tr: f64) -> Result<f64> {
    if !(d_tr > 0.0) {
        return Err(Error::domain(format!("D_TR must be positive, got {d_tr}")));
    }
    let d = tx.element_offset(p)?;
    Ok(PI + los_aod + (los_aod - tx.tilt).sin() * d / d_tr)
}

/// Array-variant LOS Doppler shift at BS element `p`.
pub fn doppler_los(
    los_aod: f64,
    tx: &ArraySpec,
    p: usize,
    d_tr: f64,
    motion: &Motion,
    wavelength: f64,
) -> Result<f64> {
    let aoa = los_aoa_drift(los_aod, tx, p, d_tr)?;
    Ok(doppler_nlos(aoa, motion, wavelength))
}
