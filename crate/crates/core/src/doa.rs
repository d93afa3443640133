//! Sliding-window MUSIC angle-of-departure spectrum over the BS array.
//!
//! Angles are measured from the array axis, `theta = |wrap(aod - tilt)|`, which
//! is the quantity a linear array can resolve. Each window uses plane-wave
//! steering on its own local aperture, so wavefront curvature across the full
//! array shows up as a drift of the peak from window to window.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ArraySpec};
use crate::linalg::{hermitian_eigen, CMatrix};

pub const DEFAULT_WINDOW: usize = 12;
pub const DEFAULT_GRID_STEP_DEG: f64 = 0.25;
pub const DEFAULT_SOURCE_THRESHOLD: f64 = 1e-3;
/// Diagonal loading relative to the mean eigenvalue `tr(R) / W`.
pub const DIAGONAL_LOADING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceCount {
    /// Count eigenvalues above `source_threshold` times the largest.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicConfig {
    pub window_size: usize,
    pub window_step: usize,
    /// Candidate angles from the array axis, radians, strictly increasing.
    pub angle_grid: Vec<f64>,
    pub num_sources: SourceCount,
    /// Number of leading time samples used as snapshots; all when `None`.
    pub snapshots: Option<usize>,
    pub source_threshold: f64,
    /// Element spacing in wavelengths.
    pub spacing_wavelengths: f64,
    /// Restrict to one tap instead of the composite over all taps.
    pub tap: Option<usize>,
}

impl Default for MusicConfig {
    fn default() -> Self {
        Self {
            window_size: DEFAULT_WINDOW,
            window_step: 1,
            angle_grid: uniform_grid(DEFAULT_GRID_STEP_DEG.to_radians()),
            num_sources: SourceCount::Auto,
            snapshots: None,
            source_threshold: DEFAULT_SOURCE_THRESHOLD,
            spacing_wavelengths: 0.5,
            tap: None,
        }
    }
}

impl MusicConfig {
    /// Defaults with the element spacing of `array`.
    pub fn for_array(array: &ArraySpec, wavelength: f64) -> Self {
        Self {
            spacing_wavelengths: array.spacing / wavelength,
            ..Self::default()
        }
    }

    pub fn validate(&self, num_elements: usize) -> Result<()> {
        if self.window_size < 2 || self.window_size > num_elements {
            return Err(Error::domain(format!(
                "window size {} outside 2..={num_elements}",
                self.window_size
            )));
        }
        if self.window_step == 0 {
            return Err(Error::domain("window step must be at least 1"));
        }
        if self.angle_grid.is_empty() || self.angle_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("angle grid must be non-empty and strictly increasing"));
        }
        if let SourceCount::Fixed(k) = self.num_sources {
            if k >= self.window_size {
                return Err(Error::domain(format!(
                    "{k} sources leave no noise subspace in a window of {}",
                    self.window_size
                )));
            }
        }
        if !(self.spacing_wavelengths > 0.0) || !(self.source_threshold > 0.0) {
            return Err(Error::domain("spacing and source threshold must be positive"));
        }
        Ok(())
    }

    /// First-antenna indices (1-based) of every window position.
    pub fn window_starts(&self, num_elements: usize) -> Vec<usize> {
        (1..=num_elements + 1 - self.window_size)
            .step_by(self.window_step)
            .collect()
    }
}

/// Grid `step, 2 step, ...` strictly inside `(0, pi)`.
pub fn uniform_grid(step: f64) -> Vec<f64> {
    let n = (PI / step).ceil() as usize;
    (1..n).map(|i| i as f64 * step).filter(|&a| a < PI).collect()
}

/// Angle of a departure direction measured from the array axis, in `[0, pi]`.
pub fn axis_angle(aod: f64, tilt: f64) -> f64 {
    wrap_angle(aod - tilt).abs()
}

/// Plane-wave steering vector `exp(j kappa d_i cos theta)` over a window of
/// `window` elements with local offsets `d_i = (W - 2i + 1) delta / 2`.
pub fn steering(theta: f64, window: usize, spacing_wavelengths: f64) -> Vec<Complex64> {
    let kd = 2.0 * PI * spacing_wavelengths;
    (1..=window)
        .map(|i| {
            let d = (window as f64 - 2.0 * i as f64 + 1.0) / 2.0;
            Complex64::from_polar(1.0, kd * d * theta.cos())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct WindowCovariance {
    pub matrix: CMatrix,
    pub snapshots: usize,
    /// Fewer snapshots than window elements: the estimate is rank deficient.
    pub rank_warning: bool,
}

/// Sample covariance `(1/N) sum_t x(t) x(t)^H` of per-antenna snapshot series.
pub fn sample_covariance(signals: &[&[Complex64]], snapshots: usize) -> Result<WindowCovariance> {
    let w = signals.len();
    if snapshots == 0 || signals.iter().any(|s| s.len() < snapshots) {
        return Err(Error::domain("snapshot count exceeds the available samples"));
    }
    let mut m = CMatrix::zeros(w);
    for i in 0..w {
        for j in i..w {
            let acc: Complex64 = signals[i][..snapshots]
                .iter()
                .zip(&signals[j][..snapshots])
                .map(|(a, b)| a * b.conj())
                .sum();
            let v = acc / snapshots as f64;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
    }
    Ok(WindowCovariance {
        matrix: m,
        snapshots,
        rank_warning: snapshots < w,
    })
}

fn antenna_signals(
    realization: &ChannelRealization,
    q: usize,
    antennas: impl Iterator<Item = usize>,
    tap: Option<usize>,
) -> Result<Vec<Vec<Complex64>>> {
    antennas
        .map(|p| {
            realization
                .composite(q, p, tap)
                .ok_or_else(|| Error::domain(format!("link ({q}, {p}) missing from realization")))
        })
        .collect()
}

fn snapshot_count(realization: &ChannelRealization, cfg: &MusicConfig) -> Result<usize> {
    let avail = realization.grid.count;
    match cfg.snapshots {
        Some(n) if n > avail => Err(Error::domain(format!(
            "{n} snapshots requested, {avail} time samples available"
        ))),
        Some(n) => Ok(n),
        None => Ok(avail),
    }
}

/// Covariance of the window `window_start..window_start + W` on RX antenna `q`.
pub fn window_covariance(
    realization: &ChannelRealization,
    q: usize,
    window_start: usize,
    cfg: &MusicConfig,
) -> Result<WindowCovariance> {
    if window_start == 0 {
        return Err(Error::domain("antenna indices start at 1"));
    }
    let n = snapshot_count(realization, cfg)?;
    let sig = antenna_signals(realization, q, window_start..window_start + cfg.window_size, cfg.tap)?;
    let refs: Vec<&[Complex64]> = sig.iter().map(|s| s.as_slice()).collect();
    sample_covariance(&refs, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicSpectrum {
    /// Linear pseudo-spectrum over the angle grid.
    pub power: Vec<f64>,
    pub sources: usize,
}

/// MUSIC pseudo-spectrum `1 / (a^H E_n E_n^H a)` of a Hermitian covariance.
pub fn music_spectrum(cov: &CMatrix, cfg: &MusicConfig) -> Result<MusicSpectrum> {
    let w = cov.dim();
    if let SourceCount::Fixed(k) = cfg.num_sources {
        if k >= w {
            return Err(Error::domain(format!("{k} sources need a window larger than {w}")));
        }
    }
    if cov.hermitian_defect() > 1e-9 * cov.frobenius().max(1.0) {
        return Err(Error::domain("covariance is not Hermitian"));
    }
    let mut loaded = cov.clone();
    let load = DIAGONAL_LOADING * cov.trace().re / w as f64;
    for i in 0..w {
        loaded[(i, i)] += load;
    }
    let eig = hermitian_eigen(&loaded)?;
    let sources = match cfg.num_sources {
        SourceCount::Fixed(k) => k,
        SourceCount::Auto => {
            let top = eig.values[0];
            if top > 0.0 {
                let k = eig.values.iter().filter(|&&v| v > cfg.source_threshold * top).count();
                k.min(w - 1)
            } else {
                0
            }
        }
    };
    let noise: Vec<Vec<Complex64>> = (sources..w).map(|j| eig.vectors.column(j)).collect();
    let power = cfg
        .angle_grid
        .iter()
        .map(|&theta| {
            let a = steering(theta, w, cfg.spacing_wavelengths);
            let denom: f64 = noise
                .iter()
                .map(|v| v.iter().zip(&a).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr())
                .sum();
            1.0 / denom.max(f64::MIN_POSITIVE)
        })
        .collect();
    Ok(MusicSpectrum { power, sources })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsResult {
    pub window_positions: Vec<usize>,
    /// Angles from the array axis, radians.
    pub angles: Vec<f64>,
    /// `spectrum[window][angle]` in dB relative to the global maximum.
    pub spectrum: Vec<Vec<f64>>,
    /// Signal-subspace dimension used at each window.
    pub sources: Vec<usize>,
    pub snapshots: usize,
    pub rank_warning: bool,
}

impl ApsResult {
    /// Peak angle per window; with `refine`, a parabola through the peak and
    /// its neighbours locates it between grid points.
    pub fn peak_angles(&self, refine: bool) -> Vec<f64> {
        self.spectrum
            .iter()
            .map(|row| peak_angle(&self.angles, row, refine))
            .collect()
    }
}

/// Location of the maximum of `values` over `angles`.
pub fn peak_angle(angles: &[f64], values: &[f64], refine: bool) -> f64 {
    let (i, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if !refine || i == 0 || i + 1 == values.len() {
        return angles[i];
    }
    let (l, c, r) = (values[i - 1], values[i], values[i + 1]);
    let curv = l - 2.0 * c + r;
    if curv >= 0.0 || !curv.is_finite() {
        return angles[i];
    }
    let shift = 0.5 * (l - r) / curv;
    angles[i] + shift * (angles[i + 1] - angles[i - 1]) / 2.0
}

/// Local maxima at least `floor_db` above the row minimum, sorted by angle.
pub fn local_peaks(angles: &[f64], row_db: &[f64], floor_db: f64) -> Vec<f64> {
    (1..row_db.len().saturating_sub(1))
        .filter(|&i| row_db[i] > row_db[i - 1] && row_db[i] >= row_db[i + 1] && row_db[i] > floor_db)
        .map(|i| angles[i])
        .collect()
}

/// MUSIC spectrum at every window position on RX antenna `q`, normalized so
/// that the global maximum is 0 dB.
pub fn sliding_aps(realization: &ChannelRealization, q: usize, cfg: &MusicConfig) -> Result<ApsResult> {
    let m = realization.selection.tx.iter().copied().max().unwrap_or(0);
    cfg.validate(m)?;
    let n = snapshot_count(realization, cfg)?;
    let signals = antenna_signals(realization, q, 1..=m, cfg.tap)?;
    let starts = cfg.window_starts(m);
    let spectra: Vec<MusicSpectrum> = starts
        .par_iter()
        .map(|&s| {
            let refs: Vec<&[Complex64]> = signals[s - 1..s - 1 + cfg.window_size]
                .iter()
                .map(|v| v.as_slice())
                .collect();
            let cov = sample_covariance(&refs, n)?;
            music_spectrum(&cov.matrix, cfg)
        })
        .collect::<Result<_>>()?;
    let max = spectra
        .iter()
        .flat_map(|s| s.power.iter().copied())
        .fold(f64::MIN_POSITIVE, f64::max);
    Ok(ApsResult {
        spectrum: spectra
            .iter()
            .map(|s| s.power.iter().map(|&p| 10.0 * (p / max).log10()).collect())
            .collect(),
        sources: spectra.iter().map(|s| s.sources).collect(),
        window_positions: starts,
        angles: cfg.angle_grid.clone(),
        snapshots: n,
        rank_warning: n < cfg.window_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize, TimeGrid};
    use crate::geometry::{Motion, Placement};
    use crate::largescale::{ShadowParams, VisibilityParams};
    use crate::scenario::{Cluster, LosPath, Rays, Scenario, TrackSet};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const STEP: f64 = 0.25 * PI / 180.0;

    /// Snapshots of plane waves at `angles` with distinct Doppler tones.
    fn plane_waves(angles: &[f64], w: usize, n: usize) -> Vec<Vec<Complex64>> {
        let sv: Vec<Vec<Complex64>> = angles.iter().map(|&a| steering(a, w, 0.5)).collect();
        (0..w)
            .map(|i| {
                (0..n)
                    .map(|t| {
                        sv.iter()
                            .enumerate()
                            .map(|(k, a)| a[i] * Complex64::from_polar(1.0, 0.37 * (k as f64 + 1.0) * t as f64 + k as f64))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    fn cov_of(sig: &[Vec<Complex64>]) -> WindowCovariance {
        let refs: Vec<&[Complex64]> = sig.iter().map(|v| v.as_slice()).collect();
        sample_covariance(&refs, sig[0].len()).unwrap()
    }

    #[test]
    fn grid_default() {
        let g = uniform_grid(STEP);
        assert_eq!(g.len(), 719);
        assert!(g[0] > 0.0 && *g.last().unwrap() < PI);
        assert_eq!(MusicConfig::default().window_starts(128).len(), 117);
        assert_eq!(MusicConfig::default().window_starts(12), vec![1]);
    }

    #[test]
    fn cisoid_covariance_structure() {
        let sig = plane_waves(&[0.9], 12, 1);
        let c = cov_of(&sig);
        assert!(c.rank_warning);
        assert_abs_diff_eq!(c.matrix.trace().re, 12.0, epsilon = 1e-12);
        assert!(c.matrix.hermitian_defect() < 1e-12);
        let e = hermitian_eigen(&c.matrix).unwrap();
        assert_abs_diff_eq!(e.values[0], 12.0, epsilon = 1e-9);
        assert!(e.values[1..].iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn covariance_is_psd() {
        let sig = plane_waves(&[0.5, 1.1, 2.0], 12, 40);
        let c = cov_of(&sig);
        assert!(!c.rank_warning);
        let e = hermitian_eigen(&c.matrix).unwrap();
        assert!(e.values.iter().all(|&v| v > -1e-10));
    }

    #[test]
    fn single_plane_wave_at_30_degrees() {
        let cfg = MusicConfig::default();
        let sig = plane_waves(&[30f64.to_radians()], 12, 64);
        let s = music_spectrum(&cov_of(&sig).matrix, &cfg).unwrap();
        assert_eq!(s.sources, 1);
        let peak = peak_angle(&cfg.angle_grid, &s.power, false);
        assert!((peak - 30f64.to_radians()).abs() <= STEP);
    }

    #[test]
    fn two_plane_waves() {
        let cfg = MusicConfig::default();
        let sig = plane_waves(&[40f64.to_radians(), 60f64.to_radians()], 12, 64);
        let s = music_spectrum(&cov_of(&sig).matrix, &cfg).unwrap();
        assert_eq!(s.sources, 2);
        let db: Vec<f64> = s.power.iter().map(|p| 10.0 * p.log10()).collect();
        let median = {
            let mut v = db.clone();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let peaks = local_peaks(&cfg.angle_grid, &db, median + 10.0);
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        assert!((peaks[0] - 40f64.to_radians()).abs() <= STEP);
        assert!((peaks[1] - 60f64.to_radians()).abs() <= STEP);
    }

    #[test]
    fn zero_sources_is_flat() {
        let cfg = MusicConfig {
            num_sources: SourceCount::Fixed(0),
            ..MusicConfig::default()
        };
        let sig = plane_waves(&[1.0], 12, 64);
        let s = music_spectrum(&cov_of(&sig).matrix, &cfg).unwrap();
        for p in &s.power {
            assert_abs_diff_eq!(*p, 1.0 / 12.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn too_many_sources_rejected() {
        let cfg = MusicConfig {
            num_sources: SourceCount::Fixed(12),
            ..MusicConfig::default()
        };
        let sig = plane_waves(&[1.0], 12, 64);
        assert!(matches!(music_spectrum(&cov_of(&sig).matrix, &cfg), Err(Error::Domain(_))));
        assert!(cfg.validate(128).is_err());
        assert!(MusicConfig { window_size: 1, ..MusicConfig::default() }.validate(128).is_err());
        assert!(MusicConfig { window_size: 129, ..MusicConfig::default() }.validate(128).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn spectrum_invariant_to_phase_and_scale(phase in 0.0..2.0 * PI, gain in 0.01f64..100.0) {
            let cfg = MusicConfig::default();
            let sig = plane_waves(&[0.7, 1.9], 12, 48);
            let rot = Complex64::from_polar(gain, phase);
            let scaled: Vec<Vec<Complex64>> = sig.iter().map(|v| v.iter().map(|x| x * rot).collect()).collect();
            let a = music_spectrum(&cov_of(&sig).matrix, &cfg).unwrap();
            let b = music_spectrum(&cov_of(&scaled).matrix, &cfg).unwrap();
            prop_assert_eq!(a.sources, b.sources);
            for (x, y) in a.power.iter().zip(&b.power) {
                prop_assert!(((x - y) / x).abs() < 1e-6);
            }
        }
    }

    /// One cluster whose rays share a single departure direction; distinct
    /// arrival angles give the snapshots their diversity.
    fn single_cluster(range: f64, aod: f64) -> Scenario {
        let lam = 0.1;
        let shadow = ShadowParams::new(0.0, 0.0, 0.6).unwrap();
        let vis = VisibilityParams::new(0.01, 0.5).unwrap();
        let aoas: Vec<f64> = (0..20).map(|i| -3.0 + 0.3 * i as f64).collect();
        Scenario {
            wavelength: lam,
            tx: ArraySpec::new(128, lam / 2.0, PI / 2.0).unwrap(),
            rx: ArraySpec::new(1, lam / 2.0, PI / 4.0).unwrap(),
            motion: Motion::new(10.0, 0.3).unwrap(),
            d_tr: 50.0,
            ray_asd: 0.0,
            los: LosPath {
                aod: 0.0,
                aoa: PI,
                shadow,
                visibility: vis,
            },
            clusters: vec![Cluster {
                index: 1,
                placement: Placement::new(range, aod, 1.0).unwrap(),
                delay: 0.0,
                mean_power: 1.0,
                rays: Rays {
                    aods: vec![aod; 20],
                    aoas,
                    phases: (0..20).map(|i| 0.7 * i as f64).collect(),
                },
                shadow,
                visibility: vis,
            }],
        }
    }

    fn aps_of(s: &Scenario, tracks: &TrackSet) -> ApsResult {
        aps_on(s, tracks, Some(1))
    }

    fn aps_on(s: &Scenario, tracks: &TrackSet, tap: Option<usize>) -> ApsResult {
        let grid = TimeGrid::new(0.0, 1.0 / (8.0 * s.max_doppler()), 64).unwrap();
        let r = synthesize(s, tracks, &grid).unwrap();
        let cfg = MusicConfig {
            tap,
            ..MusicConfig::for_array(&s.tx, s.wavelength)
        };
        sliding_aps(&r, 1, &cfg).unwrap()
    }

    #[test]
    fn aps_normalized_to_zero_db() {
        let s = single_cluster(1e6, 2.3);
        let aps = aps_of(&s, &TrackSet::unit(&s));
        assert_eq!(aps.window_positions.len(), 117);
        let max = aps.spectrum.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, 0.0);
        assert!(aps.spectrum.iter().flatten().all(|&v| v <= 0.0));
    }

    #[test]
    fn far_field_peak_is_constant() {
        let s = single_cluster(1e6, 2.3);
        let aps = aps_of(&s, &TrackSet::unit(&s));
        let peaks = aps.peak_angles(false);
        let truth = axis_angle(2.3, PI / 2.0);
        for p in peaks {
            assert!((p - truth).abs() <= STEP, "{p} vs {truth}");
        }
    }

    /// Local arrival direction of a parabolic wavefront at the window centre:
    /// `cos theta = cos psi - d sin^2 psi / R`.
    fn local_angle(psi: f64, d: f64, range: f64) -> f64 {
        (psi.cos() - d * psi.sin().powi(2) / range).acos()
    }

    fn slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn near_cluster_drift_follows_wavefront() {
        let aod = 2.3;
        let s = single_cluster(20.0, aod);
        let aps = aps_of(&s, &TrackSet::unit(&s));
        let peaks = aps.peak_angles(true);
        let psi = axis_angle(aod, s.tx.tilt);
        let x: Vec<f64> = aps.window_positions.iter().map(|&w| w as f64).collect();
        let oracle: Vec<f64> = aps
            .window_positions
            .iter()
            .map(|&w| {
                let centre = w as f64 + (DEFAULT_WINDOW as f64 - 1.0) / 2.0;
                let d = (128.0 - 2.0 * centre + 1.0) * s.tx.spacing / 2.0;
                local_angle(psi, d, 20.0)
            })
            .collect();
        for (p, o) in peaks.iter().zip(&oracle) {
            assert!((p - o).abs() < 2.0 * STEP, "{p} vs {o}");
        }
        let (a, b) = (slope(&x, &peaks), slope(&x, &oracle));
        assert!(a.signum() == b.signum() && ((a - b) / b).abs() < 0.05, "{a} vs {b}");
    }

    #[test]
    fn invisible_span_removes_peak() {
        let mut s = single_cluster(1e6, 2.3);
        let mut second = s.clusters[0].clone();
        second.index = 2;
        second.placement = Placement::new(1e6, 0.8, 1.0).unwrap();
        second.rays.aods = vec![0.8; 20];
        second.rays.phases.reverse();
        s.clusters.push(second);
        let mut tracks = TrackSet::unit(&s);
        tracks.los.visible.fill(false);
        for p in 40..=80 {
            tracks.clusters[1].visible[p - 1] = false;
        }
        let aps = aps_on(&s, &tracks, None);
        let target = axis_angle(0.8, PI / 2.0);
        let idx = aps
            .angles
            .iter()
            .position(|&a| (a - target).abs() <= STEP / 2.0)
            .unwrap();
        let mut hidden = f64::NEG_INFINITY;
        let mut shown = f64::INFINITY;
        for (row, &w) in aps.spectrum.iter().zip(&aps.window_positions) {
            if w >= 40 && w + DEFAULT_WINDOW - 1 <= 80 {
                hidden = hidden.max(row[idx]);
            } else if w + DEFAULT_WINDOW - 1 < 40 {
                shown = shown.min(row[idx]);
                let near = local_peaks(&aps.angles, row, f64::NEG_INFINITY);
                assert!(near.iter().any(|a| (a - target).abs() <= STEP));
            }
        }
        assert!(shown - hidden > 20.0, "visible {shown} dB, hidden {hidden} dB");
    }
}
