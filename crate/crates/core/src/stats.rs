//! Analytical channel statistics and their Monte-Carlo estimators.
//!
//! Analytical expressions average over the ray phases, the ray-angle law and
//! the large-scale processes. Empirical estimators average over an ensemble of
//! realizations, each with freshly drawn rays, phases and tracks, and report a
//! standard error computed from the spread of per-realization estimates.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{synthesize_links, AntennaSelection, ChannelRealization, TimeGrid, DEFAULT_MEMORY_BUDGET};
use crate::error::{Error, Result};
use crate::geometry::doppler_los;
use crate::largescale::{lognormal_acf, visibility_correlation};
use crate::rng::{substream, ENSEMBLE_STREAM_BASE};
use crate::scenario::{Scenario, TrackSampler, TrackSet};

/// Quadrature points used for expectations over the ray-angle distribution.
pub const QUADRATURE_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    Analytic,
    MonteCarlo { samples: usize },
}

/// A labelled statistic sampled on a 1-D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSeries {
    pub name: String,
    /// Grid axis name including its unit, e.g. `lag_s`.
    pub axis: String,
    pub grid: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Standard error per grid point (Monte-Carlo only).
    pub std_err: Option<Vec<f64>>,
    pub estimator: Estimator,
}

impl StatSeries {
    pub fn analytic(name: &str, axis: &str, grid: Vec<f64>, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self {
            name: name.into(),
            axis: axis.into(),
            grid,
            values,
            std_err: None,
            estimator: Estimator::Analytic,
        }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        for x in iter {
            k.add(x);
        }
        k
    }
}

fn kahan_mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.collect::<KahanSum>().value() / n as f64
}

/// Ensemble mean of complex samples with per-component standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStat {
    pub mean: Complex64,
    pub se_re: f64,
    pub se_im: f64,
    pub samples: usize,
}

impl EnsembleStat {
    /// Combined standard error of the complex mean, `sqrt(se_re^2 + se_im^2)`.
    pub fn se(&self) -> f64 {
        self.se_re.hypot(self.se_im)
    }

    /// Whether `target` lies within `k` combined standard errors of the mean.
    pub fn agrees_with(&self, target: Complex64, k: f64) -> bool {
        (self.mean - target).norm() <= k * self.se()
    }
}

pub fn ensemble(samples: &[Complex64]) -> Result<EnsembleStat> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Estimator(format!("need at least 2 samples, got {n}")));
    }
    let mre = kahan_mean(samples.iter().map(|z| z.re), n);
    let mim = kahan_mean(samples.iter().map(|z| z.im), n);
    let vre = samples.iter().map(|z| (z.re - mre).powi(2)).collect::<KahanSum>().value() / (n - 1) as f64;
    let vim = samples.iter().map(|z| (z.im - mim).powi(2)).collect::<KahanSum>().value() / (n - 1) as f64;
    Ok(EnsembleStat {
        mean: Complex64::new(mre, mim),
        se_re: (vre / n as f64).sqrt(),
        se_im: (vim / n as f64).sqrt(),
        samples: n,
    })
}

pub fn real_ensemble(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Estimator(format!("need at least 2 samples, got {n}")));
    }
    let m = kahan_mean(samples.iter().copied(), n);
    let v = samples.iter().map(|x| (x - m).powi(2)).collect::<KahanSum>().value() / (n - 1) as f64;
    Ok((m, (v / n as f64).sqrt()))
}

/// `|E[X]|` with its delta-method standard error.
pub fn modulus_with_se(samples: &[Complex64]) -> Result<(f64, f64)> {
    let st = ensemble(samples)?;
    let u = unit(st.mean);
    let proj: Vec<f64> = samples.iter().map(|z| (z * u.conj()).re).collect();
    let (_, se) = real_ensemble(&proj)?;
    Ok((st.mean.norm(), se))
}

/// `|E[X]| - |E[Y]|` for paired samples with its delta-method standard error.
pub fn modulus_difference_with_se(a: &[Complex64], b: &[Complex64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Estimator("paired samples differ in length".into()));
    }
    let sa = ensemble(a)?;
    let sb = ensemble(b)?;
    let (ua, ub) = (unit(sa.mean), unit(sb.mean));
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x * ua.conj()).re - (y * ub.conj()).re)
        .collect();
    let (_, se) = real_ensemble(&d)?;
    Ok((sa.mean.norm() - sb.mean.norm(), se))
}

fn unit(z: Complex64) -> Complex64 {
    let n = z.norm();
    if n > 0.0 {
        z / n
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// Quadrature rule for the wrapped-Gaussian ray offset distribution.
#[derive(Debug, Clone)]
pub struct RayQuadrature {
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RayQuadrature {
    pub fn new(asd: f64) -> Self {
        Self::with_points(asd, QUADRATURE_POINTS)
    }

    pub fn with_points(asd: f64, n: usize) -> Self {
        if asd <= 0.0 {
            return Self {
                offsets: vec![0.0],
                weights: vec![1.0],
            };
        }
        let half = 8.0 * asd;
        let (offsets, mut weights): (Vec<f64>, Vec<f64>) = if half < PI {
            // Gaussian support fits inside one period; wrapping is negligible
            let h = 2.0 * half / (n - 1) as f64;
            (0..n)
                .map(|i| {
                    let x = -half + i as f64 * h;
                    // trapezoid end weights
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    (x, w * (-0.5 * (x / asd).powi(2)).exp())
                })
                .unzip()
        } else {
            // periodic rectangle rule on the wrapped density
            let h = 2.0 * PI / n as f64;
            (0..n)
                .map(|i| {
                    let x = -PI + (i as f64 + 0.5) * h;
                    let w: f64 = (-4..=4)
                        .map(|k| (-0.5 * ((x + 2.0 * PI * k as f64) / asd).powi(2)).exp())
                        .sum();
                    (x, w)
                })
                .unzip()
        };
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { offsets, weights }
    }

    /// `E[f(offset)]`
    pub fn expect(&self, f: impl Fn(f64) -> Complex64) -> Complex64 {
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(&o, &w)| f(o) * w)
            .sum()
    }
}

fn check_tap(scenario: &Scenario, tap: usize) -> Result<()> {
    if tap > scenario.clusters.len() {
        return Err(Error::domain(format!(
            "tap {tap} outside 0..={}",
            scenario.clusters.len()
        )));
    }
    Ok(())
}

fn check_antennas(scenario: &Scenario, ps: &[usize], qs: &[usize]) -> Result<()> {
    let m_t = scenario.tx.num_elements;
    let m_r = scenario.rx.num_elements;
    if ps.iter().any(|&p| p == 0 || p > m_t) || qs.iter().any(|&q| q == 0 || q > m_r) {
        return Err(Error::domain("antenna index outside the arrays"));
    }
    Ok(())
}

/// Analytical time ACF `E[h(t) h*(t + dt)]` of one tap on link `(q, p)`.
pub fn acf_analytic(
    scenario: &Scenario,
    tap: usize,
    p: usize,
    q: usize,
    lags: &[f64],
) -> Result<StatSeries> {
    check_tap(scenario, tap)?;
    check_antennas(scenario, &[p], &[q])?;
    let s = scenario;
    let lam = s.wavelength;
    let values = if tap == 0 {
        let amp = s.los.shadow.second_moment() * s.los.visibility.p_visible();
        let f = doppler_los(s.los.aod, &s.tx, p, s.d_tr, &s.motion, lam)?;
        lags.iter()
            .map(|&dt| amp * Complex64::from_polar(1.0, -2.0 * PI * f * dt))
            .collect()
    } else {
        let c = &s.clusters[tap - 1];
        let amp = c.shadow.second_moment() * c.visibility.p_visible() * c.mean_power;
        let quad = RayQuadrature::new(s.ray_asd);
        let fmax = s.max_doppler();
        let center = c.placement.azimuth_rx;
        let heading = s.motion.heading;
        lags.iter()
            .map(|&dt| {
                amp * quad.expect(|o| {
                    let f = fmax * (center + o - heading).cos();
                    Complex64::from_polar(1.0, -2.0 * PI * f * dt)
                })
            })
            .collect()
    };
    Ok(StatSeries::analytic("acf", "lag_s", lags.to_vec(), values))
}

/// Phase difference `phi_qp,q'p'` (already scaled by the wavenumber) for a
/// path leaving at `aod`, arriving at `aoa`, with wavefront radius `range`.
pub fn ccf_phase(
    scenario: &Scenario,
    aod: f64,
    aoa: f64,
    range: f64,
    (p, pp): (usize, usize),
    (q, qq): (usize, usize),
) -> f64 {
    let s = scenario;
    let k = 2.0 * PI / s.wavelength;
    let dp = p as f64 - pp as f64;
    let dq = q as f64 - qq as f64;
    let m = s.tx.num_elements as f64;
    let psi = aod - s.tx.tilt;
    let dt = s.tx.spacing;
    k * (dp * dt * psi.cos()
        + dq * s.rx.spacing * (aoa - s.rx.tilt).cos()
        + dp * (p as f64 + pp as f64 - m - 1.0) * dt * dt * psi.sin().powi(2) / (2.0 * range))
}

/// Analytical spatial CCF `E[h_qp(t) h*_q'p'(t)]` of one tap at absolute time `t`.
pub fn ccf_analytic(
    scenario: &Scenario,
    tap: usize,
    (p, pp): (usize, usize),
    (q, qq): (usize, usize),
    t: f64,
) -> Result<Complex64> {
    check_tap(scenario, tap)?;
    check_antennas(scenario, &[p, pp], &[q, qq])?;
    let s = scenario;
    let lag = p as i64 - pp as i64;
    let spacing = s.tx.spacing;
    if tap == 0 {
        let los = &s.los;
        let r = lognormal_acf(lag, spacing, &los.shadow) * visibility_correlation(lag, spacing, &los.visibility);
        let phi = ccf_phase(s, los.aod, los.aoa, s.d_tr, (p, pp), (q, qq));
        let fp = doppler_los(los.aod, &s.tx, p, s.d_tr, &s.motion, s.wavelength)?;
        let fpp = doppler_los(los.aod, &s.tx, pp, s.d_tr, &s.motion, s.wavelength)?;
        Ok(r * Complex64::from_polar(1.0, -phi + 2.0 * PI * t * (fp - fpp)))
    } else {
        let c = &s.clusters[tap - 1];
        let r = lognormal_acf(lag, spacing, &c.shadow)
            * visibility_correlation(lag, spacing, &c.visibility)
            * c.mean_power;
        let quad = RayQuadrature::new(s.ray_asd);
        let range = c.placement.range;
        // AoD and AoA offsets are independent, so the expectation factorizes
        let tx_part = quad.expect(|o| {
            let phi = ccf_phase(s, c.placement.azimuth_tx + o, 0.0, range, (p, pp), (1, 1));
            Complex64::from_polar(1.0, -phi)
        });
        let rx_part = if q == qq {
            Complex64::new(1.0, 0.0)
        } else {
            quad.expect(|o| {
                let k = 2.0 * PI / s.wavelength;
                let dq = q as f64 - qq as f64;
                let phi = k * dq * s.rx.spacing * (c.placement.azimuth_rx + o - s.rx.tilt).cos();
                Complex64::from_polar(1.0, -phi)
            })
        };
        Ok(r * tx_part * rx_part)
    }
}

/// Partner antenna `spacing` elements away from `anchor`, towards the array
/// interior when `anchor + spacing` would fall off the end.
pub fn ccf_partner(anchor: usize, spacing: usize, num_elements: usize) -> usize {
    if anchor + spacing <= num_elements {
        anchor + spacing
    } else {
        anchor.saturating_sub(spacing).max(1)
    }
}

/// `CCF(anchor, partner)` against antenna spacing, with `q = q' = 1`.
pub fn ccf_curve_analytic(
    scenario: &Scenario,
    tap: usize,
    anchor: usize,
    spacings: &[usize],
    t: f64,
) -> Result<StatSeries> {
    let m = scenario.tx.num_elements;
    let values = spacings
        .iter()
        .map(|&k| ccf_analytic(scenario, tap, (anchor, ccf_partner(anchor, k, m)), (1, 1), t))
        .collect::<Result<_>>()?;
    Ok(StatSeries::analytic(
        "ccf",
        "spacing_elements",
        spacings.iter().map(|&k| k as f64).collect(),
        values,
    ))
}

/// Per-realization ACF estimate: `h(t) h*(t + lag)` averaged over the valid
/// origins `t` in `[start, start + len)`.
pub fn acf_sample(
    realization: &ChannelRealization,
    q: usize,
    p: usize,
    tap: usize,
    lags: &[usize],
    window: Option<(usize, usize)>,
) -> Result<Vec<Complex64>> {
    let h = realization
        .series(q, p, tap)
        .ok_or_else(|| Error::Estimator(format!("link ({q}, {p}) tap {tap} not in realization")))?;
    let (start, len) = window.unwrap_or((0, h.len()));
    if start + len > h.len() {
        return Err(Error::Estimator("ACF window exceeds the time grid".into()));
    }
    let h = &h[start..start + len];
    lags.iter()
        .map(|&lag| {
            if lag >= h.len() {
                return Err(Error::Estimator(format!(
                    "lag {lag} not below window length {}",
                    h.len()
                )));
            }
            let n = h.len() - lag;
            let re: KahanSum = (0..n).map(|t| (h[t] * h[t + lag].conj()).re).collect();
            let im: KahanSum = (0..n).map(|t| (h[t] * h[t + lag].conj()).im).collect();
            Ok(Complex64::new(re.value(), im.value()) / n as f64)
        })
        .collect()
}

/// Ensemble ACF estimate over `realizations`, lags in time samples.
pub fn acf_empirical(
    realizations: &[ChannelRealization],
    q: usize,
    p: usize,
    tap: usize,
    lags: &[usize],
) -> Result<StatSeries> {
    if realizations.len() < 2 {
        return Err(Error::Estimator("need at least 2 realizations".into()));
    }
    let per: Vec<Vec<Complex64>> = realizations
        .iter()
        .map(|r| acf_sample(r, q, p, tap, lags, None))
        .collect::<Result<_>>()?;
    let step = realizations[0].grid.step;
    series_from_samples("acf", "lag_s", lags.iter().map(|&l| l as f64 * step).collect(), &per)
}

/// Builds a Monte-Carlo series from per-realization sample vectors.
pub fn series_from_samples(
    name: &str,
    axis: &str,
    grid: Vec<f64>,
    per_realization: &[Vec<Complex64>],
) -> Result<StatSeries> {
    let n = per_realization.len();
    let mut values = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let col: Vec<Complex64> = per_realization.iter().map(|v| v[i]).collect();
        let st = ensemble(&col)?;
        values.push(st.mean);
        se.push(st.se());
    }
    Ok(StatSeries {
        name: name.into(),
        axis: axis.into(),
        grid,
        values,
        std_err: Some(se),
        estimator: Estimator::MonteCarlo { samples: n },
    })
}

/// Per-realization CCF sample `h_qp(t) h*_q'p'(t)` at time index `t`.
pub fn ccf_sample(
    realization: &ChannelRealization,
    tap: usize,
    (p, pp): (usize, usize),
    (q, qq): (usize, usize),
    t: usize,
) -> Result<Complex64> {
    let a = realization.gain(q, p, tap, t);
    let b = realization.gain(qq, pp, tap, t);
    match (a, b) {
        (Some(a), Some(b)) => Ok(a * b.conj()),
        _ => Err(Error::Estimator(format!(
            "links ({q}, {p}) / ({qq}, {pp}) tap {tap} time {t} not in realization"
        ))),
    }
}

/// Like [`ccf_sample`] but averaged over all time samples; valid for taps whose
/// CCF does not depend on absolute time (every cluster tap).
pub fn ccf_sample_time_averaged(
    realization: &ChannelRealization,
    tap: usize,
    pair_p: (usize, usize),
    pair_q: (usize, usize),
) -> Result<Complex64> {
    let n = realization.grid.count;
    let mut re = KahanSum::default();
    let mut im = KahanSum::default();
    for t in 0..n {
        let z = ccf_sample(realization, tap, pair_p, pair_q, t)?;
        re.add(z.re);
        im.add(z.im);
    }
    Ok(Complex64::new(re.value(), im.value()) / n as f64)
}

/// Ensemble CCF estimate at absolute time index `t`.
pub fn ccf_empirical(
    realizations: &[ChannelRealization],
    tap: usize,
    pair_p: (usize, usize),
    pair_q: (usize, usize),
    t: usize,
) -> Result<EnsembleStat> {
    let samples: Vec<Complex64> = realizations
        .iter()
        .map(|r| ccf_sample(r, tap, pair_p, pair_q, t))
        .collect::<Result<_>>()?;
    ensemble(&samples)
}

/// Total received power per BS element: LOS gain plus `P_c`-weighted cluster gains.
pub fn power_track(scenario: &Scenario, tracks: &TrackSet) -> Vec<f64> {
    (1..=scenario.tx.num_elements)
        .map(|p| los_power(tracks, p) + nlos_power(scenario, tracks, p))
        .collect()
}

fn los_power(tracks: &TrackSet, p: usize) -> f64 {
    tracks.los.gain(p)
}

fn nlos_power(scenario: &Scenario, tracks: &TrackSet, p: usize) -> f64 {
    scenario
        .clusters
        .iter()
        .zip(&tracks.clusters)
        .map(|(c, t)| c.mean_power * t.gain(p))
        .sum()
}

/// Rician K-factor value; infinite when every cluster is invisible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KFactor {
    Finite(f64),
    Infinite,
}

impl KFactor {
    pub fn db(&self) -> Option<f64> {
        match self {
            KFactor::Finite(k) => Some(10.0 * k.log10()),
            KFactor::Infinite => None,
        }
    }
}

pub fn k_factor_track(scenario: &Scenario, tracks: &TrackSet) -> Vec<KFactor> {
    (1..=scenario.tx.num_elements)
        .map(|p| {
            let nlos = nlos_power(scenario, tracks, p);
            if nlos == 0.0 {
                KFactor::Infinite
            } else {
                KFactor::Finite(los_power(tracks, p) / nlos)
            }
        })
        .collect()
}

/// Spread between the largest and smallest finite dB values of a track.
pub fn dynamic_range_db(values: &[f64]) -> f64 {
    let db: Vec<f64> = values.iter().map(|v| 10.0 * v.log10()).collect();
    let max = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = db.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Monte-Carlo driver: each run draws fresh rays, phases and tracks from its
/// own random stream and synthesizes only the selected links.
#[derive(Debug, Clone)]
pub struct Ensemble<'a> {
    pub scenario: &'a Scenario,
    pub grid: TimeGrid,
    pub selection: AntennaSelection,
    pub seed: u64,
    /// Redraw ray offsets and phases per run; when false only phases and tracks vary.
    pub redraw_rays: bool,
    sampler: TrackSampler,
}

impl<'a> Ensemble<'a> {
    pub fn new(scenario: &'a Scenario, grid: TimeGrid, selection: AntennaSelection, seed: u64) -> Result<Self> {
        Ok(Self {
            sampler: scenario.track_sampler()?,
            scenario,
            grid,
            selection,
            seed,
            redraw_rays: true,
        })
    }

    pub fn realization(&self, run: usize) -> Result<ChannelRealization> {
        let stream = ENSEMBLE_STREAM_BASE + run as u64;
        let mut rng = substream(self.seed, stream);
        let drawn = if self.redraw_rays {
            self.scenario.redraw_rays(&mut rng)
        } else {
            let mut s = self.scenario.clone();
            for c in &mut s.clusters {
                for ph in &mut c.rays.phases {
                    *ph = 2.0 * PI * rand::Rng::random::<f64>(&mut rng);
                }
            }
            s
        };
        let tracks = self.sampler.sample(&mut rng);
        let mut r = synthesize_links(&drawn, &tracks, &self.grid, &self.selection, DEFAULT_MEMORY_BUDGET)?;
        r.provenance = Some((self.seed, stream));
        Ok(r)
    }

    /// Applies `f` to `runs` realizations in parallel; results come back in run order.
    pub fn map<T, F>(&self, runs: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&ChannelRealization) -> Result<T> + Sync,
    {
        (0..runs)
            .into_par_iter()
            .map(|i| f(&self.realization(i)?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::geometry::{wrap_angle, ArraySpec, Motion, Placement};
    use crate::largescale::{LargeScaleTrack, ShadowParams, VisibilityParams};
    use crate::scenario::{build_scenario, Cluster, LosPath, Rays};
    use approx::assert_abs_diff_eq;

    fn one_cluster(range: f64, asd: f64) -> Scenario {
        let lam = 0.1153;
        let shadow = ShadowParams::new(3.0, 0.0, 0.6).unwrap();
        let vis = VisibilityParams::new(0.5, 0.5).unwrap();
        Scenario {
            wavelength: lam,
            tx: ArraySpec::new(128, lam / 2.0, PI / 2.0).unwrap(),
            rx: ArraySpec::new(4, lam / 2.0, PI / 4.0).unwrap(),
            motion: Motion::new(10.0, 1.0).unwrap(),
            d_tr: 50.0,
            ray_asd: asd,
            los: LosPath {
                aod: 0.3,
                aoa: wrap_angle(PI + 0.3),
                shadow,
                visibility: vis,
            },
            clusters: vec![Cluster {
                index: 1,
                placement: Placement::new(range, 0.6, 2.0).unwrap(),
                delay: 0.0,
                mean_power: 1.0,
                rays: Rays {
                    aods: vec![0.6; 20],
                    aoas: vec![2.0; 20],
                    phases: vec![0.0; 20],
                },
                shadow,
                visibility: vis,
            }],
        }
    }

    #[test]
    fn kahan_beats_naive_summation() {
        let xs: Vec<f64> = std::iter::once(1e16).chain(std::iter::repeat_n(1.0, 1000)).collect();
        let k: KahanSum = xs.iter().copied().collect();
        assert_eq!(k.value(), 1e16 + 1000.0);
    }

    #[test]
    fn quadrature_moments() {
        for &asd in &[0.05, PI / 12.0, 1.0, 3.0] {
            let q = RayQuadrature::new(asd);
            // E[e^{j o}] of a wrapped normal is exp(-asd^2 / 2)
            let m1 = q.expect(|o| Complex64::from_polar(1.0, o));
            assert_abs_diff_eq!(m1.re, (-0.5 * asd * asd).exp(), epsilon = 1e-9);
            assert_abs_diff_eq!(m1.im, 0.0, epsilon = 1e-12);
        }
        let degenerate = RayQuadrature::new(0.0);
        assert_eq!(degenerate.offsets, vec![0.0]);
    }

    #[test]
    fn acf_zero_lag_and_static_ms() {
        let s = one_cluster(20.0, PI / 12.0);
        let los = acf_analytic(&s, 0, 1, 1, &[0.0]).unwrap();
        let expect = s.los.shadow.second_moment() * 0.5;
        assert_abs_diff_eq!(los.values[0].re, expect, epsilon = 1e-12);
        assert_eq!(los.values[0].im, 0.0);
        let mut still = s.clone();
        still.motion = Motion::new(0.0, 1.0).unwrap();
        let a = acf_analytic(&still, 1, 5, 2, &[0.0, 0.01, 0.1, 1.0]).unwrap();
        for v in &a.values {
            assert_abs_diff_eq!(v.re, a.values[0].re, epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn acf_single_ray_is_pure_cisoid() {
        let s = one_cluster(1e6, 0.0);
        let lags: Vec<f64> = (0..20).map(|i| i as f64 * 1e-3).collect();
        let a = acf_analytic(&s, 1, 1, 1, &lags).unwrap();
        let c = &s.clusters[0];
        let mag = c.shadow.second_moment() * 0.5 * c.mean_power;
        let f = s.max_doppler() * (2.0f64 - 1.0).cos();
        for (v, &dt) in a.values.iter().zip(&lags) {
            assert_abs_diff_eq!(v.norm(), mag, epsilon = 1e-12);
            let expect = mag * Complex64::from_polar(1.0, -2.0 * PI * f * dt);
            assert_abs_diff_eq!((v - expect).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn acf_is_hermitian() {
        let s = build_scenario(&ScenarioConfig::default()).unwrap();
        for tap in [0, 1, 7] {
            let a = acf_analytic(&s, tap, 3, 2, &[0.004, -0.004]).unwrap();
            assert_abs_diff_eq!((a.values[0] - a.values[1].conj()).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ccf_zero_separation() {
        let s = one_cluster(20.0, PI / 12.0);
        let los = ccf_analytic(&s, 0, (7, 7), (2, 2), 0.37).unwrap();
        assert_abs_diff_eq!(los.re, s.los.shadow.second_moment() * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(los.im, 0.0, epsilon = 1e-12);
        let c = ccf_analytic(&s, 1, (64, 64), (1, 1), 0.0).unwrap();
        let acf0 = acf_analytic(&s, 1, 64, 1, &[0.0]).unwrap().values[0];
        assert_abs_diff_eq!(c.norm(), acf0.norm(), epsilon = 1e-12);
    }

    /// The closed-form pair phase equals the difference of the per-element
    /// wavefront phases used for synthesis.
    #[test]
    fn ccf_phase_matches_element_phases() {
        use crate::geometry::{phase_parabolic, phase_planar};
        let s = one_cluster(23.0, 0.0);
        let (aod, aoa, r) = (0.7, -2.1, 23.0);
        for &(p, pp, q, qq) in &[(1, 11, 1, 2), (64, 74, 3, 1), (128, 100, 2, 2)] {
            let phase = |p: usize, q: usize| {
                phase_planar(aod, aoa, &s.tx, &s.rx, p, q, s.wavelength).unwrap()
                    + phase_parabolic(aod, r, &s.tx, p, s.wavelength).unwrap()
            };
            let diff = phase(p, q) - phase(pp, qq);
            let closed = -ccf_phase(&s, aod, aoa, r, (p, pp), (q, qq));
            assert_abs_diff_eq!(diff, closed, epsilon = 1e-8);
        }
    }

    #[test]
    fn ccf_depends_on_anchor_for_near_cluster() {
        let s = one_cluster(20.0, PI / 12.0);
        let spacings: Vec<usize> = (1..=20).collect();
        let a = ccf_curve_analytic(&s, 1, 1, &spacings, 0.0).unwrap();
        let b = ccf_curve_analytic(&s, 1, 64, &spacings, 0.0).unwrap();
        let max_diff = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x.norm() - y.norm()).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 0.05, "{max_diff}");
        let far = one_cluster(1e6, PI / 12.0);
        let a = ccf_curve_analytic(&far, 1, 1, &spacings, 0.0).unwrap();
        let b = ccf_curve_analytic(&far, 1, 64, &spacings, 0.0).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_abs_diff_eq!(x.norm(), y.norm(), epsilon = 1e-4);
        }
    }

    #[test]
    fn partner_selection() {
        assert_eq!(ccf_partner(1, 5, 128), 6);
        assert_eq!(ccf_partner(128, 5, 128), 123);
        assert_eq!(ccf_partner(120, 10, 128), 110);
    }

    #[test]
    fn power_and_k_factor_cases() {
        let s = build_scenario(&ScenarioConfig::default()).unwrap();
        let mut tracks = TrackSet::unit(&s);
        let p = power_track(&s, &tracks);
        assert!(p.iter().all(|&x| (x - 2.0).abs() < 1e-12));
        let k = k_factor_track(&s, &tracks);
        assert!(k.iter().all(|&x| matches!(x, KFactor::Finite(v) if (v - 1.0).abs() < 1e-12)));

        tracks.los.visible[0] = false;
        for c in &mut tracks.clusters {
            c.visible[1] = false;
        }
        let k = k_factor_track(&s, &tracks);
        assert_eq!(k[0], KFactor::Finite(0.0));
        assert_eq!(k[1], KFactor::Infinite);
        assert_eq!(k[1].db(), None);
        let p = power_track(&s, &tracks);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn power_track_is_permutation_invariant() {
        let mut s = build_scenario(&ScenarioConfig::default()).unwrap();
        let mut tracks = s.draw_tracks(&mut substream(4, 1)).unwrap();
        let before = power_track(&s, &tracks);
        let kb = k_factor_track(&s, &tracks);
        s.clusters.reverse();
        tracks.clusters.reverse();
        let after = power_track(&s, &tracks);
        for (a, b) in before.iter().zip(&after) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(kb.len(), k_factor_track(&s, &tracks).len());
    }

    #[test]
    fn estimators_reject_tiny_ensembles() {
        assert!(ensemble(&[Complex64::new(1.0, 0.0)]).is_err());
        assert!(acf_empirical(&[], 1, 1, 0, &[0]).is_err());
    }

    #[test]
    fn empirical_acf_zero_lag_is_real_positive() {
        let s = one_cluster(20.0, PI / 12.0);
        let grid = TimeGrid::new(0.0, 1e-3, 32).unwrap();
        let sel = AntennaSelection { rx: vec![1], tx: vec![1] };
        let ens = Ensemble::new(&s, grid, sel, 3).unwrap();
        let reals = ens.map(50, |r| Ok(r.clone())).unwrap();
        let a = acf_empirical(&reals, 1, 1, 1, &[0, 1]).unwrap();
        assert!(a.values[0].re > 0.0);
        assert_eq!(a.values[0].im, 0.0);
        assert!(matches!(a.estimator, Estimator::MonteCarlo { samples: 50 }));
    }

    #[test]
    fn ensemble_is_thread_count_independent() {
        let s = one_cluster(20.0, PI / 12.0);
        let grid = TimeGrid::new(0.0, 1e-3, 8).unwrap();
        let sel = AntennaSelection { rx: vec![1], tx: vec![1, 2] };
        let ens = Ensemble::new(&s, grid, sel, 3).unwrap();
        let f = |r: &ChannelRealization| ccf_sample(r, 1, (1, 2), (1, 1), 0);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| ens.map(64, f)).unwrap();
        let b = four.install(|| ens.map(64, f)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ensemble(&a).unwrap(), ensemble(&b).unwrap());
    }

    #[test]
    fn dynamic_range_helper() {
        assert_abs_diff_eq!(dynamic_range_db(&[1.0, 10.0, 100.0]), 20.0, epsilon = 1e-12);
        let _ = LargeScaleTrack::unit(1);
    }
}
