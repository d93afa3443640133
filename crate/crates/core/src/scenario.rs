//! Stochastic scenario generation: cluster delays, powers, positions, rays and
//! the large-scale parameters attached to every path.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{PowerMode, ScenarioConfig};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ArraySpec, Motion, Placement, SPEED_OF_LIGHT};
use crate::largescale::{
    GaussianField, LargeScaleTrack, ShadowParams, TrackGenerator, VisibilityParams,
};
use crate::rng::{substream, SCENARIO_STREAM};

/// Per-ray angles and initial phases of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rays {
    pub aods: Vec<f64>,
    pub aoas: Vec<f64>,
    pub phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// 1-based cluster index; also its tap index in a realization.
    pub index: usize,
    pub placement: Placement,
    /// Excess delay relative to the LOS arrival, seconds.
    pub delay: f64,
    /// Normalized mean power `P_c`.
    pub mean_power: f64,
    pub rays: Rays,
    pub shadow: ShadowParams,
    pub visibility: VisibilityParams,
}

impl Cluster {
    pub fn num_rays(&self) -> usize {
        self.rays.aods.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosPath {
    pub aod: f64,
    pub aoa: f64,
    pub shadow: ShadowParams,
    pub visibility: VisibilityParams,
}

/// A complete drawn scenario. Cluster geometry and ray draws live here, so
/// synthesis is a deterministic function of the scenario plus its tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub wavelength: f64,
    pub tx: ArraySpec,
    pub rx: ArraySpec,
    pub motion: Motion,
    pub d_tr: f64,
    /// Ray angular spread used when (re)drawing rays, radians.
    pub ray_asd: f64,
    pub los: LosPath,
    pub clusters: Vec<Cluster>,
}

/// Large-scale tracks of every path in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub los: LargeScaleTrack,
    pub clusters: Vec<LargeScaleTrack>,
}

impl TrackSet {
    /// Tracks with unit amplitude and full visibility everywhere.
    pub fn unit(scenario: &Scenario) -> Self {
        let m = scenario.tx.num_elements;
        Self {
            los: LargeScaleTrack::unit(m),
            clusters: vec![LargeScaleTrack::unit(m); scenario.clusters.len()],
        }
    }
}

/// Cluster power from its delay, optionally with a per-cluster shadowing draw
/// `shadow_draw_db` (0 in massive-MIMO mode).
pub fn cluster_power_winner(
    delay: f64,
    r_tau: f64,
    sigma_tau: f64,
    shadow_draw_db: f64,
) -> Result<f64> {
    if !(r_tau > 1.0) {
        return Err(Error::domain(format!("r_tau must exceed 1, got {r_tau}")));
    }
    if !(sigma_tau > 0.0) {
        return Err(Error::domain(format!("delay spread must be positive, got {sigma_tau}")));
    }
    Ok((-delay * (r_tau - 1.0) / (r_tau * sigma_tau)).exp() * 10f64.powf(-shadow_draw_db / 10.0))
}

/// Scales `powers` to unit sum.
pub fn normalize_powers(powers: &[f64]) -> Result<Vec<f64>> {
    if powers.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::domain("powers must be finite and non-negative"));
    }
    let total: f64 = powers.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("at least one power must be positive"));
    }
    Ok(powers.iter().map(|p| p / total).collect())
}

/// WINNER-style excess delays: exponential draws with mean `r_tau * sigma_tau`,
/// shifted so the smallest is zero and sorted ascending.
pub fn draw_delays<R: Rng + ?Sized>(count: usize, r_tau: f64, sigma_tau: f64, rng: &mut R) -> Vec<f64> {
    let mut raw: Vec<f64> = (0..count)
        .map(|_| {
            // (0, 1] keeps the log finite
            let u = 1.0 - rng.random::<f64>();
            -r_tau * sigma_tau * u.ln()
        })
        .collect();
    raw.sort_by(f64::total_cmp);
    let min = raw.first().copied().unwrap_or(0.0);
    raw.iter().map(|t| t - min).collect()
}

/// Half-width of the uniform window for cluster AoDs; a uniform law on
/// `[-w, w]` has standard deviation `w / sqrt(3)`, so this matches `composite_asd`.
pub fn composite_half_width(composite_asd: f64) -> f64 {
    3f64.sqrt() * composite_asd
}

pub fn draw_cluster_geometry<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Placement {
    let c = &config.clusters;
    let excess: f64 = rng.sample(Exp::new(1.0 / c.range_mean).expect("validated mean"));
    let range = c.range_min + excess;
    let w = composite_half_width(c.composite_asd);
    let aod = config.los_aod + rng.random_range(-1.0..=1.0) * w;
    // uniform on (-pi, pi]
    let aoa = PI - 2.0 * PI * rng.random::<f64>();
    Placement::new(range, aod, aoa).expect("range_min is positive")
}

/// Draws `m_c` rays around the cluster centre with wrapped-Gaussian angular
/// offsets of standard deviation `cluster_asd` and uniform phases.
pub fn draw_rays<R: Rng + ?Sized>(
    center_aod: f64,
    center_aoa: f64,
    m_c: usize,
    cluster_asd: f64,
    rng: &mut R,
) -> Result<Rays> {
    if m_c == 0 {
        return Err(Error::domain("a cluster needs at least one ray"));
    }
    let mut aods = Vec::with_capacity(m_c);
    let mut aoas = Vec::with_capacity(m_c);
    let mut phases = Vec::with_capacity(m_c);
    for _ in 0..m_c {
        let dt: f64 = rng.sample(StandardNormal);
        let dr: f64 = rng.sample(StandardNormal);
        aods.push(wrap_angle(center_aod + cluster_asd * dt));
        aoas.push(wrap_angle(center_aoa + cluster_asd * dr));
        phases.push(2.0 * PI * rng.random::<f64>());
    }
    Ok(Rays {
        aods,
        aoas,
        phases,
    })
}

/// Shadowing and visibility parameters for each cluster.
///
/// Clusters at or above the mean power `1/C` get the slow (strong) visibility
/// rates, the rest the fast (weak) ones. The area mean is `coupling * P_c` dB.
pub fn assign_large_scale_params(
    powers: &[f64],
    config: &ScenarioConfig,
) -> Result<Vec<(ShadowParams, VisibilityParams)>> {
    let l = &config.large_scale;
    if powers.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = powers.iter().sum::<f64>() / powers.len() as f64;
    let sigma_db = l.sigma_db();
    powers
        .iter()
        .map(|&p| {
            let strong = p >= threshold * (1.0 - 1e-12);
            let rate = if strong {
                l.markov_rate_strong
            } else {
                l.markov_rate_weak
            };
            Ok((
                ShadowParams::new(sigma_db, l.area_mean_coupling * p, l.shadow_decorr)?,
                VisibilityParams::new(rate, rate)?,
            ))
        })
        .collect()
}

/// Draws a complete scenario from `config`; identical configs give identical scenarios.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = substream(config.seed, SCENARIO_STREAM);
    let c = &config.clusters;

    let delays = draw_delays(c.count, c.delay_ratio, c.delay_spread, &mut rng);
    let raw: Vec<f64> = delays
        .iter()
        .map(|&tau| {
            let nu = match c.power_mode {
                PowerMode::MassiveMimo => 0.0,
                PowerMode::Winner => c.winner_shadow_std_db * rng.sample::<f64, _>(StandardNormal),
            };
            cluster_power_winner(tau, c.delay_ratio, c.delay_spread, nu)
        })
        .collect::<Result<_>>()?;
    let powers = normalize_powers(&raw)?;
    let params = assign_large_scale_params(&powers, config)?;

    let mut clusters = Vec::with_capacity(c.count);
    for (i, ((&delay, &mean_power), (shadow, visibility))) in
        delays.iter().zip(&powers).zip(params).enumerate()
    {
        let placement = draw_cluster_geometry(config, &mut rng);
        let rays = draw_rays(
            placement.azimuth_tx,
            placement.azimuth_rx,
            c.rays_per_cluster,
            c.cluster_asd,
            &mut rng,
        )?;
        clusters.push(Cluster {
            index: i + 1,
            placement,
            delay,
            mean_power,
            rays,
            shadow,
            visibility,
        });
    }

    let l = &config.large_scale;
    let los = LosPath {
        aod: wrap_angle(config.los_aod),
        aoa: wrap_angle(config.los_aoa()),
        shadow: ShadowParams::new(l.los_sigma_db(), l.los_mean_db, l.shadow_decorr)?,
        visibility: VisibilityParams::new(l.los_rate(), l.los_rate())?,
    };

    Ok(Scenario {
        wavelength: config.wavelength(),
        tx: config.tx()?,
        rx: config.rx()?,
        motion: config.motion()?,
        d_tr: config.d_tr,
        ray_asd: c.cluster_asd,
        los,
        clusters,
    })
}

impl Scenario {
    pub fn num_taps(&self) -> usize {
        self.clusters.len() + 1
    }

    pub fn max_doppler(&self) -> f64 {
        self.motion.max_doppler(self.wavelength)
    }

    pub fn los_delay(&self) -> f64 {
        self.d_tr / SPEED_OF_LIGHT
    }

    /// Absolute delay of every tap: LOS first, then clusters in index order.
    pub fn tap_delays(&self) -> Vec<f64> {
        let base = self.los_delay();
        std::iter::once(base)
            .chain(self.clusters.iter().map(|c| base + c.delay))
            .collect()
    }

    /// Copy with fresh ray offsets and phases around the same cluster centres.
    pub fn redraw_rays<R: Rng + ?Sized>(&self, rng: &mut R) -> Scenario {
        let mut out = self.clone();
        for c in &mut out.clusters {
            c.rays = draw_rays(
                c.placement.azimuth_tx,
                c.placement.azimuth_rx,
                c.num_rays(),
                self.ray_asd,
                rng,
            )
            .expect("existing clusters have rays");
        }
        out
    }

    pub fn track_sampler(&self) -> Result<TrackSampler> {
        TrackSampler::new(self)
    }

    pub fn draw_tracks<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrackSet> {
        Ok(self.track_sampler()?.sample(rng))
    }
}

/// Track generators for all paths of a scenario, sharing covariance factors
/// between paths with equal decorrelation distance.
#[derive(Debug, Clone)]
pub struct TrackSampler {
    los: TrackGenerator,
    clusters: Vec<TrackGenerator>,
}

impl TrackSampler {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let m = scenario.tx.num_elements;
        let spacing = scenario.tx.spacing;
        let mut fields: HashMap<u64, GaussianField> = HashMap::new();
        let mut make = |shadow: ShadowParams, vis: VisibilityParams| -> Result<TrackGenerator> {
            let key = shadow.decorr_distance.to_bits();
            let field = match fields.get(&key) {
                Some(f) => f.clone(),
                None => {
                    let f = GaussianField::new(m, spacing, shadow.decorr_distance)?;
                    fields.insert(key, f.clone());
                    f
                }
            };
            Ok(TrackGenerator::with_field(field, spacing, shadow, vis))
        };
        let los = make(scenario.los.shadow, scenario.los.visibility)?;
        let clusters = scenario
            .clusters
            .iter()
            .map(|c| make(c.shadow, c.visibility))
            .collect::<Result<_>>()?;
        Ok(Self { los, clusters })
    }

    /// LOS track first, then clusters in order; each path's processes are independent.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrackSet {
        let los = self.los.sample(rng);
        let clusters = self.clusters.iter().map(|g| g.sample(rng)).collect();
        TrackSet { los, clusters }
    }
}
