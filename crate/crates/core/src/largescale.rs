//! Large-scale processes along the BS array.
//!
//! Each cluster (and the LOS path) carries two independent per-antenna tracks:
//! a spatially correlated lognormal amplitude `xi` and a two-state Markov
//! visibility indicator. Both are stationary in the antenna index.

use std::f64::consts::LN_10;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// dB to natural-log (neper-like) conversion for amplitude exponents `10^(x/20)`.
pub const DB_TO_NATURAL: f64 = LN_10 / 20.0;

/// Lognormal shadowing parameters, all in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowParams {
    pub sigma_db: f64,
    pub mean_db: f64,
    /// Distance at which the underlying Gaussian ACF drops to `1/e`, metres.
    pub decorr_distance: f64,
}

impl ShadowParams {
    pub fn new(sigma_db: f64, mean_db: f64, decorr_distance: f64) -> Result<Self> {
        if !(sigma_db >= 0.0) {
            return Err(Error::domain(format!("shadow sigma must be >= 0, got {sigma_db}")));
        }
        if !(decorr_distance > 0.0) {
            return Err(Error::domain(format!(
                "decorrelation distance must be positive, got {decorr_distance}"
            )));
        }
        if !mean_db.is_finite() {
            return Err(Error::domain("area mean must be finite"));
        }
        Ok(Self {
            sigma_db,
            mean_db,
            decorr_distance,
        })
    }

    pub fn natural_sigma(&self) -> f64 {
        self.sigma_db * DB_TO_NATURAL
    }

    pub fn natural_mean(&self) -> f64 {
        self.mean_db * DB_TO_NATURAL
    }

    /// `E[xi]`
    pub fn mean_amplitude(&self) -> f64 {
        let s = self.natural_sigma();
        (self.natural_mean() + 0.5 * s * s).exp()
    }

    /// `E[xi^2]`
    pub fn second_moment(&self) -> f64 {
        let s = self.natural_sigma();
        (2.0 * self.natural_mean() + 2.0 * s * s).exp()
    }
}

/// Rates of the two-state visibility chain, per metre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityParams {
    pub rate_visible: f64,
    pub rate_invisible: f64,
}

impl VisibilityParams {
    pub fn new(rate_visible: f64, rate_invisible: f64) -> Result<Self> {
        if !(rate_visible > 0.0) || !(rate_invisible > 0.0) {
            return Err(Error::domain(format!(
                "visibility rates must be positive, got ({rate_visible}, {rate_invisible})"
            )));
        }
        Ok(Self {
            rate_visible,
            rate_invisible,
        })
    }

    pub fn total_rate(&self) -> f64 {
        self.rate_visible + self.rate_invisible
    }

    /// Stationary probability of the visible state, `lambda_v / lambda_T`.
    pub fn p_visible(&self) -> f64 {
        self.rate_visible / self.total_rate()
    }

    pub fn p_invisible(&self) -> f64 {
        self.rate_invisible / self.total_rate()
    }
}

/// Row-stochastic 2x2 transition matrix; state 0 is invisible, state 1 visible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix(pub [[f64; 2]; 2]);

impl TransitionMatrix {
    pub const INVISIBLE: usize = 0;
    pub const VISIBLE: usize = 1;

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[from][to]
    }

    pub fn mul(&self, other: &TransitionMatrix) -> TransitionMatrix {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        TransitionMatrix(out)
    }
}

/// Per-antenna large-scale factors of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleTrack {
    pub xi: Vec<f64>,
    pub visible: Vec<bool>,
}

impl LargeScaleTrack {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// `(xi_p * Pi_p)^2` at 1-based antenna `p`.
    pub fn gain(&self, p: usize) -> f64 {
        if self.visible[p - 1] {
            self.xi[p - 1] * self.xi[p - 1]
        } else {
            0.0
        }
    }

    /// `xi_p * Pi_p` at 1-based antenna `p`.
    pub fn amplitude(&self, p: usize) -> f64 {
        if self.visible[p - 1] {
            self.xi[p - 1]
        } else {
            0.0
        }
    }

    /// Unit amplitude, visible everywhere.
    pub fn unit(num_antennas: usize) -> Self {
        Self {
            xi: vec![1.0; num_antennas],
            visible: vec![true; num_antennas],
        }
    }
}

/// Gaussian-shaped spatial autocorrelation `exp(-(lag / D_c)^2)`.
pub fn gaussian_acf(lag: f64, decorr_distance: f64) -> f64 {
    let x = lag / decorr_distance;
    (-x * x).exp()
}

/// Sampler for the unit-variance Gaussian field at equally spaced antennas.
///
/// The covariance factor is computed once; every call to [`GaussianField::sample`]
/// then costs one triangular matrix-vector product.
#[derive(Debug, Clone)]
pub struct GaussianField {
    chol: Cholesky,
}

impl GaussianField {
    pub fn new(num_antennas: usize, spacing: f64, decorr_distance: f64) -> Result<Self> {
        if num_antennas == 0 {
            return Err(Error::domain("need at least one antenna"));
        }
        if !(decorr_distance > 0.0) {
            return Err(Error::domain("decorrelation distance must be positive"));
        }
        let n = num_antennas;
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let lag = spacing * (i as f64 - j as f64);
                cov[i * n + j] = gaussian_acf(lag, decorr_distance);
            }
        }
        Ok(Self {
            chol: Cholesky::with_jitter(&cov, n)?,
        })
    }

    pub fn len(&self) -> usize {
        self.chol.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn jitter(&self) -> f64 {
        self.chol.jitter
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.chol.mul_lower(&z)
    }
}

/// One draw of the correlated Gaussian field `nu_p`, `p = 1..=num_antennas`.
pub fn sample_correlated_gaussian<R: Rng + ?Sized>(
    num_antennas: usize,
    spacing: f64,
    decorr_distance: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(GaussianField::new(num_antennas, spacing, decorr_distance)?.sample(rng))
}

/// Maps a Gaussian track to amplitudes `10^((sigma nu + m) / 20)`.
pub fn lognormal_track(nu: &[f64], shadow: &ShadowParams) -> Vec<f64> {
    nu.iter()
        .map(|v| 10f64.powf((shadow.sigma_db * v + shadow.mean_db) / 20.0))
        .collect()
}

/// `E[xi_p xi_p']` for antennas `lag_antennas` apart, with the dB parameters
/// converted to the natural-log domain.
pub fn lognormal_acf(lag_antennas: i64, spacing: f64, shadow: &ShadowParams) -> f64 {
    let m = shadow.natural_mean();
    let s = shadow.natural_sigma();
    let r = gaussian_acf(lag_antennas.unsigned_abs() as f64 * spacing, shadow.decorr_distance);
    (2.0 * m + s * s * (1.0 + r)).exp()
}

/// Transition probabilities of the visibility chain over a displacement `gap`.
pub fn markov_transition(gap: f64, vis: &VisibilityParams) -> Result<TransitionMatrix> {
    if !(gap >= 0.0) {
        return Err(Error::domain(format!("gap must be >= 0, got {gap}")));
    }
    Ok(transition(gap, vis))
}

fn transition(gap: f64, vis: &VisibilityParams) -> TransitionMatrix {
    let lv = vis.rate_visible;
    let li = vis.rate_invisible;
    let lt = vis.total_rate();
    let e = (-lt * gap).exp();
    TransitionMatrix([
        [(li + lv * e) / lt, (lv - lv * e) / lt],
        [(li - li * e) / lt, (lv + li * e) / lt],
    ])
}

/// Samples the visibility chain at `num_antennas` equally spaced positions,
/// starting from the stationary distribution.
pub fn sample_visibility_track<R: Rng + ?Sized>(
    num_antennas: usize,
    spacing: f64,
    vis: &VisibilityParams,
    rng: &mut R,
) -> Vec<bool> {
    let t = transition(spacing, vis);
    let mut out = Vec::with_capacity(num_antennas);
    if num_antennas == 0 {
        return out;
    }
    let mut state = rng.random::<f64>() < vis.p_visible();
    out.push(state);
    for _ in 1..num_antennas {
        let from = if state {
            TransitionMatrix::VISIBLE
        } else {
            TransitionMatrix::INVISIBLE
        };
        state = rng.random::<f64>() < t.get(from, TransitionMatrix::VISIBLE);
        out.push(state);
    }
    out
}

/// Closed-form visibility ACF `p_v * exp(-lambda_T * spacing * |lag|)`.
///
/// This expression agrees with `E[Pi_p Pi_p']` only at zero lag; it decays to 0
/// while the chain's true second moment decays to `p_v^2`. Use
/// [`visibility_correlation`] when the exact moment of the generator is needed.
pub fn markov_acf(lag_antennas: i64, spacing: f64, vis: &VisibilityParams) -> f64 {
    let x = lag_antennas.unsigned_abs() as f64 * spacing;
    vis.p_visible() * (-vis.total_rate() * x).exp()
}

/// Exact `E[Pi_p Pi_p']` of the stationary chain, `p_v (p_v + p_i exp(-lambda_T x))`.
pub fn visibility_correlation(lag_antennas: i64, spacing: f64, vis: &VisibilityParams) -> f64 {
    let x = lag_antennas.unsigned_abs() as f64 * spacing;
    let pv = vis.p_visible();
    pv * (pv + vis.p_invisible() * (-vis.total_rate() * x).exp())
}

/// Draws complete tracks for one path; reuses the covariance factor across draws.
#[derive(Debug, Clone)]
pub struct TrackGenerator {
    field: GaussianField,
    spacing: f64,
    pub shadow: ShadowParams,
    pub visibility: VisibilityParams,
}

impl TrackGenerator {
    pub fn new(
        num_antennas: usize,
        spacing: f64,
        shadow: ShadowParams,
        visibility: VisibilityParams,
    ) -> Result<Self> {
        Ok(Self {
            field: GaussianField::new(num_antennas, spacing, shadow.decorr_distance)?,
            spacing,
            shadow,
            visibility,
        })
    }

    /// Reuses an already factored field; `field` must match the spacing and
    /// decorrelation distance of `shadow`.
    pub fn with_field(
        field: GaussianField,
        spacing: f64,
        shadow: ShadowParams,
        visibility: VisibilityParams,
    ) -> Self {
        Self {
            field,
            spacing,
            shadow,
            visibility,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LargeScaleTrack {
        let nu = self.field.sample(rng);
        let xi = lognormal_track(&nu, &self.shadow);
        let visible = sample_visibility_track(self.field.len(), self.spacing, &self.visibility, rng);
        LargeScaleTrack { xi, visible }
    }
}
