//! Channel impulse response synthesis.
//!
//! A realization is a sparse tapped delay line: tap 0 carries the LOS path,
//! tap `c` carries cluster `c`. Gains are stored with time as the fastest axis,
//! indexed `(q, p, tap, t)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{doppler_los, doppler_nlos, parabolic, planar};
use crate::largescale::LargeScaleTrack;
use crate::scenario::{Cluster, Scenario, TrackSet};

/// Default cap on a single realization tensor, bytes.
pub const DEFAULT_MEMORY_BUDGET: usize = 4 << 30;

/// Default number of time samples with a moving MS.
pub const DEFAULT_TIME_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::domain(format!("time step must be positive, got {step}")));
        }
        if count == 0 {
            return Err(Error::domain("time grid needs at least one sample"));
        }
        Ok(Self { start, step, count })
    }

    /// `samples` points at `1 / (8 f_max)`; a single sample for a static MS.
    pub fn default_for(scenario: &Scenario, samples: usize) -> Self {
        let fmax = scenario.max_doppler();
        if fmax > 0.0 {
            Self {
                start: 0.0,
                step: 1.0 / (8.0 * fmax),
                count: samples.max(1),
            }
        } else {
            Self {
                start: 0.0,
                step: 1.0,
                count: 1,
            }
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.time(i)).collect()
    }
}

/// Which antennas to synthesize; 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntennaSelection {
    pub rx: Vec<usize>,
    pub tx: Vec<usize>,
}

impl AntennaSelection {
    pub fn all(scenario: &Scenario) -> Self {
        Self {
            rx: (1..=scenario.rx.num_elements).collect(),
            tx: (1..=scenario.tx.num_elements).collect(),
        }
    }

    fn validate(&self, scenario: &Scenario) -> Result<()> {
        let bad = |v: &[usize], m: usize| v.iter().any(|&i| i == 0 || i > m);
        if self.rx.is_empty() || self.tx.is_empty() {
            return Err(Error::domain("antenna selection is empty"));
        }
        if bad(&self.rx, scenario.rx.num_elements) || bad(&self.tx, scenario.tx.num_elements) {
            return Err(Error::domain("antenna selection outside the arrays"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub selection: AntennaSelection,
    pub grid: TimeGrid,
    /// Absolute delay per tap, seconds; tap 0 is the LOS.
    pub delays: Vec<f64>,
    pub tracks: TrackSet,
    /// Seed / stream the realization was drawn from, when known.
    pub provenance: Option<(u64, u64)>,
    gains: Vec<Complex64>,
    tx_lookup: Vec<Option<usize>>,
    rx_lookup: Vec<Option<usize>>,
}

impl ChannelRealization {
    pub fn num_taps(&self) -> usize {
        self.delays.len()
    }

    /// `(rx antennas, tx antennas, taps, time samples)`
    pub fn shape(&self) -> [usize; 4] {
        [
            self.selection.rx.len(),
            self.selection.tx.len(),
            self.num_taps(),
            self.grid.count,
        ]
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    fn offset(&self, q: usize, p: usize, tap: usize) -> Option<usize> {
        let qi = (*self.rx_lookup.get(q)?)?;
        let pi = (*self.tx_lookup.get(p)?)?;
        if tap >= self.num_taps() {
            return None;
        }
        let [_, np, nc, nt] = self.shape();
        Some(((qi * np + pi) * nc + tap) * nt)
    }

    /// Time series of one tap on link `(q, p)`; `None` if the link was not synthesized.
    pub fn series(&self, q: usize, p: usize, tap: usize) -> Option<&[Complex64]> {
        let o = self.offset(q, p, tap)?;
        Some(&self.gains[o..o + self.grid.count])
    }

    pub fn gain(&self, q: usize, p: usize, tap: usize, t: usize) -> Option<Complex64> {
        self.series(q, p, tap)?.get(t).copied()
    }

    /// Sum over all taps (or the single tap `tap`) of link `(q, p)`.
    pub fn composite(&self, q: usize, p: usize, tap: Option<usize>) -> Option<Vec<Complex64>> {
        match tap {
            Some(c) => self.series(q, p, c).map(|s| s.to_vec()),
            None => {
                let mut out = vec![Complex64::new(0.0, 0.0); self.grid.count];
                for c in 0..self.num_taps() {
                    for (o, g) in out.iter_mut().zip(self.series(q, p, c)?) {
                        *o += g;
                    }
                }
                Some(out)
            }
        }
    }

    /// Resamples the sparse taps onto a uniform delay grid with step `delay_step`,
    /// assigning each tap to its nearest bin (bins start at delay 0). Taps landing
    /// in the same bin add up. Returns bin delays and a `(q, p, bin, t)` tensor.
    pub fn to_delay_grid(&self, delay_step: f64) -> Result<(Vec<f64>, Vec<Complex64>)> {
        if !(delay_step > 0.0) {
            return Err(Error::domain("delay step must be positive"));
        }
        let bins: Vec<usize> = self
            .delays
            .iter()
            .map(|d| (d / delay_step).round() as usize)
            .collect();
        let nb = bins.iter().max().map_or(1, |m| m + 1);
        let [nq, np, nc, nt] = self.shape();
        let mut out = vec![Complex64::new(0.0, 0.0); nq * np * nb * nt];
        for qi in 0..nq {
            for pi in 0..np {
                for (c, &b) in bins.iter().enumerate().take(nc) {
                    let src = ((qi * np + pi) * nc + c) * nt;
                    let dst = ((qi * np + pi) * nb + b) * nt;
                    for t in 0..nt {
                        out[dst + t] += self.gains[src + t];
                    }
                }
            }
        }
        let grid = (0..nb).map(|b| b as f64 * delay_step).collect();
        Ok((grid, out))
    }
}

fn lookup(indices: &[usize], len: usize) -> Vec<Option<usize>> {
    let mut v = vec![None; len + 1];
    for (i, &idx) in indices.iter().enumerate() {
        v[idx] = Some(i);
    }
    v
}

fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// LOS gains `sqrt(P_L,p) exp(j(dPhi_L,qp + 2 pi f_L,p t))`, laid out `(q, p, t)`.
pub fn synthesize_los(
    scenario: &Scenario,
    track: &LargeScaleTrack,
    grid: &TimeGrid,
    selection: &AntennaSelection,
) -> Result<Vec<Complex64>> {
    selection.validate(scenario)?;
    let s = scenario;
    let lam = s.wavelength;
    let aod = s.los.aod;
    let aoa = s.los.aoa;
    let nt = grid.count;
    let times = grid.times();

    let tx_terms: Vec<(f64, f64, f64)> = selection
        .tx
        .iter()
        .map(|&p| {
            let dt = s.tx.offset(p);
            // rx offset 0 isolates the BS part of the planar phase
            let phase =
                planar(aod, aoa, &s.tx, &s.rx, dt, 0.0, lam) + parabolic(aod, s.d_tr, &s.tx, dt, lam);
            let f = doppler_los(aod, &s.tx, p, s.d_tr, &s.motion, lam)?;
            Ok((track.amplitude(p), phase, f))
        })
        .collect::<Result<_>>()?;
    let rx_phase: Vec<f64> = selection
        .rx
        .iter()
        .map(|&q| kappa(lam) * s.rx.offset(q) * (aoa - s.rx.tilt).cos())
        .collect();

    let mut out = Vec::with_capacity(selection.rx.len() * selection.tx.len() * nt);
    for &rxp in &rx_phase {
        for &(amp, txp, f) in &tx_terms {
            if amp == 0.0 {
                out.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), nt));
                continue;
            }
            for &t in &times {
                out.push(amp * cis(txp + rxp + 2.0 * PI * f * t));
            }
        }
    }
    Ok(out)
}

fn kappa(wavelength: f64) -> f64 {
    2.0 * PI / wavelength
}

/// Cluster gains: `sqrt(P_c,p / M_c) sum_m exp(j theta_m) exp(j(dPhi_m,qp + 2 pi f_m t))`,
/// laid out `(q, p, t)`.
pub fn synthesize_cluster(
    scenario: &Scenario,
    cluster: &Cluster,
    track: &LargeScaleTrack,
    grid: &TimeGrid,
    selection: &AntennaSelection,
) -> Result<Vec<Complex64>> {
    selection.validate(scenario)?;
    let s = scenario;
    let lam = s.wavelength;
    let k = kappa(lam);
    let rays = &cluster.rays;
    let m_c = rays.aods.len();
    let nt = grid.count;
    let times = grid.times();
    let scale = (cluster.mean_power / m_c as f64).sqrt();

    // e^{j 2 pi f_m t}, one Doppler per ray
    let rotors: Vec<Vec<Complex64>> = rays
        .aoas
        .iter()
        .map(|&aoa| {
            let f = doppler_nlos(aoa, &s.motion, lam);
            times.iter().map(|&t| cis(2.0 * PI * f * t)).collect()
        })
        .collect();
    // e^{j (theta_m + planar_tx + parabolic)} per (ray, p)
    let tx_rot: Vec<Vec<Complex64>> = rays
        .aods
        .iter()
        .zip(&rays.phases)
        .map(|(&aod, &theta)| {
            selection
                .tx
                .iter()
                .map(|&p| {
                    let d = s.tx.offset(p);
                    cis(theta
                        + k * d * (aod - s.tx.tilt).cos()
                        + parabolic(aod, cluster.placement.range, &s.tx, d, lam))
                })
                .collect()
        })
        .collect();
    let rx_rot: Vec<Vec<Complex64>> = rays
        .aoas
        .iter()
        .map(|&aoa| {
            selection
                .rx
                .iter()
                .map(|&q| cis(k * s.rx.offset(q) * (aoa - s.rx.tilt).cos()))
                .collect()
        })
        .collect();

    let np = selection.tx.len();
    let mut out = vec![Complex64::new(0.0, 0.0); selection.rx.len() * np * nt];
    let mut coeff = vec![Complex64::new(0.0, 0.0); m_c];
    for qi in 0..selection.rx.len() {
        for (pi, &p) in selection.tx.iter().enumerate() {
            let amp = scale * track.amplitude(p);
            if amp == 0.0 {
                continue;
            }
            for m in 0..m_c {
                coeff[m] = tx_rot[m][pi] * rx_rot[m][qi] * amp;
            }
            let dst = &mut out[(qi * np + pi) * nt..(qi * np + pi + 1) * nt];
            for (m, a) in coeff.iter().enumerate() {
                for (o, r) in dst.iter_mut().zip(&rotors[m]) {
                    *o += a * r;
                }
            }
        }
    }
    Ok(out)
}

/// Full-array realization.
pub fn synthesize(scenario: &Scenario, tracks: &TrackSet, grid: &TimeGrid) -> Result<ChannelRealization> {
    synthesize_links(scenario, tracks, grid, &AntennaSelection::all(scenario), DEFAULT_MEMORY_BUDGET)
}

/// Realization restricted to the antennas in `selection`.
pub fn synthesize_links(
    scenario: &Scenario,
    tracks: &TrackSet,
    grid: &TimeGrid,
    selection: &AntennaSelection,
    memory_budget: usize,
) -> Result<ChannelRealization> {
    selection.validate(scenario)?;
    if tracks.clusters.len() != scenario.clusters.len() {
        return Err(Error::domain(format!(
            "{} cluster tracks for {} clusters",
            tracks.clusters.len(),
            scenario.clusters.len()
        )));
    }
    let m = scenario.tx.num_elements;
    if tracks.los.len() != m || tracks.clusters.iter().any(|t| t.len() != m) {
        return Err(Error::domain("track length does not match the BS array"));
    }
    let nq = selection.rx.len();
    let np = selection.tx.len();
    let nc = scenario.num_taps();
    let nt = grid.count;
    let shape = vec![nq, np, nc, nt];
    let elems = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .unwrap_or(usize::MAX);
    let bytes = elems.saturating_mul(std::mem::size_of::<Complex64>());
    if bytes > memory_budget {
        return Err(Error::Resource {
            shape,
            bytes,
            budget: memory_budget,
        });
    }

    let per_tap: Vec<Vec<Complex64>> = (0..nc)
        .into_par_iter()
        .map(|c| {
            if c == 0 {
                synthesize_los(scenario, &tracks.los, grid, selection)
            } else {
                synthesize_cluster(
                    scenario,
                    &scenario.clusters[c - 1],
                    &tracks.clusters[c - 1],
                    grid,
                    selection,
                )
            }
        })
        .collect::<Result<_>>()?;

    let mut gains = vec![Complex64::new(0.0, 0.0); elems];
    for (c, tap) in per_tap.iter().enumerate() {
        for link in 0..nq * np {
            let src = &tap[link * nt..(link + 1) * nt];
            let dst = (link * nc + c) * nt;
            gains[dst..dst + nt].copy_from_slice(src);
        }
    }

    Ok(ChannelRealization {
        tx_lookup: lookup(&selection.tx, scenario.tx.num_elements),
        rx_lookup: lookup(&selection.rx, scenario.rx.num_elements),
        selection: selection.clone(),
        grid: *grid,
        delays: scenario.tap_delays(),
        tracks: tracks.clone(),
        provenance: None,
        gains,
    })
}
