//! Synthetic recordings with first-order sensor dynamics.
//!
//! Channel `c` reads `base_c + Σ_g S[c][g]·conc_g·(1 − exp(−Δt/τ_c)) + noise`,
//! where `Δt` is the time since the current setpoint phase began. Setpoint
//! columns are emitted exactly, so downstream labels are ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Composition, GasGroup, SENSOR_CHANNELS};

use super::{RawStream, StreamRow};

/// A constant setpoint held for `duration` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub conc: [f64; 2],
    pub duration: f64,
}

impl Phase {
    pub fn air(duration: f64) -> Self {
        Phase {
            conc: [0.0, 0.0],
            duration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    pub base: [f64; SENSOR_CHANNELS],
    /// Response per ppm of (gas A, gas B).
    pub sensitivity: [[f64; 2]; SENSOR_CHANNELS],
    /// Time constants in seconds.
    pub tau: [f64; SENSOR_CHANNELS],
}

impl SensorParams {
    /// Draws a sensor array. Each channel's full-scale response to either gas
    /// is between 0.15 and 3 units, with a channel-specific preference for
    /// one of the two gases.
    pub fn from_seed(seed: u64, gas_maxima: [f64; 2]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SensorParams {
            base: [0.0; SENSOR_CHANNELS],
            sensitivity: [[0.0; 2]; SENSOR_CHANNELS],
            tau: [0.0; SENSOR_CHANNELS],
        };
        for c in 0..SENSOR_CHANNELS {
            p.base[c] = rng.random_range(1.0..3.0);
            p.tau[c] = rng.random_range(0.3..1.2);
            let full_scale: f64 = rng.random_range(1.0..3.0);
            let affinity: f64 = rng.random_range(0.0..1.0);
            p.sensitivity[c] = [
                full_scale * (0.15 + 0.85 * affinity) / gas_maxima[0],
                full_scale * (0.15 + 0.85 * (1.0 - affinity)) / gas_maxima[1],
            ];
        }
        p
    }

    /// Noise-free reading of channel `c` after `dt` seconds at `conc`.
    pub fn response(&self, c: usize, conc: [f64; 2], dt: f64) -> f64 {
        let plateau = self.sensitivity[c][0] * conc[0] + self.sensitivity[c][1] * conc[1];
        self.base[c] + plateau * (1.0 - (-dt / self.tau[c]).exp())
    }
}

/// Renders `schedule` at `sample_rate_hz`. Each phase lasts
/// `max(1, round(duration · rate))` rows.
pub fn synth_stream(
    schedule: &[Phase],
    params: &SensorParams,
    noise_std: f64,
    sample_rate_hz: f64,
    seed: u64,
    group: GasGroup,
) -> Result<RawStream> {
    if !(sample_rate_hz > 0.0) {
        return Err(Error::Domain(format!("sample rate must be > 0, got {sample_rate_hz}")));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Domain(format!("noise std must be >= 0, got {noise_std}")));
    }
    if let Some(p) = schedule.iter().find(|p| !(p.duration > 0.0)) {
        return Err(Error::Domain(format!("phase durations must be > 0, got {}", p.duration)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rows = Vec::new();
    for phase in schedule {
        let n = ((phase.duration * sample_rate_hz).round() as usize).max(1);
        for i in 0..n {
            let dt = i as f64 / sample_rate_hz;
            let mut sensors = [0.0; SENSOR_CHANNELS];
            for (c, s) in sensors.iter_mut().enumerate() {
                *s = params.response(c, phase.conc, dt);
                if noise_std > 0.0 {
                    *s += noise.sample(&mut rng);
                }
            }
            rows.push(StreamRow {
                time: rows.len() as f64 / sample_rate_hz,
                conc: phase.conc,
                sensors,
            });
        }
    }
    RawStream::new(group, "synthetic", rows)
}

/// Parameters for a randomised exposure schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSchedule {
    /// Number of gas exposures; composition classes are balanced.
    pub exposures: usize,
    /// Exposure lengths in nodes after downsampling.
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Node rate after downsampling, used to turn node counts into seconds.
    pub node_rate_hz: f64,
    pub air_seconds: f64,
    /// Probability that an exposure follows the previous one without air.
    pub back_to_back: f64,
    /// Discrete concentration levels per gas, spread over
    /// `[min_level, 1] · max`.
    pub levels: usize,
    pub min_level: f64,
    pub seed: u64,
}

impl Default for DemoSchedule {
    fn default() -> Self {
        DemoSchedule {
            exposures: 30,
            min_nodes: 5,
            max_nodes: 600,
            node_rate_hz: 5.0,
            air_seconds: 10.0,
            back_to_back: 0.25,
            levels: 8,
            min_level: 0.2,
            seed: 7,
        }
    }
}

/// Builds a schedule that starts and ends in air. The first exposure lasts
/// `min_nodes` nodes and the second `max_nodes`; the rest are uniform in
/// between. Consecutive exposures always differ in setpoint, so every
/// exposure becomes exactly one segment.
pub fn demo_schedule(cfg: &DemoSchedule, gas_maxima: [f64; 2]) -> Result<Vec<Phase>> {
    if cfg.exposures == 0 || cfg.min_nodes == 0 || cfg.min_nodes > cfg.max_nodes {
        return Err(Error::Config(format!(
            "schedule needs exposures >= 1 and 1 <= min_nodes <= max_nodes, got {cfg:?}"
        )));
    }
    if cfg.levels < 2 || !(0.0..1.0).contains(&cfg.min_level) || cfg.min_level <= 0.0 {
        return Err(Error::Config("schedule needs levels >= 2 and min_level in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut classes: Vec<Composition> = (0..cfg.exposures).map(|i| Composition::ALL[i % 3]).collect();
    classes.shuffle(&mut rng);

    let level = |rng: &mut ChaCha8Rng, gas: usize| {
        let i = rng.random_range(0..cfg.levels);
        let frac = cfg.min_level + (1.0 - cfg.min_level) * i as f64 / (cfg.levels - 1) as f64;
        frac * gas_maxima[gas]
    };

    let mut phases = vec![Phase::air(cfg.air_seconds)];
    for (i, comp) in classes.into_iter().enumerate() {
        let nodes = match i {
            0 => cfg.min_nodes,
            1 => cfg.max_nodes,
            _ => rng.random_range(cfg.min_nodes..=cfg.max_nodes),
        };
        let prev = phases.last().map(|p| p.conc).unwrap_or([0.0; 2]);
        let conc = loop {
            let c = [
                if comp.contains(0) { level(&mut rng, 0) } else { 0.0 },
                if comp.contains(1) { level(&mut rng, 1) } else { 0.0 },
            ];
            if c != prev {
                break c;
            }
        };
        if i > 0 && !rng.random_bool(cfg.back_to_back) {
            phases.push(Phase::air(cfg.air_seconds));
        }
        phases.push(Phase {
            conc,
            duration: nodes as f64 / cfg.node_rate_hz,
        });
    }
    phases.push(Phase::air(cfg.air_seconds));
    Ok(phases)
}

/// Everything needed to regenerate one synthetic recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub group: GasGroup,
    pub schedule: DemoSchedule,
    /// Raw sample rate; the ingest downsample factor should divide
    /// `sample_rate_hz / schedule.node_rate_hz`.
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    pub sensor_seed: u64,
    pub noise_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            group: GasGroup::CoEthylene,
            schedule: DemoSchedule::default(),
            sample_rate_hz: 100.0,
            noise_std: 0.05,
            sensor_seed: 11,
            noise_seed: 13,
        }
    }
}

/// A generated recording together with the schedule and array behind it.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub stream: RawStream,
    pub phases: Vec<Phase>,
    pub params: SensorParams,
}

/// Renders a demo schedule with gas maxima of the public recordings.
pub fn synthesize(cfg: &SynthConfig) -> Result<SynthOutput> {
    let maxima = super::GasMaxima::uci(cfg.group).0;
    let phases = demo_schedule(&cfg.schedule, maxima)?;
    let params = SensorParams::from_seed(cfg.sensor_seed, maxima);
    let stream = synth_stream(&phases, &params, cfg.noise_std, cfg.sample_rate_hz, cfg.noise_seed, cfg.group)?;
    Ok(SynthOutput { stream, phases, params })
}
