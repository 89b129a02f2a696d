//! Scenario generator: synthetic operating points drawn from independent
//! load / RES / conventional scale factors with per-unit Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, InjectorKind, Snapshot, SnapshotSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub samples: usize,
    /// Noise standard deviation as a fraction of each unit's rating.
    pub noise_std: f64,
    pub seed: u64,
    /// Fixed power factor of load reactive power.
    pub load_power_factor: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            samples: 200,
            noise_std: 0.02,
            seed: 0,
            load_power_factor: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    /// (load, RES, conventional) scale factor per scenario.
    pub scales: Vec<[f64; 3]>,
    pub snapshots: Vec<Snapshot>,
}

impl SnapshotSource for ScenarioSet {
    fn len(&self) -> usize {
        self.snapshots.len()
    }

    fn snapshot(&self, _grid: &Grid, index: usize) -> Result<Snapshot> {
        self.snapshots.get(index).cloned().ok_or(Error::StepOutOfRange {
            step: index,
            len: self.snapshots.len(),
        })
    }
}

fn kind_slot(kind: InjectorKind) -> usize {
    match kind {
        InjectorKind::Load => 0,
        InjectorKind::Res => 1,
        InjectorKind::Conventional => 2,
    }
}

pub fn generate_scenarios(grid: &Grid, config: &ScenarioConfig) -> Result<ScenarioSet> {
    if !(config.noise_std >= 0.0) {
        return Err(Error::InvalidArgument("noise std must be non-negative".into()));
    }
    if !(config.load_power_factor > 0.0 && config.load_power_factor <= 1.0) {
        return Err(Error::InvalidArgument("load power factor must lie in (0, 1]".into()));
    }
    let rating = |id: &str, p: Option<f64>| {
        p.map(|v| v / grid.base_mva)
            .ok_or_else(|| Error::Dataset(format!("injector `{id}` has no p_max")))
    };
    let load_rating: Vec<f64> = grid
        .loads
        .iter()
        .map(|l| rating(&l.id, l.p_max))
        .collect::<Result<_>>()?;
    let gen_rating: Vec<f64> = grid
        .generators
        .iter()
        .map(|g| rating(&g.id, g.p_max))
        .collect::<Result<_>>()?;
    let tan_phi = config.load_power_factor.acos().tan();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draw = |scale: f64, p_max: f64, rng: &mut ChaCha8Rng| {
        let noise: f64 = rng.sample(StandardNormal);
        (scale * p_max + config.noise_std * p_max * noise).clamp(0.0, p_max)
    };

    let mut set = ScenarioSet {
        scales: Vec::with_capacity(config.samples),
        snapshots: Vec::with_capacity(config.samples),
    };
    for _ in 0..config.samples {
        let scales: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let load_p: Vec<f64> = load_rating.iter().map(|&p| draw(scales[0], p, &mut rng)).collect();
        let load_q = load_p.iter().map(|p| p * tan_phi).collect();
        let gen_p: Vec<f64> = grid
            .generators
            .iter()
            .zip(&gen_rating)
            .map(|(g, &p)| draw(scales[kind_slot(g.kind)], p, &mut rng))
            .collect();
        set.snapshots.push(Snapshot {
            load_p,
            load_q,
            gen_q: vec![0.0; gen_p.len()],
            gen_p,
        });
        set.scales.push(scales);
    }
    Ok(set)
}
