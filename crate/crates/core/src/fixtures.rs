//! Bundled desk-scale grids and a seeded synthetic "mini-year" profile
//! generator.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::{Grid, InjectorKind, TimeSeries};

const DEMO3: &str = include_str!("../fixtures/demo3.json");
const DEMO9: &str = include_str!("../fixtures/demo9.json");

/// Step count of the bundled synthetic year.
pub const MINI_YEAR_STEPS: usize = 2000;

/// Reactive/real ratio of loads (power factor 0.95 inductive).
pub const LOAD_TAN_PHI: f64 = 0.328_684_105_178_863_2;

/// 3-bus meshed grid (slack, one PV generator, one PQ bus with load and wind).
pub fn demo3() -> Grid {
    Grid::from_json(DEMO3).expect("bundled demo3 grid is valid")
}

/// 9-bus meshed grid with two PV generators, solar and wind in-feed and one
/// radial spur line.
pub fn demo9() -> Grid {
    Grid::from_json(DEMO9).expect("bundled demo9 grid is valid")
}

/// Resolves a bundled grid name.
pub fn bundled_grid(name: &str) -> Option<Grid> {
    match name {
        "demo3" => Some(demo3()),
        "demo9" => Some(demo9()),
        _ => None,
    }
}

struct Ar1 {
    state: f64,
    phi: f64,
}

impl Ar1 {
    fn new(phi: f64) -> Self {
        Ar1 { state: 0.0, phi }
    }

    /// Unit-variance stationary AR(1) step.
    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        self.state = self.phi * self.state + (1.0 - self.phi * self.phi).sqrt() * e;
        self.state
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hourly synthetic profiles for every injector of `grid`, one column per
/// profile id. The seasonal cycle is compressed into `steps`.
///
/// Loads follow daily/weekly/seasonal shapes with correlated noise, solar a
/// daylight bell with cloud cover, wind a shared plus local AR(1) process,
/// and conventional units dispatch against the residual load.
pub fn mini_year(grid: &Grid, steps: usize, seed: u64) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts = TimeSeries::new(steps, grid.base_mva).with_resolution(60);

    let mut load_noise = Ar1::new(0.9);
    let mut wind_common = Ar1::new(0.97);
    let mut clouds = Ar1::new(0.95);

    // shared drivers
    let mut load_level = Vec::with_capacity(steps);
    let mut wind_level = Vec::with_capacity(steps);
    let mut solar_level = Vec::with_capacity(steps);
    for t in 0..steps {
        let hour = (t % 24) as f64;
        let day = t / 24;
        let season = (2.0 * PI * t as f64 / steps as f64).cos(); // +1 winter, -1 summer
        let daily = 0.5 - 0.5 * (2.0 * PI * (hour - 4.0) / 24.0).cos();
        let evening = (-((hour - 19.0) / 2.5).powi(2)).exp();
        let weekend = if day % 7 >= 5 { -0.08 } else { 0.0 };
        let l = 0.45 + 0.25 * daily + 0.12 * evening + 0.08 * season + weekend + 0.04 * load_noise.step(&mut rng);
        load_level.push(l.clamp(0.2, 1.0));

        wind_level.push(wind_common.step(&mut rng) + 0.5 * season);

        let sun = if (6.0..=18.0).contains(&hour) {
            (PI * (hour - 6.0) / 12.0).sin().powf(1.5)
        } else {
            0.0
        };
        let cover = logistic(1.2 + 1.5 * clouds.step(&mut rng) + 0.8 * season);
        solar_level.push(sun * (0.85 - 0.25 * season) * (1.0 - 0.7 * cover));
    }

    let pmax = |p: Option<f64>| p.unwrap_or(1.0);

    for load in &grid.loads {
        let scale = pmax(load.p_max);
        let p: Vec<f64> = load_level
            .iter()
            .map(|&l| {
                let jitter: f64 = rng.sample(StandardNormal);
                (scale * (l + 0.02 * jitter)).clamp(0.0, scale)
            })
            .collect();
        let q = p.iter().map(|v| v * LOAD_TAN_PHI).collect();
        ts.insert_mw(&load.profile_id, p, q).expect("lengths match");
    }

    let mut res_total = vec![0.0; steps];
    for gen in grid.generators.iter().filter(|g| g.kind == InjectorKind::Res) {
        let scale = pmax(gen.p_max);
        let is_solar = gen.id.starts_with("pv") || gen.profile_id.starts_with("pv");
        let mut local = Ar1::new(0.9);
        let p: Vec<f64> = (0..steps)
            .map(|t| {
                let unit = if is_solar {
                    solar_level[t]
                } else {
                    let latent = 0.8 * wind_level[t] + 0.45 * local.step(&mut rng) - 0.3;
                    // power-curve-like saturation
                    logistic(2.2 * latent).powf(1.3)
                };
                (scale * unit).clamp(0.0, scale)
            })
            .collect();
        for (acc, v) in res_total.iter_mut().zip(&p) {
            *acc += v;
        }
        ts.insert_mw(&gen.profile_id, p, vec![0.0; steps])
            .expect("lengths match");
    }

    let load_total: Vec<f64> = (0..steps)
        .map(|t| {
            grid.loads
                .iter()
                .map(|l| ts.columns[&l.profile_id].p[t] * grid.base_mva)
                .sum()
        })
        .collect();
    let conv: Vec<_> = grid
        .generators
        .iter()
        .filter(|g| g.kind == InjectorKind::Conventional)
        .collect();
    let conv_capacity: f64 = conv.iter().map(|g| pmax(g.p_max)).sum();
    for gen in conv {
        let scale = pmax(gen.p_max);
        let share = scale / conv_capacity.max(1e-9);
        let mut drift = Ar1::new(0.98);
        let p: Vec<f64> = (0..steps)
            .map(|t| {
                let residual = 0.75 * (load_total[t] - res_total[t]);
                let d = drift.step(&mut rng);
                (share * residual + 0.08 * scale * d).clamp(0.1 * scale, scale)
            })
            .collect();
        ts.insert_mw(&gen.profile_id, p, vec![0.0; steps])
            .expect("lengths match");
    }
    ts
}
