use std::path::Path;

use anyhow::{bail, Context, Result};
use gridml::dataset::{ScenarioConfig, ScenarioSet};
use gridml::fixtures::{self, MINI_YEAR_STEPS};
use gridml::grid::{load_grid, load_time_series, Grid, Snapshot, SnapshotSource, TimeSeries};
use serde::{Deserialize, Serialize};

pub const DEMO_YEAR: &str = "demo-year";
pub const SCENARIO_FORMAT: &str = "gridml-scenarios";

pub fn resolve_grid(name: &str) -> Result<Grid> {
    if let Some(g) = fixtures::bundled_grid(name) {
        return Ok(g);
    }
    load_grid(name).with_context(|| format!("loading grid `{name}`"))
}

/// Scenario file: the generator configuration next to the drawn set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub format: String,
    pub config: ScenarioConfig,
    pub set: ScenarioSet,
}

pub enum Source {
    Series(TimeSeries),
    Scenarios(ScenarioSet),
}

impl SnapshotSource for Source {
    fn len(&self) -> usize {
        match self {
            Source::Series(s) => s.len(),
            Source::Scenarios(s) => s.len(),
        }
    }

    fn snapshot(&self, grid: &Grid, index: usize) -> gridml::Result<Snapshot> {
        match self {
            Source::Series(s) => s.snapshot(grid, index),
            Source::Scenarios(s) => s.snapshot(grid, index),
        }
    }
}

pub fn needs_seed(series: &str) -> bool {
    series == DEMO_YEAR
}

/// `demo-year` (seeded), a scenario JSON file, or a time-series CSV.
pub fn resolve_source(name: &str, grid: &Grid, seed: Option<u64>) -> Result<Source> {
    if name == DEMO_YEAR {
        let seed = seed.context("`demo-year` needs --seed")?;
        return Ok(Source::Series(fixtures::mini_year(grid, MINI_YEAR_STEPS, seed)));
    }
    let path = Path::new(name);
    if path.extension().is_some_and(|e| e == "json") {
        let file = std::fs::File::open(path).with_context(|| format!("opening {name}"))?;
        let sf: ScenarioFile =
            serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("reading {name}"))?;
        if sf.format != SCENARIO_FORMAT {
            bail!("{name} is not a scenario file");
        }
        if sf
            .set
            .snapshots
            .iter()
            .any(|s| s.load_p.len() != grid.loads.len() || s.gen_p.len() != grid.generators.len())
        {
            bail!("{name} does not match the grid");
        }
        return Ok(Source::Scenarios(sf.set));
    }
    load_time_series(path, grid)
        .map(Source::Series)
        .with_context(|| format!("loading series `{name}`"))
}

pub fn time_series(source: Source, name: &str) -> Result<TimeSeries> {
    match source {
        Source::Series(s) => Ok(s),
        Source::Scenarios(_) => bail!("`{name}` is a scenario set; a time series is required"),
    }
}
