use super::config::ExperimentConfig;
use super::train::run_training_with;
use crate::dsd::RewardMode;
use crate::error::{Error, Result};
use crate::instructor::Instructor;
use crate::metrics::{csv_header, csv_row};
use crate::scalar::Scalar;

/// Runs every (mode, seed) pair and concatenates the metrics into one CSV
/// with leading `mode` and `seed` columns. Runs share the instruction
/// source; per-run output directories are not written.
pub fn run_ablation<T: Scalar>(
    cfg: &ExperimentConfig,
    modes: &[RewardMode],
    seeds: &[u64],
    instructor: Option<Instructor<T>>,
) -> Result<String> {
    if modes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one mode and one seed".into()));
    }
    let spec = cfg.env_spec();
    let mut out = format!("mode,seed,{}\n", csv_header(&spec));
    for &mode in modes {
        for &seed in seeds {
            let mut run = cfg.clone();
            run.reward.mode = mode;
            run.train.seed = seed;
            run.paths.out_dir = None;
            // METRA and scripted distances ignore the instruction weight in the
            // reward; it is still passed along for logging.
            let outcome = run_training_with(&run, instructor.clone())?;
            for row in &outcome.rows {
                out.push_str(&format!("{mode},{seed},{}\n", csv_row(&spec, row)?));
            }
        }
    }
    Ok(out)
}

pub fn parse_modes(list: &str) -> Result<Vec<RewardMode>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

pub fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidConfig(format!("bad seed {s:?}")))
        })
        .collect()
}
