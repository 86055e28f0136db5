//! Synthetic demonstration data for the two task families, plus the
//! dataset directory format.
//!
//! World units map 5 cm to 1.0, so clouds land near the unit sphere after
//! normalization. Every generated demonstration satisfies its own task
//! success predicate by construction (full pass fraction / collision-free /
//! full coverage), and generation is deterministic given the seed.
//!
//! Directory layout: `manifest.json` plus `clouds/<id>_<role>.csv` with
//! role in {current, context, goal0..goalK}.

mod packaging;
mod retraction;

pub use packaging::{gen_packaging, PackagingScenario};
pub use retraction::{gen_retraction, RetractionScenario, ToolSide};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{self, PointCloud};
use crate::error::{Error, Result};

/// Number of points per stored cloud.
pub const NUM_POINTS: usize = 256;
/// Dense surface sampling used before resampling down to [`NUM_POINTS`].
pub(crate) const DENSE_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Retraction,
    Packaging,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::Retraction => write!(f, "retraction"),
            TaskKind::Packaging => write!(f, "packaging"),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retraction" => Ok(TaskKind::Retraction),
            "packaging" => Ok(TaskKind::Packaging),
            other => Err(Error::invalid(
                "task",
                format!("unknown task '{other}' (expected 'retraction' or 'packaging')"),
            )),
        }
    }
}

/// Per-record scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Scenario {
    Retraction(RetractionScenario),
    Packaging(PackagingScenario),
}

/// One demonstration: clouds plus all valid goal modes and their labels.
#[derive(Debug, Clone)]
pub struct DemoRecord {
    pub id: String,
    pub current: PointCloud,
    pub context: PointCloud,
    pub goals: Vec<PointCloud>,
    pub mode_labels: Vec<String>,
    pub scenario: Scenario,
    /// Chamfer distance between two independent resamplings of one goal
    /// surface: the sampling-noise floor for this record.
    pub resample_floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub mode_labels: Vec<String>,
    pub resample_floor: f64,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub task: TaskKind,
    pub generator_seed: u64,
    pub count: usize,
    pub num_points: usize,
    /// Median of the per-record resampling floors.
    pub resample_floor_median: f64,
    /// Geometric conventions, recorded for the analysis side.
    pub conventions: Vec<String>,
    pub records: Vec<RecordMeta>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<DemoRecord>,
}

impl Dataset {
    pub fn record_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn build_dataset(
    task: TaskKind,
    generator_seed: u64,
    conventions: Vec<String>,
    records: Vec<DemoRecord>,
) -> Dataset {
    let mut floors: Vec<f64> = records.iter().map(|r| r.resample_floor).collect();
    let manifest = Manifest {
        task,
        generator_seed,
        count: records.len(),
        num_points: NUM_POINTS,
        resample_floor_median: median(&mut floors),
        conventions,
        records: records
            .iter()
            .map(|r| RecordMeta {
                id: r.id.clone(),
                mode_labels: r.mode_labels.clone(),
                resample_floor: r.resample_floor,
                scenario: r.scenario.clone(),
            })
            .collect(),
    };
    Dataset { manifest, records }
}

/// Generate a dataset for the given task.
pub fn generate(task: TaskKind, count: usize, seed: u64) -> Result<Dataset> {
    match task {
        TaskKind::Retraction => gen_retraction(count, seed),
        TaskKind::Packaging => gen_packaging(count, seed),
    }
}

fn role_file(dir: &Path, id: &str, role: &str) -> std::path::PathBuf {
    dir.join("clouds").join(format!("{id}_{role}.csv"))
}

/// Write a dataset directory: `manifest.json` + one CSV per cloud.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir.join("clouds"))?;
    let manifest_json = serde_json::to_string_pretty(&dataset.manifest)?;
    std::fs::write(dir.join("manifest.json"), manifest_json)?;
    for rec in &dataset.records {
        cloud::write_cloud_csv(&role_file(dir, &rec.id, "current"), &rec.current)?;
        cloud::write_cloud_csv(&role_file(dir, &rec.id, "context"), &rec.context)?;
        for (k, goal) in rec.goals.iter().enumerate() {
            cloud::write_cloud_csv(&role_file(dir, &rec.id, &format!("goal{k}")), goal)?;
        }
    }
    Ok(())
}

/// Read a dataset directory back; the cloud file count must match the
/// manifest exactly.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest_json = std::fs::read_to_string(&manifest_path).map_err(|e| Error::Dataset(
        format!("cannot read {}: {e}", manifest_path.display()),
    ))?;
    let manifest: Manifest = serde_json::from_str(&manifest_json)?;

    let expected_files: usize = manifest
        .records
        .iter()
        .map(|r| 2 + r.mode_labels.len())
        .sum();
    let actual_files = std::fs::read_dir(dir.join("clouds"))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .count();
    if actual_files != expected_files {
        return Err(Error::Dataset(format!(
            "manifest expects {expected_files} cloud files, directory holds {actual_files}"
        )));
    }

    let mut records = Vec::with_capacity(manifest.records.len());
    for meta in &manifest.records {
        let current = cloud::read_cloud_csv(&role_file(dir, &meta.id, "current"))?;
        let context = cloud::read_cloud_csv(&role_file(dir, &meta.id, "context"))?;
        let goals = (0..meta.mode_labels.len())
            .map(|k| cloud::read_cloud_csv(&role_file(dir, &meta.id, &format!("goal{k}"))))
            .collect::<Result<Vec<_>>>()?;
        records.push(DemoRecord {
            id: meta.id.clone(),
            current,
            context,
            goals,
            mode_labels: meta.mode_labels.clone(),
            scenario: meta.scenario.clone(),
            resample_floor: meta.resample_floor,
        });
    }
    Ok(Dataset { manifest, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_and_regeneration() {
        let ds = gen_retraction(4, 7).unwrap();
        assert_eq!(ds.manifest.generator_seed, 7);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.records.len(), 4);
        for (a, b) in ds.records.iter().zip(&back.records) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.current, b.current);
            assert_eq!(a.context, b.context);
            assert_eq!(a.goals, b.goals);
            assert_eq!(a.scenario, b.scenario);
        }
        // Regenerating from the manifest seed reproduces the dataset.
        let regen = generate(back.manifest.task, back.manifest.count, back.manifest.generator_seed)
            .unwrap();
        for (a, b) in regen.records.iter().zip(&back.records) {
            assert_eq!(a.current, b.current);
            assert_eq!(a.goals, b.goals);
        }
    }

    #[test]
    fn read_rejects_missing_cloud_file() {
        let ds = gen_retraction(2, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        std::fs::remove_file(role_file(dir.path(), &ds.records[0].id, "goal0")).unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }
}
