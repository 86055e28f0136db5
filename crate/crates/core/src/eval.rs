//! Metrics over generated goals, mode-coverage analysis, and CI gates.
//!
//! Every metric is computed directly on generated goal clouds in the world
//! frame; no controller executes them. Reports are pure functions of
//! (checkpoint, dataset, seeds): rerunning with the same inputs gives
//! byte-identical JSON.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Loaded, LoadedModel, ModelKind};
use crate::cloud::{self, PointCloud};
use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::{self, SamplerVariant};
use crate::tasks::{Dataset, DemoRecord, Scenario, TaskKind};

pub const EXECUTION_PROXY_NOTE: &str =
    "metrics are computed directly on generated goal clouds; no controller execution";

/// Per-mode assignment counts and the balance statistic
/// `min(count) / total` (0 = mode collapse, 1/m = perfectly even).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub counts: Vec<usize>,
    pub balance: f64,
}

/// Assign each sample to its nearest mode and report the histogram.
pub fn mode_coverage(samples: &[PointCloud], modes: &[PointCloud]) -> Result<ModeCoverage> {
    if samples.len() < 2 {
        return Err(Error::invalid("mode_coverage", "need at least 2 samples"));
    }
    if modes.len() < 2 {
        return Err(Error::invalid("mode_coverage", "need at least 2 modes"));
    }
    let mut counts = vec![0usize; modes.len()];
    for s in samples {
        let (_, idx) = cloud::min_mode_chamfer(s, modes)?;
        counts[idx] += 1;
    }
    let balance = *counts.iter().min().expect("non-empty") as f64 / samples.len() as f64;
    Ok(ModeCoverage { counts, balance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub samples_per_scenario: usize,
    pub seed: u64,
    pub variant: SamplerVariant,
}

/// One scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub scenario_id: String,
    pub sample_idx: usize,
    pub min_mode_chamfer: f64,
    pub assigned_mode: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collision: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: String,
    pub median_chamfer: f64,
    pub mode_counts: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_balance: Option<f64>,
    pub resample_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregates {
    pub chamfer_median: f64,
    pub chamfer_q1: f64,
    pub chamfer_q3: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_fraction_median: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collision_avoidance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_median: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_balance_median: Option<f64>,
    pub mode_occupancy: Vec<usize>,
    pub resample_floor_median: f64,
    /// chamfer_median / resample_floor_median.
    pub chamfer_floor_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub checkpoint_id: String,
    pub model_kind: ModelKind,
    pub sampler_variant: SamplerVariant,
    pub fusion_mode: String,
    pub eval_seed: u64,
    pub samples_per_scenario: usize,
    pub dataset_task: TaskKind,
    pub dataset_seed: u64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub aggregates: EvalAggregates,
    pub scenarios: Vec<ScenarioSummary>,
    pub rows: Vec<SampleRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    crate::tasks::median(&mut v)
}

/// Tukey hinges: medians of the lower and upper halves.
fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let med = crate::tasks::median(&mut v.clone());
    let half = n / 2;
    let lower = &v[..half + n % 2];
    let upper = &v[half..];
    (
        crate::tasks::median(&mut lower.to_vec()),
        med,
        crate::tasks::median(&mut upper.to_vec()),
    )
}

/// Score one predicted goal against a record: min-over-modes Chamfer with
/// mode assignment, then the task metrics of the record's scenario (the
/// retraction pass plane is oriented toward the assigned mode's side).
pub fn score_prediction(
    rec: &DemoRecord,
    sample: &PointCloud,
    sample_idx: usize,
) -> Result<SampleRow> {
    let (d, mode) = cloud::min_mode_chamfer(sample, &rec.goals)?;
    let (pass_fraction, collision, coverage) = match &rec.scenario {
        Scenario::Retraction(scn) => {
            let pass =
                cloud::plane_pass_fraction(sample, scn.plane_point, scn.oriented_normal(mode))?;
            let hit = cloud::cylinder_collision(
                sample,
                scn.tool_axis_a,
                scn.tool_axis_b,
                scn.tool_radius,
            )?;
            (Some(pass), Some(hit), None)
        }
        Scenario::Packaging(scn) => {
            let cov = cloud::box_coverage(sample, scn.box_min, scn.box_max)?;
            (None, None, Some(cov))
        }
    };
    Ok(SampleRow {
        scenario_id: rec.id.clone(),
        sample_idx,
        min_mode_chamfer: d,
        assigned_mode: mode,
        pass_fraction,
        collision,
        coverage,
    })
}

/// Recompute the aggregate block from per-sample rows (the report stores
/// exactly this, so aggregates are reproducible from the CSV).
pub fn recompute_aggregates(rows: &[SampleRow], floor_median: f64) -> EvalAggregates {
    let chamfers: Vec<f64> = rows.iter().map(|r| r.min_mode_chamfer).collect();
    let (q1, median, q3) = quartiles(&chamfers);

    let pass: Vec<f64> = rows.iter().filter_map(|r| r.pass_fraction).collect();
    let collisions: Vec<bool> = rows.iter().filter_map(|r| r.collision).collect();
    let coverage: Vec<f64> = rows.iter().filter_map(|r| r.coverage).collect();

    let n_modes = rows.iter().map(|r| r.assigned_mode + 1).max().unwrap_or(0);
    let mut occupancy = vec![0usize; n_modes];
    for r in rows {
        occupancy[r.assigned_mode] += 1;
    }

    // Per-scenario balances, in scenario order of first appearance.
    let mut balances = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for r in rows {
        if !seen.contains(&r.scenario_id.as_str()) {
            seen.push(&r.scenario_id);
        }
    }
    for id in &seen {
        let group: Vec<&SampleRow> = rows.iter().filter(|r| r.scenario_id == *id).collect();
        if group.len() >= 2 {
            let mut counts = vec![0usize; n_modes];
            for r in &group {
                counts[r.assigned_mode] += 1;
            }
            balances
                .push(*counts.iter().min().expect("non-empty") as f64 / group.len() as f64);
        }
    }

    EvalAggregates {
        chamfer_median: median,
        chamfer_q1: q1,
        chamfer_q3: q3,
        pass_fraction_median: if pass.is_empty() {
            None
        } else {
            Some(median_of(&pass))
        },
        collision_avoidance_rate: if collisions.is_empty() {
            None
        } else {
            let avoided = collisions.iter().filter(|&&c| !c).count();
            Some(avoided as f64 / collisions.len() as f64)
        },
        coverage_median: if coverage.is_empty() {
            None
        } else {
            Some(median_of(&coverage))
        },
        mode_balance_median: if balances.is_empty() {
            None
        } else {
            Some(median_of(&balances))
        },
        mode_occupancy: occupancy,
        resample_floor_median: floor_median,
        chamfer_floor_ratio: median / floor_median,
    }
}

/// Score a model over a dataset: `k` sampled goals per scenario for the
/// diffusion model, the single deterministic prediction for the baseline.
/// The dataset must be disjoint from the checkpoint's training records.
pub fn evaluate(loaded: &Loaded, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let overlap: Vec<&String> = dataset
        .records
        .iter()
        .map(|r| &r.id)
        .filter(|id| loaded.header.train_record_ids.contains(id))
        .collect();
    if !overlap.is_empty() {
        return Err(Error::invalid(
            "evaluate",
            format!(
                "dataset overlaps the training set: {} shared ids (first: {})",
                overlap.len(),
                overlap[0]
            ),
        ));
    }
    if opts.samples_per_scenario == 0 {
        return Err(Error::invalid("evaluate", "samples_per_scenario must be >= 1"));
    }

    let per_scenario: Vec<(Vec<SampleRow>, ScenarioSummary)> = crate::parallel::run(|| {
        use rayon::prelude::*;
        dataset
            .records
            .par_iter()
            .enumerate()
            .map(|(i, rec)| {
                let samples: Vec<PointCloud> = match &loaded.model {
                    LoadedModel::Diffusion(models) => sampler::sample_goals(
                        models,
                        &models.config.schedule(),
                        &rec.current,
                        &rec.context,
                        opts.samples_per_scenario,
                        rng::derive(opts.seed, &[i as u64]),
                        opts.variant,
                    )?,
                    LoadedModel::Baseline(model) => {
                        vec![model.predict(&rec.current, &rec.context)?]
                    }
                };
                let rows = samples
                    .iter()
                    .enumerate()
                    .map(|(k, s)| score_prediction(rec, s, k))
                    .collect::<Result<Vec<_>>>()?;
                let chamfers: Vec<f64> = rows.iter().map(|r| r.min_mode_chamfer).collect();
                let mut counts = vec![0usize; rec.goals.len()];
                for r in &rows {
                    counts[r.assigned_mode] += 1;
                }
                let balance = if samples.len() >= 2 && rec.goals.len() >= 2 {
                    Some(mode_coverage(&samples, &rec.goals)?.balance)
                } else {
                    None
                };
                let summary = ScenarioSummary {
                    scenario_id: rec.id.clone(),
                    median_chamfer: median_of(&chamfers),
                    mode_counts: counts,
                    mode_balance: balance,
                    resample_floor: rec.resample_floor,
                };
                Ok((rows, summary))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::new();
    let mut scenarios = Vec::new();
    for (r, s) in per_scenario {
        rows.extend(r);
        scenarios.push(s);
    }
    let aggregates = recompute_aggregates(&rows, dataset.manifest.resample_floor_median);

    Ok(EvalReport {
        meta: RunMeta {
            checkpoint_id: loaded.header.id.clone(),
            model_kind: loaded.header.kind,
            sampler_variant: opts.variant,
            fusion_mode: loaded.header.config.fusion_mode.to_string(),
            eval_seed: opts.seed,
            samples_per_scenario: opts.samples_per_scenario,
            dataset_task: dataset.manifest.task,
            dataset_seed: dataset.manifest.generator_seed,
            note: EXECUTION_PROXY_NOTE.into(),
        },
        aggregates,
        scenarios,
        rows,
    })
}

/// Flat per-sample table for external analysis.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out =
        String::from("scenario_id,sample_idx,min_mode_chamfer,assigned_mode,pass_fraction,collision,coverage\n");
    for r in &report.rows {
        let pass = r.pass_fraction.map(|v| v.to_string()).unwrap_or_default();
        let coll = r
            .collision
            .map(|v| if v { "1" } else { "0" }.to_string())
            .unwrap_or_default();
        let cov = r.coverage.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scenario_id, r.sample_idx, r.min_mode_chamfer, r.assigned_mode, pass, coll, cov
        ));
    }
    out
}

/// Threshold gates applied by the CLI after evaluation (CI exit 3).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalGates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_chamfer_floor_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_mode_balance_median: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_pass_fraction_median: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_collision_avoidance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_coverage_median: Option<f64>,
}

/// Returns the list of violated gate conditions (empty = all pass).
pub fn check_gates(report: &EvalReport, gates: &EvalGates) -> Vec<String> {
    let a = &report.aggregates;
    let mut violations = Vec::new();
    if let Some(max) = gates.max_chamfer_floor_ratio {
        if !(a.chamfer_floor_ratio <= max) {
            violations.push(format!(
                "chamfer/floor ratio {} exceeds {max}",
                a.chamfer_floor_ratio
            ));
        }
    }
    if let Some(min) = gates.min_mode_balance_median {
        match a.mode_balance_median {
            Some(v) if v >= min => {}
            other => violations.push(format!(
                "mode balance median {:?} below {min}",
                other
            )),
        }
    }
    if let Some(min) = gates.min_pass_fraction_median {
        match a.pass_fraction_median {
            Some(v) if v >= min => {}
            other => violations.push(format!("pass fraction median {other:?} below {min}")),
        }
    }
    if let Some(min) = gates.min_collision_avoidance {
        match a.collision_avoidance_rate {
            Some(v) if v >= min => {}
            other => violations.push(format!("collision avoidance {other:?} below {min}")),
        }
    }
    if let Some(min) = gates.min_coverage_median {
        match a.coverage_median {
            Some(v) if v >= min => {}
            other => violations.push(format!("coverage median {other:?} below {min}")),
        }
    }
    violations
}
