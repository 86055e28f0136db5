//! Tool-conditioned retraction scenarios.
//!
//! Geometry (world units, 5 cm = 1.0): the tissue is a half-disc lying in
//! the z = 0 plane with its straight attachment edge along the x-axis and
//! the bulge toward +y. The target plane is x = 0 with canonical normal
//! +x; it bisects the tissue footprint. A thin cylindrical tool hovers
//! near the tissue; its offset from the plane classifies the scenario as
//! left / center / right at +/-15% of the tissue diameter.
//!
//! A retraction goal at angle theta sweeps the tissue to one side: the
//! sheet is rotated about the in-plane axis of the target plane through
//! the attachment-edge midpoint (the y-axis) until it makes angle theta
//! with the plane, a smooth sag field bends it, and the swept sheet is
//! translated to clear both the plane and the tool. Goals are fresh
//! samplings of the deformed surface, not point-wise maps of the current
//! cloud. Side tools get two modes on the far side (30 and 60 degrees);
//! a centered tool gets mirror-image 60-degree modes, the left one being
//! the exact mirror of the right one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{self, PointCloud};
use crate::error::{Error, Result};
use crate::rng;

use super::{build_dataset, Dataset, DemoRecord, Scenario, TaskKind, DENSE_POINTS, NUM_POINTS};

/// Tool cylinder radius in world units (0.2 cm at 5 cm = 1.0).
pub const TOOL_RADIUS: f64 = 0.04;
/// Hover height of the tool tip above the tissue plane.
const TOOL_LIFT: f64 = 0.06;
/// Goal clearance from the tool surface, as a factor of the radius.
const CLEARANCE_FACTOR: f64 = 1.25;
/// Tool side classification threshold as a fraction of the diameter.
const SIDE_THRESHOLD_FRAC: f64 = 0.15;

const TAG_RECORD: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolSide {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetractionScenario {
    pub diameter: f64,
    pub tool_axis_a: [f64; 3],
    pub tool_axis_b: [f64; 3],
    pub tool_radius: f64,
    pub plane_point: [f64; 3],
    /// Canonical normal (+x); per-goal orientation comes from `goal_sides`.
    pub plane_normal: [f64; 3],
    pub tool_side: ToolSide,
    /// +1 for right-side goals, -1 for left-side goals.
    pub goal_sides: Vec<f64>,
    pub goal_angles_deg: Vec<f64>,
}

impl RetractionScenario {
    /// Plane normal oriented toward the given goal mode's side.
    pub fn oriented_normal(&self, mode: usize) -> [f64; 3] {
        let s = self.goal_sides[mode];
        [
            self.plane_normal[0] * s,
            self.plane_normal[1] * s,
            self.plane_normal[2] * s,
        ]
    }
}

/// Uniform sample of the flat half-disc (radius `radius`, bulge +y).
fn disc_point(r: &mut rand_chacha::ChaCha8Rng, radius: f64) -> [f64; 3] {
    let u: f64 = r.random();
    let v: f64 = r.random();
    let rr = radius * u.sqrt();
    let phi = std::f64::consts::PI * v;
    [rr * phi.cos(), rr * phi.sin(), 0.0]
}

/// Dense surface sampling followed by farthest-point thinning.
fn sample_cloud(
    seed: u64,
    mut point: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> [f64; 3],
) -> PointCloud {
    let mut r = rng::stream(rng::derive(seed, &[0]));
    let dense = PointCloud::new((0..DENSE_POINTS).map(|_| point(&mut r)).collect())
        .expect("dense sampling is non-empty and finite");
    cloud::resample(&dense, NUM_POINTS, rng::derive(seed, &[1]))
        .expect("dense cloud has enough points")
}

/// Fresh sampling of the right-swept goal surface at `theta_deg`,
/// translated so the minimum x is exactly `margin` and the minimum z is
/// held just above the anatomy.
fn right_goal(radius: f64, theta_deg: f64, margin: f64, seed: u64) -> PointCloud {
    let alpha = (90.0 - theta_deg).to_radians();
    let (sin_a, cos_a) = alpha.sin_cos();
    let amp = (0.10 + 0.08 * theta_deg / 60.0) * radius;
    let swept = sample_cloud(seed, |r| {
        let p = disc_point(r, radius);
        let rr = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let sag = amp * (1.0 - (rr / radius).powi(2));
        [
            p[0] * cos_a + sag * sin_a,
            p[1],
            p[0] * sin_a - sag * cos_a,
        ]
    });
    let min_x = swept
        .points()
        .iter()
        .map(|p| p[0])
        .fold(f64::INFINITY, f64::min);
    let min_z = swept
        .points()
        .iter()
        .map(|p| p[2])
        .fold(f64::INFINITY, f64::min);
    swept.translated([margin - min_x, 0.0, 0.02 * radius - min_z])
}

fn mirror_x(c: &PointCloud) -> PointCloud {
    c.map_points(|p| [-p[0], p[1], p[2]])
}

/// Goal clearance margin from the plane, accounting for the tool when it
/// sits on the same side as the goal.
fn goal_margin(radius: f64, tool_x: f64, same_side: bool) -> f64 {
    let need = TOOL_RADIUS * CLEARANCE_FACTOR;
    let geo = if same_side {
        tool_x.abs() + need
    } else {
        (need - tool_x.abs()).max(0.0)
    };
    geo.max(0.08 * radius)
}

fn gen_record(master: u64, idx: usize) -> DemoRecord {
    let rseed = rng::derive(master, &[TAG_RECORD, idx as u64]);
    let mut r = rng::stream(rng::derive(rseed, &[0]));

    let diameter = 0.2 + r.random::<f64>() * 1.2;
    let radius = diameter / 2.0;
    let tool_x = (2.0 * r.random::<f64>() - 1.0) * 0.9 * radius;
    let tool_y = (0.25 + 0.6 * r.random::<f64>()) * radius;
    let side_threshold = SIDE_THRESHOLD_FRAC * diameter;
    let tool_side = if tool_x < -side_threshold {
        ToolSide::Left
    } else if tool_x > side_threshold {
        ToolSide::Right
    } else {
        ToolSide::Center
    };
    let tool_height = 1.2 * radius;
    let tool_a = [tool_x, tool_y, TOOL_LIFT];
    let tool_b = [tool_x, tool_y, TOOL_LIFT + tool_height];

    let current = sample_cloud(rng::derive(rseed, &[1]), |r| disc_point(r, radius));
    let context = sample_cloud(rng::derive(rseed, &[2]), |r| {
        let psi = 2.0 * std::f64::consts::PI * r.random::<f64>();
        let h = TOOL_LIFT + tool_height * r.random::<f64>();
        [
            tool_x + TOOL_RADIUS * psi.cos(),
            tool_y + TOOL_RADIUS * psi.sin(),
            h,
        ]
    });

    // Goal modes by tool side: sweep away from a side tool at 30 and 60
    // degrees; mirror-image 60-degree pair for a centered tool.
    let (goals, labels, sides, angles): (Vec<PointCloud>, Vec<String>, Vec<f64>, Vec<f64>) =
        match tool_side {
            ToolSide::Left => {
                let m = goal_margin(radius, tool_x, false);
                (
                    vec![
                        right_goal(radius, 30.0, m, rng::derive(rseed, &[3])),
                        right_goal(radius, 60.0, m, rng::derive(rseed, &[4])),
                    ],
                    vec!["right-30".into(), "right-60".into()],
                    vec![1.0, 1.0],
                    vec![30.0, 60.0],
                )
            }
            ToolSide::Right => {
                let m = goal_margin(radius, tool_x, false);
                (
                    vec![
                        mirror_x(&right_goal(radius, 30.0, m, rng::derive(rseed, &[3]))),
                        mirror_x(&right_goal(radius, 60.0, m, rng::derive(rseed, &[4]))),
                    ],
                    vec!["left-30".into(), "left-60".into()],
                    vec![-1.0, -1.0],
                    vec![30.0, 60.0],
                )
            }
            ToolSide::Center => {
                let m = goal_margin(radius, tool_x, true);
                let right = right_goal(radius, 60.0, m, rng::derive(rseed, &[3]));
                // The left mode is the exact mirror of the right mode.
                (
                    vec![mirror_x(&right), right],
                    vec!["left-60".into(), "right-60".into()],
                    vec![-1.0, 1.0],
                    vec![60.0, 60.0],
                )
            }
        };

    // Sampling-noise floor: two fresh samplings of the first goal surface.
    let floor_margin = match tool_side {
        ToolSide::Center => goal_margin(radius, tool_x, true),
        _ => goal_margin(radius, tool_x, false),
    };
    let floor_theta = angles[0];
    let fa = right_goal(radius, floor_theta, floor_margin, rng::derive(rseed, &[5]));
    let fb = right_goal(radius, floor_theta, floor_margin, rng::derive(rseed, &[6]));
    let resample_floor = cloud::chamfer(&fa, &fb).expect("floor clouds are non-empty");

    DemoRecord {
        id: format!("retr-s{master}-{idx:04}"),
        current,
        context,
        goals,
        mode_labels: labels,
        scenario: Scenario::Retraction(RetractionScenario {
            diameter,
            tool_axis_a: tool_a,
            tool_axis_b: tool_b,
            tool_radius: TOOL_RADIUS,
            plane_point: [0.0; 3],
            plane_normal: [1.0, 0.0, 0.0],
            tool_side,
            goal_sides: sides,
            goal_angles_deg: angles,
        }),
        resample_floor,
    }
}

/// Generate `count` retraction demonstrations, two goal modes each.
pub fn gen_retraction(count: usize, seed: u64) -> Result<Dataset> {
    if count < 1 {
        return Err(Error::invalid("gen_retraction", "count must be >= 1"));
    }
    let records: Vec<DemoRecord> = crate::parallel::run(|| {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(|i| gen_record(seed, i)).collect()
    });
    Ok(build_dataset(
        TaskKind::Retraction,
        seed,
        vec![
            "units: 5 cm = 1.0".into(),
            "retraction angle: rotation about the target-plane in-plane axis (y) through the \
             attachment-edge midpoint, measured from the target plane"
                .into(),
            format!(
                "tool side thresholds: +/-{:.0}% of tissue diameter from the target plane",
                SIDE_THRESHOLD_FRAC * 100.0
            ),
        ],
        records,
    ))
}
