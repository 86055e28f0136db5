//! Object-packaging scenarios.
//!
//! A rectangular sheet wider than the container opening rests next to an
//! open-top box. A goal folds the sheet in half around a smooth crease of
//! small radius (the fold line runs along the sheet's short axis), rotates
//! the folded slab by a continuous angle theta about the vertical axis,
//! and lowers it into the box. Five goal variants per scenario carry
//! distinct theta draws from U[-pi, pi]; the distribution over goals is
//! continuous, not five-modal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{self, PointCloud};
use crate::error::{Error, Result};
use crate::rng;

use super::{build_dataset, Dataset, DemoRecord, Scenario, TaskKind, DENSE_POINTS, NUM_POINTS};

const TAG_RECORD: u64 = 20;
/// Vertical clearance of the folded slab above the box floor, as a
/// fraction of the box inner height.
const FLOOR_CLEARANCE_FRAC: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackagingScenario {
    /// Inner side length of the square opening.
    pub opening: f64,
    pub sheet_w: f64,
    pub sheet_l: f64,
    pub fold_radius: f64,
    pub sheet_center: [f64; 3],
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    pub thetas: Vec<f64>,
}

/// U-fold of the sheet's local x coordinate around a crease at the middle
/// of the arc length: returns folded (x, z).
fn folded_local(x: f64, w: f64, rho: f64) -> (f64, f64) {
    let u = x + 0.5 * w;
    let crease = 0.5 * w;
    let quarter = 0.5 * std::f64::consts::PI * rho;
    if u >= crease + quarter {
        (u - (crease + quarter), 0.0)
    } else if u >= crease - quarter {
        let a = (crease + quarter - u) / rho;
        (-rho * a.sin(), rho * (1.0 - a.cos()))
    } else {
        (crease - quarter - u, 2.0 * rho)
    }
}

/// Fresh sampling of the folded sheet surface, recentered, lifted above
/// the box floor, rotated by `theta`, and placed at the box center.
pub fn packaging_goal_cloud(scn: &PackagingScenario, theta: f64, seed: u64) -> PointCloud {
    let mut r = rng::stream(rng::derive(seed, &[0]));
    let dense: Vec<[f64; 3]> = (0..DENSE_POINTS)
        .map(|_| {
            let x = (r.random::<f64>() - 0.5) * scn.sheet_w;
            let y = (r.random::<f64>() - 0.5) * scn.sheet_l;
            let (xf, zf) = folded_local(x, scn.sheet_w, scn.fold_radius);
            [xf, y, zf]
        })
        .collect();
    let dense = PointCloud::new(dense).expect("dense fold sampling");
    let folded = cloud::resample(&dense, NUM_POINTS, rng::derive(seed, &[1]))
        .expect("dense cloud has enough points");

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut min_z = f64::INFINITY;
    for p in folded.points() {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
        min_z = min_z.min(p[2]);
    }
    let center_x = 0.5 * (min_x + max_x);
    let center_y = 0.5 * (min_y + max_y);
    let box_height = scn.box_max[2] - scn.box_min[2];
    let lift = scn.box_min[2] + FLOOR_CLEARANCE_FRAC * box_height - min_z;
    let box_cx = 0.5 * (scn.box_min[0] + scn.box_max[0]);
    let box_cy = 0.5 * (scn.box_min[1] + scn.box_max[1]);
    let (sin_t, cos_t) = theta.sin_cos();

    folded.map_points(|p| {
        let x = p[0] - center_x;
        let y = p[1] - center_y;
        let z = p[2] + lift;
        [
            box_cx + x * cos_t - y * sin_t,
            box_cy + x * sin_t + y * cos_t,
            z,
        ]
    })
}

fn gen_record(master: u64, idx: usize) -> DemoRecord {
    let rseed = rng::derive(master, &[TAG_RECORD, idx as u64]);
    let mut r = rng::stream(rng::derive(rseed, &[0]));

    let opening = 0.5 + 0.3 * r.random::<f64>();
    let sheet_w = opening * (1.10 + 0.25 * r.random::<f64>());
    // Kept clearly narrower than the folded width so rotated variants stay
    // geometrically distinct.
    let sheet_l = opening * (0.32 + 0.10 * r.random::<f64>());
    let fold_radius = 0.05 * sheet_w;
    let box_cx = 0.6 * r.random::<f64>() - 0.3;
    let box_cy = 0.6 * r.random::<f64>() - 0.3;
    let box_height = 0.4 * opening;
    let box_min = [box_cx - opening / 2.0, box_cy - opening / 2.0, 0.0];
    let box_max = [box_cx + opening / 2.0, box_cy + opening / 2.0, box_height];

    let dir = 2.0 * std::f64::consts::PI * r.random::<f64>();
    let sheet_circum = ((sheet_w / 2.0).powi(2) + (sheet_l / 2.0).powi(2)).sqrt();
    let dist = opening * std::f64::consts::FRAC_1_SQRT_2 + sheet_circum + 0.05;
    let sheet_center = [
        box_cx + dist * dir.cos(),
        box_cy + dist * dir.sin(),
        0.0,
    ];
    let thetas: Vec<f64> = (0..5)
        .map(|_| (2.0 * r.random::<f64>() - 1.0) * std::f64::consts::PI)
        .collect();

    let scn = PackagingScenario {
        opening,
        sheet_w,
        sheet_l,
        fold_radius,
        sheet_center,
        box_min,
        box_max,
        thetas: thetas.clone(),
    };

    // Flat sheet next to the box.
    let current = {
        let mut rr = rng::stream(rng::derive(rseed, &[1, 0]));
        let dense: Vec<[f64; 3]> = (0..DENSE_POINTS)
            .map(|_| {
                [
                    sheet_center[0] + (rr.random::<f64>() - 0.5) * sheet_w,
                    sheet_center[1] + (rr.random::<f64>() - 0.5) * sheet_l,
                    0.0,
                ]
            })
            .collect();
        let dense = PointCloud::new(dense).expect("sheet sampling");
        cloud::resample(&dense, NUM_POINTS, rng::derive(rseed, &[1, 1])).expect("dense sheet")
    };

    // Box inner surface: bottom plus four walls, sampled by area.
    let context = {
        let mut rr = rng::stream(rng::derive(rseed, &[2, 0]));
        let wall_area = opening * box_height;
        let bottom_area = opening * opening;
        let total = bottom_area + 4.0 * wall_area;
        let dense: Vec<[f64; 3]> = (0..DENSE_POINTS)
            .map(|_| {
                let pick = rr.random::<f64>() * total;
                let u = rr.random::<f64>();
                let v = rr.random::<f64>();
                if pick < bottom_area {
                    [
                        box_min[0] + u * opening,
                        box_min[1] + v * opening,
                        0.0,
                    ]
                } else {
                    let wall = ((pick - bottom_area) / wall_area) as usize % 4;
                    let along = u * opening;
                    let up = v * box_height;
                    match wall {
                        0 => [box_min[0] + along, box_min[1], up],
                        1 => [box_min[0] + along, box_max[1], up],
                        2 => [box_min[0], box_min[1] + along, up],
                        _ => [box_max[0], box_min[1] + along, up],
                    }
                }
            })
            .collect();
        let dense = PointCloud::new(dense).expect("box sampling");
        cloud::resample(&dense, NUM_POINTS, rng::derive(rseed, &[2, 1])).expect("dense box")
    };

    let goals: Vec<PointCloud> = thetas
        .iter()
        .enumerate()
        .map(|(k, &theta)| packaging_goal_cloud(&scn, theta, rng::derive(rseed, &[3, k as u64])))
        .collect();
    let mode_labels: Vec<String> = (0..goals.len()).map(|k| format!("theta{k}")).collect();

    let fa = packaging_goal_cloud(&scn, thetas[0], rng::derive(rseed, &[4]));
    let fb = packaging_goal_cloud(&scn, thetas[0], rng::derive(rseed, &[5]));
    let resample_floor = cloud::chamfer(&fa, &fb).expect("floor clouds");

    DemoRecord {
        id: format!("pack-s{master}-{idx:04}"),
        current,
        context,
        goals,
        mode_labels,
        scenario: Scenario::Packaging(scn),
        resample_floor,
    }
}

/// Generate `count` packaging demonstrations, five goal variants each.
pub fn gen_packaging(count: usize, seed: u64) -> Result<Dataset> {
    if count < 1 {
        return Err(Error::invalid("gen_packaging", "count must be >= 1"));
    }
    let records: Vec<DemoRecord> = crate::parallel::run(|| {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(|i| gen_record(seed, i)).collect()
    });
    Ok(build_dataset(
        TaskKind::Packaging,
        seed,
        vec![
            "units: 5 cm = 1.0".into(),
            "goal: sheet folded in half about its short-axis crease, rotated by theta about z, \
             lowered into the box"
                .into(),
        ],
        records,
    ))
}
