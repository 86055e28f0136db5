//! Diagnostic: how much of the sample-to-sample variation comes from the
//! latent z versus the initial noise cloud.
//!
//! Usage: probe_modes <ckpt-stem> <dataset-dir> [record-index]

use defgen_core::checkpoint::{self, LoadedModel};
use defgen_core::sampler::{self, SamplerVariant};
use defgen_core::{rng, tasks};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let stem = std::path::Path::new(&args[1]);
    let data = std::path::Path::new(&args[2]);
    let rec_idx: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);

    let loaded = checkpoint::load_model(stem).unwrap();
    let LoadedModel::Diffusion(models) = &loaded.model else {
        panic!("need a diffusion checkpoint");
    };
    let dataset = tasks::read_dataset(data).unwrap();
    let rec = &dataset.records[rec_idx];
    let sched = models.config.schedule();
    let enc = sampler::encode_scenario(models, &rec.current, &rec.context).unwrap();

    let centroid_x = |c: &defgen_core::PointCloud| -> f64 {
        c.points().iter().map(|p| p[0]).sum::<f64>() / c.len() as f64
    };
    println!(
        "goal centroids x: {:+.3} {:+.3}",
        centroid_x(&rec.goals[0]),
        centroid_x(&rec.goals[1])
    );

    let cfg = &models.config;
    println!("vary z, fixed x_init:");
    let x_fix = rng::normal_tensor(&mut rng::stream(500), vec![cfg.num_points, 3]);
    for i in 0..6 {
        let z = rng::normal_tensor(&mut rng::stream(1000 + i), vec![cfg.latent_dim]);
        let mut nr = rng::stream(2000);
        let c = sampler::sample_goal_with_draws(
            models, &sched, &enc, z, x_fix.clone(), &mut nr, SamplerVariant::Stochastic,
        )
        .unwrap();
        print!(" {:+.3}", centroid_x(&c));
    }
    println!();
    println!("fixed z, vary x_init (and chain noise):");
    let z_fix = rng::normal_tensor(&mut rng::stream(1003), vec![cfg.latent_dim]);
    for i in 0..6 {
        let x0 = rng::normal_tensor(&mut rng::stream(3000 + i), vec![cfg.num_points, 3]);
        let mut nr = rng::stream(4000 + i);
        let c = sampler::sample_goal_with_draws(
            models, &sched, &enc, z_fix.clone(), x0, &mut nr, SamplerVariant::Stochastic,
        )
        .unwrap();
        print!(" {:+.3}", centroid_x(&c));
    }
    println!();
}
