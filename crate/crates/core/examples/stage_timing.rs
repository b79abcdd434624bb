//! Times a short stage-1 run and reports silhouette IoU on held-out cameras.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tetrapod::geometry::sample_camera;
use tetrapod::pipeline::{Pipeline, PipelineConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut config = PipelineConfig::default();
    config.stage1.iters = iters;
    if let Some(lr) = args.get(2).and_then(|s| s.parse().ok()) {
        config.stage1.lr = lr;
    }
    if let Some(k) = args.get(3).and_then(|s| s.parse().ok()) {
        config.grid.density_scale = k;
    }
    if let Some(d) = args.get(4).and_then(|s| s.parse().ok()) {
        config.grid.init.density = d;
    }
    let p = Pipeline::new(config).unwrap();
    let guidance = p.guidance().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    let held_out: Vec<_> = (0..8).map(|_| sample_camera(&mut rng, &p.cameras).unwrap()).collect();
    let start = Instant::now();
    let (grid, report) = p.stage1_pretrain(p.init_grid().unwrap(), &guidance).unwrap();
    let secs = start.elapsed().as_secs_f64();
    println!("{iters} iterations in {secs:.2}s ({:.2} ms/iter)", 1e3 * secs / iters as f64);
    for r in report.records.iter().step_by((iters / 10).max(1)) {
        println!("iter {} opacity {:.4} grad {:.3e}", r.iter, r.opacity_mean, r.grad_norm);
    }
    println!("held-out IoU {:.4}", p.mean_iou(&grid, &held_out).unwrap());
}
