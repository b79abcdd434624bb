//! Compares stage-2-only against stage-1+2 at reduced scale over several seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tetrapod::geometry::sample_camera;
use tetrapod::pipeline::{Pipeline, PipelineConfig};

fn main() {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let lr: f64 = raw.first().and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let args: Vec<usize> = raw.iter().skip(1).filter_map(|s| s.parse().ok()).collect();
    let iters = args.first().copied().unwrap_or(500);
    let grid = args.get(1).copied().unwrap_or(16);
    let width = args.get(2).copied().unwrap_or(32) as u32;
    let samples = args.get(3).copied().unwrap_or(32);
    for seed in 0..5u64 {
        let mut c = PipelineConfig::default();
        c.seed = seed;
        c.grid.resolution = [grid; 3];
        c.grid.n_samples = samples;
        c.camera.resolution = [width, width];
        c.stage1.iters = iters;
        c.stage2.iters = iters;
        c.stage1.lr = lr;
        c.stage2.lr = lr;
        let p = Pipeline::new(c).unwrap();
        let guidance = p.guidance().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let held: Vec<_> = (0..8).map(|_| sample_camera(&mut rng, &p.cameras).unwrap()).collect();
        let (only, _) = p.stage2_finetune(p.init_grid().unwrap(), &guidance).unwrap();
        let (pre, _) = p.stage1_pretrain(p.init_grid().unwrap(), &guidance).unwrap();
        let (both, _) = p.stage2_finetune(pre, &guidance).unwrap();
        println!(
            "seed {seed}: stage-2-only {:.4} stage-1+2 {:.4}",
            p.mean_iou(&only, &held).unwrap(),
            p.mean_iou(&both, &held).unwrap()
        );
    }
}
