//! Per-component cost of one optimization iteration.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tetrapod::control::render_depth;
use tetrapod::field::{render, render_gradient, Jitter};
use tetrapod::geometry::sample_camera;
use tetrapod::image::Image;
use tetrapod::pipeline::{Pipeline, PipelineConfig};

fn time<T>(name: &str, n: usize, mut f: impl FnMut() -> T) {
    let start = Instant::now();
    for _ in 0..n {
        std::hint::black_box(f());
    }
    println!("{name}: {:.2} ms", 1e3 * start.elapsed().as_secs_f64() / n as f64);
}

fn main() {
    let p = Pipeline::new(PipelineConfig::default()).unwrap();
    let grid = p.init_grid().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cam = sample_camera(&mut rng, &p.cameras).unwrap();
    time("render_depth", 20, || render_depth(&p.shape, &cam));
    time("render", 20, || render(&grid, &cam, 64, Jitter::Stratified(&mut rng)).unwrap());
    let (_, trace) = render(&grid, &cam, 64, Jitter::Stratified(&mut rng)).unwrap();
    let up = Image::filled(64, 64, 3, 1e-3);
    time("render_gradient", 20, || render_gradient(&grid, &trace, &up).unwrap());
}
