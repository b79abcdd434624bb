use std::f64::consts::LN_2;

use nalgebra::{Isometry3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tetrapod::field::{
    composite, render, render_gradient, FieldError, GridInit, Jitter, NoJitter, RadianceGrid,
};
use tetrapod::geometry::{Aabb, Camera, Vec3};
use tetrapod::image::Image;

fn cube(half: f64) -> Aabb {
    Aabb::new(Vec3::repeat(-half), Vec3::repeat(half))
}

fn random_grid(n: usize, seed: u64) -> RadianceGrid {
    let mut g = RadianceGrid::new([n; 3], cube(0.5), 3, GridInit::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in g.density.iter_mut() {
        *v = rng.random_range(-1.0..2.0);
    }
    for v in g.color.iter_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    g.background = vec![0.1, 0.2, 0.3];
    g
}

fn camera(w: u32) -> Camera {
    Camera::new(Vec3::new(1.6, 0.7, 0.5), Vec3::zeros(), 45.0, w, w).unwrap()
}

fn loss(grid: &RadianceGrid, cam: &Camera, n: usize, up: &Image) -> f64 {
    let (img, _) = render(grid, cam, n, NoJitter::Midpoint).unwrap();
    img.image.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
}

fn random_upstream(w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_data(w, w, 3, (0..w * w * 3).map(|_| rng.random_range(-1.0..1.0)).collect())
}

#[test]
fn zero_density_shows_background() {
    let mut g = RadianceGrid::new([4; 3], cube(0.5), 3, GridInit { density: -60.0, color: 1.0 }).unwrap();
    g.background = vec![0.25, 0.5, 0.75];
    let (img, _) = render(&g, &camera(8), 16, NoJitter::Midpoint).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            assert!(img.opacity[y * 8 + x] < 1e-20);
            for (c, b) in img.image.pixel(x, y).iter().zip(&g.background) {
                assert!((c - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_and_double_sample_quadrature() {
    let c = [0.3, 0.6, 0.9];
    let one = composite(&[LN_2], &[1.0], &c, 3, &[0.0; 3]);
    assert_eq!(one.opacity, 0.5);
    for k in 0..3 {
        assert_eq!(one.color[k], 0.5 * c[k]);
    }
    let cc: Vec<f64> = c.iter().chain(&c).copied().collect();
    let two = composite(&[LN_2, LN_2], &[1.0, 1.0], &cc, 3, &[0.0; 3]);
    for k in 0..3 {
        assert!((two.color[k] - 0.75 * c[k]).abs() < 1e-15);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let grid = random_grid(4, 11);
    let cam = camera(8);
    let up = random_upstream(8, 12);
    let (_, trace) = render(&grid, &cam, 16, NoJitter::Midpoint).unwrap();
    let g = render_gradient(&grid, &trace, &up).unwrap();
    let eps = 1e-4;
    let scale = g.density.iter().chain(&g.color).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut errs = Vec::new();
    for i in 0..grid.density.len() + grid.color.len() {
        let mut plus = grid.clone();
        let mut minus = grid.clone();
        let (a, p, m) = if i < grid.density.len() {
            plus.density[i] += eps;
            minus.density[i] -= eps;
            (g.density[i], &plus, &minus)
        } else {
            let j = i - grid.density.len();
            plus.color[j] += eps;
            minus.color[j] -= eps;
            (g.color[j], &plus, &minus)
        };
        let fd = (loss(p, &cam, 16, &up) - loss(m, &cam, 16, &up)) / (2.0 * eps);
        errs.push((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6 * scale));
    }
    errs.sort_by(f64::total_cmp);
    let p99 = errs[(errs.len() * 99) / 100];
    assert!(p99 < 1e-4, "99th percentile relative error {p99}");
}

#[test]
fn single_voxel_dominant_ray() {
    // one dense node in front of empty space along the central ray
    let mut g = RadianceGrid::new([5; 3], cube(0.5), 3, GridInit { density: -8.0, color: 0.3 }).unwrap();
    let centre = g.node_index(2, 2, 2);
    g.density[centre] = 1.5;
    let cam = Camera::new(Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), 10.0, 1, 1).unwrap();
    let up = Image::from_data(1, 1, 3, vec![1.0, -0.5, 0.25]);
    let (_, trace) = render(&g, &cam, 32, NoJitter::Midpoint).unwrap();
    let grad = render_gradient(&g, &trace, &up).unwrap();
    let eps = 1e-4;
    let mut p = g.clone();
    p.density[centre] += eps;
    let mut m = g.clone();
    m.density[centre] -= eps;
    let fd = (loss(&p, &cam, 32, &up) - loss(&m, &cam, 32, &up)) / (2.0 * eps);
    let a = grad.density[centre];
    assert!((a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()), "analytic {a} vs {fd}");
}

#[test]
fn zero_upstream_and_missing_rays_give_zero_gradient() {
    let grid = random_grid(4, 5);
    let cam = camera(8);
    let (_, trace) = render(&grid, &cam, 8, NoJitter::Midpoint).unwrap();
    let g = render_gradient(&grid, &trace, &Image::new(8, 8, 3)).unwrap();
    assert!(g.density.iter().chain(&g.color).all(|&v| v == 0.0));

    // a camera beside the box: only some rays hit it
    let side = Camera::new(Vec3::new(2.0, 0.9, 0.0), Vec3::new(0.0, 0.9, 0.0), 60.0, 16, 16).unwrap();
    let (img, trace) = render(&grid, &side, 8, NoJitter::Midpoint).unwrap();
    let mut up = Image::new(16, 16, 3);
    let mut misses = 0;
    for y in 0..16 {
        for x in 0..16 {
            if img.opacity[y * 16 + x] == 0.0 {
                up.pixel_mut(x, y).copy_from_slice(&[1.0, 1.0, 1.0]);
                misses += 1;
            }
        }
    }
    assert!(misses > 0 && misses < 256);
    let g = render_gradient(&grid, &trace, &up).unwrap();
    assert!(g.norm() == 0.0);
}

#[test]
fn stale_trace_is_rejected() {
    let mut grid = random_grid(4, 2);
    let cam = camera(4);
    let (_, trace) = render(&grid, &cam, 4, NoJitter::Midpoint).unwrap();
    assert!(matches!(render_gradient(&grid, &trace, &Image::new(3, 4, 3)), Err(FieldError::TraceMismatch(_))));
    grid.density[0] += 1.0;
    assert!(matches!(render_gradient(&grid, &trace, &Image::new(4, 4, 3)), Err(FieldError::TraceMismatch(_))));
}

#[test]
fn doubling_samples_converges_on_smooth_grid() {
    let mut g = RadianceGrid::new([16; 3], cube(0.5), 3, GridInit::default()).unwrap();
    for k in 0..16 {
        for j in 0..16 {
            for i in 0..16 {
                let p = g.node_position(i, j, k);
                let n = g.node_index(i, j, k);
                g.density[n] = 1.5 - 6.0 * p.norm_squared();
                for c in 0..3 {
                    g.color[n * 3 + c] = (3.0 * p[c]).sin();
                }
            }
        }
    }
    let cam = camera(16);
    let (a, _) = render(&g, &cam, 128, NoJitter::Midpoint).unwrap();
    let (b, _) = render(&g, &cam, 256, NoJitter::Midpoint).unwrap();
    assert!(a.image.max_abs_diff(&b.image) < 1e-2);
}

#[test]
fn quarter_turn_leaves_render_unchanged() {
    let g = random_grid(5, 8);
    // rotate contents by +90 degrees about z: new(i, j) = old(j, n-1-i)
    let n = 5;
    let mut r = g.clone();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let src = g.node_index(j, n - 1 - i, k);
                let dst = g.node_index(i, j, k);
                r.density[dst] = g.density[src];
                r.color[dst * 3..dst * 3 + 3].copy_from_slice(&g.color[src * 3..src * 3 + 3]);
            }
        }
    }
    let cam = camera(12);
    let iso = Isometry3::rotation(Vector3::z() * std::f64::consts::FRAC_PI_2);
    let (a, _) = render(&g, &cam, 32, NoJitter::Midpoint).unwrap();
    let (b, _) = render(&r, &cam.transformed(&iso), 32, NoJitter::Midpoint).unwrap();
    assert!(a.image.max_abs_diff(&b.image) < 1e-9, "{}", a.image.max_abs_diff(&b.image));
}

#[test]
fn stratified_jitter_is_seeded() {
    let g = random_grid(4, 1);
    let cam = camera(6);
    let mut r1 = ChaCha8Rng::seed_from_u64(3);
    let mut r2 = ChaCha8Rng::seed_from_u64(3);
    let (a, _) = render(&g, &cam, 8, Jitter::Stratified(&mut r1)).unwrap();
    let (b, _) = render(&g, &cam, 8, Jitter::Stratified(&mut r2)).unwrap();
    assert_eq!(a, b);
    let (c, _) = render(&g, &cam, 8, Jitter::Stratified(&mut r1)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn rejects_zero_samples() {
    let g = random_grid(2, 1);
    assert_eq!(render(&g, &camera(2), 0, NoJitter::Midpoint).unwrap_err(), FieldError::Samples);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn opacity_and_energy_bounds(seed in 0u64..1000, n in 1usize..24) {
        let g = random_grid(4, seed);
        let (img, _) = render(&g, &camera(6), n, NoJitter::Midpoint).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let a = img.opacity[y * 6 + x];
                prop_assert!((0.0..=1.0).contains(&a));
                for (c, b) in img.image.pixel(x, y).iter().zip(&g.background) {
                    prop_assert!(*c <= a + b * (1.0 - a) + 1e-12);
                    prop_assert!(*c >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn transmittance_is_monotone(densities in prop::collection::vec(0.0f64..20.0, 1..20)) {
        let n = densities.len();
        let deltas = vec![0.05; n];
        let colors = vec![0.5; n];
        let out = composite(&densities, &deltas, &colors, 1, &[0.0]);
        prop_assert_eq!(out.transmittance[0], 1.0);
        for w in out.transmittance.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        let total: f64 = out.weights.iter().sum();
        prop_assert!((total - out.opacity).abs() < 1e-12);
    }
}
