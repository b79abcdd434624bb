use rand::Rng;
use rayon::prelude::*;

use super::grid::{sigmoid, RadianceGrid, Stencil};
use super::quadrature::RaySamples;
use super::FieldError;
use crate::geometry::{ray_with, Camera, Ray};
use crate::image::Image;

/// Rows handled by one gradient partial. Fixed so that the reduction order
/// does not depend on the thread count.
const GRAD_CHUNK_ROWS: usize = 16;

pub enum Jitter<'a, R: Rng + ?Sized> {
    /// Samples at bin midpoints.
    Midpoint,
    /// One uniform offset per bin, drawn from the generator.
    Stratified(&'a mut R),
}

pub type NoJitter = Jitter<'static, rand_chacha::ChaCha8Rng>;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    /// Accumulated color, `channels` per pixel.
    pub image: Image,
    pub opacity: Vec<f64>,
}

impl RenderedImage {
    pub fn mean_opacity(&self) -> f64 {
        self.opacity.iter().sum::<f64>() / self.opacity.len().max(1) as f64
    }
}

/// What a render call retains so its gradient can be taken later.
#[derive(Debug, Clone)]
pub struct RenderTrace {
    camera: Camera,
    n_samples: usize,
    stamp: u64,
    /// Sample parameters, `n_samples` per ray; unused for rays that miss.
    positions: Vec<f64>,
    /// Exit parameter per ray, `None` when the ray misses the bounds.
    exits: Vec<Option<f64>>,
}

impl RenderTrace {
    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridGradient {
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl GridGradient {
    pub fn zeros_like(grid: &RadianceGrid) -> Self {
        Self { density: vec![0.0; grid.density.len()], color: vec![0.0; grid.color.len()] }
    }

    pub fn norm(&self) -> f64 {
        self.density.iter().chain(&self.color).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().chain(&self.color).all(|v| v.is_finite())
    }

}

fn ray_interval(grid: &RadianceGrid, camera: &Camera, forward_cos: f64, ray: &Ray) -> Option<(f64, f64)> {
    let (k0, k1) = grid.bounds.intersect(ray)?;
    let k0 = k0.max(camera.near / forward_cos);
    let k1 = k1.min(camera.far / forward_cos);
    (k1 - k0 > 1e-12).then_some((k0, k1))
}

/// Interpolates interleaved node values (`stride` per node) at one stencil.
#[inline]
fn gather(nodes: &[f64], stride: usize, st: &Stencil, out: &mut [f64]) {
    if stride == 4 {
        return gather4(nodes, st, out.try_into().expect("four values"));
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..8 {
        let src = &nodes[st.nodes[k] * stride..(st.nodes[k] + 1) * stride];
        let w = st.weights[k];
        for (o, s) in out.iter_mut().zip(src) {
            *o += w * s;
        }
    }
}

#[inline]
fn gather4(nodes: &[f64], st: &Stencil, out: &mut [f64; 4]) {
    let mut acc = [0.0; 4];
    for k in 0..8 {
        let i = st.nodes[k] * 4;
        let src: &[f64; 4] = nodes[i..i + 4].try_into().expect("four values");
        let w = st.weights[k];
        for j in 0..4 {
            acc[j] += w * src[j];
        }
    }
    *out = acc;
}

/// Samples one ray at the given parameters.
pub fn sample_ray(grid: &RadianceGrid, ray: &Ray, positions: &[f64], exit: f64) -> RaySamples {
    let nodes = grid.activated_nodes();
    let n = positions.len();
    let c = grid.channels;
    let mut out = RaySamples {
        positions: positions.to_vec(),
        deltas: Vec::with_capacity(n),
        densities: Vec::with_capacity(n),
        colors: Vec::with_capacity(n * c),
        channels: c,
    };
    let mut v = vec![0.0; c + 1];
    for i in 0..n {
        let next = if i + 1 < n { positions[i + 1] } else { exit };
        out.deltas.push(next - positions[i]);
        gather(&nodes, c + 1, &grid.stencil(&ray.at(positions[i])), &mut v);
        out.densities.push(v[0]);
        out.colors.extend_from_slice(&v[1..]);
    }
    out
}

/// Volume-renders the grid from `camera` with `n_samples` stratified samples
/// per ray over the ray's intersection with the grid bounds.
pub fn render<R: Rng + ?Sized>(
    grid: &RadianceGrid,
    camera: &Camera,
    n_samples: usize,
    jitter: Jitter<'_, R>,
) -> Result<(RenderedImage, RenderTrace), FieldError> {
    if n_samples == 0 {
        return Err(FieldError::Samples);
    }
    camera.validate().map_err(|e| FieldError::Camera(e.to_string()))?;
    let (w, h) = (camera.width as usize, camera.height as usize);
    let c = grid.channels;
    let stride = c + 1;
    let offsets: Vec<f64> = match jitter {
        Jitter::Midpoint => vec![0.5; w * h * n_samples],
        Jitter::Stratified(rng) => (0..w * h * n_samples).map(|_| rng.random::<f64>()).collect(),
    };
    let basis = camera.basis();
    let nodes = grid.activated_nodes();
    let lattice = grid.lattice();

    let mut image = vec![0.0; w * h * c];
    let mut opacity = vec![0.0; w * h];
    let mut positions = vec![0.0; w * h * n_samples];
    let mut exits = vec![None; w * h];

    image
        .par_chunks_mut(w * c)
        .zip(opacity.par_chunks_mut(w))
        .zip(positions.par_chunks_mut(w * n_samples))
        .zip(exits.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (((img_row, op_row), pos_row), exit_row))| {
            let mut v = vec![0.0; stride];
            for x in 0..w {
                let ray = ray_with(camera, &basis, x as f64 + 0.5, y as f64 + 0.5);
                let cos = ray.direction.dot(&basis.forward);
                let px = &mut img_row[x * c..(x + 1) * c];
                let Some((k0, k1)) = ray_interval(grid, camera, cos, &ray) else {
                    px.copy_from_slice(&grid.background);
                    continue;
                };
                exit_row[x] = Some(k1);
                let bin = (k1 - k0) / n_samples as f64;
                let pos = &mut pos_row[x * n_samples..(x + 1) * n_samples];
                let offs = &offsets[(y * w + x) * n_samples..(y * w + x + 1) * n_samples];
                for i in 0..n_samples {
                    pos[i] = k0 + (i as f64 + offs[i].min(1.0 - 1e-12)) * bin;
                }
                let mut t = 1.0;
                for i in 0..n_samples {
                    let next = if i + 1 < n_samples { pos[i + 1] } else { k1 };
                    gather(&nodes, stride, &lattice.stencil(&ray.at(pos[i])), &mut v);
                    let survive = (-v[0] * (next - pos[i])).exp();
                    let wgt = t * (1.0 - survive);
                    for ch in 0..c {
                        px[ch] += wgt * v[1 + ch];
                    }
                    t *= survive;
                }
                for ch in 0..c {
                    px[ch] += t * grid.background[ch];
                }
                op_row[x] = 1.0 - t;
            }
        });

    let trace = RenderTrace { camera: *camera, n_samples, stamp: grid.stamp(), positions, exits };
    Ok((RenderedImage { image: Image::from_data(w, h, c, image), opacity }, trace))
}

/// Gradient of `Σ upstream · render(grid)` with respect to every
/// pre-activation grid parameter, by reverse-mode through the quadrature,
/// the trilinear weights and the activations.
pub fn render_gradient(grid: &RadianceGrid, trace: &RenderTrace, upstream: &Image) -> Result<GridGradient, FieldError> {
    let cam = &trace.camera;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let c = grid.channels;
    let stride = c + 1;
    if upstream.width != w || upstream.height != h || upstream.channels != c {
        return Err(FieldError::TraceMismatch("upstream gradient shape differs from the render".into()));
    }
    if trace.stamp != grid.stamp() {
        return Err(FieldError::TraceMismatch("grid changed since the render call".into()));
    }
    let n = trace.n_samples;
    let basis = cam.basis();
    let nodes = grid.activated_nodes();
    let lattice = grid.lattice();
    let chunks = h.div_ceil(GRAD_CHUNK_ROWS);

    // Partials hold gradients w.r.t. activated node values, interleaved.
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = vec![0.0; nodes.len()];
            let mut stencils = Vec::with_capacity(n);
            let mut vals = vec![0.0; n * stride];
            let mut deltas = vec![0.0; n];
            let mut trans = vec![0.0; n + 1];
            let mut weights = vec![0.0; n];
            for y in chunk * GRAD_CHUNK_ROWS..((chunk + 1) * GRAD_CHUNK_ROWS).min(h) {
                for x in 0..w {
                    let pix = y * w + x;
                    let Some(exit) = trace.exits[pix] else { continue };
                    let up = upstream.pixel(x, y);
                    if up.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let ray = ray_with(cam, &basis, x as f64 + 0.5, y as f64 + 0.5);
                    let pos = &trace.positions[pix * n..(pix + 1) * n];
                    stencils.clear();
                    let mut t = 1.0;
                    for i in 0..n {
                        let next = if i + 1 < n { pos[i + 1] } else { exit };
                        deltas[i] = next - pos[i];
                        let st = lattice.stencil(&ray.at(pos[i]));
                        let v = &mut vals[i * stride..(i + 1) * stride];
                        gather(&nodes, stride, &st, v);
                        stencils.push(st);
                        let survive = (-v[0] * deltas[i]).exp();
                        trans[i] = t;
                        weights[i] = t * (1.0 - survive);
                        t *= survive;
                    }
                    trans[n] = t;
                    // suffix = Σ_{j>i} w_j (g·c_j) + Ω_end (g·background)
                    let mut suffix = t * up.iter().zip(&grid.background).map(|(a, b)| a * b).sum::<f64>();
                    for i in (0..n).rev() {
                        let v = &vals[i * stride..(i + 1) * stride];
                        let gc: f64 = up.iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
                        let d_tau = deltas[i] * (trans[i + 1] * gc - suffix);
                        suffix += weights[i] * gc;
                        let st = &stencils[i];
                        for k in 0..8 {
                            let wk = st.weights[k];
                            let dst = &mut acc[st.nodes[k] * stride..(st.nodes[k] + 1) * stride];
                            dst[0] += wk * d_tau;
                            let wc = wk * weights[i];
                            for ch in 0..c {
                                dst[1 + ch] += wc * up[ch];
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; nodes.len()];
    for p in &partials {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    let mut out = GridGradient::zeros_like(grid);
    for node in 0..grid.node_count() {
        let g = &total[node * stride..(node + 1) * stride];
        out.density[node] = g[0] * grid.density_scale * sigmoid(grid.density[node]);
        for ch in 0..c {
            let a = nodes[node * stride + 1 + ch];
            out.color[node * c + ch] = g[1 + ch] * a * (1.0 - a);
        }
    }
    Ok(out)
}
