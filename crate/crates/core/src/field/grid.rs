use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::geometry::{Aabb, Vec3};

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridInit {
    /// Pre-activation density of every node.
    pub density: f64,
    /// Pre-activation color of every node and channel.
    pub color: f64,
}

impl Default for GridInit {
    fn default() -> Self {
        Self { density: -5.0, color: 0.0 }
    }
}

/// Trilinear voxel grid of pre-activation density and color stored at the
/// lattice nodes. Density is activated with softplus, color with sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceGrid {
    /// Nodes per axis.
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub channels: usize,
    pub density: Vec<f64>,
    /// Node-major, `channels` values per node.
    pub color: Vec<f64>,
    pub background: Vec<f64>,
    /// Constant factor applied after softplus; 1 means density per world unit.
    pub density_scale: f64,
}

/// The eight lattice nodes around a point with their trilinear weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

/// Precomputed index arithmetic for stencil lookups.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lattice {
    lo: [f64; 3],
    scale: [f64; 3],
    top: [f64; 3],
    sy: usize,
    sz: usize,
}

impl Lattice {
    #[inline]
    pub(crate) fn stencil(&self, p: &Vec3) -> Stencil {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let g = ((p[a] - self.lo[a]) * self.scale[a]).clamp(0.0, self.top[a]);
            // the last cell owns the upper boundary
            let i0 = (g as usize).min(self.top[a] as usize - 1);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let o = base[2] * self.sz + base[1] * self.sy + base[0];
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        Stencil {
            nodes: [
                o,
                o + 1,
                o + self.sy,
                o + self.sy + 1,
                o + self.sz,
                o + self.sz + 1,
                o + self.sz + self.sy,
                o + self.sz + self.sy + 1,
            ],
            weights: [
                gx * gy * gz,
                fx * gy * gz,
                gx * fy * gz,
                fx * fy * gz,
                gx * gy * fz,
                fx * gy * fz,
                gx * fy * fz,
                fx * fy * fz,
            ],
        }
    }
}

pub const DENSITY_ACTIVATION_SOFTPLUS: u8 = 1;
pub const COLOR_ACTIVATION_SIGMOID: u8 = 2;
const MAGIC: &[u8; 6] = b"TPGRID";
const VERSION: u8 = 1;

impl RadianceGrid {
    pub fn new(resolution: [usize; 3], bounds: Aabb, channels: usize, init: GridInit) -> Result<Self, FieldError> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(FieldError::Resolution(resolution));
        }
        if bounds.is_degenerate() {
            return Err(FieldError::DegenerateBounds);
        }
        if channels == 0 {
            return Err(FieldError::Channels(channels));
        }
        let n = resolution.iter().product::<usize>();
        Ok(Self {
            resolution,
            bounds,
            channels,
            density: vec![init.density; n],
            color: vec![init.color; n * channels],
            background: vec![0.0; channels],
            density_scale: 1.0,
        })
    }

    pub fn node_count(&self) -> usize {
        self.density.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.density.len() + self.color.len()
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution[1] + j) * self.resolution[0] + i
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.bounds.extent();
        let lo = self.bounds.lo();
        let f = |idx: usize, axis: usize| lo[axis] + e[axis] * idx as f64 / (self.resolution[axis] - 1) as f64;
        Vec3::new(f(i, 0), f(j, 1), f(k, 2))
    }

    pub fn stencil(&self, p: &Vec3) -> Stencil {
        self.lattice().stencil(p)
    }

    pub(crate) fn lattice(&self) -> Lattice {
        let lo = self.bounds.lo();
        let e = self.bounds.extent();
        let r = self.resolution;
        Lattice {
            lo: [lo.x, lo.y, lo.z],
            scale: [0, 1, 2].map(|a| (r[a] - 1) as f64 / e[a]),
            top: [0, 1, 2].map(|a| (r[a] - 1) as f64),
            sy: r[0],
            sz: r[0] * r[1],
        }
    }

    /// Interpolated pre-activation density and color.
    pub fn interpolate_raw(&self, st: &Stencil, color_out: &mut [f64]) -> f64 {
        let c = self.channels;
        color_out.iter_mut().for_each(|v| *v = 0.0);
        let mut d = 0.0;
        for k in 0..8 {
            let (n, w) = (st.nodes[k], st.weights[k]);
            d += w * self.density[n];
            let src = &self.color[n * c..n * c + c];
            for ch in 0..c {
                color_out[ch] += w * src[ch];
            }
        }
        d
    }

    /// Activated values per node, interleaved as `[τ, c_0 .. c_{C-1}]`.
    pub fn activated_nodes(&self) -> Vec<f64> {
        let c = self.channels;
        let mut out = Vec::with_capacity(self.node_count() * (c + 1));
        for n in 0..self.node_count() {
            out.push(self.density_scale * softplus(self.density[n]));
            out.extend(self.color[n * c..(n + 1) * c].iter().map(|&v| sigmoid(v)));
        }
        out
    }

    /// Activated density and color at `p`: node values are activated, then
    /// interpolated.
    pub fn query(&self, p: &Vec3) -> (f64, Vec<f64>) {
        let st = self.stencil(p);
        let c = self.channels;
        let mut d = 0.0;
        let mut color = vec![0.0; c];
        for k in 0..8 {
            let (n, w) = (st.nodes[k], st.weights[k]);
            d += w * self.density_scale * softplus(self.density[n]);
            for ch in 0..c {
                color[ch] += w * sigmoid(self.color[n * c + ch]);
            }
        }
        (d, color)
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().chain(&self.color).all(|v| v.is_finite())
    }

    /// Order-sensitive fingerprint of the parameters.
    pub fn stamp(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.density.iter().chain(&self.color) {
            h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^ self.density_scale.to_bits().rotate_left(17) ^ (self.resolution[0] as u64) << 1 ^ (self.channels as u64) << 7
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        for n in self.resolution {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        for v in self.bounds.min.iter().chain(&self.bounds.max) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[DENSITY_ACTIVATION_SOFTPLUS, COLOR_ACTIVATION_SIGMOID])?;
        w.write_all(&self.density_scale.to_le_bytes())?;
        for v in self.background.iter().chain(&self.density).chain(&self.color) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * (self.parameter_count() + self.channels));
        self.write_checkpoint(&mut out).expect("write to memory");
        out
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, FieldError> {
        let bad = |m: &str| FieldError::Checkpoint(m.to_string());
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1).map_err(|_| bad("truncated header"))?;
        if b1[0] != VERSION {
            return Err(bad(&format!("unsupported version {}", b1[0])));
        }
        let mut u32s = [0u32; 4];
        for v in u32s.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = u32::from_le_bytes(b);
        }
        let mut f64s = [0.0; 6];
        for v in f64s.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = f64::from_le_bytes(b);
        }
        let mut act = [0u8; 2];
        r.read_exact(&mut act).map_err(|_| bad("truncated header"))?;
        if act != [DENSITY_ACTIVATION_SOFTPLUS, COLOR_ACTIVATION_SIGMOID] {
            return Err(bad("unknown activation ids"));
        }
        let resolution = [u32s[0] as usize, u32s[1] as usize, u32s[2] as usize];
        let channels = u32s[3] as usize;
        let bounds = Aabb { min: [f64s[0], f64s[1], f64s[2]], max: [f64s[3], f64s[4], f64s[5]] };
        let mut scale = [0u8; 8];
        r.read_exact(&mut scale).map_err(|_| bad("truncated header"))?;
        let density_scale = f64::from_le_bytes(scale);
        if !(density_scale > 0.0 && density_scale.is_finite()) {
            return Err(bad("density scale must be positive"));
        }
        let mut grid = RadianceGrid::new(resolution, bounds, channels, GridInit::default())?;
        grid.density_scale = density_scale;
        let mut read_f32 = |dst: &mut [f64]| -> Result<(), FieldError> {
            let mut buf = vec![0u8; dst.len() * 4];
            r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
            for (d, chunk) in dst.iter_mut().zip(buf.chunks_exact(4)) {
                *d = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
            Ok(())
        };
        read_f32(&mut grid.background)?;
        read_f32(&mut grid.density)?;
        read_f32(&mut grid.color)?;
        Ok(grid)
    }
}
