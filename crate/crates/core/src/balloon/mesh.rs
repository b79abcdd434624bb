use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::cases::{self, EDGES};
use super::{BalloonError, BalloonShape};
use crate::geometry::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn validate(&self) -> Result<(), BalloonError> {
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(BalloonError::InvalidMesh(format!("triangle {i} has an index out of range")));
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Signed volume; positive for a closed mesh with outward-facing winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn min_triangle_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).fold(f64::INFINITY, f64::min)
    }

    fn directed_edges(&self) -> HashMap<(u32, u32), usize> {
        let mut edges = HashMap::with_capacity(self.triangles.len() * 3);
        for t in &self.triangles {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        edges
    }

    pub fn edge_count(&self) -> usize {
        let mut undirected: HashMap<(u32, u32), usize> = HashMap::new();
        for ((a, b), n) in self.directed_edges() {
            *undirected.entry((a.min(b), a.max(b))).or_insert(0) += n;
        }
        undirected.len()
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut undirected: HashMap<(u32, u32), usize> = HashMap::new();
        for ((a, b), n) in self.directed_edges() {
            *undirected.entry((a.min(b), a.max(b))).or_insert(0) += n;
        }
        !self.triangles.is_empty() && undirected.values().all(|&n| n == 2)
    }

    /// Every directed edge appears once and is matched by its reverse.
    pub fn is_consistently_oriented(&self) -> bool {
        let edges = self.directed_edges();
        edges.iter().all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Component index of every triangle, numbered by first appearance,
    /// and the component count.
    fn triangle_components(&self) -> (Vec<usize>, usize) {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(p: &mut [u32], mut i: u32) -> u32 {
            while p[i as usize] != i {
                p[i as usize] = p[p[i as usize] as usize];
                i = p[i as usize];
            }
            i
        }
        for t in &self.triangles {
            let r0 = find(&mut parent, t[0]);
            for &v in &t[1..] {
                let r = find(&mut parent, v);
                parent[r as usize] = r0;
            }
        }
        let mut ids: HashMap<u32, usize> = HashMap::new();
        let labels = self
            .triangles
            .iter()
            .map(|t| {
                let root = find(&mut parent, t[0]);
                let next = ids.len();
                *ids.entry(root).or_insert(next)
            })
            .collect();
        (labels, ids.len())
    }

    /// Number of edge-connected components over the triangles.
    pub fn connected_components(&self) -> usize {
        self.triangle_components().1
    }

    /// Removes closed components enclosing less than `min_volume` and any
    /// vertices left unused. Order of what remains is preserved.
    pub fn drop_fragments(&mut self, min_volume: f64) {
        let (labels, count) = self.triangle_components();
        let mut volume = vec![0.0; count];
        for (t, &c) in self.triangles.iter().zip(&labels) {
            let [a, b, d] = t.map(|i| self.vertices[i as usize]);
            volume[c] += a.dot(&b.cross(&d)) / 6.0;
        }
        if volume.iter().all(|v| v.abs() >= min_volume) {
            return;
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::with_capacity(self.vertices.len());
        let mut triangles = Vec::with_capacity(self.triangles.len());
        for (t, &c) in self.triangles.iter().zip(&labels) {
            if volume[c].abs() < min_volume {
                continue;
            }
            triangles.push(t.map(|i| {
                if remap[i as usize] == u32::MAX {
                    remap[i as usize] = vertices.len() as u32;
                    vertices.push(self.vertices[i as usize]);
                }
                remap[i as usize]
            }));
        }
        self.vertices = vertices;
        self.triangles = triangles;
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for v in &self.vertices {
            b.include(v);
        }
        b
    }
}

/// Sampling lattice used by [`extract_mesh`].
#[derive(Debug, Clone, Copy)]
pub struct MeshGrid {
    pub bounds: Aabb,
    /// Cells per axis.
    pub cells: [usize; 3],
    pub cell: Vec3,
}

impl MeshGrid {
    /// `resolution` cells per axis covering the shape's bounds padded by two
    /// cells on every side.
    pub fn around(bounds: &Aabb, resolution: usize) -> Self {
        let inner = (resolution - 4) as f64;
        let cell = bounds.extent().map(|e| e.max(1e-9) / inner);
        let pad = cell * 2.0;
        Self { bounds: Aabb::new(bounds.lo() - pad, bounds.hi() + pad), cells: [resolution; 3], cell }
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.bounds.lo() + Vec3::new(i as f64 * self.cell.x, j as f64 * self.cell.y, k as f64 * self.cell.z)
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell.norm()
    }
}

pub const MIN_RESOLUTION: usize = 16;

/// Marching cubes over the union distance with linear edge interpolation.
pub fn extract_mesh(shape: &BalloonShape, grid_resolution: usize) -> Result<TriMesh, BalloonError> {
    if shape.is_empty() {
        return Err(BalloonError::EmptyShape);
    }
    if grid_resolution < MIN_RESOLUTION {
        return Err(BalloonError::Resolution(grid_resolution));
    }
    let grid = MeshGrid::around(&shape.bounds(), grid_resolution);
    let mut mesh = march(&grid, |p| shape.sdf(p));
    // slivers where a cone tip thins below the lattice spacing
    mesh.drop_fragments(grid.cell.x * grid.cell.y * grid.cell.z);
    Ok(mesh)
}

pub(crate) fn march<F>(grid: &MeshGrid, field: F) -> TriMesh
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    let [cx, cy, cz] = grid.cells;
    let (nx, ny, nz) = (cx + 1, cy + 1, cz + 1);
    let idx = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;

    let mut values = vec![0.0; nx * ny * nz];
    values.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                slab[j * nx + i] = field(&grid.point(i, j, k));
            }
        }
    });

    let table = cases::table();
    let mut mesh = TriMesh::default();
    let mut edge_vertex: HashMap<usize, u32> = HashMap::new();

    for k in 0..cz {
        for j in 0..cy {
            for i in 0..cx {
                let mut corner_val = [0.0; 8];
                let mut mask = 0usize;
                for c in 0..8 {
                    let o = cases::corner_offset(c);
                    let v = values[idx(i + o[0], j + o[1], k + o[2])];
                    corner_val[c] = v;
                    if v < 0.0 {
                        mask |= 1 << c;
                    }
                }
                let tris = &table[mask];
                if tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for tri in tris {
                    let mut out = [0u32; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        if local[e] == u32::MAX {
                            let (a, b) = EDGES[e];
                            let (oa, ob) = (cases::corner_offset(a), cases::corner_offset(b));
                            let (ia, ja, ka) = (i + oa[0], j + oa[1], k + oa[2]);
                            let axis = (0..3).find(|&d| oa[d] != ob[d]).unwrap();
                            // key by the lower lattice point and edge direction
                            let (li, lj, lk) = (i + oa[0].min(ob[0]), j + oa[1].min(ob[1]), k + oa[2].min(ob[2]));
                            let key = idx(li, lj, lk) * 3 + axis;
                            local[e] = *edge_vertex.entry(key).or_insert_with(|| {
                                let (va, vb) = (corner_val[a], corner_val[b]);
                                let t = (va / (va - vb)).clamp(1e-3, 1.0 - 1e-3);
                                let pa = grid.point(ia, ja, ka);
                                let pb = grid.point(i + ob[0], j + ob[1], k + ob[2]);
                                mesh.vertices.push(pa + (pb - pa) * t);
                                (mesh.vertices.len() - 1) as u32
                            });
                        }
                        out[slot] = local[e];
                    }
                    mesh.triangles.push(out);
                }
            }
        }
    }
    mesh
}

/// Wavefront OBJ text with 1-based indices and outward (counter-clockwise)
/// faces.
pub fn export_obj(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 56 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        writeln!(out, "v {:.9e} {:.9e} {:.9e}", v.x, v.y, v.z).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    out
}
