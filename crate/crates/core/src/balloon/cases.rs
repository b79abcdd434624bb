//! Marching-cubes case table, derived at first use from the cube's face
//! rules rather than typed in.
//!
//! Corner `c` sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`. On every face
//! the inside corners are cut off one run at a time, so faces with two
//! diagonal inside corners always separate them. Because a face's segments
//! depend only on that face's four corners, neighbouring cells agree and the
//! resulting surface is closed.

use std::sync::OnceLock;

pub const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

pub fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

fn edge_index(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
        .expect("corners share an edge")
}

/// Faces as corner cycles, counter-clockwise seen from outside the cube.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        for side in 0..2 {
            let mut corners: Vec<usize> = (0..8).filter(|&c| corner_offset(c)[axis] == side).collect();
            // order around the face by angle in the face plane
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            corners.sort_by(|&a, &b| {
                let ang = |c: usize| {
                    let o = corner_offset(c);
                    (o[v] as f64 - 0.5).atan2(o[u] as f64 - 0.5)
                };
                ang(a).partial_cmp(&ang(b)).unwrap()
            });
            // (u, v, axis) is right-handed, so increasing angle is CCW seen
            // from +axis; flip for the low side.
            if side == 0 {
                corners.reverse();
            }
            out.push([corners[0], corners[1], corners[2], corners[3]]);
        }
    }
    out
}

fn case_triangles(mask: usize, faces: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let inside = |c: usize| mask & (1 << c) != 0;
    // next[e] = exit edge of the segment entering at crossing edge e
    let mut next = [usize::MAX; 12];
    for f in faces {
        let s: Vec<bool> = f.iter().map(|&c| inside(c)).collect();
        if s.iter().all(|&x| x) || s.iter().all(|&x| !x) {
            continue;
        }
        for k in 0..4 {
            // run of inside corners starting at k
            if !s[k] || s[(k + 3) % 4] {
                continue;
            }
            let mut end = k;
            while s[(end + 1) % 4] {
                end = (end + 1) % 4;
            }
            let entry = edge_index(f[(k + 3) % 4], f[k]);
            let exit = edge_index(f[end], f[(end + 1) % 4]);
            next[entry] = exit;
        }
    }
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            cycle.push(e);
            e = next[e];
        }
        for i in 1..cycle.len() - 1 {
            tris.push([cycle[0], cycle[i], cycle[i + 1]]);
        }
    }
    tris
}

fn build() -> Vec<Vec<[usize; 3]>> {
    let faces = faces();
    let mut table: Vec<Vec<[usize; 3]>> = (0..256).map(|m| case_triangles(m, &faces)).collect();

    // pick the winding so that triangles face away from inside corners
    let mid = |e: usize| {
        let (a, b) = EDGES[e];
        let (pa, pb) = (corner_offset(a), corner_offset(b));
        [0, 1, 2].map(|i| 0.5 * (pa[i] + pb[i]) as f64)
    };
    let t = table[1][0];
    let (p0, p1, p2) = (mid(t[0]), mid(t[1]), mid(t[2]));
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let (u, v) = (sub(p1, p0), sub(p2, p0));
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let away = [p0[0] + p1[0] + p2[0], p0[1] + p1[1] + p2[1], p0[2] + p1[2] + p2[2]];
    if n[0] * away[0] + n[1] * away[1] + n[2] * away[2] < 0.0 {
        for case in table.iter_mut() {
            for tri in case.iter_mut() {
                tri.swap(1, 2);
            }
        }
    }
    table
}

/// Triangles (as cube-edge triples) for each of the 256 inside/outside masks.
pub fn table() -> &'static [Vec<[usize; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[usize; 3]>>> = OnceLock::new();
    TABLE.get_or_init(build)
}
