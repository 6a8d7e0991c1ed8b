//! Iso-surface extraction and mesh export.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{Aabb, SdfFieldParams};

use super::tables::TRIANGLE_TABLE;
use super::ExtractError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    /// Scene units.
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Micrometres per scene unit.
    pub scene_scale: f64,
}

/// Units and provenance written next to an exported mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSidecar {
    pub units: String,
    pub micrometres_per_unit: f64,
    pub resolution: usize,
    pub vertices: usize,
    pub triangles: usize,
    pub bounds: Aabb,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: [u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    /// Indices in range, three distinct corners and finite coordinates.
    /// Zero-area slivers are allowed: marching cubes emits them where the
    /// surface passes through a grid point, and dropping them opens holes.
    pub fn validate(&self) -> Result<(), ExtractError> {
        let n = self.vertices.len() as u32;
        for (k, &t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(ExtractError::BadMesh(format!("triangle {k} indexes past {n} vertices")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(ExtractError::BadMesh(format!("triangle {k} is degenerate")));
            }
        }
        if let Some(i) = self.vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(ExtractError::BadMesh(format!("vertex {i} is not finite")));
        }
        Ok(())
    }

    /// `V − E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        let mut used = std::collections::HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
                used.insert(a);
            }
        }
        used.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Enclosed volume, positive for outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                let x = cross(b, c);
                (a[0] * x[0] + a[1] * x[1] + a[2] * x[2]) / 6.0
            })
            .sum()
    }

    pub fn write_obj(&self, path: &Path) -> Result<(), ExtractError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# units: scene (x{} um)", self.scene_scale)?;
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary little-endian PLY, float32 positions.
    pub fn write_ply(&self, path: &Path) -> Result<(), ExtractError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write!(
            w,
            "ply\nformat binary_little_endian 1.0\ncomment units scene, {} um per unit\n\
             element vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
             element face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.scene_scale,
            self.vertices.len(),
            self.triangles.len()
        )?;
        for v in &self.vertices {
            for c in v {
                w.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
        for t in &self.triangles {
            w.write_all(&[3u8])?;
            for &i in t {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar(&self, resolution: usize, bounds: Aabb) -> MeshSidecar {
        MeshSidecar {
            units: "scene".into(),
            micrometres_per_unit: self.scene_scale,
            resolution,
            vertices: self.vertices.len(),
            triangles: self.triangles.len(),
            bounds,
        }
    }
}

/// Base corner offset and axis of each cube edge.
const EDGES: [([usize; 3], usize); 12] = [
    ([0, 0, 0], 0),
    ([1, 0, 0], 1),
    ([0, 1, 0], 0),
    ([0, 0, 0], 1),
    ([0, 0, 1], 0),
    ([1, 0, 1], 1),
    ([0, 1, 1], 0),
    ([0, 0, 1], 1),
    ([0, 0, 0], 2),
    ([1, 0, 0], 2),
    ([1, 1, 0], 2),
    ([0, 1, 0], 2),
];

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Zero level set of `f` over `bounds` sampled on `resolution³` cells, with
/// vertices shared between neighbouring cells. Outward (positive-side)
/// triangle orientation.
pub fn marching_cubes_fn<F>(f: F, bounds: Aabb, resolution: usize, scene_scale: f64) -> TriangleMesh
where
    F: Fn([f64; 3]) -> f64 + Sync,
{
    let n = resolution + 1;
    let step: [f64; 3] = std::array::from_fn(|d| (bounds.max[d] - bounds.min[d]) / resolution as f64);
    let point = |i: usize, j: usize, k: usize| {
        [
            bounds.min[0] + i as f64 * step[0],
            bounds.min[1] + j as f64 * step[1],
            bounds.min[2] + k as f64 * step[2],
        ]
    };
    let idx = |i: usize, j: usize, k: usize| (k * n + j) * n + i;
    let values: Vec<f32> = (0..n * n * n)
        .into_par_iter()
        .map(|l| {
            let (i, j, k) = (l % n, (l / n) % n, l / (n * n));
            f(point(i, j, k)) as f32
        })
        .collect();

    let mut mesh = TriangleMesh {
        scene_scale,
        ..Default::default()
    };
    let mut shared: HashMap<usize, u32> = HashMap::new();
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let vals = CORNERS.map(|c| values[idx(i + c[0], j + c[1], k + c[2])] as f64);
                let mut case = 0usize;
                for (b, v) in vals.iter().enumerate() {
                    if *v < 0.0 {
                        case |= 1 << b;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                let mut vert = |e: usize, mesh: &mut TriangleMesh| -> u32 {
                    let (base, axis) = EDGES[e];
                    let (a, b) = ([i + base[0], j + base[1], k + base[2]], axis);
                    let key = idx(a[0], a[1], a[2]) * 3 + b;
                    *shared.entry(key).or_insert_with(|| {
                        let mut c = a;
                        c[b] += 1;
                        let va = values[idx(a[0], a[1], a[2])] as f64;
                        let vb = values[idx(c[0], c[1], c[2])] as f64;
                        let t = (va / (va - vb)).clamp(1e-6, 1.0 - 1e-6);
                        let mut p = point(a[0], a[1], a[2]);
                        p[b] += t * step[b];
                        mesh.vertices.push(p);
                        (mesh.vertices.len() - 1) as u32
                    })
                };
                let mut s = 0;
                while s + 2 < 16 && row[s] >= 0 {
                    let tri = [
                        vert(row[s] as usize, &mut mesh),
                        vert(row[s + 2] as usize, &mut mesh),
                        vert(row[s + 1] as usize, &mut mesh),
                    ];
                    mesh.triangles.push(tri);
                    s += 3;
                }
            }
        }
    }
    mesh
}

/// Mesh of a trained field's zero level set over its bounding box.
pub fn marching_cubes(field: &SdfFieldParams, resolution: usize) -> Result<TriangleMesh, ExtractError> {
    if resolution < 8 {
        return Err(ExtractError::Resolution(resolution));
    }
    let mesh = marching_cubes_fn(|p| field.sdf(p), field.bounds, resolution, field.scene_scale);
    if mesh.is_empty() {
        log::warn!("field has no zero crossing inside its bounds; mesh is empty");
    }
    Ok(mesh)
}
