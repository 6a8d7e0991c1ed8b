//! Multi-resolution hash encoding.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::Aabb;

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub base_resolution: usize,
    pub growth: f64,
    pub log2_table_size: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            features_per_level: 2,
            base_resolution: 16,
            growth: 1.382,
            log2_table_size: 16,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Level {
    pub res: usize,
    pub dense: bool,
}

impl HashGridConfig {
    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Number of table parameters across all levels.
    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.features_per_level
    }

    pub(crate) fn level_specs(&self) -> Vec<Level> {
        let t = self.table_size() as u128;
        (0..self.levels)
            .map(|l| {
                let res = (self.base_resolution as f64 * self.growth.powi(l as i32)).floor() as usize;
                let res = res.max(1);
                let corners = (res as u128 + 1).pow(3);
                Level {
                    res,
                    dense: corners <= t,
                }
            })
            .collect()
    }
}

/// Per-point interpolation stencil: for each level, 8 table rows with their
/// trilinear weights and the weights' spatial derivatives (world units).
#[derive(Clone, Debug, Default)]
pub struct Stencil {
    pub rows: Vec<usize>,
    pub weights: Vec<f64>,
    pub dweights: Vec<[f64; 3]>,
}

impl Stencil {
    pub fn with_levels(levels: usize) -> Self {
        Self {
            rows: vec![0; levels * 8],
            weights: vec![0.0; levels * 8],
            dweights: vec![[0.0; 3]; levels * 8],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct HashGrid {
    pub config: HashGridConfig,
    pub levels: Vec<Level>,
    mask: u64,
}

impl HashGrid {
    pub fn new(config: HashGridConfig) -> Self {
        let levels = config.level_specs();
        let mask = config.table_size() as u64 - 1;
        Self {
            config,
            levels,
            mask,
        }
    }

    #[inline]
    fn row(&self, level: usize, c: [u64; 3]) -> usize {
        let lv = self.levels[level];
        let local = if lv.dense {
            let r = lv.res as u64 + 1;
            c[0] + c[1] * r + c[2] * r * r
        } else {
            (c[0].wrapping_mul(PRIMES[0]) ^ c[1].wrapping_mul(PRIMES[1]) ^ c[2].wrapping_mul(PRIMES[2]))
                & self.mask
        };
        level * self.config.table_size() + local as usize
    }

    /// Fill `st` for world point `x`. Points outside `bounds` are clamped and
    /// the spatial derivative of the clamped axis is zero.
    pub fn stencil(&self, bounds: &Aabb, x: [f64; 3], st: &mut Stencil) {
        let mut u = [0.0; 3];
        let mut inside = [true; 3];
        let mut inv_ext = [0.0; 3];
        for d in 0..3 {
            let ext = bounds.max[d] - bounds.min[d];
            inv_ext[d] = 1.0 / ext;
            let v = (x[d] - bounds.min[d]) * inv_ext[d];
            if !(0.0..=1.0).contains(&v) {
                inside[d] = false;
                if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
                    log::warn!("hash encoding: point {x:?} outside field bounds, clamping");
                }
            }
            u[d] = v.clamp(0.0, 1.0);
        }
        for (l, lv) in self.levels.iter().enumerate() {
            let res = lv.res as f64;
            let mut cell = [0u64; 3];
            let mut frac = [0.0; 3];
            let mut scale = [0.0; 3];
            for d in 0..3 {
                let p = u[d] * res;
                let c = (p.floor() as i64).clamp(0, lv.res as i64 - 1);
                cell[d] = c as u64;
                frac[d] = p - c as f64;
                scale[d] = if inside[d] { res * inv_ext[d] } else { 0.0 };
            }
            for corner in 0..8 {
                let bit = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let mut wf = [0.0; 3];
                let mut dwf = [0.0; 3];
                let mut c = [0u64; 3];
                for d in 0..3 {
                    if bit[d] == 1 {
                        wf[d] = frac[d];
                        dwf[d] = scale[d];
                        c[d] = cell[d] + 1;
                    } else {
                        wf[d] = 1.0 - frac[d];
                        dwf[d] = -scale[d];
                        c[d] = cell[d];
                    }
                }
                let k = l * 8 + corner;
                st.rows[k] = self.row(l, c);
                st.weights[k] = wf[0] * wf[1] * wf[2];
                st.dweights[k] = [dwf[0] * wf[1] * wf[2], wf[0] * dwf[1] * wf[2], wf[0] * wf[1] * dwf[2]];
            }
        }
    }
}
