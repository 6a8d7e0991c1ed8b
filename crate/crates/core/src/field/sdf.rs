//! Signed-distance MLP on top of the hash encoding, with analytic first
//! and mixed second derivatives.
//!
//! The network is `s(x) = w2 · relu(W1 [enc(x); x - c] + b1) + b2`. Because
//! ReLU has zero curvature almost everywhere, the spatial gradient
//! `∇s = Jᵀ W1ᵀ (w2 ⊙ 1[h > 0])` is multilinear in the parameters and its
//! parameter derivative can be written in closed form. [`SdfFieldParams::backward`]
//! uses that to back-propagate adjoints of both `s` and `∇s`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::hash::{HashGrid, HashGridConfig, Stencil};
use super::{Aabb, FieldError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub hidden: usize,
    /// Radius of the sphere the untrained field approximates.
    pub init_radius: f64,
    pub init_sharpness: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            hidden: 64,
            init_radius: 0.5,
            init_sharpness: 30.0,
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub table: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub log_sharpness: usize,
    pub len: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub features: usize,
}

impl Layout {
    fn new(config: &FieldConfig) -> Self {
        let features = config.grid.output_dim();
        let input_dim = features + 3;
        let hidden = config.hidden;
        let table = 0;
        let w1 = config.grid.param_count();
        let b1 = w1 + hidden * input_dim;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden;
        let log_sharpness = b2 + 1;
        Self {
            table,
            w1,
            b1,
            w2,
            b2,
            log_sharpness,
            len: log_sharpness + 1,
            input_dim,
            hidden,
            features,
        }
    }
}

/// Per-thread working memory for field evaluation.
#[derive(Clone, Debug)]
pub struct Scratch {
    stencil: Stencil,
    enc: Vec<f64>,
    jac: Vec<[f64; 3]>,
    pre: Vec<f64>,
    g_enc: Vec<f64>,
    q: Vec<f64>,
}

/// SDF value and spatial gradient at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointEval {
    pub sdf: f64,
    pub grad: [f64; 3],
}

/// Learnable geometry: hash tables, MLP weights and rendering sharpness.
#[derive(Clone, Debug)]
pub struct SdfFieldParams {
    pub config: FieldConfig,
    pub bounds: Aabb,
    /// Micrometres per scene unit.
    pub scene_scale: f64,
    pub params: Vec<f64>,
    layout: Layout,
    grid: HashGrid,
}

impl SdfFieldParams {
    /// Hash features uniform in ±1e-4, MLP initialised so the field
    /// approximates a sphere of `config.init_radius` around the box centre.
    pub fn new(config: FieldConfig, bounds: Aabb, scene_scale: f64, seed: u64) -> Self {
        let layout = Layout::new(&config);
        let grid = HashGrid::new(config.grid.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len];
        for p in &mut params[layout.table..layout.w1] {
            *p = rng.random_range(-1e-4..1e-4);
        }
        let h = layout.hidden as f64;
        let w1_dist = Normal::new(0.0, 2f64.sqrt() / h.sqrt()).expect("valid normal");
        for row in 0..layout.hidden {
            let base = layout.w1 + row * layout.input_dim;
            for d in 0..3 {
                params[base + layout.features + d] = w1_dist.sample(&mut rng);
            }
        }
        let w2_dist = Normal::new(std::f64::consts::PI.sqrt() / h.sqrt(), 1e-4).expect("valid normal");
        for p in &mut params[layout.w2..layout.b2] {
            *p = w2_dist.sample(&mut rng);
        }
        params[layout.b2] = -config.init_radius;
        params[layout.log_sharpness] = config.init_sharpness.ln();
        Self {
            config,
            bounds,
            scene_scale,
            params,
            layout,
            grid,
        }
    }

    /// Rebuild from a raw parameter vector (checkpoint loading).
    pub fn from_parts(
        config: FieldConfig,
        bounds: Aabb,
        scene_scale: f64,
        params: Vec<f64>,
    ) -> Result<Self, FieldError> {
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(FieldError::ParamCount {
                expected: layout.len,
                found: params.len(),
            });
        }
        let grid = HashGrid::new(config.grid.clone());
        Ok(Self {
            config,
            bounds,
            scene_scale,
            params,
            layout,
            grid,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.layout.len
    }

    pub fn is_empty(&self) -> bool {
        self.layout.len == 0
    }

    pub fn sharpness(&self) -> f64 {
        self.params[self.layout.log_sharpness].exp()
    }

    pub fn scratch(&self) -> Scratch {
        let l = &self.layout;
        Scratch {
            stencil: Stencil::with_levels(self.config.grid.levels),
            enc: vec![0.0; l.input_dim],
            jac: vec![[0.0; 3]; l.features],
            pre: vec![0.0; l.hidden],
            g_enc: vec![0.0; l.input_dim],
            q: vec![0.0; l.input_dim],
        }
    }

    /// Hash encoding of `x` (levels × features) without the coordinate tail.
    pub fn hash_encode(&self, x: [f64; 3]) -> Vec<f64> {
        let mut sc = self.scratch();
        self.encode(x, &mut sc);
        sc.enc[..self.layout.features].to_vec()
    }

    /// Jacobian of [`Self::hash_encode`] with respect to `x`.
    pub fn hash_encode_jacobian(&self, x: [f64; 3]) -> Vec<[f64; 3]> {
        let mut sc = self.scratch();
        self.encode(x, &mut sc);
        sc.jac.clone()
    }

    fn encode(&self, x: [f64; 3], sc: &mut Scratch) {
        let l = &self.layout;
        let f = self.config.grid.features_per_level;
        self.grid.stencil(&self.bounds, x, &mut sc.stencil);
        let c = self.bounds.center();
        for v in sc.enc[..l.features].iter_mut() {
            *v = 0.0;
        }
        for j in sc.jac.iter_mut() {
            *j = [0.0; 3];
        }
        for level in 0..self.config.grid.levels {
            for corner in 0..8 {
                let k = level * 8 + corner;
                let row = l.table + sc.stencil.rows[k] * f;
                let w = sc.stencil.weights[k];
                let dw = sc.stencil.dweights[k];
                for fi in 0..f {
                    let t = self.params[row + fi];
                    let out = level * f + fi;
                    sc.enc[out] += w * t;
                    let jo = &mut sc.jac[out];
                    jo[0] += dw[0] * t;
                    jo[1] += dw[1] * t;
                    jo[2] += dw[2] * t;
                }
            }
        }
        for d in 0..3 {
            sc.enc[l.features + d] = x[d] - c[d];
        }
    }

    /// SDF and spatial gradient, leaving intermediates in `sc` for
    /// a following [`Self::backward_with`].
    pub fn eval_with(&self, x: [f64; 3], sc: &mut Scratch) -> PointEval {
        let l = self.layout;
        self.encode(x, sc);
        let p = &self.params;
        let mut s = p[l.b2];
        for v in sc.g_enc.iter_mut() {
            *v = 0.0;
        }
        for h in 0..l.hidden {
            let row = &p[l.w1 + h * l.input_dim..l.w1 + (h + 1) * l.input_dim];
            let mut z = p[l.b1 + h];
            for (w, e) in row.iter().zip(&sc.enc) {
                z += w * e;
            }
            sc.pre[h] = z;
            if z > 0.0 {
                let w2 = p[l.w2 + h];
                s += w2 * z;
                for (g, w) in sc.g_enc.iter_mut().zip(row) {
                    *g += w2 * w;
                }
            }
        }
        let mut grad = [
            sc.g_enc[l.features],
            sc.g_enc[l.features + 1],
            sc.g_enc[l.features + 2],
        ];
        for (j, g) in sc.jac.iter().zip(&sc.g_enc[..l.features]) {
            grad[0] += j[0] * g;
            grad[1] += j[1] * g;
            grad[2] += j[2] * g;
        }
        PointEval { sdf: s, grad }
    }

    #[cfg(test)]
    pub(crate) fn grid_stencil(&self, x: [f64; 3]) -> Vec<usize> {
        let mut st = Stencil::with_levels(self.config.grid.levels);
        self.grid.stencil(&self.bounds, x, &mut st);
        st.rows
    }

    pub fn eval(&self, x: [f64; 3]) -> PointEval {
        let mut sc = self.scratch();
        self.eval_with(x, &mut sc)
    }

    pub fn sdf(&self, x: [f64; 3]) -> f64 {
        self.eval(x).sdf
    }

    /// Like [`Self::sdf`] but rejects non-finite output.
    pub fn try_sdf(&self, x: [f64; 3]) -> Result<f64, FieldError> {
        let s = self.sdf(x);
        if s.is_finite() {
            Ok(s)
        } else {
            Err(FieldError::NonFinite { point: x })
        }
    }

    pub fn sdf_gradient(&self, x: [f64; 3]) -> [f64; 3] {
        self.eval(x).grad
    }

    /// Accumulate into `grads` the parameter gradient of
    /// `d_sdf · s(x) + d_grad · ∇s(x)`.
    pub fn backward(&self, x: [f64; 3], d_sdf: f64, d_grad: [f64; 3], grads: &mut [f64]) {
        let mut sc = self.scratch();
        self.eval_with(x, &mut sc);
        self.backward_with(x, d_sdf, d_grad, grads, &mut sc);
    }

    /// As [`Self::backward`], reusing the forward state in `sc` (which must
    /// come from `eval_with` at the same `x` and parameters).
    pub fn backward_with(
        &self,
        _x: [f64; 3],
        d_sdf: f64,
        d_grad: [f64; 3],
        grads: &mut [f64],
        sc: &mut Scratch,
    ) {
        let l = self.layout;
        let f = self.config.grid.features_per_level;
        let p = &self.params;
        let has_grad = d_grad != [0.0; 3];

        // q = ∂L/∂g_enc
        if has_grad {
            for (qi, j) in sc.q[..l.features].iter_mut().zip(&sc.jac) {
                *qi = j[0] * d_grad[0] + j[1] * d_grad[1] + j[2] * d_grad[2];
            }
            sc.q[l.features..].copy_from_slice(&d_grad);
        }

        grads[l.b2] += d_sdf;
        for h in 0..l.hidden {
            let z = sc.pre[h];
            if z <= 0.0 {
                continue;
            }
            let w2 = p[l.w2 + h];
            let row_off = l.w1 + h * l.input_dim;
            let dh = d_sdf * w2;
            let mut w2_grad = d_sdf * z;
            let g_row = &mut grads[row_off..row_off + l.input_dim];
            if has_grad {
                let row = &p[row_off..row_off + l.input_dim];
                let mut wq = 0.0;
                for ((g, e), (q, w)) in g_row.iter_mut().zip(&sc.enc).zip(sc.q.iter().zip(row)) {
                    *g += dh * e + w2 * q;
                    wq += w * q;
                }
                w2_grad += wq;
            } else {
                for (g, e) in g_row.iter_mut().zip(&sc.enc) {
                    *g += dh * e;
                }
            }
            grads[l.b1 + h] += dh;
            grads[l.w2 + h] += w2_grad;
        }

        // table rows: enc[f] = Σ w_c T_c,  jac[f] = Σ dw_c T_c
        for level in 0..self.config.grid.levels {
            for corner in 0..8 {
                let k = level * 8 + corner;
                let row = l.table + sc.stencil.rows[k] * f;
                let w = sc.stencil.weights[k];
                let dw = sc.stencil.dweights[k];
                let dwg = if has_grad {
                    dw[0] * d_grad[0] + dw[1] * d_grad[1] + dw[2] * d_grad[2]
                } else {
                    0.0
                };
                for fi in 0..f {
                    let out = level * f + fi;
                    let g = sc.g_enc[out];
                    grads[row + fi] += d_sdf * g * w + g * dwg;
                }
            }
        }
    }
}
