//! Raw, unconstrained parameterisations of the forward model per ablation.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diffcore::Real;
use crate::photomodel::{forward, ForwardKind, ForwardModelParams, PhiView, Quadrant};

/// Initial `c` and `d`, in intensity units.
pub const INIT_CD: f64 = 30.0;
/// Raw `c` and `e` are stored in units of this many intensity levels so a
/// fixed-size optimizer step moves them at a useful rate.
pub const INTENSITY_UNIT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// Per-quadrant `c, d, e`, shared polynomial `p`.
    /// Raw layout `[c×4, ln d×4, e×4, p×4]`, with `c` and `e` divided by
    /// [`INTENSITY_UNIT`].
    Full,
    /// As `Full` with the secant emission; `p` stays at zero.
    Secant,
    /// One `c, d, e` for all quadrants. Raw layout `[c, ln d, e, p×4]`,
    /// scaled as in `Full`.
    Shared,
    /// Only `ln(d/c)`, scaling photometric-stereo slopes.
    Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedPhi {
    pub mode: PhiMode,
    pub raw: Vec<f64>,
    pub detector_rotation: f64,
    /// Per-quadrant offsets measured from the data (used by `Ratio`, whose
    /// raw vector has no `e`).
    pub mean_intensity: [f64; 4],
}

/// Mean quadrant intensity over pixels with a coarse depth (all pixels if
/// none have one).
pub fn mean_intensity(dataset: &Dataset) -> [f64; 4] {
    let mut sum = [0.0; 4];
    let mut n = 0usize;
    for v in &dataset.views {
        let any = v.coarse_depth.iter().any(|z| z.is_finite());
        for (i, z) in v.coarse_depth.iter().enumerate() {
            if any && !z.is_finite() {
                continue;
            }
            for q in 0..4 {
                sum[q] += v.bse[q][i] as f64;
            }
            n += 1;
        }
    }
    sum.map(|s| s / n.max(1) as f64)
}

impl LearnedPhi {
    /// `c = d = 30`, `e` = mean intensity − `c`, `p = 0`.
    pub fn init(dataset: &Dataset, mode: PhiMode) -> Self {
        let mean = mean_intensity(dataset);
        let ln_d = INIT_CD.ln();
        let u = INTENSITY_UNIT;
        let raw = match mode {
            PhiMode::Full | PhiMode::Secant => {
                let mut r = vec![INIT_CD / u; 4];
                r.extend([ln_d; 4]);
                r.extend(mean.map(|m| (m - INIT_CD) / u));
                r.extend([0.0; 4]);
                r
            }
            PhiMode::Shared => {
                let m = mean.iter().sum::<f64>() / 4.0;
                vec![INIT_CD / u, ln_d, (m - INIT_CD) / u, 0.0, 0.0, 0.0, 0.0]
            }
            PhiMode::Ratio => vec![0.0],
        };
        Self {
            mode,
            raw,
            detector_rotation: dataset.detector_rotation(),
            mean_intensity: mean,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn kind(&self) -> ForwardKind {
        match self.mode {
            PhiMode::Secant => ForwardKind::Secant,
            _ => ForwardKind::Polynomial,
        }
    }

    /// Model parameters from raw values of any scalar type. `None` for `Ratio`.
    pub fn view<S: Real>(&self, raw: &[S]) -> Option<PhiView<S>> {
        let u = INTENSITY_UNIT;
        match self.mode {
            PhiMode::Full | PhiMode::Secant => Some(PhiView {
                c: std::array::from_fn(|q| raw[q] * u),
                d: std::array::from_fn(|q| raw[4 + q].exp()),
                e: std::array::from_fn(|q| raw[8 + q] * u),
                p: [raw[12], raw[13], raw[14], raw[15]],
            }),
            PhiMode::Shared => {
                let d = raw[1].exp();
                Some(PhiView {
                    c: [raw[0] * u; 4],
                    d: [d; 4],
                    e: [raw[2] * u; 4],
                    p: [raw[3], raw[4], raw[5], raw[6]],
                })
            }
            PhiMode::Ratio => None,
        }
    }

    /// Refit `c`, `d` and `e` by linear least squares to camera-frame normals
    /// and their observed quadrant intensities, holding `p` fixed. Under the
    /// secant emission `c` and `e` are not separable, so only `d` and `e`
    /// move. Returns `false` (leaving the values untouched) when the system
    /// is degenerate or the fit gives a non-positive `d`. No-op for `Ratio`.
    pub fn calibrate(&mut self, obs: &[([f64; 3], [f64; 4])]) -> bool {
        let Some(cur) = self.view(&self.raw) else {
            return false;
        };
        let secant = self.mode == PhiMode::Secant;
        let unit = |c: f64, d: f64, e: f64| PhiView {
            c: [c; 4],
            d: [d; 4],
            e: [e; 4],
            p: cur.p,
        };
        let (basis_c, basis_d) = (unit(1.0, 0.0, 0.0), unit(0.0, 1.0, 0.0));
        let rot = self.detector_rotation;
        let kind = self.kind();
        let rows = |q: Quadrant| {
            obs.iter().map(move |(n, b)| {
                let fd = forward(*n, q, &basis_d, rot, kind);
                let fc = if secant { 0.0 } else { forward(*n, q, &basis_c, rot, kind) };
                (fc, fd, b[q.index()])
            })
        };
        let groups: Vec<Vec<Quadrant>> = match self.mode {
            PhiMode::Shared => vec![Quadrant::ALL.to_vec()],
            _ => Quadrant::ALL.iter().map(|&q| vec![q]).collect(),
        };
        let mut fits = Vec::with_capacity(groups.len());
        for group in &groups {
            let dim = if secant { 2 } else { 3 };
            let mut ata = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            let mut atb = nalgebra::DVector::<f64>::zeros(dim);
            for &q in group {
                for (fc, fd, b) in rows(q) {
                    let a: Vec<f64> = if secant { vec![fd, 1.0] } else { vec![fc, fd, 1.0] };
                    for i in 0..dim {
                        atb[i] += a[i] * b;
                        for j in 0..dim {
                            ata[(i, j)] += a[i] * a[j];
                        }
                    }
                }
            }
            let Some(x) = ata.cholesky().map(|ch| ch.solve(&atb)) else {
                return false;
            };
            let (c, d, e) = if secant {
                (cur.c[group[0].index()], x[0], x[1] - cur.c[group[0].index()])
            } else {
                (x[0], x[1], x[2])
            };
            if !(d > 0.0 && c.is_finite() && e.is_finite()) {
                return false;
            }
            fits.push((group.clone(), c, d, e));
        }
        let u = INTENSITY_UNIT;
        for (group, c, d, e) in fits {
            match self.mode {
                PhiMode::Shared => {
                    self.raw[0] = c / u;
                    self.raw[1] = d.ln();
                    self.raw[2] = e / u;
                }
                _ => {
                    let q = group[0].index();
                    self.raw[q] = c / u;
                    self.raw[4 + q] = d.ln();
                    self.raw[8 + q] = e / u;
                }
            }
        }
        true
    }

    /// Learned `d/c` of the ratio parameterisation.
    pub fn d_over_c(&self) -> Option<f64> {
        (self.mode == PhiMode::Ratio).then(|| self.raw[0].exp())
    }

    /// Plain parameters. For `Ratio` this is a Lambertian model with the
    /// learned `d/c` and the measured offsets, which is what the slopes imply.
    pub fn params(&self) -> ForwardModelParams {
        match self.view(&self.raw) {
            Some(v) => ForwardModelParams {
                c: v.c,
                d: v.d,
                e: v.e,
                p: if self.mode == PhiMode::Secant { [0.0; 4] } else { v.p },
                detector_rotation: self.detector_rotation,
                kind: self.kind(),
            },
            None => {
                let d = INIT_CD * self.raw[0].exp();
                ForwardModelParams {
                    c: [INIT_CD; 4],
                    d: [d; 4],
                    e: self.mean_intensity.map(|m| m - INIT_CD),
                    p: [0.0; 4],
                    detector_rotation: self.detector_rotation,
                    kind: ForwardKind::Polynomial,
                }
            }
        }
    }
}
