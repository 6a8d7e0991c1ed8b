//! Analytic test scenes inside the unit cube centred on the origin.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Top of the support slab every scene except the sphere stands on.
pub const SLAB_TOP: f64 = -0.25;
const SLAB_BOTTOM: f64 = -0.45;
const SLAB_HALF: f64 = 0.46;

pub const SPHERE_RADIUS: f64 = 0.3;
pub const PARABOLOID_HEIGHT: f64 = 0.2;
pub const PARABOLOID_RADIUS: f64 = 0.35;
const TIER_HEIGHT: f64 = 0.08;
const TIER_HALF: [f64; 3] = [0.3, 0.2, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// The bare support slab.
    Plane,
    Sphere,
    Paraboloid,
    /// Three stacked square tiers.
    Pyramid,
    /// Two crossed walls, casting shadows toward every quadrant.
    Wall,
    /// Union of a half-buried ball, a block and a wall.
    Composite,
}

impl SceneKind {
    pub const ALL: [SceneKind; 6] = [
        SceneKind::Plane,
        SceneKind::Sphere,
        SceneKind::Paraboloid,
        SceneKind::Pyramid,
        SceneKind::Wall,
        SceneKind::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Plane => "plane",
            SceneKind::Sphere => "sphere",
            SceneKind::Paraboloid => "paraboloid",
            SceneKind::Pyramid => "pyramid",
            SceneKind::Wall => "wall",
            SceneKind::Composite => "composite",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .or(match s {
                "step" | "stepped_pyramid" => Some(SceneKind::Pyramid),
                "occluder" | "wall_with_occluder" => Some(SceneKind::Wall),
                _ => None,
            })
            .ok_or_else(|| {
                let names: Vec<_> = SceneKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown scene '{s}' (expected one of {})", names.join(", "))
            })
    }
}

fn sd_box(p: [f64; 3], center: [f64; 3], half: [f64; 3]) -> f64 {
    let q = [
        (p[0] - center[0]).abs() - half[0],
        (p[1] - center[1]).abs() - half[1],
        (p[2] - center[2]).abs() - half[2],
    ];
    let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2) + q[2].max(0.0).powi(2)).sqrt();
    outside + q[0].max(q[1]).max(q[2]).min(0.0)
}

fn sd_sphere(p: [f64; 3], center: [f64; 3], r: f64) -> f64 {
    ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) + (p[2] - center[2]).powi(2)).sqrt() - r
}

fn slab(p: [f64; 3]) -> f64 {
    sd_box(
        p,
        [0.0, 0.0, 0.5 * (SLAB_TOP + SLAB_BOTTOM)],
        [SLAB_HALF, SLAB_HALF, 0.5 * (SLAB_TOP - SLAB_BOTTOM)],
    )
}

/// Paraboloid bump fused with the slab. The height field has slope at most
/// `2h/r`, so the vertical gap divided by `√(1 + slope²)` never overestimates
/// the distance.
fn paraboloid_on_slab(p: [f64; 3]) -> f64 {
    let (h, r) = (PARABOLOID_HEIGHT, PARABOLOID_RADIUS);
    let rho2 = p[0] * p[0] + p[1] * p[1];
    let top = SLAB_TOP + h * (1.0 - rho2 / (r * r)).max(0.0);
    let lip = (1.0 + (2.0 * h / r).powi(2)).sqrt();
    ((p[2] - top) / lip)
        .max(SLAB_BOTTOM - p[2])
        .max(p[0].abs() - SLAB_HALF)
        .max(p[1].abs() - SLAB_HALF)
}

impl SceneKind {
    /// Signed distance bound: exact zero set, Lipschitz constant ≤ 1, exact
    /// distance for every scene except near the paraboloid.
    pub fn sdf(self, p: [f64; 3]) -> f64 {
        match self {
            SceneKind::Plane => slab(p),
            SceneKind::Sphere => sd_sphere(p, [0.0; 3], SPHERE_RADIUS),
            SceneKind::Paraboloid => paraboloid_on_slab(p),
            SceneKind::Pyramid => {
                let mut s = slab(p);
                for (k, &half) in TIER_HALF.iter().enumerate() {
                    let zc = SLAB_TOP + (k as f64 + 0.5) * TIER_HEIGHT;
                    s = s.min(sd_box(p, [0.0, 0.0, zc], [half, half, 0.5 * TIER_HEIGHT]));
                }
                s
            }
            SceneKind::Wall => {
                let zc = SLAB_TOP + 0.15;
                slab(p)
                    .min(sd_box(p, [0.0, 0.0, zc], [0.03, 0.3, 0.15]))
                    .min(sd_box(p, [0.0, 0.0, zc], [0.3, 0.03, 0.15]))
            }
            SceneKind::Composite => slab(p)
                .min(sd_sphere(p, [-0.2, -0.12, SLAB_TOP], 0.15))
                .min(sd_box(p, [0.18, 0.14, SLAB_TOP + 0.06], [0.1, 0.08, 0.06]))
                .min(sd_box(p, [0.15, -0.2, SLAB_TOP + 0.1], [0.15, 0.025, 0.1])),
        }
    }

    /// Unit outward normal from central differences of [`Self::sdf`].
    pub fn normal(self, p: [f64; 3]) -> [f64; 3] {
        let h = 1e-6;
        let mut g = [0.0; 3];
        for d in 0..3 {
            let mut a = p;
            let mut b = p;
            a[d] += h;
            b[d] -= h;
            g[d] = self.sdf(a) - self.sdf(b);
        }
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if n == 0.0 {
            return [0.0, 0.0, 1.0];
        }
        [g[0] / n, g[1] / n, g[2] / n]
    }

    /// Vertical extent of the geometry, used to scale the coarse-depth noise.
    pub fn height_range(self) -> f64 {
        let top = match self {
            SceneKind::Plane => SLAB_TOP,
            SceneKind::Sphere => return 2.0 * SPHERE_RADIUS,
            SceneKind::Paraboloid => SLAB_TOP + PARABOLOID_HEIGHT,
            SceneKind::Pyramid => SLAB_TOP + 3.0 * TIER_HEIGHT,
            SceneKind::Wall => SLAB_TOP + 0.3,
            SceneKind::Composite => SLAB_TOP + 0.2,
        };
        top - SLAB_BOTTOM
    }

    /// Whether the scene is convex (no cast shadows under overhead lights).
    pub fn is_convex(self) -> bool {
        matches!(self, SceneKind::Sphere | SceneKind::Plane)
    }
}

/// Sphere tracing along a unit direction; returns the hit parameter.
pub fn trace(kind: SceneKind, origin: [f64; 3], dir: [f64; 3], t0: f64, t1: f64) -> Option<f64> {
    let mut t = t0;
    for _ in 0..1024 {
        if t > t1 {
            return None;
        }
        let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
        let s = kind.sdf(p);
        if s < 1e-7 {
            return Some(t);
        }
        t += s;
    }
    None
}
