//! Photometric stereo from the four quadrant images and least-squares
//! integration of the resulting gradient field.
//!
//! Image convention: pixel `(row, col)` sits at `x = col`, `y = row`, height
//! grows toward the detector and `n = normalize(−∂z/∂x, −∂z/∂y, 1)`.

use std::collections::VecDeque;

use super::PhotoError;

/// Per-pixel surface slopes, row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMaps {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    /// Pixels where the quadrant sums were usable; the others carry the
    /// slope of their nearest valid neighbour.
    pub valid: Vec<bool>,
}

fn check_len(len: usize, expected: usize) -> Result<(), PhotoError> {
    if len != expected {
        return Err(PhotoError::SizeMismatch { expected, found: len });
    }
    Ok(())
}

/// Slopes from quadrant differences. `images` are A, B, C, D.
///
/// The normalised differences measure the normal's tilt in the detector
/// frame; they are rotated into the image frame and negated, since a surface
/// rising toward +x tilts its normal toward −x.
pub fn ps_gradients(
    images: [&[f64]; 4],
    width: usize,
    height: usize,
    d_over_c: f64,
    detector_rotation: f64,
) -> Result<GradientMaps, PhotoError> {
    let n = width * height;
    for img in images {
        check_len(img.len(), n)?;
    }
    let [a, b, c, d] = images;
    let c_over_d = 1.0 / d_over_c;
    let (sr, cr) = detector_rotation.sin_cos();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let sx = a[i] + b[i];
        let sy = c[i] + d[i];
        if !(sx > 0.0 && sy > 0.0) {
            continue;
        }
        let rx = (a[i] - b[i]) / sx * c_over_d;
        let ry = (c[i] - d[i]) / sy * c_over_d;
        gx[i] = -(cr * rx - sr * ry);
        gy[i] = -(sr * rx + cr * ry);
        valid[i] = true;
    }
    infill_nearest(&mut gx, &mut gy, &valid, width, height);
    Ok(GradientMaps {
        width,
        height,
        gx,
        gy,
        valid,
    })
}

/// Breadth-first copy of valid values into invalid pixels.
fn infill_nearest(gx: &mut [f64], gy: &mut [f64], valid: &[bool], width: usize, height: usize) {
    let mut done = valid.to_vec();
    let mut queue: VecDeque<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / width, i % width);
        let mut visit = |j: usize| {
            if !done[j] {
                done[j] = true;
                gx[j] = gx[i];
                gy[j] = gy[i];
                queue.push_back(j);
            }
        };
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < width {
            visit(i + 1);
        }
        if r > 0 {
            visit(i - width);
        }
        if r + 1 < height {
            visit(i + width);
        }
    }
}

/// Neighbouring pixel pairs with both ends valid, and their target height
/// differences (mean of the two end slopes, exact for quadratic surfaces).
fn edges(gx: &[f64], gy: &[f64], valid: &[bool], width: usize, height: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(2 * width * height);
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if !valid[i] {
                continue;
            }
            if c + 1 < width && valid[i + 1] {
                out.push((i, i + 1, 0.5 * (gx[i] + gx[i + 1])));
            }
            if r + 1 < height && valid[i + width] {
                out.push((i, i + width, 0.5 * (gy[i] + gy[i + width])));
            }
        }
    }
    out
}

fn laplacian(edges: &[(usize, usize, f64)], z: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for &(a, b, _) in edges {
        let d = z[b] - z[a];
        out[b] += d;
        out[a] -= d;
    }
}

/// Connected components of the edge graph; isolated pixels get their own label.
fn components(edges: &[(usize, usize, f64)], n: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(a, b, _) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

fn remove_component_means(v: &mut [f64], label: &[usize], mask: &[bool]) {
    let n = v.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        if mask[i] {
            sum[label[i]] += v[i];
            count[label[i]] += 1;
        }
    }
    for i in 0..n {
        if mask[i] {
            v[i] -= sum[label[i]] / count[label[i]] as f64;
        }
    }
}

/// Least-squares height from slopes in pixel units.
///
/// Minimises the squared mismatch between forward differences and the slope
/// targets over all edges joining two valid pixels, by conjugate gradients
/// on the normal equations. Each connected region is shifted to zero mean;
/// invalid pixels come back as NaN.
pub fn integrate_gradients(
    gx: &[f64],
    gy: &[f64],
    valid: &[bool],
    width: usize,
    height: usize,
) -> Result<Vec<f64>, PhotoError> {
    let n = width * height;
    check_len(gx.len(), n)?;
    check_len(gy.len(), n)?;
    check_len(valid.len(), n)?;
    if !valid.iter().any(|&v| v) {
        return Err(PhotoError::NoValidPixels);
    }
    let edges = edges(gx, gy, valid, width, height);
    let label = components(&edges, n);

    let mut rhs = vec![0.0; n];
    for &(a, b, t) in &edges {
        rhs[b] += t;
        rhs[a] -= t;
    }
    remove_component_means(&mut rhs, &label, valid);

    let mut z = vec![0.0; n];
    let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm > 0.0 {
        let tol = 1e-8 * b_norm;
        let max_iter = 10 * n;
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = b_norm * b_norm;
        let mut iter = 0;
        while rr.sqrt() > tol {
            if iter == max_iter {
                return Err(PhotoError::NotConverged {
                    iterations: iter,
                    residual: rr.sqrt() / b_norm,
                });
            }
            laplacian(&edges, &p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            let step = rr / pap;
            for i in 0..n {
                z[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
            iter += 1;
        }
        log::debug!("gradient integration converged in {iter} iterations");
    }
    remove_component_means(&mut z, &label, valid);
    for i in 0..n {
        if !valid[i] {
            z[i] = f64::NAN;
        }
    }
    Ok(z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsOptions {
    pub d_over_c: f64,
    pub detector_rotation: f64,
    /// Scene length per pixel, converting slope sums into heights.
    pub pixel_size: f64,
    /// Rescale the result to this peak-to-peak height when given.
    pub target_range: Option<f64>,
}

/// Height map (zero mean over `foreground`, NaN elsewhere) from the four
/// quadrant images of one view.
pub fn ps_reconstruct(
    images: [&[f64]; 4],
    width: usize,
    height: usize,
    foreground: &[bool],
    opts: &PsOptions,
) -> Result<Vec<f64>, PhotoError> {
    let g = ps_gradients(images, width, height, opts.d_over_c, opts.detector_rotation)?;
    let mut z = integrate_gradients(&g.gx, &g.gy, foreground, width, height)?;
    for v in &mut z {
        *v *= opts.pixel_size;
    }
    if let Some(target) = opts.target_range {
        let (lo, hi) = z
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range > 1e-12 {
            let s = target / range;
            for v in &mut z {
                *v *= s;
            }
        }
    }
    Ok(z)
}
