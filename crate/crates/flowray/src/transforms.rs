//! Forward transforms: ray transform I_theta, symmetric beam transform
//! D_theta, the Hilbert transform in the transverse variable s, and
//! s-differentiation of sinogram rows.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FlowrayError, Result};
use crate::field::PolyField;
use crate::flow::Chart;

/// One Gaussian bump of a phantom.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bump {
    pub center: Complex64,
    pub amplitude: f64,
    pub width: f64,
}

/// Smooth compactly supported test function: a sum of Gaussian bumps times a
/// C-infinity radial cutoff equal to 1 on [0, 0.8 R] and 0 outside radius R.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phantom {
    pub bumps: Vec<Bump>,
    pub support_radius: f64,
}

fn smooth_step(x: f64) -> f64 {
    // 1 at x <= 0, 0 at x >= 1, C-infinity in between.
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let h = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
    h(1.0 - x) / (h(x) + h(1.0 - x))
}

impl Phantom {
    pub fn new(bumps: Vec<Bump>, support_radius: f64) -> Self {
        Phantom {
            bumps,
            support_radius,
        }
    }

    pub fn zero() -> Self {
        Phantom {
            bumps: vec![],
            support_radius: 0.9,
        }
    }

    #[inline]
    pub fn eval(&self, z: Complex64) -> f64 {
        let r = z.norm() / self.support_radius;
        if r >= 1.0 {
            return 0.0;
        }
        let cut = smooth_step((r - 0.8) / 0.2);
        if cut == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for b in &self.bumps {
            let d = z - b.center;
            acc += b.amplitude * (-d.norm_sqr() / (b.width * b.width)).exp();
        }
        acc * cut
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Content hash used as provenance id in sinogram metadata.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).unwrap().as_bytes());
        hex16(&h.finalize())
    }
}

fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn field_id(field: &PolyField) -> String {
    let mut h = Sha256::new();
    h.update(field.to_json().to_string().as_bytes());
    hex16(&h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinogramMeta {
    pub field_id: String,
    pub phantom_id: String,
    pub n_theta: usize,
    pub n_s: usize,
    pub s_min: f64,
    pub s_max: f64,
    /// Fixed resampling step of the curve quadrature.
    pub quad_dt: f64,
}

/// Ray-transform data on the uniform (theta, s) product grid.
#[derive(Debug, Clone)]
pub struct Sinogram {
    pub thetas: Vec<f64>,
    pub s_nodes: Vec<f64>,
    /// Row-major n_theta x n_s.
    pub values: Vec<f64>,
    pub meta: SinogramMeta,
}

impl Sinogram {
    pub fn n_theta(&self) -> usize {
        self.thetas.len()
    }

    pub fn n_s(&self) -> usize {
        self.s_nodes.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_s()..(j + 1) * self.n_s()]
    }

    pub fn ds(&self) -> f64 {
        self.s_nodes[1] - self.s_nodes[0]
    }

    /// Linear interpolation of row j at transverse coordinate s; 0 outside
    /// the grid (rows are compactly supported in the interior).
    pub fn sample_row(&self, j: usize, s: f64) -> f64 {
        let row = self.row(j);
        let ds = self.ds();
        let x = (s - self.s_nodes[0]) / ds;
        if x < 0.0 || x > (row.len() - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(row.len() - 2);
        let u = x - i as f64;
        row[i] * (1.0 - u) + row[i + 1] * u
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("theta");
        for s in &self.s_nodes {
            out.push_str(&format!(",{s:.16e}"));
        }
        out.push('\n');
        for (j, &th) in self.thetas.iter().enumerate() {
            out.push_str(&format!("{th:.16e}"));
            for v in self.row(j) {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        let sidecar = path.with_extension("json");
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load_csv(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| FlowrayError::Format("empty sinogram file".into()))?;
        let s_nodes: Vec<f64> = header
            .split(',')
            .skip(1)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FlowrayError::Format(format!("bad s-node: {e}")))?;
        let mut thetas = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let th: f64 = it
                .next()
                .unwrap()
                .parse()
                .map_err(|e| FlowrayError::Format(format!("bad theta: {e}")))?;
            thetas.push(th);
            for tok in it {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|e| FlowrayError::Format(format!("bad value: {e}")))?,
                );
            }
        }
        if values.len() != thetas.len() * s_nodes.len() {
            return Err(FlowrayError::Format("ragged sinogram matrix".into()));
        }
        let meta_path = path.with_extension("json");
        let meta: SinogramMeta = if meta_path.exists() {
            serde_json::from_str(&std::fs::read_to_string(meta_path)?)?
        } else {
            SinogramMeta {
                field_id: String::new(),
                phantom_id: String::new(),
                n_theta: thetas.len(),
                n_s: s_nodes.len(),
                s_min: *s_nodes.first().unwrap(),
                s_max: *s_nodes.last().unwrap(),
                quad_dt: f64::NAN,
            }
        };
        Ok(Sinogram {
            thetas,
            s_nodes,
            values,
            meta,
        })
    }
}

/// Default fixed resampling step for curve quadrature.
pub const DEFAULT_QUAD_DT: f64 = 1e-3;

/// Fixed-step RK4 resampling of the characteristic from a boundary entry
/// point; the trailing sliver beyond |z| = 1 is dropped (phantoms vanish
/// near the boundary).
fn resample_curve(field: &PolyField, z0: Complex64, dt: f64) -> Vec<Complex64> {
    let mu = |z: Complex64| field.eval_mu(z);
    let mut z = z0;
    let mut out = vec![z0];
    let max_steps = (crate::flow::t_max_for(field) / dt) as usize + 2;
    for _ in 0..max_steps {
        let k1 = mu(z);
        let k2 = mu(z + k1 * (dt / 2.0));
        let k3 = mu(z + k2 * (dt / 2.0));
        let k4 = mu(z + k3 * dt);
        z += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        if z.norm() >= 1.0 {
            break;
        }
        out.push(z);
    }
    out
}

/// Composite Simpson over uniformly spaced samples (trapezoid fix-up for an
/// even sample count).
fn simpson(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let odd_len = if n % 2 == 1 { n } else { n - 1 };
    let mut acc = values[0] + values[odd_len - 1];
    for (i, v) in values.iter().enumerate().take(odd_len - 1).skip(1) {
        acc += v * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let mut total = acc * dt / 3.0;
    if n % 2 == 0 {
        total += 0.5 * (values[n - 2] + values[n - 1]) * dt;
    }
    total
}

/// The ray transform I_theta f on the product grid: entry (j, m) integrates
/// f(e^{i theta_j} z(t, s_m)) dt over the base-field characteristic with
/// label s_m. The s-grid is the chart range symmetrized and padded by 25%,
/// with an odd node count so s = 0 is a node.
pub fn ray_transform(
    phantom: &Phantom,
    field: &PolyField,
    chart: &Chart,
    n_theta: usize,
    n_s: usize,
    quad_dt: f64,
) -> Result<Sinogram> {
    let n_s = if n_s % 2 == 0 { n_s + 1 } else { n_s };
    let (lo, hi) = chart.s_range();
    let reach = lo.abs().max(hi.abs()) * 1.25;
    let s_nodes: Vec<f64> = (0..n_s)
        .map(|m| -reach + 2.0 * reach * m as f64 / (n_s - 1) as f64)
        .collect();
    let thetas: Vec<f64> = (0..n_theta)
        .map(|j| std::f64::consts::TAU * j as f64 / n_theta as f64)
        .collect();

    // One resampled curve per s-node; rotation only changes the integrand.
    let curves: Vec<Option<Vec<Complex64>>> = s_nodes
        .par_iter()
        .map(|&s| {
            if s <= lo || s >= hi {
                return None;
            }
            chart
                .entry_point(s)
                .ok()
                .map(|z0| resample_curve(field, z0, quad_dt))
        })
        .collect();

    let columns: Vec<Vec<f64>> = curves
        .par_iter()
        .map(|curve| match curve {
            None => vec![0.0; n_theta],
            Some(pts) => thetas
                .iter()
                .map(|&th| {
                    let rot = Complex64::from_polar(1.0, th);
                    let vals: Vec<f64> = pts.iter().map(|&z| phantom.eval(rot * z)).collect();
                    simpson(&vals, quad_dt)
                })
                .collect(),
        })
        .collect();

    let mut values = vec![0.0; n_theta * n_s];
    for (m, col) in columns.iter().enumerate() {
        for (j, &v) in col.iter().enumerate() {
            values[j * n_s + m] = v;
        }
    }

    Ok(Sinogram {
        meta: SinogramMeta {
            field_id: field_id(field),
            phantom_id: phantom.id(),
            n_theta,
            n_s,
            s_min: -reach,
            s_max: reach,
            quad_dt,
        },
        thetas,
        s_nodes,
        values,
    })
}

/// Symmetric beam transform D_theta f at z:
/// (1/2) int f(e^{i theta} z(t0, s)) sign(t(z e^{-i theta}) - t0) dt0,
/// evaluated by splitting the curve integral at the query point.
pub fn beam_transform(
    phantom: &Phantom,
    chart: &Chart,
    z: Complex64,
    theta: f64,
) -> Result<f64> {
    let rot = Complex64::from_polar(1.0, theta);
    let w = z * rot.conj();
    let g = move |zz: Complex64| phantom.eval(rot * zz);
    let (upstream, downstream) = chart.split_integrals(w, &g)?;
    Ok(0.5 * (upstream - downstream))
}

/// Fits v(y) = sum_k c_k / y^{k+1} through the given (y, v) samples.
fn fit_algebraic_tail(ys: &[f64], vs: &[f64]) -> Vec<f64> {
    let t = ys.len();
    let a = nalgebra::DMatrix::from_fn(t, t, |i, k| ys[i].powi(-(k as i32 + 1)));
    let b = nalgebra::DVector::from_row_slice(vs);
    match a.lu().solve(&b) {
        Some(c) => c.iter().copied().collect(),
        None => vec![0.0; t],
    }
}

/// Discrete Hilbert transform (kernel 1/pi p.v. 1/(x - y)) of a decaying row
/// on a grid assumed symmetric about s = 0.
///
/// The row is extended into the padding region (`pad_factor` times the row
/// length) with an algebraic tail model sum c_k / y^{k+1} fitted at each end,
/// then convolved linearly with the exact discrete line kernel 2/(pi d) on
/// odd offsets. The tail model removes the truncation bias that a plain
/// zero-extension leaves in rows with slow algebraic decay (for compactly
/// supported rows the fitted coefficients vanish and the scheme reduces to
/// zero-padding); the linear (non-circular) convolution avoids mass
/// periodization error.
pub fn hilbert_s(row: &[f64], pad_factor: usize) -> Result<Vec<f64>> {
    let n = row.len();
    // Reject rows with no end decay at all. The bound is loose because
    // admissible inputs include Hilbert transforms of compactly supported
    // rows, which decay only algebraically.
    let peak = row.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if peak > 0.0 {
        let edge = row[0].abs().max(row[n - 1].abs());
        if edge > 5e-2 * peak {
            return Err(FlowrayError::NonDecayingRow {
                end_value: edge,
                threshold: 5e-2 * peak,
            });
        }
    }
    let pad = pad_factor.max(4);
    let m = n * pad;
    let half = (m - n) / 2;
    // Index-space coordinate with origin at the row center.
    let y0 = -((n - 1) as f64) / 2.0;
    let y_at = |i: usize| y0 + i as f64;

    let terms = if n >= 1024 { 4 } else { 2 };
    let spread = (n / 170).max(4).min((n - 1) / terms);
    let fit_end = |indices: Vec<usize>| -> Vec<f64> {
        let edge_val = row[indices[0]].abs();
        if edge_val <= 1e-12 * peak.max(1e-300) {
            return vec![0.0; terms];
        }
        let ys: Vec<f64> = indices.iter().map(|&i| y_at(i)).collect();
        let vs: Vec<f64> = indices.iter().map(|&i| row[i]).collect();
        fit_algebraic_tail(&ys, &vs)
    };
    let c_right = fit_end((0..terms).map(|k| n - 1 - k * spread).collect());
    let c_left = fit_end((0..terms).map(|k| k * spread).collect());
    let tail = |c: &[f64], y: f64| -> f64 {
        c.iter()
            .enumerate()
            .map(|(k, &ck)| ck * y.powi(-(k as i32 + 1)))
            .sum()
    };

    // Extended signal on the line: [left tail | row | right tail], length m.
    let mut ext = vec![0.0f64; m];
    for (t, e) in ext.iter_mut().take(half).enumerate() {
        *e = tail(&c_left, y0 - (half - t) as f64);
    }
    ext[half..half + n].copy_from_slice(row);
    for (t, e) in ext.iter_mut().skip(half + n).enumerate() {
        *e = tail(&c_right, y_at(n - 1) + (t + 1) as f64);
    }

    // Linear convolution with the kernel k(d) = 2/(pi d) for odd d, via FFT.
    let l = (3 * m).next_power_of_two();
    let mut sig: Vec<Complex64> = ext
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(l)
        .collect();
    let mut ker = vec![Complex64::new(0.0, 0.0); l];
    // Kernel index j in [0, 2m] holds offset d = j - m.
    for j in 0..=2 * m {
        let d = j as i64 - m as i64;
        if d % 2 != 0 {
            ker[j] = Complex64::new(2.0 / (std::f64::consts::PI * d as f64), 0.0);
        }
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(l);
    fwd.process(&mut sig);
    fwd.process(&mut ker);
    for (a, b) in sig.iter_mut().zip(&ker) {
        *a *= b;
    }
    planner.plan_fft_inverse(l).process(&mut sig);
    // H at extended index q lives at convolution index q + m.
    Ok((0..n)
        .map(|i| sig[half + i + m].re / l as f64)
        .collect())
}

/// d/ds on a uniform grid: 4th-order central differences, 4th-order
/// one-sided stencils at the ends.
pub fn s_derivative(row: &[f64], ds: f64) -> Vec<f64> {
    let n = row.len();
    let mut out = vec![0.0; n];
    if n < 5 {
        for i in 0..n {
            let (a, b) = match i {
                0 => (0usize, 1usize),
                _ => (i - 1, i.min(n - 1)),
            };
            out[i] = (row[b] - row[a]) / ((b - a).max(1) as f64 * ds);
        }
        return out;
    }
    let fwd = |r: &[f64], i: usize, sign: f64| {
        sign * (-25.0 * r[i] + 48.0 * r[(i as i64 + 1 * sign as i64) as usize]
            - 36.0 * r[(i as i64 + 2 * sign as i64) as usize]
            + 16.0 * r[(i as i64 + 3 * sign as i64) as usize]
            - 3.0 * r[(i as i64 + 4 * sign as i64) as usize])
            / (12.0 * ds)
    };
    out[0] = fwd(row, 0, 1.0);
    out[1] = fwd(row, 1, 1.0);
    out[n - 1] = fwd(row, n - 1, -1.0);
    out[n - 2] = fwd(row, n - 2, -1.0);
    for i in 2..n - 2 {
        out[i] = (-row[i + 2] + 8.0 * row[i + 1] - 8.0 * row[i - 1] + row[i - 2]) / (12.0 * ds);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Labeling;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit_setup() -> (PolyField, Chart) {
        let f = PolyField::constant(c(1.0, 0.0)).unwrap();
        let chart = Chart::build(&f, 64, Labeling::Auto).unwrap();
        (f, chart)
    }

    fn centered_bump() -> Phantom {
        Phantom::new(
            vec![Bump {
                center: c(0.0, 0.0),
                amplitude: 1.0,
                width: 0.2,
            }],
            0.95,
        )
    }

    #[test]
    fn phantom_support_and_smoothness() {
        let p = centered_bump();
        assert_eq!(p.eval(c(0.96, 0.0)), 0.0);
        assert_eq!(p.eval(c(0.0, -0.99)), 0.0);
        assert_abs_diff_eq!(p.eval(c(0.0, 0.0)), 1.0, epsilon = 1e-15);
        // Cutoff inactive inside 0.8 * R.
        assert_abs_diff_eq!(
            p.eval(c(0.3, 0.0)),
            (-0.09f64 / 0.04).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn gaussian_row_oracle() {
        // mu = 1: I_theta f(s) = sqrt(pi) * 0.2 * exp(-s^2 / 0.04).
        let (f, chart) = unit_setup();
        let p = centered_bump();
        let sino = ray_transform(&p, &f, &chart, 8, 65, DEFAULT_QUAD_DT).unwrap();
        for j in 0..sino.n_theta() {
            for (m, &s) in sino.s_nodes.iter().enumerate() {
                let expect = std::f64::consts::PI.sqrt() * 0.2 * (-s * s / 0.04).exp();
                let got = sino.row(j)[m];
                assert!(
                    (got - expect).abs() < 1e-6,
                    "theta {} s {s}: {got} vs {expect}",
                    sino.thetas[j]
                );
            }
        }
    }

    #[test]
    fn zero_phantom_and_linearity() {
        let (f, chart) = unit_setup();
        let zero = Phantom::zero();
        let sino = ray_transform(&zero, &f, &chart, 4, 33, DEFAULT_QUAD_DT).unwrap();
        assert!(sino.values.iter().all(|&v| v == 0.0));

        let p1 = centered_bump();
        let p2 = Phantom::new(
            vec![Bump {
                center: c(0.3, -0.2),
                amplitude: 0.7,
                width: 0.15,
            }],
            0.95,
        );
        let mut both = p1.clone();
        both.bumps.extend(p2.bumps.iter().cloned());
        let s1 = ray_transform(&p1, &f, &chart, 8, 33, DEFAULT_QUAD_DT).unwrap();
        let s2 = ray_transform(&p2, &f, &chart, 8, 33, DEFAULT_QUAD_DT).unwrap();
        let s12 = ray_transform(&both, &f, &chart, 8, 33, DEFAULT_QUAD_DT).unwrap();
        for i in 0..s1.values.len() {
            assert!((s12.values[i] - s1.values[i] - s2.values[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn sinogram_refinement() {
        let (f, chart) = unit_setup();
        let p = centered_bump();
        let a = ray_transform(&p, &f, &chart, 4, 33, 1e-3).unwrap();
        let b = ray_transform(&p, &f, &chart, 4, 33, 5e-4).unwrap();
        let gap = a
            .values
            .iter()
            .zip(&b.values)
            .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()));
        assert!(gap < 1e-8, "quadrature refinement gap {gap}");
    }

    #[test]
    fn beam_transform_examples() {
        let (f, chart) = unit_setup();
        let p = centered_bump();
        // Centered even profile, split at the midpoint: D = 0.
        let d0 = beam_transform(&p, &chart, c(0.0, 0.0), 0.0).unwrap();
        assert!(d0.abs() < 1e-9);

        // Plemelj-compatible pairing: 2 D -> I downstream, -I upstream.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let s = rng.random_range(-0.5..0.5f64);
            let rot = Complex64::from_polar(1.0, theta);
            let g = |z: Complex64| p.eval(rot * z);
            let i_val = chart.ray_integral(s, &g).unwrap();
            let entry = chart.entry_point(s).unwrap();
            let cu = crate::flow::trace_curve(&f, entry * (1.0 - 1e-9), 1.0).unwrap();
            let exit = cu.last().z;
            let z_down = rot * (exit * (1.0 - 1e-6) + entry * 1e-6);
            let z_up = rot * (entry * (1.0 - 1e-6) + exit * 1e-6);
            let d_down = beam_transform(&p, &chart, z_down, theta).unwrap();
            let d_up = beam_transform(&p, &chart, z_up, theta).unwrap();
            assert!((2.0 * d_down - i_val).abs() < 1e-6, "s={s}");
            assert!((2.0 * d_up + i_val).abs() < 1e-6, "s={s}");
        }
    }

    #[test]
    fn transport_residual_smoke() {
        // X_theta applied to z -> D_theta f reproduces f (spot check; the
        // dense version is an acceptance criterion).
        let f = crate::field::one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let chart = Chart::build(&f, 64, Labeling::Auto).unwrap();
        let p = centered_bump();
        let theta = 0.7;
        let rot_field = f.rotated(theta).unwrap();
        let h = 1.0 / 256.0;
        for &z in &[c(0.1, 0.2), c(-0.25, 0.05), c(0.0, -0.3)] {
            let d = |z: Complex64| beam_transform(&p, &chart, z, theta).unwrap();
            let dx = (d(z + c(h, 0.0)) - d(z - c(h, 0.0))) / (2.0 * h);
            let dy = (d(z + c(0.0, h)) - d(z - c(0.0, h))) / (2.0 * h);
            let mu = rot_field.eval_mu(z);
            let xd = mu.re * dx + mu.im * dy;
            assert!(
                (xd - p.eval(z)).abs() < 5e-3,
                "X D = {xd} vs f = {} at {z}",
                p.eval(z)
            );
        }
    }

    #[test]
    fn hilbert_conjugate_pair() {
        // 1/(1+s^2) -> s/(1+s^2) on [-40, 40], 2^13 nodes.
        let n = 1 << 13;
        let s: Vec<f64> = (0..n).map(|i| -40.0 + 80.0 * i as f64 / (n - 1) as f64).collect();
        let row: Vec<f64> = s.iter().map(|&x| 1.0 / (1.0 + x * x)).collect();
        let h = hilbert_s(&row, 8).unwrap();
        let mut max_err = 0.0f64;
        for (i, &x) in s.iter().enumerate() {
            max_err = max_err.max((h[i] - x / (1.0 + x * x)).abs());
        }
        assert!(max_err < 1e-6, "max err {max_err}");
    }

    #[test]
    fn hilbert_involution_and_skew() {
        let n = 4096;
        let s: Vec<f64> = (0..n).map(|i| -30.0 + 60.0 * i as f64 / (n - 1) as f64).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            // Zero-mean by construction: odd profile about x = b.
            let a = rng.random_range(0.5..2.0f64);
            let b = rng.random_range(-3.0..3.0f64);
            let c0 = rng.random_range(2.0..4.0f64);
            let g: Vec<f64> = s
                .iter()
                .map(|&x| {
                    (x - b) * (-(x - b) * (x - b) / (c0 * c0)).exp() * (a * (x - b)).cos()
                })
                .collect();
            let hg = hilbert_s(&g, 8).unwrap();
            let hhg = hilbert_s(&hg, 8).unwrap();
            let peak = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            for i in 0..n {
                assert!((hhg[i] + g[i]).abs() < 1e-5 * peak.max(1.0));
            }
            let dot: f64 = hg.iter().zip(&g).map(|(&x, &y)| x * y).sum();
            assert!(dot.abs() / peak.powi(2) / (n as f64) < 1e-8);
        }

        let zeros = vec![0.0; 512];
        assert!(hilbert_s(&zeros, 8).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hilbert_rejects_nondecaying() {
        let row = vec![1.0; 256];
        assert!(matches!(
            hilbert_s(&row, 8),
            Err(FlowrayError::NonDecayingRow { .. })
        ));
    }

    #[test]
    fn s_derivative_examples() {
        let n = 1024;
        let ds = 20.0 / (n - 1) as f64;
        let s: Vec<f64> = (0..n).map(|i| -10.0 + ds * i as f64).collect();
        let d = s_derivative(&s, ds);
        for &v in &d {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
        }
        let row: Vec<f64> = s.iter().map(|&x| x.sin()).collect();
        let d = s_derivative(&row, ds);
        for i in 5..n - 5 {
            assert!((d[i] - s[i].cos()).abs() < 1e-8);
        }
        let g: Vec<f64> = s.iter().map(|&x| (-x * x).exp()).collect();
        let dg = s_derivative(&g, ds);
        for i in 0..n {
            assert!((dg[i] + dg[n - 1 - i]).abs() < 1e-9, "derivative not odd");
        }
    }

    #[test]
    fn sinogram_round_trip_bit_exact() {
        let (f, chart) = unit_setup();
        let p = centered_bump();
        let sino = ray_transform(&p, &f, &chart, 8, 33, DEFAULT_QUAD_DT).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sino.csv");
        sino.save_csv(&path).unwrap();
        let back = Sinogram::load_csv(&path).unwrap();
        assert_eq!(sino.thetas, back.thetas);
        assert_eq!(sino.s_nodes, back.s_nodes);
        assert_eq!(sino.values, back.values);
        assert_eq!(sino.meta.field_id, back.meta.field_id);
    }

    #[test]
    fn rows_decay_at_grid_ends() {
        let (f, chart) = unit_setup();
        let p = centered_bump();
        let sino = ray_transform(&p, &f, &chart, 16, 65, DEFAULT_QUAD_DT).unwrap();
        for j in 0..sino.n_theta() {
            let row = sino.row(j);
            assert!(row[0].abs() < 1e-12);
            assert!(row[row.len() - 1].abs() < 1e-12);
        }
    }
}
