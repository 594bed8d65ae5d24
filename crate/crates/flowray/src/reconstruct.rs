//! Inversion of the ray transform: Poisson-kernel-weighted backprojection of
//! the Hilbert-filtered sinogram under the orthogonal-field chain rule.
//!
//! f(z) = (1/4 pi) int_0^{2 pi} P(lambda_i(z), theta)
//!        [X_perp_theta H(I_theta f)](s(z e^{-i theta})) d theta,
//!
//! with the unrescaled orthogonal field X_perp built directly from mu. The
//! lambda_i are the interior roots of the complexified d/dz coefficient and
//! s must be a labeling with a meromorphic lambda-continuation (the rational
//! chart backend for mu = c(1 + alpha z^2), the primitive for constant mu).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexify::{complexified_coeffs, interior_roots, select_root};
use crate::error::{FlowrayError, Result};
use crate::field::PolyField;
use crate::flow::{Chart, Labeling};
use crate::transforms::{hilbert_s, ray_transform, s_derivative, Phantom, Sinogram};

/// Uniform n x n Cartesian grid on [-1,1]^2 with a disc evaluation mask;
/// values are NaN outside the mask by convention.
#[derive(Debug, Clone)]
pub struct ScalarGrid {
    pub n: usize,
    pub mask_radius: f64,
    /// Row-major; index i * n + j holds z = (-1 + 2j/(n-1)) + i(-1 + 2i/(n-1)).
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub n: usize,
    pub mask_radius: f64,
    pub provenance: String,
}

impl ScalarGrid {
    pub fn coord(&self, i: usize, j: usize) -> Complex64 {
        let d = (self.n - 1) as f64;
        Complex64::new(-1.0 + 2.0 * j as f64 / d, -1.0 + 2.0 * i as f64 / d)
    }

    pub fn in_mask(&self, i: usize, j: usize) -> bool {
        self.coord(i, j).norm() <= self.mask_radius
    }

    pub fn from_fn(n: usize, mask_radius: f64, f: impl Fn(Complex64) -> f64 + Sync) -> Self {
        let mut g = ScalarGrid {
            n,
            mask_radius,
            values: vec![f64::NAN; n * n],
        };
        let vals: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if g.in_mask(i, j) {
                    f(g.coord(i, j))
                } else {
                    f64::NAN
                }
            })
            .collect();
        g.values = vals;
        g
    }

    /// Relative L2 difference over the jointly masked pixels, normalized by
    /// the reference grid.
    pub fn rel_l2_diff(&self, reference: &ScalarGrid) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in self.values.iter().zip(&reference.values) {
            if a.is_nan() || b.is_nan() {
                continue;
            }
            num += (a - b) * (a - b);
            den += b * b;
        }
        if den == 0.0 {
            return if num == 0.0 { 0.0 } else { f64::INFINITY };
        }
        (num / den).sqrt()
    }

    pub fn sup_diff(&self, reference: &ScalarGrid) -> f64 {
        self.values
            .iter()
            .zip(&reference.values)
            .filter(|(a, b)| !a.is_nan() && !b.is_nan())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn save_csv(&self, path: &std::path::Path, provenance: &str) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{:.16e}", self.values[i * self.n + j]));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        let meta = GridMeta {
            n: self.n,
            mask_radius: self.mask_radius,
            provenance: provenance.to_string(),
        };
        std::fs::write(
            path.with_extension("json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Ok(())
    }

    pub fn load_csv(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut values = Vec::new();
        let mut n = 0;
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            n += 1;
            for tok in line.split(',') {
                values.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| FlowrayError::Format(format!("bad grid value: {e}")))?,
                );
            }
        }
        if values.len() != n * n {
            return Err(FlowrayError::Format("grid is not square".into()));
        }
        let meta_path = path.with_extension("json");
        let mask_radius = if meta_path.exists() {
            let meta: GridMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
            meta.mask_radius
        } else {
            0.95
        };
        Ok(ScalarGrid {
            n,
            mask_radius,
            values,
        })
    }

    /// Quick-look image: binary PGM (P5), linear [min, max] -> [0, 255],
    /// NaN mapped to 0.
    pub fn save_pgm(&self, path: &std::path::Path) -> Result<()> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &self.values {
            if v.is_nan() {
                continue;
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || hi <= lo {
            lo = 0.0;
            hi = 1.0;
        }
        let mut buf = format!("P5\n{} {}\n255\n", self.n, self.n).into_bytes();
        for &v in &self.values {
            let b = if v.is_nan() {
                0u8
            } else {
                (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
            };
            buf.push(b);
        }
        Ok(std::fs::write(path, buf)?)
    }
}

/// Poisson kernel P(lambda, theta) = (1 - |lambda|^2) / |1 - e^{-i theta} lambda|^2.
pub fn poisson_kernel(lambda: Complex64, theta: f64) -> Result<f64> {
    let m = lambda.norm();
    if m >= 1.0 - 1e-12 {
        return Err(FlowrayError::KernelBlowup { modulus: m });
    }
    let denom = (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -theta) * lambda)
        .norm_sqr();
    Ok((1.0 - m * m) / denom)
}

/// Hilbert-filtered sinogram rows and their s-derivatives, precomputed once
/// per reconstruction.
pub struct FilteredSinogram {
    pub thetas: Vec<f64>,
    pub s_nodes: Vec<f64>,
    /// d/ds H(I_theta f) per row, on the sinogram s-grid.
    pub rows_dh: Vec<Vec<f64>>,
    /// H(I_theta f) per row (kept for diagnostics and the Plemelj oracle).
    pub rows_h: Vec<Vec<f64>>,
}

pub fn filter_sinogram(sino: &Sinogram, pad_factor: usize) -> Result<FilteredSinogram> {
    let ds = sino.ds();
    let filtered: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..sino.n_theta())
        .into_par_iter()
        .map(|j| {
            let h = hilbert_s(sino.row(j), pad_factor)?;
            let dh = s_derivative(&h, ds);
            Ok((h, dh))
        })
        .collect();
    let filtered = filtered?;
    Ok(FilteredSinogram {
        thetas: sino.thetas.clone(),
        s_nodes: sino.s_nodes.clone(),
        rows_h: filtered.iter().map(|(h, _)| h.clone()).collect(),
        rows_dh: filtered.into_iter().map(|(_, dh)| dh).collect(),
    })
}

fn interp_row(s_nodes: &[f64], row: &[f64], s: f64) -> f64 {
    let ds = s_nodes[1] - s_nodes[0];
    let x = (s - s_nodes[0]) / ds;
    if x < 0.0 || x > (row.len() - 1) as f64 {
        return 0.0;
    }
    let i = (x.floor() as usize).min(row.len() - 2);
    let u = x - i as f64;
    row[i] * (1.0 - u) + row[i + 1] * u
}

/// One backprojection integrand sample:
/// Phi'(s(w)) * X_perp_theta[s(z e^{-i theta})], w = z e^{-i theta}, the
/// chain-rule factor evaluated through the complexified coefficients at
/// lambda = e^{i theta}. Returns (real value, imaginary residual).
pub fn filtered_term(
    filt: &FilteredSinogram,
    chart: &Chart,
    field: &PolyField,
    z: Complex64,
    j: usize,
) -> Result<(f64, f64)> {
    let theta = filt.thetas[j];
    let rot = Complex64::from_polar(1.0, theta);
    let w = z * rot.conj();
    let s = chart.s_of_z(w)?;
    let phi_prime = interp_row(&filt.s_nodes, &filt.rows_dh[j], s);
    let (ds, dbs) = chart.grad_s_best(w)?;

    // Unrescaled complexified coefficients: xi(z, e^{i theta}) and its
    // conjugate. For admissible fields (k + l + 2 >= 0) the unrescaled
    // X_perp_lambda u is holomorphic across the whole disc — the rescaled
    // coefficients have an interior pole in lambda at the denominator root,
    // which breaks the Poisson representation the formula rests on.
    let cc = complexified_coeffs(field, z, false);
    let a = cc.eval_a(rot);
    let b = cc.eval_b(rot);
    let sigma = chart.orientation_sign();
    let i = Complex64::new(0.0, 1.0);
    let value = sigma * (-i * a * rot.conj() * ds + i * b * rot * dbs);

    let term = phi_prime * value.re;
    let residual = phi_prime * value.im;
    if residual.abs() > 1e-6 * term.abs().max(1e-12) {
        return Err(FlowrayError::ImaginaryResidual {
            real: term,
            imag: residual,
        });
    }
    Ok((term, residual))
}

/// lambda_i map over the masked grid, assigned in a deterministic flood
/// order from the grid center so that the chosen branch varies continuously
/// where roots are simple; falls back to the smallest-modulus rule when no
/// neighbor is assigned.
fn lambda_i_map(field: &PolyField, grid: &ScalarGrid) -> Vec<Option<Complex64>> {
    let n = grid.n;
    let roots: Vec<Option<Vec<Complex64>>> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            if !grid.in_mask(i, j) {
                return None;
            }
            interior_roots(field, grid.coord(i, j)).ok()
        })
        .collect();

    let mut assigned: Vec<Option<Complex64>> = vec![None; n * n];
    // BFS from the masked pixel of largest |z|: there the interior roots are
    // best separated, so the anchor branch choice (deterministic rule) is
    // unambiguous and continuation by nearest-root stays on one branch.
    // Near-collision pixels (roots almost equal) cannot corrupt the flood
    // because the reference is the best-separated assigned neighbor.
    let start = (0..n * n)
        .filter(|&idx| grid.in_mask(idx / n, idx % n))
        .max_by(|&a, &b| {
            let za = grid.coord(a / n, a % n).norm();
            let zb = grid.coord(b / n, b % n).norm();
            za.partial_cmp(&zb).unwrap().then(b.cmp(&a))
        })
        .unwrap_or(0);
    let mut queue = std::collections::VecDeque::new();
    let mut seen = vec![false; n * n];
    queue.push_back(start);
    seen[start] = true;
    while let Some(idx) = queue.pop_front() {
        let (i, j) = (idx / n, idx % n);
        if let Some(cands) = &roots[idx] {
            if !cands.is_empty() {
                // Reference: the assigned neighbor of largest |lambda|.
                let mut reference: Option<Complex64> = None;
                for (di, dj) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                        continue;
                    }
                    if let Some(v) = assigned[ni as usize * n + nj as usize] {
                        if reference.map_or(true, |r| v.norm() > r.norm()) {
                            reference = Some(v);
                        }
                    }
                }
                assigned[idx] = match reference {
                    Some(reference) => cands
                        .iter()
                        .copied()
                        .min_by(|a, b| {
                            (a - reference)
                                .norm()
                                .partial_cmp(&(b - reference).norm())
                                .unwrap()
                        }),
                    None => select_root(cands),
                };
            }
        }
        for (di, dj) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                continue;
            }
            let nidx = ni as usize * n + nj as usize;
            if !seen[nidx] {
                seen[nidx] = true;
                queue.push_back(nidx);
            }
        }
    }
    assigned
}

#[derive(Debug, Clone, Serialize)]
pub struct BackprojectReport {
    pub flagged_pixels: usize,
    pub max_imag_residual: f64,
}

/// Poisson-weighted backprojection over the masked grid; trapezoid in theta
/// (spectrally accurate for the periodic integrand). Pixels without an
/// interior root are flagged and set to NaN.
///
/// f(z) = (1/4 pi) int P(lambda_i(z), theta) Phi'(s) X_perp_theta s d theta
/// with the unrescaled orthogonal field throughout: numerically the
/// unrescaled Poisson representation is the one that converges (see the
/// filtered_term note), so no rescaling weight multiplies the output.
pub fn backproject(
    filt: &FilteredSinogram,
    chart: &Chart,
    field: &PolyField,
    n: usize,
    mask_radius: f64,
) -> Result<(ScalarGrid, BackprojectReport)> {
    let template = ScalarGrid {
        n,
        mask_radius,
        values: vec![f64::NAN; n * n],
    };
    let lam = lambda_i_map(field, &template);
    let n_theta = filt.thetas.len();
    let d_theta = std::f64::consts::TAU / n_theta as f64;

    let results: Vec<(f64, f64, bool)> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            if !template.in_mask(i, j) {
                return (f64::NAN, 0.0, false);
            }
            let z = template.coord(i, j);
            let lambda_i = match lam[idx] {
                Some(l) => l,
                None => return (f64::NAN, 0.0, true),
            };
            let mut acc = 0.0;
            let mut max_res = 0.0f64;
            for jt in 0..n_theta {
                let p = match poisson_kernel(lambda_i, filt.thetas[jt]) {
                    Ok(p) => p,
                    Err(_) => return (f64::NAN, 0.0, true),
                };
                match filtered_term(filt, chart, field, z, jt) {
                    Ok((t, r)) => {
                        acc += p * t;
                        max_res = max_res.max(r.abs());
                    }
                    Err(FlowrayError::OutOfChart { .. }) => {}
                    Err(_) => return (f64::NAN, 0.0, true),
                }
            }
            (acc * d_theta / (4.0 * std::f64::consts::PI), max_res, false)
        })
        .collect();

    let mut grid = template;
    let mut flagged = 0;
    let mut max_res = 0.0f64;
    for (idx, (v, r, flag)) in results.into_iter().enumerate() {
        grid.values[idx] = v;
        max_res = max_res.max(r);
        if flag {
            flagged += 1;
        }
    }
    Ok((
        grid,
        BackprojectReport {
            flagged_pixels: flagged,
            max_imag_residual: max_res,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconConfig {
    pub n: usize,
    pub n_theta: usize,
    pub n_s: usize,
    pub mask_radius: f64,
    pub n_curves: usize,
    pub quad_dt: f64,
    pub pad_factor: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            n: 128,
            n_theta: 256,
            n_s: 257,
            mask_radius: 0.95,
            n_curves: 200,
            quad_dt: crate::transforms::DEFAULT_QUAD_DT,
            pad_factor: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconReport {
    pub rel_l2_error: f64,
    pub sup_error: f64,
    pub flagged_pixels: usize,
    pub max_imag_residual: f64,
    pub stage_seconds: Vec<(String, f64)>,
}

/// Full pipeline: chart, sinogram, Hilbert filter, backprojection, error
/// report against the phantom.
pub fn reconstruct_end_to_end(
    phantom: &Phantom,
    field: &PolyField,
    config: &ReconConfig,
) -> Result<(ScalarGrid, Sinogram, ReconReport)> {
    let mut stages = Vec::new();
    let clock = std::time::Instant::now;

    let t0 = clock();
    let chart = Chart::build(field, config.n_curves, Labeling::Auto)
        .map_err(|e| e.in_stage("chart"))?;
    stages.push(("chart".to_string(), t0.elapsed().as_secs_f64()));

    let t0 = clock();
    let sino = ray_transform(
        phantom,
        field,
        &chart,
        config.n_theta,
        config.n_s,
        config.quad_dt,
    )
    .map_err(|e| e.in_stage("forward"))?;
    stages.push(("forward".to_string(), t0.elapsed().as_secs_f64()));

    let t0 = clock();
    let filt = filter_sinogram(&sino, config.pad_factor).map_err(|e| e.in_stage("filter"))?;
    stages.push(("filter".to_string(), t0.elapsed().as_secs_f64()));

    let t0 = clock();
    let (grid, bp) = backproject(&filt, &chart, field, config.n, config.mask_radius)
        .map_err(|e| e.in_stage("backproject"))?;
    stages.push(("backproject".to_string(), t0.elapsed().as_secs_f64()));

    let truth = ScalarGrid::from_fn(config.n, config.mask_radius, |z| phantom.eval(z));
    let report = ReconReport {
        rel_l2_error: grid.rel_l2_diff(&truth),
        sup_error: grid.sup_diff(&truth),
        flagged_pixels: bp.flagged_pixels,
        max_imag_residual: bp.max_imag_residual,
        stage_seconds: stages,
    };
    Ok((grid, sino, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::Bump;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn poisson_examples() {
        assert_abs_diff_eq!(
            poisson_kernel(c(0.0, 0.0), 1.3).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            poisson_kernel(c(0.5, 0.0), 0.0).unwrap(),
            3.0,
            epsilon = 1e-13
        );
        assert!(matches!(
            poisson_kernel(c(0.9999999999999, 0.0), 0.0),
            Err(FlowrayError::KernelBlowup { .. })
        ));
        // Mean-value property.
        let mut rng = {
            use rand::SeedableRng;
            rand_chacha::ChaCha8Rng::seed_from_u64(2)
        };
        use rand::Rng;
        for _ in 0..5 {
            let lam = Complex64::from_polar(
                rng.random_range(0.0..0.95f64),
                rng.random_range(0.0..std::f64::consts::TAU),
            );
            let n = 1024;
            let mean: f64 = (0..n)
                .map(|k| {
                    poisson_kernel(lam, std::f64::consts::TAU * k as f64 / n as f64).unwrap()
                })
                .sum::<f64>()
                / n as f64;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_round_trip_and_pgm() {
        let g = ScalarGrid::from_fn(17, 0.95, |z| (z.re * 3.0).sin() + z.im);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        g.save_csv(&path, "test").unwrap();
        let back = ScalarGrid::load_csv(&path).unwrap();
        for (a, b) in g.values.iter().zip(&back.values) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        g.save_pgm(&dir.path().join("g.pgm")).unwrap();
        let bytes = std::fs::read(dir.path().join("g.pgm")).unwrap();
        assert!(bytes.starts_with(b"P5\n17 17\n255\n"));
        assert_eq!(bytes.len(), 13 + 17 * 17);
    }

    fn small_setup() -> (PolyField, Chart, Phantom) {
        let f = PolyField::constant(c(1.0, 0.0)).unwrap();
        let chart = Chart::build(&f, 32, Labeling::Auto).unwrap();
        let p = Phantom::new(
            vec![Bump {
                center: c(0.0, 0.0),
                amplitude: 1.0,
                width: 0.25,
            }],
            0.9,
        );
        (f, chart, p)
    }

    #[test]
    fn filtered_term_radial_theta_independence() {
        let (f, chart, p) = small_setup();
        let sino = ray_transform(&p, &f, &chart, 64, 129, 1e-3).unwrap();
        let filt = filter_sinogram(&sino, 8).unwrap();
        let base = filtered_term(&filt, &chart, &f, c(0.0, 0.0), 0).unwrap().0;
        for j in 1..64 {
            let (t, _) = filtered_term(&filt, &chart, &f, c(0.0, 0.0), j).unwrap();
            assert!((t - base).abs() < 1e-6, "theta_{j}: {t} vs {base}");
        }
    }

    #[test]
    fn zero_phantom_reconstructs_to_zero() {
        let f = PolyField::constant(c(1.0, 0.0)).unwrap();
        let cfg = ReconConfig {
            n: 24,
            n_theta: 16,
            n_s: 33,
            n_curves: 32,
            ..ReconConfig::default()
        };
        let (grid, _, report) = reconstruct_end_to_end(&Phantom::zero(), &f, &cfg).unwrap();
        for &v in grid.values.iter().filter(|v| !v.is_nan()) {
            assert_eq!(v, 0.0);
        }
        assert_eq!(report.rel_l2_error, 0.0);
    }

    #[test]
    fn unit_field_poisson_factor_is_identity() {
        // For mu = 1, lambda_i = 0 and P = 1: replacing P by 1 must leave
        // the output unchanged to round-off.
        let (f, chart, p) = small_setup();
        let sino = ray_transform(&p, &f, &chart, 32, 65, 1e-3).unwrap();
        let filt = filter_sinogram(&sino, 8).unwrap();
        let (grid, _) = backproject(&filt, &chart, &f, 24, 0.9).unwrap();
        let d_theta = std::f64::consts::TAU / 32.0;
        for i in 0..24 {
            for j in 0..24 {
                if !grid.in_mask(i, j) {
                    continue;
                }
                let z = grid.coord(i, j);
                let mut acc = 0.0;
                for jt in 0..32 {
                    acc += filtered_term(&filt, &chart, &f, z, jt).unwrap().0;
                }
                let plain = acc * d_theta / (4.0 * std::f64::consts::PI);
                let got = grid.values[i * 24 + j];
                assert!((plain - got).abs() <= 1e-14 * got.abs().max(1.0));
            }
        }
    }

    #[test]
    fn lambda_map_continuity() {
        let f = crate::field::one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let grid = ScalarGrid {
            n: 33,
            mask_radius: 0.9,
            values: vec![f64::NAN; 33 * 33],
        };
        let lam = lambda_i_map(&f, &grid);
        let px = 2.0 / 32.0;
        // Roots are +-i sqrt(0.3) z: |d lambda / dz| = sqrt(0.3).
        let bound = 10.0 * px * 0.3f64.sqrt();
        for i in 0..33 {
            for j in 0..32 {
                if let (Some(a), Some(b)) = (lam[i * 33 + j], lam[i * 33 + j + 1]) {
                    assert!((a - b).norm() < bound, "jump {} at ({i},{j})", (a - b).norm());
                }
            }
        }
    }

    #[test]
    fn reconstruction_linearity() {
        let f = PolyField::constant(c(1.0, 0.0)).unwrap();
        let cfg = ReconConfig {
            n: 24,
            n_theta: 32,
            n_s: 65,
            n_curves: 48,
            ..ReconConfig::default()
        };
        let p1 = Phantom::new(
            vec![Bump {
                center: c(0.2, 0.1),
                amplitude: 1.0,
                width: 0.2,
            }],
            0.9,
        );
        let p2 = Phantom::new(
            vec![Bump {
                center: c(-0.3, 0.2),
                amplitude: 0.6,
                width: 0.25,
            }],
            0.9,
        );
        let mut both = p1.clone();
        both.bumps.extend(p2.bumps.iter().cloned());
        let (g1, _, _) = reconstruct_end_to_end(&p1, &f, &cfg).unwrap();
        let (g2, _, _) = reconstruct_end_to_end(&p2, &f, &cfg).unwrap();
        let (g12, _, _) = reconstruct_end_to_end(&both, &f, &cfg).unwrap();
        let mut peak = 0.0f64;
        for &v in g12.values.iter().filter(|v| !v.is_nan()) {
            peak = peak.max(v.abs());
        }
        for idx in 0..g1.values.len() {
            let (a, b, ab) = (g1.values[idx], g2.values[idx], g12.values[idx]);
            if a.is_nan() {
                continue;
            }
            assert!((ab - a - b).abs() < 1e-8 * peak.max(1.0));
        }
    }
}
