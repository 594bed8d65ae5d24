//! Frequency-truncation machinery for analytic coefficient fields.
//!
//! A `mu` with infinitely many angular frequencies enters the pipeline only
//! through truncation: the projection `P_{k,l}` keeps the frequency window
//! `k <= q - p <= l` of the coefficient table, a degree cutoff `p + q <= N`
//! makes the table finite, and a certified tail bound drives the choice of
//! window for a requested sup-norm accuracy.  `stability_report` then measures
//! how sinograms and reconstructions of the truncated fields converge to a
//! high-fidelity reference as the truncation tolerance shrinks.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{FlowrayError, Result};
use crate::field::PolyField;
use crate::flow::{Chart, Labeling};
use crate::reconstruct::{backproject, filter_sinogram, ScalarGrid};
use crate::transforms::{hilbert_s, ray_transform, s_derivative, Phantom, Sinogram};

/// Hard cap on total degree when summing analytic series numerically.
const SERIES_DEGREE_CAP: u32 = 600;
/// Terms below this magnitude are treated as converged in series sums.
const SERIES_TERM_TOL: f64 = 1e-18;

/// Closed-form coefficient families with certified tail bounds.
#[derive(Debug, Clone)]
pub enum CoeffFamily {
    /// `a_pq = beta^{p+q} * skew^p`.  With `skew < 1` the positive-frequency
    /// side strictly dominates, so truncations satisfy the admissibility
    /// dominance condition `|c_k| < |c_l|`; `skew = 1` gives the symmetric
    /// family `a_pq = beta^{p+q}`.
    Geometric { beta: f64, skew: f64 },
    /// `a_{0q} = (q+1)^{-power}`, all other entries zero.  The frequency
    /// ratios `|c_{n+1}/c_n|` tend to `|z|` like `1 - power/n`, i.e. the
    /// limsup condition fails near the boundary: a constructed counterexample
    /// for `c_hat_test`.
    Harmonic { power: f64 },
    /// An already-finite coefficient table.
    Polynomial { field: PolyField },
}

/// An analytic coefficient field given by a deterministic generator
/// `(p, q) -> a_pq` together with a certified tail bound
/// `sum_{p+q>N} |a_pq| <= tau(N)` with `tau(N) -> 0` monotonically.
#[derive(Debug, Clone)]
pub struct AnalyticFieldSpec {
    pub family: CoeffFamily,
    /// Radius of the closed disc on which the series is certified.
    pub domain_radius: f64,
}

impl AnalyticFieldSpec {
    pub fn geometric(beta: f64, skew: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&beta) && (0.0..=1.0).contains(&skew),
            "geometric family needs 0 <= beta < 1, 0 < skew <= 1"
        );
        AnalyticFieldSpec {
            family: CoeffFamily::Geometric { beta, skew },
            domain_radius: 1.0,
        }
    }

    pub fn harmonic(power: f64) -> Self {
        assert!(power > 1.0, "harmonic family needs power > 1 for a finite sum");
        AnalyticFieldSpec {
            family: CoeffFamily::Harmonic { power },
            domain_radius: 1.0,
        }
    }

    pub fn polynomial(field: PolyField) -> Self {
        AnalyticFieldSpec {
            family: CoeffFamily::Polynomial { field },
            domain_radius: 1.0,
        }
    }

    /// The generator `(p, q) -> a_pq`.
    pub fn coeff(&self, p: u32, q: u32) -> Complex64 {
        match &self.family {
            CoeffFamily::Geometric { beta, skew } => {
                Complex64::new(beta.powi((p + q) as i32) * skew.powi(p as i32), 0.0)
            }
            CoeffFamily::Harmonic { power } => {
                if p == 0 {
                    Complex64::new((q as f64 + 1.0).powf(-power), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            CoeffFamily::Polynomial { field } => field
                .coeffs()
                .find(|(&(fp, fq), _)| fp == p && fq == q)
                .map(|(_, &a)| a)
                .unwrap_or_else(|| Complex64::new(0.0, 0.0)),
        }
    }

    /// Certified tail bound `sum_{p+q>n} |a_pq| <= tau(n)`, monotone in `n`.
    pub fn tail_bound(&self, n: u32) -> f64 {
        match &self.family {
            CoeffFamily::Geometric { beta, .. } => {
                // sum_{m>n} (m+1) beta^m  (skew <= 1 only shrinks terms)
                let b = *beta;
                if b == 0.0 {
                    0.0
                } else {
                    let nn = n as f64;
                    b.powi(n as i32 + 1) * ((nn + 2.0) - (nn + 1.0) * b) / ((1.0 - b) * (1.0 - b))
                }
            }
            CoeffFamily::Harmonic { power } => {
                // sum_{q>n} (q+1)^{-power} <= integral bound
                (n as f64 + 1.0).powf(1.0 - power) / (power - 1.0)
            }
            CoeffFamily::Polynomial { field } => {
                let tail: f64 = field
                    .coeffs()
                    .filter(|(&(p, q), _)| p + q > n)
                    .map(|(_, a)| a.norm())
                    .sum();
                tail
            }
        }
    }

    /// True when the generator has only finitely many nonzero entries.
    pub fn is_polynomial(&self) -> bool {
        matches!(self.family, CoeffFamily::Polynomial { .. })
    }

    /// All coefficients with `p + q <= n` as a validated field.
    pub fn truncate(&self, n: u32) -> Result<PolyField> {
        let mut entries = Vec::new();
        for p in 0..=n {
            for q in 0..=(n - p) {
                let a = self.coeff(p, q);
                if a.norm() > 0.0 {
                    entries.push(((p, q), a));
                }
            }
        }
        PolyField::from_coeffs(entries, None)
    }

    /// `mu(z)`, summed to machine precision (certified by the tail bound).
    pub fn eval_mu(&self, z: Complex64) -> Complex64 {
        if let CoeffFamily::Polynomial { field } = &self.family {
            return field.eval_mu(z);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..=SERIES_DEGREE_CAP {
            let mut ring = Complex64::new(0.0, 0.0);
            for p in 0..=m {
                let q = m - p;
                let a = self.coeff(p, q);
                if a.norm() > 0.0 {
                    ring += a * z.powu(p) * z.conj().powu(q);
                }
            }
            acc += ring;
            if self.tail_bound(m) < SERIES_TERM_TOL {
                break;
            }
        }
        acc
    }

    /// The angular-frequency coefficient `c_n(z)`: the sum of
    /// `a_pq z^p conj(z)^q` over `q - p = n`.
    pub fn laurent_coeff(&self, n: i64, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let r2 = z.norm_sqr();
        for p in 0..=SERIES_DEGREE_CAP {
            let q = p as i64 + n;
            if q < 0 {
                continue;
            }
            let a = self.coeff(p, q as u32);
            let term = a * z.powu(p) * z.conj().powu(q as u32);
            acc += term;
            // Remaining terms shrink at least geometrically in |z|^2 once the
            // coefficient tail is spent.
            if term.norm() < SERIES_TERM_TOL && self.tail_bound(p + q.unsigned_abs() as u32) < SERIES_TERM_TOL
            {
                break;
            }
            if r2 == 0.0 && p >= 1 {
                break;
            }
        }
        acc
    }
}

/// The frequency-window projection `P_{k,l}` composed with the degree cutoff
/// `p + q <= n`: retains exactly the entries with `k <= q - p <= l`.
pub fn project_pkl(field: &PolyField, k: i64, l: i64, n: u32) -> Result<PolyField> {
    assert!(k <= l, "window requires k <= l");
    let entries: Vec<_> = field
        .coeffs()
        .filter(|(&(p, q), _)| {
            let freq = q as i64 - p as i64;
            k <= freq && freq <= l && p + q <= n
        })
        .map(|(&pq, &a)| (pq, a))
        .collect();
    if entries.is_empty() {
        return Err(FlowrayError::EmptyWindow { k, l, n });
    }
    PolyField::from_coeffs(entries, None)
}

/// `project_pkl` applied to the degree-`n` truncation of an analytic spec.
pub fn project_pkl_spec(spec: &AnalyticFieldSpec, k: i64, l: i64, n: u32) -> Result<PolyField> {
    let truncated = spec
        .truncate(n)
        .map_err(|_| FlowrayError::EmptyWindow { k, l, n })?;
    project_pkl(&truncated, k, l, n)
}

/// Per-sample data from `c_hat_test`.
#[derive(Debug, Clone, Serialize)]
pub struct CHatSample {
    pub z: (f64, f64),
    /// Number of consecutive nonzero `(c_n, c_{n+1})` pairs found.
    pub pairs: usize,
    /// Empirical sup of the tail ratios `|c_{n+1}/c_n|` (last half of pairs).
    pub tail_sup: f64,
    /// The 1/n -> 0 extrapolation of the ratio sequence: a finite-j estimate
    /// of the limsup.
    pub extrapolated: f64,
}

/// Report of the empirical decay test for the frequency coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct CHatReport {
    /// "pass", "fail", or "not applicable (already polynomial)".
    pub verdict: String,
    pub pass: bool,
    pub margin: f64,
    /// Worst extrapolated limsup estimate over the samples (NaN when not
    /// applicable).
    pub worst_estimate: f64,
    pub samples: Vec<CHatSample>,
}

/// Empirical check of the decay condition `limsup |c_{n+1}(z)/c_n(z)| < 1`.
///
/// For each sample the ratios of consecutive nonzero frequency coefficients
/// are computed up to `j_max`; because a finite `j` cannot certify a limsup,
/// the report combines the empirical sup of the tail ratios with a linear
/// extrapolation of the ratios in `1/n`, and the verdict requires the
/// estimate to stay below `1 - margin` (default margin 0.05) at every sample.
pub fn c_hat_test(
    spec: &AnalyticFieldSpec,
    samples: &[Complex64],
    j_max: i64,
    margin: Option<f64>,
) -> Result<CHatReport> {
    let margin = margin.unwrap_or(0.05);
    if spec.is_polynomial() {
        return Ok(CHatReport {
            verdict: "not applicable (already polynomial)".into(),
            pass: false,
            margin,
            worst_estimate: f64::NAN,
            samples: Vec::new(),
        });
    }
    let mut out = Vec::with_capacity(samples.len());
    let mut worst = 0.0f64;
    for &z in samples {
        assert!(z.norm() > 0.0, "c_hat_test samples must be nonzero");
        // Ratios over consecutive nonzero pairs on the positive-frequency side.
        let mut ratios = Vec::new();
        let mut prev = spec.laurent_coeff(0, z).norm();
        for n in 0..j_max {
            let next = spec.laurent_coeff(n + 1, z).norm();
            if prev > SERIES_TERM_TOL && next > SERIES_TERM_TOL {
                ratios.push((n as f64 + 1.0, next / prev));
            }
            prev = next;
        }
        if ratios.len() < 5 {
            return Err(FlowrayError::InsufficientNonzeroPairs { found: ratios.len() });
        }
        let tail = &ratios[ratios.len() / 2..];
        let tail_sup = tail.iter().fold(0.0f64, |m, &(_, r)| m.max(r));
        // Least-squares fit r_n ~ a + b/n on the tail; `a` estimates the limsup.
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(n, r) in tail {
            let x = 1.0 / n;
            sx += x;
            sy += r;
            sxx += x * x;
            sxy += x * r;
        }
        let m = tail.len() as f64;
        let det = m * sxx - sx * sx;
        let extrapolated = if det.abs() < 1e-14 {
            tail_sup
        } else {
            ((sxx * sy - sx * sxy) / det).max(0.0)
        };
        let estimate = extrapolated.max(tail_sup.min(1.0));
        worst = worst.max(estimate.max(tail_sup));
        out.push(CHatSample {
            z: (z.re, z.im),
            pairs: ratios.len(),
            tail_sup,
            extrapolated,
        });
    }
    let pass = worst < 1.0 - margin;
    Ok(CHatReport {
        verdict: if pass { "pass".into() } else { "fail".into() },
        pass,
        margin,
        worst_estimate: worst,
        samples: out,
    })
}

/// Result of `choose_truncation`: the window, degree, certified tail, and the
/// truncated field itself.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub k: i64,
    pub l: i64,
    pub n: u32,
    /// Certified bound on `sup |mu - P mu|` over the closed disc.
    pub tail: f64,
    pub field: PolyField,
}

/// Maximum total degree attempted by `choose_truncation`.
const TRUNCATION_DEGREE_CAP: u32 = 80;

/// Smallest window `[k, l]` and degree `n` whose certified tail is at most
/// `eps` and whose truncated field passes `membership_check` at `samples`.
pub fn choose_truncation(
    spec: &AnalyticFieldSpec,
    eps: f64,
    samples: &[Complex64],
) -> Result<Truncation> {
    assert!(eps > 0.0, "choose_truncation requires eps > 0");
    // An admissible polynomial is returned verbatim for any eps.
    if let CoeffFamily::Polynomial { field } = &spec.family {
        let report = field.membership_check(samples);
        if report.pass || report.no_rescaling_needed {
            let profile = field.global_exponents();
            return Ok(Truncation {
                k: profile.k_global,
                l: profile.l_global,
                n: field.degree_bound(),
                tail: 0.0,
                field: field.clone(),
            });
        }
        return Err(FlowrayError::NoAdmissibleWindow {
            l_max: field.global_exponents().l_global,
            last_failure: "polynomial field fails membership_check".into(),
        });
    }
    let mut last_failure = String::from("tail bound never reached eps");
    for n in 0..=TRUNCATION_DEGREE_CAP {
        let tail = spec.tail_bound(n);
        if tail > eps {
            continue;
        }
        let field = match spec.truncate(n) {
            Ok(f) => f,
            Err(e) => {
                last_failure = format!("truncation at degree {n} invalid: {e}");
                continue;
            }
        };
        let report = field.membership_check(samples);
        if report.pass || report.no_rescaling_needed {
            let profile = field.global_exponents();
            return Ok(Truncation {
                k: profile.k_global,
                l: profile.l_global,
                n,
                tail,
                field,
            });
        }
        last_failure = format!(
            "membership_check failed at degree {n}: k={}, l={}, violations={}",
            report.k_global, report.l_global, report.violations
        );
    }
    Err(FlowrayError::NoAdmissibleWindow {
        l_max: TRUNCATION_DEGREE_CAP as i64,
        last_failure,
    })
}

/// Resolution settings for the stability experiments.
#[derive(Debug, Clone)]
pub struct StabilityConfig {
    pub n: usize,
    pub n_theta: usize,
    pub n_s: usize,
    pub mask_radius: f64,
    pub n_curves: usize,
    pub quad_dt: f64,
    pub pad_factor: usize,
    /// Tail bound used for the high-fidelity reference truncation.
    pub reference_tail: f64,
    /// Samples for membership checks during truncation selection.
    pub membership_samples: Vec<Complex64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        let membership_samples = (0..24)
            .map(|i| {
                let phi = std::f64::consts::TAU * i as f64 / 24.0;
                Complex64::from_polar(0.35 + 0.5 * ((i % 3) as f64 / 3.0), phi)
            })
            .collect();
        StabilityConfig {
            n: 64,
            n_theta: 64,
            n_s: 129,
            mask_radius: 0.7,
            n_curves: 129,
            quad_dt: 2e-3,
            pad_factor: 8,
            reference_tail: 1e-7,
            membership_samples,
        }
    }
}

/// One row of the stability report.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityRecord {
    pub epsilon: f64,
    pub window: (i64, i64, u32),
    /// Discrete L^q distances between the truncated and reference sinograms,
    /// keyed by the exponent ("inf" for the sup norm).
    pub sino_distance: BTreeMap<String, f64>,
    /// Empirical Schwartz-seminorm distance of the filtered sinograms:
    /// sup-norm plus first-derivative sup-norm of the difference.
    pub schwartz_delta: f64,
    /// Sup-norm gap between the truncated-field and reference reconstructions.
    pub recon_sup_gap: f64,
    pub runtime_s: f64,
}

/// Full stability report with the fitted log-log scaling of the sup-norm
/// sinogram distance against epsilon.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub records: Vec<StabilityRecord>,
    /// Slope of log(sino L^inf distance) vs log(epsilon).
    pub loglog_slope: f64,
}

impl StabilityReport {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.records)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Companion CSV with one row per epsilon for plotting.
    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut qs: Vec<String> = Vec::new();
        for rec in &self.records {
            for key in rec.sino_distance.keys() {
                if !qs.contains(key) {
                    qs.push(key.clone());
                }
            }
        }
        let mut text = String::from("epsilon,k,l,n");
        for q in &qs {
            text.push_str(&format!(",sino_L{q}"));
        }
        text.push_str(",schwartz_delta,recon_sup_gap,runtime_s\n");
        for rec in &self.records {
            text.push_str(&format!(
                "{:.6e},{},{},{}",
                rec.epsilon, rec.window.0, rec.window.1, rec.window.2
            ));
            for q in &qs {
                match rec.sino_distance.get(q) {
                    Some(v) => text.push_str(&format!(",{v:.6e}")),
                    None => text.push(','),
                }
            }
            text.push_str(&format!(
                ",{:.6e},{:.6e},{:.3}\n",
                rec.schwartz_delta, rec.recon_sup_gap, rec.runtime_s
            ));
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn sino_pipeline(
    field: &PolyField,
    phantom: &Phantom,
    config: &StabilityConfig,
) -> Result<(Chart, Sinogram)> {
    let chart = Chart::build(field, config.n_curves, Labeling::Auto)?;
    let sino = ray_transform(
        phantom,
        field,
        &chart,
        config.n_theta,
        config.n_s,
        config.quad_dt,
    )?;
    Ok((chart, sino))
}

/// Resamples `sino` onto the (theta, s) grid of `reference` and returns the
/// per-node differences.
fn sino_difference(sino: &Sinogram, reference: &Sinogram) -> Vec<Vec<f64>> {
    (0..reference.n_theta())
        .map(|j| {
            reference
                .s_nodes
                .iter()
                .enumerate()
                .map(|(m, &s)| sino.sample_row(j, s) - reference.row(j)[m])
                .collect()
        })
        .collect()
}

/// Stability experiment: for each epsilon, truncate, compare sinograms in
/// discrete L^q and reconstructions in sup-norm against a high-fidelity
/// reference truncation, and fit the scaling of the sup-norm sinogram
/// distance against epsilon.
pub fn stability_report(
    spec: &AnalyticFieldSpec,
    phantom: &Phantom,
    eps_list: &[f64],
    q_list: &[f64],
    config: &StabilityConfig,
) -> Result<StabilityReport> {
    // High-fidelity reference pipeline.
    let reference = choose_truncation(spec, config.reference_tail, &config.membership_samples)?;
    let (ref_chart, ref_sino) = sino_pipeline(&reference.field, phantom, config)?;
    let ref_filt = filter_sinogram(&ref_sino, config.pad_factor)?;
    let (ref_grid, _) = backproject(
        &ref_filt,
        &ref_chart,
        &reference.field,
        config.n,
        config.mask_radius,
    )?;

    let d_theta = std::f64::consts::TAU / ref_sino.n_theta() as f64;
    let ds = ref_sino.ds();

    let mut records = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let t0 = std::time::Instant::now();
        let choice = choose_truncation(spec, eps, &config.membership_samples)?;
        let (chart, sino) = sino_pipeline(&choice.field, phantom, config)?;

        let diff = sino_difference(&sino, &ref_sino);
        let mut sino_distance = BTreeMap::new();
        for &q in q_list {
            let key = format!("{q}");
            let total: f64 = diff
                .iter()
                .flatten()
                .map(|d| d.abs().powf(q))
                .sum::<f64>()
                * d_theta
                * ds;
            sino_distance.insert(key, total.powf(1.0 / q));
        }
        let sup = diff.iter().flatten().fold(0.0f64, |m, d| m.max(d.abs()));
        sino_distance.insert("inf".into(), sup);

        // Empirical Schwartz seminorms of the filtered difference.
        let mut schwartz_delta = 0.0f64;
        for j in 0..ref_sino.n_theta() {
            let resampled: Vec<f64> = ref_sino
                .s_nodes
                .iter()
                .map(|&s| sino.sample_row(j, s))
                .collect();
            let h_trunc = hilbert_s(&resampled, config.pad_factor)?;
            let h_ref = hilbert_s(ref_sino.row(j), config.pad_factor)?;
            let h_diff: Vec<f64> = h_trunc.iter().zip(&h_ref).map(|(a, b)| a - b).collect();
            let d_diff = s_derivative(&h_diff, ds);
            let sup0 = h_diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let sup1 = d_diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            schwartz_delta = schwartz_delta.max(sup0 + sup1);
        }

        let filt = filter_sinogram(&sino, config.pad_factor)?;
        let (grid, _) = backproject(&filt, &chart, &choice.field, config.n, config.mask_radius)?;
        let recon_sup_gap = grid.sup_diff(&ref_grid);

        records.push(StabilityRecord {
            epsilon: eps,
            window: (choice.k, choice.l, choice.n),
            sino_distance,
            schwartz_delta,
            recon_sup_gap,
            runtime_s: t0.elapsed().as_secs_f64(),
        });
    }

    // Least-squares slope of log(distance) vs log(eps), over records with a
    // positive sup distance.
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| {
            let d = r.sino_distance.get("inf").copied().unwrap_or(0.0);
            (d > 0.0).then(|| (r.epsilon.ln(), d.ln()))
        })
        .collect();
    let loglog_slope = if pts.len() < 2 {
        f64::NAN
    } else {
        let m = pts.len() as f64;
        let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        let (sxx, sxy): (f64, f64) = pts
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x * x, b + x * y));
        (m * sxy - sx * sy) / (m * sxx - sx * sx)
    };

    Ok(StabilityReport {
        records,
        loglog_slope,
    })
}

/// Convenience: reconstruction `ScalarGrid` for a truncation of the spec, for
/// callers that only need the grids.
pub fn truncated_reconstruction(
    spec: &AnalyticFieldSpec,
    phantom: &Phantom,
    eps: f64,
    config: &StabilityConfig,
) -> Result<(Truncation, ScalarGrid)> {
    let choice = choose_truncation(spec, eps, &config.membership_samples)?;
    let (chart, sino) = sino_pipeline(&choice.field, phantom, config)?;
    let filt = filter_sinogram(&sino, config.pad_factor)?;
    let (grid, _) = backproject(&filt, &chart, &choice.field, config.n, config.mask_radius)?;
    Ok((choice, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::one_plus_alpha_z2;

    fn samples_ring(r: f64, count: usize) -> Vec<Complex64> {
        (0..count)
            .map(|i| Complex64::from_polar(r, std::f64::consts::TAU * i as f64 / count as f64))
            .collect()
    }

    #[test]
    fn projection_windows_and_idempotence() {
        let field = one_plus_alpha_z2(0.3.into()).unwrap();
        // Window [-2, 0] keeps both entries (frequencies -2 and 0).
        let same = project_pkl(&field, -2, 0, 8).unwrap();
        assert_eq!(same.coeffs().count(), 2);
        // Window [0, 0] keeps only the constant.
        let constant = project_pkl(&field, 0, 0, 8).unwrap();
        assert_eq!(constant.coeffs().count(), 1);
        let z = Complex64::new(0.3, -0.2);
        assert!((constant.eval_mu(z) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        // Idempotence on the coefficient table.
        let twice = project_pkl(&same, -2, 0, 8).unwrap();
        assert_eq!(
            twice.coeffs().count(),
            same.coeffs().count()
        );
        for ((pq_a, a), (pq_b, b)) in twice.coeffs().zip(same.coeffs()) {
            assert_eq!(pq_a, pq_b);
            assert_eq!(a, b);
        }
        // Empty window errors.
        assert!(matches!(
            project_pkl(&field, 5, 7, 8),
            Err(FlowrayError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn projection_spectral_identity() {
        // The theta-Fourier coefficients of the projected field vanish outside
        // the window: compare against a discrete Fourier analysis in theta.
        let spec = AnalyticFieldSpec::geometric(0.5, 0.6);
        let proj = project_pkl_spec(&spec, -1, 2, 12).unwrap();
        let z = Complex64::new(0.41, -0.23);
        let n_theta = 64;
        for freq in -6i64..=6 {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n_theta {
                let theta = std::f64::consts::TAU * j as f64 / n_theta as f64;
                // c_n(z) are the Fourier coefficients of mu(z e^{-i theta})
                // rescaled by e^{i n theta}: analyze the rotated evaluation.
                // mu(z e^{-i theta}) = sum_n c_n(z) e^{i n theta}
                let w = z * Complex64::from_polar(1.0, -theta);
                let rot = Complex64::from_polar(1.0, -(freq as f64) * theta);
                acc += proj.eval_mu(w) * rot;
            }
            acc /= n_theta as f64;
            let direct = proj.laurent_coeff(freq, z);
            if freq < -1 || freq > 2 {
                assert!(acc.norm() < 1e-12, "freq {freq} leaked: {}", acc.norm());
            } else {
                assert!(
                    (acc - direct).norm() < 1e-12,
                    "freq {freq}: dft {acc} vs table {direct}"
                );
            }
        }
    }

    #[test]
    fn window_nesting_tails() {
        // beta = 0.4: every truncation stays nonvanishing on the closed disc
        // (the degree-1 truncation of beta = 0.5 vanishes at z = -1).
        let spec = AnalyticFieldSpec::geometric(0.4, 1.0);
        let zs = samples_ring(0.8, 8);
        for n in 1..10u32 {
            // Certified bound is monotone.
            assert!(spec.tail_bound(n) <= spec.tail_bound(n - 1));
            // Actual sup-norm tails on samples are nested too.
            let small = spec.truncate(n - 1).unwrap();
            let large = spec.truncate(n).unwrap();
            for &z in &zs {
                let mu = spec.eval_mu(z);
                assert!(
                    (mu - large.eval_mu(z)).norm() <= (mu - small.eval_mu(z)).norm() + 1e-14
                );
            }
        }
    }

    #[test]
    fn c_hat_geometric_passes_with_half_ratio() {
        let spec = AnalyticFieldSpec::geometric(0.5, 1.0);
        let zs = samples_ring(0.999, 6);
        let report = c_hat_test(&spec, &zs, 40, None).unwrap();
        assert!(report.pass, "verdict: {}", report.verdict);
        for s in &report.samples {
            // ratio is exactly beta |z| for this family
            assert!((s.tail_sup - 0.4995).abs() < 1e-3, "tail sup {}", s.tail_sup);
        }
    }

    #[test]
    fn c_hat_harmonic_fails_and_polynomial_not_applicable() {
        let spec = AnalyticFieldSpec::harmonic(3.0);
        let zs = samples_ring(0.999, 4);
        let report = c_hat_test(&spec, &zs, 60, None).unwrap();
        assert!(!report.pass, "harmonic family should fail: {:?}", report.worst_estimate);

        let poly = AnalyticFieldSpec::polynomial(one_plus_alpha_z2(0.3.into()).unwrap());
        let report = c_hat_test(&poly, &zs, 40, None).unwrap();
        assert_eq!(report.verdict, "not applicable (already polynomial)");
    }

    #[test]
    fn choose_truncation_monotone_and_polynomial_identity() {
        let spec = AnalyticFieldSpec::geometric(0.5, 0.6);
        let zs = samples_ring(0.7, 12);
        let coarse = choose_truncation(&spec, 0.1, &zs).unwrap();
        let fine = choose_truncation(&spec, 0.001, &zs).unwrap();
        assert!(coarse.tail <= 0.1 && fine.tail <= 0.001);
        assert!(fine.n >= coarse.n, "window must grow as eps shrinks");
        assert!(fine.l >= coarse.l && fine.k <= coarse.k);

        let field = one_plus_alpha_z2(0.3.into()).unwrap();
        let poly = AnalyticFieldSpec::polynomial(field.clone());
        let choice = choose_truncation(&poly, 0.5, &zs).unwrap();
        assert_eq!(choice.n, field.degree_bound());
        assert_eq!(choice.tail, 0.0);
    }

    #[test]
    fn stability_identical_fields_give_zero_distances() {
        // A polynomial spec truncates to itself at every eps, so all measured
        // distances must vanish identically.
        let field = one_plus_alpha_z2(0.3.into()).unwrap();
        let spec = AnalyticFieldSpec::polynomial(field);
        let phantom = Phantom::new(
            vec![crate::transforms::Bump {
                center: Complex64::new(0.15, -0.1),
                amplitude: 1.0,
                width: 0.22,
            }],
            0.7,
        );
        let config = StabilityConfig {
            n: 24,
            n_theta: 16,
            n_s: 65,
            n_curves: 65,
            quad_dt: 4e-3,
            ..StabilityConfig::default()
        };
        let report = stability_report(&spec, &phantom, &[0.1, 0.01], &[2.0], &config).unwrap();
        for rec in &report.records {
            assert!(rec.sino_distance["inf"] < 1e-13);
            assert!(rec.sino_distance["2"] < 1e-13);
            assert!(rec.recon_sup_gap < 1e-12);
        }
    }
}
