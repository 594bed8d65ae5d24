//! Complexified coefficients of the rotated field, the interior root field
//! lambda_i(z), and certification of the holomorphy conditions.
//!
//! Substituting (z, conj z) -> (z/lambda, lambda conj z) with the pushforward
//! scaling turns the rotation angle into a disc variable lambda. The dz and
//! d(conj z) coefficients become Laurent polynomials in lambda; after the
//! rescaling by w(z) their numerators carry only nonnegative powers and the
//! inversion formula evaluates a Poisson kernel at an interior root of the
//! dz coefficient.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{FlowrayError, Result};
use crate::field::PolyField;
use crate::flow::Chart;

/// Finite Laurent polynomial in lambda at a fixed z.
#[derive(Debug, Clone, Default)]
pub struct LaurentPoly {
    terms: BTreeMap<i64, Complex64>,
}

impl LaurentPoly {
    pub fn from_terms(terms: impl IntoIterator<Item = (i64, Complex64)>) -> Self {
        let mut map = BTreeMap::new();
        for (r, c) in terms {
            if c.norm() > 0.0 {
                *map.entry(r).or_insert(Complex64::new(0.0, 0.0)) += c;
            }
        }
        LaurentPoly { terms: map }
    }

    pub fn one() -> Self {
        Self::from_terms([(0, Complex64::new(1.0, 0.0))])
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.terms.iter().map(|(&r, &c)| (r, c))
    }

    pub fn term(&self, r: i64) -> Complex64 {
        self.terms.get(&r).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn eval(&self, lambda: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&r, &c) in &self.terms {
            acc += c * lambda.powi(r as i32);
        }
        acc
    }

    /// Coefficient vector in ascending powers over [min_exp, max_exp].
    pub fn coeff_vec(&self) -> (i64, Vec<Complex64>) {
        if self.terms.is_empty() {
            return (0, vec![]);
        }
        let lo = *self.terms.keys().next().unwrap();
        let hi = *self.terms.keys().next_back().unwrap();
        let mut v = vec![Complex64::new(0.0, 0.0); (hi - lo + 1) as usize];
        for (&r, &c) in &self.terms {
            v[(r - lo) as usize] = c;
        }
        (lo, v)
    }
}

/// The pair (a, b) of complexified coefficients at a fixed z, stored as
/// Laurent numerators over a shared denominator (the complexified weight).
#[derive(Debug, Clone)]
pub struct ComplexifiedCoeffs {
    pub a_num: LaurentPoly,
    pub b_num: LaurentPoly,
    pub denom: LaurentPoly,
    pub rescaled: bool,
}

impl ComplexifiedCoeffs {
    pub fn eval_a(&self, lambda: Complex64) -> Complex64 {
        self.a_num.eval(lambda) / self.denom.eval(lambda)
    }

    pub fn eval_b(&self, lambda: Complex64) -> Complex64 {
        self.b_num.eval(lambda) / self.denom.eval(lambda)
    }
}

/// Complexified coefficient pair at z. Unrescaled: xi has terms
/// c_r lambda^{r+1}, rho has conj(c_r) lambda^{-r-1}. Rescaled (k_mu < -1):
/// numerators at exponents r + |k_mu| and |k_mu| - r - 2 over the shared
/// denominator 2 lambda^m - z^m - conj(z)^m lambda^{2m}, m = |k_mu| - 1.
pub fn complexified_coeffs(field: &PolyField, z: Complex64, rescaled: bool) -> ComplexifiedCoeffs {
    let profile = field.global_exponents();
    let use_rescale = rescaled && field.weight_exponent().is_some();
    let k_abs = profile.k_global.unsigned_abs() as i64;

    let mut a_terms = Vec::new();
    let mut b_terms = Vec::new();
    for r in profile.k_global..=profile.l_global {
        let c = field.laurent_coeff(r, z);
        if c.norm() == 0.0 {
            continue;
        }
        if use_rescale {
            a_terms.push((r + k_abs, c));
            b_terms.push((k_abs - r - 2, c.conj()));
        } else {
            a_terms.push((r + 1, c));
            b_terms.push((-r - 1, c.conj()));
        }
    }

    let denom = if use_rescale {
        let m = (k_abs - 1) as u32;
        LaurentPoly::from_terms([
            (0, -z.powu(m)),
            (m as i64, Complex64::new(2.0, 0.0)),
            (2 * m as i64, -z.conj().powu(m)),
        ])
    } else {
        LaurentPoly::one()
    };

    ComplexifiedCoeffs {
        a_num: LaurentPoly::from_terms(a_terms),
        b_num: LaurentPoly::from_terms(b_terms),
        denom,
        rescaled: use_rescale,
    }
}

/// Roots of a polynomial (ascending coefficients) via companion-matrix
/// eigenvalues.
pub fn poly_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return vec![];
    }
    let mut c: Vec<Complex64> = coeffs.to_vec();
    while let Some(last) = c.last() {
        if last.norm() <= 1e-14 * scale && c.len() > 1 {
            c.pop();
        } else {
            break;
        }
    }
    let n = c.len() - 1;
    if n == 0 {
        return vec![];
    }
    let lead = c[n];
    if n == 1 {
        return vec![-c[0] / lead];
    }
    let mut m = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        m[(i, n - 1)] = -c[i] / lead;
        if i + 1 < n {
            m[(i + 1, i)] = Complex64::new(1.0, 0.0);
        }
    }
    match m.schur().eigenvalues() {
        Some(eig) => eig.iter().copied().collect(),
        None => vec![],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RootsInDisc {
    pub count: usize,
    pub roots: Vec<Complex64>,
}

/// Radius of the counting circle: roots are "interior" when |lambda| < R.
const DISC_RADIUS: f64 = 1.0 - 1e-9;

/// Counts roots inside the disc two ways: winding number of the polynomial
/// image of |lambda| = R (argument principle, adaptive nodes) and
/// companion-matrix eigenvalues filtered to |lambda| < R. The counts must
/// agree.
pub fn roots_in_disc(coeffs: &[Complex64]) -> Result<RootsInDisc> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Ok(RootsInDisc {
            count: 0,
            roots: vec![],
        });
    }
    let eval = |lambda: Complex64| -> Complex64 {
        // Horner, ascending coefficients.
        let mut acc = Complex64::new(0.0, 0.0);
        for &c in coeffs.iter().rev() {
            acc = acc * lambda + c;
        }
        acc
    };

    let mut n_nodes = 256usize;
    let mut winding: Option<i64> = None;
    let mut min_on_circle = f64::INFINITY;
    loop {
        let mut total_phase = 0.0f64;
        let mut prev = eval(Complex64::from_polar(DISC_RADIUS, 0.0));
        let mut max_step = 0.0f64;
        min_on_circle = min_on_circle.min(prev.norm());
        for i in 1..=n_nodes {
            let th = std::f64::consts::TAU * i as f64 / n_nodes as f64;
            let cur = eval(Complex64::from_polar(DISC_RADIUS, th));
            min_on_circle = min_on_circle.min(cur.norm());
            let d = (cur / prev).arg();
            max_step = max_step.max(d.abs());
            total_phase += d;
            prev = cur;
        }
        let count = (total_phase / std::f64::consts::TAU).round() as i64;
        if max_step < std::f64::consts::FRAC_PI_2 && winding == Some(count) {
            winding = Some(count);
            break;
        }
        winding = Some(count);
        if n_nodes >= 1 << 16 {
            break;
        }
        n_nodes *= 2;
    }
    let winding = winding.unwrap();

    let all_roots = poly_roots(coeffs);
    let inside: Vec<Complex64> = all_roots
        .into_iter()
        .filter(|r| r.norm() < DISC_RADIUS)
        .collect();

    if winding != inside.len() as i64 {
        return Err(FlowrayError::MethodDisagreement {
            winding,
            eigen: inside.len(),
            min_on_circle,
        });
    }
    Ok(RootsInDisc {
        count: inside.len(),
        roots: inside,
    })
}

/// Deterministic interior-root selection: smallest modulus, ties broken by
/// smallest principal argument in [0, 2 pi).
pub fn select_root(candidates: &[Complex64]) -> Option<Complex64> {
    fn key(c: &Complex64) -> (f64, f64) {
        let mut arg = c.arg();
        if arg < -1e-15 {
            arg += std::f64::consts::TAU;
        }
        (c.norm(), arg.max(0.0))
    }
    candidates
        .iter()
        .copied()
        .min_by(|a, b| {
            let (ma, aa) = key(a);
            let (mb, ab) = key(b);
            (ma, aa).partial_cmp(&(mb, ab)).unwrap()
        })
}

/// All interior roots of the (rescaled) dz-coefficient numerator at z,
/// including a root at the origin contributed by the exponent shift.
pub fn interior_roots(field: &PolyField, z: Complex64) -> Result<Vec<Complex64>> {
    if z.norm() == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0)]);
    }
    let (k, l) = field.local_exponents(z)?;
    let shift_base = if field.weight_exponent().is_some() {
        field.global_exponents().k_global.unsigned_abs() as i64
    } else {
        1
    };
    let mut out = Vec::new();
    if k + shift_base > 0 {
        out.push(Complex64::new(0.0, 0.0));
    }
    if l > k {
        let coeffs: Vec<Complex64> = (k..=l).map(|r| field.laurent_coeff(r, z)).collect();
        out.extend(
            poly_roots(&coeffs)
                .into_iter()
                .filter(|r| r.norm() < DISC_RADIUS),
        );
    }
    Ok(out)
}

/// A root lambda_i(z) in the open disc of the complexified dz-coefficient.
pub fn find_lambda_i(field: &PolyField, z: Complex64) -> Result<Complex64> {
    let roots = interior_roots(field, z)?;
    select_root(&roots).ok_or(FlowrayError::NoInteriorRoot { z })
}

#[derive(Debug, Clone, Serialize)]
pub struct JensenCriteria {
    /// Circle average of log |a-numerator| minus log |c_k|; positive means
    /// an interior root exists.
    pub cond1_margin: f64,
    /// log |c_l| minus the circle average for the b-numerator; zero within
    /// quadrature error means b does not vanish on the punctured disc,
    /// negative means it does.
    pub cond2_margin: f64,
    pub vacuous: bool,
}

/// Jensen-formula margins for conditions 1 and 2. Trapezoid rule with
/// `quad_n` nodes; the node grid is rotated by a half step when the
/// integrand passes too close to a zero of the polynomial.
pub fn jensen_criteria(field: &PolyField, z: Complex64, quad_n: usize) -> Result<JensenCriteria> {
    let quad_n = quad_n.max(512);
    let (k, l) = field.local_exponents(z)?;
    if z.norm() == 0.0 || k == l {
        return Ok(JensenCriteria {
            cond1_margin: 0.0,
            cond2_margin: 0.0,
            vacuous: true,
        });
    }
    let coeffs: Vec<Complex64> = (k..=l).map(|r| field.laurent_coeff(r, z)).collect();
    let conj_rev: Vec<Complex64> = coeffs.iter().rev().map(|c| c.conj()).collect();

    // |c_k| and |c_l|: first and last of the local range, both above zero_tol
    // by construction of the local exponents.
    let log_ck = coeffs.first().unwrap().norm().ln();
    let log_cl = coeffs.last().unwrap().norm().ln();

    let mean_log = |poly: &[Complex64]| -> Result<f64> {
        let scale = poly.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        for shift in [0.0, 0.5] {
            let mut acc = 0.0f64;
            let mut min_abs = f64::INFINITY;
            for i in 0..quad_n {
                let th = std::f64::consts::TAU * (i as f64 + shift) / quad_n as f64;
                let lam = Complex64::from_polar(1.0, th);
                let mut v = Complex64::new(0.0, 0.0);
                for &c in poly.iter().rev() {
                    v = v * lam + c;
                }
                let m = v.norm();
                min_abs = min_abs.min(m);
                acc += m.ln();
            }
            if min_abs > 1e-10 * scale.max(1.0) {
                return Ok(acc / quad_n as f64);
            }
            if shift == 0.5 {
                return Err(FlowrayError::QuadratureNearSingular { z, min_abs });
            }
        }
        unreachable!()
    };

    let cond1_margin = mean_log(&coeffs)? - log_ck;
    let cond2_margin = log_cl - mean_log(&conj_rev)?;
    Ok(JensenCriteria {
        cond1_margin,
        cond2_margin,
        vacuous: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Vacuous,
    Assumed,
}

#[derive(Debug, Clone, Serialize)]
pub struct HnessSample {
    pub z: Complex64,
    pub cond1: Verdict,
    pub cond1_margin: f64,
    pub lambda_i: Option<Complex64>,
    pub cond2: Verdict,
    pub cond2_margin: f64,
    pub b_interior_roots: Vec<Complex64>,
    pub cond3: Verdict,
    pub cond3_exponent_margin: i64,
    pub cond3_ratio: f64,
    /// Interior zeros of the complexified weight denominator; recorded as
    /// holomorphy caveats, they do not fail the sample.
    pub denominator_roots: Vec<Complex64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HnessReport {
    pub samples: Vec<HnessSample>,
    pub cond4: Verdict,
    pub denominator_clean: bool,
    pub aggregate: Verdict,
}

/// Certifies conditions 1-3 of type H at each sample, cross-checking the
/// Jensen margins against argument-principle root counts, and audits the
/// complexified weight denominator for interior zeros. Condition 4 is
/// reported as assumed.
pub fn hness_check(field: &PolyField, samples: &[Complex64], quad_n: usize) -> HnessReport {
    use rayon::prelude::*;

    let recs: Vec<HnessSample> = samples
        .par_iter()
        .map(|&z| hness_sample(field, z, quad_n))
        .collect();
    let denominator_clean = recs.iter().all(|r| r.denominator_roots.is_empty());
    let aggregate = if recs.iter().all(|r| r.pass) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    HnessReport {
        samples: recs,
        cond4: Verdict::Assumed,
        denominator_clean,
        aggregate,
    }
}

fn hness_sample(field: &PolyField, z: Complex64, quad_n: usize) -> HnessSample {
    let cc = complexified_coeffs(field, z, true);
    let jc = jensen_criteria(field, z, quad_n).ok();
    let (local_k, local_l) = field.local_exponents(z).unwrap_or((0, 0));

    // Condition 1: interior root of the dz-coefficient.
    let lambda_i = find_lambda_i(field, z).ok();
    let cond1_margin = jc.as_ref().map(|j| j.cond1_margin).unwrap_or(f64::NAN);
    let cond1 = match (&jc, lambda_i) {
        (Some(j), _) if j.vacuous && lambda_i.is_some() => Verdict::Vacuous,
        (_, Some(_)) => Verdict::Pass,
        _ => Verdict::Fail,
    };

    // Condition 2: no zeros of b in the punctured disc. The reversed
    // conjugate coefficient vector has nonzero constant term, so every
    // companion root is away from the origin.
    let cond2_margin = jc.as_ref().map(|j| j.cond2_margin).unwrap_or(f64::NAN);
    let b_interior_roots = if local_l > local_k {
        let conj_rev: Vec<Complex64> = (local_k..=local_l)
            .rev()
            .map(|r| field.laurent_coeff(r, z).conj())
            .collect();
        roots_in_disc(&conj_rev)
            .map(|r| r.roots)
            .unwrap_or_default()
    } else {
        vec![]
    };
    let cond2 = match &jc {
        Some(j) if j.vacuous => Verdict::Vacuous,
        _ if b_interior_roots.is_empty() => Verdict::Pass,
        _ => Verdict::Fail,
    };

    // Condition 3: a/b stays bounded as lambda -> 0.
    let cond3_exponent_margin = local_l + local_k + 2;
    let ck = field.laurent_coeff(local_k, z).norm();
    let cl = field.laurent_coeff(local_l, z).norm();
    let cond3_ratio = if cl > 0.0 { ck / cl } else { f64::INFINITY };
    let cond3 = if z.norm() == 0.0 || local_k == local_l {
        Verdict::Vacuous
    } else if cond3_exponent_margin >= 0 && cond3_ratio < 1.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };

    // Denominator audit, regardless of the triangle-inequality claim.
    let denominator_roots = if cc.rescaled {
        let (_, denom_coeffs) = cc.denom.coeff_vec();
        roots_in_disc(&denom_coeffs)
            .map(|r| r.roots)
            .unwrap_or_default()
    } else {
        vec![]
    };

    let pass = cond1 != Verdict::Fail && cond2 != Verdict::Fail && cond3 != Verdict::Fail;
    HnessSample {
        z,
        cond1,
        cond1_margin,
        lambda_i,
        cond2,
        cond2_margin,
        b_interior_roots,
        cond3,
        cond3_exponent_margin,
        cond3_ratio,
        denominator_roots,
        pass,
    }
}

/// Coefficients of the orthogonal field at angle theta, sign-fixed by the
/// chart orientation: sigma * (-i a(z, e^{i theta}), i b(z, e^{i theta})).
/// Rescaled coefficients are used whenever the field requires rescaling.
pub fn orthogonal_coeffs(
    field: &PolyField,
    z: Complex64,
    theta: f64,
    chart: &Chart,
) -> (Complex64, Complex64) {
    let cc = complexified_coeffs(field, z, true);
    let lam = Complex64::from_polar(1.0, theta);
    let xi = cc.eval_a(lam);
    let rho = cc.eval_b(lam);
    let sigma = chart.orientation_sign();
    let i = Complex64::new(0.0, 1.0);
    (-i * xi * sigma, i * rho * sigma)
}
