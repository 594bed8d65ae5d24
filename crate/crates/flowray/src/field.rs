//! Polynomial vector-field coefficients and their Laurent/frequency structure.
//!
//! A field is a finitely supported table `a_pq` defining
//! `mu(z, conj z) = sum a_pq z^p conj(z)^q`, nonvanishing on the closed unit
//! disc. The frequency-`r` combinations `c_r(z) = sum_{q-p=r} a_pq z^p conj(z)^q`
//! and their extreme exponents drive everything downstream.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FlowrayError, Result};

/// Threshold below which a stored coefficient is dropped outright.
const MACHINE_ZERO: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct PolyField {
    /// Sorted coefficient table keyed by (p, q).
    coeffs: BTreeMap<(u32, u32), Complex64>,
    degree_bound: u32,
    zero_tol: f64,
    /// Certified sup-norm bound on the dropped tail, when this table is a
    /// truncation of an analytic field.
    tail_bound: Option<f64>,
    min_abs_on_grid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExponentProfile {
    pub k_global: i64,
    pub l_global: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipSample {
    pub z: Complex64,
    pub local_k: i64,
    pub local_l: i64,
    /// l(z) + k(z) + 2; nonnegative when admissible.
    pub exponent_margin: i64,
    /// |c_l(z)| - |c_k(z)|; positive when admissible (z != 0).
    pub dominance_margin: f64,
    pub mu_abs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub k_global: i64,
    pub l_global: i64,
    /// k_mu < -1 and l_mu >= 0: the rescaling route of the inversion applies.
    pub global_ok: bool,
    /// Set when k_mu >= -1: the complexified coefficient is already
    /// holomorphic and the pipeline skips rescaling.
    pub no_rescaling_needed: bool,
    pub samples: Vec<MembershipSample>,
    pub violations: usize,
    pub pass: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CoeffEntry {
    p: i64,
    q: i64,
    re: f64,
    im: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldFile {
    coeffs: Vec<CoeffEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_tol: Option<f64>,
}

impl PolyField {
    /// Builds a field from `((p, q), a_pq)` entries. Near-zero entries are
    /// dropped; `|mu| > 0` is checked on a polar sample of the closed disc.
    pub fn from_coeffs(
        entries: impl IntoIterator<Item = ((u32, u32), Complex64)>,
        zero_tol: Option<f64>,
    ) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for ((p, q), a) in entries {
            if a.norm() <= MACHINE_ZERO {
                continue;
            }
            if coeffs.insert((p, q), a).is_some() {
                return Err(FlowrayError::InvalidCoefficient(format!(
                    "duplicate entry ({p}, {q})"
                )));
            }
        }
        if coeffs.is_empty() {
            return Err(FlowrayError::InvalidCoefficient(
                "empty coefficient table".into(),
            ));
        }
        let degree_bound = coeffs.keys().map(|&(p, q)| p + q).max().unwrap();
        let max_abs = coeffs
            .values()
            .map(|a| a.norm())
            .fold(0.0f64, f64::max);
        let zero_tol = zero_tol.unwrap_or(1e-12 * max_abs);

        let mut field = PolyField {
            coeffs,
            degree_bound,
            zero_tol,
            tail_bound: None,
            min_abs_on_grid: 0.0,
        };
        field.min_abs_on_grid = field.check_nonvanishing()?;
        Ok(field)
    }

    fn check_nonvanishing(&self) -> Result<f64> {
        let mut min_abs = f64::INFINITY;
        let mut argmin = Complex64::new(0.0, 0.0);
        for ir in 0..=32 {
            let r = ir as f64 / 32.0;
            let n_ang = if ir == 0 { 1 } else { 96 };
            for ia in 0..n_ang {
                let phi = 2.0 * std::f64::consts::PI * ia as f64 / n_ang as f64;
                let z = Complex64::from_polar(r, phi);
                let m = self.eval_mu(z).norm();
                if m < min_abs {
                    min_abs = m;
                    argmin = z;
                }
            }
        }
        if min_abs <= self.zero_tol.max(1e-14) {
            return Err(FlowrayError::FieldVanishes {
                z: argmin,
                value: min_abs,
            });
        }
        Ok(min_abs)
    }

    pub fn constant(a: Complex64) -> Result<Self> {
        Self::from_coeffs([((0, 0), a)], None)
    }

    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }

    pub fn degree_bound(&self) -> u32 {
        self.degree_bound
    }

    pub fn min_abs_on_grid(&self) -> f64 {
        self.min_abs_on_grid
    }

    pub fn tail_bound(&self) -> Option<f64> {
        self.tail_bound
    }

    pub fn set_tail_bound(&mut self, tau: f64) {
        self.tail_bound = Some(tau);
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (&(u32, u32), &Complex64)> {
        self.coeffs.iter()
    }

    /// True when the table has no conj(z) dependence, i.e. mu is holomorphic.
    pub fn is_holomorphic(&self) -> bool {
        self.coeffs.keys().all(|&(_, q)| q == 0)
    }

    /// Swaps the roles of mu and conj(mu). Used when l_mu < 0: the
    /// complementary complexification of the conjugated field has l >= 0.
    pub fn conjugated(&self) -> Result<Self> {
        Self::from_coeffs(
            self.coeffs.iter().map(|(&(p, q), &a)| ((q, p), a.conj())),
            Some(self.zero_tol),
        )
    }

    /// The pushforward of the field under rotation by theta:
    /// mu_theta(z) = e^{i theta} mu(z e^{-i theta}), still polynomial with
    /// coefficients a_pq e^{i theta (1 - p + q)}.
    pub fn rotated(&self, theta: f64) -> Result<Self> {
        Self::from_coeffs(
            self.coeffs.iter().map(|(&(p, q), &a)| {
                let phase = theta * (1.0 - p as f64 + q as f64);
                ((p, q), a * Complex64::from_polar(1.0, phase))
            }),
            Some(self.zero_tol),
        )
    }

    /// mu(z, conj z) by direct summation of the table.
    pub fn eval_mu(&self, z: Complex64) -> Complex64 {
        let zc = z.conj();
        let mut acc = Complex64::new(0.0, 0.0);
        for (&(p, q), &a) in &self.coeffs {
            acc += a * z.powu(p) * zc.powu(q);
        }
        acc
    }

    /// c_r(z) = sum over q - p = r of a_pq z^p conj(z)^q; exactly 0 when no
    /// such (p, q) exists in the table.
    pub fn laurent_coeff(&self, r: i64, z: Complex64) -> Complex64 {
        let zc = z.conj();
        let mut acc = Complex64::new(0.0, 0.0);
        for (&(p, q), &a) in &self.coeffs {
            if q as i64 - p as i64 == r {
                acc += a * z.powu(p) * zc.powu(q);
            }
        }
        acc
    }

    /// Global exponents (k_mu, l_mu), read symbolically off the table.
    pub fn global_exponents(&self) -> ExponentProfile {
        let mut k = i64::MAX;
        let mut l = i64::MIN;
        for &(p, q) in self.coeffs.keys() {
            let r = q as i64 - p as i64;
            k = k.min(r);
            l = l.max(r);
        }
        ExponentProfile {
            k_global: k,
            l_global: l,
        }
    }

    /// Sum of |a_pq| |z|^{p+q} over q - p = r: the natural magnitude scale of
    /// c_r(z), used to tell genuine cancellation from mere smallness.
    fn laurent_mass(&self, r: i64, z: Complex64) -> f64 {
        let rho = z.norm();
        self.coeffs
            .iter()
            .filter(|(&(p, q), _)| q as i64 - p as i64 == r)
            .map(|(&(p, q), a)| a.norm() * rho.powi((p + q) as i32))
            .sum()
    }

    /// Local exponents (k(z), l(z)): extreme r with c_r(z) not cancelling.
    ///
    /// A frequency counts as present when |c_r(z)| exceeds both the absolute
    /// zero_tol floor at z = 0 scale and a relative fraction of its ring mass
    /// sum |a_pq| |z|^{p+q}; the relative test keeps legitimately tiny
    /// high-order coefficients of high-degree truncations visible while still
    /// detecting exact cancellations.
    pub fn local_exponents(&self, z: Complex64) -> Result<(i64, i64)> {
        let profile = self.global_exponents();
        let mut k = i64::MAX;
        let mut l = i64::MIN;
        for r in profile.k_global..=profile.l_global {
            let mass = self.laurent_mass(r, z);
            if mass == 0.0 {
                continue;
            }
            let c = self.laurent_coeff(r, z).norm();
            if c > 1e-9 * mass {
                k = k.min(r);
                l = l.max(r);
            }
        }
        if k == i64::MAX {
            return Err(FlowrayError::AllCoefficientsVanish { z });
        }
        Ok((k, l))
    }

    /// Exponent m = |k_mu| - 1 of the rescaling weight, or None when
    /// k_mu >= -1 and no rescaling is needed.
    pub fn weight_exponent(&self) -> Option<u32> {
        let k = self.global_exponents().k_global;
        if k < -1 {
            Some((k.unsigned_abs() - 1) as u32)
        } else {
            None
        }
    }

    /// w(z) = 2 - z^m - conj(z)^m with m = |k_mu| - 1; identically 1 when
    /// k_mu >= -1.
    pub fn rescale_weight(&self, z: Complex64) -> Result<f64> {
        let Some(m) = self.weight_exponent() else {
            return Ok(1.0);
        };
        let w = 2.0 - 2.0 * z.powu(m).re;
        if w <= 0.0 && z.norm() < 1.0 {
            return Err(FlowrayError::NonpositiveWeight { z, value: w });
        }
        Ok(w)
    }

    /// Checks the membership conditions for the admissible polynomial class:
    /// k_mu < -1, l_mu >= 0, -k(z) <= l(z) + 2, and 0 < |c_k(z)| < |c_l(z)|
    /// away from the origin, plus |mu| > 0 at every sample.
    pub fn membership_check(&self, samples: &[Complex64]) -> MembershipReport {
        let profile = self.global_exponents();
        let no_rescaling_needed = profile.k_global >= -1;
        let global_ok = profile.k_global < -1 && profile.l_global >= 0;

        let mut out = Vec::with_capacity(samples.len());
        let mut violations = 0usize;
        for &z in samples {
            let (lk, ll) = match self.local_exponents(z) {
                Ok(kl) => kl,
                Err(_) => {
                    violations += 1;
                    out.push(MembershipSample {
                        z,
                        local_k: 0,
                        local_l: 0,
                        exponent_margin: i64::MIN,
                        dominance_margin: f64::NEG_INFINITY,
                        mu_abs: self.eval_mu(z).norm(),
                        pass: false,
                    });
                    continue;
                }
            };
            let exponent_margin = ll + lk + 2;
            let ck = self.laurent_coeff(lk, z).norm();
            let cl = self.laurent_coeff(ll, z).norm();
            let dominance_margin = if z.norm() <= self.zero_tol {
                // |c_k(0)| = |c_l(0)| = |a_00|; the strict inequality is only
                // required away from the origin.
                0.0
            } else if lk == ll {
                0.0
            } else {
                cl - ck
            };
            let mu_abs = self.eval_mu(z).norm();
            let pass = exponent_margin >= 0
                && dominance_margin >= 0.0
                && (z.norm() <= self.zero_tol || lk == ll || dominance_margin > 0.0)
                && mu_abs > self.zero_tol;
            if !pass {
                violations += 1;
            }
            out.push(MembershipSample {
                z,
                local_k: lk,
                local_l: ll,
                exponent_margin,
                dominance_margin,
                mu_abs,
                pass,
            });
        }

        MembershipReport {
            k_global: profile.k_global,
            l_global: profile.l_global,
            global_ok,
            no_rescaling_needed,
            violations,
            pass: global_ok && violations == 0,
            samples: out,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<CoeffEntry> = self
            .coeffs
            .iter()
            .map(|(&(p, q), a)| CoeffEntry {
                p: p as i64,
                q: q as i64,
                re: a.re,
                im: a.im,
            })
            .collect();
        serde_json::to_value(FieldFile {
            coeffs: entries,
            zero_tol: Some(self.zero_tol),
        })
        .expect("field serialization cannot fail")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let file: FieldFile = serde_json::from_value(value.clone())?;
        let mut entries = Vec::with_capacity(file.coeffs.len());
        for e in &file.coeffs {
            if e.p < 0 || e.q < 0 {
                return Err(FlowrayError::InvalidCoefficient(format!(
                    "negative exponent ({}, {})",
                    e.p, e.q
                )));
            }
            entries.push(((e.p as u32, e.q as u32), Complex64::new(e.re, e.im)));
        }
        Self::from_coeffs(entries, file.zero_tol)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        Self::from_json(&value)
    }
}

/// mu = 1 + alpha z^2, the workhorse example with k_mu = -2.
pub fn one_plus_alpha_z2(alpha: Complex64) -> Result<PolyField> {
    PolyField::from_coeffs(
        [
            ((0, 0), Complex64::new(1.0, 0.0)),
            ((2, 0), alpha),
        ],
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn z(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn test_field() -> PolyField {
        one_plus_alpha_z2(z(0.3, 0.0)).unwrap()
    }

    #[test]
    fn eval_mu_examples() {
        let f = test_field();
        assert_abs_diff_eq!(f.eval_mu(z(0.0, 0.0)).re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval_mu(z(1.0, 0.0)).re, 1.3, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval_mu(z(0.0, 1.0)).re, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval_mu(z(0.0, 1.0)).im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn laurent_coeff_examples() {
        let f = test_field();
        assert_abs_diff_eq!(f.laurent_coeff(-2, z(1.0, 0.0)).re, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(f.laurent_coeff(0, z(0.37, 0.2)).re, 1.0, epsilon = 1e-15);
        assert_eq!(f.laurent_coeff(3, z(0.5, 0.1)), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn exponent_examples() {
        let f = test_field();
        assert_eq!(f.local_exponents(z(0.5, 0.0)).unwrap(), (-2, 0));
        assert_eq!(f.local_exponents(z(0.0, 0.0)).unwrap(), (0, 0));
        let g = f.global_exponents();
        assert_eq!((g.k_global, g.l_global), (-2, 0));
    }

    #[test]
    fn rescale_weight_examples() {
        let f = test_field();
        assert_abs_diff_eq!(f.rescale_weight(z(0.0, 0.0)).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.rescale_weight(z(0.5, 0.0)).unwrap(), 1.0, epsilon = 1e-15);
        // w(z) = 2 - 2 Re z^m can exceed 2 on the left half of the disc.
        assert_abs_diff_eq!(f.rescale_weight(z(-0.5, 0.0)).unwrap(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rescale_weight_positive_and_real_on_disc() {
        let f = test_field();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let r: f64 = rng.random_range(0.0..1.0f64).sqrt();
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let w = f.rescale_weight(Complex64::from_polar(r, phi)).unwrap();
            assert!(w > 0.0 && w < 4.0);
        }
    }

    #[test]
    fn membership_examples() {
        let f = test_field();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<Complex64> = (0..1000)
            .map(|_| {
                let r: f64 = rng.random_range(0.0..1.0f64).sqrt();
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                Complex64::from_polar(r, phi)
            })
            .collect();
        let rep = f.membership_check(&samples);
        assert!(rep.pass, "violations: {}", rep.violations);

        let bad = one_plus_alpha_z2(z(2.0, 0.0)).unwrap();
        let rep = bad.membership_check(&[z(0.8, 0.0)]);
        assert!(!rep.pass);
        assert!(rep.samples[0].dominance_margin < 0.0);

        let trivial = PolyField::constant(z(1.0, 0.0)).unwrap();
        let rep = trivial.membership_check(&[z(0.3, 0.1)]);
        assert!(rep.no_rescaling_needed);
        assert!(!rep.global_ok);
    }

    #[test]
    fn membership_alpha_sweep() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let amp: f64 = rng.random_range(0.01..0.99f64);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let f = one_plus_alpha_z2(Complex64::from_polar(amp, phase)).unwrap();
            let samples: Vec<Complex64> = (0..50)
                .map(|_| {
                    let r: f64 = rng.random_range(0.0..0.999f64);
                    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    Complex64::from_polar(r, phi)
                })
                .collect();
            assert!(f.membership_check(&samples).pass, "alpha modulus {amp}");
        }
    }

    #[test]
    fn json_round_trip_rejects_bad_input() {
        let f = test_field();
        let val = f.to_json();
        let back = PolyField::from_json(&val).unwrap();
        assert_eq!(back.coeffs.len(), 2);

        let bad: serde_json::Value = serde_json::from_str(
            r#"{"coeffs":[{"p":-1,"q":0,"re":1.0,"im":0.0}]}"#,
        )
        .unwrap();
        assert!(PolyField::from_json(&bad).is_err());

        let dup: serde_json::Value = serde_json::from_str(
            r#"{"coeffs":[{"p":0,"q":0,"re":1.0,"im":0.0},{"p":0,"q":0,"re":0.5,"im":0.0}]}"#,
        )
        .unwrap();
        assert!(PolyField::from_json(&dup).is_err());
    }

    proptest! {
        /// Partition identity: summing c_r over the global exponent range
        /// reproduces mu at any disc point.
        #[test]
        fn partition_identity(re in -0.7f64..0.7, im in -0.7f64..0.7, a in 0.05f64..0.9) {
            let f = one_plus_alpha_z2(z(a, 0.2 * a)).unwrap();
            let p = f.global_exponents();
            let zz = z(re, im);
            let mut acc = Complex64::new(0.0, 0.0);
            for r in p.k_global..=p.l_global {
                acc += f.laurent_coeff(r, zz);
            }
            let mu = f.eval_mu(zz);
            prop_assert!((acc - mu).norm() <= 1e-12 * mu.norm().max(1.0));
        }

        /// Exponent bracketing at random samples.
        #[test]
        fn exponent_bracketing(re in -0.7f64..0.7, im in -0.7f64..0.7) {
            let f = test_field();
            let p = f.global_exponents();
            let (lk, ll) = f.local_exponents(z(re, im)).unwrap();
            prop_assert!(p.k_global <= lk && lk <= ll && ll <= p.l_global);
        }
    }
}
