//! Characteristic curves of X = mu d + conj(mu) dbar (dz/dt = mu(z)) and the
//! transverse (t, s) chart on the disc.
//!
//! Three chart backends are provided. For mu = c(1 + alpha z^2) the rational
//! labeling s = -Im z / (1 + alpha |z|^2) is exact and, crucially, has a
//! rational (meromorphic) continuation in the complexification parameter,
//! which the inversion formula requires. For other holomorphic mu the
//! primitive F(z) = int dz / mu gives t = Re F, s = -Im F in closed form with
//! exact gradients. For general fields s is the inflow-boundary arclength at
//! the backward foot-point, tabulated on a Cartesian grid and interpolated
//! bicubically; exact backward-traced evaluation remains available for
//! precision checks.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{FlowrayError, Result};
use crate::field::PolyField;

const TAU: f64 = std::f64::consts::TAU;

/// One integration sample along a characteristic.
#[derive(Debug, Clone, Copy)]
pub struct CurveSample {
    pub t: f64,
    pub z: Complex64,
}

/// A traced characteristic with samples strictly increasing in t.
#[derive(Debug, Clone)]
pub struct Curve {
    pub samples: Vec<CurveSample>,
    /// True when the trace ended on |z| = 1 (as opposed to the time cap).
    pub boundary_hit: bool,
    /// s-label of the curve when launched from the chart inflow boundary.
    pub label: Option<f64>,
}

impl Curve {
    pub fn first(&self) -> CurveSample {
        self.samples[0]
    }
    pub fn last(&self) -> CurveSample {
        *self.samples.last().unwrap()
    }
}

/// Which s-labeling the chart uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Labeling {
    /// Rational for mu = c(1 + alpha z^2) with c > 0 and alpha >= 0 real,
    /// HolomorphicPrimitive for other holomorphic fields, Arclength otherwise.
    Auto,
    /// s = -Im int dz/mu; requires a holomorphic field.
    HolomorphicPrimitive,
    /// s = -Im z / (1 + alpha |z|^2) for mu = c(1 + alpha z^2). Unlike the
    /// holomorphic primitive (whose lambda-continuation has branch points at
    /// the interior coefficient roots), this labeling complexifies to a
    /// rational, hence meromorphic, function of lambda — the property the
    /// boundary-value analysis behind the inversion formula needs.
    Rational,
    /// s = arclength along the inflow boundary at the backward foot-point.
    Arclength,
}

/// alpha when the field is c(1 + alpha z^2), c > 0 real, alpha >= 0 real.
fn rational_alpha(field: &PolyField) -> Option<f64> {
    let mut c0 = Complex64::new(0.0, 0.0);
    let mut c2 = Complex64::new(0.0, 0.0);
    for (&(p, q), &a) in field.coeffs() {
        match (p, q) {
            (0, 0) => c0 = a,
            (2, 0) => c2 = a,
            _ => {
                if a.norm() > 1e-14 {
                    return None;
                }
            }
        }
    }
    if c0.re <= 0.0 || c0.im.abs() > 1e-14 {
        return None;
    }
    let alpha = c2 / c0;
    if alpha.im.abs() > 1e-14 || alpha.re < 0.0 {
        return None;
    }
    Some(alpha.re)
}

fn rational_s(alpha: f64, z: Complex64) -> f64 {
    -z.im / (1.0 + alpha * z.norm_sqr())
}

/// Exact Wirtinger derivative of `rational_s` with respect to z.
fn rational_ds(alpha: f64, z: Complex64) -> Complex64 {
    let two_i = Complex64::new(0.0, 2.0);
    let d = 1.0 + alpha * z.norm_sqr();
    -Complex64::new(1.0, 0.0) / (two_i * d) + (z - z.conj()) * (alpha * z.conj()) / (two_i * d * d)
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) with PI-free basic step control and boundary bisection.
// ---------------------------------------------------------------------------

const RTOL: f64 = 1e-9;
const ATOL: f64 = 1e-12;

type State = [f64; 3];

fn dp_step<F: Fn(&State) -> State>(f: &F, y: &State, h: f64) -> (State, State) {
    let a21 = 1.0 / 5.0;
    let (a31, a32) = (3.0 / 40.0, 9.0 / 40.0);
    let (a41, a42, a43) = (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0);
    let (a51, a52, a53, a54) = (
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    );
    let (a61, a62, a63, a64, a65) = (
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    );
    let (b1, b3, b4, b5, b6) = (
        35.0 / 384.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    );
    let (e1, e3, e4, e5, e6, e7) = (
        5179.0 / 57600.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    );

    let add = |y: &State, parts: &[(f64, &State)]| -> State {
        let mut out = *y;
        for (c, k) in parts {
            for i in 0..3 {
                out[i] += h * c * k[i];
            }
        }
        out
    };

    let k1 = f(y);
    let k2 = f(&add(y, &[(a21, &k1)]));
    let k3 = f(&add(y, &[(a31, &k1), (a32, &k2)]));
    let k4 = f(&add(y, &[(a41, &k1), (a42, &k2), (a43, &k3)]));
    let k5 = f(&add(y, &[(a51, &k1), (a52, &k2), (a53, &k3), (a54, &k4)]));
    let k6 = f(&add(
        y,
        &[(a61, &k1), (a62, &k2), (a63, &k3), (a64, &k4), (a65, &k5)],
    ));
    let y5 = add(y, &[(b1, &k1), (b3, &k3), (b4, &k4), (b5, &k5), (b6, &k6)]);
    let k7 = f(&y5);
    let y4 = add(
        y,
        &[(e1, &k1), (e3, &k3), (e4, &k4), (e5, &k5), (e6, &k6), (e7, &k7)],
    );
    (y5, y4)
}

fn err_norm(y: &State, y5: &State, y4: &State) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        let sc = ATOL + RTOL * y[i].abs().max(y5[i].abs());
        let e = (y5[i] - y4[i]) / sc;
        acc += e * e;
    }
    (acc / 3.0).sqrt()
}

/// Raw adaptive trace of dz/dtau = dir * mu(z), du/dtau = g(z), from z0,
/// forward in the internal parameter tau >= 0 until |z| = 1 (located to
/// 1e-10) or tau > t_max.
struct RawTrace {
    /// (tau, z) samples, tau ascending from 0.
    samples: Vec<(f64, Complex64)>,
    integral: f64,
    boundary_hit: bool,
}

fn trace_raw(
    field: &PolyField,
    z0: Complex64,
    dir: f64,
    g: Option<&dyn Fn(Complex64) -> f64>,
    t_max: f64,
) -> Result<RawTrace> {
    let deriv = |y: &State| -> State {
        let z = Complex64::new(y[0], y[1]);
        let m = field.eval_mu(z) * dir;
        let gv = g.map(|g| g(z)).unwrap_or(0.0);
        [m.re, m.im, gv]
    };

    let mut y: State = [z0.re, z0.im, 0.0];
    let mut tau = 0.0f64;
    let mut samples = vec![(0.0, z0)];

    // Already on the boundary and moving outward: empty trace.
    if z0.norm() >= 1.0 - 1e-12 {
        let d = deriv(&y);
        if z0.re * d[0] + z0.im * d[1] >= 0.0 {
            return Ok(RawTrace {
                samples,
                integral: 0.0,
                boundary_hit: true,
            });
        }
    }

    let mut h = 1e-3f64;
    let mut boundary_hit = false;
    for _ in 0..400_000 {
        if tau > t_max {
            return Err(FlowrayError::Trapped { z0, t_max });
        }
        let (y5, y4) = dp_step(&deriv, &y, h);
        let err = err_norm(&y, &y5, &y4);
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            continue;
        }
        let z_new = Complex64::new(y5[0], y5[1]);
        if z_new.norm() >= 1.0 {
            // Bisection on the step fraction for the boundary crossing.
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let mut alpha = 1.0;
            let mut y_hit = y5;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let (ym, _) = dp_step(&deriv, &y, h * mid);
                let r = Complex64::new(ym[0], ym[1]).norm();
                alpha = mid;
                y_hit = ym;
                if r >= 1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if (r - 1.0).abs() < 1e-10 {
                    break;
                }
            }
            tau += h * alpha;
            y = y_hit;
            samples.push((tau, Complex64::new(y[0], y[1])));
            boundary_hit = true;
            break;
        }
        tau += h;
        y = y5;
        samples.push((tau, z_new));
        h *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        h = h.min(t_max);
    }
    if !boundary_hit && tau <= t_max {
        return Err(FlowrayError::Trapped { z0, t_max });
    }
    Ok(RawTrace {
        samples,
        integral: y[2],
        boundary_hit,
    })
}

/// Time cap for traces: 50 crossings of the disc at the slowest grid speed.
pub fn t_max_for(field: &PolyField) -> f64 {
    50.0 * 2.0 / field.min_abs_on_grid().max(1e-6)
}

/// Integrates dz/dt = direction * mu(z) from z0 until the boundary.
/// Samples are reported in ascending physical time t (negative for the
/// backward direction).
pub fn trace_curve(field: &PolyField, z0: Complex64, direction: f64) -> Result<Curve> {
    let raw = trace_raw(field, z0, direction.signum(), None, t_max_for(field))?;
    let mut samples: Vec<CurveSample> = raw
        .samples
        .iter()
        .map(|&(tau, z)| CurveSample {
            t: direction.signum() * tau,
            z,
        })
        .collect();
    if direction < 0.0 {
        samples.reverse();
    }
    Ok(Curve {
        samples,
        boundary_hit: raw.boundary_hit,
        label: None,
    })
}

// ---------------------------------------------------------------------------
// Inflow boundary
// ---------------------------------------------------------------------------

/// A maximal arc {e^{i phi} : phi in [start, start + len]} of the unit circle
/// where the radial velocity Re(conj(z) mu(z)) is negative.
#[derive(Debug, Clone, Copy)]
pub struct InflowArc {
    pub start: f64,
    pub len: f64,
    /// s-label at the arc start (labels run by arclength within the arc).
    pub label_offset: f64,
}

fn radial_velocity(field: &PolyField, phi: f64) -> f64 {
    let z = Complex64::from_polar(1.0, phi);
    (z.conj() * field.eval_mu(z)).re
}

fn locate_inflow_arcs(field: &PolyField) -> Result<Vec<InflowArc>> {
    let n = 4096usize;
    let v: Vec<f64> = (0..n)
        .map(|i| radial_velocity(field, TAU * i as f64 / n as f64))
        .collect();
    let refine = |mut lo: f64, mut hi: f64| -> f64 {
        // Sign change bracketed in [lo, hi].
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if radial_velocity(field, lo).signum() == radial_velocity(field, mid).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        0.5 * (lo + hi)
    };

    let mut crossings: Vec<(f64, bool)> = Vec::new(); // (phi, enters_inflow)
    for i in 0..n {
        let j = (i + 1) % n;
        if v[i] >= 0.0 && v[j] < 0.0 {
            let phi = refine(TAU * i as f64 / n as f64, TAU * (i + 1) as f64 / n as f64);
            crossings.push((phi, true));
        } else if v[i] < 0.0 && v[j] >= 0.0 {
            let phi = refine(TAU * i as f64 / n as f64, TAU * (i + 1) as f64 / n as f64);
            crossings.push((phi, false));
        }
    }

    if crossings.is_empty() {
        if v[0] < 0.0 {
            // Whole circle is inflow; impossible for a non-trapping field,
            // but representable.
            return Ok(vec![InflowArc {
                start: 0.0,
                len: TAU,
                label_offset: 0.0,
            }]);
        }
        return Err(FlowrayError::MultiComponentInflow { arcs: 0 });
    }

    let mut arcs = Vec::new();
    for &(phi, enters) in &crossings {
        if !enters {
            continue;
        }
        // Find the matching exit crossing after phi.
        let mut best = f64::INFINITY;
        for &(psi, e2) in &crossings {
            if e2 {
                continue;
            }
            let d = (psi - phi).rem_euclid(TAU);
            if d > 1e-12 && d < best {
                best = d;
            }
        }
        arcs.push(InflowArc {
            start: phi,
            len: best,
            label_offset: 0.0,
        });
    }
    arcs.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());

    // Concatenated labels, centered so that the midpoint of the total inflow
    // length carries label 0.
    let total: f64 = arcs.iter().map(|a| a.len).sum();
    let mut acc = -0.5 * total;
    for a in &mut arcs {
        a.label_offset = acc;
        acc += a.len;
    }
    Ok(arcs)
}

// ---------------------------------------------------------------------------
// Chart
// ---------------------------------------------------------------------------

struct NumericTable {
    n: usize,
    /// Row-major s and t values on the [-1,1]^2 grid; NaN where never set.
    s: Vec<f64>,
    t: Vec<f64>,
    /// True where the value came from an actual back-trace (not in-painting).
    valid: Vec<bool>,
}

enum Backend {
    Holomorphic,
    Rational { alpha: f64 },
    Numeric(NumericTable),
}

/// The transverse chart: s constant along curves, t the flow time since the
/// inflow boundary. Immutable after construction; safe to share across
/// threads.
pub struct Chart {
    field: PolyField,
    backend: Backend,
    arcs: Vec<InflowArc>,
    curves: Vec<Curve>,
    sigma: f64,
    s_min: f64,
    s_max: f64,
    t_max: f64,
}

const GL_N: usize = 32;

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let dp = {
                    let (mut p0, mut p1) = (1.0f64, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    n as f64 * (x * p1 - p0) / (x * x - 1.0)
                };
                weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
                break;
            }
        }
        nodes[i] = x;
    }
    (nodes, weights)
}

impl Chart {
    /// Builds the chart. `n_curves` controls both the cached launch-curve
    /// count and (for the numeric backend) the interpolation table
    /// resolution.
    pub fn build(field: &PolyField, n_curves: usize, labeling: Labeling) -> Result<Self> {
        let resolved = match labeling {
            Labeling::Auto => {
                if matches!(rational_alpha(field), Some(a) if a > 0.0) {
                    Labeling::Rational
                } else if field.is_holomorphic() {
                    Labeling::HolomorphicPrimitive
                } else {
                    Labeling::Arclength
                }
            }
            other => other,
        };
        if resolved == Labeling::HolomorphicPrimitive && !field.is_holomorphic() {
            return Err(FlowrayError::SignUndetermined { value: 0.0 });
        }
        if resolved == Labeling::Rational && rational_alpha(field).is_none() {
            return Err(FlowrayError::SignUndetermined { value: 0.0 });
        }
        let arcs = locate_inflow_arcs(field)?;
        let t_max = t_max_for(field);

        let mut chart = Chart {
            field: field.clone(),
            backend: Backend::Holomorphic,
            arcs,
            curves: Vec::new(),
            sigma: 1.0,
            s_min: 0.0,
            s_max: 0.0,
            t_max,
        };

        match resolved {
            Labeling::HolomorphicPrimitive => {
                chart.backend = Backend::Holomorphic;
                // s-range over boundary samples.
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for i in 0..2048 {
                    let s = chart.holo_s(Complex64::from_polar(1.0, TAU * i as f64 / 2048.0));
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
                chart.s_min = lo;
                chart.s_max = hi;
                chart.sigma = 1.0; // X_perp s = 1 identically for this labeling.
            }
            Labeling::Rational => {
                let alpha = rational_alpha(field).unwrap();
                chart.backend = Backend::Rational { alpha };
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for i in 0..2048 {
                    let z = Complex64::from_polar(1.0, TAU * i as f64 / 2048.0);
                    let s = rational_s(alpha, z);
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
                chart.s_min = lo;
                chart.s_max = hi;
                chart.sigma = 1.0; // 2 Im(mu ds) = c > 0 at z = 0.
            }
            Labeling::Arclength => {
                let total: f64 = chart.arcs.iter().map(|a| a.len).sum();
                chart.s_min = -0.5 * total;
                chart.s_max = 0.5 * total;
                let n_tab = (n_curves + 1).max(161);
                chart.backend = Backend::Numeric(chart.build_table(n_tab)?);
                chart.fix_orientation()?;
            }
            Labeling::Auto => unreachable!(),
        }

        // Cached launch curves at uniform interior labels.
        let n_launch = n_curves.clamp(8, 4096);
        let labels: Vec<f64> = (0..n_launch)
            .map(|i| {
                chart.s_min
                    + (chart.s_max - chart.s_min) * (i as f64 + 0.5) / n_launch as f64
            })
            .collect();
        let curves: Result<Vec<Curve>> = labels
            .par_iter()
            .map(|&s| {
                let z0 = chart.entry_point(s)?;
                let mut c = trace_curve(&chart.field, z0, 1.0)?;
                c.label = Some(s);
                Ok(c)
            })
            .collect();
        chart.curves = curves?;
        Ok(chart)
    }

    pub fn field(&self) -> &PolyField {
        &self.field
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn inflow_arcs(&self) -> &[InflowArc] {
        &self.arcs
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.s_min, self.s_max)
    }

    /// Sign sigma fixing the orientation of the orthogonal field so that
    /// X_perp s > 0.
    pub fn orientation_sign(&self) -> f64 {
        self.sigma
    }

    pub fn is_holomorphic_backend(&self) -> bool {
        matches!(self.backend, Backend::Holomorphic)
    }

    // -- holomorphic backend ------------------------------------------------

    /// F(z) = int_0^z dz'/mu(z') along the straight segment (mu holomorphic
    /// and nonvanishing on the convex disc makes this path-independent).
    fn holo_primitive(&self, z: Complex64) -> Complex64 {
        thread_local! {
            static GL: (Vec<f64>, Vec<f64>) = gauss_legendre(GL_N);
        }
        GL.with(|(nodes, weights)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&x, &w) in nodes.iter().zip(weights) {
                let zeta = z * (0.5 * (x + 1.0));
                acc += w * z * 0.5 / self.field.eval_mu(zeta);
            }
            acc
        })
    }

    fn holo_s(&self, z: Complex64) -> f64 {
        -self.holo_primitive(z).im
    }

    // -- numeric backend ----------------------------------------------------

    /// Label of a boundary point by concatenated inflow-arc arclength.
    fn boundary_label(&self, phi: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for a in &self.arcs {
            let d = (phi - a.start).rem_euclid(TAU);
            if d <= a.len {
                return a.label_offset + d;
            }
            // Distance to the nearest arc endpoint, for off-arc slack.
            let to_start = d.min(TAU - d);
            let past_end = (d - a.len).min(TAU - (d - a.len));
            if to_start < best.0 {
                best = (to_start, a.label_offset);
            }
            if past_end < best.0 {
                best = (past_end, a.label_offset + a.len);
            }
        }
        best.1
    }

    /// Back-traced exact labels: (s, t) at z via the backward characteristic.
    pub fn label_by_tracing(&self, z: Complex64) -> Result<(f64, f64)> {
        let raw = trace_raw(&self.field, z, -1.0, None, self.t_max)?;
        if !raw.boundary_hit {
            return Err(FlowrayError::OutOfChart { z });
        }
        let (tau_b, zb) = *raw.samples.last().unwrap();
        Ok((self.boundary_label(zb.arg().rem_euclid(TAU)), tau_b))
    }

    fn build_table(&self, n: usize) -> Result<NumericTable> {
        let coords: Vec<(usize, Complex64)> = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                let x = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                let y = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                (idx, Complex64::new(x, y))
            })
            .collect();
        let entries: Vec<(usize, Option<(f64, f64)>)> = coords
            .par_iter()
            .map(|&(idx, z)| {
                if z.norm() >= 1.0 - 1e-9 {
                    return (idx, None);
                }
                (idx, self.label_by_tracing(z).ok())
            })
            .collect();
        let mut s = vec![f64::NAN; n * n];
        let mut t = vec![f64::NAN; n * n];
        let mut valid = vec![false; n * n];
        for (idx, e) in entries {
            if let Some((sv, tv)) = e {
                s[idx] = sv;
                t[idx] = tv;
                valid[idx] = true;
            }
        }
        // In-paint values just outside the disc so boundary-adjacent bicubic
        // stencils have finite entries; these nodes stay marked invalid.
        for _ in 0..4 {
            let snap_s = s.clone();
            let snap_t = t.clone();
            for i in 0..n {
                for j in 0..n {
                    let idx = i * n + j;
                    if !snap_s[idx].is_nan() {
                        continue;
                    }
                    let mut acc_s = 0.0;
                    let mut acc_t = 0.0;
                    let mut cnt = 0;
                    for (di, dj) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                        let (ni, nj) = (i as i64 + di, j as i64 + dj);
                        if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                            continue;
                        }
                        let nidx = ni as usize * n + nj as usize;
                        if !snap_s[nidx].is_nan() {
                            acc_s += snap_s[nidx];
                            acc_t += snap_t[nidx];
                            cnt += 1;
                        }
                    }
                    if cnt > 0 {
                        s[idx] = acc_s / cnt as f64;
                        t[idx] = acc_t / cnt as f64;
                    }
                }
            }
        }
        Ok(NumericTable { n, s, t, valid })
    }

    fn table_interp(&self, tab: &NumericTable, values: &[f64], z: Complex64) -> Result<f64> {
        let n = tab.n;
        let h = 2.0 / (n - 1) as f64;
        let fx = (z.re + 1.0) / h;
        let fy = (z.im + 1.0) / h;
        let j0 = (fx.floor() as i64).clamp(0, n as i64 - 2) as usize;
        let i0 = (fy.floor() as i64).clamp(0, n as i64 - 2) as usize;
        // The containing cell must come from actual back-traces.
        for (di, dj) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)] {
            if !tab.valid[(i0 + di) * n + (j0 + dj)] {
                return Err(FlowrayError::OutOfChart { z });
            }
        }
        let u = fx - j0 as f64;
        let v = fy - i0 as f64;
        let catmull = |p: [f64; 4], x: f64| -> f64 {
            0.5 * (2.0 * p[1]
                + (-p[0] + p[2]) * x
                + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * x * x
                + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * x * x * x)
        };
        let at = |i: i64, j: i64| -> f64 {
            let i = i.clamp(0, n as i64 - 1) as usize;
            let j = j.clamp(0, n as i64 - 1) as usize;
            values[i * n + j]
        };
        let mut rows = [0.0f64; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            let i = i0 as i64 - 1 + r as i64;
            let p = [
                at(i, j0 as i64 - 1),
                at(i, j0 as i64),
                at(i, j0 as i64 + 1),
                at(i, j0 as i64 + 2),
            ];
            // NaN in an outer stencil node (deep outside the disc despite
            // in-painting): fall back to the inner pair linearly.
            *row = if p.iter().any(|x| x.is_nan()) {
                p[1] + (p[2] - p[1]) * u
            } else {
                catmull(p, u)
            };
        }
        if rows.iter().any(|x| x.is_nan()) {
            return Err(FlowrayError::OutOfChart { z });
        }
        Ok(catmull(rows, v))
    }

    fn fix_orientation(&mut self) -> Result<()> {
        // X_perp_1 s = 2 Re(-i mu ds) at a regular reference point.
        let probe = |z: Complex64| -> Result<f64> {
            let h = 1e-3;
            let sx = (self.s_of_z(z + Complex64::new(h, 0.0))?
                - self.s_of_z(z - Complex64::new(h, 0.0))?)
                / (2.0 * h);
            let sy = (self.s_of_z(z + Complex64::new(0.0, h))?
                - self.s_of_z(z - Complex64::new(0.0, h))?)
                / (2.0 * h);
            let ds = Complex64::new(sx, -sy) * 0.5;
            Ok(2.0 * (Complex64::new(0.0, -1.0) * self.field.eval_mu(z) * ds).re)
        };
        for z in [
            Complex64::new(0.0, 0.0),
            Complex64::new(0.2, 0.1),
            Complex64::new(-0.15, 0.25),
        ] {
            if let Ok(v) = probe(z) {
                if v.abs() > 1e-8 {
                    self.sigma = v.signum();
                    return Ok(());
                }
            }
        }
        Err(FlowrayError::SignUndetermined { value: 0.0 })
    }

    // -- public evaluation --------------------------------------------------

    pub fn s_of_z(&self, z: Complex64) -> Result<f64> {
        match &self.backend {
            Backend::Holomorphic => Ok(self.holo_s(z)),
            Backend::Rational { alpha } => Ok(rational_s(*alpha, z)),
            Backend::Numeric(tab) => self.table_interp(tab, &tab.s, z),
        }
    }

    pub fn t_of_z(&self, z: Complex64) -> Result<f64> {
        match &self.backend {
            Backend::Holomorphic => Ok(self.holo_primitive(z).re),
            Backend::Rational { .. } => {
                // Flow time since the inflow boundary, by backward tracing.
                let raw = trace_raw(&self.field, z, -1.0, None, self.t_max)?;
                if !raw.boundary_hit {
                    return Err(FlowrayError::OutOfChart { z });
                }
                Ok(raw.samples.last().unwrap().0)
            }
            Backend::Numeric(tab) => self.table_interp(tab, &tab.t, z),
        }
    }

    /// (ds, dbar s) by central differences of s_of_z; one-sided inward
    /// fallback within 2h of the chart edge.
    pub fn grad_s(&self, z: Complex64, h: f64) -> Result<(Complex64, Complex64)> {
        let d1 = |dir: Complex64| -> Result<f64> {
            match (self.s_of_z(z + dir * h), self.s_of_z(z - dir * h)) {
                (Ok(p), Ok(m)) => Ok((p - m) / (2.0 * h)),
                _ => {
                    // One-sided second-order difference toward the interior.
                    let step = if (z + dir * h).norm() > (z - dir * h).norm() {
                        -dir * h
                    } else {
                        dir * h
                    };
                    let s0 = self.s_of_z(z)?;
                    let s1 = self.s_of_z(z + step)?;
                    let s2 = self.s_of_z(z + step * 2.0)?;
                    Ok((-3.0 * s0 + 4.0 * s1 - s2) / (2.0 * step.re + 2.0 * step.im))
                }
            }
        };
        let sx = d1(Complex64::new(1.0, 0.0))?;
        let sy = d1(Complex64::new(0.0, 1.0))?;
        let ds = Complex64::new(sx, -sy) * 0.5;
        Ok((ds, ds.conj()))
    }

    /// Exact (ds, dbar s) when available, grad_s otherwise. This is what the
    /// reconstruction kernel uses.
    pub fn grad_s_best(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        match &self.backend {
            Backend::Holomorphic => {
                let ds = Complex64::new(0.0, 0.5) / self.field.eval_mu(z);
                Ok((ds, ds.conj()))
            }
            Backend::Rational { alpha } => {
                let ds = rational_ds(*alpha, z);
                Ok((ds, ds.conj()))
            }
            Backend::Numeric(_) => self.grad_s(z, 1e-4),
        }
    }

    /// Boundary entry point carrying label s.
    pub fn entry_point(&self, s: f64) -> Result<Complex64> {
        match &self.backend {
            Backend::Numeric(_) => {
                for a in &self.arcs {
                    let d = s - a.label_offset;
                    if (-1e-12..=a.len + 1e-12).contains(&d) {
                        return Ok(Complex64::from_polar(1.0, a.start + d.clamp(0.0, a.len)));
                    }
                }
                Err(FlowrayError::OutOfChart {
                    z: Complex64::new(s, 0.0),
                })
            }
            _ => {
                let sb = |phi: f64| -> f64 {
                    let z = Complex64::from_polar(1.0, phi);
                    match &self.backend {
                        Backend::Holomorphic => self.holo_s(z),
                        Backend::Rational { alpha } => rational_s(*alpha, z),
                        Backend::Numeric(_) => unreachable!(),
                    }
                };
                // s(e^{i phi}) is monotone along each connected inflow arc;
                // bracket on a fine sub-grid, then bisect.
                for a in &self.arcs {
                    let m = 512;
                    let sv: Vec<f64> = (0..=m)
                        .map(|i| sb(a.start + a.len * i as f64 / m as f64))
                        .collect();
                    for i in 0..m {
                        let (s0, s1) = (sv[i], sv[i + 1]);
                        if (s0 - s) * (s1 - s) <= 0.0 {
                            let mut lo = a.start + a.len * i as f64 / m as f64;
                            let mut hi = a.start + a.len * (i + 1) as f64 / m as f64;
                            let f_lo = s0 - s;
                            for _ in 0..80 {
                                let mid = 0.5 * (lo + hi);
                                let fm = sb(mid) - s;
                                if (fm > 0.0) == (f_lo > 0.0) {
                                    lo = mid;
                                } else {
                                    hi = mid;
                                }
                                if hi - lo < 1e-14 {
                                    break;
                                }
                            }
                            return Ok(Complex64::from_polar(1.0, 0.5 * (lo + hi)));
                        }
                    }
                }
                Err(FlowrayError::OutOfChart {
                    z: Complex64::new(s, 0.0),
                })
            }
        }
    }

    /// Integral of g over the full curve with label s (entry to exit), using
    /// the flow's natural time parameterization.
    pub fn ray_integral(&self, s: f64, g: &dyn Fn(Complex64) -> f64) -> Result<f64> {
        let z0 = self.entry_point(s)?;
        let raw = trace_raw(&self.field, z0, 1.0, Some(g), self.t_max)?;
        Ok(raw.integral)
    }

    /// (upstream, downstream) integrals of g along the curve through z,
    /// split at z: upstream runs from the inflow entry to z, downstream from
    /// z to the exit.
    pub fn split_integrals(
        &self,
        z: Complex64,
        g: &dyn Fn(Complex64) -> f64,
    ) -> Result<(f64, f64)> {
        let back = trace_raw(&self.field, z, -1.0, Some(g), self.t_max)?;
        let fwd = trace_raw(&self.field, z, 1.0, Some(g), self.t_max)?;
        Ok((back.integral, fwd.integral))
    }

    /// Debug dump: curve_id, t, x, y, s per cached curve sample.
    pub fn dump_csv(&self, w: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(w, "curve_id,t,x,y,s")?;
        for (id, c) in self.curves.iter().enumerate() {
            let s = c.label.unwrap_or(f64::NAN);
            for smp in &c.samples {
                writeln!(
                    w,
                    "{id},{:.16e},{:.16e},{:.16e},{:.16e}",
                    smp.t, smp.z.re, smp.z.im, s
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::one_plus_alpha_z2;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit_field() -> PolyField {
        PolyField::constant(c(1.0, 0.0)).unwrap()
    }

    #[test]
    fn trace_examples() {
        // mu = 1 from 0: straight run to z = 1 at t = 1.
        let cu = trace_curve(&unit_field(), c(0.0, 0.0), 1.0).unwrap();
        assert!(cu.boundary_hit);
        let end = cu.last();
        assert_abs_diff_eq!(end.t, 1.0, epsilon = 1e-9);
        assert!((end.z - c(1.0, 0.0)).norm() < 1e-9);

        // mu = 1 + 0.3 z^2 from 0: z(t) = tan(sqrt(0.3) t)/sqrt(0.3).
        let f = one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let cu = trace_curve(&f, c(0.0, 0.0), 1.0).unwrap();
        let r = 0.3f64.sqrt();
        let t_exit = r.atan() / r;
        assert_abs_diff_eq!(cu.last().t, t_exit, epsilon = 1e-8);
        for smp in &cu.samples {
            let expect = (r * smp.t).tan() / r;
            assert!((smp.z - c(expect, 0.0)).norm() < 1e-8);
        }

        // mu = i from 0.5: vertical segment.
        let fi = PolyField::constant(c(0.0, 1.0)).unwrap();
        let cu = trace_curve(&fi, c(0.5, 0.0), 1.0).unwrap();
        let end = cu.last();
        assert_abs_diff_eq!(end.z.re, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(end.z.im, 0.75f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn backward_trace_is_time_reversed() {
        let cu = trace_curve(&unit_field(), c(0.0, 0.0), -1.0).unwrap();
        assert!(cu.boundary_hit);
        assert!((cu.first().z - c(-1.0, 0.0)).norm() < 1e-9);
        assert_abs_diff_eq!(cu.first().t, -1.0, epsilon = 1e-9);
        assert!(cu.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn flow_consistency_invariant() {
        let f = one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let cu = trace_curve(&f, c(0.1, 0.2), 1.0).unwrap();
        for w in cu.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            let pred = w[0].z + f.eval_mu(w[0].z) * dt;
            assert!((w[1].z - pred).norm() < 10.0 * dt * dt + 1e-12);
            assert!(w[1].z.norm() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn holomorphic_chart_unit_field() {
        let chart = Chart::build(&unit_field(), 64, Labeling::Auto).unwrap();
        assert!(chart.is_holomorphic_backend());
        // F = z, s = -Im z.
        assert_abs_diff_eq!(chart.s_of_z(c(0.2, 0.4)).unwrap(), -0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(chart.t_of_z(c(0.2, 0.4)).unwrap(), 0.2, epsilon = 1e-12);
        let (ds, dbs) = chart.grad_s_best(c(0.1, 0.1)).unwrap();
        assert!((ds - c(0.0, 0.5)).norm() < 1e-14);
        assert!((dbs - c(0.0, -0.5)).norm() < 1e-14);
        // FD gradient agrees with the analytic one.
        let (dfd, _) = chart.grad_s(c(0.1, 0.1), 1e-4).unwrap();
        assert!((dfd - ds).norm() < 1e-8);
        assert_eq!(chart.orientation_sign(), 1.0);
    }

    #[test]
    fn numeric_chart_unit_field() {
        let chart = Chart::build(&unit_field(), 200, Labeling::Arclength).unwrap();
        assert_eq!(chart.inflow_arcs().len(), 1);
        let a = chart.inflow_arcs()[0];
        // Inflow is the left semicircle (pi/2, 3 pi/2).
        assert_abs_diff_eq!(a.start, std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
        assert_abs_diff_eq!(a.len, std::f64::consts::PI, epsilon = 1e-9);

        // The line y = 0.3 enters at phi = pi - asin(0.3); centered labels
        // make s = -asin(0.3) there.
        let (s_exact, _) = chart.label_by_tracing(c(0.0, 0.3)).unwrap();
        assert_abs_diff_eq!(s_exact, -0.3f64.asin(), epsilon = 1e-8);
        let s_interp = chart.s_of_z(c(0.0, 0.3)).unwrap();
        assert!((s_interp - s_exact).abs() < 1e-4);
    }

    #[test]
    fn numeric_chart_refinement() {
        let f = unit_field();
        let c1 = Chart::build(&f, 128, Labeling::Arclength).unwrap();
        let c2 = Chart::build(&f, 256, Labeling::Arclength).unwrap();
        for &z in &[c(0.1, 0.2), c(-0.3, 0.4), c(0.5, -0.1)] {
            let d = (c1.s_of_z(z).unwrap() - c2.s_of_z(z).unwrap()).abs();
            assert!(d < 1e-4, "refinement gap {d} at {z}");
        }
    }

    #[test]
    fn same_curve_same_label() {
        let f = one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let chart = Chart::build(&f, 64, Labeling::Auto).unwrap();
        for cu in chart.curves().iter().step_by(8) {
            let s0 = cu.label.unwrap();
            for smp in cu.samples.iter().step_by(5) {
                if smp.z.norm() > 0.999 {
                    continue;
                }
                assert!((chart.s_of_z(smp.z).unwrap() - s0).abs() < 1e-9);
            }
            // t increases along the curve.
            assert!(cu.samples.windows(2).all(|w| w[1].t > w[0].t));
        }
    }

    #[test]
    fn transport_annihilation() {
        // |X s| << |grad s| at interior probes, both backends.
        let holo = one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let chart = Chart::build(&holo, 64, Labeling::Auto).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let z = Complex64::from_polar(
                rng.random_range(0.0..0.9f64),
                rng.random_range(0.0..TAU),
            );
            let (ds, dbs) = chart.grad_s_best(z).unwrap();
            let xs = (holo.eval_mu(z) * ds + holo.eval_mu(z).conj() * dbs).norm();
            assert!(xs < 1e-5 * ds.norm() * 2.0);
        }

        // Non-holomorphic field through the traced labels.
        let f = PolyField::from_coeffs(
            [((0, 0), c(1.0, 0.0)), ((1, 1), c(0.3, 0.0))],
            None,
        )
        .unwrap();
        let chart = Chart::build(&f, 128, Labeling::Auto).unwrap();
        let h = 1e-5;
        for _ in 0..30 {
            let z = Complex64::from_polar(
                rng.random_range(0.1..0.8f64),
                rng.random_range(0.0..TAU),
            );
            let s = |z: Complex64| chart.label_by_tracing(z).unwrap().0;
            let sx = (s(z + c(h, 0.0)) - s(z - c(h, 0.0))) / (2.0 * h);
            let sy = (s(z + c(0.0, h)) - s(z - c(0.0, h))) / (2.0 * h);
            let ds = c(sx, -sy) * 0.5;
            let xs = (f.eval_mu(z) * ds + f.eval_mu(z).conj() * ds.conj()).norm();
            assert!(xs < 1e-5 * 2.0 * ds.norm(), "Xs = {xs} at {z}");
        }
    }

    #[test]
    fn rotation_covariance_constant_field() {
        let f = PolyField::constant(c(1.0, 0.5)).unwrap();
        let base = Chart::build(&f, 32, Labeling::Auto).unwrap();
        for &theta in &[0.4, 1.3, 2.9] {
            let rot = Chart::build(&f.rotated(theta).unwrap(), 32, Labeling::Auto).unwrap();
            for &z in &[c(0.2, 0.1), c(-0.4, 0.3), c(0.1, -0.6)] {
                let lhs = rot.s_of_z(z).unwrap();
                let rhs = base
                    .s_of_z(z * Complex64::from_polar(1.0, -theta))
                    .unwrap();
                assert!((lhs - rhs).abs() < 1e-6, "theta={theta} z={z}");
            }
        }
    }

    #[test]
    fn entry_point_round_trip() {
        let f = one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let chart = Chart::build(&f, 32, Labeling::Auto).unwrap();
        let (lo, hi) = chart.s_range();
        for i in 1..10 {
            let s = lo + (hi - lo) * i as f64 / 10.0;
            let z0 = chart.entry_point(s).unwrap();
            assert!((z0.norm() - 1.0).abs() < 1e-10);
            assert!((chart.s_of_z(z0 * 0.999999).unwrap() - s).abs() < 1e-5);
        }
    }

    #[test]
    fn split_integrals_sum_to_ray_integral() {
        let f = one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let chart = Chart::build(&f, 32, Labeling::Auto).unwrap();
        let g = |z: Complex64| (-z.norm_sqr() / 0.1).exp();
        let z = c(0.2, 0.15);
        let (up, down) = chart.split_integrals(z, &g).unwrap();
        let s = chart.s_of_z(z).unwrap();
        let full = chart.ray_integral(s, &g).unwrap();
        assert!((up + down - full).abs() < 1e-8, "{up}+{down} vs {full}");
    }

    #[test]
    fn halved_tolerance_consistency() {
        // Re-tracing with the default tolerances from a mid-curve point
        // reproduces the endpoint closely.
        let f = one_plus_alpha_z2(c(0.3, 0.0)).unwrap();
        let cu = trace_curve(&f, c(0.05, -0.1), 1.0).unwrap();
        let mid = cu.samples[cu.samples.len() / 2];
        let cu2 = trace_curve(&f, mid.z, 1.0).unwrap();
        assert!((cu.last().z - cu2.last().z).norm() < 1e-8);
    }
}
