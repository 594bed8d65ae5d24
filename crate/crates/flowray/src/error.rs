use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlowrayError>;

#[derive(Debug, Error)]
pub enum FlowrayError {
    #[error("coefficient table rejected: {0}")]
    InvalidCoefficient(String),

    #[error("|mu({z})| = {value:.3e} is not bounded away from zero on the disc")]
    FieldVanishes { z: Complex64, value: f64 },

    #[error("all Laurent coefficients below zero_tol at z = {z}; zero_tol is too large")]
    AllCoefficientsVanish { z: Complex64 },

    #[error("rescale weight w({z}) = {value:.3e} <= 0 inside the disc")]
    NonpositiveWeight { z: Complex64, value: f64 },

    #[error("no root of the complexified dz-coefficient inside the unit disc at z = {z}")]
    NoInteriorRoot { z: Complex64 },

    #[error("log integrand within {min_abs:.3e} of zero on the quadrature circle (z = {z})")]
    QuadratureNearSingular { z: Complex64, min_abs: f64 },

    #[error("argument-principle count {winding} disagrees with eigenvalue count {eigen} (min |p| on circle = {min_on_circle:.3e})")]
    MethodDisagreement {
        winding: i64,
        eigen: usize,
        min_on_circle: f64,
    },

    #[error("|X_perp_1 s| = {value:.3e} at the reference point; orientation undetermined")]
    SignUndetermined { value: f64 },

    #[error("characteristic through {z0} did not reach the boundary within T_max = {t_max:.3e}")]
    Trapped { z0: Complex64, t_max: f64 },

    #[error("inflow boundary has {arcs} interleaving arcs; chart labels would not be monotone")]
    MultiComponentInflow { arcs: usize },

    #[error("query {z} could not be traced back to the inflow boundary")]
    OutOfChart { z: Complex64 },

    #[error("sinogram row does not decay: |end| = {end_value:.3e} > {threshold:.3e}")]
    NonDecayingRow { end_value: f64, threshold: f64 },

    #[error("Poisson kernel evaluated at |lambda| = {modulus} >= 1 - 1e-12")]
    KernelBlowup { modulus: f64 },

    #[error("imaginary residual |{imag:.3e}| exceeds 1e-6 * |{real:.3e}| in filtered term")]
    ImaginaryResidual { real: f64, imag: f64 },

    #[error("|s(z) - s(z0)| = {value:.3e} below resolvable scale in Green quadrature")]
    QuadratureSingular { value: f64 },

    #[error("no coefficients survive the frequency window [{k}, {l}] at degree {n}")]
    EmptyWindow { k: i64, l: i64, n: u32 },

    #[error("only {found} consecutive nonzero coefficient pairs (need at least 5)")]
    InsufficientNonzeroPairs { found: usize },

    #[error("no admissible truncation window up to l = {l_max}: {last_failure}")]
    NoAdmissibleWindow { l_max: i64, last_failure: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<FlowrayError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

impl FlowrayError {
    pub fn in_stage(self, stage: &'static str) -> Self {
        FlowrayError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
