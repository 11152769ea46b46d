//! Environment coefficients of the Wigner–Fokker–Planck operator.
//!
//! The coefficients α, β, γ come from linear jump operators
//! `L_kν = a_kν x_k + b_kν p_k`; μ is the Lamb-shift renormalization and ε the
//! rescaled Planck constant.

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

/// Relative slack used when comparing `α β` against `(Re γ)²` and `|γ|²`.
const BOUND_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    EpsilonOutOfRange(f64),
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("{name} has length {got}, expected {expected}")]
    LengthMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{name}[{k}] = {value} is negative")]
    Negative {
        name: &'static str,
        k: usize,
        value: f64,
    },
    #[error("{name}[{k}] is not finite")]
    NonFinite { name: &'static str, k: usize },
    #[error(
        "diffusion matrix indefinite in direction {k}: alpha*beta = {ab} < (Re gamma)^2 = {re2}"
    )]
    IndefiniteDiffusion { k: usize, ab: f64, re2: f64 },
    #[error("jump operator list for direction {0} is empty")]
    EmptyJumpList(usize),
}

/// Soft diagnostics that do not prevent integration.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamWarning {
    /// `|γ_k| > √(α_k β_k)`: no set of linear jump operators produces these
    /// coefficients, although `B − Γ₁` is still positive semidefinite.
    CauchySchwarz { k: usize, gamma_abs: f64, bound: f64 },
}

impl fmt::Display for ParamWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamWarning::CauchySchwarz {
                k,
                gamma_abs,
                bound,
            } => write!(
                f,
                "|gamma[{k}]| = {gamma_abs} exceeds sqrt(alpha*beta) = {bound}; \
                 coefficients are not realizable by linear jump operators"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub warnings: Vec<ParamWarning>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationParams {
    dim: usize,
    epsilon: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<Complex64>,
    mu: Vec<f64>,
}

impl DissipationParams {
    /// Builds and validates a parameter set. Hard violations are errors;
    /// soft ones are available from [`validate_params`].
    pub fn new(
        epsilon: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        gamma: Vec<Complex64>,
        mu: Vec<f64>,
    ) -> Result<Self, ParamError> {
        let params = Self {
            dim: alpha.len(),
            epsilon,
            alpha,
            beta,
            gamma,
            mu,
        };
        validate_params(&params)?;
        Ok(params)
    }

    /// Zero environment: the closed Wigner equation.
    pub fn closed(dim: usize, epsilon: f64) -> Result<Self, ParamError> {
        Self::new(
            epsilon,
            vec![0.0; dim],
            vec![0.0; dim],
            vec![Complex64::new(0.0, 0.0); dim],
            vec![0.0; dim],
        )
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(
        epsilon: f64,
        alpha: f64,
        beta: f64,
        gamma: Complex64,
        mu: f64,
    ) -> Result<Self, ParamError> {
        Self::new(epsilon, vec![alpha], vec![beta], vec![gamma], vec![mu])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma(&self) -> &[Complex64] {
        &self.gamma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Same environment with a different ε.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, ParamError> {
        let mut out = self.clone();
        out.epsilon = epsilon;
        validate_params(&out)?;
        Ok(out)
    }

    /// True when every environment coefficient vanishes.
    pub fn is_closed(&self) -> bool {
        self.alpha.iter().all(|&a| a == 0.0)
            && self.beta.iter().all(|&b| b == 0.0)
            && self.gamma.iter().all(|g| g.re == 0.0 && g.im == 0.0)
            && self.mu.iter().all(|&m| m == 0.0)
    }

    /// Velocity coefficient of the position drift, `Im γ_k + μ_k`.
    pub fn position_drift(&self, k: usize) -> f64 {
        self.gamma[k].im + self.mu[k]
    }

    /// Velocity coefficient of the momentum drift, `Im γ_k − μ_k`.
    pub fn momentum_drift(&self, k: usize) -> f64 {
        self.gamma[k].im - self.mu[k]
    }
}

/// Complex coefficient pairs `(a_kν, b_kν)` for each direction k.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpOperatorSet {
    coeffs: Vec<Vec<(Complex64, Complex64)>>,
}

impl JumpOperatorSet {
    pub fn new(coeffs: Vec<Vec<(Complex64, Complex64)>>) -> Result<Self, ParamError> {
        if coeffs.is_empty() {
            return Err(ParamError::ZeroDimension);
        }
        if let Some(k) = coeffs.iter().position(|c| c.is_empty()) {
            return Err(ParamError::EmptyJumpList(k));
        }
        Ok(Self { coeffs })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn pairs(&self, k: usize) -> &[(Complex64, Complex64)] {
        &self.coeffs[k]
    }
}

/// α_k = Σ|a|², β_k = Σ|b|², γ_k = Σ a·conj(b).
pub fn coefficients_from_jump_operators(
    jumps: &JumpOperatorSet,
    epsilon: f64,
    mu: Vec<f64>,
) -> Result<DissipationParams, ParamError> {
    let n = jumps.dim();
    let mut alpha = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for k in 0..n {
        let pairs = jumps.pairs(k);
        alpha.push(pairs.iter().map(|(a, _)| a.norm_sqr()).sum());
        beta.push(pairs.iter().map(|(_, b)| b.norm_sqr()).sum());
        gamma.push(pairs.iter().map(|(a, b)| a * b.conj()).sum());
    }
    DissipationParams::new(epsilon, alpha, beta, gamma, mu)
}

/// Hard checks (errors) and the Cauchy–Schwarz realizability check (warning).
pub fn validate_params(params: &DissipationParams) -> Result<ValidationReport, ParamError> {
    let n = params.dim;
    if n == 0 {
        return Err(ParamError::ZeroDimension);
    }
    if !(params.epsilon > 0.0 && params.epsilon < 1.0) {
        return Err(ParamError::EpsilonOutOfRange(params.epsilon));
    }
    for (name, len) in [
        ("beta", params.beta.len()),
        ("gamma", params.gamma.len()),
        ("mu", params.mu.len()),
    ] {
        if len != n {
            return Err(ParamError::LengthMismatch {
                name,
                got: len,
                expected: n,
            });
        }
    }

    let mut report = ValidationReport::default();
    for k in 0..n {
        let (a, b, g, m) = (params.alpha[k], params.beta[k], params.gamma[k], params.mu[k]);
        for (name, v) in [("alpha", a), ("beta", b), ("gamma.re", g.re), ("gamma.im", g.im), ("mu", m)] {
            if !v.is_finite() {
                return Err(ParamError::NonFinite { name, k });
            }
        }
        if a < 0.0 {
            return Err(ParamError::Negative {
                name: "alpha",
                k,
                value: a,
            });
        }
        if b < 0.0 {
            return Err(ParamError::Negative {
                name: "beta",
                k,
                value: b,
            });
        }
        let ab = a * b;
        let re2 = g.re * g.re;
        if ab < re2 * (1.0 - BOUND_RTOL) - f64::MIN_POSITIVE {
            return Err(ParamError::IndefiniteDiffusion { k, ab, re2 });
        }
        if g.norm_sqr() > ab * (1.0 + BOUND_RTOL) + f64::MIN_POSITIVE {
            report.warnings.push(ParamWarning::CauchySchwarz {
                k,
                gamma_abs: g.norm(),
                bound: ab.sqrt(),
            });
        }
    }
    Ok(report)
}
