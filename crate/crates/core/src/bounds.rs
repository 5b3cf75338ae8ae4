//! Second-order Magnus bounds and weak-noise diagnostics.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::arma::AutocovarianceSeq;
use crate::control::{infidelity_full, weak_noise_check, NoiseModel, PulseSequence};
use crate::sum::compensated_sum;
use crate::Result;

/// `Γ = Σ_{h<N} c(h)(N-h)γ(h)` with `c(0) = 1`, `c(h>0) = 2`: the grand sum
/// of the `N×N` Toeplitz covariance.
pub fn gamma_sum(gammas: &AutocovarianceSeq, n: usize) -> Result<f64> {
    gammas.require_lags(n)?;
    Ok(compensated_sum((0..n).map(|h| {
        let c = if h == 0 { 1.0 } else { 2.0 };
        c * (n - h) as f64 * gammas.get(h)
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaSums {
    pub gamma_ee: f64,
    pub gamma_jj: f64,
    /// Cross term; zero for independent control and dephasing noise.
    pub gamma_ej: f64,
    pub omega_max: f64,
    pub n: usize,
}

impl GammaSums {
    /// Sums for a sequence; `J = μ_J + J̃` so `Γ_JJ = N²μ_J² + Γ(J̃)` and
    /// `Ω_max = max|θ_j|`.
    pub fn for_sequence(noise: &NoiseModel, seq: &PulseSequence) -> Result<Self> {
        let n = seq.len();
        let max_lag = n - 1;
        let mu = noise.dephasing_mean;
        Ok(Self {
            gamma_ee: gamma_sum(&noise.control_autocovariance(max_lag), n)?,
            gamma_jj: (n * n) as f64 * mu * mu + gamma_sum(&noise.dephasing_autocovariance(max_lag), n)?,
            gamma_ej: 0.0,
            omega_max: seq.max_abs_angle(),
            n,
        })
    }

    pub fn with_omega_max(mut self, omega_max: f64) -> Self {
        self.omega_max = omega_max;
        self
    }
}

/// `(7/16)Γ_JJ² + (7/8)Ω²Γ_εεΓ_JJ + (7/4)(ΩΓ_εJ)²`.
pub fn second_order_bound(g: &GammaSums) -> f64 {
    let w2 = g.omega_max * g.omega_max;
    7.0 / 16.0 * g.gamma_jj * g.gamma_jj
        + 7.0 / 8.0 * w2 * g.gamma_ee * g.gamma_jj
        + 7.0 / 4.0 * w2 * g.gamma_ej * g.gamma_ej
}

/// Ratio of the second to the first term of `cos²|a|` for commuting noise:
/// `⟨|a⃗_1|²⟩ / 3`.
pub fn second_to_first_ratio_control(a1_sq_mean: f64) -> f64 {
    a1_sq_mean / 3.0
}

/// Mean and covariance of the (Gaussian) first-order error vector.
pub fn error_vector_moments(noise: &NoiseModel, seq: &PulseSequence) -> (Vector3<f64>, Matrix3<f64>) {
    let n = seq.len();
    let ge = noise.control_autocovariance(n - 1);
    let gj = noise.dephasing_autocovariance(n - 1);
    let cum = seq.cumulative_angles();
    let x: Vec<f64> = seq.thetas().iter().map(|t| t / 2.0).collect();
    let s: Vec<f64> = cum.iter().map(|c| c.sin() / 2.0).collect();
    let c: Vec<f64> = cum.iter().map(|c| c.cos() / 2.0).collect();
    let form = |g: &AutocovarianceSeq, u: &[f64], v: &[f64]| {
        compensated_sum((0..n).flat_map(|i| (0..n).map(move |k| (i, k))).map(|(i, k)| u[i] * v[k] * g.get(i.abs_diff(k))))
    };
    let mu = noise.dephasing_mean;
    let mean = Vector3::new(0.0, mu * s.iter().sum::<f64>(), mu * c.iter().sum::<f64>());
    let (yy, zz, yz) = (form(&gj, &s, &s), form(&gj, &c, &c), form(&gj, &s, &c));
    let cov = Matrix3::new(form(&ge, &x, &x), 0.0, 0.0, 0.0, yy, yz, 0.0, yz, zz);
    (mean, cov)
}

/// `E|a|⁴ = (tr S + |m|²)² + 2 tr(S²) + 4 mᵀSm` for `a ~ N(m, S)`.
pub fn gaussian_fourth_moment(mean: &Vector3<f64>, cov: &Matrix3<f64>) -> f64 {
    let m2 = mean.norm_squared();
    let tr = cov.trace();
    (tr + m2).powi(2) + 2.0 * (cov * cov).trace() + 4.0 * (mean.transpose() * cov * mean)[(0, 0)]
}

/// Tolerance for comparing the first-order infidelity with simulation:
/// the closed-form bound plus `(1/3)⟨|a⃗_1|⁴⟩`, the next term of the
/// fidelity series, which the bound leaves out.
pub fn validation_allowance(noise: &NoiseModel, seq: &PulseSequence) -> Result<f64> {
    let (mean, cov) = error_vector_moments(noise, seq);
    let bound = second_order_bound(&GammaSums::for_sequence(noise, seq)?);
    Ok(bound + gaussian_fourth_moment(&mean, &cov) / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakNoiseReport {
    pub first_order: f64,
    pub second_order_bound: f64,
    pub ratio: f64,
    pub weak_noise_margin: f64,
    pub pass: bool,
    /// Bound with the loose `Ω_max = π`.
    #[serde(skip)]
    pub second_order_bound_loose: f64,
}

/// Confidence level used for the weak-noise margin.
pub const WEAK_NOISE_Z: f64 = 3.291;

/// Passes when the second/first ratio is below 10 % and the bound does not
/// exceed the first-order term.
pub fn weak_noise_regime_report(noise: &NoiseModel, seq: &PulseSequence) -> Result<WeakNoiseReport> {
    let first_order = infidelity_full(seq, noise)?.total;
    let sums = GammaSums::for_sequence(noise, seq)?;
    let bound = second_order_bound(&sums);
    let ratio = second_to_first_ratio_control(first_order);
    let check = weak_noise_check(noise, seq, WEAK_NOISE_Z)?;
    Ok(WeakNoiseReport {
        first_order,
        second_order_bound: bound,
        ratio,
        weak_noise_margin: check.margin,
        pass: ratio < 0.1 && bound <= first_order,
        second_order_bound_loose: second_order_bound(&sums.with_omega_max(PI)),
    })
}
