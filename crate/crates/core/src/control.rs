//! Pulse sequences, noise models and first-order infidelity.
//!
//! A sequence is a list of per-step σ_x rotation angles θ_j (unit-duration
//! steps), summing to the target angle θ_Q. To first order in the Magnus
//! expansion the error generator is `a⃗·σ⃗` with
//!
//! ```text
//! a_x = Σ ε_j θ_j / 2
//! a_y = Σ (μ_J + J̃_j)/2 · sin Θ_j
//! a_z = Σ (μ_J + J̃_j)/2 · cos Θ_j,        Θ_j = θ_1 + … + θ_j
//! ```
//!
//! and the expected infidelity is `⟨|a⃗|²⟩ = (A + B + C)/4`.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arma::{covariance_matrix, ArmaModel, AutocovarianceSeq};
use crate::sum::compensated_sum;
use crate::{Error, Result};

const CONSTRAINT_TOL: f64 = 1e-9;

/// Per-step rotation angles with their target total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceRepr", into = "SequenceRepr")]
pub struct PulseSequence {
    thetas: Vec<f64>,
    target_angle: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceRepr {
    thetas: Vec<f64>,
    target_angle: f64,
}

impl TryFrom<SequenceRepr> for PulseSequence {
    type Error = Error;

    fn try_from(r: SequenceRepr) -> Result<Self> {
        PulseSequence::new(r.thetas, r.target_angle)
    }
}

impl From<PulseSequence> for SequenceRepr {
    fn from(s: PulseSequence) -> Self {
        SequenceRepr {
            thetas: s.thetas,
            target_angle: s.target_angle,
        }
    }
}

impl PulseSequence {
    /// Rejects empty sequences and any whose angles do not sum to
    /// `target_angle` (no mod-2π wrapping).
    pub fn new(thetas: Vec<f64>, target_angle: f64) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidSequence("sequence needs at least one step".into()));
        }
        if !target_angle.is_finite() || thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSequence("angles must be finite".into()));
        }
        let total = compensated_sum(thetas.iter().copied());
        if (total - target_angle).abs() > constraint_tolerance(target_angle) {
            return Err(Error::InvalidSequence(format!(
                "angles sum to {total}, target is {target_angle}"
            )));
        }
        Ok(Self { thetas, target_angle })
    }

    /// Constant drive `θ_Q/N` on every step.
    pub fn uniform(target_angle: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSequence("sequence needs at least one step".into()));
        }
        Self::new(vec![target_angle / n as f64; n], target_angle)
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn target_angle(&self) -> f64 {
        self.target_angle
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// `Θ_{j,1}` for j = 1..N.
    pub fn cumulative_angles(&self) -> Vec<f64> {
        cumulative(&self.thetas)
    }

    pub fn max_abs_angle(&self) -> f64 {
        self.thetas.iter().fold(0.0, |m, t| m.max(t.abs()))
    }
}

pub(crate) fn constraint_tolerance(target: f64) -> f64 {
    CONSTRAINT_TOL * (1.0 + target.abs())
}

fn cumulative(thetas: &[f64]) -> Vec<f64> {
    thetas
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect()
}

/// Control (multiplicative amplitude) noise plus dephasing `J = μ_J + J̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub control: ArmaModel,
    #[serde(default)]
    pub dephasing_mean: f64,
    #[serde(default)]
    pub dephasing_residual: Option<ArmaModel>,
}

impl NoiseModel {
    pub fn new(control: ArmaModel, dephasing_mean: f64, dephasing_residual: Option<ArmaModel>) -> Result<Self> {
        if !dephasing_mean.is_finite() {
            return Err(Error::InvalidParameter("dephasing mean must be finite".into()));
        }
        Ok(Self {
            control,
            dephasing_mean,
            dephasing_residual,
        })
    }

    pub fn control_only(control: ArmaModel) -> Self {
        Self {
            control,
            dephasing_mean: 0.0,
            dephasing_residual: None,
        }
    }

    pub fn control_autocovariance(&self, max_lag: usize) -> AutocovarianceSeq {
        self.control.autocovariance(max_lag)
    }

    /// Autocovariance of the zero-mean residual `J̃` (zeros if absent).
    pub fn dephasing_autocovariance(&self, max_lag: usize) -> AutocovarianceSeq {
        match &self.dephasing_residual {
            Some(m) => m.autocovariance(max_lag),
            None => AutocovarianceSeq::zeros(max_lag),
        }
    }

    pub fn has_dephasing(&self) -> bool {
        self.dephasing_mean != 0.0
            || self
                .dephasing_residual
                .as_ref()
                .is_some_and(|m| m.white_noise_variance() > 0.0)
    }
}

/// First-order error vector components (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorVector {
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl ErrorVector {
    pub fn norm_sq(&self) -> f64 {
        self.ax * self.ax + self.ay * self.ay + self.az * self.az
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.ax, self.ay, self.az]
    }
}

/// `⟨|a⃗_1|²⟩ = (A + B + C)/4`: coherent dephasing, correlated dephasing, control noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfidelityBreakdown {
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    pub total: f64,
}

impl InfidelityBreakdown {
    fn from_terms(term_a: f64, term_b: f64, term_c: f64) -> Self {
        Self {
            term_a,
            term_b,
            term_c,
            total: (term_a + term_b + term_c) / 4.0,
        }
    }

    /// `(A, B, C) / (A + B + C)`; all zeros for a noiseless breakdown.
    pub fn shares(&self) -> [f64; 3] {
        let s = self.term_a + self.term_b + self.term_c;
        if s == 0.0 {
            [0.0; 3]
        } else {
            [self.term_a / s, self.term_b / s, self.term_c / s]
        }
    }
}

/// Error vector for one realisation of ε and J̃ (one sample per step).
pub fn error_vector_first_order(
    seq: &PulseSequence,
    eps_traj: &[f64],
    j_traj: &[f64],
    mu_j: f64,
) -> Result<ErrorVector> {
    let n = seq.len();
    for len in [eps_traj.len(), j_traj.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    let mut a = ErrorVector::default();
    for ((theta, big_theta), (eps, j)) in seq
        .thetas()
        .iter()
        .zip(seq.cumulative_angles())
        .zip(eps_traj.iter().zip(j_traj))
    {
        let dephasing = (mu_j + j) / 2.0;
        a.ax += eps * theta / 2.0;
        a.ay += dephasing * big_theta.sin();
        a.az += dephasing * big_theta.cos();
    }
    Ok(a)
}

/// `Σ_{j>h} θ_j θ_{j-h}` for h = 0..N-1.
fn lagged_products(thetas: &[f64]) -> Vec<f64> {
    let n = thetas.len();
    (0..n)
        .map(|h| (h..n).map(|j| thetas[j] * thetas[j - h]).sum())
        .collect()
}

/// `Σ_{i>h} cos(Θ_i - Θ_{i-h})` for h = 0..N-1 (the lag-window phase).
fn lagged_cosines(cumulative: &[f64]) -> Vec<f64> {
    let n = cumulative.len();
    (0..n)
        .map(|h| (h..n).map(|i| (cumulative[i] - cumulative[i - h]).cos()).sum())
        .collect()
}

/// `γ(0) L_0 + 2 Σ_{h≥1} γ(h) L_h`.
fn toeplitz_contract(gammas: &AutocovarianceSeq, lagged: &[f64]) -> f64 {
    compensated_sum(
        lagged
            .iter()
            .enumerate()
            .map(|(h, l)| if h == 0 { gammas.get(0) * l } else { 2.0 * gammas.get(h) * l }),
    )
}

/// `(1/4)[γ(0)Σθ_j² + 2Σ_h γ(h)Σ_j θ_j θ_{j-h}] = (1/4) xᵀAx`.
pub fn infidelity_control_only(seq: &PulseSequence, gammas: &AutocovarianceSeq) -> Result<f64> {
    gammas.require_lags(seq.len())?;
    Ok(toeplitz_contract(gammas, &lagged_products(seq.thetas())) / 4.0)
}

/// Closed-form A/B/C decomposition of the first-order infidelity.
pub fn infidelity_full(seq: &PulseSequence, noise: &NoiseModel) -> Result<InfidelityBreakdown> {
    Ok(FullObjective::new(noise, seq.len()).breakdown(seq.thetas()))
}

/// The first-order objective for a fixed length, with autocovariances
/// precomputed so it can be evaluated (and differentiated) repeatedly.
#[derive(Debug, Clone)]
pub struct FullObjective {
    n: usize,
    mu_sq: f64,
    gamma_eps: AutocovarianceSeq,
    gamma_j: AutocovarianceSeq,
}

impl FullObjective {
    pub fn new(noise: &NoiseModel, n: usize) -> Self {
        let max_lag = n.saturating_sub(1);
        Self {
            n,
            mu_sq: noise.dephasing_mean * noise.dephasing_mean,
            gamma_eps: noise.control_autocovariance(max_lag),
            gamma_j: noise.dephasing_autocovariance(max_lag),
        }
    }

    pub fn from_parts(n: usize, mu_j: f64, gamma_eps: AutocovarianceSeq, gamma_j: AutocovarianceSeq) -> Result<Self> {
        gamma_eps.require_lags(n)?;
        gamma_j.require_lags(n)?;
        Ok(Self {
            n,
            mu_sq: mu_j * mu_j,
            gamma_eps,
            gamma_j,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn breakdown(&self, thetas: &[f64]) -> InfidelityBreakdown {
        debug_assert_eq!(thetas.len(), self.n);
        let cosines = lagged_cosines(&cumulative(thetas));
        let off_diagonal = compensated_sum(cosines.iter().skip(1).copied());
        let term_a = self.mu_sq * (self.n as f64 + 2.0 * off_diagonal);
        let term_b = toeplitz_contract(&self.gamma_j, &cosines);
        let term_c = toeplitz_contract(&self.gamma_eps, &lagged_products(thetas));
        InfidelityBreakdown::from_terms(term_a, term_b, term_c)
    }

    pub fn total(&self, thetas: &[f64]) -> f64 {
        self.breakdown(thetas).total
    }

    /// Gradient of `total` with respect to every θ_m.
    ///
    /// With `W_ik = μ_J² + γ_J̃(|i-k|)` the dephasing part is
    /// `Σ_ik W_ik cos(Θ_i - Θ_k)`, whose derivative in θ_m is
    /// `-2 Σ_{i≥m} r_i` with `r_i = Σ_k W_ik sin(Θ_i - Θ_k)`.
    pub fn gradient(&self, thetas: &[f64]) -> Vec<f64> {
        let n = self.n;
        let cum = cumulative(thetas);
        let w = |h: usize| self.mu_sq + self.gamma_j.get(h);
        let r: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|k| w(i.abs_diff(k)) * (cum[i] - cum[k]).sin()).sum())
            .collect();
        let mut suffix = vec![0.0; n];
        let mut acc = 0.0;
        for i in (0..n).rev() {
            acc += r[i];
            suffix[i] = acc;
        }
        (0..n)
            .map(|m| {
                let a_theta: f64 = (0..n).map(|k| self.gamma_eps.get(m.abs_diff(k)) * thetas[k]).sum();
                (2.0 * a_theta - 2.0 * suffix[m]) / 4.0
            })
            .collect()
    }
}

/// Independent dense evaluation of `⟨|a⃗_1|²⟩` from the linear maps
/// `a⃗ = M_ε ε + M_J (μ_J 1 + J̃)`.
pub fn infidelity_quadratic_oracle(seq: &PulseSequence, noise: &NoiseModel) -> Result<f64> {
    let n = seq.len();
    let cov_eps = covariance_matrix(&noise.control_autocovariance(n - 1), n)?.into_matrix();
    let cov_j = covariance_matrix(&noise.dephasing_autocovariance(n - 1), n)?.into_matrix();
    let cum = seq.cumulative_angles();

    let mut m_eps = DMatrix::<f64>::zeros(3, n);
    let mut m_j = DMatrix::<f64>::zeros(3, n);
    for j in 0..n {
        m_eps[(0, j)] = seq.thetas()[j] / 2.0;
        m_j[(1, j)] = cum[j].sin() / 2.0;
        m_j[(2, j)] = cum[j].cos() / 2.0;
    }
    let fluct = &m_eps * cov_eps * m_eps.transpose() + &m_j * cov_j * m_j.transpose();
    let mean = &m_j * DVector::from_element(n, noise.dephasing_mean);
    Ok(fluct.trace() + mean.norm_squared())
}

/// `F = ½[1 + Σ_{m=0}^{terms} (-1)^m 4^m/(2m)! ⟨|a⃗|²⟩^m]`.
pub fn fidelity_series(a1_sq_mean: f64, terms: usize) -> f64 {
    let mut term = 1.0;
    let mut acc = term;
    for m in 1..=terms {
        let k = 2.0 * m as f64;
        term *= -4.0 * a1_sq_mean / (k * (k - 1.0));
        acc += term;
    }
    0.5 * (1.0 + acc)
}

/// `|F_xx(ω)|²` and `|F_zy(ω)|²` at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterFunctionPoint {
    pub omega: f64,
    pub fxx: f64,
    pub fzy: f64,
}

/// Unit-step Riemann sums `F_xx(ω) = Σ θ_j e^{iωj}`, `F_zy(ω) = Σ sin Θ_j e^{iωj}`.
pub fn filter_functions(seq: &PulseSequence, omegas: &[f64]) -> Vec<FilterFunctionPoint> {
    let cum = seq.cumulative_angles();
    omegas
        .iter()
        .map(|&omega| {
            let mut fxx = Complex::new(0.0, 0.0);
            let mut fzy = Complex::new(0.0, 0.0);
            for (j, (theta, big_theta)) in seq.thetas().iter().zip(&cum).enumerate() {
                let phase = Complex::from_polar(1.0, omega * (j + 1) as f64);
                fxx += phase * *theta;
                fzy += phase * big_theta.sin();
            }
            FilterFunctionPoint {
                omega,
                fxx: fxx.norm_sqr(),
                fzy: fzy.norm_sqr(),
            }
        })
        .collect()
}

/// Bound on the accumulated gate-angle error at confidence `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakNoiseCheck {
    pub pass: bool,
    /// `max(|⟨ε⟩ ∓ zσ_ε/√K|)·θ_Q` in radians.
    pub lhs: f64,
    /// `lhs / π`; passes below one.
    pub margin: f64,
}

/// `max(|⟨ε⟩ - zσ_ε/√K|, |⟨ε⟩ + zσ_ε/√K|)·θ_Q < π` with `σ_ε² = γ_ε(0)`,
/// `K = N` and zero-mean control noise.
pub fn weak_noise_check(noise: &NoiseModel, seq: &PulseSequence, z: f64) -> Result<WeakNoiseCheck> {
    if !(z > 0.0) {
        return Err(Error::InvalidParameter(format!("z must be > 0, got {z}")));
    }
    let mean = 0.0_f64;
    let sigma = noise.control_autocovariance(0).get(0).sqrt();
    let half_width = z * sigma / (seq.len() as f64).sqrt();
    let lhs = (mean - half_width).abs().max((mean + half_width).abs()) * seq.target_angle().abs();
    Ok(WeakNoiseCheck {
        pass: lhs < PI,
        lhs,
        margin: lhs / PI,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sequence_constraint() {
        assert!(PulseSequence::new(vec![1.0, 2.0], 3.0).is_ok());
        assert!(PulseSequence::new(vec![1.0, 2.0], 3.1).is_err());
        assert!(PulseSequence::new(vec![], 0.0).is_err());
        assert!(PulseSequence::uniform(PI, 0).is_err());
        let s: PulseSequence = serde_json::from_str(r#"{"thetas":[1.5,1.5],"target_angle":3.0}"#).unwrap();
        assert_eq!(s.len(), 2);
        assert!(serde_json::from_str::<PulseSequence>(r#"{"thetas":[1.0],"target_angle":3.0}"#).is_err());
    }

    #[test]
    fn error_vector_examples() {
        let seq = PulseSequence::uniform(PI, 3).unwrap();
        let zero = error_vector_first_order(&seq, &[0.0; 3], &[0.0; 3], 0.0).unwrap();
        assert_eq!(zero, ErrorVector::default());

        let one = PulseSequence::new(vec![0.7], 0.7).unwrap();
        let a = error_vector_first_order(&one, &[0.3], &[0.05], 0.1).unwrap();
        assert!(close(a.ax, 0.3 * 0.7 / 2.0, 1e-15));
        assert!(close(a.ay, 0.15 / 2.0 * 0.7f64.sin(), 1e-15));
        assert!(close(a.az, 0.15 / 2.0 * 0.7f64.cos(), 1e-15));

        let two = PulseSequence::uniform(PI, 2).unwrap();
        let a = error_vector_first_order(&two, &[0.1, -0.1], &[0.0, 0.0], 0.0).unwrap();
        assert!(a.norm_sq() < 1e-30);

        assert!(matches!(
            error_vector_first_order(&two, &[0.1], &[0.0, 0.0], 0.0),
            Err(Error::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn control_only_examples() {
        let gammas = ArmaModel::white(2e-3).unwrap().autocovariance(9);
        for n in [1, 4, 10] {
            let seq = PulseSequence::uniform(PI, n).unwrap();
            let got = infidelity_control_only(&seq, &gammas).unwrap();
            assert!(close(got, 2e-3 * PI * PI / (4.0 * n as f64), 1e-17));
        }
        let seq = PulseSequence::new(vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(infidelity_control_only(&seq, &gammas).unwrap(), 0.0);

        let short = AutocovarianceSeq::new(vec![1.0]).unwrap();
        assert!(infidelity_control_only(&PulseSequence::uniform(PI, 2).unwrap(), &short).is_err());
    }

    #[test]
    fn ar1_optimal_three_step() {
        let model = ArmaModel::ar1(0.5, 1e-3).unwrap();
        let gammas = model.autocovariance(2);
        let seq = PulseSequence::new(vec![PI / 2.5, PI / 5.0, PI / 2.5], PI).unwrap();
        let got = infidelity_control_only(&seq, &gammas).unwrap();
        // Independent route: (1/4) θ_Q² / (1ᵀ A⁻¹ 1).
        let a = covariance_matrix(&gammas, 3).unwrap().into_matrix();
        let ainv_one = a.lu().solve(&DVector::from_element(3, 1.0)).unwrap();
        let via_inverse = PI * PI / 4.0 / ainv_one.sum();
        assert!(close(got, PI * PI * 1e-3 / 5.0, 1e-15));
        assert!(close(got, via_inverse, 1e-15));
    }

    #[test]
    fn ar1_optimal_three_step_monte_carlo() {
        let model = ArmaModel::ar1(0.5, 1e-3).unwrap();
        let seq = PulseSequence::new(vec![PI / 2.5, PI / 5.0, PI / 2.5], PI).unwrap();
        let expected = PI * PI * 1e-3 / 5.0;
        let trials = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..trials {
            let eps = model.sample_with_rng(&mut rng, 3, 30);
            let a = error_vector_first_order(&seq, &eps, &[0.0; 3], 0.0).unwrap();
            let v = a.ax * a.ax;
            s += v;
            s2 += v * v;
        }
        let mean = s / trials as f64;
        let se = ((s2 / trials as f64 - mean * mean) / trials as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn full_breakdown_reductions() {
        let control = ArmaModel::ar1(0.4, 1e-3).unwrap();
        let seq = PulseSequence::new(vec![0.3, 1.2, -0.2, PI - 1.3], PI).unwrap();
        let plain = infidelity_control_only(&seq, &control.autocovariance(3)).unwrap();
        let b = infidelity_full(&seq, &NoiseModel::control_only(control.clone())).unwrap();
        assert_eq!((b.term_a, b.term_b), (0.0, 0.0));
        assert!(close(b.total, plain, 1e-18));

        let mu: f64 = 0.03;
        let one = PulseSequence::new(vec![1.1], 1.1).unwrap();
        let silent = ArmaModel::white(0.0).unwrap();
        let b = infidelity_full(&one, &NoiseModel::new(silent, mu, None).unwrap()).unwrap();
        assert!(close(b.total, mu * mu / 4.0, 1e-18));

        let sigma_j2 = 2e-4;
        let white_j = ArmaModel::white(sigma_j2).unwrap();
        let noise = NoiseModel::new(control.clone(), 0.0, Some(white_j)).unwrap();
        let b = infidelity_full(&seq, &noise).unwrap();
        let xax = covariance_matrix(&control.autocovariance(3), 4).unwrap().quadratic_form(seq.thetas());
        assert!(close(b.total, (xax + 4.0 * sigma_j2) / 4.0, 1e-16));
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (PulseSequence, NoiseModel) {
        let n = rng.random_range(1..=32);
        let target = rng.random_range(-2.0 * PI..2.0 * PI);
        let mut thetas: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shift = (target - thetas.iter().sum::<f64>()) / n as f64;
        thetas.iter_mut().for_each(|t| *t += shift);
        let control = ArmaModel::arma11(rng.random_range(-0.95..0.95), rng.random_range(-1.0..1.0), rng.random_range(0.0..1e-2)).unwrap();
        let residual = ArmaModel::arma11(rng.random_range(-0.95..0.95), rng.random_range(-1.0..1.0), rng.random_range(0.0..1e-2)).unwrap();
        let mu = rng.random_range(-0.1..0.1);
        (PulseSequence::new(thetas, target).unwrap(), NoiseModel::new(control, mu, Some(residual)).unwrap())
    }

    #[test]
    fn closed_form_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let (seq, noise) = random_instance(&mut rng);
            let closed = infidelity_full(&seq, &noise).unwrap();
            let oracle = infidelity_quadratic_oracle(&seq, &noise).unwrap();
            assert!(close(closed.total, oracle, 1e-10), "{} vs {oracle}", closed.total);
            assert!(closed.term_c >= 0.0);
        }
        let seq = PulseSequence::uniform(PI, 5).unwrap();
        let silent = NoiseModel::control_only(ArmaModel::white(0.0).unwrap());
        assert_eq!(infidelity_quadratic_oracle(&seq, &silent).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let (seq, noise) = random_instance(&mut rng);
            let obj = FullObjective::new(&noise, seq.len());
            let g = obj.gradient(seq.thetas());
            let scale = g.iter().fold(1e-12_f64, |m, x| m.max(x.abs()));
            for m in 0..seq.len() {
                let h = 1e-5;
                let mut up = seq.thetas().to_vec();
                let mut dn = up.clone();
                up[m] += h;
                dn[m] -= h;
                let fd = (obj.total(&up) - obj.total(&dn)) / (2.0 * h);
                assert!((fd - g[m]).abs() <= 1e-6 * scale, "component {m}: {fd} vs {}", g[m]);
            }
        }
    }

    #[test]
    fn monte_carlo_mean_matches_breakdown() {
        let control = ArmaModel::ar1(0.6, 1e-3).unwrap();
        let residual = ArmaModel::ma(vec![0.5], 5e-4).unwrap();
        let noise = NoiseModel::new(control.clone(), 0.02, Some(residual.clone())).unwrap();
        let seq = PulseSequence::new(vec![0.5, 1.0, 0.8, 0.8415926535897931], PI).unwrap();
        let expected = infidelity_full(&seq, &noise).unwrap().total;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..trials {
            let eps = control.sample_with_rng(&mut rng, 4, 40);
            let j = residual.sample_with_rng(&mut rng, 4, 40);
            let v = error_vector_first_order(&seq, &eps, &j, 0.02).unwrap().norm_sq();
            s += v;
            s2 += v * v;
        }
        let mean = s / trials as f64;
        let se = ((s2 / trials as f64 - mean * mean) / trials as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn fidelity_series_examples() {
        assert_eq!(fidelity_series(0.0, 5), 1.0);
        let a: f64 = 0.01;
        assert!(close(fidelity_series(a, 3), 1.0 - a + a * a / 3.0 - 2.0 * a.powi(3) / 45.0, 1e-15));
        assert!(close(fidelity_series(a, 6), a.sqrt().cos().powi(2), 1e-15));
        let first = 1.0 - fidelity_series(a, 1);
        let second = fidelity_series(a, 2) - fidelity_series(a, 1);
        assert!(close(second / first, a / 3.0, 1e-15));
    }

    #[test]
    fn fidelity_partial_sums_alternate() {
        for a in [0.05f64, 0.3, 0.9] {
            let limit = a.sqrt().cos().powi(2);
            let sums: Vec<f64> = (1..8).map(|t| fidelity_series(a, t) - limit).collect();
            // Skip pairs already at rounding level.
            for w in sums.windows(2).filter(|w| w[1].abs() > 1e-13) {
                assert!(w[0] * w[1] < 0.0, "a={a}: {w:?}");
            }
        }
    }

    #[test]
    fn filter_function_examples() {
        let seq = PulseSequence::new(vec![0.4, 1.3, 1.4415926535897932], PI).unwrap();
        let ff = filter_functions(&seq, &[0.0]);
        assert!(close(ff[0].fxx.sqrt(), PI, 1e-14));

        let n = 8;
        let uniform = PulseSequence::uniform(PI, n).unwrap();
        let omegas: Vec<f64> = (1..40).map(|k| 0.08 * k as f64).collect();
        for p in filter_functions(&uniform, &omegas) {
            let w = p.omega;
            let dirichlet = (PI / n as f64).powi(2) * (n as f64 * w / 2.0).sin().powi(2) / (w / 2.0).sin().powi(2);
            assert!(close(p.fxx, dirichlet, 1e-12 * (1.0 + dirichlet)), "{w}");
        }

        let zero = PulseSequence::new(vec![0.0; 4], 0.0).unwrap();
        assert!(filter_functions(&zero, &omegas).iter().all(|p| p.fzy == 0.0));
    }

    #[test]
    fn weak_noise_examples() {
        let white = NoiseModel::control_only(ArmaModel::white(1e-3).unwrap());
        let seq = PulseSequence::uniform(PI, 10).unwrap();
        let c = weak_noise_check(&white, &seq, 3.291).unwrap();
        assert!(c.pass);
        let lhs = 3.291 * 1e-3f64.sqrt() / 10f64.sqrt() * PI;
        assert!(close(c.lhs, lhs, 1e-15));
        assert!(close(c.lhs, 0.1034, 1e-4));
        assert!(close(c.margin, lhs / PI, 1e-15));

        let silent = NoiseModel::control_only(ArmaModel::white(0.0).unwrap());
        let c = weak_noise_check(&silent, &seq, 3.291).unwrap();
        assert!(c.pass && c.margin == 0.0);

        let strong = NoiseModel::control_only(ArmaModel::white(10.0).unwrap());
        let c = weak_noise_check(&strong, &PulseSequence::uniform(PI, 1).unwrap(), 3.291).unwrap();
        assert!(!c.pass);
        assert!(close(c.margin, 3.291 * 10f64.sqrt(), 1e-12));
        assert!(weak_noise_check(&white, &seq, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn error_vector_is_linear(
            thetas in prop::collection::vec(-2.0f64..2.0, 1..12),
            seed in any::<u64>(),
            alpha in -3.0f64..3.0,
            mu in -0.2f64..0.2,
        ) {
            let target: f64 = thetas.iter().sum();
            let seq = PulseSequence::new(thetas, target).unwrap();
            let n = seq.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            let j: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            let base = error_vector_first_order(&seq, &eps, &j, mu).unwrap();
            let eps_s: Vec<f64> = eps.iter().map(|x| alpha * x).collect();
            let j_s: Vec<f64> = j.iter().map(|x| alpha * x).collect();
            let scaled = error_vector_first_order(&seq, &eps_s, &j_s, alpha * mu).unwrap();
            for (s, b) in scaled.as_array().iter().zip(base.as_array()) {
                prop_assert!((s - alpha * b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn control_term_scales_with_power(
            a1 in -0.9f64..0.9,
            c in 0.01f64..100.0,
            thetas in prop::collection::vec(-2.0f64..2.0, 1..16),
        ) {
            let target: f64 = thetas.iter().sum();
            let seq = PulseSequence::new(thetas, target).unwrap();
            let base = ArmaModel::ar1(a1, 1e-3).unwrap();
            let scaled = base.with_white_noise_variance(c * 1e-3).unwrap();
            let n = seq.len() - 1;
            let f0 = infidelity_control_only(&seq, &base.autocovariance(n)).unwrap();
            let f1 = infidelity_control_only(&seq, &scaled.autocovariance(n)).unwrap();
            prop_assert!(f0 >= 0.0);
            prop_assert!((f1 - c * f0).abs() <= 1e-12 * (f1.abs() + 1e-300));
        }
    }
}
