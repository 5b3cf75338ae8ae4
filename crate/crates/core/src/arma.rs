//! Wide-sense-stationary ARMA noise processes.
//!
//! The recursion convention is
//!
//! ```text
//! β_t = Σ_{i=1..p} a_i β_{t-i} + w_t + Σ_{j=1..q} b_j w_{t-j},   w_t ~ N(0, σ_w²)
//! ```
//!
//! so the spectrum denominator is `|1 - Σ a_k e^{-ikω}|²`. One sample of the
//! process corresponds to one unit-duration control step.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::sum::compensated_sum;
use crate::{Error, Result};

/// ARMA(p, q) model with implicit `b_0 = 1`.
///
/// Construction rejects non-stationary AR parts, so every value of this type
/// describes a valid stationary process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmaRepr", into = "ArmaRepr")]
pub struct ArmaModel {
    ar: Vec<f64>,
    ma: Vec<f64>,
    sigma_w2: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmaRepr {
    #[serde(default)]
    ar: Vec<f64>,
    #[serde(default)]
    ma: Vec<f64>,
    sigma_w2: f64,
}

impl TryFrom<ArmaRepr> for ArmaModel {
    type Error = Error;

    fn try_from(r: ArmaRepr) -> Result<Self> {
        ArmaModel::new(r.ar, r.ma, r.sigma_w2)
    }
}

impl From<ArmaModel> for ArmaRepr {
    fn from(m: ArmaModel) -> Self {
        ArmaRepr {
            ar: m.ar,
            ma: m.ma,
            sigma_w2: m.sigma_w2,
        }
    }
}

impl ArmaModel {
    pub fn new(ar: Vec<f64>, ma: Vec<f64>, sigma_w2: f64) -> Result<Self> {
        if !(sigma_w2.is_finite() && sigma_w2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "white-noise variance must be finite and >= 0, got {sigma_w2}"
            )));
        }
        if let Some(c) = ar.iter().chain(&ma).find(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite coefficient {c}")));
        }
        check_stationary(&ar)?;
        Ok(Self { ar, ma, sigma_w2 })
    }

    /// MA(0): uncorrelated Gaussian noise.
    pub fn white(sigma_w2: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), sigma_w2)
    }

    pub fn ar1(a1: f64, sigma_w2: f64) -> Result<Self> {
        Self::new(vec![a1], Vec::new(), sigma_w2)
    }

    pub fn ma(b: Vec<f64>, sigma_w2: f64) -> Result<Self> {
        Self::new(Vec::new(), b, sigma_w2)
    }

    pub fn arma11(a1: f64, b1: f64, sigma_w2: f64) -> Result<Self> {
        Self::new(vec![a1], vec![b1], sigma_w2)
    }

    pub fn ar_coeffs(&self) -> &[f64] {
        &self.ar
    }

    pub fn ma_coeffs(&self) -> &[f64] {
        &self.ma
    }

    pub fn white_noise_variance(&self) -> f64 {
        self.sigma_w2
    }

    pub fn p(&self) -> usize {
        self.ar.len()
    }

    pub fn q(&self) -> usize {
        self.ma.len()
    }

    /// Re-runs the stationarity check (always `Ok` for a constructed model).
    pub fn validate(&self) -> Result<()> {
        check_stationary(&self.ar)
    }

    pub fn with_white_noise_variance(&self, sigma_w2: f64) -> Result<Self> {
        Self::new(self.ar.clone(), self.ma.clone(), sigma_w2)
    }

    /// Samples discarded before a trajectory starts.
    ///
    /// Trajectories start from a zero state, so the transient must decay until
    /// the missing variance is negligible: `ρ^B ≤ 1e-8` where `ρ` is the
    /// largest AR root modulus (relative variance deficit ≤ 1e-16). Never less
    /// than `10·(p+q+1)`.
    pub fn default_burn_in(&self) -> usize {
        let floor = 10 * (self.p() + self.q() + 1);
        let rho = self.ar_spectral_radius();
        if rho <= 0.0 {
            return floor;
        }
        let decay = ((1e-8f64).ln() / rho.ln()).ceil() as usize + self.q();
        floor.max(decay)
    }

    /// Largest modulus among the roots of `z^p - a_1 z^{p-1} - … - a_p`.
    pub fn ar_spectral_radius(&self) -> f64 {
        let p = self.p();
        if p == 0 {
            return 0.0;
        }
        let mut companion = DMatrix::<f64>::zeros(p, p);
        for (i, a) in self.ar.iter().enumerate() {
            companion[(0, i)] = *a;
        }
        for i in 1..p {
            companion[(i, i - 1)] = 1.0;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Exact stationary autocovariance `γ(0..=max_lag)`.
    ///
    /// Lags `0..=p` come from the extended Yule–Walker system
    /// `γ(k) - Σ a_i γ(|k-i|) = σ_w² Σ_{j=k..q} b_j ψ_{j-k}`; higher lags follow
    /// the same recursion with the (eventually zero) right-hand side.
    pub fn autocovariance(&self, max_lag: usize) -> AutocovarianceSeq {
        let p = self.p();
        let q = self.q();
        let b = |j: usize| if j == 0 { 1.0 } else { self.ma[j - 1] };

        // Impulse response ψ_0..ψ_q.
        let mut psi = vec![0.0; q + 1];
        for j in 0..=q {
            let ar_part: f64 = (1..=j.min(p)).map(|i| self.ar[i - 1] * psi[j - i]).sum();
            psi[j] = b(j) + ar_part;
        }
        let rhs = |k: usize| -> f64 {
            if k > q {
                0.0
            } else {
                self.sigma_w2 * (k..=q).map(|j| b(j) * psi[j - k]).sum::<f64>()
            }
        };

        let mut gammas = vec![0.0; max_lag.max(p) + 1];
        let mut m = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut c = DVector::<f64>::zeros(p + 1);
        for k in 0..=p {
            m[(k, k)] += 1.0;
            for i in 1..=p {
                m[(k, k.abs_diff(i))] -= self.ar[i - 1];
            }
            c[k] = rhs(k);
        }
        let head = m
            .lu()
            .solve(&c)
            .expect("Yule-Walker system is nonsingular for stationary models");
        gammas[..=p].copy_from_slice(head.as_slice());
        for k in p + 1..gammas.len() {
            let ar_part: f64 = (1..=p).map(|i| self.ar[i - 1] * gammas[k - i]).sum();
            gammas[k] = ar_part + rhs(k);
        }
        gammas.truncate(max_lag + 1);
        AutocovarianceSeq { gammas }
    }

    /// `S(ω) = σ_w² |1 + Σ b_j e^{-ijω}|² / |1 - Σ a_k e^{-ikω}|²`.
    pub fn power_spectrum(&self, omega: f64) -> f64 {
        let poly = |coeffs: &[f64], sign: f64| {
            coeffs
                .iter()
                .enumerate()
                .fold(Complex::new(1.0, 0.0), |acc, (k, &c)| {
                    acc + Complex::from_polar(sign * c, -((k + 1) as f64) * omega)
                })
        };
        let num = poly(&self.ma, 1.0).norm_sqr();
        let den = poly(&self.ar, -1.0).norm_sqr();
        self.sigma_w2 * num / den
    }

    /// Gaussian-driven trajectory from zero initial state; the first
    /// `burn_in` samples are discarded. Deterministic in `(model, length, seed, burn_in)`.
    pub fn sample_trajectory(&self, length: usize, seed: u64, burn_in: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with_rng(&mut rng, length, burn_in)
    }

    pub fn sample_with_rng<R: Rng + ?Sized>(&self, rng: &mut R, length: usize, burn_in: usize) -> Vec<f64> {
        let sigma = self.sigma_w2.sqrt();
        let mut past_beta: VecDeque<f64> = std::iter::repeat_n(0.0, self.p()).collect();
        let mut past_w: VecDeque<f64> = std::iter::repeat_n(0.0, self.q()).collect();
        let mut out = Vec::with_capacity(length);
        for t in 0..burn_in + length {
            let w = sigma * rng.sample::<f64, _>(StandardNormal);
            let ar_part: f64 = self.ar.iter().zip(&past_beta).map(|(a, x)| a * x).sum();
            let ma_part: f64 = self.ma.iter().zip(&past_w).map(|(b, x)| b * x).sum();
            let beta = ar_part + w + ma_part;
            if self.p() > 0 {
                past_beta.pop_back();
                past_beta.push_front(beta);
            }
            if self.q() > 0 {
                past_w.pop_back();
                past_w.push_front(w);
            }
            if t >= burn_in {
                out.push(beta);
            }
        }
        out
    }

    /// Rescales `σ_w²` so the process variance `γ(0)` equals `target_power`.
    pub fn set_total_power(&self, target_power: f64) -> Result<Self> {
        if !(target_power.is_finite() && target_power >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "target power must be finite and >= 0, got {target_power}"
            )));
        }
        if self.autocovariance(0).gammas[0] <= 0.0 {
            return Err(Error::ZeroPowerModel);
        }
        let unit = self.with_white_noise_variance(1.0)?.autocovariance(0).gammas[0];
        self.with_white_noise_variance(target_power / unit)
    }
}

/// Schur–Cohn step-down test: all roots of `z^p - a_1 z^{p-1} - … - a_p`
/// are strictly inside the unit circle iff every reflection coefficient has
/// magnitude below one.
pub fn check_stationary(ar: &[f64]) -> Result<()> {
    let mut phi = ar.to_vec();
    for order in (1..=phi.len()).rev() {
        let k = phi[order - 1];
        if !(k.abs() < 1.0) {
            return Err(Error::NonStationary { order, reflection: k });
        }
        let denom = 1.0 - k * k;
        let prev: Vec<f64> = (1..order)
            .map(|j| (phi[j - 1] + k * phi[order - j - 1]) / denom)
            .collect();
        phi = prev;
    }
    Ok(())
}

/// Free-function form of [`ArmaModel::validate`].
pub fn validate_model(model: &ArmaModel) -> Result<()> {
    model.validate()
}

/// Perfectly correlated (DC) noise: `γ(h) = σ²` for every lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcNoiseModel {
    #[serde(rename = "dc_variance")]
    pub variance: f64,
}

impl DcNoiseModel {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "DC variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self { variance })
    }

    /// One static offset per trajectory, drawn from `N(0, σ²)`.
    pub fn sample_with_rng<R: Rng + ?Sized>(&self, rng: &mut R, length: usize) -> Vec<f64> {
        let offset = self.variance.sqrt() * rng.sample::<f64, _>(StandardNormal);
        vec![offset; length]
    }
}

/// Either an ARMA process or the DC limit; JSON is `{"ar","ma","sigma_w2"}`
/// or `{"dc_variance"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseProcess {
    Arma(ArmaModel),
    Dc(DcNoiseModel),
}

impl NoiseProcess {
    pub fn sample_with_rng<R: Rng + ?Sized>(&self, rng: &mut R, length: usize, burn_in: usize) -> Vec<f64> {
        match self {
            NoiseProcess::Arma(m) => m.sample_with_rng(rng, length, burn_in),
            NoiseProcess::Dc(m) => m.sample_with_rng(rng, length),
        }
    }

    pub fn default_burn_in(&self) -> usize {
        match self {
            NoiseProcess::Arma(m) => m.default_burn_in(),
            NoiseProcess::Dc(_) => 0,
        }
    }
}

impl From<ArmaModel> for NoiseProcess {
    fn from(m: ArmaModel) -> Self {
        NoiseProcess::Arma(m)
    }
}

impl From<DcNoiseModel> for NoiseProcess {
    fn from(m: DcNoiseModel) -> Self {
        NoiseProcess::Dc(m)
    }
}

/// Anything with a lag-indexed stationary autocovariance.
pub trait CovarianceSource {
    fn autocovariance_seq(&self, max_lag: usize) -> AutocovarianceSeq;
}

impl CovarianceSource for ArmaModel {
    fn autocovariance_seq(&self, max_lag: usize) -> AutocovarianceSeq {
        self.autocovariance(max_lag)
    }
}

impl CovarianceSource for DcNoiseModel {
    fn autocovariance_seq(&self, max_lag: usize) -> AutocovarianceSeq {
        AutocovarianceSeq {
            gammas: vec![self.variance; max_lag + 1],
        }
    }
}

impl CovarianceSource for NoiseProcess {
    fn autocovariance_seq(&self, max_lag: usize) -> AutocovarianceSeq {
        match self {
            NoiseProcess::Arma(m) => m.autocovariance_seq(max_lag),
            NoiseProcess::Dc(m) => m.autocovariance_seq(max_lag),
        }
    }
}

/// `γ(0..=max_lag)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocovarianceSeq {
    gammas: Vec<f64>,
}

impl AutocovarianceSeq {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::InvalidParameter("empty autocovariance".into()));
        }
        if gammas[0] < 0.0 || gammas.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidParameter("autocovariance must have finite values and gamma(0) >= 0".into()));
        }
        Ok(Self { gammas })
    }

    /// All-zero autocovariance (no noise on that axis).
    pub fn zeros(max_lag: usize) -> Self {
        Self {
            gammas: vec![0.0; max_lag + 1],
        }
    }

    pub fn max_lag(&self) -> usize {
        self.gammas.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gammas
    }

    /// `γ(h)`; panics past `max_lag`, so callers check
    /// [`require_lags`](Self::require_lags) first.
    pub fn get(&self, h: usize) -> f64 {
        self.gammas[h]
    }

    /// Errors unless `γ(0..=n-1)` is available.
    pub fn require_lags(&self, n: usize) -> Result<()> {
        let needed = n.saturating_sub(1);
        if needed > self.max_lag() {
            Err(Error::InsufficientLags {
                needed,
                available: self.max_lag(),
            })
        } else {
            Ok(())
        }
    }

    /// `γ(h)/γ(0)`; all zeros when the process has no power.
    pub fn autocorrelation(&self) -> Vec<f64> {
        let g0 = self.gammas[0];
        if g0 == 0.0 {
            return vec![0.0; self.gammas.len()];
        }
        self.gammas.iter().map(|g| g / g0).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            gammas: self.gammas.iter().map(|g| g * factor).collect(),
        }
    }
}

/// Symmetric Toeplitz covariance `A_{ij} = γ(|i-j|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    pub fn from_autocovariance(gammas: &AutocovarianceSeq, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("covariance dimension must be >= 1".into()));
        }
        gammas.require_lags(n)?;
        Ok(Self(DMatrix::from_fn(n, n, |i, j| gammas.get(i.abs_diff(j)))))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Sum of every entry, accumulated with compensation.
    pub fn grand_sum(&self) -> f64 {
        compensated_sum(self.0.iter().copied())
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        v.dot(&(&self.0 * &v))
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn is_symmetric_toeplitz(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| self.0[(i, j)] == self.0[(0, i.abs_diff(j))]))
    }
}

/// Free-function form of [`CovarianceMatrix::from_autocovariance`].
pub fn covariance_matrix(gammas: &AutocovarianceSeq, n: usize) -> Result<CovarianceMatrix> {
    CovarianceMatrix::from_autocovariance(gammas, n)
}

/// Frobenius norm of the difference of two `n×n` autocovariance matrices.
pub fn model_distance_l2(m1: &dyn CovarianceSource, m2: &dyn CovarianceSource, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("distance dimension must be >= 1".into()));
    }
    let g1 = m1.autocovariance_seq(n - 1);
    let g2 = m2.autocovariance_seq(n - 1);
    // Toeplitz: lag h appears once on the diagonal (h = 0) and 2(n-h) times otherwise.
    let sq = compensated_sum((0..n).map(|h| {
        let d = g1.get(h) - g2.get(h);
        let mult = if h == 0 { n } else { 2 * (n - h) };
        mult as f64 * d * d
    }));
    Ok(sq.sqrt())
}

/// Low-pass FIR kernel (Hamming-windowed sinc) as an MA model.
///
/// Taps are normalised to unit DC gain, then divided by the leading tap so
/// `b_0 = 1`; the leading tap's square becomes `σ_w²`, so the model's spectrum
/// is the filter's `|H(ω)|²`. Exactly-zero edge taps are dropped (a pure
/// delay, which leaves the autocovariance unchanged).
pub fn fir_lowpass_ma(cutoff: f64, order: usize) -> Result<ArmaModel> {
    if order == 0 {
        return Err(Error::InvalidParameter("FIR order must be >= 1".into()));
    }
    if !(cutoff > 0.0 && cutoff <= PI) {
        return Err(Error::InvalidParameter(format!("cutoff must lie in (0, pi], got {cutoff}")));
    }
    let centre = order as f64 / 2.0;
    let mut taps: Vec<f64> = (0..=order)
        .map(|k| {
            let x = k as f64 - centre;
            let sinc = if x == 0.0 {
                cutoff / PI
            } else {
                (cutoff * x).sin() / (PI * x)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * k as f64 / order as f64).cos();
            sinc * window
        })
        .collect();
    let dc_gain: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc_gain);

    let peak = taps.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
    let negligible = |t: &f64| t.abs() <= 1e-14 * peak;
    let first = taps.iter().position(|t| !negligible(t)).unwrap_or(0);
    let last = taps.iter().rposition(|t| !negligible(t)).unwrap_or(0);
    let taps = &taps[first..=last];
    let lead = taps[0];
    let ma = taps[1..].iter().map(|t| t / lead).collect();
    ArmaModel::ma(ma, lead * lead)
}
