//! Exact piecewise-constant SU(2) simulation of noisy control.

use nalgebra::{Complex, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arma::{ArmaModel, CovarianceMatrix, NoiseProcess};
use crate::composite::CompositePulse;
use crate::control::{NoiseModel, PulseSequence};
use crate::optimizer::{solve_qp, QpProblem};
use crate::sum::compensated_sum;
use crate::{Error, Execution, Result};

pub type Unitary = Matrix2<Complex<f64>>;

/// `exp(-i[(j/2)σ_z + (1+ε)(θ/2)(cos φ σ_x + sin φ σ_y)])`.
pub fn step_unitary(theta: f64, eps: f64, j: f64, phi: f64) -> Unitary {
    let amp = (1.0 + eps) * theta;
    let v = [amp * phi.cos(), amp * phi.sin(), j];
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if r == 0.0 {
        return Unitary::identity();
    }
    let (s, c) = (r / 2.0).sin_cos();
    let [nx, ny, nz] = v.map(|x| x / r);
    // c·I - i s (n·σ)
    Unitary::new(
        Complex::new(c, -s * nz),
        Complex::new(-s * ny, -s * nx),
        Complex::new(s * ny, -s * nx),
        Complex::new(c, s * nz),
    )
}

/// `(Re Tr(Mσ_x), Re Tr(Mσ_y), Re Tr(Mσ_z)) / 2`.
pub fn pauli_components(m: &Unitary) -> [f64; 3] {
    [
        (m[(0, 1)] + m[(1, 0)]).re / 2.0,
        (m[(1, 0)] - m[(0, 1)]).im / 2.0,
        (m[(0, 0)] - m[(1, 1)]).re / 2.0,
    ]
}

/// `|Tr(U_ideal† U)|² / 4`.
pub fn gate_fidelity(ideal: &Unitary, actual: &Unitary) -> f64 {
    (ideal.adjoint() * actual).trace().norm_sqr() / 4.0
}

/// Per-trajectory seed: a SplitMix64 finaliser over `seed ⊕ mix(index)`.
pub fn trajectory_seed(seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(index))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub num_trajectories: usize,
    pub seed: u64,
    /// Discarded samples per trajectory; the model's default when absent.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(skip)]
    pub exec: Execution,
}

impl SimConfig {
    pub fn new(num_trajectories: usize, seed: u64) -> Self {
        Self {
            num_trajectories,
            seed,
            burn_in: None,
            exec: Execution::default(),
        }
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.num_trajectories == 0 {
            return Err(Error::InvalidParameter("num_trajectories must be >= 1".into()));
        }
        Ok(())
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(trajectory_seed(self.seed, index as u64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityEstimate {
    pub mean_infidelity: f64,
    /// Sample standard deviation over `√num_trajectories`.
    pub standard_error: f64,
    pub num_trajectories: usize,
}

impl FidelityEstimate {
    /// Mean and standard error with compensated sums, so the result only
    /// depends on the values and their order.
    pub fn from_samples(infidelities: &[f64]) -> Self {
        let n = infidelities.len();
        let mean = compensated_sum(infidelities.iter().copied()) / n as f64;
        let standard_error = if n > 1 {
            let ss = compensated_sum(infidelities.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean_infidelity: mean,
            standard_error,
            num_trajectories: n,
        }
    }
}

/// Propagator `Π_j step_unitary(θ_j, ε_j, J_j, 0)` for explicit trajectories.
pub fn single_axis_unitary(seq: &PulseSequence, eps: &[f64], j: &[f64]) -> Result<Unitary> {
    for len in [eps.len(), j.len()] {
        if len != seq.len() {
            return Err(Error::LengthMismatch {
                expected: seq.len(),
                got: len,
            });
        }
    }
    Ok(seq
        .thetas()
        .iter()
        .zip(eps.iter().zip(j))
        .fold(Unitary::identity(), |acc, (&t, (&e, &jj))| step_unitary(t, e, jj, 0.0) * acc))
}

/// `1 - F` of one single-axis realisation; `j` is the total dephasing `μ_J + J̃`.
pub fn single_axis_infidelity(seq: &PulseSequence, eps: &[f64], j: &[f64]) -> Result<f64> {
    let u = single_axis_unitary(seq, eps, j)?;
    let ideal = step_unitary(seq.target_angle(), 0.0, 0.0, 0.0);
    Ok(1.0 - gate_fidelity(&ideal, &u))
}

/// Closed-form fidelity `cos²(Σε_jθ_j/2)` when only control noise is present.
pub fn commuting_fidelity(seq: &PulseSequence, eps: &[f64]) -> f64 {
    let phase: f64 = seq.thetas().iter().zip(eps).map(|(t, e)| t * e).sum();
    (phase / 2.0).cos().powi(2)
}

/// One sampled `(ε, J)` pair for trajectory `index`.
pub fn sample_single_axis(noise: &NoiseModel, n: usize, cfg: &SimConfig, index: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = cfg.rng(index);
    let eps = noise
        .control
        .sample_with_rng(&mut rng, n, cfg.burn_in.unwrap_or_else(|| noise.control.default_burn_in()));
    let residual = match &noise.dephasing_residual {
        Some(m) => m.sample_with_rng(&mut rng, n, cfg.burn_in.unwrap_or_else(|| m.default_burn_in())),
        None => vec![0.0; n],
    };
    let j = residual.into_iter().map(|r| noise.dephasing_mean + r).collect();
    (eps, j)
}

pub fn simulate_single_axis(seq: &PulseSequence, noise: &NoiseModel, cfg: &SimConfig) -> Result<FidelityEstimate> {
    cfg.validate()?;
    let n = seq.len();
    let samples = cfg.exec.map_range(cfg.num_trajectories, |i| {
        let (eps, j) = sample_single_axis(noise, n, cfg, i);
        single_axis_infidelity(seq, &eps, &j)
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FidelityEstimate::from_samples(&samples))
}

/// Propagator of a composite pulse with per-segment amplitude errors.
pub fn composite_unitary(cp: &CompositePulse, eps: &[f64]) -> Result<Unitary> {
    if eps.len() != cp.len() {
        return Err(Error::LengthMismatch {
            expected: cp.len(),
            got: eps.len(),
        });
    }
    Ok(cp
        .thetas()
        .iter()
        .zip(cp.phis())
        .zip(eps)
        .fold(Unitary::identity(), |acc, ((&t, &p), &e)| step_unitary(t, e, 0.0, p) * acc))
}

pub fn composite_infidelity(cp: &CompositePulse, eps: &[f64]) -> Result<f64> {
    let u = composite_unitary(cp, eps)?;
    let ideal = step_unitary(cp.target_angle(), 0.0, 0.0, 0.0);
    Ok(1.0 - gate_fidelity(&ideal, &u))
}

pub fn simulate_composite(cp: &CompositePulse, amp_noise: &NoiseProcess, cfg: &SimConfig) -> Result<FidelityEstimate> {
    cfg.validate()?;
    let burn_in = cfg.burn_in.unwrap_or_else(|| amp_noise.default_burn_in());
    let samples = cfg.exec.map_range(cfg.num_trajectories, |i| {
        let eps = amp_noise.sample_with_rng(&mut cfg.rng(i), cp.len(), burn_in);
        composite_infidelity(cp, &eps)
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FidelityEstimate::from_samples(&samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub a1: f64,
    pub b1: f64,
    pub eps: f64,
    /// Stationary perturbations that were evaluated.
    pub valid: usize,
    /// Worst relative infidelity increase over the matched-model optimum.
    pub worst: f64,
    pub mean: f64,
}

/// Uniform point on the L1 circle `|x| + |y| = r`.
fn l1_sphere_point<R: Rng>(rng: &mut R, r: f64) -> (f64, f64) {
    let u: f64 = rng.random_range(0.0..4.0);
    let edge = u.floor();
    let t = u - edge;
    let (x, y) = (r * (1.0 - t), r * t);
    match edge as u8 {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        _ => (y, -x),
    }
}

/// Mismatch study. For each base ARMA(1,1) model the `n`-step optimum is
/// computed once; it is then scored under `samples_per_eps` stationary
/// perturbations `(a1+ε_a, b1+ε_b)` with `|ε_a|+|ε_b| = ε` (same `σ_w²`) and
/// compared with each perturbed model's own optimum.
pub fn robustness_sweep(
    base_models: &[ArmaModel],
    deviations: &[f64],
    samples_per_eps: usize,
    theta_q: f64,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RobustnessRow>> {
    if samples_per_eps == 0 {
        return Err(Error::InvalidParameter("samples_per_eps must be >= 1".into()));
    }
    for m in base_models {
        if m.p() > 1 || m.q() > 1 {
            return Err(Error::InvalidParameter("robustness sweep expects ARMA(1,1) base models".into()));
        }
    }
    let cells: Vec<(usize, usize)> = (0..base_models.len())
        .flat_map(|b| (0..deviations.len()).map(move |e| (b, e)))
        .collect();
    let base_opt = exec.map_slice(base_models, |m| solve_qp(&QpProblem::from_model(m, n, theta_q)?));
    let base_opt = base_opt.into_iter().collect::<Result<Vec<_>>>()?;

    exec.map_slice(&cells, |&(b, e)| {
        let base = &base_models[b];
        let a1 = base.ar_coeffs().first().copied().unwrap_or(0.0);
        let b1 = base.ma_coeffs().first().copied().unwrap_or(0.0);
        let eps = deviations[e];
        let mut rng = ChaCha8Rng::seed_from_u64(trajectory_seed(trajectory_seed(seed, b as u64), e as u64));
        let mut increases = Vec::with_capacity(samples_per_eps);
        for _ in 0..samples_per_eps {
            let (da, db) = l1_sphere_point(&mut rng, eps);
            let Ok(perturbed) = ArmaModel::arma11(a1 + da, b1 + db, base.white_noise_variance()) else {
                continue;
            };
            let cov = CovarianceMatrix::from_autocovariance(&perturbed.autocovariance(n - 1), n)?;
            let qp = QpProblem::new(cov, theta_q)?;
            let matched = qp.objective(solve_qp(&qp)?.thetas());
            let mismatched = qp.objective(base_opt[b].thetas());
            increases.push(mismatched / matched - 1.0);
        }
        if increases.is_empty() {
            return Err(Error::AllPerturbationsNonStationary { a1, b1 });
        }
        Ok(RobustnessRow {
            a1,
            b1,
            eps,
            valid: increases.len(),
            worst: increases.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: compensated_sum(increases.iter().copied()) / increases.len() as f64,
        })
    })
    .into_iter()
    .collect()
}
