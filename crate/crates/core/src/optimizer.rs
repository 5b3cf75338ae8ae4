//! Optimal sequences: exact KKT solve for pure control noise and projected
//! gradient descent for control noise plus dephasing.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::arma::{covariance_matrix, ArmaModel, CovarianceMatrix};
use crate::control::{constraint_tolerance, FullObjective, InfidelityBreakdown, NoiseModel, PulseSequence};
use crate::{Error, Execution, Result};

/// Minimise `½ xᵀAx` subject to `1ᵀx = θ_Q`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    covariance: CovarianceMatrix,
    target_angle: f64,
}

impl QpProblem {
    pub fn new(covariance: CovarianceMatrix, target_angle: f64) -> Result<Self> {
        if !target_angle.is_finite() {
            return Err(Error::InvalidParameter("target angle must be finite".into()));
        }
        let scale = covariance.matrix().diagonal().amax();
        let min_ev = covariance.eigenvalues()[0];
        if min_ev < -1e-10 * scale {
            return Err(Error::InvalidParameter(format!(
                "covariance is not positive semi-definite (min eigenvalue {min_ev})"
            )));
        }
        Ok(Self {
            covariance,
            target_angle,
        })
    }

    pub fn from_model(model: &ArmaModel, n: usize, target_angle: f64) -> Result<Self> {
        let gammas = model.autocovariance(n.saturating_sub(1));
        Self::new(covariance_matrix(&gammas, n)?, target_angle)
    }

    pub fn covariance(&self) -> &CovarianceMatrix {
        &self.covariance
    }

    pub fn target_angle(&self) -> f64 {
        self.target_angle
    }

    /// First-order infidelity `xᵀAx / 4` of a candidate.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.covariance.quadratic_form(x) / 4.0
    }

    /// Max-norm violation of `Ax + λ1 = 0`, `1ᵀx = θ_Q` with the
    /// least-squares multiplier `λ = -mean(Ax)`.
    pub fn kkt_residual(&self, x: &[f64]) -> f64 {
        let ax = self.covariance.matrix() * DVector::from_column_slice(x);
        let lambda = -ax.mean();
        let stationarity = ax.iter().map(|v| (v + lambda).abs()).fold(0.0, f64::max);
        let feasibility = (x.iter().sum::<f64>() - self.target_angle).abs();
        stationarity.max(feasibility)
    }
}

fn solve_kkt(a: &DMatrix<f64>, target: f64) -> Option<Vec<f64>> {
    let n = a.nrows();
    let mut kkt = DMatrix::<f64>::zeros(n + 1, n + 1);
    kkt.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        kkt[(i, n)] = 1.0;
        kkt[(n, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = target;

    let lu = kkt.full_piv_lu();
    let pivots = lu.u().diagonal().map(f64::abs);
    if !(pivots.min() > 1e-13 * pivots.max()) {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    sol.iter().all(|v| v.is_finite()).then(|| sol.as_slice()[..n].to_vec())
}

/// Global minimiser `x* = θ_Q A⁻¹1 / (1ᵀA⁻¹1)` via the `(N+1)×(N+1)` KKT system.
///
/// The covariance is normalised by its mean diagonal first (the argmin is
/// scale invariant). A numerically singular system is retried once with a
/// ridge of `1e-12·trace(A)/N`.
pub fn solve_qp(problem: &QpProblem) -> Result<PulseSequence> {
    let a = problem.covariance.matrix();
    let n = a.nrows();
    let mean_diag = a.trace() / n as f64;
    if !(mean_diag > 0.0) {
        return Err(Error::SingularAfterRidge);
    }
    let normalised = a / mean_diag;
    let x = solve_kkt(&normalised, problem.target_angle)
        .or_else(|| {
            let ridge = 1e-12 * normalised.trace() / n as f64;
            solve_kkt(&(&normalised + DMatrix::identity(n, n) * ridge), problem.target_angle)
        })
        .ok_or(Error::SingularAfterRidge)?;
    PulseSequence::new(x, problem.target_angle)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub max_iters: usize,
    /// Stop once the projected-gradient 2-norm falls below this.
    pub tol: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub sequence: PulseSequence,
    pub breakdown: InfidelityBreakdown,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C: f64 = 1e-4;

fn project_zero_sum(g: &mut [f64]) {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter_mut().for_each(|v| *v -= mean);
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected gradient descent on the full first-order infidelity over
/// `Σθ = θ_Q`, with Barzilai–Borwein trial steps and Armijo backtracking.
/// The objective never increases.
pub fn optimize_full(
    noise: &NoiseModel,
    theta_q: f64,
    n: usize,
    init: &PulseSequence,
    opts: DescentOptions,
) -> Result<Optimized> {
    if init.len() != n {
        return Err(Error::BadInit(format!("init has {} steps, expected {n}", init.len())));
    }
    if (init.target_angle() - theta_q).abs() > constraint_tolerance(theta_q) {
        return Err(Error::BadInit(format!(
            "init targets {}, expected {theta_q}",
            init.target_angle()
        )));
    }
    let objective = FullObjective::new(noise, n);
    let mut x = init.thetas().to_vec();
    let mut f = objective.total(&x);
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut p = objective.gradient(&x);
    project_zero_sum(&mut p);
    let mut step = norm(&x).max(1.0) / norm(&p).max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        let pn2 = p.iter().map(|v| v * v).sum::<f64>();
        if pn2.sqrt() < opts.tol {
            converged = true;
            break;
        }
        let mut t = step;
        let accepted = loop {
            let mut trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi - t * pi).collect();
            let drift = (theta_q - trial.iter().sum::<f64>()) / n as f64;
            trial.iter_mut().for_each(|v| *v += drift);
            let ft = objective.total(&trial);
            if !ft.is_finite() {
                return Err(Error::NonFiniteObjective);
            }
            if ft <= f - ARMIJO_C * t * pn2 {
                break Some((trial, ft));
            }
            t *= 0.5;
            if t * pn2.sqrt() < 1e-18 * norm(&x).max(1.0) {
                break None;
            }
        };
        let Some((x_new, f_new)) = accepted else {
            // No representable decrease left along the projected gradient.
            converged = true;
            break;
        };
        let mut p_new = objective.gradient(&x_new);
        project_zero_sum(&mut p_new);

        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = x_new[i] - x[i];
            ss += s * s;
            sy += s * (p_new[i] - p[i]);
        }
        step = if sy > 0.0 { ss / sy } else { 2.0 * t };
        x = x_new;
        f = f_new;
        p = p_new;
        iterations += 1;
    }

    let sequence = PulseSequence::new(x, theta_q)?;
    let breakdown = objective.breakdown(sequence.thetas());
    Ok(Optimized {
        sequence,
        breakdown,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepDirection {
    Forward,
    Reverse,
}

impl SweepDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepDirection::Forward => "forward",
            SweepDirection::Reverse => "reverse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub sequence: PulseSequence,
    pub breakdown: InfidelityBreakdown,
    pub direction: SweepDirection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub direction: SweepDirection,
    pub per_length: BTreeMap<usize, SweepEntry>,
}

/// Forward and reverse passes plus the per-length winner.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthSweep {
    pub forward: SweepResult,
    pub reverse: SweepResult,
    pub best: BTreeMap<usize, SweepEntry>,
}

/// Reverse-sweep initial condition: drop the step with the smallest |θ| and
/// spread its angle evenly over the remaining `K-1` steps.
pub fn reverse_init(seq: &PulseSequence) -> Result<PulseSequence> {
    let k = seq.len();
    if k < 2 {
        return Err(Error::BadInit("cannot shorten a one-step sequence".into()));
    }
    let (idx, &theta_min) = seq
        .thetas()
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty");
    let share = theta_min / (k - 1) as f64;
    let thetas = seq
        .thetas()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != idx)
        .map(|(_, t)| t + share)
        .collect();
    PulseSequence::new(thetas, seq.target_angle())
}

/// Optimise every length in `n_min..=n_max` from constant-drive starts
/// (forward) and from shortened longer solutions (reverse), keeping the better
/// of the two per length. Forward lengths run on `exec`; the reverse pass is a
/// chain and runs serially.
pub fn sweep_lengths(
    noise: &NoiseModel,
    theta_q: f64,
    n_min: usize,
    n_max: usize,
    opts: DescentOptions,
    exec: Execution,
) -> Result<LengthSweep> {
    if n_min == 0 || n_max < n_min {
        return Err(Error::InvalidParameter(format!("invalid length range {n_min}..={n_max}")));
    }
    let lengths: Vec<usize> = (n_min..=n_max).collect();
    let forward_runs = exec.map_slice(&lengths, |&n| {
        let init = PulseSequence::uniform(theta_q, n)?;
        optimize_full(noise, theta_q, n, &init, opts)
    });
    let mut forward = BTreeMap::new();
    for (&n, run) in lengths.iter().zip(forward_runs) {
        let run = run?;
        forward.insert(
            n,
            SweepEntry {
                sequence: run.sequence,
                breakdown: run.breakdown,
                direction: SweepDirection::Forward,
            },
        );
    }

    let mut reverse = BTreeMap::new();
    let mut longer = forward[&n_max].clone();
    longer.direction = SweepDirection::Reverse;
    reverse.insert(n_max, longer.clone());
    for n in (n_min..n_max).rev() {
        let init = reverse_init(&longer.sequence)?;
        let run = optimize_full(noise, theta_q, n, &init, opts)?;
        longer = SweepEntry {
            sequence: run.sequence,
            breakdown: run.breakdown,
            direction: SweepDirection::Reverse,
        };
        reverse.insert(n, longer.clone());
    }

    let best = lengths
        .iter()
        .map(|n| {
            let f = &forward[n];
            let r = &reverse[n];
            let pick = if r.breakdown.total < f.breakdown.total - 1e-14 { r } else { f };
            (*n, pick.clone())
        })
        .collect();

    Ok(LengthSweep {
        forward: SweepResult {
            direction: SweepDirection::Forward,
            per_length: forward,
        },
        reverse: SweepResult {
            direction: SweepDirection::Reverse,
            per_length: reverse,
        },
        best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Term {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossoverRow {
    pub n: usize,
    pub share_a: f64,
    pub share_b: f64,
    pub share_c: f64,
    pub total: f64,
}

impl CrossoverRow {
    /// Largest of the three shares; `None` for a noiseless row.
    pub fn dominant(&self) -> Option<Term> {
        if self.share_a + self.share_b + self.share_c == 0.0 {
            return None;
        }
        let terms = [(Term::A, self.share_a), (Term::B, self.share_b), (Term::C, self.share_c)];
        terms.into_iter().max_by(|x, y| x.1.total_cmp(&y.1)).map(|t| t.0)
    }
}

/// Term shares of the optimised sequence at every length.
pub fn crossover_scan(
    control_noise: &ArmaModel,
    dephasing_mean: f64,
    dephasing_residual: Option<&ArmaModel>,
    theta_q: f64,
    lengths: RangeInclusive<usize>,
    opts: DescentOptions,
    exec: Execution,
) -> Result<Vec<CrossoverRow>> {
    let noise = NoiseModel::new(control_noise.clone(), dephasing_mean, dephasing_residual.cloned())?;
    let sweep = sweep_lengths(&noise, theta_q, *lengths.start(), *lengths.end(), opts, exec)?;
    Ok(sweep
        .best
        .iter()
        .map(|(&n, e)| {
            let [share_a, share_b, share_c] = e.breakdown.shares();
            CrossoverRow {
                n,
                share_a,
                share_b,
                share_c,
                total: e.breakdown.total,
            }
        })
        .collect())
}

/// First length at which the dominant term switches between C and A.
pub fn dominant_flip(rows: &[CrossoverRow]) -> Option<usize> {
    rows.windows(2).find_map(|w| match (w[0].dominant(), w[1].dominant()) {
        (Some(Term::C), Some(Term::A)) | (Some(Term::A), Some(Term::C)) => Some(w[1].n),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn white_noise_is_uniform() {
        let qp = QpProblem::from_model(&ArmaModel::white(1e-3).unwrap(), 4, PI).unwrap();
        let x = solve_qp(&qp).unwrap();
        assert!(x.thetas().iter().all(|t| close(*t, PI / 4.0, 1e-14)));
    }

    #[test]
    fn two_step_toeplitz_is_symmetric() {
        for a1 in [-0.8, 0.0, 0.3, 0.95] {
            let qp = QpProblem::from_model(&ArmaModel::ar1(a1, 2.0).unwrap(), 2, 1.7).unwrap();
            let x = solve_qp(&qp).unwrap();
            assert!(close(x.thetas()[0], 0.85, 1e-13) && close(x.thetas()[1], 0.85, 1e-13));
        }
    }

    #[test]
    fn ar1_three_step_oracles() {
        let qp = QpProblem::from_model(&ArmaModel::ar1(0.5, 1.0).unwrap(), 3, PI).unwrap();
        let x = solve_qp(&qp).unwrap();
        let expected = [PI / 2.5, PI / 5.0, PI / 2.5];
        for (got, want) in x.thetas().iter().zip(expected) {
            assert!(close(*got, want, 1e-12));
        }

        // Closed-form AR(1) precision matrix: tridiagonal with
        // (1, 1+a², …, 1+a², 1) on the diagonal and -a off it (scaled by 1/σ²).
        let a = 0.5;
        let prec = DMatrix::from_row_slice(3, 3, &[1.0, -a, 0.0, -a, 1.0 + a * a, -a, 0.0, -a, 1.0]);
        let w = prec * DVector::from_element(3, 1.0);
        let closed = w.clone() * (PI / w.sum());
        for (got, want) in x.thetas().iter().zip(closed.iter()) {
            assert!(close(*got, *want, 1e-12));
        }

        // Dense grid over the constraint plane x3 = π - x1 - x2.
        let mut best = (f64::MAX, 0.0, 0.0);
        let steps = 600;
        for i in 0..=steps {
            for j in 0..=steps {
                let x1 = 0.5 + 1.5 * i as f64 / steps as f64;
                let x2 = 1.5 * j as f64 / steps as f64;
                let f = qp.objective(&[x1, x2, PI - x1 - x2]);
                if f < best.0 {
                    best = (f, x1, x2);
                }
            }
        }
        assert!(close(best.1, PI / 2.5, 3e-3) && close(best.2, PI / 5.0, 3e-3));
        assert!(qp.objective(x.thetas()) <= best.0);
    }

    #[test]
    fn dc_covariance_needs_ridge() {
        let a = CovarianceMatrix::from_autocovariance(&crate::arma::AutocovarianceSeq::new(vec![1e-3; 6]).unwrap(), 6).unwrap();
        let qp = QpProblem::new(a, PI).unwrap();
        let x = solve_qp(&qp).unwrap();
        assert!(close(x.thetas().iter().sum::<f64>(), PI, 1e-12));
        assert!(close(qp.objective(x.thetas()), 1e-3 * PI * PI / 4.0, 1e-12));

        let zero = CovarianceMatrix::from_autocovariance(&crate::arma::AutocovarianceSeq::zeros(2), 3).unwrap();
        assert_eq!(solve_qp(&QpProblem::new(zero, PI).unwrap()), Err(Error::SingularAfterRidge));
    }

    #[test]
    fn optimality_certificate_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let n = rng.random_range(2..=16);
            let model = ArmaModel::arma11(rng.random_range(-0.9..0.95), rng.random_range(-0.9..0.9), 1e-3).unwrap();
            let qp = QpProblem::from_model(&model, n, PI).unwrap();
            let x = solve_qp(&qp).unwrap();
            let best = qp.objective(x.thetas());
            let norm_a = qp.covariance().matrix().norm();
            assert!(qp.kkt_residual(x.thetas()) < 1e-9 * norm_a * PI);
            for _ in 0..1000 {
                let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
                let s: f64 = w.iter().sum();
                let cand: Vec<f64> = w.iter().map(|v| PI * v / s).collect();
                assert!(qp.objective(&cand) >= best - 1e-12);
            }
            let scaled = QpProblem::from_model(&model.with_white_noise_variance(37.0).unwrap(), n, PI).unwrap();
            let y = solve_qp(&scaled).unwrap();
            for (a, b) in x.thetas().iter().zip(y.thetas()) {
                assert!(close(*a, *b, 1e-10));
            }
        }
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let bad = crate::arma::AutocovarianceSeq::new(vec![1.0, 0.0, 2.0]).unwrap();
        let a = CovarianceMatrix::from_autocovariance(&bad, 3).unwrap();
        assert!(QpProblem::new(a, PI).is_err());
    }

    #[test]
    fn descent_reduces_to_qp_without_dephasing() {
        for a1 in [0.25, 0.75, 0.95] {
            let model = ArmaModel::ar1(a1, 1e-3).unwrap();
            let n = 12;
            let exact = solve_qp(&QpProblem::from_model(&model, n, PI).unwrap()).unwrap();
            let init = PulseSequence::uniform(PI, n).unwrap();
            let run = optimize_full(&NoiseModel::control_only(model), PI, n, &init, DescentOptions::default()).unwrap();
            assert!(run.converged);
            for (a, b) in run.sequence.thetas().iter().zip(exact.thetas()) {
                assert!(close(*a, *b, 1e-6), "a1={a1}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn descent_is_monotone_from_random_starts() {
        let noise = NoiseModel::new(
            ArmaModel::ar1(0.25, 1e-3).unwrap(),
            1e-5f64.sqrt(),
            Some(ArmaModel::ar1(0.75, 1e-5).unwrap()),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let opts = DescentOptions { max_iters: 2000, tol: 1e-10 };
        for _ in 0..100 {
            let n = rng.random_range(1..=12);
            let mut thetas: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
            let shift = (PI - thetas.iter().sum::<f64>()) / n as f64;
            thetas.iter_mut().for_each(|t| *t += shift);
            let init = PulseSequence::new(thetas, PI).unwrap();
            let f0 = FullObjective::new(&noise, n).total(init.thetas());
            let run = optimize_full(&noise, PI, n, &init, opts).unwrap();
            assert!(run.breakdown.total <= f0);
            assert!(close(run.sequence.thetas().iter().sum::<f64>(), PI, 1e-9));
        }
    }

    #[test]
    fn bad_init_rejected() {
        let noise = NoiseModel::control_only(ArmaModel::white(1e-3).unwrap());
        let init = PulseSequence::uniform(PI, 3).unwrap();
        assert!(matches!(optimize_full(&noise, PI, 4, &init, DescentOptions::default()), Err(Error::BadInit(_))));
        assert!(matches!(optimize_full(&noise, 2.0, 3, &init, DescentOptions::default()), Err(Error::BadInit(_))));
    }

    #[test]
    fn reverse_init_preserves_constraint() {
        let seq = PulseSequence::new(vec![1.0, -0.1, 0.7, 1.5415926535897932], PI).unwrap();
        let r = reverse_init(&seq).unwrap();
        assert_eq!(r.len(), 3);
        assert!(close(r.thetas()[0], 1.0 - 0.1 / 3.0, 1e-15));
        assert!(close(r.thetas().iter().sum::<f64>(), PI, 1e-9));
        assert!(reverse_init(&PulseSequence::uniform(PI, 1).unwrap()).is_err());
    }

    #[test]
    fn white_sweep_follows_closed_form() {
        let s2 = 1e-3;
        let noise = NoiseModel::control_only(ArmaModel::white(s2).unwrap());
        let sweep = sweep_lengths(&noise, PI, 1, 12, DescentOptions::default(), Execution::Parallel).unwrap();
        let mut prev = f64::MAX;
        for (n, e) in &sweep.best {
            let expected = s2 * PI * PI / (4.0 * *n as f64);
            assert!(close(e.breakdown.total, expected, 1e-12 * expected));
            assert!(e.breakdown.total <= prev);
            prev = e.breakdown.total;
            assert!(e.breakdown.total <= sweep.forward.per_length[n].breakdown.total);
        }
    }

    #[test]
    fn sweep_is_execution_independent() {
        let noise = NoiseModel::new(ArmaModel::ar1(0.25, 1e-3).unwrap(), 1e-5f64.sqrt(), None).unwrap();
        let opts = DescentOptions { max_iters: 5000, tol: 1e-10 };
        let a = sweep_lengths(&noise, PI, 2, 9, opts, Execution::Sequential).unwrap();
        let b = sweep_lengths(&noise, PI, 2, 9, opts, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        for e in a.reverse.per_length.values().chain(a.best.values()) {
            assert!(close(e.sequence.thetas().iter().sum::<f64>(), PI, 1e-9));
        }
    }

    #[test]
    fn crossover_without_dephasing_has_zero_dephasing_share() {
        let rows = crossover_scan(
            &ArmaModel::ar1(0.5, 1e-3).unwrap(),
            0.0,
            None,
            PI,
            1..=6,
            DescentOptions::default(),
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert_eq!((r.share_a, r.share_b), (0.0, 0.0));
            assert!(close(r.share_a + r.share_b + r.share_c, 1.0, 1e-15));
            assert_eq!(r.dominant(), Some(Term::C));
        }
        assert_eq!(dominant_flip(&rows), None);
    }
}
