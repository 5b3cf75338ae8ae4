//! SK1 and BB1 composite pulses: construction, first-order error vectors and
//! infidelities, and comparison against the equal-length single-axis optimum.

use std::f64::consts::PI;

use nalgebra::{Complex, Matrix2};
use serde::{Deserialize, Serialize};

use crate::arma::{model_distance_l2, ArmaModel, AutocovarianceSeq, DcNoiseModel};
use crate::control::ErrorVector;
use crate::montecarlo::{pauli_components, step_unitary};
use crate::optimizer::{solve_qp, QpProblem};
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CompositeKind {
    Sk1,
    Bb1,
}

impl CompositeKind {
    pub fn segments(&self) -> usize {
        match self {
            CompositeKind::Sk1 => 3,
            CompositeKind::Bb1 => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CompositeKind::Sk1 => "SK1",
            CompositeKind::Bb1 => "BB1",
        }
    }

    pub fn make(&self, theta_q: f64) -> Result<CompositePulse> {
        match self {
            CompositeKind::Sk1 => make_sk1(theta_q),
            CompositeKind::Bb1 => make_bb1(theta_q),
        }
    }
}

/// Two-axis segment list: segment `j` rotates by `θ_j` about
/// `cos φ_j σ_x + sin φ_j σ_y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositePulse {
    thetas: Vec<f64>,
    phis: Vec<f64>,
    kind: CompositeKind,
    target_angle: f64,
}

impl CompositePulse {
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    pub fn kind(&self) -> CompositeKind {
        self.kind
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

    /// Noiseless product `U_K ⋯ U_1`.
    pub fn ideal_unitary(&self) -> Matrix2<Complex<f64>> {
        self.thetas
            .iter()
            .zip(&self.phis)
            .fold(Matrix2::identity(), |acc, (&t, &p)| step_unitary(t, 0.0, 0.0, p) * acc)
    }
}

/// Correction phase `φ_c = arccos(-θ_Q / 4π)`.
///
/// With this sign the correction segments contribute `-θ_Q/4` along x, which
/// is what cancels a static amplitude error.
pub fn correction_phase(theta_q: f64) -> Result<f64> {
    let c = -theta_q / (4.0 * PI);
    if !(c.abs() <= 1.0) {
        return Err(Error::PhaseUndefined { theta_q });
    }
    Ok(c.acos())
}

pub fn make_sk1(theta_q: f64) -> Result<CompositePulse> {
    let phi_c = correction_phase(theta_q)?;
    Ok(CompositePulse {
        thetas: vec![theta_q, 2.0 * PI, 2.0 * PI],
        phis: vec![0.0, -phi_c, phi_c],
        kind: CompositeKind::Sk1,
        target_angle: theta_q,
    })
}

pub fn make_bb1(theta_q: f64) -> Result<CompositePulse> {
    let phi_c = correction_phase(theta_q)?;
    Ok(CompositePulse {
        thetas: vec![theta_q, PI, 2.0 * PI, PI],
        phis: vec![0.0, phi_c, 3.0 * phi_c, phi_c],
        kind: CompositeKind::Bb1,
        target_angle: theta_q,
    })
}

fn check_len(cp: &CompositePulse, eps: &[f64]) -> Result<()> {
    if eps.len() != cp.len() {
        return Err(Error::LengthMismatch {
            expected: cp.len(),
            got: eps.len(),
        });
    }
    Ok(())
}

fn closed_form(cp: &CompositePulse, e: &[f64]) -> ErrorVector {
    let t = cp.target_angle;
    let root = (16.0 * PI * PI - t * t).max(0.0).sqrt();
    let (x, yz, scale) = match cp.kind {
        CompositeKind::Sk1 => (t * (2.0 * e[0] - e[1] - e[2]), e[2] - e[1], 0.25),
        CompositeKind::Bb1 => (t * (4.0 * e[0] - e[1] - 2.0 * e[2] - e[3]), e[1] - 2.0 * e[2] + e[3], 0.125),
    };
    ErrorVector {
        ax: scale * x,
        ay: scale * yz * t.cos() * root,
        az: -scale * yz * t.sin() * root,
    }
}

/// First-order error vector from the frame-transformed sum
/// `Σ_j P_{j-1}† Φ_j P_{j-1}` with `Φ_j = ε_j θ_j/2 (cos φ_j σ_x + sin φ_j σ_y)`
/// and `P_j = U_j ⋯ U_1`.
pub fn cp_error_vector_numeric(cp: &CompositePulse, eps_traj: &[f64]) -> Result<ErrorVector> {
    check_len(cp, eps_traj)?;
    let mut frame = Matrix2::<Complex<f64>>::identity();
    let mut acc = [0.0; 3];
    for ((&theta, &phi), &eps) in cp.thetas.iter().zip(&cp.phis).zip(eps_traj) {
        let generator = generator_matrix(eps * theta / 2.0 * phi.cos(), eps * theta / 2.0 * phi.sin());
        let rotated = frame.adjoint() * generator * frame;
        for (a, c) in acc.iter_mut().zip(pauli_components(&rotated)) {
            *a += c;
        }
        frame = step_unitary(theta, 0.0, 0.0, phi) * frame;
    }
    Ok(ErrorVector {
        ax: acc[0],
        ay: acc[1],
        az: acc[2],
    })
}

fn generator_matrix(x: f64, y: f64) -> Matrix2<Complex<f64>> {
    Matrix2::new(
        Complex::new(0.0, 0.0),
        Complex::new(x, -y),
        Complex::new(x, y),
        Complex::new(0.0, 0.0),
    )
}

/// Closed-form first-order error vector. Debug builds also evaluate the
/// frame-transformed sum and assert agreement.
pub fn cp_error_vector(cp: &CompositePulse, eps_traj: &[f64]) -> Result<ErrorVector> {
    check_len(cp, eps_traj)?;
    let a = closed_form(cp, eps_traj);
    #[cfg(debug_assertions)]
    {
        let b = cp_error_vector_numeric(cp, eps_traj)?;
        let scale = 1.0 + eps_traj.iter().map(|e| e.abs()).fold(0.0, f64::max) * 4.0 * PI;
        for (x, y) in a.as_array().iter().zip(b.as_array()) {
            debug_assert!((x - y).abs() <= 1e-10 * scale, "closed form {a:?} vs frame sum {b:?}");
        }
    }
    Ok(a)
}

/// `⟨|a⃗_1|²⟩` for SK1 or BB1, written in lag differences so the DC limit is
/// exactly zero.
pub fn cp_infidelity(cp: &CompositePulse, gammas: &AutocovarianceSeq) -> Result<f64> {
    if gammas.max_lag() < 3 {
        return Err(Error::InsufficientLags {
            needed: 3,
            available: gammas.max_lag(),
        });
    }
    let g = |h| gammas.get(h);
    let t2 = cp.target_angle * cp.target_angle;
    Ok(match cp.kind {
        CompositeKind::Sk1 => 2.0 * PI * PI * (g(0) - g(1)) + t2 / 4.0 * (g(0) - g(2)),
        CompositeKind::Bb1 => {
            PI * PI / 2.0 * (3.0 * (g(0) - g(1)) - (g(1) - g(2)))
                + t2 / 8.0 * (2.0 * (g(0) - g(2)) + (g(1) - g(3)))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub a1: f64,
    pub b1: f64,
    pub infid_opt: f64,
    pub infid_cp: f64,
    /// `infid_opt - infid_cp`; negative where the optimal sequence wins.
    pub diff: f64,
    pub l2_to_dc: f64,
}

/// Optimal-vs-composite comparison over an ARMA(1,1) grid (`a1` outer,
/// `b1` inner). Every model is rescaled to `total_power` first; the optimum
/// uses as many steps as the composite pulse has segments.
pub fn comparison_map(
    kind: CompositeKind,
    a1_values: &[f64],
    b1_values: &[f64],
    theta_q: f64,
    total_power: f64,
    exec: Execution,
) -> Result<Vec<ComparisonRow>> {
    if !(total_power > 0.0 && total_power.is_finite()) {
        return Err(Error::InvalidParameter(format!("total power must be > 0, got {total_power}")));
    }
    let cp = kind.make(theta_q)?;
    let k = kind.segments();
    let dc = DcNoiseModel::new(total_power)?;
    let points: Vec<(f64, f64)> = a1_values
        .iter()
        .flat_map(|&a| b1_values.iter().map(move |&b| (a, b)))
        .collect();
    exec.map_slice(&points, |&(a1, b1)| {
        let model = ArmaModel::arma11(a1, b1, 1.0)?.set_total_power(total_power)?;
        let gammas = model.autocovariance(k.max(4) - 1);
        let qp = QpProblem::from_model(&model, k, theta_q)?;
        let infid_opt = qp.objective(solve_qp(&qp)?.thetas());
        let infid_cp = cp_infidelity(&cp, &gammas)?;
        Ok(ComparisonRow {
            a1,
            b1,
            infid_opt,
            infid_cp,
            diff: infid_opt - infid_cp,
            l2_to_dc: model_distance_l2(&model, &dc, k)?,
        })
    })
    .into_iter()
    .collect()
}
