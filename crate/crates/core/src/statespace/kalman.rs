use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::observation::{Link, NoisyObservationSet, ObservationModel};
use super::particle::InitialState;
use super::StateSpaceError;
use crate::sde::OuParams;

/// `x' = F x + c + N(0, Q)` over one observation gap.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBlock {
    pub f: DMatrix<f64>,
    pub c: DVector<f64>,
    pub q: DMatrix<f64>,
}

/// Linear-Gaussian state-space model `y_i = H x_i + N(0, R)` with one
/// transition block per gap between consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianSSM {
    pub transitions: Vec<TransitionBlock>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct KalmanOutput {
    pub loglik: f64,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
}

pub fn kalman_loglik(ssm: &LinearGaussianSSM, obs: &NoisyObservationSet) -> Result<KalmanOutput, StateSpaceError> {
    let n = obs.len();
    let d = ssm.m0.len();
    let p = ssm.h.nrows();
    if ssm.transitions.len() + 1 != n {
        return Err(StateSpaceError::InvalidArgument(format!(
            "{} transition blocks for {} observations",
            ssm.transitions.len(),
            n
        )));
    }
    if ssm.h.ncols() != d || p != obs.dim() || ssm.r.shape() != (p, p) || ssm.p0.shape() != (d, d) {
        return Err(StateSpaceError::InvalidArgument("matrix dimensions are inconsistent".into()));
    }
    let mut m = ssm.m0.clone();
    let mut cov = ssm.p0.clone();
    let mut loglik = 0.0;
    let mut means = Vec::with_capacity(n);
    let mut covs = Vec::with_capacity(n);
    let eye = DMatrix::<f64>::identity(d, d);
    for i in 0..n {
        if i > 0 {
            let b = &ssm.transitions[i - 1];
            m = &b.f * &m + &b.c;
            cov = &b.f * &cov * b.f.transpose() + &b.q;
        }
        let y = DVector::from_column_slice(obs.y(i));
        let v = y - &ssm.h * &m;
        let s = &ssm.h * &cov * ssm.h.transpose() + &ssm.r;
        let s = (&s + s.transpose()) * 0.5;
        let chol = s.clone().cholesky().ok_or(StateSpaceError::NumericalSingularity { step: i })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(StateSpaceError::NumericalSingularity { step: i });
        }
        let s_inv_v = chol.solve(&v);
        loglik += -0.5 * (p as f64 * (2.0 * PI).ln() + log_det + v.dot(&s_inv_v));
        // K = P Hᵀ S⁻¹
        let k = chol.solve(&(&ssm.h * &cov)).transpose();
        m += &k * v;
        let a = &eye - &k * &ssm.h;
        cov = &a * &cov * a.transpose() + &k * &ssm.r * k.transpose();
        means.push(m.clone());
        covs.push(cov.clone());
    }
    Ok(KalmanOutput { loglik, filtered_means: means, filtered_covs: covs })
}

/// Exact discretisation of a scalar OU process observed with Gaussian noise.
pub fn ou_to_ssm(
    p: &OuParams,
    om: &ObservationModel,
    times: &[f64],
    initial: &InitialState,
) -> Result<LinearGaussianSSM, StateSpaceError> {
    p.validate()?;
    om.validate()?;
    if !om.is_gaussian() || !matches!(om.link, Link::Identity) {
        return Err(StateSpaceError::InvalidArgument("linear-Gaussian form needs Gaussian identity observations".into()));
    }
    if initial.dim() != 1 {
        return Err(StateSpaceError::InvalidArgument("OU state is scalar".into()));
    }
    let transitions = times
        .windows(2)
        .map(|w| {
            let dt = w[1] - w[0];
            let a = (-p.gamma * dt).exp();
            let (_, var) = p.transition_moments(dt, 0.0);
            TransitionBlock {
                f: DMatrix::from_element(1, 1, a),
                c: DVector::from_element(1, p.beta_bar * (1.0 - a)),
                q: DMatrix::from_element(1, 1, var),
            }
        })
        .collect();
    let p0 = match initial {
        InitialState::Point(_) => 0.0,
        InitialState::Gaussian { sd, .. } => sd[0] * sd[0],
    };
    Ok(LinearGaussianSSM {
        transitions,
        h: DMatrix::identity(1, 1),
        r: DMatrix::from_element(1, 1, om.scale * om.scale),
        m0: DVector::from_element(1, initial.mean()[0]),
        p0: DMatrix::from_element(1, 1, p0),
    })
}
