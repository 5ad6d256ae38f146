//! Deterministic full-batch training to a numerically certified critical
//! point: gradient descent with Armijo backtracking, optionally finished by
//! finite-difference Newton steps on small networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::diff::{self, Objective, NetObjective};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{Dataset, Network};

/// Weights and biases drawn i.i.d. from `uniform[-scale, scale]`.
pub fn init_random(dims: &[usize], activation: ActivationKind, scale: f64, seed: u64) -> Result<Network> {
    let zero = Network::zeros(dims, activation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> =
        (0..zero.num_params()).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    zero.with_params(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_iters: usize,
    pub initial_step: f64,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    /// Backtracking factor.
    pub shrink: f64,
    pub max_backtracks: usize,
    pub tol_g: f64,
    /// Newton polish on networks with at most this many parameters.
    pub polish_max_params: usize,
    /// Gradient level below which Newton steps are attempted.
    pub polish_below: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iters: 200_000,
            initial_step: 0.1,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            tol_g: 1e-8,
            polish_max_params: 20,
            polish_below: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStatus {
    Converged,
    MaxIters,
    /// No step along the current direction decreased the loss.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub status: TrainStatus,
    pub final_loss: f64,
    /// Max-abs gradient entry at the returned point.
    pub final_grad_norm: f64,
    pub iters: usize,
    pub newton_steps: usize,
    /// One entry per accepted step (plus the starting point).
    pub trace: Vec<TracePoint>,
}

pub fn is_critical(net: &Network, data: &Dataset, tol: f64) -> Result<bool> {
    Ok(diff::gradient(net, data)?.max_abs() <= tol)
}

pub fn train_to_critical(net: &Network, data: &Dataset, opts: &TrainOptions) -> Result<(Network, TrainReport)> {
    let obj = NetObjective::new(net, data)?;
    let (w, report) = minimize(&obj, net.to_params().values, opts)?;
    Ok((net.with_params(&w)?, report))
}

/// Generic driver shared with the escape stage.
pub fn minimize<O: Objective>(obj: &O, mut w: Vec<f64>, opts: &TrainOptions) -> Result<(Vec<f64>, TrainReport)> {
    let mut loss = obj.value(&w);
    if !loss.is_finite() {
        return Err(Error::Diverged(0));
    }
    let mut g = obj.gradient(&w);
    let mut gnorm = linalg::max_abs_slice(&g);
    let mut trace = vec![TracePoint { iter: 0, loss, grad_norm: gnorm }];
    let mut step = opts.initial_step;
    let mut newton_steps = 0;
    let mut iter = 0;
    let mut status = TrainStatus::MaxIters;
    while iter < opts.max_iters {
        if gnorm <= opts.tol_g {
            status = TrainStatus::Converged;
            break;
        }
        iter += 1;
        let polish = w.len() <= opts.polish_max_params && gnorm < opts.polish_below;
        let accepted = if polish {
            match newton_step(obj, &w, &g, loss)? {
                Some((wn, ln)) => {
                    newton_steps += 1;
                    Some((wn, ln))
                }
                None => armijo_step(obj, &w, &g, loss, &mut step, opts),
            }
        } else {
            armijo_step(obj, &w, &g, loss, &mut step, opts)
        };
        let Some((wn, ln)) = accepted else {
            status = TrainStatus::Stalled;
            break;
        };
        if !ln.is_finite() {
            return Err(Error::Diverged(iter));
        }
        w = wn;
        loss = ln;
        g = obj.gradient(&w);
        gnorm = linalg::max_abs_slice(&g);
        trace.push(TracePoint { iter, loss, grad_norm: gnorm });
    }
    if gnorm <= opts.tol_g {
        status = TrainStatus::Converged;
    }
    let report = TrainReport {
        status,
        final_loss: loss,
        final_grad_norm: gnorm,
        iters: iter,
        newton_steps,
        trace,
    };
    Ok((w, report))
}

fn armijo_step<O: Objective>(
    obj: &O,
    w: &[f64],
    g: &[f64],
    loss: f64,
    step: &mut f64,
    opts: &TrainOptions,
) -> Option<(Vec<f64>, f64)> {
    let g2: f64 = g.iter().map(|x| x * x).sum();
    let mut s = (*step * 2.0).min(1e3);
    for _ in 0..opts.max_backtracks {
        let wn: Vec<f64> = w.iter().zip(g).map(|(a, b)| a - s * b).collect();
        let ln = obj.value(&wn);
        if ln.is_finite() && ln <= loss - opts.armijo_c * s * g2 {
            *step = s;
            return Some((wn, ln));
        }
        s *= opts.shrink;
    }
    None
}

/// Damped Newton step `(H + μI)⁻¹g` on the FD Hessian. The damping grows
/// until the shifted Hessian is positive definite and the step decreases the
/// loss (or keeps it and lowers the gradient).
fn newton_step<O: Objective>(obj: &O, w: &[f64], g: &[f64], loss: f64) -> Result<Option<(Vec<f64>, f64)>> {
    let h = diff::hessian_fd_of(obj, w, diff::HESSIAN_FD_STEP)?.matrix;
    let gv = nalgebra::DVector::from_column_slice(g);
    let gnorm = linalg::max_abs_slice(g);
    let scale = linalg::norm_inf(&h).max(1e-12);
    let mut mu = 0.0;
    while mu <= scale {
        let shifted = &h + nalgebra::DMatrix::identity(w.len(), w.len()) * mu;
        if let Some(chol) = shifted.cholesky() {
            let d = chol.solve(&gv);
            let wn: Vec<f64> = w.iter().zip(d.iter()).map(|(a, b)| a - b).collect();
            let ln = obj.value(&wn);
            if ln < loss || (ln <= loss && linalg::max_abs_slice(&obj.gradient(&wn)) < gnorm) {
                return Ok(Some((wn, ln)));
            }
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, generate_teacher_dataset, InputSampler};

    #[test]
    fn init_is_seeded() {
        let a = init_random(&[2, 3, 1], ActivationKind::Sigmoid, 0.5, 1).unwrap();
        let b = init_random(&[2, 3, 1], ActivationKind::Sigmoid, 0.5, 1).unwrap();
        assert_eq!(a, b);
        let z = init_random(&[2, 3, 1], ActivationKind::Sigmoid, 0.0, 1).unwrap();
        assert!(z.to_params().values.iter().all(|&x| x == 0.0));
        assert!(a.to_params().values.iter().all(|x| x.abs() <= 0.5));
    }

    #[test]
    fn exact_fit_returns_immediately() {
        let net = init_random(&[2, 3, 1], ActivationKind::Sigmoid, 1.0, 2).unwrap();
        let data = generate_teacher_dataset(&net, 5, InputSampler::default(), 2).unwrap();
        assert!(is_critical(&net, &data, 1e-12).unwrap());
        let (out, report) = train_to_critical(&net, &data, &TrainOptions::default()).unwrap();
        assert_eq!(report.iters, 0);
        assert_eq!(report.status, TrainStatus::Converged);
        assert_eq!(out, net);
    }

    #[test]
    fn small_student_converges_monotonically() {
        let teacher = init_random(&[2, 5, 5, 1], ActivationKind::Sigmoid, 1.0, 3).unwrap();
        let data = generate_teacher_dataset(&teacher, 20, InputSampler::default(), 3).unwrap();
        let student = init_random(&[2, 1, 1, 1], ActivationKind::Sigmoid, 0.5, 4).unwrap();
        assert!(forward(&student, &data).unwrap().loss.is_finite());
        assert!(!is_critical(&student, &data, 1e-8).unwrap());
        let (out, report) = train_to_critical(&student, &data, &TrainOptions::default()).unwrap();
        assert_eq!(report.status, TrainStatus::Converged, "{:?}", report.final_grad_norm);
        assert!(report.final_grad_norm <= 1e-8);
        assert!(is_critical(&out, &data, 1e-8).unwrap());
        for pair in report.trace.windows(2) {
            assert!(pair[1].loss <= pair[0].loss);
        }
    }
}
