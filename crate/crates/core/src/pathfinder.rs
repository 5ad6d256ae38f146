//! Non-increasing paths to a global minimum for networks with an extremely
//! wide hidden layer (`n_{l*} ≥ N`) followed by non-increasing widths.
//!
//! The output path `f(t) = z + t·(y − z)` is pulled back layer by layer:
//! each layer above the wide one absorbs the requested pre-activation change
//! by rescaling its weights and shifting its bias (Lemma 9 closed forms), and
//! the layer right after the wide one solves for its weights directly through
//! an invertible `N×N` block of the wide activations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{act_inverse, ActivationKind, EPS_ACT};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{forward, Dataset, Network};

/// Singular values below `RANK_TOL · σ_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;
pub const MAX_CONDITION: f64 = 1e12;
const PERTURB_RETRIES: usize = 16;
/// Upper activation bound is kept below `d / BOUND_MARGIN`.
const BOUND_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WideLayerInfo {
    /// Hidden layer index `l*` (1-based).
    pub layer: usize,
    pub n_samples: usize,
    /// Rank of the `n_{l*} × N` activation matrix.
    pub rank: usize,
    /// Full-rank flag for each `w^l`, `l > l* + 1`, in layer order.
    pub downstream_full_rank: Vec<bool>,
}

impl WideLayerInfo {
    pub fn is_ready(&self) -> bool {
        self.rank == self.n_samples && self.downstream_full_rank.iter().all(|&f| f)
    }
}

fn wide_layer_index(dims: &[usize], n: usize) -> Option<usize> {
    let depth = dims.len() - 1;
    (1..depth).find(|&l| dims[l] >= n && dims[l + 1..].windows(2).all(|p| p[1] <= p[0]))
}

pub fn wide_layer_info(net: &Network, data: &Dataset) -> Result<WideLayerInfo> {
    let n = data.len();
    let layer = wide_layer_index(net.dims(), n).ok_or_else(|| {
        Error::Eligibility(format!(
            "no hidden layer with at least {n} neurons followed by non-increasing widths in {:?}",
            net.dims()
        ))
    })?;
    let cache = forward(net, data)?;
    let rank = linalg::numerical_rank(&cache.act[layer], RANK_TOL);
    let downstream_full_rank = (layer + 2..=net.depth())
        .map(|l| {
            let w = net.weight(l);
            linalg::numerical_rank(w, RANK_TOL) == w.nrows().min(w.ncols())
        })
        .collect();
    Ok(WideLayerInfo { layer, n_samples: n, rank, downstream_full_rank })
}

/// Adds uniform noise of magnitude below `ε/√M` per parameter (so the total
/// change has norm below `ε`) until the wide activations have rank `N` and
/// every downstream weight matrix has full rank.
pub fn perturb_full_rank(net: &Network, data: &Dataset, eps: f64, seed: u64) -> Result<Network> {
    let info = wide_layer_info(net, data)?;
    if info.is_ready() {
        return Ok(net.clone());
    }
    let w = net.to_params().values;
    let amp = eps / (w.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = info;
    for _ in 0..PERTURB_RETRIES {
        let noisy: Vec<f64> = w.iter().map(|x| x + amp * rng.random_range(-1.0..1.0)).collect();
        let cand = net.with_params(&noisy)?;
        last = wide_layer_info(&cand, data)?;
        if last.is_ready() {
            return Ok(cand);
        }
    }
    Err(Error::Rank(format!(
        "after {PERTURB_RETRIES} perturbations of size {eps:e}: activation rank {} of {}, downstream full rank {:?}",
        last.rank, last.n_samples, last.downstream_full_rank
    )))
}

/// Weight path of the layer after the wide one:
/// `w(t) = w + scatter(ñ(t) · Ā⁻¹)` with `ñ(t) = target(t) − (w·a + w0)`.
pub fn realize_layer_path(
    a_wide: &DMatrix<f64>,
    w: &DMatrix<f64>,
    w0: &DVector<f64>,
    targets: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    let n = a_wide.ncols();
    if w.ncols() != a_wide.nrows() || w0.len() != w.nrows() {
        return Err(Error::Shape("weights do not match the wide activations".into()));
    }
    let rows = linalg::pivoted_columns(&a_wide.transpose(), n)?;
    let a_bar = a_wide.select_rows(&rows);
    let cond = linalg::condition_number(&a_bar);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(cond));
    }
    let inv = a_bar.try_inverse().ok_or(Error::Singular(f64::INFINITY))?;
    let current = w * a_wide + DMatrix::from_fn(w.nrows(), n, |i, _| w0[i]);
    targets
        .iter()
        .map(|target| {
            if target.shape() != current.shape() {
                return Err(Error::Shape("target path has the wrong shape".into()));
            }
            let omega = (target - &current) * &inv;
            let mut out = w.clone();
            for (k, &row) in rows.iter().enumerate() {
                let mut col = out.column_mut(row);
                col += omega.column(k);
            }
            let residual = (&out * a_wide + DMatrix::from_fn(w.nrows(), n, |i, _| w0[i]) - target).amax();
            if residual > 1e-8 * target.amax().max(1.0) {
                return Err(Error::Singular(cond));
            }
            Ok(out)
        })
        .collect()
}

/// One Lemma-9 step: paths for `w^{l+1}`, `w0^{l+1}` and `a^l`.
#[derive(Debug, Clone)]
pub struct InductiveStep {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub activations: Vec<DMatrix<f64>>,
    pub lambdas: Vec<f64>,
}

pub fn inductive_layer_step(
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
    w0: &DVector<f64>,
    targets: &[DMatrix<f64>],
    activation: ActivationKind,
) -> Result<InductiveStep> {
    let (m, n) = (w.nrows(), a.ncols());
    if w.ncols() != a.nrows() || w0.len() != m || m > a.nrows() {
        return Err(Error::Shape("layer step needs n_{l+1} <= n_l and matching shapes".into()));
    }
    let cols = linalg::pivoted_columns(w, m)?;
    let big_w = w.select_columns(&cols);
    let cond = linalg::condition_number(&big_w);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(cond));
    }
    let w_inv = big_w.clone().try_inverse().ok_or(Error::Singular(f64::INFINITY))?;
    let current = w * a + DMatrix::from_fn(m, n, |i, _| w0[i]);
    let (c, d) = activation.image();
    // keeps λ(0) = 1 whenever the starting activations already exceed d / 1.05
    let rho = a.amax().max(d / BOUND_MARGIN);
    let floor: Vec<f64> = cols.iter().map(|&k| 0.5 * a.row(k).min()).collect();

    let mut out = InductiveStep { weights: vec![], biases: vec![], activations: vec![], lambdas: vec![] };
    for target in targets {
        if target.shape() != current.shape() {
            return Err(Error::Shape("target path has the wrong shape".into()));
        }
        let shift = &w_inv * (target - &current);
        let mut bracket = a.clone();
        for (j, &k) in cols.iter().enumerate() {
            let mut row = bracket.row_mut(k);
            row += shift.row(j);
        }
        // sigmoid-type image (0 on the boundary): lift each row so it stays positive
        let e = DVector::from_fn(m, |j, _| {
            if c == 0.0 {
                (floor[j] - bracket.row(cols[j]).min()).max(0.0)
            } else {
                0.0
            }
        });
        for (j, &k) in cols.iter().enumerate() {
            bracket.row_mut(k).add_scalar_mut(e[j]);
        }
        let lambda = (bracket.amax() / rho).max(1.0);
        let act = bracket / lambda;
        let (lo, hi) = (act.min(), act.max());
        if lo < c + EPS_ACT || hi > d - EPS_ACT {
            return Err(Error::Image(format!("activations span [{lo:e}, {hi:e}] against image ({c}, {d})")));
        }
        out.biases.push(w0 - &big_w * e);
        out.weights.push(w * lambda);
        out.activations.push(act);
        out.lambdas.push(lambda);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub steps: usize,
    pub max_steps: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions { steps: 256, max_steps: 4096, eps: 1e-4, seed: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCertificate {
    /// Largest `loss(t_{k+1}) − loss(t_k)`.
    pub max_increase: f64,
    pub slack: f64,
    pub violations: usize,
    pub final_loss: f64,
    /// `max_k ‖f(w(t_k)) − f_Γ(t_k)‖∞`.
    pub max_output_error: f64,
    /// `max_k |loss(t_k) − (1 − t_k)² loss(0)|`.
    pub max_curve_error: f64,
    /// Smallest `σ_min / σ_max` over downstream weight matrices on the path.
    pub min_rank_ratio: f64,
}

impl PathCertificate {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.final_loss <= 1e-6 && self.max_output_error <= 1e-6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentPath {
    pub wide_layer: usize,
    pub original_loss: f64,
    /// Loss after the full-rank perturbation (the path's start).
    pub start_loss: f64,
    pub t: Vec<f64>,
    pub losses: Vec<f64>,
    pub params: Vec<Vec<f64>>,
    pub certificate: PathCertificate,
}

impl DescentPath {
    pub fn network(&self, template: &Network, k: usize) -> Result<Network> {
        template.with_params(&self.params[k])
    }
}

/// Grid points, networks and target outputs.
type PathSamples = (Vec<f64>, Vec<Network>, Vec<DMatrix<f64>>);

/// Path samples on a uniform grid of `steps + 1` points.
fn build_path(net: &Network, data: &Dataset, l_star: usize, steps: usize) -> Result<PathSamples> {
    let cache = forward(net, data)?;
    let depth = net.depth();
    let n = data.len();
    let z = cache.output.clone();
    let y = data.targets();
    let t: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    let outputs: Vec<DMatrix<f64>> =
        t.iter().map(|&s| DMatrix::from_fn(1, n, |_, a| z[a] + s * (y[a] - z[a]))).collect();

    let mut weights: Vec<Vec<DMatrix<f64>>> = vec![vec![]; depth + 1];
    let mut biases: Vec<Vec<DVector<f64>>> = vec![vec![]; depth + 1];
    let mut targets = outputs.clone();
    let act = net.activation();
    for l in (l_star + 1..depth).rev() {
        let step = inductive_layer_step(&cache.act[l], net.weight(l + 1), net.bias(l + 1), &targets, act)?;
        weights[l + 1] = step.weights;
        biases[l + 1] = step.biases;
        targets = step
            .activations
            .iter()
            .map(|m| {
                let mut pre = m.clone();
                for v in pre.iter_mut() {
                    *v = act_inverse(act, *v)?;
                }
                Ok(pre)
            })
            .collect::<Result<_>>()?;
    }
    let first = l_star + 1;
    weights[first] = realize_layer_path(&cache.act[l_star], net.weight(first), net.bias(first), &targets)?;
    biases[first] = vec![net.bias(first).clone(); t.len()];

    // w(0) = w exactly; the recomputed sample differs by round-off from σ⁻¹∘σ
    let nets = std::iter::once(Ok(net.clone()))
        .chain((1..t.len()).map(|k| {
            let mut ws = net.weights().to_vec();
            let mut bs = net.biases().to_vec();
            for l in first..=depth {
                ws[l - 1] = weights[l][k].clone();
                bs[l - 1] = biases[l][k].clone();
            }
            Network::new(net.dims().to_vec(), ws, bs, act)
        }))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, nets, outputs))
}

pub fn monotone_descent_to_global(net: &Network, data: &Dataset, opts: &PathOptions) -> Result<DescentPath> {
    let info = wide_layer_info(net, data)?;
    let original_loss = forward(net, data)?.loss;
    let start = perturb_full_rank(net, data, opts.eps, opts.seed)?;
    let mut steps = opts.steps.max(1);
    loop {
        let (t, nets, outputs) = build_path(&start, data, info.layer, steps)?;
        let mut losses = Vec::with_capacity(nets.len());
        let mut max_output_error: f64 = 0.0;
        let mut min_rank_ratio = f64::INFINITY;
        for (k, n) in nets.iter().enumerate() {
            let cache = forward(n, data)?;
            losses.push(cache.loss);
            let err = cache.output.iter().zip(outputs[k].iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            max_output_error = max_output_error.max(err);
            for l in info.layer + 2..=n.depth() {
                let s = linalg::singular_values(n.weight(l));
                if let (Some(hi), Some(lo)) = (s.first(), s.last()) {
                    min_rank_ratio = min_rank_ratio.min(lo / hi);
                }
            }
        }
        let l0 = losses[0];
        let slack = 1e-9 * (1.0 + l0);
        let increases = losses.windows(2).map(|p| p[1] - p[0]);
        let max_increase = increases.clone().fold(f64::NEG_INFINITY, f64::max);
        let violations = increases.filter(|&d| d > slack).count();
        let max_curve_error = t
            .iter()
            .zip(&losses)
            .map(|(s, l)| (l - (1.0 - s).powi(2) * l0).abs())
            .fold(0.0, f64::max);
        let certificate = PathCertificate {
            max_increase,
            slack,
            violations,
            final_loss: *losses.last().expect("non-empty grid"),
            max_output_error,
            max_curve_error,
            min_rank_ratio,
        };
        if violations > 0 && steps * 2 <= opts.max_steps {
            steps *= 2;
            continue;
        }
        let path = DescentPath {
            wide_layer: info.layer,
            original_loss,
            start_loss: l0,
            params: nets.iter().map(|n| n.to_params().values).collect(),
            t,
            losses,
            certificate,
        };
        if !path.certificate.passed() {
            return Err(Error::PathCertificate(format!(
                "violations {}, final loss {:e}, output error {:e}",
                path.certificate.violations, path.certificate.final_loss, path.certificate.max_output_error
            )));
        }
        return Ok(path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::generate_teacher_dataset;
    use crate::network::InputSampler;
    use crate::trainer::init_random;

    fn wide_setup(act: ActivationKind) -> (Network, Dataset) {
        let teacher = init_random(&[2, 6, 1], act, 2.0, 1).unwrap();
        let data = generate_teacher_dataset(&teacher, 4, InputSampler::default(), 1).unwrap();
        let net = init_random(&[2, 6, 3, 1], act, 1.0, 2).unwrap();
        (net, data)
    }

    #[test]
    fn eligibility() {
        let (net, data) = wide_setup(ActivationKind::Sigmoid);
        let info = wide_layer_info(&net, &data).unwrap();
        assert_eq!(info.layer, 1);
        assert_eq!(info.rank, 4);
        assert!(info.is_ready());
        let narrow = init_random(&[2, 3, 3, 1], ActivationKind::Sigmoid, 1.0, 2).unwrap();
        assert!(matches!(wide_layer_info(&narrow, &data), Err(Error::Eligibility(_))));
        let bottleneck = init_random(&[2, 6, 1, 2, 1], ActivationKind::Sigmoid, 1.0, 2).unwrap();
        assert!(matches!(wide_layer_info(&bottleneck, &data), Err(Error::Eligibility(_))));
    }

    #[test]
    fn full_rank_net_is_returned_unchanged() {
        let (net, data) = wide_setup(ActivationKind::Sigmoid);
        assert_eq!(perturb_full_rank(&net, &data, 1e-6, 0).unwrap(), net);
    }

    #[test]
    fn duplicated_neurons_reach_full_rank() {
        let (net, data) = wide_setup(ActivationKind::Sigmoid);
        let mut dup = net.clone();
        let row = dup.weight(1).row(0).into_owned();
        for r in 1..6 {
            dup.weight_mut(1).row_mut(r).copy_from(&row);
            let b = dup.bias(1)[0];
            dup.bias_mut(1)[r] = b;
        }
        assert_eq!(wide_layer_info(&dup, &data).unwrap().rank, 1);
        let p = perturb_full_rank(&dup, &data, 1.0, 3).unwrap();
        assert_eq!(wide_layer_info(&p, &data).unwrap().rank, 4);
        let dist = p.to_params().values.iter().zip(&dup.to_params().values).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        assert!(dist.sqrt() < 1.0);
    }

    #[test]
    fn small_perturbation_changes_loss_slightly() {
        let (net, data) = wide_setup(ActivationKind::Sigmoid);
        let mut dup = net.clone();
        dup.weight_mut(1).row_mut(1).copy_from(&net.weight(1).row(0).into_owned());
        dup.bias_mut(1)[1] = net.bias(1)[0];
        let p = perturb_full_rank(&dup, &data, 1e-6, 5).unwrap();
        let d = (forward(&p, &data).unwrap().loss - forward(&dup, &data).unwrap().loss).abs();
        assert!(d <= 1e-3);
    }

    #[test]
    fn realize_reconstructs_targets() {
        let a = DMatrix::from_fn(6, 4, |i, j| 1.0 / (1.0 + (-(i as f64) * 0.7 + j as f64 * 1.3 - 0.4 * (i * j) as f64).exp()));
        let w = DMatrix::from_fn(2, 6, |i, j| (i as f64 - j as f64) * 0.3);
        let w0 = DVector::from_vec(vec![0.1, -0.2]);
        let base = &w * &a + DMatrix::from_fn(2, 4, |i, _| w0[i]);
        let targets: Vec<DMatrix<f64>> =
            (0..5).map(|k| base.map(|x| x + (k as f64 * 0.2).sin() * (1.0 + x * x).ln())).collect();
        let path = realize_layer_path(&a, &w, &w0, &targets).unwrap();
        assert_eq!(path[0], w);
        for (wt, target) in path.iter().zip(&targets) {
            let rec = wt * &a + DMatrix::from_fn(2, 4, |i, _| w0[i]);
            assert!((rec - target).amax() <= 1e-8);
        }
        let constant = realize_layer_path(&a, &w, &w0, &[base.clone(), base]).unwrap();
        assert_eq!(constant[0], constant[1]);
    }

    #[test]
    fn inductive_step_identity() {
        for act in [ActivationKind::Sigmoid, ActivationKind::Tanh] {
            let a = DMatrix::from_fn(3, 5, |i, j| act.value(0.3 * i as f64 - 0.5 * j as f64 + 0.2));
            let w = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 0.3, 0.2, 0.8, -1.1]);
            let w0 = DVector::from_vec(vec![0.3, -0.1]);
            let base = &w * &a + DMatrix::from_fn(2, 5, |i, _| w0[i]);
            let targets: Vec<DMatrix<f64>> = (0..32)
                .map(|k| {
                    let s = k as f64 / 31.0;
                    base.map(|x| x + 4.0 * s * (x + 1.0).cos())
                })
                .collect();
            let step = inductive_layer_step(&a, &w, &w0, &targets, act).unwrap();
            assert_eq!(step.lambdas[0], 1.0);
            assert_eq!(step.activations[0], a);
            for (k, target) in targets.iter().enumerate() {
                let rec = &step.weights[k] * &step.activations[k] + DMatrix::from_fn(2, 5, |i, _| step.biases[k][i]);
                assert!((rec - target).amax() <= 1e-8);
                let (c, d) = act.image();
                assert!(step.activations[k].min() > c && step.activations[k].max() < d);
            }
            let constant = inductive_layer_step(&a, &w, &w0, &[base.clone(), base.clone()], act).unwrap();
            assert_eq!(constant.lambdas, vec![1.0, 1.0]);
            assert_eq!(constant.biases[1], w0);
        }
    }

    #[test]
    fn path_reaches_global_minimum() {
        for act in [ActivationKind::Sigmoid, ActivationKind::Tanh] {
            let (net, data) = wide_setup(act);
            let path = monotone_descent_to_global(&net, &data, &PathOptions { steps: 64, ..PathOptions::default() }).unwrap();
            let c = &path.certificate;
            assert_eq!(c.violations, 0);
            assert!(c.final_loss <= 1e-6, "{}", c.final_loss);
            assert!(c.max_output_error <= 1e-6);
            assert!(c.max_curve_error <= 1e-6);
            assert_eq!(path.params[0], net.to_params().values);
        }
    }

    #[test]
    fn global_minimum_gives_constant_path() {
        let (net, _) = wide_setup(ActivationKind::Sigmoid);
        let data = generate_teacher_dataset(&net, 4, InputSampler::default(), 9).unwrap();
        let path = monotone_descent_to_global(&net, &data, &PathOptions { steps: 8, ..PathOptions::default() }).unwrap();
        assert!(path.losses.iter().all(|&l| l <= 1e-24));
        for p in &path.params {
            assert!(p.iter().zip(&path.params[0]).all(|(a, b)| (a - b).abs() <= 1e-10));
        }
    }
}
