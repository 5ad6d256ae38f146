//! Empirical certification of constructed critical points and the full
//! non-attracting-region pipeline: train a small network, grow it by neuron
//! splitting, probe the result, walk the last split into a saddle and
//! escape from it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::diff::{self, NetObjective, Objective};
use crate::embed::{self, EmbeddingPlan, EmbeddingVerdict, VerdictKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{forward, generate_teacher_dataset, Dataset, InputSampler, Network};
use crate::trainer::{self, init_random, TrainOptions, TrainReport};

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// 64 log-spaced radii in `[1e-4, 1e-1]`.
pub fn default_radii() -> Vec<f64> {
    log_space(1e-4, 1e-1, 64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub k: usize,
    pub seed: u64,
    pub radii: Vec<f64>,
    pub base_loss: f64,
    /// `min_ρ loss(w + ρv) − loss(w)` per direction.
    pub direction_min: Vec<f64>,
    /// `min_v loss(w + ρv) − loss(w)` per radius.
    pub radius_min: Vec<f64>,
    /// `+∞` when `k = 0`.
    pub global_min: f64,
    pub argmin: Option<usize>,
}

/// Unit direction `k` of the probe stream. Each direction has its own
/// ChaCha stream so that directions can be drawn in parallel.
pub fn probe_direction(dim: usize, seed: u64, k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn probe_objective<O: Objective>(obj: &O, w: &[f64], k: usize, radii: &[f64], seed: u64) -> ProbeReport {
    let base = obj.value(w);
    let curves: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let v = probe_direction(w.len(), seed, j);
            radii
                .iter()
                .map(|&rho| {
                    let p: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + rho * b).collect();
                    obj.value(&p) - base
                })
                .collect()
        })
        .collect();
    let direction_min: Vec<f64> = curves.iter().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let radius_min = (0..radii.len())
        .map(|i| curves.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let (argmin, global_min) = direction_min
        .iter()
        .enumerate()
        .fold((None, f64::INFINITY), |acc, (j, &d)| if d < acc.1 { (Some(j), d) } else { acc });
    ProbeReport { k, seed, radii: radii.to_vec(), base_loss: base, direction_min, radius_min, global_min, argmin }
}

pub fn probe_random_directions(net: &Network, data: &Dataset, k: usize, radii: &[f64], seed: u64) -> Result<ProbeReport> {
    if radii.iter().any(|&r| !(r > 0.0)) || radii.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Shape("radii must be positive and ascending".into()));
    }
    let obj = NetObjective::new(net, data)?;
    Ok(probe_objective(&obj, &net.to_params().values, k, radii, seed))
}

/// Embedded networks along a linear λ interpolation, `steps + 1` points.
pub fn walk_lambda(
    small: &Network,
    plan: &EmbeddingPlan,
    lambda_from: f64,
    lambda_to: f64,
    steps: usize,
) -> Result<Vec<(f64, Network)>> {
    let steps = steps.max(1);
    (0..=steps)
        .map(|k| {
            let lam = if k == steps {
                lambda_to
            } else {
                lambda_from + (lambda_to - lambda_from) * k as f64 / steps as f64
            };
            Ok((lam, embed::gamma_embed(small, &plan.with_lambda(lam))?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    StrictMin,
    Saddle,
    DegenerateMinCandidate,
    NotCritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub tol_g: f64,
    /// Directions probed for degenerate candidates.
    pub probe_k: usize,
    pub probe_seed: u64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { tol_g: 1e-8, probe_k: 256, probe_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub kind: CriticalKind,
    pub grad_norm: f64,
    pub eigenvalues: Vec<f64>,
    pub tol_eig: f64,
    pub probe: Option<ProbeReport>,
}

pub fn classify_objective<O: Objective>(obj: &O, w: &[f64], opts: &ClassifyOptions) -> Result<CriticalPointReport> {
    let grad_norm = linalg::max_abs_slice(&obj.gradient(w));
    if grad_norm > opts.tol_g {
        return Ok(CriticalPointReport {
            kind: CriticalKind::NotCritical,
            grad_norm,
            eigenvalues: vec![],
            tol_eig: f64::NAN,
            probe: None,
        });
    }
    let h = diff::hessian_fd_of(obj, w, diff::HESSIAN_FD_STEP)?.matrix;
    let tol_eig = diff::eig_tolerance(&h);
    let eigenvalues = linalg::sym_eig(&h)?.values;
    let min = eigenvalues.first().copied().unwrap_or(0.0);
    let (kind, probe) = if min < -tol_eig {
        (CriticalKind::Saddle, None)
    } else if min > tol_eig {
        (CriticalKind::StrictMin, None)
    } else {
        let probe = probe_objective(obj, w, opts.probe_k, &default_radii(), opts.probe_seed);
        (CriticalKind::DegenerateMinCandidate, Some(probe))
    };
    Ok(CriticalPointReport { kind, grad_norm, eigenvalues, tol_eig, probe })
}

pub fn classify_critical_point(net: &Network, data: &Dataset, opts: &ClassifyOptions) -> Result<CriticalPointReport> {
    let m = net.num_params();
    if m > diff::HESSIAN_GUARD {
        return Err(Error::Size(m, diff::HESSIAN_GUARD));
    }
    let obj = NetObjective::new(net, data)?;
    classify_objective(&obj, &net.to_params().values, opts)
}

/// Which neuron of a layer is split at each embedding step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePolicy {
    /// Always split neuron `0` of the layer.
    First,
    /// Split the neuron with the largest outgoing weight norm.
    HeaviestOutgoing,
}

impl SourcePolicy {
    pub fn pick(&self, net: &Network, layer: usize) -> usize {
        match self {
            SourcePolicy::First => 0,
            SourcePolicy::HeaviestOutgoing => {
                let out = net.weight(layer + 1);
                (0..out.ncols())
                    .map(|j| (j, out.column(j).amax()))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub probe: u64,
    pub perturb: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { data: 7, init: 100, probe: 2024, perturb: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    pub teacher_dims: Vec<usize>,
    pub student_dims: Vec<usize>,
    pub target_dims: Vec<usize>,
    pub n_samples: usize,
    pub activation: ActivationKind,
    /// Teacher weights are uniform in `[-teacher_scale, teacher_scale]`.
    pub teacher_scale: f64,
    pub student_scale: f64,
    pub sampler: InputSampler,
    pub seeds: Seeds,
    pub lambda: f64,
    pub lambda_saddle: f64,
    pub walk_steps: usize,
    pub probe_k: usize,
    pub radii: Vec<f64>,
    /// Gate the construction on B including the bias coordinate.
    pub include_bias: bool,
    pub source_policy: SourcePolicy,
    /// Training restarts (init seed `seeds.init + attempt`).
    pub max_attempts: usize,
    pub train: TrainOptions,
    /// Step sizes tried along the escape direction (both signs).
    pub escape_steps: Vec<f64>,
    pub descent: TrainOptions,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            teacher_dims: vec![2, 5, 5, 1],
            student_dims: vec![2, 1, 1, 1],
            target_dims: vec![2, 21, 21, 1],
            n_samples: 20,
            activation: ActivationKind::Sigmoid,
            teacher_scale: 8.0,
            student_scale: 1.0,
            sampler: InputSampler::default(),
            seeds: Seeds::default(),
            lambda: 0.5,
            lambda_saddle: -0.2,
            walk_steps: 50,
            probe_k: 5000,
            radii: default_radii(),
            include_bias: false,
            source_policy: SourcePolicy::HeaviestOutgoing,
            max_attempts: 20,
            train: TrainOptions { max_iters: 20_000, ..TrainOptions::default() },
            escape_steps: log_space(1e-3, 1e2, 121),
            descent: TrainOptions { max_iters: 2_000, polish_max_params: 0, tol_g: 1e-10, ..TrainOptions::default() },
        }
    }
}

impl RegionConfig {
    fn validate(&self) -> Result<()> {
        let (s, t) = (&self.student_dims, &self.target_dims);
        if s.len() != t.len() || s.len() < 3 {
            return Err(Error::Plan("student and target must have the same depth with hidden layers".into()));
        }
        if s[0] != t[0] || s[s.len() - 1] != t[t.len() - 1] || s[0] != self.teacher_dims[0] {
            return Err(Error::Plan("input/output widths must agree".into()));
        }
        if s.iter().zip(t).any(|(a, b)| a > b) {
            return Err(Error::Plan("target is narrower than the student".into()));
        }
        if s == t {
            return Err(Error::Plan("target equals student; nothing to embed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStep {
    pub plan: EmbeddingPlan,
    pub verdict: EmbeddingVerdict,
    /// Verdict with the bias coordinate included, whatever the gate.
    pub augmented_kind: VerdictKind,
    /// Accepted on positive semidefiniteness (degenerate directions).
    pub semidefinite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    pub lambdas: Vec<f64>,
    pub losses: Vec<f64>,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeTrace {
    pub effective_curvature: f64,
    /// `(s, loss)` along the escape line, both signs.
    pub line: Vec<(f64, f64)>,
    pub best_step: f64,
    pub line_loss: f64,
    pub descent: TrainReport,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonAttractingEvidence {
    pub teacher: Network,
    pub data: Dataset,
    pub attempts: usize,
    pub student: Network,
    pub train: TrainReport,
    pub steps: Vec<EmbeddingStep>,
    pub region: Network,
    pub region_loss: f64,
    pub min_probe: ProbeReport,
    pub walk: WalkTrace,
    pub saddle: Network,
    pub saddle_verdict: EmbeddingVerdict,
    pub saddle_probe: ProbeReport,
    pub escape: EscapeTrace,
}

/// B/D conditions at the trained student: for every hidden layer that will
/// grow, neuron `source` must give a definite B and vanishing D.
fn check_student(net: &Network, data: &Dataset, cfg: &RegionConfig) -> Result<()> {
    for l in 1..net.depth() {
        if cfg.target_dims[l] == cfg.student_dims[l] {
            continue;
        }
        let r = cfg.source_policy.pick(net, l);
        let bd = embed::compute_bd(net, data, l, r, cfg.include_bias)?;
        let v = embed::classify_embedding(&bd, cfg.lambda);
        let ok = matches!(v.kind, VerdictKind::MinCandidateInside | VerdictKind::MinCandidateOutside);
        if !ok {
            return Err(Error::PreconditionFailed(format!(
                "layer {l} neuron {r}: {:?} (B eigenvalues {:?}, |D| {:e})",
                v.kind, v.b_eigenvalues, v.d_norm_inf
            )));
        }
    }
    Ok(())
}

fn train_student(data: &Dataset, cfg: &RegionConfig) -> Result<(usize, Network, TrainReport)> {
    let mut last = Error::PreconditionFailed("no training attempts".into());
    for attempt in 0..cfg.max_attempts.max(1) {
        let init = init_random(&cfg.student_dims, cfg.activation, cfg.student_scale, cfg.seeds.init + attempt as u64)?;
        let (net, report) = trainer::train_to_critical(&init, data, &cfg.train)?;
        if report.final_grad_norm > cfg.train.tol_g {
            last = Error::PreconditionFailed(format!("attempt {attempt}: training stopped at |grad| {:e}", report.final_grad_norm));
            continue;
        }
        if forward(&net, data)?.residuals.amax() == 0.0 {
            return Err(Error::PreconditionFailed("student fits the data exactly; B vanishes".into()));
        }
        match check_student(&net, data, cfg) {
            Ok(()) => return Ok((attempt, net, report)),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Grows `net` to the target widths, first hidden layer first. Returns the
/// final network, the network before the last split and the step log.
fn grow(net: &Network, data: &Dataset, cfg: &RegionConfig) -> Result<(Network, Network, Vec<EmbeddingStep>)> {
    let mut cur = net.clone();
    let mut prev = net.clone();
    let mut steps = Vec::new();
    for l in 1..net.depth() {
        while cur.dims()[l] < cfg.target_dims[l] {
            let r = cfg.source_policy.pick(&cur, l);
            let plan = EmbeddingPlan::new(l, r, cfg.lambda);
            let bd = embed::compute_bd(&cur, data, l, r, cfg.include_bias)?;
            let verdict = embed::classify_embedding(&bd, cfg.lambda);
            let augmented_kind = if cfg.include_bias {
                verdict.kind
            } else {
                embed::classify_embedding(&embed::compute_bd(&cur, data, l, r, true)?, cfg.lambda).kind
            };
            let semidefinite = verdict.kind == VerdictKind::Inconclusive
                && verdict.d_norm_inf <= verdict.tol_d
                && verdict.b_eigenvalues.iter().all(|&e| e * cfg.lambda * (1.0 - cfg.lambda) >= -verdict.tol_eig);
            if !matches!(verdict.kind, VerdictKind::MinCandidateInside | VerdictKind::MinCandidateOutside) && !semidefinite {
                return Err(Error::PreconditionFailed(format!(
                    "embedding into layer {l} from neuron {r}: {:?}",
                    verdict.kind
                )));
            }
            prev = cur.clone();
            cur = embed::gamma_embed(&cur, &plan)?;
            steps.push(EmbeddingStep { plan, verdict, augmented_kind, semidefinite });
        }
    }
    Ok((cur, prev, steps))
}

fn escape(saddle: &Network, data: &Dataset, plan: &EmbeddingPlan, before: &Network, cfg: &RegionConfig) -> Result<EscapeTrace> {
    let bd = embed::compute_bd(before, data, plan.layer, plan.source, cfg.include_bias)?;
    let dir = embed::escape_direction(saddle, plan, &bd)?;
    let signed: Vec<f64> = cfg
        .escape_steps
        .iter()
        .flat_map(|&s| [-s, s])
        .collect();
    let losses = embed::line_losses(saddle, data, &dir.direction.values, &signed)?;
    let line: Vec<(f64, f64)> = signed.iter().copied().zip(losses).collect();
    let (best_step, line_loss) = line
        .iter()
        .copied()
        .fold((0.0, forward(saddle, data)?.loss), |acc, x| if x.1 < acc.1 { x } else { acc });
    let w: Vec<f64> = saddle
        .to_params()
        .values
        .iter()
        .zip(&dir.direction.values)
        .map(|(a, b)| a + best_step * b)
        .collect();
    let start = saddle.with_params(&w)?;
    let (end, descent) = trainer::train_to_critical(&start, data, &cfg.descent)?;
    let final_loss = forward(&end, data)?.loss;
    Ok(EscapeTrace { effective_curvature: dir.effective_curvature, line, best_step, line_loss, descent, final_loss })
}

pub fn region_demo(cfg: &RegionConfig) -> Result<NonAttractingEvidence> {
    cfg.validate()?;
    let teacher = init_random(&cfg.teacher_dims, cfg.activation, cfg.teacher_scale, cfg.seeds.data)?;
    let data = generate_teacher_dataset(&teacher, cfg.n_samples, cfg.sampler, cfg.seeds.data)?;
    let (attempts, student, train) = train_student(&data, cfg)?;
    let (region, before_last, steps) = grow(&student, &data, cfg)?;
    let region_loss = forward(&region, &data)?.loss;
    let min_probe = probe_random_directions(&region, &data, cfg.probe_k, &cfg.radii, cfg.seeds.probe)?;

    let last = steps.last().expect("validated: at least one step").plan;
    let walk_nets = walk_lambda(&before_last, &last, cfg.lambda, cfg.lambda_saddle, cfg.walk_steps)?;
    let losses = walk_nets.iter().map(|(_, n)| Ok(forward(n, &data)?.loss)).collect::<Result<Vec<_>>>()?;
    let max_deviation = losses.iter().map(|l| (l - region_loss).abs()).fold(0.0, f64::max);
    let walk = WalkTrace { lambdas: walk_nets.iter().map(|x| x.0).collect(), losses, max_deviation };
    let saddle = walk_nets.last().expect("non-empty walk").1.clone();

    let saddle_plan = last.with_lambda(cfg.lambda_saddle);
    let bd = embed::compute_bd(&before_last, &data, last.layer, last.source, cfg.include_bias)?;
    let saddle_verdict = embed::classify_embedding(&bd, cfg.lambda_saddle);
    let saddle_probe = probe_random_directions(&saddle, &data, cfg.probe_k, &cfg.radii, cfg.seeds.probe)?;
    let escape = escape(&saddle, &data, &saddle_plan, &before_last, cfg)?;
    Ok(NonAttractingEvidence {
        teacher,
        data,
        attempts,
        student,
        train,
        steps,
        region,
        region_loss,
        min_probe,
        walk,
        saddle,
        saddle_verdict,
        saddle_probe,
        escape,
    })
}
