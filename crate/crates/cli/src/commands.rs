//! Subcommand bodies. Each returns the process exit code on a completed run
//! and `CliError` when it could not run at all.

use std::path::Path;

use landscape::certify::EmbeddingStep;
use landscape::infinity::{VerifyOptions, MarginPoint};
use landscape::pathfinder::PathCertificate;
use landscape::trainer::TrainStatus;
use landscape::{
    classify_embedding, compute_bd, forward, gamma_embed, generate_teacher_dataset, init_random,
    monotone_descent_to_global, probe_random_directions, region_demo, train_to_critical, verify_infinity_minimum,
    build_infinity_family, Dataset, EmbeddingPlan, Network, NonAttractingEvidence, PathOptions, ProbeReport,
    TrainReport, VerdictKind,
};
use serde::Serialize;

use crate::artifact::{read_json, ArtifactDir, Cell};
use crate::config::ExperimentConfig;
use crate::error::{CliError, EXIT_FAIL, EXIT_OK};

/// Empirical local-minimum standard for probe reports.
const PROBE_TOL: f64 = 1e-9;

fn teacher_and_data(cfg: &ExperimentConfig) -> Result<(Network, Dataset), CliError> {
    let teacher = init_random(&cfg.teacher_dims, cfg.activation, cfg.teacher_scale, cfg.seeds.data)?;
    let data = generate_teacher_dataset(&teacher, cfg.n_samples, cfg.sampler(), cfg.seeds.data)?;
    Ok((teacher, data))
}

/// A network file: either a bare network or a region evidence bundle, in
/// which case the bundle's region point and dataset are used.
fn load_network(path: &Path, cfg: &ExperimentConfig) -> Result<(Network, Dataset), CliError> {
    let value: serde_json::Value = read_json(path)?;
    let input = |e: serde_json::Error| CliError::Input(path.to_path_buf(), e.to_string());
    if value.get("region").is_some() {
        let ev: NonAttractingEvidence = serde_json::from_value(value).map_err(input)?;
        Ok((ev.region, ev.data))
    } else {
        let net: Network = serde_json::from_value(value).map_err(input)?;
        Ok((net, teacher_and_data(cfg)?.1))
    }
}

fn train_student(cfg: &ExperimentConfig, data: &Dataset) -> Result<(Network, TrainReport), CliError> {
    let init = init_random(&cfg.student_dims, cfg.activation, cfg.student_scale, cfg.seeds.init)?;
    Ok(train_to_critical(&init, data, &cfg.train_options())?)
}

/// Configured network, or a freshly trained student.
fn subject(cfg: &ExperimentConfig) -> Result<(Network, Dataset), CliError> {
    match &cfg.network {
        Some(p) => load_network(p, cfg),
        None => {
            let (_, data) = teacher_and_data(cfg)?;
            Ok((train_student(cfg, &data)?.0, data))
        }
    }
}

fn trace_csv(dir: &mut ArtifactDir, name: &str, report: &TrainReport) -> Result<(), CliError> {
    let rows = report.trace.iter().map(|p| vec![Cell::Int(p.iter), Cell::Float(p.loss), Cell::Float(p.grad_norm)]);
    dir.csv(name, &["iter", "loss", "grad_norm"], rows)
}

fn probe_csv(dir: &mut ArtifactDir, name: &str, probe: &ProbeReport) -> Result<(), CliError> {
    let rows = probe.radii.iter().zip(&probe.radius_min).map(|(&r, &d)| vec![Cell::Float(r), Cell::Float(d)]);
    dir.csv(name, &["radius", "min_delta"], rows)
}

fn probe_is_minimum(probe: &ProbeReport) -> bool {
    probe.global_min >= -PROBE_TOL * (1.0 + probe.base_loss)
}

#[derive(Serialize)]
struct RegionSummary<'a> {
    region_loss: f64,
    min_probe_ok: bool,
    saddle_verdict: VerdictKind,
    escape_drop: f64,
    full_evidence: bool,
    steps: &'a [EmbeddingStep],
}

/// Full evidence: the probe finds no descent at the region point, the
/// walked point is classified as a saddle and the escape line descends.
pub fn region(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<u8, CliError> {
    let ev = region_demo(&cfg.region())?;
    dir.json("evidence.json", &ev)?;
    trace_csv(dir, "train.csv", &ev.train)?;
    probe_csv(dir, "probe_min.csv", &ev.min_probe)?;
    dir.csv(
        "walk.csv",
        &["lambda", "loss"],
        ev.walk.lambdas.iter().zip(&ev.walk.losses).map(|(&l, &v)| vec![Cell::Float(l), Cell::Float(v)]),
    )?;
    probe_csv(dir, "probe_saddle.csv", &ev.saddle_probe)?;
    dir.csv("escape.csv", &["step", "loss"], ev.escape.line.iter().map(|&(s, l)| vec![Cell::Float(s), Cell::Float(l)]))?;
    let min_probe_ok = probe_is_minimum(&ev.min_probe);
    let escape_drop = ev.region_loss - ev.escape.line_loss;
    let full = min_probe_ok && ev.saddle_verdict.kind == VerdictKind::Saddle && escape_drop > 0.0;
    let summary = RegionSummary {
        region_loss: ev.region_loss,
        min_probe_ok,
        saddle_verdict: ev.saddle_verdict.kind,
        escape_drop,
        full_evidence: full,
        steps: &ev.steps,
    };
    dir.json("summary.json", &summary)?;
    Ok(if full { EXIT_OK } else { EXIT_FAIL })
}

#[derive(Serialize)]
struct PathReport<'a> {
    wide_layer: usize,
    original_loss: f64,
    start_loss: f64,
    grid_points: usize,
    certificate: &'a PathCertificate,
}

#[derive(Serialize)]
struct Snapshot {
    k: usize,
    t: f64,
    network: Network,
}

pub fn path(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<u8, CliError> {
    let (start, data) = match cfg.path.start.as_str() {
        "random" => {
            let net = init_random(&cfg.target_dims, cfg.activation, cfg.student_scale, cfg.seeds.init)?;
            (net, teacher_and_data(cfg)?.1)
        }
        "teacher" => teacher_and_data(cfg)?,
        file => load_network(Path::new(file), cfg)?,
    };
    let opts = PathOptions { steps: cfg.path.steps, max_steps: cfg.path.max_steps, eps: cfg.path.eps, seed: cfg.seeds.perturb };
    let path = monotone_descent_to_global(&start, &data, &opts)?;
    dir.csv("path.csv", &["t", "loss"], path.t.iter().zip(&path.losses).map(|(&t, &l)| vec![Cell::Float(t), Cell::Float(l)]))?;
    let report = PathReport {
        wide_layer: path.wide_layer,
        original_loss: path.original_loss,
        start_loss: path.start_loss,
        grid_points: path.t.len(),
        certificate: &path.certificate,
    };
    dir.json("certificate.json", &report)?;
    let last = path.t.len() - 1;
    let snapshots = (0..=last)
        .filter(|k| k % cfg.path.snapshot_stride == 0 || *k == last)
        .map(|k| Ok(Snapshot { k, t: path.t[k], network: path.network(&start, k)? }))
        .collect::<Result<Vec<_>, CliError>>()?;
    dir.json("snapshots.json", &snapshots)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct InfinityOutput<'a> {
    flipped: bool,
    report: &'a landscape::InfinityReport,
    family: &'a landscape::InfinityFamily,
}

pub fn infinity(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<u8, CliError> {
    let (_, data) = teacher_and_data(cfg)?;
    let base = init_random(&cfg.target_dims, cfg.activation, cfg.student_scale, cfg.infinity.base_seed)?;
    let mut family = build_infinity_family(&base, &data)?;
    if cfg.infinity.flipped {
        family = family.flipped()?;
    }
    let opts = VerifyOptions {
        ball_radius: cfg.infinity.ball_radius,
        ball_samples: cfg.infinity.ball_samples,
        seed: cfg.seeds.probe,
        ..VerifyOptions::default()
    };
    let report = verify_infinity_minimum(&family, &data, &opts)?;
    let row = |m: &MarginPoint| vec![Cell::Float(m.p), Cell::Float(m.margin), Cell::Float(m.center_margin)];
    dir.csv("margin.csv", &["p", "margin", "center_margin"], report.margin_curve.iter().map(row))?;
    dir.json("infinity.json", &InfinityOutput { flipped: cfg.infinity.flipped, report: &report, family: &family })?;
    Ok(if report.pass { EXIT_OK } else { EXIT_FAIL })
}

pub fn train(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<u8, CliError> {
    let (teacher, data) = teacher_and_data(cfg)?;
    let (student, report) = train_student(cfg, &data)?;
    dir.json("teacher.json", &teacher)?;
    dir.json("data.json", &data)?;
    dir.json("student.json", &student)?;
    dir.json("train_report.json", &report)?;
    trace_csv(dir, "train.csv", &report)?;
    Ok(if report.status == TrainStatus::Converged { EXIT_OK } else { EXIT_FAIL })
}

pub fn probe(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<u8, CliError> {
    let (net, data) = subject(cfg)?;
    let report = probe_random_directions(&net, &data, cfg.probe_k, &cfg.radii, cfg.seeds.probe)?;
    probe_csv(dir, "probe.csv", &report)?;
    dir.json("probe.json", &report)?;
    Ok(if probe_is_minimum(&report) { EXIT_OK } else { EXIT_FAIL })
}

#[derive(Serialize)]
struct EmbedOutput<'a> {
    plan: EmbeddingPlan,
    loss_before: f64,
    loss_after: f64,
    verdict: &'a landscape::EmbeddingVerdict,
    bd: &'a landscape::BDMatrices,
    embedded: &'a Network,
}

pub fn embed(cfg: &ExperimentConfig, dir: &mut ArtifactDir) -> Result<u8, CliError> {
    let (net, data) = subject(cfg)?;
    let plan = EmbeddingPlan::new(cfg.embed.layer, cfg.embed.source, cfg.lambda);
    let bd = compute_bd(&net, &data, plan.layer, plan.source, cfg.include_bias)?;
    let verdict = classify_embedding(&bd, plan.lambda);
    let embedded = gamma_embed(&net, &plan)?;
    let (before, after) = (forward(&net, &data)?.loss, forward(&embedded, &data)?.loss);
    dir.json(
        "embed.json",
        &EmbedOutput { plan, loss_before: before, loss_after: after, verdict: &verdict, bd: &bd, embedded: &embedded },
    )?;
    // loss along the λ line through the embedded point, for re-plotting
    let lambdas: Vec<f64> = (0..=40).map(|i| -1.0 + 3.0 * i as f64 / 40.0).collect();
    let rows = lambdas
        .iter()
        .map(|&l| Ok(vec![Cell::Float(l), Cell::Float(forward(&gamma_embed(&net, &plan.with_lambda(l))?, &data)?.loss)]))
        .collect::<Result<Vec<_>, CliError>>()?;
    dir.csv("lambda_line.csv", &["lambda", "loss"], rows)?;
    Ok(EXIT_OK)
}
