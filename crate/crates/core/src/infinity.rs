//! Generalized local minima at infinity (Theorem 2): the last hidden layer
//! saturates as its biases diverge, the output becomes the constant mean
//! target, and suitably signed output weights make every nearby finite point
//! worse. The limit is handled through `p_i = exp(−κ·u_{i,0})`, with `κ = 1`
//! for sigmoid and `κ = 2` for tanh so that `d − σ(n) ∝ p` in both cases.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::certify::log_space;
use crate::error::{Error, Result};
use crate::network::{forward, Dataset, ForwardCache, Network};

/// Smallest `p` used as the numerical stand-in for the limit.
pub const P_MIN: f64 = 1e-12;
const MAX_DOUBLINGS: i32 = 10;
const MAX_HALVINGS: i32 = 40;

/// `c = mean(y)` and `L_c = Σ (c − y)²`.
pub fn constant_fit(data: &Dataset) -> (f64, f64) {
    let y = data.targets();
    let c = y.mean();
    (c, y.iter().map(|t| (c - t).powi(2)).sum())
}

fn kappa(act: ActivationKind) -> f64 {
    match act {
        ActivationKind::Sigmoid => 1.0,
        ActivationKind::Tanh => 2.0,
    }
}

/// `φ(u) = Σ_α d_α exp(−u·a_α)` over the columns of `a`.
pub fn phi(a: &DMatrix<f64>, d: &DVector<f64>, u: &DVector<f64>) -> f64 {
    a.column_iter().zip(d.iter()).map(|(col, dv)| dv * (-u.dot(&col)).exp()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignProbe {
    /// Coordinate carrying both probes.
    pub coord: usize,
    pub u_pos: Vec<f64>,
    pub u_neg: Vec<f64>,
    pub phi_pos: f64,
    pub phi_neg: f64,
}

fn scan_sign(a: &DMatrix<f64>, d: &DVector<f64>, coord: usize, want: f64) -> Option<(f64, f64)> {
    // doubling from 1 first, then halving toward the first-order regime
    let exps = (0..=MAX_DOUBLINGS).chain((1..=MAX_HALVINGS).map(|k| -k));
    for e in exps {
        for sign in [1.0, -1.0] {
            let t = sign * 2f64.powi(e);
            let mut u = DVector::zeros(a.nrows());
            u[coord] = t;
            let v = phi(a, d, &u);
            if v * want > 0.0 {
                return Some((t, v));
            }
        }
    }
    None
}

/// Single-coordinate vectors `u^>`, `u^<` with `φ(u^>) > 0 > φ(u^<)`, built on
/// the activations of layer `L − 2`.
pub fn sign_probe_vectors(cache: &ForwardCache, data: &Dataset) -> Result<SignProbe> {
    let depth = cache.depth();
    if depth < 2 {
        return Err(Error::Shape("sign probes need at least one hidden layer".into()));
    }
    let a = &cache.act[depth - 2];
    let (c, _) = constant_fit(data);
    let d = data.targets().map(|y| c - y);
    let dn = d.norm();
    let mut scored: Vec<(usize, f64)> = (0..a.nrows())
        .filter_map(|r| {
            let row = a.row(r);
            let s = d.dot(&row.transpose());
            let tol = 1e-8 * dn * row.norm();
            (s.abs() > tol && dn > 0.0).then(|| (r, s.abs() / (dn * row.norm())))
        })
        .collect();
    if scored.is_empty() {
        return Err(Error::DegenerateData("Σ d_α a_α^r vanishes for every coordinate".into()));
    }
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    for (r, _) in scored {
        let (Some((tp, vp)), Some((tn, vn))) = (scan_sign(a, &d, r, 1.0), scan_sign(a, &d, r, -1.0)) else {
            continue;
        };
        let unit = |t: f64| (0..a.nrows()).map(|k| if k == r { t } else { 0.0 }).collect();
        return Ok(SignProbe { coord: r, u_pos: unit(tp), u_neg: unit(tn), phi_pos: vp, phi_neg: vn });
    }
    Err(Error::DegenerateData("no coordinate gives both signs of φ".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfinityFamily {
    /// Base network with the designated rows already in place.
    pub base: Network,
    /// Rows of the last hidden layer carrying `u^>` and `u^<`.
    pub rows: [usize; 2],
    pub c: f64,
    pub lc: f64,
    /// Output weights, `Σ v = c`.
    pub v: Vec<f64>,
    /// `φ_i` for every row of the last hidden layer.
    pub phi: Vec<f64>,
    pub kappa: f64,
    /// `-1` for the constructed family, `+1` for the flipped control.
    pub sign: f64,
}

impl InfinityFamily {
    pub fn network(&self, p: &[f64]) -> Result<Network> {
        self.network_with(p, &self.v)
    }

    pub fn network_uniform(&self, p: f64) -> Result<Network> {
        self.network(&vec![p; self.v.len()])
    }

    pub fn network_with(&self, p: &[f64], v: &[f64]) -> Result<Network> {
        let l = self.base.depth();
        if p.len() != self.v.len() || v.len() != self.v.len() {
            return Err(Error::Shape("p and v need one entry per last-hidden neuron".into()));
        }
        if p.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Shape("p must be positive".into()));
        }
        let mut net = self.base.clone();
        for (i, &pi) in p.iter().enumerate() {
            net.bias_mut(l - 1)[i] = -pi.ln() / self.kappa;
        }
        net.weight_mut(l).row_mut(0).copy_from_slice(v);
        net.bias_mut(l)[0] = 0.0;
        Ok(net)
    }

    /// Every sign constraint and the sum constraint hold.
    pub fn signs_ok(&self) -> bool {
        let sum: f64 = self.v.iter().sum();
        (sum - self.c).abs() <= 1e-12 * (1.0 + self.c.abs())
            && self.v.iter().zip(&self.phi).all(|(v, f)| v * f * self.sign > 0.0)
    }

    /// Same rows with the sign rule reversed; the result is not a minimum.
    pub fn flipped(&self) -> Result<InfinityFamily> {
        assign_output(self.base.clone(), self.rows, self.c, self.lc, self.phi.clone(), self.kappa, -self.sign)
    }

    pub fn is_suboptimal_against(&self, loss: f64) -> bool {
        loss < self.lc
    }
}

fn assign_output(
    base: Network,
    rows: [usize; 2],
    c: f64,
    lc: f64,
    phi: Vec<f64>,
    kappa: f64,
    sign: f64,
) -> Result<InfinityFamily> {
    // v_i carries sign(sign·φ_i); the probe rows absorb the sum constraint
    let mut v: Vec<f64> = phi.iter().map(|f| sign * f.signum()).collect();
    if let Some(i) = phi.iter().position(|&f| f == 0.0) {
        return Err(Error::InfeasibleSigns(format!("φ vanishes on row {i}")));
    }
    let rest: f64 = v.iter().enumerate().filter(|(i, _)| !rows.contains(i)).map(|(_, x)| x).sum();
    let r = c - rest;
    // rows[0] has φ > 0, rows[1] has φ < 0
    let (s0, s1) = (sign, -sign);
    if s0 * s1 >= 0.0 {
        return Err(Error::InfeasibleSigns("probe rows share a sign".into()));
    }
    let (neg, pos) = if s0 < 0.0 { (rows[0], rows[1]) } else { (rows[1], rows[0]) };
    v[neg] = -(1.0 + (-r).max(0.0));
    v[pos] = r - v[neg];
    let fam = InfinityFamily { base, rows, c, lc, v, phi, kappa, sign };
    if !fam.signs_ok() {
        return Err(Error::InfeasibleSigns("constructed output weights violate a constraint".into()));
    }
    Ok(fam)
}

/// Family built from `base`: rows 0 and 1 of the last hidden layer get `u^>`
/// and `u^<`, the remaining rows and all lower layers stay as in `base`.
pub fn build_infinity_family(base: &Network, data: &Dataset) -> Result<InfinityFamily> {
    let l = base.depth();
    if l < 2 || base.dims()[l - 1] < 2 {
        return Err(Error::Shape("the last hidden layer needs at least two neurons".into()));
    }
    let k = kappa(base.activation());
    let cache = forward(base, data)?;
    let probe = sign_probe_vectors(&cache, data)?;
    let mut net = base.clone();
    net.weight_mut(l - 1).row_mut(0).copy_from_slice(&probe.u_pos.iter().map(|x| x / k).collect::<Vec<_>>());
    net.weight_mut(l - 1).row_mut(1).copy_from_slice(&probe.u_neg.iter().map(|x| x / k).collect::<Vec<_>>());
    let (c, lc) = constant_fit(data);
    let d = data.targets().map(|y| c - y);
    let a = &cache.act[l - 2];
    let w = net.weight(l - 1);
    let phi: Vec<f64> = (0..w.nrows()).map(|i| phi(a, &d, &(w.row(i).transpose() * k))).collect();
    assign_output(net, [0, 1], c, lc, phi, k, -1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub p_grid: Vec<f64>,
    pub ball_radius: f64,
    pub ball_samples: usize,
    pub seed: u64,
    /// Grid points (smallest p first) used for the trend check.
    pub trend_points: usize,
    /// Margin must be positive on every grid point at or below this `p`.
    pub p_small: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            p_grid: log_space(1e-8, 1e-2, 24),
            ball_radius: 1e-3,
            ball_samples: 64,
            seed: 2024,
            trend_points: 8,
            p_small: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub p: f64,
    /// `min_v loss(p, v) − L_c` over the ball samples and the centre.
    pub margin: f64,
    pub center_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfinityReport {
    pub c: f64,
    pub lc: f64,
    /// `|loss(P_MIN) − L_c|`.
    pub limit_gap: f64,
    pub margin_curve: Vec<MarginPoint>,
    pub positive_small: bool,
    pub trend_ok: bool,
    pub pass: bool,
}

pub fn verify_infinity_minimum(fam: &InfinityFamily, data: &Dataset, opts: &VerifyOptions) -> Result<InfinityReport> {
    let n = fam.v.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut vs = vec![fam.v.clone()];
    for _ in 0..opts.ball_samples {
        let mut z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        z.iter_mut().for_each(|x| *x -= mean);
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u: f64 = rand::Rng::random(&mut rng);
        let r = opts.ball_radius * u.powf(1.0 / (n.max(2) - 1) as f64);
        vs.push(fam.v.iter().zip(&z).map(|(v, x)| v + r * x / norm.max(f64::MIN_POSITIVE)).collect());
    }
    let mut grid = opts.p_grid.clone();
    grid.sort_by(f64::total_cmp);
    let margin_curve = grid
        .iter()
        .map(|&p| {
            let margins = vs
                .iter()
                .map(|v| Ok(forward(&fam.network_with(&vec![p; n], v)?, data)?.loss - fam.lc))
                .collect::<Result<Vec<f64>>>()?;
            Ok(MarginPoint { p, margin: margins.iter().copied().fold(f64::INFINITY, f64::min), center_margin: margins[0] })
        })
        .collect::<Result<Vec<_>>>()?;
    let limit_gap = (forward(&fam.network_uniform(P_MIN)?, data)?.loss - fam.lc).abs();
    let positive_small = margin_curve.iter().filter(|m| m.p <= opts.p_small).all(|m| m.margin > 0.0);
    let head = &margin_curve[..opts.trend_points.min(margin_curve.len())];
    let trend_ok = head.iter().all(|m| m.margin > 0.0) && head.windows(2).all(|w| w[1].margin >= w[0].margin);
    Ok(InfinityReport {
        c: fam.c,
        lc: fam.lc,
        limit_gap,
        margin_curve,
        positive_small,
        trend_ok,
        pass: positive_small && trend_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_teacher_dataset, InputSampler};
    use crate::trainer::init_random;

    fn setup(act: ActivationKind) -> (Network, Dataset) {
        let teacher = init_random(&[2, 5, 5, 1], act, 8.0, 7).unwrap();
        let data = generate_teacher_dataset(&teacher, 20, InputSampler::default(), 7).unwrap();
        let base = init_random(&[2, 6, 4, 1], act, 1.0, 3).unwrap();
        (base, data)
    }

    #[test]
    fn constant_fit_examples() {
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0]], &[1.0, -1.0]).unwrap();
        assert_eq!(constant_fit(&data), (0.0, 2.0));
        let flat = Dataset::from_rows(&[vec![0.0], vec![1.0]], &[3.0, 3.0]).unwrap();
        assert_eq!(constant_fit(&flat).1, 0.0);
    }

    #[test]
    fn phi_at_zero_is_zero_sum() {
        let (base, data) = setup(ActivationKind::Sigmoid);
        let cache = forward(&base, &data).unwrap();
        let (c, _) = constant_fit(&data);
        let d = data.targets().map(|y| c - y);
        let a = &cache.act[1];
        assert!(phi(a, &d, &DVector::zeros(a.nrows())).abs() <= 1e-12 * d.norm() * 20.0);
    }

    #[test]
    fn probes_have_opposite_signs() {
        let (base, data) = setup(ActivationKind::Sigmoid);
        let cache = forward(&base, &data).unwrap();
        let probe = sign_probe_vectors(&cache, &data).unwrap();
        let (c, _) = constant_fit(&data);
        let d = data.targets().map(|y| c - y);
        let a = &cache.act[1];
        assert!(phi(a, &d, &DVector::from_vec(probe.u_pos.clone())) > 0.0);
        assert!(phi(a, &d, &DVector::from_vec(probe.u_neg.clone())) < 0.0);
        assert_eq!(probe.u_pos.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn constant_targets_are_degenerate() {
        let (base, data) = setup(ActivationKind::Sigmoid);
        let flat = data.with_targets(DVector::from_element(data.len(), 0.4)).unwrap();
        let cache = forward(&base, &flat).unwrap();
        assert!(matches!(sign_probe_vectors(&cache, &flat), Err(Error::DegenerateData(_))));
        assert!(matches!(build_infinity_family(&base, &flat), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn family_satisfies_constraints_and_limit() {
        for act in [ActivationKind::Sigmoid, ActivationKind::Tanh] {
            let (base, data) = setup(act);
            let fam = build_infinity_family(&base, &data).unwrap();
            assert!(fam.signs_ok());
            assert!((fam.v.iter().sum::<f64>() - fam.c).abs() <= 1e-12 * (1.0 + fam.c.abs()));
            let limit = forward(&fam.network_uniform(P_MIN).unwrap(), &data).unwrap();
            assert!(limit.output.iter().all(|f| (f - fam.c).abs() <= 1e-6));
            assert!((limit.loss - fam.lc).abs() <= 1e-6 * (1.0 + fam.lc));
        }
    }

    #[test]
    fn two_neuron_layer_solves_sign_system() {
        let (_, data) = setup(ActivationKind::Sigmoid);
        let base = init_random(&[2, 3, 2, 1], ActivationKind::Sigmoid, 1.0, 5).unwrap();
        let fam = build_infinity_family(&base, &data).unwrap();
        assert!(fam.v[0] < 0.0 && fam.v[1] > 0.0);
        assert!(fam.signs_ok());
    }

    #[test]
    fn verify_passes_and_flipped_fails() {
        for act in [ActivationKind::Sigmoid, ActivationKind::Tanh] {
            let (base, data) = setup(act);
            let fam = build_infinity_family(&base, &data).unwrap();
            let opts = VerifyOptions { ball_samples: 16, ..VerifyOptions::default() };
            let report = verify_infinity_minimum(&fam, &data, &opts).unwrap();
            assert!(report.pass, "{:?}", report.margin_curve);
            assert!(report.limit_gap <= 1e-6 * (1.0 + report.lc));
            // margin shrinks like O(p)
            let m = &report.margin_curve;
            let ratio = m[1].center_margin / m[0].center_margin / (m[1].p / m[0].p);
            assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
            let flipped = fam.flipped().unwrap();
            assert!(flipped.v.iter().zip(&flipped.phi).all(|(v, f)| v * f > 0.0));
            let bad = verify_infinity_minimum(&flipped, &data, &opts).unwrap();
            assert!(!bad.pass);
        }
    }
}
