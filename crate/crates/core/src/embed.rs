//! Neuron-splitting embeddings and the second-order analysis of the points
//! they produce.
//!
//! Splitting hidden neuron `r` of layer `l` duplicates its incoming weights
//! and bias into a new neuron (appended as the last row of layer `l`) and
//! divides its outgoing weights as `λ·v` (new neuron) and `(1 − λ)·v`
//! (source). The network function is unchanged for every `λ`.
//!
//! Whether the embedded critical point is a minimum or a saddle is governed
//! by two matrices computed on the smaller network:
//!
//! * `B[i][j] = Σ_α Σ_k ∂ℓ_α/∂n^{l+1,k} · v_{k,r} · σ''(n^{l,r}) · a^{l-1,i} · a^{l-1,j}`
//! * `D[i][s] = Σ_α ∂ℓ_α/∂n^{l+1,s} · σ'(n^{l,r}) · a^{l-1,i}`
//!
//! Index `i = 0` is the bias coordinate (`a ≡ 1`) unless excluded. The
//! sensitivities carry the factor 2 of `d/df (f − y)²`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diff::{self, sensitivities_from_cache, ParamLayout, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::{self, SymEig};
use crate::network::{forward, Dataset, Network};

/// One application of the splitting map. Layer is 1-based (a hidden layer),
/// `source` is a 0-based neuron index within that layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPlan {
    pub layer: usize,
    pub source: usize,
    pub lambda: f64,
}

impl EmbeddingPlan {
    pub fn new(layer: usize, source: usize, lambda: f64) -> Self {
        EmbeddingPlan { layer, source, lambda }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.layer == 0 || self.layer >= net.depth() {
            return Err(Error::Plan(format!(
                "layer {} is not hidden (network has hidden layers 1..={})",
                self.layer,
                net.depth() - 1
            )));
        }
        if self.source >= net.dims()[self.layer] {
            return Err(Error::Plan(format!(
                "source neuron {} out of range for layer {} of width {}",
                self.source,
                self.layer,
                net.dims()[self.layer]
            )));
        }
        if !self.lambda.is_finite() {
            return Err(Error::Plan("lambda must be finite".into()));
        }
        Ok(())
    }

    /// Index of the neuron the embedding appends.
    pub fn new_neuron(&self, small: &Network) -> usize {
        small.dims()[self.layer]
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        EmbeddingPlan { lambda, ..*self }
    }
}

pub fn gamma_embed(net: &Network, plan: &EmbeddingPlan) -> Result<Network> {
    plan.validate(net)?;
    let (l, r, lam) = (plan.layer, plan.source, plan.lambda);
    let mut dims = net.dims().to_vec();
    dims[l] += 1;
    let mut weights = net.weights().to_vec();
    let mut biases = net.biases().to_vec();

    let w_in = &net.weights()[l - 1];
    let new_row = w_in.row(r).into_owned();
    weights[l - 1] = w_in.clone().insert_row(w_in.nrows(), 0.0);
    weights[l - 1].row_mut(dims[l] - 1).copy_from(&new_row);
    let b = &net.biases()[l - 1];
    biases[l - 1] = b.clone().insert_row(b.len(), b[r]);

    let w_out = &net.weights()[l];
    let v = w_out.column(r).into_owned();
    let mut grown = w_out.clone().insert_column(w_out.ncols(), 0.0);
    grown.column_mut(dims[l] - 1).copy_from(&(&v * lam));
    grown.column_mut(r).copy_from(&(&v * (1.0 - lam)));
    weights[l] = grown;

    Network::new(dims, weights, biases, net.activation())
}

/// B and D for one source neuron, with their summary statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BDMatrices {
    pub layer: usize,
    pub source: usize,
    pub include_bias: bool,
    /// Row-major.
    #[serde(with = "matrix_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub d: DMatrix<f64>,
    pub b_eigenvalues: Vec<f64>,
    pub d_norm_inf: f64,
    /// `‖∂ℓ/∂n‖∞` over all layers, for the scale-aware D tolerance.
    pub sensitivity_scale: f64,
}

impl BDMatrices {
    pub fn tol_eig(&self) -> f64 {
        1e-7 * linalg::norm_inf(&self.b).max(1.0)
    }

    pub fn tol_d(&self) -> f64 {
        1e-7 * (1.0 + self.sensitivity_scale)
    }
}

/// Augmented previous-layer activations `[1; a^{l-1}]` (or just `a^{l-1}`).
fn prev_activations(cache_act: &DMatrix<f64>, include_bias: bool) -> DMatrix<f64> {
    if include_bias {
        cache_act.clone().insert_row(0, 1.0)
    } else {
        cache_act.clone()
    }
}

pub fn compute_bd(
    net: &Network,
    data: &Dataset,
    layer: usize,
    source: usize,
    include_bias: bool,
) -> Result<BDMatrices> {
    EmbeddingPlan::new(layer, source, 0.5).validate(net)?;
    let cache = forward(net, data)?;
    let sens = sensitivities_from_cache(net, &cache);
    let act = net.activation();
    let prev = prev_activations(&cache.act[layer - 1], include_bias);
    let down = sens.layer(layer + 1);
    let v = net.weight(layer + 1).column(source);
    let pre = cache.pre[layer].row(source);
    let n = data.len();

    // per-sample scalar weights for B and the per-(s, α) weights for D
    let b_coef = DVector::from_fn(n, |a, _| {
        let back: f64 = (0..down.nrows()).map(|k| down[(k, a)] * v[k]).sum();
        back * act.d2(pre[a])
    });
    let d_coef = DMatrix::from_fn(down.nrows(), n, |s, a| down[(s, a)] * act.d1(pre[a]));

    let dim = prev.nrows();
    let b = DMatrix::from_fn(dim, dim, |i, j| {
        (0..n).map(|a| b_coef[a] * prev[(i, a)] * prev[(j, a)]).sum()
    });
    let d = DMatrix::from_fn(dim, down.nrows(), |i, s| (0..n).map(|a| d_coef[(s, a)] * prev[(i, a)]).sum());
    let b_eigenvalues = linalg::sym_eig(&b)?.values;
    let d_norm_inf = linalg::max_abs(&d);
    Ok(BDMatrices {
        layer,
        source,
        include_bias,
        b,
        d,
        b_eigenvalues,
        d_norm_inf,
        sensitivity_scale: sens.max_abs(),
    })
}

pub fn compute_b(net: &Network, data: &Dataset, layer: usize, source: usize, include_bias: bool) -> Result<DMatrix<f64>> {
    Ok(compute_bd(net, data, layer, source, include_bias)?.b)
}

pub fn compute_d(net: &Network, data: &Dataset, layer: usize, source: usize, include_bias: bool) -> Result<DMatrix<f64>> {
    Ok(compute_bd(net, data, layer, source, include_bias)?.d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    /// λ ∈ (0, 1), B positive definite, D ≈ 0.
    MinCandidateInside,
    /// λ ∉ [0, 1], B negative definite, D ≈ 0.
    MinCandidateOutside,
    Saddle,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVerdict {
    pub kind: VerdictKind,
    pub lambda: f64,
    pub b_eigenvalues: Vec<f64>,
    pub d_norm_inf: f64,
    pub tol_eig: f64,
    pub tol_d: f64,
}

impl EmbeddingVerdict {
    /// Re-derive the verdict from the stored evidence.
    pub fn recompute(&self) -> VerdictKind {
        decide(&self.b_eigenvalues, self.d_norm_inf, self.tol_eig, self.tol_d, self.lambda)
    }
}

fn decide(eigs: &[f64], d_norm: f64, tol_eig: f64, tol_d: f64, lambda: f64) -> VerdictKind {
    if d_norm > tol_d {
        return VerdictKind::Saddle;
    }
    let pos = eigs.iter().any(|&e| e > tol_eig);
    let neg = eigs.iter().any(|&e| e < -tol_eig);
    if pos && neg {
        return VerdictKind::Saddle;
    }
    // a strictly signed eigenvalue with αβ·e < 0 is a descent direction even when B is only semidefinite
    let inside = lambda > 0.0 && lambda < 1.0;
    let outside = !(0.0..=1.0).contains(&lambda);
    if (pos && outside) || (neg && inside) {
        return VerdictKind::Saddle;
    }
    if eigs.is_empty() || eigs.iter().any(|e| e.abs() <= tol_eig) {
        return VerdictKind::Inconclusive;
    }
    // αβ = λ(1 − λ) vanishes at the endpoints: the curvature block is zero
    if lambda == 0.0 || lambda == 1.0 {
        return VerdictKind::Inconclusive;
    }
    match (pos, inside) {
        (true, true) => VerdictKind::MinCandidateInside,
        (false, false) => VerdictKind::MinCandidateOutside,
        _ => VerdictKind::Saddle,
    }
}

/// Tolerances for criticality and definiteness verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_g: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { tol_g: 1e-8 }
    }
}

pub fn classify_embedding(bd: &BDMatrices, lambda: f64) -> EmbeddingVerdict {
    let (tol_eig, tol_d) = (bd.tol_eig(), bd.tol_d());
    EmbeddingVerdict {
        kind: decide(&bd.b_eigenvalues, bd.d_norm_inf, tol_eig, tol_d, lambda),
        lambda,
        b_eigenvalues: bd.b_eigenvalues.clone(),
        d_norm_inf: bd.d_norm_inf,
        tol_eig,
        tol_d,
    }
}

/// `(α, β) = (1 − λ, λ)`, so that `α + β = 1` and `λ = β / (α + β)`.
pub fn default_alpha_beta(lambda: f64) -> (f64, f64) {
    (1.0 - lambda, lambda)
}

/// Coordinate blocks of the transformed basis, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRanges {
    /// Sums of duplicated incoming parameters.
    pub mu_sum: Range<usize>,
    /// Sums of duplicated outgoing weights.
    pub nu_sum: Range<usize>,
    /// All other parameters.
    pub rest: Range<usize>,
    /// `α·u_new − β·u_source`.
    pub mu_diff: Range<usize>,
    /// `v_new − v_source`.
    pub nu_diff: Range<usize>,
}

/// Change of basis from raw parameters of the larger network to the
/// sum/difference coordinates. Column `k` of `matrix` is the raw-coordinate
/// direction of transformed coordinate `k`, so a Hessian `H` in raw
/// coordinates reads `Pᵀ H P` in the new basis.
#[derive(Debug, Clone)]
pub struct TransformedBasis {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub matrix: DMatrix<f64>,
    pub blocks: BlockRanges,
    /// Small-network flat indices of the `rest` block, in order.
    pub rest_small: Vec<usize>,
}

impl TransformedBasis {
    pub fn new(small: &Network, plan: &EmbeddingPlan, alpha: f64, beta: f64) -> Result<Self> {
        plan.validate(small)?;
        if alpha + beta == 0.0 {
            return Err(Error::Plan("alpha = -beta does not define a basis".into()));
        }
        let lambda = beta / (alpha + beta);
        let (l, r) = (plan.layer, plan.source);
        let small_layout = small.layout();
        let mut big_dims = small.dims().to_vec();
        big_dims[l] += 1;
        let big = ParamLayout::new(&big_dims);
        let new = plan.new_neuron(small);

        let u_r_small = small_layout.incoming(l, r);
        let v_r_small = small_layout.outgoing(l, r);
        let rest_small: Vec<usize> = (0..small_layout.len())
            .filter(|k| !u_r_small.contains(k) && !v_r_small.contains(k))
            .collect();

        let u_new = big.incoming(l, new);
        let u_r = big.incoming(l, r);
        let v_new = big.outgoing(l, new);
        let v_r = big.outgoing(l, r);

        let nu = u_r.len();
        let nv = v_r.len();
        let m = big.len();
        let blocks = BlockRanges {
            mu_sum: 0..nu,
            nu_sum: nu..nu + nv,
            rest: nu + nv..nu + nv + rest_small.len(),
            mu_diff: nu + nv + rest_small.len()..2 * nu + nv + rest_small.len(),
            nu_diff: 2 * nu + nv + rest_small.len()..m,
        };
        let mut p = DMatrix::zeros(m, m);
        for i in 0..nu {
            p[(u_new[i], blocks.mu_sum.start + i)] = 1.0;
            p[(u_r[i], blocks.mu_sum.start + i)] = 1.0;
            p[(u_new[i], blocks.mu_diff.start + i)] = alpha;
            p[(u_r[i], blocks.mu_diff.start + i)] = -beta;
        }
        for s in 0..nv {
            p[(v_new[s], blocks.nu_sum.start + s)] = 1.0;
            p[(v_r[s], blocks.nu_sum.start + s)] = 1.0;
            p[(v_new[s], blocks.nu_diff.start + s)] = 1.0;
            p[(v_r[s], blocks.nu_diff.start + s)] = -1.0;
        }
        for (k, &idx) in rest_small.iter().enumerate() {
            let big_idx = big.flat(small_layout.index(idx));
            p[(big_idx, blocks.rest.start + k)] = 1.0;
        }
        Ok(TransformedBasis { alpha, beta, lambda, matrix: p, blocks, rest_small })
    }
}

/// Hessian of the larger network's loss at the embedded point, assembled in
/// the transformed basis from second derivatives of the smaller network.
#[derive(Debug, Clone)]
pub struct TransformedHessian {
    pub matrix: DMatrix<f64>,
    pub basis: TransformedBasis,
    pub bd: BDMatrices,
}

pub fn transformed_hessian(
    small: &Network,
    data: &Dataset,
    plan: &EmbeddingPlan,
    alpha: f64,
    beta: f64,
    tols: &Tolerances,
) -> Result<TransformedHessian> {
    let basis = TransformedBasis::new(small, plan, alpha, beta)?;
    let grad_norm = diff::gradient(small, data)?.max_abs();
    if grad_norm > tols.tol_g {
        return Err(Error::NotCritical { grad_norm, tol: tols.tol_g });
    }
    let (l, r) = (plan.layer, plan.source);
    let layout = small.layout();
    let h = diff::hessian_fd(small, data, diff::HESSIAN_FD_STEP)?.matrix;
    let bd = compute_bd(small, data, l, r, true)?;

    // small-network coordinates grouped as (u_r, v_r, rest)
    let u = layout.incoming(l, r);
    let v = layout.outgoing(l, r);
    let b = &basis.blocks;
    let groups: [(&[usize], Range<usize>, f64); 3] = [
        (&u, b.mu_sum.clone(), 1.0),
        (&v, b.nu_sum.clone(), 2.0),
        (&basis.rest_small, b.rest.clone(), 1.0),
    ];
    let m = basis.matrix.nrows();
    let mut out = DMatrix::zeros(m, m);
    for (rows, rr, fr) in &groups {
        for (cols, cr, fc) in &groups {
            for (i, &si) in rows.iter().enumerate() {
                for (j, &sj) in cols.iter().enumerate() {
                    out[(rr.start + i, cr.start + j)] = fr * fc * h[(si, sj)];
                }
            }
        }
    }
    let (al, be) = (basis.alpha, basis.beta);
    for i in 0..u.len() {
        for j in 0..u.len() {
            out[(b.mu_diff.start + i, b.mu_diff.start + j)] = al * be * bd.b[(i, j)];
        }
        for s in 0..v.len() {
            let cross = (al - be) * bd.d[(i, s)];
            out[(b.nu_sum.start + s, b.mu_diff.start + i)] = cross;
            out[(b.mu_diff.start + i, b.nu_sum.start + s)] = cross;
            let coupling = (al + be) * bd.d[(i, s)];
            out[(b.mu_diff.start + i, b.nu_diff.start + s)] = coupling;
            out[(b.nu_diff.start + s, b.mu_diff.start + i)] = coupling;
        }
    }
    Ok(TransformedHessian { matrix: out, basis, bd })
}

/// Raw-coordinate descent direction at a saddle produced by splitting.
#[derive(Debug, Clone)]
pub struct EscapeDirection {
    /// Unit vector in the larger network's parameter space.
    pub direction: ParamVector,
    /// `αβ · eig(B)` along the chosen eigenvector (before normalization).
    pub effective_curvature: f64,
    pub b_eigenvector: Vec<f64>,
}

/// Moves along `α·u_new − β·u_source` in the eigenvector of `B` with the
/// most negative effective curvature `αβ·eig(B)`.
///
/// `bd` must come from the smaller network (before the split); the plan's
/// λ is the one used to build `embedded`.
pub fn escape_direction(embedded: &Network, plan: &EmbeddingPlan, bd: &BDMatrices) -> Result<EscapeDirection> {
    let (l, r) = (plan.layer, plan.source);
    if l == 0 || l >= embedded.depth() || r + 1 >= embedded.dims()[l] {
        return Err(Error::Plan("plan does not match the embedded network".into()));
    }
    let (alpha, beta) = default_alpha_beta(plan.lambda);
    let eig: SymEig = linalg::sym_eig(&bd.b)?;
    let ab = alpha * beta;
    let (k, curv) = eig
        .values
        .iter()
        .enumerate()
        .map(|(k, &e)| (k, ab * e))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    if !(curv < -bd.tol_eig()) {
        return Err(Error::NoNegativeCurvature(curv));
    }
    let mut e: Vec<f64> = eig.vectors.column(k).iter().copied().collect();
    if !bd.include_bias {
        e.insert(0, 0.0);
    }
    let layout = embedded.layout();
    let new = embedded.dims()[l] - 1;
    let mut values = vec![0.0; layout.len()];
    for (i, (&a, &b)) in layout.incoming(l, new).iter().zip(&layout.incoming(l, r)).enumerate() {
        values[a] += alpha * e[i];
        values[b] -= beta * e[i];
    }
    let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
    values.iter_mut().for_each(|x| *x /= norm);
    let b_eigenvector = eig.vectors.column(k).iter().copied().collect();
    Ok(EscapeDirection {
        direction: ParamVector { values, layout },
        effective_curvature: curv,
        b_eigenvector,
    })
}

/// Loss along `w + s·v` for each step size `s`.
pub fn line_losses(net: &Network, data: &Dataset, direction: &[f64], steps: &[f64]) -> Result<Vec<f64>> {
    let w = net.to_params().values;
    steps
        .iter()
        .map(|&s| {
            let p: Vec<f64> = w.iter().zip(direction).map(|(a, b)| a + s * b).collect();
            Ok(forward(&net.with_params(&p)?, data)?.loss)
        })
        .collect()
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}
