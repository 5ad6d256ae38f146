//! First derivatives by backpropagation, per-neuron loss sensitivities, and
//! finite-difference oracles for the gradient and the Hessian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, SymEig};
use crate::network::{forward, Dataset, ForwardCache, Network};

/// Dense Hessians are refused beyond this many parameters.
pub const HESSIAN_GUARD: usize = 5000;
pub const GRAD_FD_STEP: f64 = 1e-6;
pub const HESSIAN_FD_STEP: f64 = 1e-5;

/// Location of one scalar parameter. Layers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamIndex {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

/// Flat ordering of a network's parameters: layer by layer, each layer's
/// weight matrix row-major followed by its bias vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl ParamLayout {
    pub fn new(dims: &[usize]) -> Self {
        let mut offsets = vec![0];
        for l in 1..dims.len() {
            let prev = *offsets.last().unwrap();
            offsets.push(prev + dims[l] * (dims[l - 1] + 1));
        }
        ParamLayout { dims: dims.to_vec(), offsets }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn flat(&self, idx: ParamIndex) -> usize {
        match idx {
            ParamIndex::Weight { layer, row, col } => {
                self.offsets[layer - 1] + row * self.dims[layer - 1] + col
            }
            ParamIndex::Bias { layer, row } => {
                self.offsets[layer - 1] + self.dims[layer] * self.dims[layer - 1] + row
            }
        }
    }

    pub fn weight(&self, layer: usize, row: usize, col: usize) -> usize {
        self.flat(ParamIndex::Weight { layer, row, col })
    }

    pub fn bias(&self, layer: usize, row: usize) -> usize {
        self.flat(ParamIndex::Bias { layer, row })
    }

    pub fn index(&self, flat: usize) -> ParamIndex {
        let layer = self.offsets.partition_point(|&o| o <= flat);
        let local = flat - self.offsets[layer - 1];
        let cols = self.dims[layer - 1];
        let nw = self.dims[layer] * cols;
        if local < nw {
            ParamIndex::Weight { layer, row: local / cols, col: local % cols }
        } else {
            ParamIndex::Bias { layer, row: local - nw }
        }
    }

    /// Flat indices of the augmented incoming block `(bias, w_1, …)` of one
    /// neuron, matching the bias-first convention of the B and D matrices.
    pub fn incoming(&self, layer: usize, row: usize) -> Vec<usize> {
        std::iter::once(self.bias(layer, row))
            .chain((0..self.dims[layer - 1]).map(|c| self.weight(layer, row, c)))
            .collect()
    }

    /// Flat indices of neuron `col`'s outgoing weights into `layer + 1`.
    pub fn outgoing(&self, layer: usize, col: usize) -> Vec<usize> {
        (0..self.dims[layer + 1]).map(|s| self.weight(layer + 1, s, col)).collect()
    }
}

/// Flattened parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn max_abs(&self) -> f64 {
        linalg::max_abs_slice(&self.values)
    }

    pub fn get(&self, idx: ParamIndex) -> f64 {
        self.values[self.layout.flat(idx)]
    }
}

impl Network {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.dims())
    }

    pub fn to_params(&self) -> ParamVector {
        let layout = self.layout();
        let mut values = Vec::with_capacity(layout.len());
        for l in 1..=self.depth() {
            let w = self.weight(l);
            for r in 0..w.nrows() {
                values.extend(w.row(r).iter());
            }
            values.extend(self.bias(l).iter());
        }
        ParamVector { values, layout }
    }

    /// Same architecture with parameters taken from a flat slice.
    pub fn with_params(&self, values: &[f64]) -> Result<Network> {
        let layout = self.layout();
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "parameter vector has length {}, expected {}",
                values.len(),
                layout.len()
            )));
        }
        let mut out = self.clone();
        let mut k = 0;
        for l in 1..=self.depth() {
            let (rows, cols) = (self.dims()[l], self.dims()[l - 1]);
            *out.weight_mut(l) = DMatrix::from_row_slice(rows, cols, &values[k..k + rows * cols]);
            k += rows * cols;
            *out.bias_mut(l) = DVector::from_column_slice(&values[k..k + rows]);
            k += rows;
        }
        Ok(out)
    }
}

/// `∂ℓ_α/∂n^{l,k}(x_α)` for every layer, neuron and sample.
///
/// `layers[l]` is `n_l x N` for `l = 1..=L`; `layers[0]` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTensor {
    pub layers: Vec<DMatrix<f64>>,
}

impl SensitivityTensor {
    pub fn layer(&self, l: usize) -> &DMatrix<f64> {
        &self.layers[l]
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().map(linalg::max_abs).fold(0.0, f64::max)
    }
}

pub fn sensitivities_from_cache(net: &Network, cache: &ForwardCache) -> SensitivityTensor {
    let depth = net.depth();
    let n = cache.output.len();
    let mut layers = vec![DMatrix::zeros(0, n); depth + 1];
    layers[depth] = DMatrix::from_row_slice(1, n, (&cache.residuals * 2.0).as_slice());
    for l in (1..depth).rev() {
        let back = net.weight(l + 1).transpose() * &layers[l + 1];
        let act = net.activation();
        layers[l] = back.zip_map(&cache.pre[l], |g, t| g * act.d1(t));
    }
    SensitivityTensor { layers }
}

pub fn neuron_sensitivities(net: &Network, data: &Dataset) -> Result<SensitivityTensor> {
    let cache = forward(net, data)?;
    Ok(sensitivities_from_cache(net, &cache))
}

/// Gradient assembled from cached activations and sensitivities.
pub fn gradient_from_parts(net: &Network, cache: &ForwardCache, sens: &SensitivityTensor) -> ParamVector {
    let layout = net.layout();
    let mut values = Vec::with_capacity(layout.len());
    for l in 1..=net.depth() {
        let g = &sens.layers[l] * cache.act[l - 1].transpose();
        for r in 0..g.nrows() {
            values.extend(g.row(r).iter());
        }
        values.extend(sens.layers[l].column_sum().iter());
    }
    ParamVector { values, layout }
}

/// Analytic gradient of the squared loss.
pub fn gradient(net: &Network, data: &Dataset) -> Result<ParamVector> {
    let cache = forward(net, data)?;
    let sens = sensitivities_from_cache(net, &cache);
    Ok(gradient_from_parts(net, &cache, &sens))
}

/// Scalar objective over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
}

/// Squared loss of a fixed architecture on a fixed dataset.
#[derive(Debug, Clone)]
pub struct NetObjective<'a> {
    template: Network,
    data: &'a Dataset,
}

impl<'a> NetObjective<'a> {
    pub fn new(template: &Network, data: &'a Dataset) -> Result<Self> {
        if template.input_dim() != data.input_dim() {
            return Err(Error::Shape(format!(
                "data has input dimension {}, network expects {}",
                data.input_dim(),
                template.input_dim()
            )));
        }
        Ok(NetObjective { template: template.clone(), data })
    }

    pub fn network(&self, w: &[f64]) -> Network {
        self.template.with_params(w).expect("parameter length checked by caller")
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }
}

impl Objective for NetObjective<'_> {
    fn dim(&self) -> usize {
        self.template.num_params()
    }

    fn value(&self, w: &[f64]) -> f64 {
        forward(&self.network(w), self.data).expect("shapes validated").loss
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        gradient(&self.network(w), self.data).expect("shapes validated").values
    }
}

pub fn gradient_fd_of<O: Objective + ?Sized>(obj: &O, w: &[f64], h: f64) -> Vec<f64> {
    (0..w.len())
        .into_par_iter()
        .map(|j| {
            let mut wp = w.to_vec();
            wp[j] = w[j] + h;
            let fp = obj.value(&wp);
            wp[j] = w[j] - h;
            let fm = obj.value(&wp);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of the loss.
pub fn gradient_fd(net: &Network, data: &Dataset, h: f64) -> Result<ParamVector> {
    let obj = NetObjective::new(net, data)?;
    let w = net.to_params();
    Ok(ParamVector { values: gradient_fd_of(&obj, &w.values, h), layout: w.layout })
}

/// Finite-difference Hessian with its pre-symmetrization asymmetry.
#[derive(Debug, Clone)]
pub struct FdHessian {
    /// `(H + Hᵀ)/2`.
    pub matrix: DMatrix<f64>,
    /// `‖H − Hᵀ‖∞` of the raw difference quotients.
    pub asymmetry: f64,
}

/// Central differences of the analytic gradient, column by column.
pub fn hessian_fd_of<O: Objective + ?Sized>(obj: &O, w: &[f64], h: f64) -> Result<FdHessian> {
    let m = w.len();
    if m > HESSIAN_GUARD {
        return Err(Error::Size(m, HESSIAN_GUARD));
    }
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut wp = w.to_vec();
            wp[j] = w[j] + h;
            let gp = obj.gradient(&wp);
            wp[j] = w[j] - h;
            let gm = obj.gradient(&wp);
            gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect();
    let raw = DMatrix::from_fn(m, m, |i, j| cols[j][i]);
    let asymmetry = linalg::norm_inf(&(&raw - raw.transpose()));
    let matrix = (&raw + raw.transpose()) * 0.5;
    Ok(FdHessian { matrix, asymmetry })
}

pub fn hessian_fd(net: &Network, data: &Dataset, h: f64) -> Result<FdHessian> {
    let m = net.num_params();
    if m > HESSIAN_GUARD {
        return Err(Error::Size(m, HESSIAN_GUARD));
    }
    let obj = NetObjective::new(net, data)?;
    hessian_fd_of(&obj, &net.to_params().values, h)
}

pub fn hessian_eigs(h: &DMatrix<f64>) -> Result<SymEig> {
    linalg::sym_eig(h)
}

/// Scale-aware semidefiniteness cutoff `1e-7 · max(1, ‖H‖∞)`.
pub fn eig_tolerance(h: &DMatrix<f64>) -> f64 {
    1e-7 * linalg::norm_inf(h).max(1.0)
}
