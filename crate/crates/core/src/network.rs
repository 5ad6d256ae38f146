//! Fully connected regression networks, datasets and the cached forward pass.
//!
//! Layers are indexed `0..=L`: layer 0 is the input, layers `1..L` are hidden
//! (activation applied) and layer `L` is the single linear output neuron.
//! `weights[l - 1]` is the `n_l x n_{l-1}` matrix feeding layer `l`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    activation: ActivationKind,
}

impl Network {
    pub fn new(
        dims: Vec<usize>,
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        activation: ActivationKind,
    ) -> Result<Self> {
        validate_dims(&dims)?;
        let layers = dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Shape(format!(
                "expected {layers} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 1..=layers {
            let w = &weights[l - 1];
            if w.nrows() != dims[l] || w.ncols() != dims[l - 1] {
                return Err(Error::Shape(format!(
                    "layer {l}: weight is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    dims[l],
                    dims[l - 1]
                )));
            }
            if biases[l - 1].len() != dims[l] {
                return Err(Error::Shape(format!(
                    "layer {l}: bias has length {}, expected {}",
                    biases[l - 1].len(),
                    dims[l]
                )));
            }
        }
        Ok(Network { dims, weights, biases, activation })
    }

    pub fn zeros(dims: &[usize], activation: ActivationKind) -> Result<Self> {
        validate_dims(dims)?;
        let weights = (1..dims.len()).map(|l| DMatrix::zeros(dims[l], dims[l - 1])).collect();
        let biases = (1..dims.len()).map(|l| DVector::zeros(dims[l])).collect();
        Network::new(dims.to_vec(), weights, biases, activation)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Incoming weight matrix of layer `l` (1-based).
    pub fn weight(&self, l: usize) -> &DMatrix<f64> {
        &self.weights[l - 1]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut DMatrix<f64> {
        &mut self.weights[l - 1]
    }

    pub fn bias(&self, l: usize) -> &DVector<f64> {
        &self.biases[l - 1]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut DVector<f64> {
        &mut self.biases[l - 1]
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    /// `M = Σ_l n_l (n_{l-1} + 1)`.
    pub fn num_params(&self) -> usize {
        (1..self.dims.len()).map(|l| self.dims[l] * (self.dims[l - 1] + 1)).sum()
    }

    /// Output for a single input vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a = DVector::from_column_slice(x);
        let last = self.depth();
        for l in 1..=last {
            let mut n = &self.weights[l - 1] * &a + &self.biases[l - 1];
            if l < last {
                n.apply(|t| *t = self.activation.value(*t));
            }
            a = n;
        }
        Ok(a[0])
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(Error::Shape(format!(
            "need at least one hidden layer, got dims {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!("zero-width layer in {dims:?}")));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::Shape(format!("output layer must have width 1, got {dims:?}")));
    }
    Ok(())
}

/// Inputs stored column-wise: `inputs` is `n_0 x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(Error::Shape("dataset must contain at least one sample".into()));
        }
        if inputs.ncols() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.ncols(),
                targets.len()
            )));
        }
        for a in 0..inputs.ncols() {
            for b in (a + 1)..inputs.ncols() {
                if inputs.column(a) == inputs.column(b) {
                    return Err(Error::Shape(format!("inputs {a} and {b} coincide")));
                }
            }
        }
        Ok(Dataset { inputs, targets })
    }

    /// Build from one row per sample.
    pub fn from_rows(rows: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        let n0 = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n0) {
            return Err(Error::Shape("ragged input rows".into()));
        }
        let inputs = DMatrix::from_fn(n0, rows.len(), |i, a| rows[a][i]);
        Dataset::new(inputs, DVector::from_column_slice(targets))
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn with_targets(&self, targets: DVector<f64>) -> Result<Self> {
        Dataset::new(self.inputs.clone(), targets)
    }
}

/// Per-layer pre-activations and activations for every sample.
///
/// `pre[l]` and `act[l]` are `n_l x N`. Index 0 holds the inputs in both;
/// at the output layer `act[L] == pre[L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub pre: Vec<DMatrix<f64>>,
    pub act: Vec<DMatrix<f64>>,
    pub output: DVector<f64>,
    pub residuals: DVector<f64>,
    pub loss: f64,
}

impl ForwardCache {
    pub fn depth(&self) -> usize {
        self.pre.len() - 1
    }
}

pub fn forward(net: &Network, data: &Dataset) -> Result<ForwardCache> {
    if data.input_dim() != net.input_dim() {
        return Err(Error::Shape(format!(
            "data has input dimension {}, network expects {}",
            data.input_dim(),
            net.input_dim()
        )));
    }
    let depth = net.depth();
    let mut pre = Vec::with_capacity(depth + 1);
    let mut act = Vec::with_capacity(depth + 1);
    pre.push(data.inputs().clone());
    act.push(data.inputs().clone());
    for l in 1..=depth {
        let mut n = net.weight(l) * &act[l - 1];
        let b = net.bias(l);
        for mut col in n.column_iter_mut() {
            col += b;
        }
        let a = if l < depth { n.map(|t| net.activation().value(t)) } else { n.clone() };
        pre.push(n);
        act.push(a);
    }
    let output = act[depth].row(0).transpose();
    let residuals = &output - data.targets();
    let loss = residuals.iter().map(|r| r * r).sum();
    Ok(ForwardCache { pre, act, output, residuals, loss })
}

/// Squared loss `Σ_α (f(x_α) - y_α)²` (no ½ factor).
pub fn loss(net: &Network, data: &Dataset) -> Result<f64> {
    Ok(forward(net, data)?.loss)
}

/// Box sampler for teacher inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSampler {
    pub low: f64,
    pub high: f64,
}

impl Default for InputSampler {
    fn default() -> Self {
        InputSampler { low: -3.0, high: 3.0 }
    }
}

const MAX_SAMPLER_RETRIES: usize = 1000;

/// Draw `n` distinct inputs uniformly from the sampler box and label them
/// with the teacher's outputs.
pub fn generate_teacher_dataset(
    teacher: &Network,
    n: usize,
    sampler: InputSampler,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Shape("dataset must contain at least one sample".into()));
    }
    let n0 = teacher.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut retries = 0;
    while rows.len() < n {
        let x: Vec<f64> = (0..n0).map(|_| rng.random_range(sampler.low..sampler.high)).collect();
        if rows.contains(&x) {
            retries += 1;
            if retries > MAX_SAMPLER_RETRIES {
                return Err(Error::Sampler(n));
            }
            continue;
        }
        rows.push(x);
    }
    let targets = rows.iter().map(|x| teacher.predict(x)).collect::<Result<Vec<_>>>()?;
    Dataset::from_rows(&rows, &targets)
}

// ---- JSON documents --------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    dims: Vec<usize>,
    activation: ActivationKind,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl Serialize for Network {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let weights = self
            .weights
            .iter()
            .map(|w| w.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect();
        let biases = self.biases.iter().map(|b| b.iter().copied().collect()).collect();
        NetworkDoc { dims: self.dims.clone(), activation: self.activation, weights, biases }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = NetworkDoc::deserialize(d)?;
        let mut weights = Vec::with_capacity(doc.weights.len());
        for (l, rows) in doc.weights.iter().enumerate() {
            let nrows = rows.len();
            let ncols = rows.first().map(Vec::len).unwrap_or(0);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(serde::de::Error::custom(format!("ragged weight matrix {}", l + 1)));
            }
            weights.push(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]));
        }
        let biases = doc.biases.iter().map(|b| DVector::from_column_slice(b)).collect();
        Network::new(doc.dims, weights, biases, doc.activation).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Serialize for Dataset {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let inputs = self.inputs.column_iter().map(|c| c.iter().copied().collect()).collect();
        DatasetDoc { inputs, targets: self.targets.iter().copied().collect() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dataset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = DatasetDoc::deserialize(d)?;
        Dataset::from_rows(&doc.inputs, &doc.targets).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_net(w1: f64, b1: f64, w2: f64, b2: f64) -> Network {
        Network::new(
            vec![1, 1, 1],
            vec![DMatrix::from_element(1, 1, w1), DMatrix::from_element(1, 1, w2)],
            vec![DVector::from_element(1, b1), DVector::from_element(1, b2)],
            ActivationKind::Sigmoid,
        )
        .unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(&[2, 3, 2, 1], ActivationKind::Sigmoid).unwrap();
        let data = Dataset::from_rows(&[vec![0.1, 2.0], vec![-1.0, 0.5]], &[1.0, -1.0]).unwrap();
        let cache = forward(&net, &data).unwrap();
        assert!(cache.output.iter().all(|&f| f == 0.0));
        assert_eq!(cache.loss, 2.0);
        assert_eq!(net.num_params(), 3 * 3 + 2 * 4 + 3);
    }

    #[test]
    fn hand_computed_scalar_network() {
        let net = scalar_net(1.0, 0.0, 2.0, 0.0);
        assert_eq!(net.predict(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn cache_activations_are_exact() {
        let net = crate::trainer::init_random(&[2, 4, 3, 1], ActivationKind::Tanh, 1.0, 5).unwrap();
        let data = generate_teacher_dataset(&net, 7, InputSampler::default(), 3).unwrap();
        let cache = forward(&net, &data).unwrap();
        for l in 1..net.depth() {
            assert_eq!(cache.act[l], cache.pre[l].map(|t| net.activation().value(t)));
        }
        assert!(cache.loss < 1e-24);
        assert_eq!(cache, forward(&net, &data).unwrap());
    }

    #[test]
    fn shape_errors() {
        let net = Network::zeros(&[2, 2, 1], ActivationKind::Sigmoid).unwrap();
        let data = Dataset::from_rows(&[vec![0.0, 1.0, 2.0]], &[0.0]).unwrap();
        assert!(matches!(forward(&net, &data), Err(Error::Shape(_))));
        assert!(Network::zeros(&[2, 1], ActivationKind::Sigmoid).is_err());
        assert!(Network::zeros(&[2, 3, 2], ActivationKind::Sigmoid).is_err());
        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0]], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn teacher_dataset_is_reproducible() {
        let teacher = crate::trainer::init_random(&[2, 5, 5, 1], ActivationKind::Sigmoid, 1.0, 9).unwrap();
        let a = generate_teacher_dataset(&teacher, 20, InputSampler::default(), 11).unwrap();
        let b = generate_teacher_dataset(&teacher, 20, InputSampler::default(), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(loss(&teacher, &a).unwrap(), 0.0);
        let single = generate_teacher_dataset(&teacher, 1, InputSampler::default(), 0).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn json_layout() {
        let net = scalar_net(1.5, -0.5, 2.0, 0.25);
        let json = serde_json::to_string(&net).unwrap();
        assert_eq!(
            json,
            r#"{"dims":[1,1,1],"activation":"sigmoid","weights":[[[1.5]],[[2.0]]],"biases":[[-0.5],[0.25]]}"#
        );
        let back: Network = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        let data = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[5.0, 6.0]).unwrap();
        let json = serde_json::to_string(&data).unwrap();
        assert_eq!(json, r#"{"inputs":[[1.0,2.0],[3.0,4.0]],"targets":[5.0,6.0]}"#);
        assert_eq!(serde_json::from_str::<Dataset>(&json).unwrap(), data);
    }
}
