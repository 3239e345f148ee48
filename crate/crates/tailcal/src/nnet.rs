//! Minimal feedforward-network kernel shared by the network forecasters:
//! dense layers with ReLU or identity activation, a learned 2-D station
//! embedding table, and exact reverse-mode gradients through a recorded
//! tape. No convolutions, no general autodiff; just the shapes used here.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnetError {
    #[error("dimension mismatch: expected input of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer dims disagree: layer {index} takes {takes} but previous emits {emits}")]
    LayerChain { index: usize, takes: usize, emits: usize },
    #[error("unknown station index {0} (table has {1} rows)")]
    UnknownStation(usize, usize),
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
}

pub type Result<T> = std::result::Result<T, NnetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Subgradient at zero is taken as zero for ReLU.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer; weights are stored flat row-major (out_dim x in_dim) but
/// serialize as nested row arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerRepr", try_from = "LayerRepr")]
pub struct Layer {
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
    act: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRepr {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        let weights = l.w.chunks(l.in_dim).map(|r| r.to_vec()).collect();
        LayerRepr { weights, bias: l.b, activation: l.act }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = NnetError;
    fn try_from(r: LayerRepr) -> Result<Self> {
        let out_dim = r.weights.len();
        if out_dim == 0 || r.bias.len() != out_dim {
            return Err(NnetError::BadArchitecture("empty layer or bias mismatch".into()));
        }
        let in_dim = r.weights[0].len();
        if r.weights.iter().any(|row| row.len() != in_dim) {
            return Err(NnetError::BadArchitecture("ragged weight rows".into()));
        }
        let w = r.weights.into_iter().flatten().collect();
        Ok(Layer { w, b: r.bias, in_dim, out_dim, act: r.activation })
    }
}

/// Feedforward network of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Forward intermediates sufficient for exact reverse-mode gradients.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
}

/// Per-layer (weight, bias) gradients with the same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in self.layers.iter_mut() {
            for x in w.iter_mut() {
                *x *= c;
            }
            for x in b.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

impl Mlp {
    /// Zero-initialized network. `dims` gives input and per-layer output
    /// sizes; `acts` one activation per layer.
    pub fn zeros(dims: &[usize], acts: &[Activation]) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(NnetError::BadArchitecture(format!(
                "dims {dims:?} need one activation per layer, got {}",
                acts.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(pair, act)| Layer {
                w: vec![0.0; pair[0] * pair[1]],
                b: vec![0.0; pair[1]],
                in_dim: pair[0],
                out_dim: pair[1],
                act: *act,
            })
            .collect();
        Ok(Self { layers })
    }

    /// Uniform He-style fan-in initialization: U(-sqrt(6/fan_in), +...).
    pub fn he_init<R: Rng + ?Sized>(dims: &[usize], acts: &[Activation], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, acts)?;
        for layer in &mut net.layers {
            let bound = (6.0 / layer.in_dim as f64).sqrt();
            for w in layer.w.iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
    }

    /// Load parameters from a flat slice (layout of `flatten_into`);
    /// returns how many values were consumed.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> usize {
        let mut offset = 0;
        for l in &mut self.layers {
            let wn = l.w.len();
            l.w.copy_from_slice(&flat[offset..offset + wn]);
            offset += wn;
            let bn = l.b.len();
            l.b.copy_from_slice(&flat[offset..offset + bn]);
            offset += bn;
        }
        offset
    }

    /// Mutable access to the final layer's bias (used to seed output-scale
    /// starting values before training).
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let last = self.layers.len() - 1;
        &mut self.layers[last].b
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if input.len() != self.input_dim() {
            return Err(NnetError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut tape = Tape { inputs: Vec::with_capacity(self.layers.len()), pre_acts: Vec::new() };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut pre = layer.b.clone();
            for (i, p) in pre.iter_mut().enumerate() {
                let row = &layer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
                *p += row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
            }
            tape.inputs.push(x);
            x = pre.iter().map(|p| layer.act.apply(*p)).collect();
            tape.pre_acts.push(pre);
        }
        Ok((x, tape))
    }

    /// Exact reverse-mode gradients: parameter gradients plus the gradient
    /// with respect to the network input.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(NnetError::BadArchitecture("tape does not match network".into()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(NnetError::DimensionMismatch {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut g = output_grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre_acts[idx];
            let x = &tape.inputs[idx];
            let (dw, db) = &mut grads.layers[idx];
            let mut dx = vec![0.0; layer.in_dim];
            for i in 0..layer.out_dim {
                let dpre = g[i] * layer.act.derivative(pre[i]);
                db[i] += dpre;
                let row = &layer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
                let drow = &mut dw[i * layer.in_dim..(i + 1) * layer.in_dim];
                for j in 0..layer.in_dim {
                    drow[j] += dpre * x[j];
                    dx[j] += dpre * row[j];
                }
            }
            g = dx;
        }
        Ok((grads, g))
    }
}

// ---------------------------------------------------------------------------
// Station embedding
// ---------------------------------------------------------------------------

pub const EMBED_DIM: usize = 2;

/// Learned 2-D embedding per station; gradients touch only the looked-up row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    rows: Vec<[f64; EMBED_DIM]>,
}

impl EmbeddingTable {
    /// N(0, sd) initialization with sd = 0.1.
    pub fn init<R: Rng + ?Sized>(station_count: usize, rng: &mut R) -> Self {
        let rows = (0..station_count)
            .map(|_| {
                [
                    0.1 * crate::special::norm_quantile(rng.gen::<f64>().max(1e-12)),
                    0.1 * crate::special::norm_quantile(rng.gen::<f64>().max(1e-12)),
                ]
            })
            .collect();
        Self { rows }
    }

    pub fn zeros(station_count: usize) -> Self {
        Self { rows: vec![[0.0; EMBED_DIM]; station_count] }
    }

    pub fn station_count(&self) -> usize {
        self.rows.len()
    }

    pub fn embed(&self, station: usize) -> Result<[f64; EMBED_DIM]> {
        self.rows
            .get(station)
            .copied()
            .ok_or(NnetError::UnknownStation(station, self.rows.len()))
    }

    pub fn param_count(&self) -> usize {
        self.rows.len() * EMBED_DIM
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for row in &self.rows {
            out.extend_from_slice(row);
        }
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> usize {
        for (i, row) in self.rows.iter_mut().enumerate() {
            row[0] = flat[i * EMBED_DIM];
            row[1] = flat[i * EMBED_DIM + 1];
        }
        self.rows.len() * EMBED_DIM
    }
}

/// Row-sparse gradient accumulator matching an [`EmbeddingTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrads {
    pub rows: Vec<[f64; EMBED_DIM]>,
}

impl EmbeddingGrads {
    pub fn zeros_like(table: &EmbeddingTable) -> Self {
        Self { rows: vec![[0.0; EMBED_DIM]; table.station_count()] }
    }

    pub fn accumulate(&mut self, station: usize, grad: [f64; EMBED_DIM]) {
        self.rows[station][0] += grad[0];
        self.rows[station][1] += grad[1];
    }

    pub fn scale(&mut self, c: f64) {
        for row in self.rows.iter_mut() {
            row[0] *= c;
            row[1] *= c;
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for row in &self.rows {
            out.extend_from_slice(row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn zero_network_maps_to_zero() {
        let net = Mlp::zeros(&[3, 4, 2], &[Activation::Relu, Activation::Identity]).unwrap();
        let (out, _) = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        let mut flat = vec![0.0; net.param_count()];
        // Identity weight matrix, zero bias.
        for i in 0..3 {
            flat[i * 3 + i] = 1.0;
        }
        net.set_from_flat(&flat);
        let (out, _) = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn dimension_errors() {
        let net = Mlp::zeros(&[3, 2], &[Activation::Identity]).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NnetError::DimensionMismatch { expected: 3, got: 1 })
        ));
        let (_, tape) = net.forward(&[0.0; 3]).unwrap();
        assert!(net.backward(&tape, &[1.0]).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = StdRng::seed_from_u64(1);
        let net =
            Mlp::he_init(&[2, 4, 1], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let (_, tape) = net.forward(&[0.5, -0.2]).unwrap();
        let (grads, dx) = net.backward(&tape, &[0.0]).unwrap();
        assert!(dx.iter().all(|g| *g == 0.0));
        for (w, b) in &grads.layers {
            assert!(w.iter().chain(b).all(|g| *g == 0.0));
        }
    }

    #[test]
    fn linear_net_input_gradient_is_w_transpose() {
        let mut net = Mlp::zeros(&[2, 2], &[Activation::Identity]).unwrap();
        net.set_from_flat(&[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]); // W = [[1,2],[3,4]]
        let (_, tape) = net.forward(&[0.7, -0.3]).unwrap();
        let (_, dx) = net.backward(&tape, &[1.0, 1.0]).unwrap();
        // dx = W^T g = [1+3, 2+4]
        assert_eq!(dx, vec![4.0, 6.0]);
    }

    #[test]
    fn forward_backward_deterministic() {
        let mut rng = StdRng::seed_from_u64(5);
        let net =
            Mlp::he_init(&[4, 16, 16, 2], &[Activation::Relu, Activation::Relu, Activation::Identity], &mut rng)
                .unwrap();
        let x = [0.2, -0.9, 1.4, 0.01];
        let (o1, t1) = net.forward(&x).unwrap();
        let (o2, t2) = net.forward(&x).unwrap();
        assert_eq!(o1, o2);
        let (g1, d1) = net.backward(&t1, &[1.0, -0.5]).unwrap();
        let (g2, d2) = net.backward(&t2, &[1.0, -0.5]).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn gradients_match_finite_differences_on_random_nets() {
        for seed in 0..10u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut net = Mlp::he_init(
                &[3, 8, 8, 2],
                &[Activation::Relu, Activation::Relu, Activation::Identity],
                &mut rng,
            )
            .unwrap();
            let x = [0.4, -0.7, 1.1];
            // Scalar loss: weighted sum of outputs.
            let loss_of = |net: &Mlp| {
                let (out, _) = net.forward(&x).unwrap();
                1.3 * out[0] - 0.6 * out[1] + 0.5 * out[0] * out[0]
            };
            let (out, tape) = net.forward(&x).unwrap();
            let out_grad = [1.3 + out[0], -0.6];
            let (grads, _) = net.backward(&tape, &out_grad).unwrap();
            let mut analytic = Vec::new();
            grads.flatten_into(&mut analytic);
            let mut flat = Vec::new();
            net.flatten_into(&mut flat);
            let h = 1e-6;
            for k in (0..flat.len()).step_by(7) {
                let orig = flat[k];
                flat[k] = orig + h;
                net.set_from_flat(&flat);
                let up = loss_of(&net);
                flat[k] = orig - h;
                net.set_from_flat(&flat);
                let dn = loss_of(&net);
                flat[k] = orig;
                net.set_from_flat(&flat);
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (analytic[k] - fd).abs() <= 1e-4 * (1.0 + fd.abs()),
                    "seed {seed} param {k}: {} vs {fd}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn embedding_lookup_and_sparsity() {
        let mut rng = StdRng::seed_from_u64(3);
        let table = EmbeddingTable::init(5, &mut rng);
        assert_eq!(table.embed(2).unwrap(), table.embed(2).unwrap());
        assert!(matches!(table.embed(9), Err(NnetError::UnknownStation(9, 5))));
        let mut grads = EmbeddingGrads::zeros_like(&table);
        grads.accumulate(1, [0.5, -0.25]);
        assert_eq!(grads.rows[1], [0.5, -0.25]);
        assert!(grads.rows[0] == [0.0, 0.0] && grads.rows[2] == [0.0, 0.0]);
    }

    #[test]
    fn serde_roundtrip_preserves_network() {
        let mut rng = StdRng::seed_from_u64(9);
        let net =
            Mlp::he_init(&[2, 3, 1], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
        let (a, _) = net.forward(&[0.1, 0.2]).unwrap();
        let (b, _) = back.forward(&[0.1, 0.2]).unwrap();
        assert_eq!(a, b);
    }
}
