//! MLP definitions for the conditional generator, the critic, and the
//! multi-label classifier.
//!
//! All three are plain feed-forward networks with ReLU hidden layers. The
//! generator ends in a sigmoid so its rows live in (0,1)ⁿ; the critic ends
//! in an identity layer so it can score arbitrarily; the classifier ends
//! in a sigmoid like the generator.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamBinding, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

/// Layer sizes and output activation of one MLP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        input: usize,
        hidden: Vec<usize>,
        output: usize,
        activation: OutputActivation,
    ) -> Result<Self> {
        if input == 0 || output == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument(
                "MLP layer sizes must be positive".into(),
            ));
        }
        Ok(MlpSpec {
            input,
            hidden,
            output,
            activation,
        })
    }

    /// Conditional generator: condition width n in, item scores n out.
    pub fn generator(n_items: usize, hidden: Vec<usize>) -> Result<Self> {
        MlpSpec::new(n_items, hidden, n_items, OutputActivation::Sigmoid)
    }

    /// Critic over concat(condition, vector): width 2n in, scalar out.
    pub fn discriminator(n_items: usize, hidden: Vec<usize>) -> Result<Self> {
        MlpSpec::new(2 * n_items, hidden, 1, OutputActivation::Identity)
    }

    /// Multi-label classifier: same shape as the generator.
    pub fn mlc(n_items: usize, hidden: Vec<usize>) -> Result<Self> {
        MlpSpec::new(n_items, hidden, n_items, OutputActivation::Sigmoid)
    }

    /// (fan_in, fan_out) per affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.output);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("w{layer}")
}

pub fn bias_name(layer: usize) -> String {
    format!("b{layer}")
}

/// Uniform ±sqrt(6/(fan_in+fan_out)) weights, zero biases, deterministic
/// for a given (seed, stream).
pub fn init_params(spec: &MlpSpec, seed: u64, stream: Stream) -> Result<ParamSet> {
    let mut rng = rng::stream(seed, stream, &[]);
    let mut params = ParamSet::new();
    for (layer, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        params.insert(weight_name(layer), Tensor::new(vec![fan_in, fan_out], data)?)?;
        params.insert(bias_name(layer), Tensor::zeros(&[fan_out]))?;
    }
    Ok(params)
}

/// Forward pass through the stack of affine layers. `hidden_mask`, when
/// present, is multiplied onto every hidden activation (dropout).
fn mlp_forward(
    g: &mut Graph,
    spec: &MlpSpec,
    binding: &ParamBinding,
    input: NodeId,
    hidden_mask: Option<&[NodeId]>,
) -> Result<NodeId> {
    let width = g.value(input).dim1();
    if width != spec.input {
        return Err(Error::ShapeMismatch {
            op: "mlp_forward",
            lhs: g.value(input).shape().to_vec(),
            rhs: vec![spec.input],
        });
    }
    let n_layers = spec.n_layers();
    let mut h = input;
    for layer in 0..n_layers {
        let w = binding.node(&weight_name(layer))?;
        let b = binding.node(&bias_name(layer))?;
        let z = g.affine(h, w, b)?;
        let last = layer == n_layers - 1;
        h = if last {
            match spec.activation {
                OutputActivation::Sigmoid => g.sigmoid(z)?,
                OutputActivation::Identity => z,
            }
        } else {
            let act = g.relu(z)?;
            match hidden_mask {
                Some(masks) => g.mul(act, masks[layer])?,
                None => act,
            }
        };
    }
    Ok(h)
}

/// x̂ = G(c): batch of condition rows in, batch of (0,1)ⁿ rows out.
pub fn generator_forward(
    g: &mut Graph,
    spec: &MlpSpec,
    binding: &ParamBinding,
    condition: NodeId,
) -> Result<NodeId> {
    if spec.activation != OutputActivation::Sigmoid {
        return Err(Error::InvalidArgument(
            "generator must end in a sigmoid".into(),
        ));
    }
    mlp_forward(g, spec, binding, condition, None)
}

/// The critic consumes concat(condition, vector) — condition first; the
/// order is fixed and must match between training and any reload. Its
/// first-layer weight is stored as two row blocks ("w0c" over the
/// condition, "w0v" over the vector), so z0 = c·W0c + v·W0v + b0, which
/// equals the concatenated product but lets one graph score several
/// vectors against the same condition without recomputing c·W0c.
#[derive(Debug, Clone, Copy)]
pub struct CriticGraph {
    cond_proj: NodeId,
}

/// Uniform init drawn exactly as one (2n × h) fan-based block, then split
/// into the condition/vector row blocks.
pub fn init_discriminator_params(spec: &MlpSpec, seed: u64, stream: Stream) -> Result<ParamSet> {
    if spec.input % 2 != 0 || spec.activation != OutputActivation::Identity || spec.hidden.is_empty()
    {
        return Err(Error::InvalidArgument(
            "discriminator spec must have identity output, even input width, and a hidden layer"
                .into(),
        ));
    }
    let n = spec.input / 2;
    let mut rng = rng::stream(seed, stream, &[]);
    let mut params = ParamSet::new();
    for (layer, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        if layer == 0 {
            params.insert("w0c", Tensor::new(vec![n, fan_out], data[..n * fan_out].to_vec())?)?;
            params.insert("w0v", Tensor::new(vec![n, fan_out], data[n * fan_out..].to_vec())?)?;
        } else {
            params.insert(weight_name(layer), Tensor::new(vec![fan_in, fan_out], data)?)?;
        }
        params.insert(bias_name(layer), Tensor::zeros(&[fan_out]))?;
    }
    Ok(params)
}

/// Fix the condition once for this graph; `critic_score` then scores any
/// number of vectors against it.
pub fn critic_graph(
    g: &mut Graph,
    spec: &MlpSpec,
    binding: &ParamBinding,
    condition: NodeId,
) -> Result<CriticGraph> {
    let n = spec.input / 2;
    if g.value(condition).dim1() != n {
        return Err(Error::ShapeMismatch {
            op: "critic_graph",
            lhs: g.value(condition).shape().to_vec(),
            rhs: vec![n],
        });
    }
    let w0c = binding.node("w0c")?;
    let cond_proj = g.matmul(condition, w0c)?;
    Ok(CriticGraph { cond_proj })
}

/// One scalar per batch row, shape [rows, 1].
pub fn critic_score(
    g: &mut Graph,
    spec: &MlpSpec,
    binding: &ParamBinding,
    cache: &CriticGraph,
    vector: NodeId,
) -> Result<NodeId> {
    let n = spec.input / 2;
    if g.value(vector).dim1() != n {
        return Err(Error::ShapeMismatch {
            op: "critic_score",
            lhs: g.value(vector).shape().to_vec(),
            rhs: vec![n],
        });
    }
    let w0v = binding.node("w0v")?;
    let b0 = binding.node(&bias_name(0))?;
    let v_proj = g.matmul(vector, w0v)?;
    let z0 = g.add(v_proj, cache.cond_proj)?;
    let z0 = g.add_bias(z0, b0)?;
    let mut h = g.relu(z0)?;
    let n_layers = spec.n_layers();
    for layer in 1..n_layers {
        let w = binding.node(&weight_name(layer))?;
        let b = binding.node(&bias_name(layer))?;
        let z = g.affine(h, w, b)?;
        h = if layer == n_layers - 1 { z } else { g.relu(z)? };
    }
    Ok(h)
}

/// D(v | c) in one call; batching several scores against one condition is
/// cheaper through `critic_graph` + `critic_score`.
pub fn discriminator_forward(
    g: &mut Graph,
    spec: &MlpSpec,
    binding: &ParamBinding,
    vector: NodeId,
    condition: NodeId,
) -> Result<NodeId> {
    let cache = critic_graph(g, spec, binding, condition)?;
    critic_score(g, spec, binding, &cache, vector)
}

/// M(c) with optional dropout masks on the hidden activations.
pub fn mlc_forward(
    g: &mut Graph,
    spec: &MlpSpec,
    binding: &ParamBinding,
    condition: NodeId,
    hidden_mask: Option<&[NodeId]>,
) -> Result<NodeId> {
    mlp_forward(g, spec, binding, condition, hidden_mask)
}

/// Plain-tensor generator scores for evaluation: no graph bookkeeping
/// beyond one forward pass.
pub fn forward_values(
    spec: &MlpSpec,
    params: &ParamSet,
    input_rows: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let binding = params.bind(&mut g)?;
    let x = g.constant(Tensor::from_rows(input_rows)?)?;
    let out = mlp_forward(&mut g, spec, &binding, x, None)?;
    let v = g.value(out);
    let n = v.dim1();
    Ok(v.data().chunks(n).map(|c| c.to_vec()).collect())
}
