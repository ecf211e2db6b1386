//! Feedforward policy architectures and weight parameterizations.
//!
//! A policy is a stack of dense layers with tanh after every layer including
//! the output (environments rescale the bounded output to their action
//! range). The weight matrix between consecutive layers of sizes a and b has
//! shape a×b and maps the incoming activation of dimension a to the next
//! layer of dimension b.
//!
//! Five parameterizations of those matrices are provided:
//! * chromatic: every edge is assigned one of M color classes and all edges
//!   of a class share a single weight from a length-M pool;
//! * Toeplitz: constant diagonals, a+b−1 parameters per matrix;
//! * circulant: cyclic rows of an n×n square (n = max(a,b)) truncated to
//!   a×b, n parameters per matrix;
//! * masked: a dense matrix elementwise-gated by thresholded mask logits;
//! * unstructured: plain dense, a·b parameters.
//!
//! Edge enumeration contract: edges are ordered layer by layer, and row-major
//! (column index fastest) within each a×b matrix. Every partition assignment
//! array, embedding table and wire message indexes edges in this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    layer_dims: Vec<usize>,
}

impl NetworkTopology {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least 2 layers, got {}",
                layer_dims.len()
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidTopology("zero-sized layer".into()));
        }
        Ok(Self { layer_dims })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of weight matrices (consecutive layer pairs).
    pub fn num_weight_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Shape (a, b) of the weight matrix for layer pair `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_dims[l], self.layer_dims[l + 1])
    }

    pub fn edge_count(&self) -> usize {
        (0..self.num_weight_layers())
            .map(|l| {
                let (a, b) = self.layer_shape(l);
                a * b
            })
            .sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layer_dims[1..].iter().sum()
    }

    /// Index of the first edge belonging to layer pair `l`.
    pub fn layer_edge_offset(&self, l: usize) -> usize {
        (0..l)
            .map(|k| {
                let (a, b) = self.layer_shape(k);
                a * b
            })
            .sum()
    }
}

/// Enumerates all edges as (layer_index, row, col) in the canonical order.
pub fn enumerate_edges(topology: &NetworkTopology) -> Vec<(usize, usize, usize)> {
    let mut edges = Vec::with_capacity(topology.edge_count());
    for l in 0..topology.num_weight_layers() {
        let (a, b) = topology.layer_shape(l);
        for row in 0..a {
            for col in 0..b {
                edges.push((l, row, col));
            }
        }
    }
    edges
}

/// A mapping from every edge to one of `num_partitions` color classes.
/// Not required to be surjective; the distinct-parameter count reported for a
/// chromatic policy is `num_partitions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partitioning {
    num_partitions: usize,
    assignment: Vec<usize>,
}

impl Partitioning {
    pub fn new(num_partitions: usize, assignment: Vec<usize>) -> Result<Self> {
        if num_partitions == 0 {
            return Err(Error::InvalidArgument("num_partitions must be >= 1".into()));
        }
        if let Some(&bad) = assignment.iter().find(|&&c| c >= num_partitions) {
            return Err(Error::InvalidArgument(format!(
                "color {bad} out of range for {num_partitions} partitions"
            )));
        }
        Ok(Self {
            num_partitions,
            assignment,
        })
    }

    /// Uniform random assignment over `topology`'s edges.
    pub fn random_uniform(
        num_partitions: usize,
        topology: &NetworkTopology,
        rng: &mut crate::rng::SplitMix64,
    ) -> Self {
        let assignment = (0..topology.edge_count())
            .map(|_| rng.next_usize(num_partitions))
            .collect();
        Self {
            num_partitions,
            assignment,
        }
    }

    pub fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn validate_for(&self, topology: &NetworkTopology) -> Result<()> {
        if self.assignment.len() != topology.edge_count() {
            return Err(Error::DimensionMismatch {
                what: "partition assignment",
                expected: topology.edge_count(),
                got: self.assignment.len(),
            });
        }
        Ok(())
    }

    /// Number of edges per color, length `num_partitions`.
    pub fn color_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_partitions];
        for &c in &self.assignment {
            counts[c] += 1;
        }
        counts
    }
}

/// The length-M vector of distinct weight values plus per-layer bias vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedWeightPool {
    pub weights: Vec<f64>,
    pub biases: Vec<Vec<f64>>,
}

impl SharedWeightPool {
    pub fn zeros(num_partitions: usize, topology: &NetworkTopology) -> Self {
        Self {
            weights: vec![0.0; num_partitions],
            biases: topology.layer_dims()[1..]
                .iter()
                .map(|&d| vec![0.0; d])
                .collect(),
        }
    }

    pub fn validate_for(&self, partitioning: &Partitioning, topology: &NetworkTopology) -> Result<()> {
        if self.weights.len() != partitioning.num_partitions() {
            return Err(Error::DimensionMismatch {
                what: "shared weight pool",
                expected: partitioning.num_partitions(),
                got: self.weights.len(),
            });
        }
        if self.biases.len() != topology.num_weight_layers() {
            return Err(Error::DimensionMismatch {
                what: "bias vectors",
                expected: topology.num_weight_layers(),
                got: self.biases.len(),
            });
        }
        for (l, b) in self.biases.iter().enumerate() {
            if b.len() != topology.layer_dims()[l + 1] {
                return Err(Error::DimensionMismatch {
                    what: "bias vector",
                    expected: topology.layer_dims()[l + 1],
                    got: b.len(),
                });
            }
        }
        if !self.weights.iter().all(|w| w.is_finite())
            || !self.biases.iter().flatten().all(|b| b.is_finite())
        {
            return Err(Error::NonFinite("shared weight pool".into()));
        }
        Ok(())
    }

    /// Flattens the trainable parameters: pool weights first, then biases in
    /// layer order. This is the ES parameter ordering.
    pub fn param_vector(&self, include_biases: bool) -> Vec<f64> {
        let mut v = self.weights.clone();
        if include_biases {
            for b in &self.biases {
                v.extend_from_slice(b);
            }
        }
        v
    }

    pub fn param_dim(&self, include_biases: bool) -> usize {
        self.weights.len()
            + if include_biases {
                self.biases.iter().map(Vec::len).sum()
            } else {
                0
            }
    }

    /// Returns a copy with `scale * delta` added to the flattened parameters.
    pub fn with_offset(&self, delta: &[f64], scale: f64, include_biases: bool) -> Result<Self> {
        if delta.len() != self.param_dim(include_biases) {
            return Err(Error::DimensionMismatch {
                what: "parameter offset",
                expected: self.param_dim(include_biases),
                got: delta.len(),
            });
        }
        let mut out = self.clone();
        let mut k = 0;
        for w in &mut out.weights {
            *w += scale * delta[k];
            k += 1;
        }
        if include_biases {
            for b in &mut out.biases {
                for v in b.iter_mut() {
                    *v += scale * delta[k];
                    k += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Realizes the dense weight matrices selected by a partitioning: the entry
/// for edge e is `pool.weights[partitioning.assignment[e]]`.
pub fn build_weight_matrices(
    topology: &NetworkTopology,
    partitioning: &Partitioning,
    pool: &SharedWeightPool,
) -> Result<Vec<Matrix>> {
    partitioning.validate_for(topology)?;
    pool.validate_for(partitioning, topology)?;
    let assignment = partitioning.assignment();
    let mut matrices = Vec::with_capacity(topology.num_weight_layers());
    let mut e = 0;
    for l in 0..topology.num_weight_layers() {
        let (a, b) = topology.layer_shape(l);
        let mut m = Matrix::zeros(a, b);
        for row in 0..a {
            for col in 0..b {
                m.set(row, col, pool.weights[assignment[e]]);
                e += 1;
            }
        }
        matrices.push(m);
    }
    Ok(matrices)
}

fn check_observation(obs: &[f64], expected: usize) -> Result<()> {
    if obs.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "observation",
            expected,
            got: obs.len(),
        });
    }
    if !obs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("observation".into()));
    }
    Ok(())
}

/// Dense forward pass: x ← tanh(xW + b) through every layer, output layer
/// included.
pub fn forward_dense(matrices: &[Matrix], biases: &[Vec<f64>], obs: &[f64]) -> Vec<f64> {
    let mut x = obs.to_vec();
    for (m, b) in matrices.iter().zip(biases) {
        let mut y = m.apply(&x);
        for (v, bias) in y.iter_mut().zip(b) {
            *v = (*v + bias).tanh();
        }
        x = y;
    }
    x
}

/// Full forward pass of a chromatic policy.
pub fn chromatic_forward(
    topology: &NetworkTopology,
    partitioning: &Partitioning,
    pool: &SharedWeightPool,
    observation: &[f64],
) -> Result<Vec<f64>> {
    check_observation(observation, topology.input_dim())?;
    let matrices = build_weight_matrices(topology, partitioning, pool)?;
    Ok(forward_dense(&matrices, &pool.biases, observation))
}

/// A policy with its matrices realized once, for repeated forward passes
/// inside a rollout.
#[derive(Debug, Clone)]
pub struct ReadyPolicy {
    matrices: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

impl ReadyPolicy {
    pub fn new(matrices: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Self {
        Self { matrices, biases }
    }

    pub fn chromatic(
        topology: &NetworkTopology,
        partitioning: &Partitioning,
        pool: &SharedWeightPool,
    ) -> Result<Self> {
        Ok(Self {
            matrices: build_weight_matrices(topology, partitioning, pool)?,
            biases: pool.biases.clone(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.matrices.last().unwrap().cols()
    }

    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        check_observation(obs, self.input_dim())?;
        Ok(forward_dense(&self.matrices, &self.biases, obs))
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }
}

/// One layer of a partitioning with per-color edge lists precomputed, so a
/// matrix-vector product can be taken directly on the compressed
/// representation: y[j] = Σ_c w_c · (Σ_{e ∈ color c, col(e)=j} x[row(e)]).
#[derive(Debug, Clone)]
pub struct ColorGroupedLayer {
    in_dim: usize,
    out_dim: usize,
    edges_by_color: Vec<Vec<(usize, usize)>>,
}

impl ColorGroupedLayer {
    pub fn new(topology: &NetworkTopology, partitioning: &Partitioning, layer: usize) -> Result<Self> {
        partitioning.validate_for(topology)?;
        let (a, b) = topology.layer_shape(layer);
        let offset = topology.layer_edge_offset(layer);
        let mut edges_by_color = vec![Vec::new(); partitioning.num_partitions()];
        let assignment = partitioning.assignment();
        for row in 0..a {
            for col in 0..b {
                let color = assignment[offset + row * b + col];
                edges_by_color[color].push((row, col));
            }
        }
        Ok(Self {
            in_dim: a,
            out_dim: b,
            edges_by_color,
        })
    }

    /// Matrix-vector product against the realized matrix, computed as
    /// per-color column sums scaled by the color's pooled weight.
    pub fn matvec(&self, pool_weights: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                what: "matvec input",
                expected: self.in_dim,
                got: x.len(),
            });
        }
        if pool_weights.len() != self.edges_by_color.len() {
            return Err(Error::DimensionMismatch {
                what: "pool weights",
                expected: self.edges_by_color.len(),
                got: pool_weights.len(),
            });
        }
        let mut y = vec![0.0; self.out_dim];
        let mut col_sums = vec![0.0; self.out_dim];
        for (edges, &w) in self.edges_by_color.iter().zip(pool_weights) {
            if edges.is_empty() {
                continue;
            }
            col_sums.iter_mut().for_each(|v| *v = 0.0);
            for &(row, col) in edges {
                col_sums[col] += x[row];
            }
            for (yv, s) in y.iter_mut().zip(&col_sums) {
                *yv += w * s;
            }
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------
// Structured baselines
// ---------------------------------------------------------------------------

/// Number of free parameters of an a×b Toeplitz matrix.
pub fn toeplitz_param_count(a: usize, b: usize) -> usize {
    a + b - 1
}

/// Builds an a×b Toeplitz matrix. The first row reads params[0..b], the first
/// column reads params[0], params[b..]; every diagonal is constant.
pub fn toeplitz_build(a: usize, b: usize, params: &[f64]) -> Result<Matrix> {
    if a == 0 || b == 0 {
        return Err(Error::InvalidArgument("toeplitz dims must be >= 1".into()));
    }
    if params.len() != toeplitz_param_count(a, b) {
        return Err(Error::DimensionMismatch {
            what: "toeplitz params",
            expected: toeplitz_param_count(a, b),
            got: params.len(),
        });
    }
    Ok(Matrix::from_fn(a, b, |i, j| {
        if j >= i {
            params[j - i]
        } else {
            params[b + (i - j) - 1]
        }
    }))
}

/// Number of free parameters of an a×b circulant matrix: max(a, b).
pub fn circulant_param_count(a: usize, b: usize) -> usize {
    a.max(b)
}

/// Builds an a×b circulant matrix: the n×n square (n = max(a,b)) has row i
/// equal to row 0 cyclically right-shifted by i, and the result is its
/// top-left a×b block.
pub fn circulant_build(a: usize, b: usize, params: &[f64]) -> Result<Matrix> {
    if a == 0 || b == 0 {
        return Err(Error::InvalidArgument("circulant dims must be >= 1".into()));
    }
    let n = circulant_param_count(a, b);
    if params.len() != n {
        return Err(Error::DimensionMismatch {
            what: "circulant params",
            expected: n,
            got: params.len(),
        });
    }
    Ok(Matrix::from_fn(a, b, |i, j| params[(j + n - i % n) % n]))
}

/// Total weight parameters of a dense network: Σ a·b over layer pairs.
/// Biases are excluded from all weight-parameter counts.
pub fn unstructured_param_count(topology: &NetworkTopology) -> usize {
    topology.edge_count()
}

/// Σ (a+b−1) over layer pairs.
pub fn toeplitz_total_param_count(topology: &NetworkTopology) -> usize {
    (0..topology.num_weight_layers())
        .map(|l| {
            let (a, b) = topology.layer_shape(l);
            toeplitz_param_count(a, b)
        })
        .sum()
}

/// Σ max(a,b) over layer pairs.
pub fn circulant_total_param_count(topology: &NetworkTopology) -> usize {
    (0..topology.num_weight_layers())
        .map(|l| {
            let (a, b) = topology.layer_shape(l);
            circulant_param_count(a, b)
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Masked policies
// ---------------------------------------------------------------------------

/// Dense weights gated by per-entry mask logits. A gate opens when
/// logistic(logit / alpha) rounds to 1, i.e. exactly when the logit is
/// non-negative; at the default alpha = 0.01 the logistic is effectively a
/// step function, so the rounded gate is the function the policy computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedPolicyState {
    pub dense_weights: Vec<Matrix>,
    pub mask_logits: Vec<Matrix>,
    pub alpha: f64,
    pub beta: f64,
}

impl MaskedPolicyState {
    pub fn validate(&self, topology: &NetworkTopology) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::InvalidArgument("alpha must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument("beta must be in [0, 1]".into()));
        }
        if self.dense_weights.len() != topology.num_weight_layers()
            || self.mask_logits.len() != topology.num_weight_layers()
        {
            return Err(Error::DimensionMismatch {
                what: "masked layers",
                expected: topology.num_weight_layers(),
                got: self.dense_weights.len(),
            });
        }
        for (l, (w, s)) in self.dense_weights.iter().zip(&self.mask_logits).enumerate() {
            let (a, b) = topology.layer_shape(l);
            for (name, m) in [("dense", w), ("mask", s)] {
                if (m.rows(), m.cols()) != (a, b) {
                    return Err(Error::InvalidTopology(format!(
                        "{name} matrix for layer {l} has shape {}x{}, expected {a}x{b}",
                        m.rows(),
                        m.cols()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The effective (gated) weight matrices.
    pub fn effective_matrices(&self) -> Vec<Matrix> {
        self.dense_weights
            .iter()
            .zip(&self.mask_logits)
            .map(|(w, s)| {
                Matrix::from_fn(w.rows(), w.cols(), |i, j| {
                    w.get(i, j) * gate(s.get(i, j), self.alpha)
                })
            })
            .collect()
    }
}

/// Binarized gate: logistic(logit / alpha) rounded at 0.5, which is 1 exactly
/// when the logit is non-negative.
fn gate(logit: f64, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0);
    if logit >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Forward pass through the gated network.
pub fn masked_forward(
    state: &MaskedPolicyState,
    topology: &NetworkTopology,
    biases: &[Vec<f64>],
    observation: &[f64],
) -> Result<Vec<f64>> {
    state.validate(topology)?;
    check_observation(observation, topology.input_dim())?;
    Ok(forward_dense(&state.effective_matrices(), biases, observation))
}

/// Number of open gates and eta, the fraction of gates that are open.
pub fn masked_effective_params(state: &MaskedPolicyState) -> (usize, f64) {
    let mut active = 0usize;
    let mut total = 0usize;
    for s in &state.mask_logits {
        for &v in s.data() {
            total += 1;
            if gate(v, state.alpha) == 1.0 {
                active += 1;
            }
        }
    }
    let eta = if total == 0 {
        0.0
    } else {
        active as f64 / total as f64
    };
    (active, eta)
}

/// Combined sparsity-rewarding objective: beta·R + (1−beta)·(1−eta).
/// R and (1−eta) are expected to be batch-normalized by the caller before
/// the combination.
pub fn masked_objective(reward_normalized: f64, eta: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
    }
    Ok(beta * reward_normalized + (1.0 - beta) * (1.0 - eta))
}

// ---------------------------------------------------------------------------
// Parameter and bits accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Chromatic,
    Masked,
    Toeplitz,
    Circulant,
    Unstructured,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyKind::Chromatic => "chromatic",
            PolicyKind::Masked => "masked",
            PolicyKind::Toeplitz => "toeplitz",
            PolicyKind::Circulant => "circulant",
            PolicyKind::Unstructured => "unstructured",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chromatic" => Ok(PolicyKind::Chromatic),
            "masked" => Ok(PolicyKind::Masked),
            "toeplitz" => Ok(PolicyKind::Toeplitz),
            "circulant" => Ok(PolicyKind::Circulant),
            "unstructured" => Ok(PolicyKind::Unstructured),
            other => Err(Error::InvalidArgument(format!("unknown policy kind `{other}`"))),
        }
    }
}

pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// Serialized policy specification; the on-disk `final_policy.json` format.
///
/// Field layout by kind:
/// * chromatic: `M`, `assignment` and the length-M `weights` pool;
/// * toeplitz / circulant: `weights` holds each layer's parameter vector
///   concatenated in layer order;
/// * unstructured: `weights` holds each layer's row-major entries;
/// * masked: `weights` holds the gated (effective) dense entries, row-major,
///   so evaluation does not need the mask logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub schema_version: u32,
    pub kind: PolicyKind,
    pub layer_dims: Vec<usize>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none", default)]
    pub num_partitions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub assignment: Option<Vec<usize>>,
    pub weights: Vec<f64>,
    pub biases: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
}

impl PolicySpec {
    /// Realizes the policy for evaluation.
    pub fn instantiate(&self) -> Result<ReadyPolicy> {
        if self.schema_version != POLICY_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "policy schema version {} not supported (expected {POLICY_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let topology = NetworkTopology::new(self.layer_dims.clone())?;
        if self.biases.len() != topology.num_weight_layers() {
            return Err(Error::DimensionMismatch {
                what: "policy biases",
                expected: topology.num_weight_layers(),
                got: self.biases.len(),
            });
        }
        let matrices = match self.kind {
            PolicyKind::Chromatic => {
                let m = self.num_partitions.ok_or_else(|| {
                    Error::InvalidArgument("chromatic policy needs M".into())
                })?;
                let assignment = self.assignment.clone().ok_or_else(|| {
                    Error::InvalidArgument("chromatic policy needs an assignment".into())
                })?;
                let partitioning = Partitioning::new(m, assignment)?;
                let pool = SharedWeightPool {
                    weights: self.weights.clone(),
                    biases: self.biases.clone(),
                };
                build_weight_matrices(&topology, &partitioning, &pool)?
            }
            PolicyKind::Toeplitz | PolicyKind::Circulant => {
                let mut matrices = Vec::new();
                let mut offset = 0;
                for l in 0..topology.num_weight_layers() {
                    let (a, b) = topology.layer_shape(l);
                    let count = match self.kind {
                        PolicyKind::Toeplitz => toeplitz_param_count(a, b),
                        _ => circulant_param_count(a, b),
                    };
                    if offset + count > self.weights.len() {
                        return Err(Error::DimensionMismatch {
                            what: "structured policy weights",
                            expected: offset + count,
                            got: self.weights.len(),
                        });
                    }
                    let params = &self.weights[offset..offset + count];
                    matrices.push(match self.kind {
                        PolicyKind::Toeplitz => toeplitz_build(a, b, params)?,
                        _ => circulant_build(a, b, params)?,
                    });
                    offset += count;
                }
                if offset != self.weights.len() {
                    return Err(Error::DimensionMismatch {
                        what: "structured policy weights",
                        expected: offset,
                        got: self.weights.len(),
                    });
                }
                matrices
            }
            PolicyKind::Unstructured | PolicyKind::Masked => {
                if self.weights.len() != topology.edge_count() {
                    return Err(Error::DimensionMismatch {
                        what: "dense policy weights",
                        expected: topology.edge_count(),
                        got: self.weights.len(),
                    });
                }
                let mut matrices = Vec::new();
                let mut offset = 0;
                for l in 0..topology.num_weight_layers() {
                    let (a, b) = topology.layer_shape(l);
                    let slice = &self.weights[offset..offset + a * b];
                    matrices.push(Matrix::from_fn(a, b, |i, j| slice[i * b + j]));
                    offset += a * b;
                }
                matrices
            }
        };
        for (l, bias) in self.biases.iter().enumerate() {
            if bias.len() != topology.layer_dims()[l + 1] {
                return Err(Error::DimensionMismatch {
                    what: "policy bias vector",
                    expected: topology.layer_dims()[l + 1],
                    got: bias.len(),
                });
            }
        }
        Ok(ReadyPolicy::new(matrices, self.biases.clone()))
    }
}

fn ceil_log2(m: usize) -> u64 {
    debug_assert!(m >= 1);
    if m <= 1 {
        0
    } else {
        (usize::BITS - (m - 1).leading_zeros()) as u64
    }
}

/// Storage estimate in bits, assuming 32-bit floats for real values.
/// Chromatic policies additionally store ceil(log2 M) bits per edge for the
/// color dictionary; masked policies one mask bit per edge. `distinct` is M
/// for chromatic, the number of open gates for masked, and the weight
/// parameter count for the other kinds. This is this crate's accounting
/// convention, stated here in full so the numbers are reproducible.
pub fn bits_estimate(kind: PolicyKind, topology: &NetworkTopology, distinct: usize) -> u64 {
    let bias = topology.bias_count() as u64;
    let edges = topology.edge_count() as u64;
    match kind {
        PolicyKind::Chromatic => 32 * (distinct as u64 + bias) + edges * ceil_log2(distinct),
        PolicyKind::Masked => 32 * (distinct as u64 + bias) + edges,
        PolicyKind::Toeplitz | PolicyKind::Circulant | PolicyKind::Unstructured => {
            32 * (distinct as u64 + bias)
        }
    }
}
