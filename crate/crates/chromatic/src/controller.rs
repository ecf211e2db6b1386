//! Autoregressive recurrent controller over edge partitionings.
//!
//! The controller is a decoder-only LSTM (single layer, hidden size 64) that
//! emits one color decision per edge in the canonical edge order. The input
//! at step t is the concatenation of a trained per-edge embedding and the
//! embedding of the previous step's choice (a trained start token at t = 0),
//! so each decision is fed back as the next step's input. Logits are the
//! output projection of the hidden state divided by the temperature.
//!
//! Training is REINFORCE with a moving-average critic baseline and an entropy
//! bonus. The gradient of the surrogate
//!
//!   J(θ) = (1/k) Σ_i (R_i − b) · log π_θ(P_i) + w · (1/k) Σ_i H_i(θ)
//!
//! is computed by exact backpropagation through the decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::topology::Partitioning;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub entropy_weight: f64,
    pub critic_decay: f64,
    pub temperature: f64,
    pub optimizer: OptimizerKind,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 64,
            learning_rate: 0.001,
            entropy_weight: 0.3,
            critic_decay: 0.99,
            temperature: 1.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// A batch of sampled partitionings with their exact log-probabilities and
/// per-sample entropies (sum of per-step categorical entropies, in nats).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleBatch {
    pub partitionings: Vec<Partitioning>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.partitionings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitionings.is_empty()
    }
}

/// Offsets of the parameter blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    hidden: usize,
    embed: usize,
    input: usize,
    edges: usize,
    colors: usize,
    wx: usize,
    wh: usize,
    b: usize,
    v_edge: usize,
    v_part: usize,
    start: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(edges: usize, colors: usize, embed: usize, hidden: usize) -> Self {
        let input = 2 * embed;
        let wx = 0;
        let wh = wx + 4 * hidden * input;
        let b = wh + 4 * hidden * hidden;
        let v_edge = b + 4 * hidden;
        let v_part = v_edge + edges * embed;
        let start = v_part + colors * embed;
        let w_out = start + embed;
        let b_out = w_out + colors * hidden;
        let total = b_out + colors;
        Self {
            hidden,
            embed,
            input,
            edges,
            colors,
            wx,
            wh,
            b,
            v_edge,
            v_part,
            start,
            w_out,
            b_out,
            total,
        }
    }
}

/// Per-step activations kept for backpropagation.
struct StepTrace {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_g: Vec<f64>,
    gate_o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
    entropy: f64,
    choice: usize,
}

enum Decode<'a> {
    Sample(&'a mut SplitMix64),
    Forced(&'a [usize]),
}

struct SeqOutcome {
    choices: Vec<usize>,
    log_prob: f64,
    entropy: f64,
    step_probs: Vec<f64>,
    trace: Option<Vec<StepTrace>>,
}

/// Parameters of the autoregressive sampler plus the critic baseline and
/// optimizer state. Sampling and log-probability evaluation treat the state
/// as immutable; only `controller_update` mutates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    edge_count: usize,
    num_partitions: usize,
    pub cfg: ControllerConfig,
    params: Vec<f64>,
    pub baseline: f64,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_step: u64,
}

impl ControllerState {
    pub fn new(edge_count: usize, num_partitions: usize, cfg: ControllerConfig, seed: u64) -> Result<Self> {
        if edge_count == 0 || num_partitions == 0 {
            return Err(Error::InvalidArgument(
                "controller needs edge_count >= 1 and num_partitions >= 1".into(),
            ));
        }
        if !cfg.temperature.is_finite() || cfg.temperature <= 0.0 {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        let layout = Layout::new(edge_count, num_partitions, cfg.embed_dim, cfg.hidden_dim);
        let mut rng = SplitMix64::new(seed);
        let mut params = vec![0.0; layout.total];
        // Recurrent cell: small uniform around ±1/sqrt(hidden).
        let cell_scale = 1.0 / (cfg.hidden_dim as f64).sqrt();
        for v in &mut params[layout.wx..layout.v_edge] {
            *v = rng.next_range(-cell_scale, cell_scale);
        }
        // Embeddings and output projection: uniform(-0.1, 0.1); output bias 0.
        for v in &mut params[layout.v_edge..layout.w_out] {
            *v = rng.next_range(-0.1, 0.1);
        }
        for v in &mut params[layout.w_out..layout.b_out] {
            *v = rng.next_range(-0.1, 0.1);
        }
        Ok(Self {
            edge_count,
            num_partitions,
            cfg,
            params,
            baseline: 0.0,
            adam_m: vec![0.0; layout.total],
            adam_v: vec![0.0; layout.total],
            adam_step: 0,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access for gradient checks and test setups.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes the output projection so every step's distribution is uniform.
    pub fn zero_output_projection(&mut self) {
        let layout = self.layout();
        for v in &mut self.params[layout.w_out..layout.total] {
            *v = 0.0;
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(
            self.edge_count,
            self.num_partitions,
            self.cfg.embed_dim,
            self.cfg.hidden_dim,
        )
    }

    fn run_sequence(&self, mut decode: Decode<'_>, with_trace: bool) -> SeqOutcome {
        let l = self.layout();
        let p = &self.params;
        let hidden = l.hidden;
        let colors = l.colors;

        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut choices = Vec::with_capacity(l.edges);
        let mut log_prob = 0.0;
        let mut entropy_total = 0.0;
        let mut step_probs = Vec::with_capacity(l.edges);
        let mut trace = if with_trace {
            Some(Vec::with_capacity(l.edges))
        } else {
            None
        };

        for t in 0..l.edges {
            // Input: edge embedding and previous choice (or start token).
            let mut x = vec![0.0; l.input];
            x[..l.embed].copy_from_slice(&p[l.v_edge + t * l.embed..l.v_edge + (t + 1) * l.embed]);
            if t == 0 {
                x[l.embed..].copy_from_slice(&p[l.start..l.start + l.embed]);
            } else {
                let prev = choices[t - 1];
                x[l.embed..]
                    .copy_from_slice(&p[l.v_part + prev * l.embed..l.v_part + (prev + 1) * l.embed]);
            }

            // z = Wx·x + Wh·h + b, gates in (i, f, g, o) order.
            let mut z = vec![0.0; 4 * hidden];
            for r in 0..4 * hidden {
                let mut acc = p[l.b + r];
                let wx_row = &p[l.wx + r * l.input..l.wx + (r + 1) * l.input];
                for (wv, xv) in wx_row.iter().zip(&x) {
                    acc += wv * xv;
                }
                let wh_row = &p[l.wh + r * hidden..l.wh + (r + 1) * hidden];
                for (wv, hv) in wh_row.iter().zip(&h) {
                    acc += wv * hv;
                }
                z[r] = acc;
            }
            let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
            let gate_i: Vec<f64> = z[..hidden].iter().map(|&v| sigmoid(v)).collect();
            let gate_f: Vec<f64> = z[hidden..2 * hidden].iter().map(|&v| sigmoid(v)).collect();
            let gate_g: Vec<f64> = z[2 * hidden..3 * hidden].iter().map(|&v| v.tanh()).collect();
            let gate_o: Vec<f64> = z[3 * hidden..].iter().map(|&v| sigmoid(v)).collect();

            let c_prev = c.clone();
            let h_prev = h.clone();
            for k in 0..hidden {
                c[k] = gate_f[k] * c_prev[k] + gate_i[k] * gate_g[k];
            }
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            for k in 0..hidden {
                h[k] = gate_o[k] * tanh_c[k];
            }

            // Logits = projection(hidden) / temperature, then softmax.
            let mut logits = vec![0.0; colors];
            for (m, logit) in logits.iter_mut().enumerate() {
                let mut acc = p[l.b_out + m];
                let row = &p[l.w_out + m * hidden..l.w_out + (m + 1) * hidden];
                for (wv, hv) in row.iter().zip(&h) {
                    acc += wv * hv;
                }
                *logit = acc / self.cfg.temperature;
            }
            let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|v| (v - max_logit).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let lse = max_logit + sum.ln();
            let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();

            let entropy = -probs
                .iter()
                .filter(|&&pv| pv > 0.0)
                .map(|&pv| pv * pv.ln())
                .sum::<f64>();

            let choice = match &mut decode {
                Decode::Sample(rng) => {
                    let u = rng.next_f64();
                    let mut cum = 0.0;
                    let mut chosen = colors - 1;
                    for (m, &pv) in probs.iter().enumerate() {
                        cum += pv;
                        if u < cum {
                            chosen = m;
                            break;
                        }
                    }
                    chosen
                }
                Decode::Forced(assignment) => assignment[t],
            };

            log_prob += logits[choice] - lse;
            entropy_total += entropy;
            step_probs.push(probs[choice]);
            choices.push(choice);

            if let Some(tr) = trace.as_mut() {
                tr.push(StepTrace {
                    x,
                    h_prev,
                    c_prev,
                    gate_i,
                    gate_f,
                    gate_g,
                    gate_o,
                    tanh_c: tanh_c.clone(),
                    h: h.clone(),
                    probs,
                    entropy,
                    choice,
                });
            }
        }

        SeqOutcome {
            choices,
            log_prob,
            entropy: entropy_total,
            step_probs,
            trace,
        }
    }

    /// Samples `k` partitionings. Deterministic given (state, seed).
    pub fn sample_partitionings(&self, k: usize, seed: u64) -> Result<SampleBatch> {
        if k == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let mut partitionings = Vec::with_capacity(k);
        let mut log_probs = Vec::with_capacity(k);
        let mut entropies = Vec::with_capacity(k);
        for _ in 0..k {
            let out = self.run_sequence(Decode::Sample(&mut rng), false);
            partitionings.push(Partitioning::new(self.num_partitions, out.choices)?);
            log_probs.push(out.log_prob);
            entropies.push(out.entropy);
        }
        Ok(SampleBatch {
            partitionings,
            log_probs,
            entropies,
        })
    }

    fn check_assignment(&self, partitioning: &Partitioning) -> Result<()> {
        if partitioning.len() != self.edge_count {
            return Err(Error::DimensionMismatch {
                what: "partition assignment",
                expected: self.edge_count,
                got: partitioning.len(),
            });
        }
        if partitioning.num_partitions() != self.num_partitions {
            return Err(Error::DimensionMismatch {
                what: "partition colors",
                expected: self.num_partitions,
                got: partitioning.num_partitions(),
            });
        }
        Ok(())
    }

    /// Exact log-probability of `partitioning` under teacher-forced decoding.
    pub fn log_prob(&self, partitioning: &Partitioning) -> Result<f64> {
        Ok(self.log_prob_and_step_probs(partitioning)?.0)
    }

    /// Log-probability together with the per-step chosen probabilities.
    pub fn log_prob_and_step_probs(&self, partitioning: &Partitioning) -> Result<(f64, Vec<f64>)> {
        self.check_assignment(partitioning)?;
        let out = self.run_sequence(Decode::Forced(partitioning.assignment()), false);
        Ok((out.log_prob, out.step_probs))
    }

    /// Per-sample entropy (sum over steps) under teacher forcing.
    pub fn sequence_entropy(&self, partitioning: &Partitioning) -> Result<f64> {
        self.check_assignment(partitioning)?;
        Ok(self.run_sequence(Decode::Forced(partitioning.assignment()), false).entropy)
    }

    /// Value of the REINFORCE surrogate for a fixed batch, as a function of
    /// the current parameters. Used by finite-difference gradient checks.
    pub fn surrogate(&self, batch: &SampleBatch, rewards: &[f64], baseline: f64) -> Result<f64> {
        self.validate_batch(batch, rewards)?;
        let k = batch.len() as f64;
        let mut total = 0.0;
        for (partitioning, &reward) in batch.partitionings.iter().zip(rewards) {
            let out = self.run_sequence(Decode::Forced(partitioning.assignment()), false);
            total += (reward - baseline) * out.log_prob + self.cfg.entropy_weight * out.entropy;
        }
        Ok(total / k)
    }

    fn validate_batch(&self, batch: &SampleBatch, rewards: &[f64]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty sample batch".into()));
        }
        if rewards.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                what: "rewards",
                expected: batch.len(),
                got: rewards.len(),
            });
        }
        if !rewards.iter().all(|r| r.is_finite()) {
            return Err(Error::NonFinite("controller rewards".into()));
        }
        for partitioning in &batch.partitionings {
            self.check_assignment(partitioning)?;
        }
        Ok(())
    }

    /// Exact gradient of the surrogate with respect to all parameters,
    /// computed by backpropagation through the decoder.
    pub fn surrogate_gradient(
        &self,
        batch: &SampleBatch,
        rewards: &[f64],
        baseline: f64,
    ) -> Result<Vec<f64>> {
        self.validate_batch(batch, rewards)?;
        let l = self.layout();
        let p = &self.params;
        let hidden = l.hidden;
        let inv_k = 1.0 / batch.len() as f64;
        let inv_temp = 1.0 / self.cfg.temperature;
        let mut grad = vec![0.0; l.total];

        for (partitioning, &reward) in batch.partitionings.iter().zip(rewards) {
            let adv = (reward - baseline) * inv_k;
            let ent_w = self.cfg.entropy_weight * inv_k;
            let out = self.run_sequence(Decode::Forced(partitioning.assignment()), true);
            let trace = out.trace.expect("trace requested");

            let mut dh_next = vec![0.0; hidden];
            let mut dc_next = vec![0.0; hidden];
            for t in (0..l.edges).rev() {
                let step = &trace[t];
                // d(surrogate)/d(raw projection output).
                let mut draw = vec![0.0; l.colors];
                for (m, dr) in draw.iter_mut().enumerate() {
                    let pv = step.probs[m];
                    let log_term = adv * (if m == step.choice { 1.0 } else { 0.0 } - pv);
                    let ent_term = if pv > 0.0 {
                        -ent_w * pv * (pv.ln() + step.entropy)
                    } else {
                        0.0
                    };
                    *dr = (log_term + ent_term) * inv_temp;
                }

                // Output projection gradient and backprop into h.
                let mut dh = dh_next.clone();
                for (m, &dr) in draw.iter().enumerate() {
                    grad[l.b_out + m] += dr;
                    let w_row = &p[l.w_out + m * hidden..l.w_out + (m + 1) * hidden];
                    let g_row = &mut grad[l.w_out + m * hidden..l.w_out + (m + 1) * hidden];
                    for k in 0..hidden {
                        g_row[k] += dr * step.h[k];
                        dh[k] += dr * w_row[k];
                    }
                }

                // LSTM cell backward.
                let mut dz = vec![0.0; 4 * hidden];
                let mut dc_prev = vec![0.0; hidden];
                for k in 0..hidden {
                    let d_o = dh[k] * step.tanh_c[k];
                    let dtc = dh[k] * step.gate_o[k];
                    let dc = dtc * (1.0 - step.tanh_c[k] * step.tanh_c[k]) + dc_next[k];
                    let d_i = dc * step.gate_g[k];
                    let d_g = dc * step.gate_i[k];
                    let d_f = dc * step.c_prev[k];
                    dc_prev[k] = dc * step.gate_f[k];
                    dz[k] = d_i * step.gate_i[k] * (1.0 - step.gate_i[k]);
                    dz[hidden + k] = d_f * step.gate_f[k] * (1.0 - step.gate_f[k]);
                    dz[2 * hidden + k] = d_g * (1.0 - step.gate_g[k] * step.gate_g[k]);
                    dz[3 * hidden + k] = d_o * step.gate_o[k] * (1.0 - step.gate_o[k]);
                }

                let mut dx = vec![0.0; l.input];
                let mut dh_prev = vec![0.0; hidden];
                for (r, &dzr) in dz.iter().enumerate() {
                    if dzr == 0.0 {
                        continue;
                    }
                    grad[l.b + r] += dzr;
                    let wx_row = &p[l.wx + r * l.input..l.wx + (r + 1) * l.input];
                    let gx_row = &mut grad[l.wx + r * l.input..l.wx + (r + 1) * l.input];
                    for c in 0..l.input {
                        gx_row[c] += dzr * step.x[c];
                        dx[c] += dzr * wx_row[c];
                    }
                    let wh_row = &p[l.wh + r * hidden..l.wh + (r + 1) * hidden];
                    let gh_row = &mut grad[l.wh + r * hidden..l.wh + (r + 1) * hidden];
                    for c in 0..hidden {
                        gh_row[c] += dzr * step.h_prev[c];
                        dh_prev[c] += dzr * wh_row[c];
                    }
                }

                // Input gradient splits into edge embedding and previous
                // choice embedding (start token at t = 0).
                let ge = &mut grad[l.v_edge + t * l.embed..l.v_edge + (t + 1) * l.embed];
                for (gv, dv) in ge.iter_mut().zip(&dx[..l.embed]) {
                    *gv += dv;
                }
                if t == 0 {
                    let gs = &mut grad[l.start..l.start + l.embed];
                    for (gv, dv) in gs.iter_mut().zip(&dx[l.embed..]) {
                        *gv += dv;
                    }
                } else {
                    let prev = trace[t - 1].choice;
                    let gp = &mut grad[l.v_part + prev * l.embed..l.v_part + (prev + 1) * l.embed];
                    for (gv, dv) in gp.iter_mut().zip(&dx[l.embed..]) {
                        *gv += dv;
                    }
                }

                dh_next = dh_prev;
                dc_next = dc_prev;
            }
        }
        Ok(grad)
    }

    /// One REINFORCE step: gradient ascent on the surrogate, then the critic
    /// baseline update b ← decay·b + (1 − decay)·mean(R).
    pub fn controller_update(&mut self, batch: &SampleBatch, rewards: &[f64]) -> Result<()> {
        let grad = self.surrogate_gradient(batch, rewards, self.baseline)?;
        let lr = self.cfg.learning_rate;
        match self.cfg.optimizer {
            OptimizerKind::Sgd => {
                for (pv, g) in self.params.iter_mut().zip(&grad) {
                    *pv += lr * g;
                }
            }
            OptimizerKind::Adam => {
                const BETA1: f64 = 0.9;
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.adam_step += 1;
                let t = self.adam_step as i32;
                let bc1 = 1.0 - BETA1.powi(t);
                let bc2 = 1.0 - BETA2.powi(t);
                for (((p, &g), m), v) in self
                    .params
                    .iter_mut()
                    .zip(&grad)
                    .zip(&mut self.adam_m)
                    .zip(&mut self.adam_v)
                {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p += lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        self.baseline =
            self.cfg.critic_decay * self.baseline + (1.0 - self.cfg.critic_decay) * mean_reward;
        Ok(())
    }
}
