//! Encoder and decoder forward passes.

use super::model::{EncoderLayer, PolicyModel};
use crate::adapters::{lora_linear, side_combine};
use crate::nn::{DenseArray, Mask, NormMode, ParamRef, Tape, Var};
use crate::vrp::{Instance, Problem};
use crate::{Error, Result};

/// Node and graph embeddings of one encoded batch.
pub struct Encodings {
    /// `[B, N, D]` final node embeddings.
    pub node_emb: Var,
    /// `[B, 1, D]` mean of the node embeddings.
    pub graph_emb: Var,
}

/// Per-batch decoder precomputation, reused by every construction step.
pub struct DecoderCache {
    pub node_emb: Var,
    pub k_glimpse: Var,
    pub v_glimpse: Var,
    pub k_logit: Var,
    pub graph_part: Var,
    pub n_nodes: usize,
}

/// Inputs of one decoding step over a rollout batch of `rows` rows.
pub struct StepInputs<'a> {
    pub rows: usize,
    /// Current node per row; `None` before the first TSP step.
    pub last: Option<&'a [usize]>,
    /// First visited node per row (TSP context only).
    pub first: Option<&'a [usize]>,
    /// Normalized dynamic feature per row (remaining budget/prize/capacity).
    pub dynamic: Option<Vec<f64>>,
    /// `rows * n_nodes` visibility flags.
    pub allowed: &'a [bool],
}

impl PolicyModel {
    /// Encode a batch of same-size instances into node and graph embeddings.
    pub fn encode_batch(&self, tape: &Tape, instances: &[&Instance], mode: NormMode) -> Result<Encodings> {
        if instances.is_empty() {
            return Err(Error::invalid_argument("encode_batch needs at least one instance"));
        }
        let n_nodes = instances[0].n_nodes();
        for inst in instances {
            if inst.problem != self.problem {
                return Err(Error::invalid_argument(format!(
                    "instance problem {} does not match model problem {}",
                    inst.problem.name(),
                    self.problem.name()
                )));
            }
            if inst.n_nodes() != n_nodes {
                return Err(Error::invalid_argument("batch instances must share one size"));
            }
        }
        let h0 = self.initial_embeddings_batch(tape, instances)?;

        let mut h = h0;
        for layer in &self.layers {
            h = self.encoder_layer(tape, layer, h, mode)?;
        }
        if let Some(side) = &self.side {
            let z = side.forward(tape, h0, mode)?;
            h = side_combine(tape, h, z)?;
        }
        let graph = tape.mean_axis(h, 1)?;
        Ok(Encodings { node_emb: h, graph_emb: graph })
    }

    /// Initial embeddings before the encoder stack: coordinate projections
    /// plus the additive problem-feature heads, the depot through its own
    /// head.
    pub fn initial_embeddings_batch(&self, tape: &Tape, instances: &[&Instance]) -> Result<Var> {
        let b = instances.len();

        let h0 = match self.problem {
            Problem::Tsp => {
                let coords = coords_array(instances, 0);
                let x = tape.leaf(coords);
                self.lora_coord_linear(tape, x)?
            }
            _ => {
                // customers: coordinate projection plus additive feature heads
                let coords = coords_array(instances, 1);
                let x = tape.leaf(coords);
                let mut cust = self.lora_coord_linear(tape, x)?;
                if let Some((w, bias)) = &self.heads.prize {
                    let prizes = feature_array(instances, |inst| inst.prizes(), 1.0);
                    cust = add_feature_embed(tape, cust, prizes, w, bias)?;
                }
                if let Some((w, bias)) = &self.heads.penalty {
                    let pens = feature_array(instances, |inst| inst.penalties(), 1.0);
                    cust = add_feature_embed(tape, cust, pens, w, bias)?;
                }
                if let Some((w, bias)) = &self.heads.demand {
                    // demands are embedded relative to vehicle capacity
                    let dem = feature_array_scaled(instances);
                    cust = add_feature_embed(tape, cust, dem, w, bias)?;
                }
                // depot: its own affine embedding
                let (dw, db) = self.heads.depot.as_ref().expect("depot head for depot problems");
                let depot_coords: Vec<f64> = instances.iter().flat_map(|i| i.coords[0]).collect();
                let dx = tape.leaf(DenseArray::from_vec(&[b, 1, 2], depot_coords)?);
                let wv = tape.param(dw);
                let bv = tape.param(db);
                let depot = tape.linear(dx, wv, Some(bv))?;
                tape.concat(depot, cust, 1)?
            }
        };
        Ok(h0)
    }

    fn encoder_layer(&self, tape: &Tape, layer: &EncoderLayer, x: Var, mode: NormMode) -> Result<Var> {
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let dk = d / n_heads;
        let shape = tape.shape_of(x);
        let (b, n) = (shape[0], shape[1]);

        let split = |tape: &Tape, v: Var| -> Result<Var> {
            let r = tape.reshape(v, &[b, n, n_heads, dk])?;
            tape.permute(r, &[0, 2, 1, 3])
        };
        let q = split(tape, lora_linear(tape, x, tape.param(&layer.mha.wq), layer.lora_q.as_ref())?)?;
        let k = split(tape, lora_linear(tape, x, tape.param(&layer.mha.wk), layer.lora_k.as_ref())?)?;
        let v = split(tape, lora_linear(tape, x, tape.param(&layer.mha.wv), layer.lora_v.as_ref())?)?;
        let scores = tape.scale(tape.bmm(q, k, true)?, 1.0 / (dk as f64).sqrt());
        let attn = tape.masked_softmax(scores, None)?;
        let ctx = tape.bmm(attn, v, false)?;
        let merged = tape.reshape(tape.permute(ctx, &[0, 2, 1, 3])?, &[b, n, d])?;
        let mut sub = tape.linear(merged, tape.param(&layer.mha.wo), None)?;
        if let Some(adapter) = &layer.inside_attn {
            sub = adapter.forward(tape, sub)?;
        }
        let h = layer.norm1.forward(tape, tape.add(x, sub)?, mode)?;

        let w1 = tape.param(&layer.ff_w1);
        let b1 = tape.param(&layer.ff_b1);
        let mid = tape.relu(tape.linear(h, w1, Some(b1))?);
        let w2 = tape.param(&layer.ff_w2);
        let b2 = tape.param(&layer.ff_b2);
        let mut ff = tape.linear(mid, w2, Some(b2))?;
        if let Some(adapter) = &layer.inside_ff {
            ff = adapter.forward(tape, ff)?;
        }
        layer.norm2.forward(tape, tape.add(h, ff)?, mode)
    }

    /// Precompute the decoder's keys, values and context pieces for a batch.
    pub fn decoder_cache(&self, tape: &Tape, enc: &Encodings) -> Result<DecoderCache> {
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let dk = d / n_heads;
        let shape = tape.shape_of(enc.node_emb);
        let (b, n) = (shape[0], shape[1]);
        let split = |tape: &Tape, v: Var| -> Result<Var> {
            let r = tape.reshape(v, &[b, n, n_heads, dk])?;
            tape.permute(r, &[0, 2, 1, 3])
        };
        let k_glimpse = split(tape, tape.linear(enc.node_emb, tape.param(&self.decoder.glimpse.wk), None)?)?;
        let v_glimpse = split(tape, tape.linear(enc.node_emb, tape.param(&self.decoder.glimpse.wv), None)?)?;
        let k_logit = match &self.decoder.w_logit {
            Some(w) => tape.linear(enc.node_emb, tape.param(w), None)?,
            None => enc.node_emb,
        };
        let graph_part = match &self.decoder.w_graph {
            Some(w) => tape.linear(enc.graph_emb, tape.param(w), None)?,
            None => enc.graph_emb,
        };
        Ok(DecoderCache { node_emb: enc.node_emb, k_glimpse, v_glimpse, k_logit, graph_part, n_nodes: n })
    }

    /// One construction step: probabilities over nodes, `[rows, n_nodes]`.
    ///
    /// The context query adds the graph embedding, the last-visited node's
    /// embedding (learned placeholders before the first TSP step, the first
    /// node's embedding joining for TSP only) and the dynamic-feature head's
    /// output. One masked glimpse attention refines the query; a single-head
    /// compatibility with tanh clipping scores the nodes.
    pub fn decode_step_batch(&self, tape: &Tape, cache: &DecoderCache, step: &StepInputs) -> Result<Var> {
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let dk = d / n_heads;
        let rows = step.rows;
        let n = cache.n_nodes;
        if step.allowed.len() != rows * n {
            return Err(Error::shape(format!(
                "mask wants {} flags, got {}",
                rows * n,
                step.allowed.len()
            )));
        }
        if !step.allowed.iter().any(|&a| a) {
            return Err(Error::invalid_state("no feasible action for any row"));
        }

        // context query
        let mut ctx = cache.graph_part;
        match step.last {
            Some(last) => {
                ctx = tape.add(ctx, tape.gather_nodes(cache.node_emb, last)?)?;
            }
            None => {
                let ph = self.decoder.placeholder_last.as_ref().ok_or_else(|| {
                    Error::invalid_state("no current node and no placeholder (non-TSP problems start at the depot)")
                })?;
                let p = tape.reshape(tape.param(ph), &[1, 1, d])?;
                ctx = tape.add(ctx, p)?;
            }
        }
        if self.problem == Problem::Tsp {
            match step.first {
                Some(first) => {
                    ctx = tape.add(ctx, tape.gather_nodes(cache.node_emb, first)?)?;
                }
                None => {
                    let ph = self.decoder.placeholder_first.as_ref().expect("TSP placeholder");
                    let p = tape.reshape(tape.param(ph), &[1, 1, d])?;
                    ctx = tape.add(ctx, p)?;
                }
            }
        }
        if let Some((w, b)) = &self.heads.dynamic {
            let dynamic = step
                .dynamic
                .as_ref()
                .ok_or_else(|| Error::invalid_argument("model expects a dynamic feature"))?;
            let x = tape.leaf(DenseArray::from_vec(&[rows, 1, 1], dynamic.clone())?);
            let wv = tape.param(w);
            let bv = tape.param(b);
            ctx = tape.add(ctx, tape.linear(x, wv, Some(bv))?)?;
        }
        // Rollouts wider than the context (sampling many tours from one
        // encoding) tile it explicitly.
        let ctx_rows = tape.shape_of(ctx)[0];
        if ctx_rows != rows {
            if rows % ctx_rows != 0 {
                return Err(Error::shape(format!(
                    "rollout rows {rows} incompatible with context rows {ctx_rows}"
                )));
            }
            ctx = tape.repeat_interleave0(ctx, rows / ctx_rows)?;
        }

        // glimpse attention over feasible nodes
        let q = tape.linear(ctx, tape.param(&self.decoder.glimpse.wq), None)?;
        let q = tape.permute(tape.reshape(q, &[rows, 1, n_heads, dk])?, &[0, 2, 1, 3])?;
        let scores = tape.scale(tape.bmm(q, cache.k_glimpse, true)?, 1.0 / (dk as f64).sqrt());
        let glimpse_mask = Mask::new(&[rows, 1, 1, n], step.allowed.to_vec())?;
        let attn = tape.masked_softmax(scores, Some(&glimpse_mask))?;
        let pooled = tape.bmm(attn, cache.v_glimpse, false)?;
        let merged = tape.reshape(tape.permute(pooled, &[0, 2, 1, 3])?, &[rows, 1, d])?;
        let refined = tape.linear(merged, tape.param(&self.decoder.glimpse.wo), None)?;

        // single-head compatibility, clipped into [-tanh_clip, tanh_clip]
        let compat = tape.scale(tape.bmm(refined, cache.k_logit, true)?, 1.0 / (d as f64).sqrt());
        let logits = tape.scale(tape.tanh(compat), self.config.tanh_clip);
        let flat = tape.reshape(logits, &[rows, n])?;
        let prob_mask = Mask::new(&[rows, n], step.allowed.to_vec())?;
        let probs = tape.masked_softmax(flat, Some(&prob_mask))?;
        debug_assert!(!tape.value_of(probs).has_non_finite());
        Ok(probs)
    }
}

fn coords_array(instances: &[&Instance], skip: usize) -> DenseArray {
    let b = instances.len();
    let n = instances[0].n_nodes() - skip;
    let data: Vec<f64> = instances
        .iter()
        .flat_map(|inst| inst.coords[skip..].iter().flat_map(|c| [c[0], c[1]]))
        .collect();
    DenseArray::from_vec(&[b, n, 2], data).expect("consistent shape")
}

fn feature_array(instances: &[&Instance], get: impl Fn(&Instance) -> &[f64], scale: f64) -> DenseArray {
    let b = instances.len();
    let n = instances[0].n_customers();
    let data: Vec<f64> = instances
        .iter()
        .flat_map(|inst| get(inst)[1..].iter().map(move |&v| v * scale))
        .collect();
    DenseArray::from_vec(&[b, n, 1], data).expect("consistent shape")
}

fn feature_array_scaled(instances: &[&Instance]) -> DenseArray {
    let b = instances.len();
    let n = instances[0].n_customers();
    let data: Vec<f64> = instances
        .iter()
        .flat_map(|inst| {
            let cap = inst.capacity();
            inst.demands()[1..].iter().map(move |&v| v / cap)
        })
        .collect();
    DenseArray::from_vec(&[b, n, 1], data).expect("consistent shape")
}

fn add_feature_embed(
    tape: &Tape,
    base: Var,
    features: DenseArray,
    w: &ParamRef,
    b: &ParamRef,
) -> Result<Var> {
    let x = tape.leaf(features);
    let wv = tape.param(w);
    let bv = tape.param(b);
    let emb = tape.linear(x, wv, Some(bv))?;
    tape.add(base, emb)
}
