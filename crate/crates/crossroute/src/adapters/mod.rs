//! Parameter-efficient fine-tuning mechanisms.
//!
//! Three adapter families train a downstream problem while the pre-trained
//! backbone stays frozen: inside tuning (a bottleneck after each encoder
//! sublayer), side tuning (a parallel encoder-like network added onto the
//! frozen encoder's output), and LoRA (low-rank corrections to the frozen
//! projection matrices). [`apply_freezing`] flips the partition's trainable
//! flags accordingly.

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::nn::{
    multi_head_attention, uniform_init, DenseArray, MhaParams, NormKind, NormMode, ParamGroup,
    ParamRef, ParamStore, Tape, Var,
};
use crate::policy::{NormSite, ParamPartition, PolicyModel};
use crate::{Error, Result};

/// How a downstream model is tuned. `None` covers both full fine-tuning and
/// training from scratch: every parameter stays trainable and no adapter
/// networks are attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdapterMode {
    None,
    Inside,
    Side,
    Lora { rank: usize },
}

impl AdapterMode {
    pub fn name(&self) -> &'static str {
        match self {
            AdapterMode::None => "full",
            AdapterMode::Inside => "inside",
            AdapterMode::Side => "side",
            AdapterMode::Lora { .. } => "lora",
        }
    }

    pub fn is_adapter(&self) -> bool {
        !matches!(self, AdapterMode::None)
    }
}

/// Bottleneck adapter inserted after an encoder sublayer:
/// `W1 · LeakyReLU(W0 · h + b0) + b1` with W0 mapping d to d/2.
pub struct InsideAdapter {
    pub w0: ParamRef,
    pub b0: ParamRef,
    pub w1: ParamRef,
    pub b1: ParamRef,
}

impl InsideAdapter {
    pub fn build(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> InsideAdapter {
        let half = d / 2;
        InsideAdapter {
            w0: store.add(&format!("{prefix}.w0"), ParamGroup::Adapters, uniform_init(rng, &[d, half], d)),
            b0: store.add(&format!("{prefix}.b0"), ParamGroup::Adapters, uniform_init(rng, &[half], d)),
            w1: store.add(&format!("{prefix}.w1"), ParamGroup::Adapters, uniform_init(rng, &[half, d], d)),
            b1: store.add(&format!("{prefix}.b1"), ParamGroup::Adapters, uniform_init(rng, &[d], d)),
        }
    }

    pub fn forward(&self, tape: &Tape, h: Var) -> Result<Var> {
        let w0 = tape.param(&self.w0);
        let b0 = tape.param(&self.b0);
        let inner = tape.linear(h, w0, Some(b0))?;
        let act = tape.leaky_relu(inner);
        let w1 = tape.param(&self.w1);
        let b1 = tape.param(&self.b1);
        tape.linear(act, w1, Some(b1))
    }

    pub fn param_count(d: usize) -> usize {
        let half = d / 2;
        d * half + half + half * d + d
    }
}

/// Parallel once-applied encoder-like network. Evolves the initial node
/// embeddings into a correction that is added onto the frozen encoder output.
pub struct SideAdapter {
    pub mha: MhaParams,
    pub norm_a: NormSite,
    pub ff_w1: ParamRef,
    pub ff_b1: ParamRef,
    pub ff_w2: ParamRef,
    pub ff_b2: ParamRef,
    pub norm_b: NormSite,
    pub w0: ParamRef,
    pub b0: ParamRef,
    pub norm_c: NormSite,
    pub w1: ParamRef,
    pub b1: ParamRef,
    pub norm_d: NormSite,
    n_heads: usize,
}

impl SideAdapter {
    pub fn build(
        store: &mut ParamStore,
        d: usize,
        ff_hidden: usize,
        n_heads: usize,
        norm_kind: NormKind,
        rng: &mut impl Rng,
    ) -> SideAdapter {
        let g = ParamGroup::Adapters;
        let mha = MhaParams {
            wq: store.add("adapter.side.mha.wq", g, uniform_init(rng, &[d, d], d)),
            wk: store.add("adapter.side.mha.wk", g, uniform_init(rng, &[d, d], d)),
            wv: store.add("adapter.side.mha.wv", g, uniform_init(rng, &[d, d], d)),
            wo: store.add("adapter.side.mha.wo", g, uniform_init(rng, &[d, d], d)),
        };
        let norm_a = NormSite::build(store, "adapter.side.norm_a", g, d, norm_kind);
        let ff_w1 = store.add("adapter.side.ff.w1", g, uniform_init(rng, &[d, ff_hidden], d));
        let ff_b1 = store.add("adapter.side.ff.b1", g, uniform_init(rng, &[ff_hidden], d));
        let ff_w2 = store.add("adapter.side.ff.w2", g, uniform_init(rng, &[ff_hidden, d], d));
        let ff_b2 = store.add("adapter.side.ff.b2", g, uniform_init(rng, &[d], d));
        let norm_b = NormSite::build(store, "adapter.side.norm_b", g, d, norm_kind);
        let w0 = store.add("adapter.side.post.w0", g, uniform_init(rng, &[d, d], d));
        let b0 = store.add("adapter.side.post.b0", g, uniform_init(rng, &[d], d));
        let norm_c = NormSite::build(store, "adapter.side.norm_c", g, d, norm_kind);
        let w1 = store.add("adapter.side.post.w1", g, uniform_init(rng, &[d, d], d));
        let b1 = store.add("adapter.side.post.b1", g, uniform_init(rng, &[d], d));
        let norm_d = NormSite::build(store, "adapter.side.norm_d", g, d, norm_kind);
        SideAdapter {
            mha,
            norm_a,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
            norm_b,
            w0,
            b0,
            norm_c,
            w1,
            b1,
            norm_d,
            n_heads,
        }
    }

    /// Correction from the initial embeddings: one self-attention + feedforward
    /// block (skip connection and normalization on each), then two
    /// affine/LeakyReLU/normalization stages.
    pub fn forward(&self, tape: &Tape, h0: Var, mode: NormMode) -> Result<Var> {
        let attn = multi_head_attention(tape, &self.mha, h0, h0, h0, self.n_heads, None)?;
        let sum = tape.add(h0, attn)?;
        let h1 = self.norm_a.forward(tape, sum, mode)?;

        let w1 = tape.param(&self.ff_w1);
        let b1 = tape.param(&self.ff_b1);
        let mid = tape.relu(tape.linear(h1, w1, Some(b1))?);
        let w2 = tape.param(&self.ff_w2);
        let b2 = tape.param(&self.ff_b2);
        let ff = tape.linear(mid, w2, Some(b2))?;
        let sum2 = tape.add(h1, ff)?;
        let h2 = self.norm_b.forward(tape, sum2, mode)?;

        let pw0 = tape.param(&self.w0);
        let pb0 = tape.param(&self.b0);
        let s0 = tape.leaky_relu(tape.linear(h2, pw0, Some(pb0))?);
        let s0 = self.norm_c.forward(tape, s0, mode)?;
        let pw1 = tape.param(&self.w1);
        let pb1 = tape.param(&self.b1);
        let s1 = tape.leaky_relu(tape.linear(s0, pw1, Some(pb1))?);
        self.norm_d.forward(tape, s1, mode)
    }

    pub fn param_count(d: usize, ff_hidden: usize) -> usize {
        4 * d * d                        // attention projections
            + 2 * 2 * d                  // two norms in the block
            + d * ff_hidden + ff_hidden + ff_hidden * d + d
            + 2 * (d * d + d)            // post stages
            + 2 * 2 * d                  // post-stage norms
    }
}

/// Elementwise addition of the side correction onto the frozen encoder output.
pub fn side_combine(tape: &Tape, encoder_out: Var, correction: Var) -> Result<Var> {
    tape.add(encoder_out, correction)
}

/// Low-rank correction to a frozen weight matrix: the adapted map is
/// `x · W + (x · A) · B` with A Gaussian-initialized and B zero, so the
/// adapted output equals the frozen output exactly at initialization.
pub struct LoraAdapter {
    pub a: ParamRef,
    pub b: ParamRef,
    pub rank: usize,
}

impl LoraAdapter {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        rng: &mut impl Rng,
    ) -> LoraAdapter {
        let normal = StandardNormal;
        let a_data: Vec<f64> = (0..d_in * rank).map(|_| normal.sample(rng)).collect();
        let a = DenseArray::from_vec(&[d_in, rank], a_data).expect("consistent shape");
        LoraAdapter {
            a: store.add(&format!("{prefix}.a"), ParamGroup::Adapters, a),
            b: store.add(&format!("{prefix}.b"), ParamGroup::Adapters, DenseArray::zeros(&[rank, d_out])),
            rank,
        }
    }

    /// The low-rank path alone: `(x · A) · B`.
    pub fn correction(&self, tape: &Tape, x: Var) -> Result<Var> {
        let a = tape.param(&self.a);
        let b = tape.param(&self.b);
        let low = tape.linear(x, a, None)?;
        tape.linear(low, b, None)
    }

    pub fn param_count(d_in: usize, d_out: usize, rank: usize) -> usize {
        d_in * rank + rank * d_out
    }
}

/// `x · W` through a frozen weight with an optional low-rank correction added.
pub fn lora_linear(tape: &Tape, x: Var, w: Var, lora: Option<&LoraAdapter>) -> Result<Var> {
    let base = tape.linear(x, w, None)?;
    match lora {
        Some(adapter) => {
            let corr = adapter.correction(tape, x)?;
            tape.add(base, corr)
        }
        None => Ok(base),
    }
}

/// Set the partition's trainable flags for a tuning mode: full fine-tuning
/// trains everything; the adapter modes freeze the backbone and train the
/// problem-specific modules plus the adapters.
pub fn apply_freezing(model: &PolicyModel, mode: AdapterMode) -> Result<ParamPartition> {
    if mode.is_adapter() && std::mem::discriminant(&mode) != std::mem::discriminant(&model.adapter_mode) {
        return Err(Error::invalid_argument(format!(
            "model assembled with {} adapters cannot be frozen for mode {}",
            model.adapter_mode.name(),
            mode.name()
        )));
    }
    let store = model.store();
    match mode {
        AdapterMode::None => {
            for g in ParamGroup::ALL {
                store.set_group_trainable(g, true);
            }
        }
        _ => {
            store.set_group_trainable(ParamGroup::Backbone, false);
            store.set_group_trainable(ParamGroup::Heads, true);
            store.set_group_trainable(ParamGroup::Adapters, true);
        }
    }
    Ok(model.partition())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arr(shape: &[usize], data: &[f64]) -> DenseArray {
        DenseArray::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn inside_adapter_zero_params_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let adapter = InsideAdapter::build(&mut store, "adapter.inside.0.0", 8, &mut rng);
        for p in store.params() {
            p.borrow_mut().value.fill(0.0);
        }
        let tape = Tape::new();
        let h = tape.leaf(arr(&[2, 8], &[0.5; 16]));
        let out = adapter.forward(&tape, h).unwrap();
        assert!(tape.value_of(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inside_adapter_bottleneck_passthrough() {
        // W0 truncates to the first d/2 coordinates, W1 expands them back.
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let adapter = InsideAdapter::build(&mut store, "a", d, &mut rng);
        adapter.w0.borrow_mut().value = arr(&[4, 2], &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        adapter.b0.borrow_mut().value = arr(&[2], &[0.0, 0.0]);
        adapter.w1.borrow_mut().value = arr(&[2, 4], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        adapter.b1.borrow_mut().value = arr(&[4], &[0.0; 4]);
        let tape = Tape::new();
        let h = tape.leaf(arr(&[1, 4], &[0.3, 0.7, 0.9, 0.1]));
        let out = adapter.forward(&tape, h).unwrap();
        assert_eq!(tape.value_of(out).data(), &[0.3, 0.7, 0.0, 0.0]);
    }

    #[test]
    fn inside_adapter_count_is_16576_at_d128() {
        assert_eq!(InsideAdapter::param_count(128), 16_576);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        InsideAdapter::build(&mut store, "a", 128, &mut rng);
        assert_eq!(store.counts().0, 16_576);
        // 6 adapters in a 3-layer encoder
        assert_eq!(6 * InsideAdapter::param_count(128), 99_456);
    }

    #[test]
    fn lora_is_transparent_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Backbone, uniform_init(&mut rng, &[8, 8], 8));
        let lora = LoraAdapter::build(&mut store, "adapter.lora.test", 8, 8, 2, &mut rng);
        let x_data: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();

        let tape = Tape::new();
        let x = tape.leaf(arr(&[2, 8], &x_data));
        let wv = tape.param(&w);
        let with = lora_linear(&tape, x, wv, Some(&lora)).unwrap();
        let without = tape.linear(x, wv, None).unwrap();
        let a = tape.value_of(with);
        let b = tape.value_of(without);
        assert_eq!(a.data(), b.data(), "max abs diff must be exactly 0.0 at init");
    }

    #[test]
    fn lora_parameter_arithmetic() {
        assert_eq!(LoraAdapter::param_count(128, 128, 2), 512);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        LoraAdapter::build(&mut store, "l", 128, 128, 2, &mut rng);
        assert_eq!(store.counts().0, 512);
    }

    #[test]
    fn lora_correction_has_rank_at_most_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let lora = LoraAdapter::build(&mut store, "l", 6, 6, 2, &mut rng);
        // Pretend training moved B off zero.
        for v in lora.b.borrow_mut().value.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        // Correction matrix C = A·B is 6x6 with rank <= 2: every 3x3 minor vanishes.
        let a = lora.a.borrow().value.clone();
        let b = lora.b.borrow().value.clone();
        let mut c = vec![0.0; 36];
        for i in 0..6 {
            for j in 0..6 {
                for r in 0..2 {
                    c[i * 6 + j] += a.data()[i * 2 + r] * b.data()[r * 6 + j];
                }
            }
        }
        let det3 = |rows: [usize; 3], cols: [usize; 3]| -> f64 {
            let m = |r: usize, cc: usize| c[rows[r] * 6 + cols[cc]];
            m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
        };
        for rows in [[0, 1, 2], [1, 3, 5], [0, 2, 4]] {
            for cols in [[0, 1, 2], [2, 3, 4], [1, 4, 5]] {
                assert!(det3(rows, cols).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn side_combine_with_zero_is_identity() {
        let tape = Tape::new();
        let e = tape.leaf(arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let z = tape.leaf(DenseArray::zeros(&[2, 3]));
        let out = side_combine(&tape, e, z).unwrap();
        assert_eq!(tape.value_of(out).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn side_adapter_parameter_arithmetic() {
        // d=128, ff=512 side adapter alone
        assert_eq!(SideAdapter::param_count(128, 512), 231_296);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        SideAdapter::build(&mut store, 128, 512, 8, NormKind::Batch, &mut rng);
        assert_eq!(store.counts().0, 231_296);
    }

    #[test]
    fn side_adapter_train_mode_needs_batch_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let adapter = SideAdapter::build(&mut store, 8, 16, 2, NormKind::Batch, &mut rng);
        let tape = Tape::new();
        let h = tape.leaf(DenseArray::zeros(&[1, 3, 8]));
        let r = adapter.forward(&tape, h, NormMode::Train { update_stats: false });
        assert!(matches!(r, Err(Error::InvalidState(_))));
    }

    #[test]
    fn side_adapter_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let adapter = SideAdapter::build(&mut store, 8, 16, 2, NormKind::Batch, &mut rng);
        let n = 3;
        let h_data: Vec<f64> = (0..2 * n * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mode = NormMode::Train { update_stats: false };

        let forward = || -> f64 {
            let tape = Tape::new();
            let h = tape.leaf(arr(&[2, n, 8], &h_data));
            let z = adapter.forward(&tape, h, mode).unwrap();
            let sq = tape.mul(z, z).unwrap();
            tape.scalar_of(tape.sum_all(sq))
        };

        store.zero_grads();
        {
            let tape = Tape::new();
            let h = tape.leaf(arr(&[2, n, 8], &h_data));
            let z = adapter.forward(&tape, h, mode).unwrap();
            let sq = tape.mul(z, z).unwrap();
            let loss = tape.sum_all(sq);
            tape.backward(loss).unwrap();
        }

        // Check a spread of scalars in the first post-stage weight.
        let p = &adapter.w0;
        let numel = p.borrow().value.numel();
        for i in (0..numel).step_by(7) {
            let fd = crate::nn::central_difference(p, i, 1e-5, forward);
            let ad = p.borrow().grad.data()[i];
            let denom = ad.abs().max(fd.abs()).max(1.0);
            assert!(
                ((ad - fd) / denom).abs() < 1e-4,
                "w0 idx {i}: ad={ad} fd={fd}"
            );
        }
    }
}
