//! Layer-level operations composed from tape primitives.

use super::param::ParamRef;
use super::tape::{Mask, Tape, Var};
use crate::{Error, Result};

/// `y = x · W + b`, batched over leading dimensions.
pub fn affine(tape: &Tape, w: &ParamRef, b: &ParamRef, x: Var) -> Result<Var> {
    let wv = tape.param(w);
    let bv = tape.param(b);
    tape.linear(x, wv, Some(bv))
}

/// Projection weights of one multi-head attention block. The query/key/value
/// projections carry no bias, following the attention-model lineage.
pub struct MhaParams {
    pub wq: ParamRef,
    pub wk: ParamRef,
    pub wv: ParamRef,
    pub wo: ParamRef,
}

/// Scaled dot-product attention over `n_heads` heads with output projection.
///
/// `queries` is `[B, Tq, d]`; `keys`/`values` are `[B, Tk, d]` (their leading
/// batch may be 1 and broadcast). Masked key positions receive exactly zero
/// attention weight.
pub fn multi_head_attention(
    tape: &Tape,
    params: &MhaParams,
    queries: Var,
    keys: Var,
    values: Var,
    n_heads: usize,
    mask: Option<&Mask>,
) -> Result<Var> {
    let d = *tape
        .shape_of(queries)
        .last()
        .ok_or_else(|| Error::shape("attention input must have a feature axis"))?;
    if d % n_heads != 0 {
        return Err(Error::invalid_argument(format!(
            "head count {n_heads} does not divide model width {d}"
        )));
    }
    let dk = d / n_heads;

    let q = project_heads(tape, queries, &params.wq, n_heads, dk)?;
    let k = project_heads(tape, keys, &params.wk, n_heads, dk)?;
    let v = project_heads(tape, values, &params.wv, n_heads, dk)?;

    // [B, H, Tq, Tk]
    let scores = tape.bmm(q, k, true)?;
    let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let attn = tape.masked_softmax(scaled, mask)?;

    // [B, H, Tq, dk] -> [B, Tq, d]
    let ctx = tape.bmm(attn, v, false)?;
    let ctx_shape = tape.shape_of(ctx);
    let (b, tq) = (ctx_shape[0], ctx_shape[2]);
    let merged = tape.permute(ctx, &[0, 2, 1, 3])?;
    let flat = tape.reshape(merged, &[b, tq, d])?;
    let wo = tape.param(&params.wo);
    tape.linear(flat, wo, None)
}

/// Split `[B, T, d]` into `[B, H, T, dk]` after projecting.
fn project_heads(tape: &Tape, x: Var, w: &ParamRef, n_heads: usize, dk: usize) -> Result<Var> {
    let wv = tape.param(w);
    let p = tape.linear(x, wv, None)?;
    let shape = tape.shape_of(p);
    let (b, t) = (shape[0], shape[1]);
    let split = tape.reshape(p, &[b, t, n_heads, dk])?;
    tape.permute(split, &[0, 2, 1, 3])
}

/// Central finite difference of `f` with respect to one scalar of `param`.
/// Restores the original value before returning.
pub fn central_difference(
    param: &ParamRef,
    index: usize,
    step: f64,
    mut f: impl FnMut() -> f64,
) -> f64 {
    let original = param.borrow().value.data()[index];
    param.borrow_mut().value.data_mut()[index] = original + step;
    let plus = f();
    param.borrow_mut().value.data_mut()[index] = original - step;
    let minus = f();
    param.borrow_mut().value.data_mut()[index] = original;
    (plus - minus) / (2.0 * step)
}
