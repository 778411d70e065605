//! Reverse-mode automatic differentiation.
//!
//! A `Tape` records every operation of a forward pass; `backward` walks the
//! record in reverse and accumulates gradients into the trainable [`Param`]s
//! that participated. Nodes created after a [`Tape::mark`] can be dropped with
//! [`Tape::truncate`], which keeps inference rollouts memory-bounded.
//!
//! [`Param`]: super::param::Param

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::array::{matmul_acc, matmul_at_acc, matmul_bt_acc, DenseArray};
use super::param::{BufferRef, ParamRef};
use crate::{Error, Result};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Boolean visibility mask; `false` entries are excluded from attention and
/// receive exactly zero probability under [`Tape::masked_softmax`].
#[derive(Clone, Debug)]
pub struct Mask {
    shape: Vec<usize>,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(shape: &[usize], allowed: Vec<bool>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != allowed.len() {
            return Err(Error::shape(format!(
                "mask shape {:?} wants {} flags, got {}",
                shape,
                n,
                allowed.len()
            )));
        }
        Ok(Mask { shape: shape.to_vec(), allowed })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }
}

/// Normalization flavour: batch norm reduces over every row (all leading dims),
/// instance norm reduces over the node axis of a `[batch, nodes, features]`
/// activation separately per instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Instance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train { update_stats: bool },
    Eval,
}

const NORM_EPS: f64 = 1e-5;
const NORM_MOMENTUM: f64 = 0.1;

struct Grads {
    slots: Vec<Option<DenseArray>>,
}

impl Grads {
    fn accumulate(&mut self, idx: usize, contrib: DenseArray) {
        match &mut self.slots[idx] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }
}

type OpFn = Box<dyn Fn(&DenseArray, &[DenseArray], &mut Grads)>;

enum Back {
    Leaf,
    Param(ParamRef),
    Op(OpFn),
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    values: RefCell<Vec<DenseArray>>,
    backs: RefCell<Vec<Back>>,
    params_seen: RefCell<HashMap<usize, Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: DenseArray, back: Back) -> Var {
        let mut values = self.values.borrow_mut();
        values.push(value);
        self.backs.borrow_mut().push(back);
        Var(values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current node count, usable with [`Tape::truncate`].
    pub fn mark(&self) -> usize {
        self.len()
    }

    /// Drop every node recorded after `mark`. Only valid when no backward pass
    /// will need the dropped nodes (inference rollouts).
    pub fn truncate(&self, mark: usize) {
        self.values.borrow_mut().truncate(mark);
        self.backs.borrow_mut().truncate(mark);
        self.params_seen.borrow_mut().retain(|_, v| v.0 < mark);
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.values.borrow()[v.0].shape().to_vec()
    }

    pub fn value_of(&self, v: Var) -> DenseArray {
        self.values.borrow()[v.0].clone()
    }

    pub fn scalar_of(&self, v: Var) -> f64 {
        self.values.borrow()[v.0].scalar_value()
    }

    /// Record an input with no gradient destination.
    pub fn leaf(&self, value: DenseArray) -> Var {
        self.push(value, Back::Leaf)
    }

    /// Record a parameter. Repeated calls with the same parameter return the
    /// same node, so gradients accumulate once per backward pass.
    pub fn param(&self, p: &ParamRef) -> Var {
        let key = Rc::as_ptr(p) as usize;
        if let Some(v) = self.params_seen.borrow().get(&key) {
            return *v;
        }
        let v = self.push(p.borrow().value.clone(), Back::Param(p.clone()));
        self.params_seen.borrow_mut().insert(key, v);
        v
    }

    /// Propagate d(loss)/d(node) from a scalar loss into every trainable
    /// parameter reachable from it. Gradients accumulate: calling backward
    /// twice without zeroing doubles them.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let values = self.values.borrow();
        if loss.0 >= values.len() {
            return Err(Error::invalid_state("backward before forward: node not on tape"));
        }
        if values[loss.0].numel() != 1 {
            return Err(Error::invalid_argument(format!(
                "backward requires a scalar loss, got shape {:?}",
                values[loss.0].shape()
            )));
        }
        let backs = self.backs.borrow();
        let mut grads = Grads { slots: vec![None; values.len()] };
        let mut seed = DenseArray::zeros(values[loss.0].shape());
        seed.fill(1.0);
        grads.slots[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads.slots[idx].take() else { continue };
            match &backs[idx] {
                Back::Leaf => {}
                Back::Param(p) => {
                    let mut p = p.borrow_mut();
                    if p.trainable {
                        p.grad.add_assign(&g);
                    }
                }
                Back::Op(f) => f(&g, &values, &mut grads),
            }
        }
        Ok(())
    }

    // ── elementwise and broadcasting ────────────────────────────────────

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (out, a_shape, b_shape) = {
            let values = self.values.borrow();
            let av = &values[a.0];
            let bv = &values[b.0];
            (
                broadcast_binary(av, bv, |x, y| x + y)?,
                av.shape().to_vec(),
                bv.shape().to_vec(),
            )
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, _vals, grads| {
                grads.accumulate(a.0, reduce_to_shape(g, &a_shape));
                grads.accumulate(b.0, reduce_to_shape(g, &b_shape));
            })),
        ))
    }

    /// Elementwise product, equal shapes.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let values = self.values.borrow();
            let (av, bv) = (&values[a.0], &values[b.0]);
            if av.shape() != bv.shape() {
                return Err(Error::shape(format!(
                    "mul: {:?} vs {:?}",
                    av.shape(),
                    bv.shape()
                )));
            }
            let data = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
            DenseArray::from_vec(av.shape(), data)?
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let da = zip_map(g, &vals[b.0], |gv, bv| gv * bv);
                let db = zip_map(g, &vals[a.0], |gv, av| gv * av);
                grads.accumulate(a.0, da);
                grads.accumulate(b.0, db);
            })),
        ))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = map_value(&self.values.borrow()[a.0], |x| c * x);
        self.push(
            out,
            Back::Op(Box::new(move |g, _vals, grads| {
                grads.accumulate(a.0, map_value(g, |x| c * x));
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// `x · w (+ bias)` over the trailing axis: x is `[..., in]`, w is
    /// `[in, out]`, bias is `[out]`.
    pub fn linear(&self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (out, m, d_in, d_out) = {
            let values = self.values.borrow();
            let xv = &values[x.0];
            let wv = &values[w.0];
            if wv.shape().len() != 2 {
                return Err(Error::shape(format!("linear weight must be 2-d, got {:?}", wv.shape())));
            }
            let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
            if xv.shape().last().copied() != Some(d_in) {
                return Err(Error::shape(format!(
                    "linear: input {:?} incompatible with weight {:?}",
                    xv.shape(),
                    wv.shape()
                )));
            }
            let m = xv.numel() / d_in;
            let mut data = vec![0.0; m * d_out];
            matmul_acc(xv.data(), wv.data(), &mut data, m, d_in, d_out);
            if let Some(b) = bias {
                let bv = &values[b.0];
                if bv.shape() != [d_out] {
                    return Err(Error::shape(format!(
                        "linear bias {:?} does not match output width {}",
                        bv.shape(),
                        d_out
                    )));
                }
                for row in data.chunks_mut(d_out) {
                    for (o, &bb) in row.iter_mut().zip(bv.iter()) {
                        *o += bb;
                    }
                }
            }
            let mut shape = xv.shape().to_vec();
            *shape.last_mut().expect("checked rank") = d_out;
            (DenseArray::from_vec(&shape, data)?, m, d_in, d_out)
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let xv = &vals[x.0];
                let wv = &vals[w.0];
                // dX = dY · Wᵀ
                let mut dx = vec![0.0; m * d_in];
                matmul_bt_acc(g.data(), wv.data(), &mut dx, m, d_out, d_in);
                grads.accumulate(
                    x.0,
                    DenseArray::from_vec(xv.shape(), dx).expect("consistent shape"),
                );
                // dW = Xᵀ · dY
                let mut dw = vec![0.0; d_in * d_out];
                matmul_at_acc(xv.data(), g.data(), &mut dw, d_in, m, d_out);
                grads.accumulate(
                    w.0,
                    DenseArray::from_vec(&[d_in, d_out], dw).expect("consistent shape"),
                );
                if let Some(b) = bias {
                    let mut db = vec![0.0; d_out];
                    for row in g.data().chunks(d_out) {
                        for (acc, &gv) in db.iter_mut().zip(row) {
                            *acc += gv;
                        }
                    }
                    grads.accumulate(
                        b.0,
                        DenseArray::from_vec(&[d_out], db).expect("consistent shape"),
                    );
                }
            })),
        ))
    }

    /// Batched matrix product over matching (or broadcast-1) leading dims.
    /// a is `[.., m, k]`; b is `[.., k, n]`, or `[.., n, k]` with `transpose_b`.
    pub fn bmm(&self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (out, dims) = {
            let values = self.values.borrow();
            let av = &values[a.0];
            let bv = &values[b.0];
            let dims = BmmDims::resolve(av.shape(), bv.shape(), transpose_b)?;
            let mut data = vec![0.0; dims.lead_total * dims.m * dims.n];
            for li in 0..dims.lead_total {
                let (ao, bo) = dims.offsets(li);
                let a_sl = &av.data()[ao..ao + dims.m * dims.k];
                let b_sl = &bv.data()[bo..bo + dims.k * dims.n];
                let o_sl = &mut data[li * dims.m * dims.n..(li + 1) * dims.m * dims.n];
                if transpose_b {
                    matmul_bt_acc(a_sl, b_sl, o_sl, dims.m, dims.k, dims.n);
                } else {
                    matmul_acc(a_sl, b_sl, o_sl, dims.m, dims.k, dims.n);
                }
            }
            let mut shape = dims.lead_shape.clone();
            shape.push(dims.m);
            shape.push(dims.n);
            (DenseArray::from_vec(&shape, data)?, dims)
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let av = &vals[a.0];
                let bv = &vals[b.0];
                let mut da = DenseArray::zeros(av.shape());
                let mut db = DenseArray::zeros(bv.shape());
                let (m, k, n) = (dims.m, dims.k, dims.n);
                for li in 0..dims.lead_total {
                    let (ao, bo) = dims.offsets(li);
                    let g_sl = &g.data()[li * m * n..(li + 1) * m * n];
                    let a_sl = &av.data()[ao..ao + m * k];
                    let b_sl = &bv.data()[bo..bo + k * n];
                    let da_sl = &mut da.data_mut()[ao..ao + m * k];
                    if transpose_b {
                        // C = A·Bᵀ with B stored [n, k]
                        matmul_acc(g_sl, b_sl, da_sl, m, n, k);
                        let db_sl = &mut db.data_mut()[bo..bo + k * n];
                        matmul_at_acc(g_sl, a_sl, db_sl, n, m, k);
                    } else {
                        matmul_bt_acc(g_sl, b_sl, da_sl, m, n, k);
                        let db_sl = &mut db.data_mut()[bo..bo + k * n];
                        matmul_at_acc(a_sl, g_sl, db_sl, k, m, n);
                    }
                }
                grads.accumulate(a.0, da);
                grads.accumulate(b.0, db);
            })),
        ))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.values.borrow()[a.0].clone().reshaped(shape)?;
        let orig = self.values.borrow()[a.0].shape().to_vec();
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, _vals, grads| {
                grads.accumulate(a.0, g.clone().reshaped(&orig).expect("same numel"));
            })),
        ))
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = {
            let values = self.values.borrow();
            permute_array(&values[a.0], perm)?
        };
        let mut inverse = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, _vals, grads| {
                grads.accumulate(a.0, permute_array(g, &inverse).expect("inverse permutation"));
            })),
        ))
    }

    pub fn concat(&self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (out, ka) = {
            let values = self.values.borrow();
            let av = &values[a.0];
            let bv = &values[b.0];
            let ra = av.shape().len();
            if ra != bv.shape().len() || axis >= ra {
                return Err(Error::shape(format!(
                    "concat axis {axis}: {:?} vs {:?}",
                    av.shape(),
                    bv.shape()
                )));
            }
            for d in 0..ra {
                if d != axis && av.shape()[d] != bv.shape()[d] {
                    return Err(Error::shape(format!(
                        "concat: {:?} vs {:?} differ off-axis",
                        av.shape(),
                        bv.shape()
                    )));
                }
            }
            let lead: usize = av.shape()[..axis].iter().product();
            let trail: usize = av.shape()[axis + 1..].iter().product();
            let (ka, kb) = (av.shape()[axis], bv.shape()[axis]);
            let mut data = Vec::with_capacity(av.numel() + bv.numel());
            for l in 0..lead {
                data.extend_from_slice(&av.data()[l * ka * trail..(l + 1) * ka * trail]);
                data.extend_from_slice(&bv.data()[l * kb * trail..(l + 1) * kb * trail]);
            }
            let mut shape = av.shape().to_vec();
            shape[axis] = ka + kb;
            (DenseArray::from_vec(&shape, data)?, ka)
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let a_shape = vals[a.0].shape().to_vec();
                let b_shape = vals[b.0].shape().to_vec();
                let lead: usize = a_shape[..axis].iter().product();
                let trail: usize = a_shape[axis + 1..].iter().product();
                let kb = b_shape[axis];
                let mut da = Vec::with_capacity(vals[a.0].numel());
                let mut db = Vec::with_capacity(vals[b.0].numel());
                let stride = (ka + kb) * trail;
                for l in 0..lead {
                    let block = &g.data()[l * stride..(l + 1) * stride];
                    da.extend_from_slice(&block[..ka * trail]);
                    db.extend_from_slice(&block[ka * trail..]);
                }
                grads.accumulate(a.0, DenseArray::from_vec(&a_shape, da).expect("split"));
                grads.accumulate(b.0, DenseArray::from_vec(&b_shape, db).expect("split"));
            })),
        ))
    }

    // ── nonlinearities ──────────────────────────────────────────────────

    pub fn relu(&self, a: Var) -> Var {
        let out = map_value(&self.values.borrow()[a.0], |x| x.max(0.0));
        self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                grads.accumulate(a.0, zip_map(g, &vals[a.0], |gv, x| if x > 0.0 { gv } else { 0.0 }));
            })),
        )
    }

    /// Leaky ReLU with negative slope 0.01.
    pub fn leaky_relu(&self, a: Var) -> Var {
        let slope = LEAKY_SLOPE;
        let out = map_value(&self.values.borrow()[a.0], |x| if x > 0.0 { x } else { slope * x });
        self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                grads.accumulate(
                    a.0,
                    zip_map(g, &vals[a.0], |gv, x| if x > 0.0 { gv } else { slope * gv }),
                );
            })),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = map_value(&self.values.borrow()[a.0], f64::tanh);
        let v = self.push(out, Back::Leaf);
        // Rewire: tanh' needs the output value, captured via own index.
        let own = v.0;
        self.backs.borrow_mut()[own] = Back::Op(Box::new(move |g, vals, grads| {
            grads.accumulate(a.0, zip_map(g, &vals[own], |gv, y| gv * (1.0 - y * y)));
        }));
        v
    }

    pub fn ln(&self, a: Var) -> Var {
        let out = map_value(&self.values.borrow()[a.0], f64::ln);
        self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                grads.accumulate(a.0, zip_map(g, &vals[a.0], |gv, x| gv / x));
            })),
        )
    }

    // ── softmax, reductions, gathers ────────────────────────────────────

    /// Softmax over the trailing axis; `mask` entries set to `false` receive
    /// exactly zero probability. Errors if any row is fully masked.
    pub fn masked_softmax(&self, logits: Var, mask: Option<&Mask>) -> Result<Var> {
        let out = {
            let values = self.values.borrow();
            let lv = &values[logits.0];
            let shape = lv.shape().to_vec();
            let last = *shape.last().ok_or_else(|| Error::shape("softmax needs rank >= 1"))?;
            let rows = lv.numel() / last;
            let flags: Option<Vec<bool>> = match mask {
                Some(m) => Some(broadcast_mask(m, &shape)?),
                None => None,
            };
            let mut data = vec![0.0; lv.numel()];
            for r in 0..rows {
                let row = &lv.data()[r * last..(r + 1) * last];
                let frow = flags.as_ref().map(|f| &f[r * last..(r + 1) * last]);
                let mut max = f64::NEG_INFINITY;
                for (j, &x) in row.iter().enumerate() {
                    if frow.map_or(true, |f| f[j]) {
                        max = max.max(x);
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(Error::invalid_state(format!(
                        "masked_softmax: row {r} has no unmasked entry"
                    )));
                }
                let mut sum = 0.0;
                let orow = &mut data[r * last..(r + 1) * last];
                for (j, &x) in row.iter().enumerate() {
                    if frow.map_or(true, |f| f[j]) {
                        let e = (x - max).exp();
                        orow[j] = e;
                        sum += e;
                    }
                }
                for o in orow.iter_mut() {
                    *o /= sum;
                }
            }
            DenseArray::from_vec(&shape, data)?
        };
        // Masked entries carry exactly zero probability, so the output alone
        // determines the backward pass.
        let v = self.push(out, Back::Leaf);
        let own = v.0;
        self.backs.borrow_mut()[own] = Back::Op(Box::new(move |g, vals, grads| {
            let p = &vals[own];
            let last = *p.shape().last().expect("rank checked");
            let rows = p.numel() / last;
            let mut dl = vec![0.0; p.numel()];
            for r in 0..rows {
                let prow = &p.data()[r * last..(r + 1) * last];
                let grow = &g.data()[r * last..(r + 1) * last];
                let dot: f64 = prow.iter().zip(grow).map(|(pv, gv)| pv * gv).sum();
                let drow = &mut dl[r * last..(r + 1) * last];
                for j in 0..last {
                    drow[j] = prow[j] * (grow[j] - dot);
                }
            }
            grads.accumulate(logits.0, DenseArray::from_vec(p.shape(), dl).expect("same shape"));
        }));
        Ok(v)
    }

    /// Mean over one axis, keeping it with extent 1.
    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let (out, n_axis) = {
            let values = self.values.borrow();
            let av = &values[a.0];
            if axis >= av.shape().len() {
                return Err(Error::shape(format!("mean axis {axis} out of range for {:?}", av.shape())));
            }
            let n_axis = av.shape()[axis];
            let trail: usize = av.shape()[axis + 1..].iter().product();
            let lead: usize = av.shape()[..axis].iter().product();
            let mut shape = av.shape().to_vec();
            shape[axis] = 1;
            let mut data = vec![0.0; lead * trail];
            for l in 0..lead {
                for j in 0..n_axis {
                    let src = &av.data()[(l * n_axis + j) * trail..(l * n_axis + j + 1) * trail];
                    let dst = &mut data[l * trail..(l + 1) * trail];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            let inv = 1.0 / n_axis as f64;
            data.iter_mut().for_each(|x| *x *= inv);
            (DenseArray::from_vec(&shape, data)?, n_axis)
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let a_shape = vals[a.0].shape().to_vec();
                let trail: usize = a_shape[axis + 1..].iter().product();
                let lead: usize = a_shape[..axis].iter().product();
                let inv = 1.0 / n_axis as f64;
                let mut da = vec![0.0; vals[a.0].numel()];
                for l in 0..lead {
                    let grow = &g.data()[l * trail..(l + 1) * trail];
                    for j in 0..n_axis {
                        let dst = &mut da[(l * n_axis + j) * trail..(l * n_axis + j + 1) * trail];
                        for (d, &gv) in dst.iter_mut().zip(grow) {
                            *d += gv * inv;
                        }
                    }
                }
                grads.accumulate(a.0, DenseArray::from_vec(&a_shape, da).expect("same shape"));
            })),
        ))
    }

    /// Select one row per batch entry from `[B_h, N, D]`, giving `[B, 1, D]`.
    /// `B_h` may be 1 (shared encodings broadcast over a larger rollout batch).
    pub fn gather_nodes(&self, h: Var, idx: &[usize]) -> Result<Var> {
        let indices = idx.to_vec();
        let out = {
            let values = self.values.borrow();
            let hv = &values[h.0];
            if hv.shape().len() != 3 {
                return Err(Error::shape(format!("gather_nodes wants [B, N, D], got {:?}", hv.shape())));
            }
            let (bh, n, d) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
            if bh != 1 && bh != indices.len() {
                return Err(Error::shape(format!(
                    "gather_nodes: batch {} incompatible with {} indices",
                    bh,
                    indices.len()
                )));
            }
            let mut data = Vec::with_capacity(indices.len() * d);
            for (b, &i) in indices.iter().enumerate() {
                if i >= n {
                    return Err(Error::invalid_argument(format!("node index {i} out of range {n}")));
                }
                let src_b = if bh == 1 { 0 } else { b };
                data.extend_from_slice(&hv.data()[(src_b * n + i) * d..(src_b * n + i + 1) * d]);
            }
            DenseArray::from_vec(&[indices.len(), 1, d], data)?
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let hv = &vals[h.0];
                let (bh, n, d) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
                let mut dh = DenseArray::zeros(hv.shape());
                for (b, &i) in indices.iter().enumerate() {
                    let src_b = if bh == 1 { 0 } else { b };
                    let dst = &mut dh.data_mut()[(src_b * n + i) * d..(src_b * n + i + 1) * d];
                    let src = &g.data()[b * d..(b + 1) * d];
                    for (o, &gv) in dst.iter_mut().zip(src) {
                        *o += gv;
                    }
                }
                grads.accumulate(h.0, dh);
            })),
        ))
    }

    /// Tile along the leading axis: row `b` of `[B, ..]` becomes rows
    /// `b*times .. (b+1)*times` of `[B*times, ..]`.
    pub fn repeat_interleave0(&self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::invalid_argument("repeat count must be positive"));
        }
        let out = {
            let values = self.values.borrow();
            let av = &values[a.0];
            if av.shape().is_empty() {
                return Err(Error::shape("repeat_interleave0 needs rank >= 1"));
            }
            let b = av.shape()[0];
            let row = av.numel() / b;
            let mut data = Vec::with_capacity(av.numel() * times);
            for bi in 0..b {
                for _ in 0..times {
                    data.extend_from_slice(&av.data()[bi * row..(bi + 1) * row]);
                }
            }
            let mut shape = av.shape().to_vec();
            shape[0] = b * times;
            DenseArray::from_vec(&shape, data)?
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let av = &vals[a.0];
                let b = av.shape()[0];
                let row = av.numel() / b;
                let mut da = DenseArray::zeros(av.shape());
                for bi in 0..b {
                    for t in 0..times {
                        let src = &g.data()[(bi * times + t) * row..(bi * times + t + 1) * row];
                        let dst = &mut da.data_mut()[bi * row..(bi + 1) * row];
                        for (o, &gv) in dst.iter_mut().zip(src) {
                            *o += gv;
                        }
                    }
                }
                grads.accumulate(a.0, da);
            })),
        ))
    }

    /// Pick one entry per row of a `[B, N]` array, giving `[B]`.
    pub fn gather_last(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let indices = idx.to_vec();
        let out = {
            let values = self.values.borrow();
            let av = &values[a.0];
            if av.shape().len() != 2 || av.shape()[0] != indices.len() {
                return Err(Error::shape(format!(
                    "gather_last wants [B={}, N], got {:?}",
                    indices.len(),
                    av.shape()
                )));
            }
            let n = av.shape()[1];
            let mut data = Vec::with_capacity(indices.len());
            for (b, &i) in indices.iter().enumerate() {
                if i >= n {
                    return Err(Error::invalid_argument(format!("index {i} out of range {n}")));
                }
                data.push(av.data()[b * n + i]);
            }
            DenseArray::from_vec(&[indices.len()], data)?
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let n = vals[a.0].shape()[1];
                let mut da = DenseArray::zeros(vals[a.0].shape());
                for (b, &i) in indices.iter().enumerate() {
                    da.data_mut()[b * n + i] += g.data()[b];
                }
                grads.accumulate(a.0, da);
            })),
        ))
    }

    /// Weighted sum against constant weights: `Σ_i a_i · w_i`, a scalar.
    /// Gradients do not flow into the weights.
    pub fn dot_const(&self, a: Var, weights: &DenseArray) -> Result<Var> {
        let w = weights.clone();
        let out = {
            let values = self.values.borrow();
            let av = &values[a.0];
            if av.numel() != w.numel() {
                return Err(Error::shape(format!(
                    "dot_const: {} values vs {} weights",
                    av.numel(),
                    w.numel()
                )));
            }
            DenseArray::scalar(av.iter().zip(w.iter()).map(|(x, y)| x * y).sum())
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let gs = g.scalar_value();
                let shape = vals[a.0].shape().to_vec();
                let data = w.iter().map(|&wv| gs * wv).collect();
                grads.accumulate(a.0, DenseArray::from_vec(&shape, data).expect("same shape"));
            })),
        ))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let out = DenseArray::scalar(self.values.borrow()[a.0].iter().sum());
        self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let gs = g.scalar_value();
                let mut da = DenseArray::zeros(vals[a.0].shape());
                da.fill(gs);
                grads.accumulate(a.0, da);
            })),
        )
    }

    // ── normalization ───────────────────────────────────────────────────

    /// Feature normalization with learned scale and shift.
    ///
    /// Batch kind normalizes each trailing feature over every row and, in
    /// training mode, folds the batch statistics into `running` with momentum
    /// 0.1; eval mode normalizes with the running statistics. Instance kind
    /// normalizes over the node axis of `[B, N, D]` separately per instance
    /// and per feature, with no running state.
    pub fn norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&BufferRef, &BufferRef)>,
        kind: NormKind,
        mode: NormMode,
    ) -> Result<Var> {
        let (shape, d) = {
            let values = self.values.borrow();
            let xv = &values[x.0];
            let shape = xv.shape().to_vec();
            let d = *shape.last().ok_or_else(|| Error::shape("norm needs rank >= 2"))?;
            let gv = &values[gamma.0];
            if gv.shape() != [d] || values[beta.0].shape() != [d] {
                return Err(Error::shape(format!(
                    "norm scale/shift must be [{d}], got {:?}",
                    gv.shape()
                )));
            }
            (shape, d)
        };

        match kind {
            NormKind::Batch => self.batch_norm_impl(x, gamma, beta, running, mode, &shape, d),
            NormKind::Instance => self.instance_norm_impl(x, gamma, beta, &shape, d),
        }
    }

    fn batch_norm_impl(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&BufferRef, &BufferRef)>,
        mode: NormMode,
        shape: &[usize],
        d: usize,
    ) -> Result<Var> {
        let rows = shape.iter().product::<usize>() / d;
        let (mu, sd): (Vec<f64>, Vec<f64>) = match mode {
            NormMode::Train { update_stats } => {
                if shape[0] < 2 {
                    return Err(Error::invalid_state(
                        "batch_norm in training mode needs batch size >= 2",
                    ));
                }
                let values = self.values.borrow();
                let xv = &values[x.0];
                let mut mu = vec![0.0; d];
                let mut var = vec![0.0; d];
                for row in xv.data().chunks(d) {
                    for (m, &v) in mu.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mu.iter_mut().for_each(|m| *m /= rows as f64);
                for row in xv.data().chunks(d) {
                    for (f, (&v, &m)) in row.iter().zip(&mu).enumerate() {
                        var[f] += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                if update_stats {
                    if let Some((rm, rv)) = running {
                        let mut rm = rm.borrow_mut();
                        for (r, &m) in rm.value.data_mut().iter_mut().zip(&mu) {
                            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * m;
                        }
                        let mut rv = rv.borrow_mut();
                        for (r, &v) in rv.value.data_mut().iter_mut().zip(&var) {
                            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * v;
                        }
                    }
                }
                (mu, var.iter().map(|v| (v + NORM_EPS).sqrt()).collect())
            }
            NormMode::Eval => {
                let (rm, rv) = running.ok_or_else(|| {
                    Error::invalid_state("batch_norm eval mode requires running statistics")
                })?;
                let mu = rm.borrow().value.data().to_vec();
                let sd = rv.borrow().value.iter().map(|v| (v + NORM_EPS).sqrt()).collect();
                (mu, sd)
            }
        };

        let out = {
            let values = self.values.borrow();
            let xv = &values[x.0];
            let gv = &values[gamma.0];
            let bv = &values[beta.0];
            let mut data = vec![0.0; xv.numel()];
            for (orow, xrow) in data.chunks_mut(d).zip(xv.data().chunks(d)) {
                for f in 0..d {
                    let xhat = (xrow[f] - mu[f]) / sd[f];
                    orow[f] = gv.data()[f] * xhat + bv.data()[f];
                }
            }
            DenseArray::from_vec(shape, data)?
        };
        let train = matches!(mode, NormMode::Train { .. });
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let xv = &vals[x.0];
                let gv = &vals[gamma.0];
                let d = mu.len();
                let rows = xv.numel() / d;
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for (grow, xrow) in g.data().chunks(d).zip(xv.data().chunks(d)) {
                    for f in 0..d {
                        let xhat = (xrow[f] - mu[f]) / sd[f];
                        dgamma[f] += grow[f] * xhat;
                        dbeta[f] += grow[f];
                        sum_g[f] += grow[f];
                        sum_gx[f] += grow[f] * xhat;
                    }
                }
                let mut dx = vec![0.0; xv.numel()];
                let rinv = 1.0 / rows as f64;
                for ((dxrow, grow), xrow) in
                    dx.chunks_mut(d).zip(g.data().chunks(d)).zip(xv.data().chunks(d))
                {
                    for f in 0..d {
                        let xhat = (xrow[f] - mu[f]) / sd[f];
                        let term = if train {
                            grow[f] - sum_g[f] * rinv - xhat * sum_gx[f] * rinv
                        } else {
                            grow[f]
                        };
                        dxrow[f] = gv.data()[f] / sd[f] * term;
                    }
                }
                grads.accumulate(x.0, DenseArray::from_vec(xv.shape(), dx).expect("same shape"));
                grads.accumulate(gamma.0, DenseArray::from_vec(&[d], dgamma).expect("d"));
                grads.accumulate(beta.0, DenseArray::from_vec(&[d], dbeta).expect("d"));
            })),
        ))
    }

    fn instance_norm_impl(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        shape: &[usize],
        d: usize,
    ) -> Result<Var> {
        if shape.len() != 3 {
            return Err(Error::shape(format!(
                "instance norm wants [B, N, D], got {shape:?}"
            )));
        }
        let (b, n) = (shape[0], shape[1]);
        // Per (instance, feature) statistics over the node axis.
        let (out, mu, sd) = {
            let values = self.values.borrow();
            let xv = &values[x.0];
            let gv = &values[gamma.0];
            let bv = &values[beta.0];
            let mut mu = vec![0.0; b * d];
            let mut var = vec![0.0; b * d];
            for bi in 0..b {
                for ni in 0..n {
                    let row = &xv.data()[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                    for (f, &v) in row.iter().enumerate() {
                        mu[bi * d + f] += v;
                    }
                }
            }
            mu.iter_mut().for_each(|m| *m /= n as f64);
            for bi in 0..b {
                for ni in 0..n {
                    let row = &xv.data()[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                    for (f, &v) in row.iter().enumerate() {
                        let dmu = v - mu[bi * d + f];
                        var[bi * d + f] += dmu * dmu;
                    }
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let sd: Vec<f64> = var.iter().map(|v| (v + NORM_EPS).sqrt()).collect();
            let mut data = vec![0.0; xv.numel()];
            for bi in 0..b {
                for ni in 0..n {
                    let xrow = &xv.data()[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                    let orow = &mut data[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                    for f in 0..d {
                        let xhat = (xrow[f] - mu[bi * d + f]) / sd[bi * d + f];
                        orow[f] = gv.data()[f] * xhat + bv.data()[f];
                    }
                }
            }
            (DenseArray::from_vec(shape, data)?, mu, sd)
        };
        Ok(self.push(
            out,
            Back::Op(Box::new(move |g, vals, grads| {
                let xv = &vals[x.0];
                let gv = &vals[gamma.0];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = vec![0.0; xv.numel()];
                let ninv = 1.0 / n as f64;
                for bi in 0..b {
                    let mut sum_g = vec![0.0; d];
                    let mut sum_gx = vec![0.0; d];
                    for ni in 0..n {
                        let off = (bi * n + ni) * d;
                        let grow = &g.data()[off..off + d];
                        let xrow = &xv.data()[off..off + d];
                        for f in 0..d {
                            let xhat = (xrow[f] - mu[bi * d + f]) / sd[bi * d + f];
                            dgamma[f] += grow[f] * xhat;
                            dbeta[f] += grow[f];
                            sum_g[f] += grow[f];
                            sum_gx[f] += grow[f] * xhat;
                        }
                    }
                    for ni in 0..n {
                        let off = (bi * n + ni) * d;
                        let grow = &g.data()[off..off + d];
                        let xrow = &xv.data()[off..off + d];
                        let dxrow = &mut dx[off..off + d];
                        for f in 0..d {
                            let xhat = (xrow[f] - mu[bi * d + f]) / sd[bi * d + f];
                            let term = grow[f] - sum_g[f] * ninv - xhat * sum_gx[f] * ninv;
                            dxrow[f] = gv.data()[f] / sd[bi * d + f] * term;
                        }
                    }
                }
                grads.accumulate(x.0, DenseArray::from_vec(xv.shape(), dx).expect("same shape"));
                grads.accumulate(gamma.0, DenseArray::from_vec(&[d], dgamma).expect("d"));
                grads.accumulate(beta.0, DenseArray::from_vec(&[d], dbeta).expect("d"));
            })),
        ))
    }
}

pub const LEAKY_SLOPE: f64 = 0.01;

// ── helpers ─────────────────────────────────────────────────────────────

fn map_value(a: &DenseArray, f: impl Fn(f64) -> f64) -> DenseArray {
    let data = a.iter().map(|&x| f(x)).collect();
    DenseArray::from_vec(a.shape(), data).expect("same shape")
}

fn zip_map(a: &DenseArray, b: &DenseArray, f: impl Fn(f64, f64) -> f64) -> DenseArray {
    debug_assert_eq!(a.numel(), b.numel());
    let data = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
    DenseArray::from_vec(a.shape(), data).expect("same shape")
}

fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// Row-major strides for `shape` viewed inside `out_shape`, 0 on broadcast dims.
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[offset + i] = acc;
        }
        acc *= shape[i];
    }
    strides
}

fn broadcast_binary(a: &DenseArray, b: &DenseArray, f: impl Fn(f64, f64) -> f64) -> Result<DenseArray> {
    if a.shape() == b.shape() {
        return Ok(zip_map(a, b, f));
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape())?;
    let sa = bcast_strides(a.shape(), &out_shape);
    let sb = bcast_strides(b.shape(), &out_shape);
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    let mut idx = vec![0usize; out_shape.len()];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for slot in data.iter_mut() {
        *slot = f(a.data()[oa], b.data()[ob]);
        // advance multi-index
        for dim in (0..out_shape.len()).rev() {
            idx[dim] += 1;
            oa += sa[dim];
            ob += sb[dim];
            if idx[dim] < out_shape[dim] {
                break;
            }
            idx[dim] = 0;
            oa -= sa[dim] * out_shape[dim];
            ob -= sb[dim] * out_shape[dim];
        }
    }
    DenseArray::from_vec(&out_shape, data)
}

/// Sum `g` down to `target` shape (inverse of broadcasting).
fn reduce_to_shape(g: &DenseArray, target: &[usize]) -> DenseArray {
    if g.shape() == target {
        return g.clone();
    }
    let strides = bcast_strides(target, g.shape());
    let mut out = DenseArray::zeros(target);
    let out_shape = g.shape().to_vec();
    let mut idx = vec![0usize; out_shape.len()];
    let mut ot = 0usize;
    for &gv in g.iter() {
        out.data_mut()[ot] += gv;
        for dim in (0..out_shape.len()).rev() {
            idx[dim] += 1;
            ot += strides[dim];
            if idx[dim] < out_shape[dim] {
                break;
            }
            idx[dim] = 0;
            ot -= strides[dim] * out_shape[dim];
        }
    }
    out
}

fn broadcast_mask(mask: &Mask, to_shape: &[usize]) -> Result<Vec<bool>> {
    if mask.shape() == to_shape {
        return Ok(mask.allowed.clone());
    }
    // validate compatibility
    let merged = broadcast_shapes(mask.shape(), to_shape)?;
    if merged != to_shape {
        return Err(Error::shape(format!(
            "mask {:?} does not broadcast to {:?}",
            mask.shape(),
            to_shape
        )));
    }
    let strides = bcast_strides(mask.shape(), to_shape);
    let numel: usize = to_shape.iter().product();
    let mut out = vec![false; numel];
    let mut idx = vec![0usize; to_shape.len()];
    let mut om = 0usize;
    for slot in out.iter_mut() {
        *slot = mask.allowed[om];
        for dim in (0..to_shape.len()).rev() {
            idx[dim] += 1;
            om += strides[dim];
            if idx[dim] < to_shape[dim] {
                break;
            }
            idx[dim] = 0;
            om -= strides[dim] * to_shape[dim];
        }
    }
    Ok(out)
}

fn permute_array(a: &DenseArray, perm: &[usize]) -> Result<DenseArray> {
    let rank = a.shape().len();
    if perm.len() != rank {
        return Err(Error::shape(format!("permutation {perm:?} for rank {rank}")));
    }
    let in_shape = a.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let mut data = vec![0.0; a.numel()];
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    for slot in data.iter_mut() {
        *slot = a.data()[src];
        for dim in (0..rank).rev() {
            idx[dim] += 1;
            src += src_strides[dim];
            if idx[dim] < out_shape[dim] {
                break;
            }
            idx[dim] = 0;
            src -= src_strides[dim] * out_shape[dim];
        }
    }
    DenseArray::from_vec(&out_shape, data)
}

/// Resolved dimensions for a batched matrix product.
#[derive(Clone)]
struct BmmDims {
    lead_shape: Vec<usize>,
    lead_total: usize,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
}

impl BmmDims {
    fn resolve(a_shape: &[usize], b_shape: &[usize], transpose_b: bool) -> Result<BmmDims> {
        if a_shape.len() < 2 || b_shape.len() < 2 {
            return Err(Error::shape(format!("bmm wants rank >= 2: {a_shape:?}, {b_shape:?}")));
        }
        let (m, k) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (bk, n) = if transpose_b {
            (b_shape[b_shape.len() - 1], b_shape[b_shape.len() - 2])
        } else {
            (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1])
        };
        if k != bk {
            return Err(Error::shape(format!(
                "bmm inner dims disagree: {a_shape:?} x {b_shape:?} (transpose_b={transpose_b})"
            )));
        }
        let a_lead = &a_shape[..a_shape.len() - 2];
        let b_lead = &b_shape[..b_shape.len() - 2];
        let lead_shape = broadcast_shapes(a_lead, b_lead)?;
        let lead_total = lead_shape.iter().product::<usize>().max(1);
        // strides over leading dims only, in units of one matrix
        let mut a_strides = bcast_strides(a_lead, &lead_shape);
        let mut b_strides = bcast_strides(b_lead, &lead_shape);
        for s in a_strides.iter_mut() {
            *s *= m * k;
        }
        for s in b_strides.iter_mut() {
            let unit = if transpose_b { n * k } else { k * n };
            *s *= unit;
        }
        Ok(BmmDims { lead_shape, lead_total, a_strides, b_strides, m, k, n })
    }

    fn offsets(&self, lead_index: usize) -> (usize, usize) {
        let mut rem = lead_index;
        let mut ao = 0;
        let mut bo = 0;
        for dim in (0..self.lead_shape.len()).rev() {
            let extent = self.lead_shape[dim];
            let pos = rem % extent;
            rem /= extent;
            ao += pos * self.a_strides[dim];
            bo += pos * self.b_strides[dim];
        }
        (ao, bo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::{ParamGroup, ParamStore};

    fn arr(shape: &[usize], data: &[f64]) -> DenseArray {
        DenseArray::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_broadcasts_and_reduces_grad() {
        let tape = Tape::new();
        let a = tape.leaf(arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let mut store = ParamStore::new();
        let bias = store.add("b", ParamGroup::Heads, arr(&[3], &[10.0, 20.0, 30.0]));
        let bv = tape.param(&bias);
        let y = tape.add(a, bv).unwrap();
        assert_eq!(tape.value_of(y).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        // bias gradient sums over the broadcast rows
        assert_eq!(bias.borrow().grad.data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Backbone, arr(&[2], &[3.0, 4.0]));
        let wv = tape.param(&w);
        let loss = tape.sum_all(wv);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(w.borrow().grad.data(), &[2.0, 2.0]);
    }

    #[test]
    fn frozen_param_gets_no_grad() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Backbone, arr(&[2], &[3.0, 4.0]));
        w.borrow_mut().trainable = false;
        let wv = tape.param(&w);
        let loss = tape.sum_all(wv);
        tape.backward(loss).unwrap();
        assert_eq!(w.borrow().grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn unused_param_keeps_zero_grad() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let used = store.add("u", ParamGroup::Backbone, arr(&[2], &[1.0, 1.0]));
        let unused = store.add("n", ParamGroup::Backbone, arr(&[2], &[5.0, 5.0]));
        let uv = tape.param(&used);
        let _nv = tape.param(&unused);
        let loss = tape.sum_all(uv);
        tape.backward(loss).unwrap();
        assert_eq!(unused.borrow().grad.data(), &[0.0, 0.0]);
        assert_eq!(used.borrow().grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let a = tape.leaf(arr(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bmm_matches_manual() {
        let tape = Tape::new();
        // [2, 2, 3] x [2, 3, 2]
        let a = tape.leaf(arr(
            &[2, 2, 3],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -1.0, 0.0, 1.0, 2.0, 2.0, 2.0],
        ));
        let b = tape.leaf(arr(
            &[2, 3, 2],
            &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 0.0, 0.0, 2.0, 1.0, 1.0],
        ));
        let c = tape.bmm(a, b, false).unwrap();
        assert_eq!(tape.shape_of(c), vec![2, 2, 2]);
        let v = tape.value_of(c);
        // first batch: [[1,2,3],[4,5,6]] x [[1,0],[0,1],[1,1]] = [[4,5],[10,11]]
        assert_eq!(&v.data()[..4], &[4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn bmm_broadcast_leading() {
        let tape = Tape::new();
        let a = tape.leaf(arr(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(arr(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0])); // identity shared
        let c = tape.bmm(a, b, false).unwrap();
        assert_eq!(tape.value_of(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        let loss = tape.sum_all(c);
        tape.backward(loss).unwrap();
    }

    #[test]
    fn masked_softmax_basics() {
        let tape = Tape::new();
        let logits = tape.leaf(arr(&[1, 3], &[1.0, 2.0, 3.0]));
        let mask = Mask::new(&[1, 3], vec![true, false, true]).unwrap();
        let p = tape.masked_softmax(logits, Some(&mask)).unwrap();
        let v = tape.value_of(p);
        assert_eq!(v.data()[1], 0.0);
        let total: f64 = v.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_single_entry_is_one() {
        let tape = Tape::new();
        let logits = tape.leaf(arr(&[1, 3], &[5.0, -2.0, 0.1]));
        let mask = Mask::new(&[1, 3], vec![false, true, false]).unwrap();
        let p = tape.masked_softmax(logits, Some(&mask)).unwrap();
        assert_eq!(tape.value_of(p).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_softmax_all_masked_is_invalid_state() {
        let tape = Tape::new();
        let logits = tape.leaf(arr(&[1, 2], &[0.0, 0.0]));
        let mask = Mask::new(&[1, 2], vec![false, false]).unwrap();
        assert!(matches!(
            tape.masked_softmax(logits, Some(&mask)),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn softmax_shift_invariance() {
        let tape = Tape::new();
        let base = [0.3, -1.2, 2.5, 0.0];
        let a = tape.leaf(arr(&[1, 4], &base));
        let shifted: Vec<f64> = base.iter().map(|x| x + 123.456).collect();
        let b = tape.leaf(arr(&[1, 4], &shifted));
        let pa = tape.masked_softmax(a, None).unwrap();
        let pb = tape.masked_softmax(b, None).unwrap();
        for (x, y) in tape.value_of(pa).iter().zip(tape.value_of(pb).iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn truncate_drops_nodes() {
        let tape = Tape::new();
        let a = tape.leaf(arr(&[1], &[1.0]));
        let mark = tape.mark();
        let _b = tape.scale(a, 2.0);
        assert_eq!(tape.len(), 2);
        tape.truncate(mark);
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn leaky_relu_values() {
        let tape = Tape::new();
        let a = tape.leaf(arr(&[3], &[0.0, -1.0, 2.0]));
        let y = tape.leaky_relu(a);
        assert_eq!(tape.value_of(y).data(), &[0.0, -0.01, 2.0]);
    }

    #[test]
    fn batch_norm_moments_match_scale_shift() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let gamma = store.add("g", ParamGroup::Backbone, arr(&[2], &[2.0, 0.5]));
        let beta = store.add("b", ParamGroup::Backbone, arr(&[2], &[1.0, -1.0]));
        // 4 rows, 2 features
        let x = tape.leaf(arr(&[4, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]));
        let gv = tape.param(&gamma);
        let bv = tape.param(&beta);
        let y = tape
            .norm(x, gv, bv, None, NormKind::Batch, NormMode::Train { update_stats: false })
            .unwrap();
        let v = tape.value_of(y);
        // per-feature mean of output ≈ shift, std ≈ scale
        for f in 0..2 {
            let col: Vec<f64> = (0..4).map(|r| v.data()[r * 2 + f]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / 4.0;
            let target_shift = [1.0, -1.0][f];
            let target_scale = [2.0, 0.5][f];
            assert!((mean - target_shift).abs() < 1e-6);
            assert!((var.sqrt() - target_scale).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_train_requires_batch_of_two() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let gamma = store.add("g", ParamGroup::Backbone, arr(&[2], &[1.0, 1.0]));
        let beta = store.add("b", ParamGroup::Backbone, arr(&[2], &[0.0, 0.0]));
        let x = tape.leaf(arr(&[1, 2], &[1.0, 2.0]));
        let gv = tape.param(&gamma);
        let bv = tape.param(&beta);
        let r = tape.norm(x, gv, bv, None, NormKind::Batch, NormMode::Train { update_stats: false });
        assert!(matches!(r, Err(Error::InvalidState(_))));
    }
}
