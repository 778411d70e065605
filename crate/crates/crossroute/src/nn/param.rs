//! Trainable parameters and the partitioned parameter store.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;

use super::array::DenseArray;

/// Partition group a parameter belongs to. The partition is the unit of
/// freezing and of checkpointing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    Heads,
    Adapters,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Backbone, ParamGroup::Heads, ParamGroup::Adapters];

    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::Heads => "heads",
            ParamGroup::Adapters => "adapters",
        }
    }

    pub fn from_name(s: &str) -> Option<ParamGroup> {
        match s {
            "backbone" => Some(ParamGroup::Backbone),
            "heads" => Some(ParamGroup::Heads),
            "adapters" => Some(ParamGroup::Adapters),
            _ => None,
        }
    }
}

/// A named parameter with its gradient accumulator.
#[derive(Debug)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: DenseArray,
    pub grad: DenseArray,
    pub trainable: bool,
}

pub type ParamRef = Rc<RefCell<Param>>;

/// A non-trainable buffer (normalization running statistics). Buffers are
/// checkpointed with their owning group but never counted as parameters.
#[derive(Debug)]
pub struct Buffer {
    pub name: String,
    pub group: ParamGroup,
    pub value: DenseArray,
}

pub type BufferRef = Rc<RefCell<Buffer>>;

/// All parameters and buffers of one model, in creation order. Creation order
/// is deterministic, which fixes the checkpoint layout.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<ParamRef>,
    buffers: Vec<BufferRef>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: ParamGroup, value: DenseArray) -> ParamRef {
        debug_assert!(
            self.find(name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = DenseArray::zeros(value.shape());
        let p = Rc::new(RefCell::new(Param {
            name: name.to_string(),
            group,
            value,
            grad,
            trainable: true,
        }));
        self.params.push(p.clone());
        p
    }

    pub fn add_buffer(&mut self, name: &str, group: ParamGroup, value: DenseArray) -> BufferRef {
        let b = Rc::new(RefCell::new(Buffer { name: name.to_string(), group, value }));
        self.buffers.push(b.clone());
        b
    }

    pub fn params(&self) -> &[ParamRef] {
        &self.params
    }

    pub fn buffers(&self) -> &[BufferRef] {
        &self.buffers
    }

    pub fn find(&self, name: &str) -> Option<ParamRef> {
        self.params.iter().find(|p| p.borrow().name == name).cloned()
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferRef> {
        self.buffers.iter().find(|b| b.borrow().name == name).cloned()
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.borrow_mut().grad.fill(0.0);
        }
    }

    /// (total, trainable) scalar parameter counts.
    pub fn counts(&self) -> (usize, usize) {
        let mut total = 0;
        let mut trainable = 0;
        for p in &self.params {
            let p = p.borrow();
            total += p.value.numel();
            if p.trainable {
                trainable += p.value.numel();
            }
        }
        (total, trainable)
    }

    pub fn count_group(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.borrow().group == group)
            .map(|p| p.borrow().value.numel())
            .sum()
    }

    pub fn set_group_trainable(&self, group: ParamGroup, trainable: bool) {
        for p in &self.params {
            let mut p = p.borrow_mut();
            if p.group == group {
                p.trainable = trainable;
            }
        }
    }

    pub fn trainable_params(&self) -> Vec<ParamRef> {
        self.params.iter().filter(|p| p.borrow().trainable).cloned().collect()
    }
}

/// Uniform(-1/sqrt(d), 1/sqrt(d)) initialization used for problem-specific
/// modules and adapter networks.
pub fn uniform_init(rng: &mut impl Rng, shape: &[usize], d: usize) -> DenseArray {
    let bound = 1.0 / (d as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    DenseArray::from_vec(shape, data).expect("consistent shape")
}
