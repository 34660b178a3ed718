use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// One named trainable array.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Arc<Tensor>,
    pub frozen: bool,
}

/// All model parameters, keyed by dotted path (`encoder.0.v2t.wq`).
///
/// Ordered by name so iteration, serialization and gradient reduction are
/// deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

/// Per-parameter gradients from one or more backward passes.
pub type GradMap = BTreeMap<String, Tensor>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::config(format!("parameter {name} registered twice")));
        }
        self.params.insert(name, Param { value: Arc::new(value), frozen: false });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| p.value.as_ref())
    }

    /// Replaces the value of an existing parameter; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter {name}: shape {:?} cannot become {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    /// Mutable access for optimizer updates (copy-on-write if a tape still holds it).
    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| Arc::make_mut(&mut p.value))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Marks every parameter whose name starts with `prefix` as frozen.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = true;
            }
        }
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
        p.frozen = frozen;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        self.params.values_mut().for_each(|p| p.frozen = true);
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.frozen)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a tape leaf; frozen ones do not take gradients.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), tape.leaf_shared(Arc::clone(&p.value), !p.frozen)))
            .collect();
        Bound { vars }
    }

    pub fn zero_grads(&self) -> GradMap {
        self.params
            .iter()
            .filter(|(_, p)| !p.frozen)
            .map(|(n, p)| (n.clone(), Tensor::zeros(p.value.shape())))
            .collect()
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: HashMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars.get(name).copied().ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    /// Gradient of every trainable bound parameter (zeros where nothing flowed).
    pub fn collect_grads(&self, grads: &Gradients) -> GradMap {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(n, &v)| (n.clone(), grads.get_or_zeros(v)))
            .collect()
    }
}

/// Everything a block needs during one forward pass.
pub struct Ctx<'t> {
    pub tape: &'t Tape,
    params: Bound<'t>,
    dropout: Option<(f64, RefCell<ChaCha8Rng>)>,
    stop_gradients: bool,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t Tape, store: &ParamStore) -> Self {
        Self { tape, params: store.bind(tape), dropout: None, stop_gradients: true }
    }

    /// Binds parameter names to caller-supplied tape variables, e.g. to check
    /// gradients with respect to parameters.
    pub fn with_vars(tape: &'t Tape, vars: impl IntoIterator<Item = (String, Var<'t>)>) -> Self {
        Self { tape, params: Bound { vars: vars.into_iter().collect() }, dropout: None, stop_gradients: true }
    }

    /// Enables dropout at `rate` with masks drawn from `seed`.
    pub fn with_dropout(mut self, rate: f64, seed: u64) -> Self {
        if rate > 0.0 {
            self.dropout = Some((rate, RefCell::new(ChaCha8Rng::seed_from_u64(seed))));
        }
        self
    }

    /// Lets gradients pass through [`Ctx::stop_gradient`]. Forward values are
    /// unchanged; finite-difference checks of blocks that stop gradients need
    /// this to compare against the full derivative.
    pub fn with_gradients_through_stops(mut self) -> Self {
        self.stop_gradients = false;
        self
    }

    /// Detaches `x` from the graph unless stops are disabled.
    pub fn stop_gradient(&self, x: Var<'t>) -> Var<'t> {
        if self.stop_gradients {
            x.detach()
        } else {
            x
        }
    }

    pub fn param(&self, name: &str) -> Result<Var<'t>> {
        self.params.get(name)
    }

    pub fn bound(&self) -> &Bound<'t> {
        &self.params
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    /// Inverted dropout; identity when dropout is off.
    pub fn dropout(&self, x: Var<'t>) -> Result<Var<'t>> {
        let Some((rate, rng)) = &self.dropout else { return Ok(x) };
        let keep = 1.0 - rate;
        let shape = x.shape();
        let n = shape.iter().product();
        let mut rng = rng.borrow_mut();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        x.mul(self.tape.constant(Tensor::new(&shape, mask)?))
    }
}

/// Parameter initializers driven by one seeded generator.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Glorot-uniform `[fan_in, fan_out]` matrix.
    pub fn xavier(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::uniform(&[fan_in, fan_out], -bound, bound, &mut self.rng)
    }

    pub fn uniform(&mut self, shape: &[usize], scale: f64) -> Tensor {
        Tensor::uniform(shape, -scale, scale, &mut self.rng)
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = self.rng.gen();
                std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
