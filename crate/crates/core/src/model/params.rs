use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::autograd::{Matrix, Tape, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

/// Named parameter arrays in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParameterAccounting {
    pub total: usize,
    pub trainable: usize,
    pub ratio: f64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter.
    ///
    /// # Panics
    /// On a duplicate name; names are fixed at model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> ParamId {
        let name = name.into();
        let id = ParamId(self.params.len());
        assert!(
            self.by_name.insert(name.clone(), id).is_none(),
            "duplicate parameter {name}"
        );
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.value.fill(0.0);
        }
    }

    pub fn accounting(&self) -> ParameterAccounting {
        let total: usize = self.params.iter().map(|p| p.value.len()).sum();
        let trainable: usize = self
            .params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum();
        ParameterAccounting {
            total,
            trainable,
            ratio: if total == 0 { 0.0 } else { trainable as f64 / total as f64 },
        }
    }
}

/// A tape bound to a parameter store; each parameter becomes one leaf.
pub struct Graph<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, track: bool) -> Self {
        Self {
            tape: if track { Tape::new() } else { Tape::inference() },
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.tape.param(id.0, p.value.clone(), p.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }
}

/// Gaussian init with the given standard deviation.
pub fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    if std == 0.0 {
        return Matrix::zeros((rows, cols));
    }
    let dist = Normal::new(0.0, std).expect("finite std");
    Matrix::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Identity when square, scaled Gaussian otherwise.
pub fn identity_or_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    if rows == cols {
        Matrix::eye(rows)
    } else {
        normal(rng, rows, cols, 1.0 / (cols as f64).sqrt())
    }
}

/// A dense layer `w · x + b` with `w: out × in`, `b: out × 1`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        weight: Matrix,
        trainable: bool,
    ) -> Self {
        let out = weight.nrows();
        let w = store.add(format!("{name}.w"), weight, trainable);
        let b = store.add(format!("{name}.b"), Matrix::zeros((out, 1)), trainable);
        Self { w, b }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let wx = g.tape.matmul(w, x);
        g.tape.add_column(wx, b)
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.value(self.w).nrows()
    }
}
