//! Named trainable tensors in a fixed enumeration order.

use std::collections::HashMap;

use super::{ModelConfig, ModelError};
use crate::tensor::{Graph, Rng64, Tensor, Var};

/// `(name, shape)` of every parameter implied by a config, in storage order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_embed;
    let ff = cfg.d_ff;
    let mut out = vec![
        ("tok.w".to_string(), vec![cfg.token_input_dim(), d]),
        ("tok.b".to_string(), vec![d]),
        ("cls".to_string(), vec![d]),
    ];
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");
        out.extend([
            (p("ln1.gamma"), vec![d]),
            (p("ln1.beta"), vec![d]),
            (p("attn.wq"), vec![d, d]),
            (p("attn.bq"), vec![d]),
            (p("attn.wk"), vec![d, d]),
            (p("attn.bk"), vec![d]),
            (p("attn.wv"), vec![d, d]),
            (p("attn.bv"), vec![d]),
            (p("attn.wo"), vec![d, d]),
            (p("attn.bo"), vec![d]),
            (p("ln2.gamma"), vec![d]),
            (p("ln2.beta"), vec![d]),
            (p("ffn.wu"), vec![d, ff]),
            (p("ffn.bu"), vec![ff]),
            (p("ffn.wg"), vec![d, ff]),
            (p("ffn.bg"), vec![ff]),
            (p("ffn.wdown"), vec![ff, d]),
            (p("ffn.bdown"), vec![d]),
        ]);
    }
    out.extend([
        ("head.w".to_string(), vec![d, d]),
        ("head.b".to_string(), vec![d]),
        ("classifier.w".to_string(), vec![d, cfg.n_classes]),
        ("classifier.b".to_string(), vec![cfg.n_classes]),
    ]);
    out
}

/// Parameters that the head-only L2 penalty applies to.
pub const HEAD_WEIGHTS: &[&str] = &["head.w", "classifier.w"];

/// Whether a parameter is a weight matrix (as opposed to a bias, a norm
/// scale/shift or the class token).
pub fn is_weight_matrix(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    leaf.starts_with('w')
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    /// Glorot-uniform weight matrices, zero biases and shifts, unit norm
    /// scales and a `N(0, 0.02)` class token, drawn from streams split off
    /// `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut root = Rng64::seed(cfg.seed);
        let mut streams: HashMap<String, Rng64> = HashMap::new();
        let mut tensors = Vec::new();
        let layout = parameter_layout(cfg);
        for (name, shape) in &layout {
            let group = name.split('.').next().unwrap_or("").to_string();
            let rng = streams.entry(group).or_insert_with(|| root.split());
            let leaf = name.rsplit('.').next().unwrap();
            let t = if name == "cls" {
                let n = shape[0];
                Tensor::new(shape, (0..n).map(|_| rng.normal(0.0, 0.02)).collect())?
            } else if leaf == "gamma" {
                Tensor::ones(shape)
            } else if is_weight_matrix(name) {
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::new(shape, (0..fan_in * fan_out).map(|_| rng.uniform_range(-a, a)).collect())?
            } else {
                Tensor::zeros(shape)
            };
            tensors.push(t);
        }
        Self::from_parts(layout.into_iter().map(|(n, _)| n).zip(tensors).collect())
    }

    pub fn from_parts(parts: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut index = HashMap::new();
        let mut names = Vec::with_capacity(parts.len());
        let mut tensors = Vec::with_capacity(parts.len());
        for (i, (name, t)) in parts.into_iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(ModelError::Config(format!("duplicate parameter {name}")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { names, tensors, index })
    }

    /// Checks names and shapes against the layout a config implies.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let layout = parameter_layout(cfg);
        if layout.len() != self.names.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameters, found {}",
                layout.len(),
                self.names.len()
            )));
        }
        for ((name, shape), (have, t)) in layout.iter().zip(self.iter()) {
            if name != have || shape.as_slice() != t.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {have} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Concatenation of all parameter values in storage order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.scalar_count(), "flat parameter length");
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }

    /// Places every tensor on `graph`, as trainable leaves or constants.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self.tensors.iter().map(|t| graph.leaf(t.clone(), trainable)).collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Graph handles for a [`ParamStore`], aligned with its order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in storage order; parameters the loss never reached get
    /// zeros.
    pub fn grads(&self, graph: &Graph) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| graph.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(graph.shape(v))))
            .collect()
    }
}
