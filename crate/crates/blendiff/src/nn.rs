//! Named parameter sets and small layer helpers shared by the denoiser
//! and the VAE feature extractor.

use std::collections::HashMap;
use std::path::Path;

use crate::autodiff::{Graph, Var};
use crate::btsr;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Ordered, named collection of parameter tensors. Insertion order is
/// fixed at construction and shared with optimizer state and gradient
/// vectors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter '{name}'"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self.index[name];
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Write each tensor as `<name>.btsr` under `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, t) in &self.entries {
            btsr::save(&dir.join(format!("{name}.btsr")), t)?;
        }
        Ok(())
    }

    /// Load tensors by name from `dir`, preserving `names` order.
    pub fn load_dir(dir: &Path, names: &[String]) -> Result<Self> {
        let mut set = ParamSet::new();
        for name in names {
            let t = btsr::load(&dir.join(format!("{name}.btsr")))?;
            set.insert(name, t);
        }
        Ok(set)
    }
}

/// Graph leaves for every parameter, in parameter order.
pub struct VarMap {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl VarMap {
    pub fn from_params(g: &Graph, params: &ParamSet) -> Self {
        let mut vars = Vec::with_capacity(params.len());
        let mut index = HashMap::new();
        for (i, (name, t)) in params.iter().enumerate() {
            vars.push(g.leaf(t.clone()));
            index.insert(name.to_string(), i);
        }
        VarMap { vars, index }
    }

    pub fn get(&self, name: &str) -> &Var {
        &self.vars[self.index[name]]
    }

    /// Gradients for every parameter, in parameter order. Valid after a
    /// backward pass.
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars.iter().map(|v| v.grad()).collect()
    }
}

/// Registers parameters with standard initializations.
pub struct ParamBuilder<'a> {
    set: ParamSet,
    rng: &'a mut Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(rng: &'a mut Rng) -> Self {
        ParamBuilder {
            set: ParamSet::new(),
            rng,
        }
    }

    fn normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| self.rng.normal() * std).collect())
    }

    /// Dense layer `[d_in, d_out]` with fan-in scaled weights and zero
    /// bias.
    pub fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        let std = 1.0 / (d_in as f64).sqrt();
        let w = self.normal(vec![d_in, d_out], std);
        self.set.insert(&format!("{prefix}.w"), w);
        self.set
            .insert(&format!("{prefix}.b"), Tensor::zeros(vec![d_out]));
    }

    /// Weight-only dense layer (attention projections).
    pub fn matrix(&mut self, name: &str, d_in: usize, d_out: usize) {
        let std = 1.0 / (d_in as f64).sqrt();
        let w = self.normal(vec![d_in, d_out], std);
        self.set.insert(name, w);
    }

    pub fn conv1d(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) {
        let std = 1.0 / ((c_in * k) as f64).sqrt();
        let w = self.normal(vec![c_out, c_in, k], std);
        self.set.insert(&format!("{prefix}.w"), w);
        self.set
            .insert(&format!("{prefix}.b"), Tensor::zeros(vec![c_out]));
    }

    pub fn conv1d_zero(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) {
        self.set
            .insert(&format!("{prefix}.w"), Tensor::zeros(vec![c_out, c_in, k]));
        self.set
            .insert(&format!("{prefix}.b"), Tensor::zeros(vec![c_out]));
    }

    /// Scale/shift pair for a normalization layer.
    pub fn norm(&mut self, prefix: &str, c: usize) {
        self.set
            .insert(&format!("{prefix}.g"), Tensor::filled(vec![c], 1.0));
        self.set
            .insert(&format!("{prefix}.b"), Tensor::zeros(vec![c]));
    }

    pub fn vector(&mut self, name: &str, len: usize, std: f64) {
        let v = self.normal(vec![len], std);
        self.set.insert(name, v);
    }

    pub fn build(self) -> ParamSet {
        self.set
    }
}

// ---- layer applications ----

pub fn linear(vm: &VarMap, prefix: &str, x: &Var) -> Var {
    x.matmul(vm.get(&format!("{prefix}.w")))
        .add_bias_rows(vm.get(&format!("{prefix}.b")))
}

pub fn conv1d(vm: &VarMap, prefix: &str, x: &Var) -> Var {
    x.conv1d(
        vm.get(&format!("{prefix}.w")),
        vm.get(&format!("{prefix}.b")),
    )
}

pub fn group_norm(vm: &VarMap, prefix: &str, x: &Var, groups: usize) -> Var {
    x.group_norm(
        vm.get(&format!("{prefix}.g")),
        vm.get(&format!("{prefix}.b")),
        groups,
    )
}

pub fn layer_norm(vm: &VarMap, prefix: &str, x: &Var) -> Var {
    x.layer_norm(
        vm.get(&format!("{prefix}.g")),
        vm.get(&format!("{prefix}.b")),
    )
}

/// Guard a loss value against numerical blowup.
pub fn check_finite_loss(loss: f64, step: usize, context: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NaNLoss {
            step,
            detail: context.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paramset_order_and_lookup() {
        let mut rng = Rng::new(1);
        let mut b = ParamBuilder::new(&mut rng);
        b.linear("l1", 3, 4);
        b.norm("n1", 4);
        let set = b.build();
        assert_eq!(set.names(), vec!["l1.w", "l1.b", "n1.g", "n1.b"]);
        assert_eq!(set.get("l1.w").shape(), &[3, 4]);
        assert_eq!(set.get("n1.g").data(), &[1.0; 4]);
        assert_eq!(set.total_elements(), 12 + 4 + 8);
    }

    #[test]
    fn save_load_roundtrip() {
        let mut rng = Rng::new(2);
        let mut b = ParamBuilder::new(&mut rng);
        b.conv1d("c", 2, 3, 3);
        b.vector("v", 5, 0.5);
        let set = b.build();
        let dir = tempfile::tempdir().unwrap();
        set.save_dir(dir.path()).unwrap();
        let back = ParamSet::load_dir(dir.path(), &set.names()).unwrap();
        assert_eq!(back.names(), set.names());
        // f32 storage
        for (name, t) in set.iter() {
            let b = back.get(name);
            for (x, y) in t.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn varmap_grads_align_with_order() {
        let mut rng = Rng::new(3);
        let mut b = ParamBuilder::new(&mut rng);
        b.linear("l", 2, 1);
        let set = b.build();
        let g = Graph::new();
        let vm = VarMap::from_params(&g, &set);
        let x = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let y = linear(&vm, "l", &x).sum();
        y.backward().unwrap();
        let grads = vm.grads();
        assert_eq!(grads.len(), 2);
        assert_eq!(grads[0].shape(), &[2, 1]); // l.w first
        assert_eq!(grads[0].data(), &[1.0, 2.0]);
        assert_eq!(grads[1].data(), &[1.0]);
    }
}
