use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::NetworkSpec;

/// Weights `(C_out, C_in, K, K)` and per-output-channel bias of one conv.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros_like(&self) -> Layer {
        Layer {
            weights: Tensor::zeros(self.weights.shape()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn num_values(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Every trainable value of a network, keyed by layer id.
///
/// Also used as the container for gradients and optimizer moments, which
/// share the exact layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    spec: NetworkSpec,
    layers: BTreeMap<String, Layer>,
}

impl ParameterSet {
    /// Assembles and validates a parameter set against `spec`.
    pub fn from_layers(spec: NetworkSpec, layers: BTreeMap<String, Layer>) -> Result<Self> {
        let params = ParameterSet { spec, layers };
        params.validate()?;
        Ok(params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &BTreeMap<String, Layer> {
        &self.layers
    }

    pub fn layer(&self, id: &str) -> &Layer {
        self.layers
            .get(id)
            .unwrap_or_else(|| panic!("layer `{id}` missing from a validated parameter set"))
    }

    pub fn layer_mut(&mut self, id: &str) -> &mut Layer {
        self.layers
            .get_mut(id)
            .unwrap_or_else(|| panic!("layer `{id}` missing from a validated parameter set"))
    }

    pub fn layer_ids(&self) -> Vec<String> {
        self.layers.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Layer)> {
        self.layers.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Layer)> {
        self.layers.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.layers.values().map(Layer::num_values).sum()
    }

    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(|(k, l)| (k.clone(), l.zeros_like())).collect(),
        }
    }

    /// Checks layer ids, shapes and finiteness against the spec.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let plan = self.spec.layer_plan();
        let expected: Vec<String> = {
            let mut ids: Vec<String> = plan.iter().map(|l| l.id.clone()).collect();
            ids.sort();
            ids
        };
        let found = self.layer_ids();
        if expected != found {
            return Err(crate::error::CheckpointError::LayerMismatch { expected, found }.into());
        }
        for shape in &plan {
            let layer = &self.layers[&shape.id];
            if layer.weights.shape() != shape.weight_shape() || layer.bias.len() != shape.c_out {
                return Err(Error::shape(format!(
                    "layer `{}` has weights {:?} and {} biases, expected {:?} and {}",
                    shape.id,
                    layer.weights.shape(),
                    layer.bias.len(),
                    shape.weight_shape(),
                    shape.c_out
                )));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::invalid(format!("layer `{}` holds non-finite values", shape.id)));
            }
        }
        Ok(())
    }

    /// Flattens all values in layer-id order (weights then bias per layer).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for layer in self.layers.values() {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Inverse of [`ParameterSet::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::shape(format!(
                "flat vector has {} values, parameter set has {}",
                flat.len(),
                self.num_values()
            )));
        }
        let mut off = 0;
        for layer in self.layers.values_mut() {
            let n = layer.weights.len();
            layer.weights.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + b]);
            off += b;
        }
        Ok(())
    }

    pub(crate) fn same_layout(&self, other: &ParameterSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|((ka, a), (kb, b))| {
                ka == kb && a.weights.shape() == b.weights.shape() && a.bias.len() == b.bias.len()
            })
    }
}

/// Seeded initialization: He-normal (`σ = √(2 / fan_in)`) for ReLU layers,
/// `σ = √(1 / fan_in)` for the sigmoid head, zero biases.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = BTreeMap::new();
    for shape in spec.layer_plan() {
        let fan_in = (shape.c_in * shape.kernel * shape.kernel) as f64;
        let gain = if shape.id == "head" { 1.0 } else { 2.0 };
        let std = (gain / fan_in).sqrt();
        let wshape = shape.weight_shape();
        let n: usize = wshape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std
            })
            .collect();
        layers.insert(
            shape.id.clone(),
            Layer {
                weights: Tensor::new(wshape, data)?,
                bias: vec![0.0; shape.c_out],
            },
        );
    }
    Ok(ParameterSet {
        spec: spec.clone(),
        layers,
    })
}

/// Deep copy of every layer for the second training phase.
pub fn transfer_weights(source: &ParameterSet) -> ParameterSet {
    source.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic() {
        let spec = NetworkSpec::default();
        let a = build_network(&spec, 7).unwrap();
        let b = build_network(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_network(&spec, 8).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn biases_start_at_zero() {
        let p = build_network(&NetworkSpec::default(), 1).unwrap();
        assert!(p.iter().all(|(_, l)| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn rejects_invalid_spec() {
        let spec = NetworkSpec {
            input_size: 60,
            ..NetworkSpec::default()
        };
        assert!(matches!(build_network(&spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn flat_round_trip() {
        let p = build_network(&NetworkSpec::default(), 3).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[0.0]).is_err());
    }

    #[test]
    fn transferred_copy_is_isolated() {
        let src = build_network(&NetworkSpec::default(), 5).unwrap();
        let before = src.to_flat();
        let mut copy = transfer_weights(&src);
        assert_eq!(copy, src);
        assert_eq!(copy.layer_ids(), src.layer_ids());
        copy.layer_mut("head").weights.data_mut()[0] += 1.0;
        assert_eq!(src.to_flat(), before);
        assert_ne!(copy, src);
    }

    #[test]
    fn validate_detects_missing_layer() {
        let p = build_network(&NetworkSpec::default(), 5).unwrap();
        let mut layers = p.layers().clone();
        layers.remove("head");
        assert!(ParameterSet::from_layers(p.spec().clone(), layers).is_err());
    }
}
