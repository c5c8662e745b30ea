//! Named-layer parameter collections and their canonical identity.
//!
//! Every protocol stage (clipping, noising, compression, aggregation) works on
//! [`ModelParams`]. Values are held as contiguous `f64` in declared layer
//! order; the canonical byte form used for hashing narrows them to `f32`,
//! which is also the precision values travel at on the wire.
//!
//! Canonical serialization, for each layer in order:
//!
//! ```text
//! name (UTF-8 bytes) || value_count (u32, big-endian) || values (f32, little-endian each)
//! ```
//!
//! [`ParamDigest`] is SHA-256 over that byte string.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    name: String,
    shape: Vec<usize>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidLayer { name, reason: "empty name" });
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::InvalidLayer { name, reason: "name too long" });
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidLayer { name, reason: "shape must have positive dimensions" });
        }
        Ok(Self { name, shape })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of scalar entries (product of the shape).
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// 32-byte SHA-256 of the canonical serialization.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamDigest(pub [u8; 32]);

impl ParamDigest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push(char::from_digit((b >> 4) as u32, 16).unwrap());
            s.push(char::from_digit((b & 0xf) as u32, 16).unwrap());
        }
        s
    }
}

impl fmt::Debug for ParamDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamDigest({})", self.to_hex())
    }
}

impl fmt::Display for ParamDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Ordered layers of finite real values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    specs: Vec<LayerSpec>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl ModelParams {
    /// Build from `(spec, values)` pairs, rejecting duplicate names, length
    /// mismatches and non-finite values.
    pub fn new(layers: Vec<(LayerSpec, Vec<f64>)>) -> Result<Self> {
        let mut specs = Vec::with_capacity(layers.len());
        let mut values = Vec::new();
        for (spec, vals) in layers {
            if vals.len() != spec.len() {
                return Err(Error::InvalidLayer {
                    name: spec.name,
                    reason: "value count does not match shape",
                });
            }
            values.extend_from_slice(&vals);
            specs.push(spec);
        }
        Self::from_flat(specs, values)
    }

    /// Inverse of [`flatten`](Self::flatten) for a fixed layout.
    pub fn from_flat(specs: Vec<LayerSpec>, values: Vec<f64>) -> Result<Self> {
        let offsets = layout_offsets(&specs)?;
        let total = *offsets.last().unwrap_or(&0);
        if values.len() != total {
            return Err(Error::LayoutMismatch("flat vector length differs from layout size"));
        }
        let p = Self { specs, offsets, values };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(specs: Vec<LayerSpec>) -> Result<Self> {
        let offsets = layout_offsets(&specs)?;
        let total = *offsets.last().unwrap_or(&0);
        Ok(Self { specs, offsets, values: alloc::vec![0.0; total] })
    }

    /// Fails on the first non-finite value.
    pub fn validate(&self) -> Result<()> {
        for (li, spec) in self.specs.iter().enumerate() {
            if let Some(i) = self.layer(li).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: spec.name.clone(), index: i });
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layer_count(&self) -> usize {
        self.specs.len()
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.values[self.offsets[index]..self.offsets[index + 1]]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn layer_by_name(&self, name: &str) -> Option<&[f64]> {
        self.layer_index(name).map(|i| self.layer(i))
    }

    /// Start offset of each layer in the flat vector, plus the total length.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Concatenation of all layers in declared order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.specs == other.specs
    }

    /// Replace the values while keeping the layout.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::LayoutMismatch("value count differs from layout"));
        }
        let p = Self { specs: self.specs.clone(), offsets: self.offsets.clone(), values };
        p.validate()?;
        Ok(p)
    }

    pub fn l2_norm(&self) -> f64 {
        math::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn add(&self, other: &ModelParams) -> Result<Self> {
        if !self.same_layout(other) {
            return Err(Error::LayoutMismatch("cannot add parameters with different layouts"));
        }
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    /// Canonical byte form hashed by [`digest`](Self::digest).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 4 + self.specs.len() * 24);
        for (li, spec) in self.specs.iter().enumerate() {
            out.extend_from_slice(spec.name.as_bytes());
            out.extend_from_slice(&(spec.len() as u32).to_be_bytes());
            for v in self.layer(li) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn digest(&self) -> ParamDigest {
        ParamDigest(Sha256::digest(self.canonical_bytes()).into())
    }

    /// Parse the canonical byte form back against a known layout.
    pub fn from_canonical_bytes(specs: Vec<LayerSpec>, bytes: &[u8]) -> Result<Self> {
        let mut values = Vec::new();
        let mut pos = 0usize;
        for spec in &specs {
            let name = spec.name.as_bytes();
            if bytes.len() < pos + name.len() + 4 || &bytes[pos..pos + name.len()] != name {
                return Err(Error::Decode("layer name mismatch in canonical bytes"));
            }
            pos += name.len();
            let count = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if count != spec.len() || bytes.len() < pos + 4 * count {
                return Err(Error::Decode("layer length mismatch in canonical bytes"));
            }
            for chunk in bytes[pos..pos + 4 * count].chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
            pos += 4 * count;
        }
        if pos != bytes.len() {
            return Err(Error::Decode("trailing bytes after canonical parameters"));
        }
        Self::from_flat(specs, values)
    }
}

fn layout_offsets(specs: &[LayerSpec]) -> Result<Vec<usize>> {
    let mut offsets = Vec::with_capacity(specs.len() + 1);
    offsets.push(0);
    for (i, spec) in specs.iter().enumerate() {
        if specs[..i].iter().any(|s| s.name == spec.name) {
            return Err(Error::DuplicateLayer(spec.name.to_string()));
        }
        let last = *offsets.last().unwrap();
        offsets.push(last + spec.len());
    }
    Ok(offsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn two_layer() -> ModelParams {
        ModelParams::new(vec![
            (LayerSpec::new("a", vec![2]).unwrap(), vec![1.0, 2.0]),
            (LayerSpec::new("b", vec![1]).unwrap(), vec![3.0]),
        ])
        .unwrap()
    }

    #[test]
    fn flatten_concatenates_in_order() {
        assert_eq!(two_layer().flatten(), vec![1.0, 2.0, 3.0]);
        assert!(ModelParams::new(vec![]).unwrap().flatten().is_empty());
    }

    #[test]
    fn l2_norm_cases() {
        let p = ModelParams::new(vec![(LayerSpec::new("w", vec![2]).unwrap(), vec![3.0, 4.0])]).unwrap();
        assert_eq!(p.l2_norm(), 5.0);
        assert_eq!(p.scaled(-2.0).l2_norm(), 10.0);
        assert_eq!(p.scaled(0.0).l2_norm(), 0.0);
    }

    #[test]
    fn rejects_non_finite_and_duplicates() {
        let bad = ModelParams::new(vec![(LayerSpec::new("w", vec![2]).unwrap(), vec![1.0, f64::NAN])]);
        assert!(matches!(bad, Err(Error::NonFinite { index: 1, .. })));
        let inf = ModelParams::new(vec![(LayerSpec::new("w", vec![1]).unwrap(), vec![f64::INFINITY])]);
        assert!(inf.is_err());
        let dup = ModelParams::new(vec![
            (LayerSpec::new("w", vec![1]).unwrap(), vec![1.0]),
            (LayerSpec::new("w", vec![1]).unwrap(), vec![1.0]),
        ]);
        assert!(matches!(dup, Err(Error::DuplicateLayer(_))));
        assert!(LayerSpec::new("z", vec![3, 0]).is_err());
    }

    // Frozen from an independent Python (hashlib + struct) rendering of the
    // canonical layout: b"a" + be32(2) + le_f32(1.0) + le_f32(2.0) + b"b" + be32(1) + le_f32(3.0).
    #[test]
    fn golden_digest() {
        assert_eq!(
            two_layer().digest().to_hex(),
            "781065652538eb45339ce653f565e641c1d9a1673dc9003b1d84bfd2c4968ec5"
        );
    }

    #[test]
    fn canonical_bytes_round_trip() {
        let p = two_layer();
        let back = ModelParams::from_canonical_bytes(p.specs().to_vec(), &p.canonical_bytes()).unwrap();
        assert_eq!(back, p);
        assert!(ModelParams::from_canonical_bytes(p.specs().to_vec(), &p.canonical_bytes()[..5]).is_err());
    }

    fn arb_params() -> impl Strategy<Value = ModelParams> {
        prop::collection::vec(prop::collection::vec(1usize..4, 1..3), 1..4).prop_flat_map(|shapes| {
            let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
            prop::collection::vec(-10.0f64..10.0, total).prop_map(move |vals| {
                let specs: Vec<LayerSpec> = shapes
                    .iter()
                    .enumerate()
                    .map(|(i, s)| LayerSpec::new(alloc::format!("layer{i}"), s.clone()).unwrap())
                    .collect();
                ModelParams::from_flat(specs, vals).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn unflatten_inverts_flatten(p in arb_params()) {
            let back = ModelParams::from_flat(p.specs().to_vec(), p.flatten()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn norm_squares_add_over_disjoint_layers(p in arb_params(), q in arb_params()) {
            let mut layers = Vec::new();
            for (i, spec) in p.specs().iter().enumerate() {
                layers.push((LayerSpec::new(alloc::format!("p.{}", spec.name()), spec.shape().to_vec()).unwrap(), p.layer(i).to_vec()));
            }
            for (i, spec) in q.specs().iter().enumerate() {
                layers.push((LayerSpec::new(alloc::format!("q.{}", spec.name()), spec.shape().to_vec()).unwrap(), q.layer(i).to_vec()));
            }
            let joined = ModelParams::new(layers).unwrap();
            let lhs = joined.l2_norm().powi(2);
            let rhs = p.l2_norm().powi(2) + q.l2_norm().powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }

        #[test]
        fn flipping_a_value_changes_digest(p in arb_params(), idx in any::<prop::sample::Index>()) {
            let i = idx.index(p.param_count());
            let mut vals = p.flatten();
            vals[i] = -vals[i] + 1.0;
            let q = p.with_values(vals).unwrap();
            prop_assert_ne!(p.digest(), q.digest());
            prop_assert_eq!(p.digest(), p.clone().digest());
        }

        #[test]
        fn permuting_layers_changes_digest(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 2)) {
            let x = ModelParams::new(vec![
                (LayerSpec::new("x", vec![3]).unwrap(), a.clone()),
                (LayerSpec::new("y", vec![2]).unwrap(), b.clone()),
            ]).unwrap();
            let y = ModelParams::new(vec![
                (LayerSpec::new("y", vec![2]).unwrap(), b),
                (LayerSpec::new("x", vec![3]).unwrap(), a),
            ]).unwrap();
            prop_assert_ne!(x.digest(), y.digest());
        }
    }
}
