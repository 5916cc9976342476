//! Flat parameter storage with a named layout.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HexstError, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/√fan_in`, fan-in being the first dimension.
    Uniform,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered list of named tensors packed into one vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
    total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        let entry = ParamEntry {
            name,
            shape: shape.to_vec(),
            offset: self.total,
            init,
        };
        self.total += entry.len();
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| HexstError::Structural(format!("no parameter named {name}")))
    }

    pub fn range(&self, name: &str) -> Range<usize> {
        self.entry(name).expect("parameter present in layout").range()
    }
}

/// Parameter (or gradient) values laid out by a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: &ParamLayout) -> Self {
        ModelParams {
            layout: layout.clone(),
            values: vec![0.0; layout.total()],
        }
    }

    pub fn init(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::zeros(layout);
        for e in layout.entries() {
            let slot = &mut p.values[e.range()];
            match e.init {
                Init::Zeros => {}
                Init::Ones => slot.fill(1.0),
                Init::Uniform => {
                    let bound = 1.0 / (e.shape[0].max(1) as f64).sqrt();
                    for v in slot.iter_mut() {
                        *v = rng.random_range(-bound..=bound);
                    }
                }
            }
        }
        p
    }

    pub fn get(&self, name: &str) -> &[f64] {
        &self.values[self.layout.range(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.range(name);
        &mut self.values[r]
    }

    pub fn tensor(&self, name: &str) -> Tensor {
        let e = self.layout.entry(name).expect("parameter present in layout");
        Tensor::new(e.shape.clone(), self.values[e.range()].to_vec()).expect("layout shape")
    }

    /// Adds `delta` into the named slot.
    pub fn accumulate(&mut self, name: &str, delta: &[f64]) {
        let slot = self.get_mut(name);
        debug_assert_eq!(slot.len(), delta.len(), "{name}");
        for (s, d) in slot.iter_mut().zip(delta) {
            *s += d;
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Name and magnitude of the largest-magnitude entry.
    pub fn max_abs_entry(&self) -> (String, f64) {
        let mut best = (String::new(), 0.0);
        for e in self.layout.entries() {
            for &v in &self.values[e.range()] {
                if !(v.abs() <= best.1) {
                    best = (e.name.clone(), v.abs());
                }
            }
        }
        best
    }
}
