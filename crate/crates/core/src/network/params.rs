use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamInit {
    /// Zero-mean normal with the config's gain over `sqrt(fan_in)`.
    Kaiming { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub path: String,
    pub shape: Vec<usize>,
    /// Element offset into the flat parameter vector.
    pub offset: usize,
    pub init: ParamInit,
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

/// Ordered table of named arrays inside one flat buffer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, path: String, shape: Vec<usize>, init: ParamInit) -> Range<usize> {
        let entry = ParamEntry {
            path,
            shape,
            offset: self.total,
            init,
        };
        self.total += entry.len();
        let r = entry.range();
        self.entries.push(entry);
        r
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, path: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.path == path)
    }
}

/// Learned weights of one network: a flat buffer addressed through its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub(crate) layout: ParamLayout,
    pub(crate) values: Vec<T>,
}

impl<T: Real> NetworkParams<T> {
    pub(crate) fn zeros(layout: ParamLayout) -> Self {
        let values = vec![T::zero(); layout.total()];
        NetworkParams { layout, values }
    }

    pub(crate) fn initialized(layout: ParamLayout, std_of: impl Fn(usize) -> f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.total());
        for e in layout.entries() {
            match e.init {
                ParamInit::Kaiming { fan_in } => {
                    let dist = Normal::new(0.0, std_of(fan_in)).expect("finite std");
                    values.extend((0..e.len()).map(|_| T::from_f64_lossy(dist.sample(&mut rng))));
                }
                ParamInit::Zeros => values.extend(std::iter::repeat_n(T::zero(), e.len())),
                ParamInit::Ones => values.extend(std::iter::repeat_n(T::one(), e.len())),
            }
        }
        NetworkParams { layout, values }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, path: &str) -> Option<&[T]> {
        self.layout.find(path).map(|e| &self.values[e.range()])
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut [T]> {
        let r = self.layout.find(path)?.range();
        Some(&mut self.values[r])
    }

    /// `(path, shape, values)` for every array, in layout order.
    pub fn arrays(&self) -> impl Iterator<Item = (&str, &[usize], &[T])> {
        self.layout
            .entries()
            .iter()
            .map(|e| (e.path.as_str(), e.shape.as_slice(), &self.values[e.range()]))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}
