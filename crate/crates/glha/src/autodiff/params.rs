use std::collections::HashMap;

use super::tensor::Tensor;

/// A named tensor owned by a [`ParameterStore`]: either a trainable weight
/// or a non-trainable buffer (e.g. normalization running statistics).
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered, name-addressable collection of model state.
///
/// Iteration order is registration order, which also fixes the layout of
/// serialized snapshots, so constructing the same architecture twice yields
/// interchangeable stores.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor) {
        self.insert(name.into(), value, true);
    }

    /// Registers a non-trainable buffer. Names must be unique.
    pub fn register_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.insert(name.into(), value, false);
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) {
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name: {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index
            .get(name)
            .copied()
            .map(move |i| &mut self.entries[i].value)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entry(name).map(|e| e.trainable).unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across trainable parameters.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_order_is_preserved() {
        let mut store = ParameterStore::new();
        store.register("zeta", Tensor::zeros(1, 1));
        store.register("alpha", Tensor::zeros(2, 2));
        store.register_buffer("mid", Tensor::zeros(1, 3));
        let names: Vec<&str> = store.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["zeta", "alpha", "mid"]);
        assert!(store.is_trainable("alpha"));
        assert!(!store.is_trainable("mid"));
        assert_eq!(store.trainable_scalars(), 5);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_are_rejected() {
        let mut store = ParameterStore::new();
        store.register("w", Tensor::zeros(1, 1));
        store.register("w", Tensor::zeros(1, 1));
    }
}
