//! Name-keyed registries of interchangeable strategies.
//!
//! Kernel families, shape constraints, synthetic targets and experimental
//! designs are each exposed through a trait object and looked up by name, so
//! the CLI and JSON configs can select them at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A registry mapping lowercase names to shared strategy objects.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `item` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &str, item: Arc<T>) {
        self.entries.insert(name.to_ascii_lowercase(), item);
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(&name.to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&name.to_ascii_lowercase())
    }
}

impl<T: ?Sized> Clone for Registry<T> {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            entries: self.entries.clone(),
        }
    }
}
