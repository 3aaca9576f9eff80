use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limb::Limb;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyVertex {
    pub label: String,
    pub vertex: usize,
    pub limb: Limb,
}

/// Labeled mesh vertices used as a sparse shape proxy.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeyVertexSet {
    entries: Vec<KeyVertex>,
}

impl KeyVertexSet {
    pub fn new(entries: Vec<KeyVertex>, vertex_count: usize) -> Result<Self> {
        let mut labels = HashSet::new();
        for (k, e) in entries.iter().enumerate() {
            if !labels.insert(e.label.as_str()) {
                return Err(Error::parse(
                    format!("key_vertices[{k}].label"),
                    format!("duplicate key-vertex label '{}'", e.label),
                ));
            }
            if e.vertex >= vertex_count {
                return Err(Error::parse(
                    format!("key_vertices[{k}].vertex"),
                    format!("vertex index {} out of range ({vertex_count} vertices)", e.vertex),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[KeyVertex] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vertices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.vertex).collect()
    }

    pub fn limbs(&self) -> Vec<Limb> {
        self.entries.iter().map(|e| e.limb).collect()
    }

    pub fn find(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    /// Reorders `other` to follow this set's label order; labels must match one to one.
    pub fn align(&self, other: &KeyVertexSet) -> Result<KeyVertexSet> {
        if self.len() != other.len() {
            return Err(Error::Invalid(format!(
                "key-vertex sets differ in size ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .map(|e| {
                other
                    .find(&e.label)
                    .map(|k| other.entries[k].clone())
                    .ok_or_else(|| Error::Invalid(format!("key-vertex '{}' missing on the other character", e.label)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KeyVertexSet { entries })
    }
}
