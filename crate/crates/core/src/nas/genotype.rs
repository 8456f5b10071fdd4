//! Discrete architecture descriptions and their file format.
//!
//! A genotype lists, per cell template, the kept edges with their chosen
//! operation. The JSON layout is stable: {space, cells:[{edges:[{to,from,
//! op}]}], meta:{seed, epochs}}.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{SearchSpace, OP_NONE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeEdge {
    pub to: usize,
    pub from: usize,
    pub op: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeCell {
    pub edges: Vec<GenotypeEdge>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeMeta {
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub space: String,
    pub cells: Vec<GenotypeCell>,
    pub meta: GenotypeMeta,
}

impl Genotype {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genotype serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::from)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json()).map_err(Error::from)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    /// Check the topology invariants this genotype must satisfy for `space`:
    /// one cell per template, edges drawn from the template's candidate set,
    /// catalog ops only (never `none`), and exactly min(M, candidates) kept
    /// edges per intermediate node.
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        if self.space != space.name {
            return Err(Error::config(format!(
                "genotype is for space {:?}, not {:?}",
                self.space, space.name
            )));
        }
        if self.cells.len() != space.templates.len() {
            return Err(Error::config(format!(
                "{} cells in genotype, {} templates in space",
                self.cells.len(),
                space.templates.len()
            )));
        }
        for (cell, template) in self.cells.iter().zip(&space.templates) {
            let mut seen = std::collections::HashSet::new();
            for e in &cell.edges {
                if !template.edges.iter().any(|t| t.from == e.from && t.to == e.to) {
                    return Err(Error::config(format!(
                        "edge {}->{} not in template {}",
                        e.from, e.to, template.name
                    )));
                }
                if e.op == OP_NONE || !template.ops.contains(&e.op) {
                    return Err(Error::config(format!(
                        "op {:?} not selectable in template {}",
                        e.op, template.name
                    )));
                }
                if !seen.insert((e.from, e.to)) {
                    return Err(Error::config(format!("duplicate edge {}->{}", e.from, e.to)));
                }
            }
            for node in template.intermediate_nodes() {
                let expect = space.m_per_node.min(template.incoming(node).len());
                let got = cell.edges.iter().filter(|e| e.to == node).count();
                if got != expect {
                    return Err(Error::config(format!(
                        "node {node} of {} keeps {got} edges, expected {expect}",
                        template.name
                    )));
                }
            }
        }
        Ok(())
    }
}
