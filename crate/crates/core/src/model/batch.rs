use std::sync::Arc;

use crate::error::{Error, Result};
use crate::molgraph::{DirectedEdgeGraph, ATOM_FEATURE_DIM, EDGE_INPUT_DIM};
use crate::tensor::{Segments, Tensor};

/// Several molecules as one disjoint-union graph plus the padded sequence
/// layout used by the readout.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub n_molecules: usize,
    pub n_edges: usize,
    pub n_atoms: usize,
    pub atom_counts: Vec<usize>,
    pub edge_input: Tensor,
    pub rel_pos: Tensor,
    pub atom_features: Tensor,
    pub positions: Tensor,
    /// Edge `e` attends over rows of `[h^l; h⁰]`: its incoming edges, then
    /// `n_edges + e`.
    pub edge_groups: Arc<Segments>,
    /// Atom `i` attends over rows of `[h^L; h_init]`: edges into `i`, then
    /// `n_edges + i`.
    pub atom_groups: Arc<Segments>,
    /// Longest molecule in the batch; each sequence has `padded_len + 1`
    /// rows with [CLS] first.
    pub padded_len: usize,
    /// `true` for [CLS] and real atoms, `false` for padding, per sequence row.
    pub mask: Vec<bool>,
    /// Sequence row → row of `[cls; h_input; zero]`.
    pub seq_source: Arc<Vec<usize>>,
    /// Sequence row attends over the [CLS] and real-atom rows of its molecule.
    pub seq_groups: Arc<Segments>,
    /// Sequence rows holding [CLS], one per molecule.
    pub cls_rows: Arc<Vec<usize>>,
}

impl GraphBatch {
    pub fn new(graphs: &[&DirectedEdgeGraph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::invalid("batch", "no molecules"));
        }
        if let Some(g) = graphs.iter().find(|g| g.n_atoms == 0) {
            return Err(Error::invalid(
                "batch",
                format!("molecule with zero atoms ({} edges)", g.n_edges()),
            ));
        }
        let n_edges: usize = graphs.iter().map(|g| g.n_edges()).sum();
        let n_atoms: usize = graphs.iter().map(|g| g.n_atoms).sum();
        let padded_len = graphs.iter().map(|g| g.n_atoms).max().unwrap_or(0);
        let seq = padded_len + 1;

        let mut edge_input = Vec::with_capacity(n_edges * EDGE_INPUT_DIM);
        let mut rel_pos = Vec::with_capacity(n_edges * 3);
        let mut atom_features = Vec::with_capacity(n_atoms * ATOM_FEATURE_DIM);
        let mut positions = Vec::with_capacity(n_atoms * 3);
        let mut edge_groups = Segments::new();
        let mut atom_groups = Segments::new();
        let mut seq_source = Vec::with_capacity(graphs.len() * seq);
        let mut seq_groups = Segments::new();
        let mut mask = Vec::with_capacity(graphs.len() * seq);
        let mut cls_rows = Vec::with_capacity(graphs.len());

        let (mut e_off, mut a_off) = (0, 0);
        for (b, g) in graphs.iter().enumerate() {
            edge_input.extend_from_slice(&g.edge_input);
            rel_pos.extend_from_slice(&g.rel_pos);
            atom_features.extend_from_slice(&g.atom_features);
            positions.extend_from_slice(&g.positions);
            for e in 0..g.n_edges() {
                let inc = g.incoming.group(e).iter().map(|k| k + e_off);
                edge_groups.push_group(inc.chain([n_edges + e_off + e]));
            }
            for i in 0..g.n_atoms {
                let into = g.into_atom.group(i).iter().map(|k| k + e_off);
                atom_groups.push_group(into.chain([n_edges + a_off + i]));
            }
            let start = b * seq;
            cls_rows.push(start);
            for r in 0..seq {
                let real = r <= g.n_atoms;
                mask.push(real);
                seq_source.push(match r {
                    0 => 0,
                    _ if real => 1 + a_off + r - 1,
                    _ => 1 + n_atoms,
                });
                seq_groups.push_group(start..start + g.n_atoms + 1);
            }
            e_off += g.n_edges();
            a_off += g.n_atoms;
        }

        Ok(GraphBatch {
            n_molecules: graphs.len(),
            n_edges,
            n_atoms,
            atom_counts: graphs.iter().map(|g| g.n_atoms).collect(),
            edge_input: Tensor::new(vec![n_edges, EDGE_INPUT_DIM], edge_input)?,
            rel_pos: Tensor::new(vec![n_edges, 3], rel_pos)?,
            atom_features: Tensor::new(vec![n_atoms, ATOM_FEATURE_DIM], atom_features)?,
            positions: Tensor::new(vec![n_atoms, 3], positions)?,
            edge_groups: Arc::new(edge_groups),
            atom_groups: Arc::new(atom_groups),
            padded_len,
            mask,
            seq_source: Arc::new(seq_source),
            seq_groups: Arc::new(seq_groups),
            cls_rows: Arc::new(cls_rows),
        })
    }

    /// Number of padding rows for molecule `b`.
    pub fn padding(&self, b: usize) -> usize {
        self.padded_len - self.atom_counts[b]
    }
}
