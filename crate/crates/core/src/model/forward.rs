use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Block, Norm, NormedLinear};
use super::{Dgann, GraphBatch};
use crate::error::Result;
use crate::molgraph::{center_molecule, DirectedEdgeGraph, Molecule};
use crate::tensor::{Segments, Tape, Tensor, Var};

/// Concatenated head outputs of one attention block, before `W₀`.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    pub output: Var,
    pub n_heads: usize,
    pub groups: Arc<Segments>,
}

impl AttentionTrace {
    /// Softmax weights of `head`, in the order of `groups`.
    pub fn weights<'t>(&self, tape: &'t Tape, head: usize) -> &'t [f64] {
        let w = tape.attention_weights(self.output).expect("trace output is an attention node");
        let n = w.len() / self.n_heads;
        &w[head * n..(head + 1) * n]
    }
}

/// Every intermediate of one forward pass that tests and tools inspect.
#[derive(Clone, Debug)]
pub struct Forward {
    pub params: Vec<Var>,
    /// `h⁰` per directed edge.
    pub edge_init: Var,
    /// `h¹ … h^L` per directed edge.
    pub edge_layers: Vec<Var>,
    pub interaction_attention: Vec<AttentionTrace>,
    /// `h_init` per atom.
    pub atom_init: Var,
    /// Output-block result `h⁰_i` per atom.
    pub atom_hidden: Var,
    pub output_attention: AttentionTrace,
    /// Final sequence states, `n_molecules × (padded_len + 1)` rows.
    pub sequence: Var,
    pub readout_attention: Vec<AttentionTrace>,
    /// `n_molecules × d_model`.
    pub fingerprint: Var,
    /// `n_molecules × 1`.
    pub prediction: Var,
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Inverted dropout on the feed-forward hidden units of every attention
/// block. Only used while training.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.shape(x).to_vec();
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }
}

impl Dgann {
    /// Records every parameter on the tape, as leaves if `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn norm(tape: &mut Tape, pv: &[Var], x: Var, n: Norm) -> Result<Var> {
        tape.layer_norm(x, pv[n.gain], pv[n.bias])
    }

    fn normed_linear(tape: &mut Tape, pv: &[Var], x: Var, l: NormedLinear) -> Result<Var> {
        let y = tape.linear(x, pv[l.w])?;
        Self::norm(tape, pv, y, l.ln)
    }

    /// `LN(W₂·gelu(LN(W₁·x)))`.
    fn mlp2(tape: &mut Tape, pv: &[Var], x: Var, a: NormedLinear, b: NormedLinear) -> Result<Var> {
        let h = Self::normed_linear(tape, pv, x, a)?;
        let h = tape.gelu(h);
        Self::normed_linear(tape, pv, h, b)
    }

    /// `LN(W₃·gelu(LN(W₂·gelu(LN(W₁·x)))))`.
    fn mlp3(
        tape: &mut Tape,
        pv: &[Var],
        x: Var,
        a: NormedLinear,
        b: NormedLinear,
        c: NormedLinear,
    ) -> Result<Var> {
        let h = Self::normed_linear(tape, pv, x, a)?;
        let h = tape.gelu(h);
        Self::mlp2(tape, pv, h, b, c)
    }

    /// Multi-head attention, `LN(W₀·concat(heads))`, then
    /// `LN(v + W₂·gelu(W₁·v + b₁))`.
    fn attention_block(
        tape: &mut Tape,
        pv: &[Var],
        block: &Block,
        query_src: Var,
        kv_src: Var,
        groups: &Arc<Segments>,
        drop: &mut Option<Dropout>,
    ) -> Result<(Var, AttentionTrace)> {
        let n_heads = block.wq.len();
        let stack = |tape: &mut Tape, ws: &[usize]| -> Result<Var> {
            let parts: Vec<Var> = ws.iter().map(|&w| pv[w]).collect();
            if parts.len() == 1 {
                Ok(parts[0])
            } else {
                tape.concat_rows(&parts)
            }
        };
        let wq = stack(tape, &block.wq)?;
        let wk = stack(tape, &block.wk)?;
        let wv = stack(tape, &block.wv)?;
        let q = tape.linear(query_src, wq)?;
        let k = tape.linear(kv_src, wk)?;
        let v = tape.linear(kv_src, wv)?;
        let cat = tape.segment_attend_heads(q, k, v, groups.clone(), n_heads)?;
        let mixed = tape.linear(cat, pv[block.w0])?;
        let v = Self::norm(tape, pv, mixed, block.ln_attn)?;
        let f = tape.linear(v, pv[block.w1])?;
        let f = tape.add_bias(f, pv[block.b1])?;
        let mut f = tape.gelu(f);
        if let Some(d) = drop {
            f = d.apply(tape, f)?;
        }
        let f = tape.linear(f, pv[block.w2])?;
        let r = tape.add(v, f)?;
        let out = Self::norm(tape, pv, r, block.ln_ffn)?;
        Ok((
            out,
            AttentionTrace {
                output: cat,
                n_heads,
                groups: groups.clone(),
            },
        ))
    }

    /// `h⁰` for every directed edge from `[e; x_source]` (`E × 17`) and the
    /// edge vectors (`E × 3`).
    pub fn init_edge_hidden(&self, tape: &mut Tape, pv: &[Var], edge_input: Var, rel_pos: Var) -> Result<Var> {
        let l = &self.layout;
        let chem = Self::mlp2(tape, pv, edge_input, l.edge1, l.edge2)?;
        let geo = Self::mlp3(tape, pv, rel_pos, l.geo1, l.geo2, l.geo3)?;
        let s = tape.add(chem, geo)?;
        Ok(tape.scale(s, FRAC_1_SQRT_2))
    }

    /// One interaction layer. The query is always taken from `h0`; keys and
    /// values come from `[h_prev; h0]` through `groups`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn interaction_layer(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        layer: usize,
        h_prev: Var,
        h0: Var,
        groups: &Arc<Segments>,
        drop: &mut Option<Dropout>,
    ) -> Result<(Var, AttentionTrace)> {
        let kv = tape.concat_rows(&[h_prev, h0])?;
        Self::attention_block(tape, pv, &self.layout.interaction[layer], h0, kv, groups, drop)
    }

    /// Embeds atom features and blends them with the final edge states
    /// flowing into each atom. Returns `(h_init, h⁰_atoms, trace)`.
    pub(crate) fn output_block(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        h_last: Var,
        atom_features: Var,
        groups: &Arc<Segments>,
        drop: &mut Option<Dropout>,
    ) -> Result<(Var, Var, AttentionTrace)> {
        let l = &self.layout;
        let h_init = Self::mlp2(tape, pv, atom_features, l.atom1, l.atom2)?;
        let kv = tape.concat_rows(&[h_last, h_init])?;
        let (out, trace) = Self::attention_block(tape, pv, &l.output, h_init, kv, groups, drop)?;
        Ok((h_init, out, trace))
    }

    /// Position-augmented transformer readout. Returns the final sequence
    /// states, the [CLS] fingerprints and the per-layer traces.
    pub(crate) fn readout(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        atom_hidden: Var,
        positions: Var,
        batch: &GraphBatch,
        drop: &mut Option<Dropout>,
    ) -> Result<(Var, Var, Vec<AttentionTrace>)> {
        let l = &self.layout;
        let pos = Self::mlp3(tape, pv, positions, l.pos1, l.pos2, l.pos3)?;
        let s = tape.add(atom_hidden, pos)?;
        let input = tape.scale(s, FRAC_1_SQRT_2);
        let d = self.config.d_model;
        let zero = tape.constant(Tensor::zeros(vec![1, d]));
        let table = tape.concat_rows(&[pv[l.cls], input, zero])?;
        let mut x = tape.gather_rows(table, batch.seq_source.clone())?;
        let mut traces = Vec::with_capacity(l.transformer.len());
        for block in &l.transformer {
            let (y, t) = Self::attention_block(tape, pv, block, x, x, &batch.seq_groups, drop)?;
            x = y;
            traces.push(t);
        }
        let fp = tape.gather_rows(x, batch.cls_rows.clone())?;
        Ok((x, fp, traces))
    }

    fn head(&self, tape: &mut Tape, pv: &[Var], fp: Var) -> Result<Var> {
        let l = &self.layout;
        let h = tape.linear(fp, pv[l.head_w1])?;
        let h = tape.add_bias(h, pv[l.head_b1])?;
        let h = tape.gelu(h);
        let y = tape.linear(h, pv[l.head_w2])?;
        tape.add_bias(y, pv[l.head_b2])
    }

    /// Full pipeline over a batch whose parameters are already on the tape.
    pub fn forward_with(&self, tape: &mut Tape, pv: Vec<Var>, batch: &GraphBatch) -> Result<Forward> {
        self.forward_train(tape, pv, batch, &mut None)
    }

    /// [`Dgann::forward_with`] with optional dropout.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        pv: Vec<Var>,
        batch: &GraphBatch,
        drop: &mut Option<Dropout>,
    ) -> Result<Forward> {
        let edge_input = tape.constant(batch.edge_input.clone());
        let rel_pos = tape.constant(batch.rel_pos.clone());
        let atom_features = tape.constant(batch.atom_features.clone());
        let positions = tape.constant(batch.positions.clone());

        let h0 = self.init_edge_hidden(tape, &pv, edge_input, rel_pos)?;
        let mut h = h0;
        let mut edge_layers = Vec::with_capacity(self.config.n_interaction);
        let mut interaction_attention = Vec::with_capacity(self.config.n_interaction);
        for layer in 0..self.config.n_interaction {
            let (next, trace) = self.interaction_layer(tape, &pv, layer, h, h0, &batch.edge_groups, drop)?;
            h = next;
            edge_layers.push(h);
            interaction_attention.push(trace);
        }
        let (atom_init, atom_hidden, output_attention) =
            self.output_block(tape, &pv, h, atom_features, &batch.atom_groups, drop)?;
        let (sequence, fingerprint, readout_attention) =
            self.readout(tape, &pv, atom_hidden, positions, batch, drop)?;
        let prediction = self.head(tape, &pv, fingerprint)?;
        Ok(Forward {
            params: pv,
            edge_init: h0,
            edge_layers,
            interaction_attention,
            atom_init,
            atom_hidden,
            output_attention,
            sequence,
            readout_attention,
            fingerprint,
            prediction,
        })
    }

    /// Full pipeline with the parameters recorded as trainable leaves.
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Forward> {
        let pv = self.register(tape, true);
        self.forward_with(tape, pv, batch)
    }

    /// Raw outputs for an assembled batch.
    pub fn predict_batch(&self, batch: &GraphBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let out = self.forward_with(&mut tape, pv, batch)?;
        Ok(tape.value(out.prediction).data().to_vec())
    }

    fn infer(&self, graphs: &[&DirectedEdgeGraph]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let batch = GraphBatch::new(graphs)?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let out = self.forward_with(&mut tape, pv, &batch)?;
        let pred = tape.value(out.prediction).data().to_vec();
        let fp = tape.value(out.fingerprint);
        let fps = (0..fp.rows()).map(|r| fp.row(r).to_vec()).collect();
        Ok((pred, fps))
    }

    /// Raw model outputs for graphs built from centered molecules.
    pub fn predict_graphs(&self, graphs: &[&DirectedEdgeGraph]) -> Result<Vec<f64>> {
        Ok(self.infer(graphs)?.0)
    }

    pub fn fingerprint_graphs(&self, graphs: &[&DirectedEdgeGraph]) -> Result<Vec<Vec<f64>>> {
        Ok(self.infer(graphs)?.1)
    }

    /// Centers each molecule, builds its graph and predicts.
    pub fn predict(&self, molecules: &[Molecule]) -> Result<Vec<f64>> {
        let graphs = prepare(molecules)?;
        self.predict_graphs(&graphs.iter().collect::<Vec<_>>())
    }

    pub fn fingerprints(&self, molecules: &[Molecule]) -> Result<Vec<Vec<f64>>> {
        let graphs = prepare(molecules)?;
        self.fingerprint_graphs(&graphs.iter().collect::<Vec<_>>())
    }
}

fn prepare(molecules: &[Molecule]) -> Result<Vec<DirectedEdgeGraph>> {
    molecules
        .iter()
        .map(|m| DirectedEdgeGraph::from_molecule(&center_molecule(m)))
        .collect()
}

