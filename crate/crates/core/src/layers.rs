//! LSTM cell, bidirectional encoders and the dense ReLU projection.
//!
//! Sequences are processed at their true length; nothing is padded.

use crate::error::{Error, Result};
use crate::numeric::{glorot, param_rng, Graph, NodeId, ParamId, ParamStore, Tensor};

/// Character-level hidden size per direction.
pub const CHAR_HIDDEN: usize = 64;
/// Word-level hidden size per direction.
pub const WORD_HIDDEN: usize = 100;
/// Width of the fully-connected layer.
pub const DENSE_DIM: usize = 100;

/// One LSTM direction. Gate pre-activations are `[x; h] · w + b` with
/// column blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl LstmParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let w_name = format!("{prefix}.w");
        let mut rng = param_rng(seed, &w_name);
        let w = glorot(
            input_dim + hidden_dim,
            4 * hidden_dim,
            input_dim + hidden_dim,
            hidden_dim,
            &mut rng,
        );
        let mut b = Tensor::zeros(1, 4 * hidden_dim);
        for v in &mut b.data_mut()[hidden_dim..2 * hidden_dim] {
            *v = 1.0;
        }
        Ok(LstmParams {
            input_dim,
            hidden_dim,
            w: store.add(w_name, w)?,
            b: store.add(format!("{prefix}.b"), b)?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = lookup_id(store, &format!("{prefix}.w"))?;
        let b = lookup_id(store, &format!("{prefix}.b"))?;
        let (rows, cols) = store.value(w).shape();
        let hidden_dim = cols / 4;
        Ok(LstmParams {
            input_dim: rows - hidden_dim,
            hidden_dim,
            w,
            b,
        })
    }
}

pub(crate) fn lookup_id(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
}

/// One step: returns `(h', c')`.
pub fn lstm_step(
    g: &mut Graph,
    store: &ParamStore,
    p: &LstmParams,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hd = p.hidden_dim;
    let (xr, xc) = g.value(x).shape();
    if (xr, xc) != (1, p.input_dim) {
        return Err(Error::Dimension {
            op: "lstm_step input",
            left: (xr, xc),
            right: (1, p.input_dim),
        });
    }
    let w = g.param(store, p.w);
    let b = g.param(store, p.b);
    let xh = g.concat_cols(&[x, h])?;
    let pre = g.matmul(xh, w)?;
    let pre = g.add(pre, b)?;
    let i = g.slice_cols(pre, 0, hd)?;
    let f = g.slice_cols(pre, hd, 2 * hd)?;
    let cand = g.slice_cols(pre, 2 * hd, 3 * hd)?;
    let o = g.slice_cols(pre, 3 * hd, 4 * hd)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

fn run_direction(
    g: &mut Graph,
    store: &ParamStore,
    p: &LstmParams,
    rows: &[NodeId],
) -> Result<Vec<NodeId>> {
    let mut h = g.input(Tensor::zeros(1, p.hidden_dim));
    let mut c = g.input(Tensor::zeros(1, p.hidden_dim));
    let mut out = Vec::with_capacity(rows.len());
    for &x in rows {
        (h, c) = lstm_step(g, store, p, x, h, c)?;
        out.push(h);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstm {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(BiLstm {
            forward: LstmParams::register(
                store,
                &format!("{prefix}.fwd"),
                input_dim,
                hidden_dim,
                seed,
            )?,
            backward: LstmParams::register(
                store,
                &format!("{prefix}.bwd"),
                input_dim,
                hidden_dim,
                seed,
            )?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(BiLstm {
            forward: LstmParams::lookup(store, &format!("{prefix}.fwd"))?,
            backward: LstmParams::lookup(store, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden_dim + self.backward.hidden_dim
    }

    fn split_rows(&self, g: &mut Graph, matrix: NodeId) -> Result<Vec<NodeId>> {
        let (rows, cols) = g.value(matrix).shape();
        if rows > 0 && cols != self.input_dim() {
            return Err(Error::Dimension {
                op: "bilstm input",
                left: (rows, cols),
                right: (rows, self.input_dim()),
            });
        }
        (0..rows).map(|r| g.row(matrix, r)).collect()
    }

    /// `[→h_m ; ←h_1]`: final states of both directions (1 × 2H). An empty
    /// sequence yields the zero vector.
    pub fn pool(&self, g: &mut Graph, store: &ParamStore, matrix: NodeId) -> Result<NodeId> {
        let rows = self.split_rows(g, matrix)?;
        if rows.is_empty() {
            return Ok(g.input(Tensor::zeros(1, self.output_dim())));
        }
        let fwd = run_direction(g, store, &self.forward, &rows)?;
        let rev: Vec<NodeId> = rows.iter().rev().copied().collect();
        let bwd = run_direction(g, store, &self.backward, &rev)?;
        g.concat_cols(&[
            *fwd.last().expect("non-empty"),
            *bwd.last().expect("non-empty"),
        ])
    }

    /// One output row per input row: row t is `[→h_t ; ←h_t]`.
    pub fn seq(&self, g: &mut Graph, store: &ParamStore, matrix: NodeId) -> Result<NodeId> {
        let rows = self.split_rows(g, matrix)?;
        if rows.is_empty() {
            return Ok(g.input(Tensor::zeros(0, self.output_dim())));
        }
        let fwd = run_direction(g, store, &self.forward, &rows)?;
        let rev: Vec<NodeId> = rows.iter().rev().copied().collect();
        let mut bwd = run_direction(g, store, &self.backward, &rev)?;
        bwd.reverse();
        let joined = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat_cols(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        g.stack_rows(&joined)
    }
}

/// Fully-connected layer followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input_dim: usize,
    pub output_dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let w_name = format!("{prefix}.w");
        let mut rng = param_rng(seed, &w_name);
        let w = glorot(input_dim, output_dim, input_dim, output_dim, &mut rng);
        Ok(Dense {
            input_dim,
            output_dim,
            w: store.add(w_name, w)?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(1, output_dim))?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = lookup_id(store, &format!("{prefix}.w"))?;
        let b = lookup_id(store, &format!("{prefix}.b"))?;
        let (input_dim, output_dim) = store.value(w).shape();
        Ok(Dense {
            input_dim,
            output_dim,
            w,
            b,
        })
    }

    /// `r · w + b` without activation.
    pub fn affine(&self, g: &mut Graph, store: &ParamStore, r: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(r, w)?;
        g.add_row(y, b)
    }

    /// `ReLU(r · w + b)`.
    pub fn relu(&self, g: &mut Graph, store: &ParamStore, r: NodeId) -> Result<NodeId> {
        let y = self.affine(g, store, r)?;
        Ok(g.relu(y))
    }
}
