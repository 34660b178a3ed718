//! Additive positional encodings.

use serde::{Deserialize, Serialize};

use super::params::{Ctx, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeKind {
    SinusoidalTemporal,
    SinusoidalSpatial2d,
    Learned,
}

/// Standard transformer sinusoid table: `pe[t, 2i] = sin(t / 10000^(2i/d))`,
/// `pe[t, 2i+1] = cos(...)`.
pub fn sinusoid_table(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for t in 0..len {
        for i in 0..d {
            let pair = (i / 2) * 2;
            let angle = t as f64 / 10000f64.powf(pair as f64 / d as f64);
            data[t * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![len, d], data)
}

/// 2-D table over an `h × w` grid (row-major cells): the first half of the
/// channels encodes the row, the second half the column.
pub fn sinusoid_table_2d(h: usize, w: usize, d: usize) -> Result<Tensor> {
    if !d.is_multiple_of(2) {
        return Err(Error::config(format!("2-D positional encoding needs even width, got {d}")));
    }
    let half = d / 2;
    let (rows, cols) = (sinusoid_table(h, half), sinusoid_table(w, half));
    let mut data = Vec::with_capacity(h * w * d);
    for r in 0..h {
        for c in 0..w {
            data.extend_from_slice(rows.row(r));
            data.extend_from_slice(cols.row(c));
        }
    }
    Ok(Tensor::from_parts(vec![h * w, d], data))
}

#[derive(Clone, Debug)]
pub struct PositionalEncoding {
    pub kind: PeKind,
    table: Tensor,
    /// Set for learned tables; the live values sit in the parameter store.
    param: Option<String>,
}

impl PositionalEncoding {
    pub fn temporal(len: usize, d: usize) -> Self {
        Self { kind: PeKind::SinusoidalTemporal, table: sinusoid_table(len, d), param: None }
    }

    pub fn spatial(h: usize, w: usize, d: usize) -> Result<Self> {
        Ok(Self { kind: PeKind::SinusoidalSpatial2d, table: sinusoid_table_2d(h, w, d)?, param: None })
    }

    pub fn learned(store: &mut ParamStore, name: &str, len: usize, d: usize) -> Result<Self> {
        store.insert(name, Tensor::zeros(&[len, d]))?;
        Ok(Self { kind: PeKind::Learned, table: Tensor::zeros(&[len, d]), param: Some(name.to_string()) })
    }

    /// A fixed table supplied directly.
    pub fn fixed(kind: PeKind, table: Tensor) -> Self {
        Self { kind, table, param: None }
    }

    pub fn capacity(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    /// Rows of the table at `positions`, as a tape value.
    pub fn rows<'t>(&self, ctx: &Ctx<'t>, positions: &[usize]) -> Result<Var<'t>> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.capacity()) {
            return Err(Error::config(format!(
                "position {bad} exceeds positional table of {} rows",
                self.capacity()
            )));
        }
        match &self.param {
            Some(name) => ctx.param(name)?.index_select(positions),
            None => {
                let d = self.table.shape()[1];
                let mut data = Vec::with_capacity(positions.len() * d);
                for &p in positions {
                    data.extend_from_slice(self.table.row(p));
                }
                Ok(ctx.constant(Tensor::from_parts(vec![positions.len(), d], data)))
            }
        }
    }

    /// `x[i] + table[positions[i]]` for `x` of shape `[L, d]`.
    pub fn encode<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, positions: &[usize]) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[0] != positions.len() {
            return Err(Error::dim(format!("positional_encode: {shape:?} vs {} positions", positions.len())));
        }
        x.add(self.rows(ctx, positions)?)
    }
}
