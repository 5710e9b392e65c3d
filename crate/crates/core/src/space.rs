//! Finite hypothesis spaces.
//!
//! Every task in this crate reduces to the same shape: a finite set of
//! hypotheses, a finite input set `X`, a finite output set `Y`, and a
//! deterministic prediction `h(x) ∈ Y` for each hypothesis. The table is
//! materialized once so that posterior updates are a scan over integers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed data pair `(x, y)`, stored as indices into the bound task's
/// input and output sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub x: usize,
    pub y: usize,
}

impl Example {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// A finite hypothesis space with a materialized prediction table.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSpace {
    id: String,
    hypotheses: usize,
    inputs: usize,
    outputs: usize,
    // row-major: table[h * inputs + x] = y
    table: Vec<u16>,
}

impl FiniteSpace {
    /// Builds the table by evaluating `predict(h, x)` for every pair.
    pub fn from_fn<F>(
        id: impl Into<String>,
        hypotheses: usize,
        inputs: usize,
        outputs: usize,
        mut predict: F,
    ) -> Result<Self>
    where
        F: FnMut(usize, usize) -> usize,
    {
        if hypotheses == 0 || inputs == 0 || outputs == 0 {
            return Err(Error::Domain("hypothesis, input and output sets must be non-empty".into()));
        }
        if outputs > u16::MAX as usize {
            return Err(Error::Domain(format!("too many outputs: {outputs}")));
        }
        let mut table = Vec::with_capacity(hypotheses * inputs);
        for h in 0..hypotheses {
            for x in 0..inputs {
                let y = predict(h, x);
                if y >= outputs {
                    return Err(Error::Domain(format!("hypothesis {h} maps input {x} to {y}, outside 0..{outputs}")));
                }
                table.push(y as u16);
            }
        }
        Ok(Self { id: id.into(), hypotheses, inputs, outputs, table })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn hypothesis_count(&self) -> usize {
        self.hypotheses
    }

    pub fn input_count(&self) -> usize {
        self.inputs
    }

    pub fn output_count(&self) -> usize {
        self.outputs
    }

    /// `h(x)`.
    #[inline]
    pub fn predict(&self, h: usize, x: usize) -> usize {
        self.table[h * self.inputs + x] as usize
    }

    /// The full row of predictions of `h`, indexed by input.
    pub fn row(&self, h: usize) -> impl Iterator<Item = usize> + '_ {
        self.table[h * self.inputs..(h + 1) * self.inputs].iter().map(|&y| y as usize)
    }

    pub fn check_example(&self, e: &Example) -> Result<()> {
        if e.x >= self.inputs || e.y >= self.outputs {
            return Err(Error::ExampleOutOfRange { x: e.x, y: e.y });
        }
        Ok(())
    }

    /// Whether `h` reproduces every example exactly.
    pub fn consistent(&self, h: usize, data: &[Example]) -> bool {
        data.iter().all(|e| self.predict(h, e.x) == e.y)
    }
}
