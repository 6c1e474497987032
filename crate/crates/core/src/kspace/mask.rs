use serde::{Deserialize, Serialize};

use crate::container::{DType, Tensor};
use crate::error::{Error, Result};

/// Selection of phase-encode lines (image rows) acquired at acceleration `R`.
///
/// Holds exactly `floor(line_count / R)` selected lines. No calibration lines
/// are ever added on top of that budget.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CartesianMask {
    line_count: usize,
    selected: Vec<bool>,
    acceleration: usize,
}

impl CartesianMask {
    pub fn new(selected: Vec<bool>, acceleration: usize) -> Result<Self> {
        if acceleration == 0 {
            return Err(Error::InvalidArgument("acceleration must be >= 1".into()));
        }
        let line_count = selected.len();
        let budget = line_count / acceleration;
        let count = selected.iter().filter(|&&s| s).count();
        if count != budget {
            return Err(Error::InvalidArgument(format!(
                "mask selects {count} of {line_count} lines, R={acceleration} requires exactly {budget}"
            )));
        }
        Ok(CartesianMask {
            line_count,
            selected,
            acceleration,
        })
    }

    /// Builds a mask from line indices. Duplicates are rejected.
    pub fn from_lines(line_count: usize, lines: &[usize], acceleration: usize) -> Result<Self> {
        let mut selected = vec![false; line_count];
        for &l in lines {
            if l >= line_count {
                return Err(Error::InvalidArgument(format!("line {l} out of range")));
            }
            if selected[l] {
                return Err(Error::InvalidArgument(format!("line {l} listed twice")));
            }
            selected[l] = true;
        }
        Self::new(selected, acceleration)
    }

    pub fn full(line_count: usize) -> Self {
        CartesianMask {
            line_count,
            selected: vec![true; line_count],
            acceleration: 1,
        }
    }

    pub fn line_count(&self) -> usize {
        self.line_count
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn is_selected(&self, line: usize) -> bool {
        self.selected[line]
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn lines(&self) -> Vec<usize> {
        (0..self.line_count).filter(|&l| self.selected[l]).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.selected.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        Tensor::real(vec![self.line_count], data, DType::F32).expect("rank-1 mask tensor")
    }

    /// Reads a 0/1 vector back into a mask, inferring `R` from the selection
    /// unless one is supplied.
    pub fn from_tensor(t: Tensor, acceleration: Option<usize>) -> Result<Self> {
        if t.dims.len() != 1 {
            return Err(Error::Container("mask tensor must have rank 1".into()));
        }
        let selected: Vec<bool> = t.into_real()?.iter().map(|&v| v > 0.5).collect();
        let count = selected.iter().filter(|&&s| s).count();
        let r = match acceleration {
            Some(r) => r,
            None if count == 0 => selected.len() + 1,
            None => selected.len() / count,
        };
        Self::new(selected, r)
    }
}
