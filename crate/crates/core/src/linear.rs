use crate::error::{check_dim, Error, Result};

/// Linear measurement operators `A`.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOp {
    /// Coordinate selection: `(Ax)_j = x[observed[j]]`. Indices are strictly
    /// increasing.
    Mask { dim: usize, observed: Vec<usize> },
    /// Row-major `rows × cols` matrix.
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
}

impl LinearOp {
    pub fn identity(dim: usize) -> Self {
        LinearOp::Mask {
            dim,
            observed: (0..dim).collect(),
        }
    }

    pub fn mask(dim: usize, observed: Vec<usize>) -> Result<Self> {
        if observed.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "mask indices must be strictly increasing".into(),
            ));
        }
        if observed.last().is_some_and(|&j| j >= dim) {
            return Err(Error::InvalidConfig(format!(
                "mask index out of range for dimension {dim}"
            )));
        }
        Ok(LinearOp::Mask { dim, observed })
    }

    /// Parses a comma-separated list of observed coordinates, e.g. `0,2,4`.
    pub fn parse_mask(dim: usize, text: &str) -> Result<Self> {
        let observed = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("bad mask index '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::mask(dim, observed)
    }

    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        Ok(LinearOp::Dense { rows, cols, data })
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        LinearOp::Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LinearOp::Mask { dim, .. } => *dim,
            LinearOp::Dense { cols, .. } => *cols,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinearOp::Mask { observed, .. } => observed.len(),
            LinearOp::Dense { rows, .. } => *rows,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.in_dim(), x.len())?;
        Ok(match self {
            LinearOp::Mask { observed, .. } => observed.iter().map(|&j| x[j]).collect(),
            LinearOp::Dense { cols, data, .. } => data
                .chunks(*cols)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        })
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.out_dim(), v.len())?;
        let mut out = vec![0.0; self.in_dim()];
        match self {
            LinearOp::Mask { observed, .. } => {
                for (&j, &vj) in observed.iter().zip(v) {
                    out[j] = vj;
                }
            }
            LinearOp::Dense { cols, data, .. } => {
                for (row, &vr) in data.chunks(*cols).zip(v) {
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += a * vr;
                    }
                }
            }
        }
        Ok(out)
    }
}
