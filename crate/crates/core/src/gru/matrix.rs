use serde::{Deserialize, Serialize};

/// Dense row-major matrix, serialized as nested row arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out += self · x`
    pub(crate) fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · v`
    pub(crate) fn t_mul_add(&self, v: &[f64], out: &mut [f64]) {
        for (vi, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            if *vi != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, a)| *o += vi * a);
            }
        }
    }

    /// `self += a · bᵀ`
    pub(crate) fn outer_add(&mut self, a: &[f64], b: &[f64]) {
        for (ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if *ai != 0.0 {
                row.iter_mut().zip(b).for_each(|(r, bj)| *r += ai * bj);
            }
        }
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        if m.cols == 0 {
            return vec![Vec::new(); m.rows];
        }
        m.data.chunks_exact(m.cols).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged matrix rows".into());
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products() {
        let m = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let mut out = vec![1.0, 1.0];
        m.mul_add(&[1.0, 0.0, 2.0], &mut out);
        assert_eq!(out, vec![1.0 + 4.0, 1.0 + 3.0 + 10.0]);
        let mut t = vec![0.0; 3];
        m.t_mul_add(&[1.0, 2.0], &mut t);
        assert_eq!(t, vec![6.0, 9.0, 12.0]);
        let mut z = Matrix::zeros(2, 2);
        z.outer_add(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(
            Vec::<Vec<f64>>::from(z),
            vec![vec![3.0, 4.0], vec![6.0, 8.0]]
        );
    }

    #[test]
    fn nested_serde() {
        let m = Matrix::from_fn(2, 2, |i, j| (i + j) as f64);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[0.0,1.0],[1.0,2.0]]");
        assert_eq!(serde_json::from_str::<Matrix>(&s).unwrap(), m);
        assert!(serde_json::from_str::<Matrix>("[[1.0],[1.0,2.0]]").is_err());
    }
}
