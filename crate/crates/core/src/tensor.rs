//! Dense row-major containers used throughout the crate.

use std::fmt;

/// Shape of a 4-D attention tensor: `(batch, heads, tokens, head_dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape4 {
    pub batch: usize,
    pub heads: usize,
    pub tokens: usize,
    pub dim: usize,
}

impl Shape4 {
    pub const fn new(batch: usize, heads: usize, tokens: usize, dim: usize) -> Self {
        Self {
            batch,
            heads,
            tokens,
            dim,
        }
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.heads * self.tokens * self.dim
    }

    /// Number of independent `(batch, head)` slices.
    pub const fn slices(&self) -> usize {
        self.batch * self.heads
    }

    /// Elements in one `(batch, head)` slice.
    pub const fn slice_len(&self) -> usize {
        self.tokens * self.dim
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.batch, self.heads, self.tokens, self.dim]
    }

    pub fn is_empty(&self) -> bool {
        self.dims().contains(&0)
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.batch, self.heads, self.tokens, self.dim
        )
    }
}

impl std::str::FromStr for Shape4 {
    type Err = String;

    /// Parses `"B,H,N,d"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims = s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("bad shape `{s}`: {e}"))?;
        let dims: [usize; 4] = dims
            .try_into()
            .map_err(|d: Vec<usize>| format!("shape `{s}` has {} dimensions, expected B,H,N,d", d.len()))?;
        Ok(Self::from(dims))
    }
}

impl From<[usize; 4]> for Shape4 {
    fn from(d: [usize; 4]) -> Self {
        Self::new(d[0], d[1], d[2], d[3])
    }
}

/// Dense `(batch, heads, tokens, dim)` tensor in C order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::default(); shape.numel()],
        }
    }
}

impl<T> Tensor4<T> {
    /// Wraps `data`, returning `None` when its length does not match `shape`.
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Option<Self> {
        (data.len() == shape.numel()).then_some(Self { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// The `tokens × dim` matrix of slice `index = b * heads + h`.
    pub fn head(&self, index: usize) -> &[T] {
        let n = self.shape.slice_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn head_mut(&mut self, index: usize) -> &mut [T] {
        let n = self.shape.slice_len();
        &mut self.data[index * n..(index + 1) * n]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Tensor4<f32> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copies batch entry `b` out as a tensor with batch size 1.
    pub fn batch_item(&self, b: usize) -> Tensor4<f32> {
        let per = self.shape.heads * self.shape.slice_len();
        let shape = Shape4::new(1, self.shape.heads, self.shape.tokens, self.shape.dim);
        Tensor4 {
            shape,
            data: self.data[b * per..(b + 1) * per].to_vec(),
        }
    }
}

/// Row-major 2-D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> Matrix<T> {
    /// Returns `None` when `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; `None` when rows are ragged.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Option<Self>
    where
        T: Clone,
    {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return None;
            }
            data.extend_from_slice(r);
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> Matrix<T> {
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }
}
