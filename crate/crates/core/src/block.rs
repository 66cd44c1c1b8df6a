//! Row-major blocks of signals and the streaming source abstraction used by
//! every pass over a dictionary.

use crate::error::{Error, Result};

/// A dense row-major block of `rows` observations of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBlock {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl RowBlock {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::dim(rows * dim, data.len()));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self { rows, dim, data: vec![0.0; rows * dim] }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self { rows: 0, dim, data: Vec::with_capacity(rows * dim) }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut block = Self::with_capacity(dim, rows.len());
        for r in rows {
            block.push_row(r.as_ref())?;
        }
        Ok(block)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty slice with dim 0 would panic
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::dim(self.dim, row.len()));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn append(&mut self, other: &RowBlock) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::dim(self.dim, other.dim));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }

    /// Rows `start..end` as a new block.
    pub fn slice(&self, start: usize, end: usize) -> RowBlock {
        RowBlock {
            rows: end - start,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map_rows_in_place(&mut self, mut f: impl FnMut(&mut [f64])) {
        let dim = self.dim.max(1);
        for r in self.data.chunks_exact_mut(dim) {
            f(r);
        }
    }
}

/// A chunked, possibly out-of-core, source of signal rows.
pub trait SignalSource {
    /// Width of every row.
    fn dim(&self) -> usize;

    /// Total row count when known up front.
    fn len_hint(&self) -> Option<u64>;

    /// Restart from the first row. Single-shot sources return
    /// [`Error::NotReplayable`].
    fn rewind(&mut self) -> Result<()>;

    /// Next block of at most `max_rows` rows, `None` once exhausted.
    fn next_block(&mut self, max_rows: usize) -> Result<Option<RowBlock>>;
}

/// A [`SignalSource`] over rows already held in memory.
#[derive(Debug, Clone)]
pub struct MemorySource<'a> {
    block: &'a RowBlock,
    pos: usize,
}

impl<'a> MemorySource<'a> {
    pub fn new(block: &'a RowBlock) -> Self {
        Self { block, pos: 0 }
    }
}

impl SignalSource for MemorySource<'_> {
    fn dim(&self) -> usize {
        self.block.dim()
    }

    fn len_hint(&self) -> Option<u64> {
        Some(self.block.rows() as u64)
    }

    fn rewind(&mut self) -> Result<()> {
        self.pos = 0;
        Ok(())
    }

    fn next_block(&mut self, max_rows: usize) -> Result<Option<RowBlock>> {
        if self.pos >= self.block.rows() {
            return Ok(None);
        }
        let end = (self.pos + max_rows.max(1)).min(self.block.rows());
        let out = self.block.slice(self.pos, end);
        self.pos = end;
        Ok(Some(out))
    }
}

/// Calls `f` on every block of `source` (from its current position).
pub(crate) fn for_each_block(
    source: &mut dyn SignalSource,
    block_rows: usize,
    mut f: impl FnMut(&RowBlock) -> Result<()>,
) -> Result<()> {
    while let Some(block) = source.next_block(block_rows)? {
        if block.dim() != source.dim() {
            return Err(Error::dim(source.dim(), block.dim()));
        }
        f(&block)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_source_chunks_and_rewinds() {
        let block = RowBlock::new(5, 2, (0..10).map(f64::from).collect()).unwrap();
        let mut src = MemorySource::new(&block);
        let mut sizes = Vec::new();
        while let Some(b) = src.next_block(2).unwrap() {
            sizes.push(b.rows());
        }
        assert_eq!(sizes, vec![2, 2, 1]);
        src.rewind().unwrap();
        assert_eq!(src.next_block(10).unwrap().unwrap(), block);
    }

    #[test]
    fn push_row_checks_width() {
        let mut b = RowBlock::with_capacity(3, 1);
        assert!(b.push_row(&[1.0, 2.0]).is_err());
        b.push_row(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(b.row(0), &[1.0, 2.0, 3.0]);
    }
}
