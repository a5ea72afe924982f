//! Real-valued functions on an integer-offset grid `{base + k}`.

use crate::error::{Error, Result};

/// A function stored on the grid points `base + k` for
/// `k = first_offset ..= last_offset`. Lookup is exact integer-offset
/// indexing; there is no interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    base: f64,
    first_offset: i64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(base: f64, first_offset: i64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("grid function must store at least one value".into()));
        }
        Ok(Self { base, first_offset, values })
    }

    pub fn from_fn(
        base: f64,
        first_offset: i64,
        last_offset: i64,
        f: impl FnMut(i64) -> f64,
    ) -> Result<Self> {
        if last_offset < first_offset {
            return Err(Error::Domain("empty offset range".into()));
        }
        let values = (first_offset..=last_offset).map(f).collect();
        Self::new(base, first_offset, values)
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn first_offset(&self) -> i64 {
        self.first_offset
    }

    pub fn last_offset(&self) -> i64 {
        self.first_offset + self.values.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The real grid point at offset `k`.
    pub fn point(&self, k: i64) -> f64 {
        self.base + k as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at offset `k` from the base.
    pub fn value(&self, k: i64) -> Result<f64> {
        if k < self.first_offset || k > self.last_offset() {
            return Err(Error::Index(format!(
                "offset {k} outside stored range {}..={}",
                self.first_offset,
                self.last_offset()
            )));
        }
        Ok(self.values[(k - self.first_offset) as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_offset_indexed() {
        let f = GridFunction::new(2.5, -1, vec![10.0, 11.0, 12.0]).unwrap();
        assert_eq!(f.value(-1).unwrap(), 10.0);
        assert_eq!(f.value(1).unwrap(), 12.0);
        assert_eq!(f.last_offset(), 1);
        assert_eq!(f.point(1), 3.5);
    }

    #[test]
    fn out_of_range_is_index_error() {
        let f = GridFunction::new(0.0, 0, vec![1.0]).unwrap();
        assert!(matches!(f.value(1), Err(Error::Index(_))));
        assert!(matches!(f.value(-1), Err(Error::Index(_))));
    }

    #[test]
    fn empty_values_rejected() {
        assert!(GridFunction::new(0.0, 0, vec![]).is_err());
    }
}
