//! Binary spatial masks.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize) -> Self {
        BinaryMap {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {}x{} needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(BinaryMap {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        BinaryMap {
            height,
            width,
            data,
        }
    }

    /// Parses rows like `"..#."` where `#` (or `1`) is foreground.
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        BinaryMap::from_fn(height, width, |y, x| {
            matches!(rows[y].as_bytes()[x], b'#' | b'1')
        })
    }

    /// Thresholds a probability map (`p >= threshold` is foreground).
    pub fn threshold(height: usize, width: usize, values: &[f64], threshold: f64) -> Self {
        BinaryMap {
            height,
            width,
            data: values.iter().map(|&v| v >= threshold).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_all_background(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn complement(&self) -> BinaryMap {
        BinaryMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    /// Foreground pixels with at least one in-image background 4-neighbour.
    ///
    /// Pixels beyond the image border do not count as background.
    pub fn contour(&self) -> BinaryMap {
        let (h, w) = self.dims();
        BinaryMap::from_fn(h, w, |y, x| {
            if !self.get(y, x) {
                return false;
            }
            (y > 0 && !self.get(y - 1, x))
                || (y + 1 < h && !self.get(y + 1, x))
                || (x > 0 && !self.get(y, x - 1))
                || (x + 1 < w && !self.get(y, x + 1))
        })
    }

    /// Coordinates `(y, x)` of all foreground pixels in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    out.push((y, x));
                }
            }
        }
        out
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    pub fn check_same_dims(&self, other: &BinaryMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "mask dims differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}
