use crate::error::{Error, Result};
use crate::tensor::NdArray;

/// An `H × W` grid of `C`-channel tokens, stored row-major as `[H·W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    tokens: NdArray,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize, tokens: NdArray) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!("empty token grid {height}x{width}")));
        }
        if tokens.ndim() != 2 || tokens.shape()[0] != height * width {
            return Err(Error::shape("TokenGrid::new", tokens.shape(), &[height * width]));
        }
        Ok(Self {
            height,
            width,
            tokens,
        })
    }

    /// Builds a grid from an `[H, W, C]` array.
    pub fn from_hwc(array: &NdArray) -> Result<Self> {
        if array.ndim() != 3 {
            return Err(Error::shape("TokenGrid::from_hwc", array.shape(), &[3]));
        }
        let (h, w, c) = (array.shape()[0], array.shape()[1], array.shape()[2]);
        Self::new(h, w, array.reshape(&[h * w, c])?)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flattened `[H·W, C]` view in row-major cell order.
    pub fn tokens(&self) -> &NdArray {
        &self.tokens
    }

    pub fn into_tokens(self) -> NdArray {
        self.tokens
    }

    pub fn to_hwc(&self) -> NdArray {
        self.tokens
            .reshape(&[self.height, self.width, self.channels()])
            .expect("grid extents match token count")
    }

    pub fn token(&self, row: usize, col: usize) -> &[f64] {
        self.tokens.row(row * self.width + col)
    }
}
