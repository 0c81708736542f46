//! Scan orders over a token grid.
//!
//! The continuous set holds four boustrophedon traversals: a row snake and a
//! column snake from the top-left cell, and the exact reversal of each. Every
//! step moves to a 4-neighbour. The raster set (row-major, column-major and
//! their reversals) is kept as a discontinuous baseline.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::tensor::NdArray;

/// Label of a scan step relative to the previous cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Right,
    Left,
    Down,
    Up,
    Begin,
}

impl Direction {
    pub const ALL: [Direction; 5] = [
        Direction::Right,
        Direction::Left,
        Direction::Down,
        Direction::Up,
        Direction::Begin,
    ];

    /// Row of the direction-embedding table used for this label.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Right => Direction::Left,
            Direction::Left => Direction::Right,
            Direction::Down => Direction::Up,
            Direction::Up => Direction::Down,
            Direction::Begin => Direction::Begin,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Right => "RIGHT",
            Direction::Left => "LEFT",
            Direction::Down => "DOWN",
            Direction::Up => "UP",
            Direction::Begin => "BEGIN",
        }
    }

    /// Single-character glyph for the step that arrived at a cell.
    pub fn arrow(self) -> char {
        match self {
            Direction::Right => '>',
            Direction::Left => '<',
            Direction::Down => 'v',
            Direction::Up => '^',
            Direction::Begin => '*',
        }
    }

    fn from_unit_delta(dr: isize, dc: isize) -> Option<Direction> {
        match (dr, dc) {
            (0, 1) => Some(Direction::Right),
            (0, -1) => Some(Direction::Left),
            (1, 0) => Some(Direction::Down),
            (-1, 0) => Some(Direction::Up),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanPath {
    height: usize,
    width: usize,
    order: Vec<usize>,
    directions: Vec<Direction>,
    inverse: Vec<usize>,
}

impl ScanPath {
    /// Labels each step from the coordinate delta. Steps that are not unit
    /// moves take `jump_label`.
    fn from_order(height: usize, width: usize, order: Vec<usize>, jump_label: Direction) -> Self {
        let mut directions = Vec::with_capacity(order.len());
        directions.push(Direction::Begin);
        for pair in order.windows(2) {
            let (r0, c0) = (pair[0] / width, pair[0] % width);
            let (r1, c1) = (pair[1] / width, pair[1] % width);
            let d = Direction::from_unit_delta(r1 as isize - r0 as isize, c1 as isize - c0 as isize)
                .unwrap_or(jump_label);
            directions.push(d);
        }
        let mut inverse = vec![0; order.len()];
        for (pos, &cell) in order.iter().enumerate() {
            inverse[cell] = pos;
        }
        Self {
            height,
            width,
            order,
            directions,
            inverse,
        }
    }

    fn reversed(&self, jump_label: Direction) -> Self {
        let order = self.order.iter().rev().copied().collect();
        Self::from_order(self.height, self.width, order, jump_label)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Row-major flat cell index visited at each step.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// Scan position of each flat cell index.
    pub fn inverse_order(&self) -> &[usize] {
        &self.inverse
    }

    pub fn cell(&self, step: usize) -> (usize, usize) {
        let flat = self.order[step];
        (flat / self.width, flat % self.width)
    }

    /// Steps whose Manhattan distance from the previous cell is not 1.
    pub fn adjacency_violations(&self) -> Vec<usize> {
        (1..self.len())
            .filter(|&i| {
                let (r0, c0) = self.cell(i - 1);
                let (r1, c1) = self.cell(i);
                r0.abs_diff(r1) + c0.abs_diff(c1) != 1
            })
            .collect()
    }

    fn check_grid(&self, height: usize, width: usize) -> Result<()> {
        if (height, width) != (self.height, self.width) {
            return Err(Error::shape("scan path", &[height, width], &[self.height, self.width]));
        }
        Ok(())
    }
}

/// Flattens a grid into scan order: `[N, C]` with row `i` = token at `order[i]`.
pub fn apply_path(grid: &TokenGrid, path: &ScanPath) -> Result<NdArray> {
    path.check_grid(grid.height(), grid.width())?;
    Ok(permute_rows(grid.tokens(), path.order()))
}

/// Scatters a scan-ordered sequence back to grid positions.
pub fn invert_path(sequence: &NdArray, path: &ScanPath) -> Result<TokenGrid> {
    if sequence.ndim() != 2 || sequence.shape()[0] != path.len() {
        return Err(Error::shape("invert_path", sequence.shape(), &[path.len()]));
    }
    let tokens = permute_rows(sequence, path.inverse_order());
    TokenGrid::new(path.height(), path.width(), tokens)
}

/// `out.row(i) = x.row(index[i])`.
pub(crate) fn permute_rows(x: &NdArray, index: &[usize]) -> NdArray {
    let c = x.cols();
    let mut out = Vec::with_capacity(index.len() * c);
    for &src in index {
        out.extend_from_slice(x.row(src));
    }
    NdArray::new(&[index.len(), c], out).expect("permutation preserves size")
}

/// The four scan paths used by one 2D scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    paths: [ScanPath; 4],
}

impl PathSet {
    pub fn paths(&self) -> &[ScanPath; 4] {
        &self.paths
    }

    pub fn path(&self, k: usize) -> &ScanPath {
        &self.paths[k]
    }

    pub fn inverse_order(&self, k: usize) -> &[usize] {
        self.paths[k].inverse_order()
    }

    pub fn height(&self) -> usize {
        self.paths[0].height
    }

    pub fn width(&self) -> usize {
        self.paths[0].width
    }

    pub fn cells(&self) -> usize {
        self.paths[0].len()
    }
}

fn check_extents(height: usize, width: usize) -> Result<()> {
    if height < 1 || width < 1 {
        return Err(Error::Config(format!(
            "scan grid must be at least 1x1, got {height}x{width}"
        )));
    }
    Ok(())
}

/// Row snake, column snake, and their reversals, in that order.
pub fn generate_continuous_paths(height: usize, width: usize) -> Result<PathSet> {
    check_extents(height, width)?;
    let mut row_snake = Vec::with_capacity(height * width);
    for r in 0..height {
        if r % 2 == 0 {
            row_snake.extend((0..width).map(|c| r * width + c));
        } else {
            row_snake.extend((0..width).rev().map(|c| r * width + c));
        }
    }
    let mut col_snake = Vec::with_capacity(height * width);
    for c in 0..width {
        if c % 2 == 0 {
            col_snake.extend((0..height).map(|r| r * width + c));
        } else {
            col_snake.extend((0..height).rev().map(|r| r * width + c));
        }
    }
    // Snakes never jump; the fallback label is unreachable.
    let rows = ScanPath::from_order(height, width, row_snake, Direction::Begin);
    let cols = ScanPath::from_order(height, width, col_snake, Direction::Begin);
    let rows_rev = rows.reversed(Direction::Begin);
    let cols_rev = cols.reversed(Direction::Begin);
    Ok(PathSet {
        paths: [rows, cols, rows_rev, cols_rev],
    })
}

/// Row-major, column-major, and their reversals. Wrap-around steps are
/// labelled with the path's traversal direction.
pub fn generate_raster_paths(height: usize, width: usize) -> Result<PathSet> {
    check_extents(height, width)?;
    let n = height * width;
    let row_major: Vec<usize> = (0..n).collect();
    let col_major: Vec<usize> = (0..width)
        .flat_map(|c| (0..height).map(move |r| r * width + c))
        .collect();
    let rows = ScanPath::from_order(height, width, row_major, Direction::Right);
    let cols = ScanPath::from_order(height, width, col_major, Direction::Down);
    let rows_rev = rows.reversed(Direction::Left);
    let cols_rev = cols.reversed(Direction::Up);
    Ok(PathSet {
        paths: [rows, cols, rows_rev, cols_rev],
    })
}
