//! Cell coordinates, dense row-major grids and precomputed circular
//! neighbourhoods.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Integer cell coordinates; `x` grows east, `y` grows with the row index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Cell::new(self.x + dx, self.y + dy)
    }

    /// Euclidean distance between cell centres.
    pub fn distance(self, other: Cell) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        dx.hypot(dy)
    }

    pub fn distance_to_point(self, (px, py): (f64, f64)) -> f64 {
        (f64::from(self.x) - px).hypot(f64::from(self.y) - py)
    }

    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    /// True for the cell itself and its eight neighbours.
    pub fn is_adjacent_or_same(self, other: Cell) -> bool {
        self.chebyshev(other) <= 1
    }
}

/// The eight compass moves, counter-clockwise from east.
pub const MOVES8: [(i32, i32); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

pub const MOVES4: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value.clone());
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(Cell) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(Cell::new(x as i32, y as i32)));
            }
        }
        Grid { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn contains(&self, cell: Cell) -> bool {
        in_bounds(self.width, self.height, cell)
    }

    /// Row-major index. The cell must be inside the grid.
    pub fn index_of(&self, cell: Cell) -> usize {
        debug_assert!(self.contains(cell), "{cell:?} outside grid");
        cell.y as usize * self.width + cell.x as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn get(&self, cell: Cell) -> Option<&T> {
        self.contains(cell).then(|| &self.data[self.index_of(cell)])
    }

    pub fn get_mut(&mut self, cell: Cell) -> Option<&mut T> {
        if self.contains(cell) {
            let i = self.index_of(cell);
            Some(&mut self.data[i])
        } else {
            None
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.data.len()).map(move |i| self.cell_at(i))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T> Index<Cell> for Grid<T> {
    type Output = T;

    fn index(&self, cell: Cell) -> &T {
        assert!(self.contains(cell), "{cell:?} outside grid");
        &self.data[self.index_of(cell)]
    }
}

impl<T> IndexMut<Cell> for Grid<T> {
    fn index_mut(&mut self, cell: Cell) -> &mut T {
        assert!(self.contains(cell), "{cell:?} outside grid");
        let i = self.index_of(cell);
        &mut self.data[i]
    }
}

pub fn in_bounds(width: usize, height: usize, cell: Cell) -> bool {
    cell.x >= 0 && cell.y >= 0 && (cell.x as usize) < width && (cell.y as usize) < height
}

/// One cell offset inside a disc, with its centre distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscOffset {
    pub dx: i32,
    pub dy: i32,
    pub distance: f64,
}

/// Offsets strictly closer than `radius` to the origin, row-major.
pub fn disc_offsets(radius: f64) -> Vec<DiscOffset> {
    let r = radius.ceil() as i32;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let distance = f64::from(dx).hypot(f64::from(dy));
            if distance < radius {
                out.push(DiscOffset { dx, dy, distance });
            }
        }
    }
    out
}

/// Number of cells strictly closer than `radius` to a cell centre.
pub fn disc_area(radius: f64) -> usize {
    disc_offsets(radius).len()
}
