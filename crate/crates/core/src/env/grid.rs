use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub const fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn offset(self, dr: i32, dc: i32) -> Self {
        Self::new(self.row + dr, self.col + dc)
    }
}

/// Facing direction, clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    pub fn left(self) -> Self {
        Self::ALL[(self as usize + 3) % 4]
    }

    pub fn right(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }

    pub fn glyph(self) -> char {
        ['^', '>', 'v', '<'][self as usize]
    }
}

/// Cell in the egocentric window at `ahead` cells forward and `lateral`
/// cells to the right of `pos`.
pub fn ego_cell(pos: Pos, heading: Heading, ahead: i32, lateral: i32) -> Pos {
    let (fr, fc) = heading.delta();
    let (rr, rc) = heading.right().delta();
    pos.offset(fr * ahead + rr * lateral, fc * ahead + rc * lateral)
}

pub const WINDOW: i32 = 5;

/// Visits the egocentric window row by row, far row first, left to right.
/// The agent sits at the bottom centre.
pub fn for_each_window_cell(pos: Pos, heading: Heading, mut f: impl FnMut(Pos)) {
    for ahead in (0..WINDOW).rev() {
        for lateral in -(WINDOW / 2)..=(WINDOW / 2) {
            f(ego_cell(pos, heading, ahead, lateral));
        }
    }
}

/// Breadth-first distances from `source` over cells where `open` holds;
/// unreachable cells get `None`.
pub fn bfs(rows: usize, cols: usize, source: Pos, open: impl Fn(Pos) -> bool) -> Vec<Option<u32>> {
    let mut dist = vec![None; rows * cols];
    let idx = |p: Pos| p.row as usize * cols + p.col as usize;
    let inside = |p: Pos| p.row >= 0 && p.col >= 0 && (p.row as usize) < rows && (p.col as usize) < cols;
    if !inside(source) || !open(source) {
        return dist;
    }
    let mut queue = alloc::collections::VecDeque::new();
    dist[idx(source)] = Some(0);
    queue.push_back(source);
    while let Some(p) = queue.pop_front() {
        let d = dist[idx(p)].unwrap();
        for h in Heading::ALL {
            let (dr, dc) = h.delta();
            let n = p.offset(dr, dc);
            if inside(n) && open(n) && dist[idx(n)].is_none() {
                dist[idx(n)] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}
