//! Grid layouts for the taxi environments: cell grid, wall edges, special
//! cells, and the shifted variants used by the adaptation protocols.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LAYOUT_FORMAT_VERSION: u32 = 1;

pub type Cell = (i32, i32);

/// Grid direction; y grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::N => (0, -1),
            Direction::E => (1, 0),
            Direction::S => (0, 1),
            Direction::W => (-1, 0),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::N => 0,
            Direction::E => 1,
            Direction::S => 2,
            Direction::W => 3,
        }
    }

    pub fn from_index(i: usize) -> Direction {
        Direction::ALL[i % 4]
    }

    pub fn clockwise(self) -> Direction {
        Direction::from_index((self.index() + 1) % 4)
    }

    pub fn counter_clockwise(self) -> Direction {
        Direction::from_index((self.index() + 3) % 4)
    }
}

pub fn neighbor(cell: Cell, dir: Direction) -> Cell {
    let (dx, dy) = dir.delta();
    (cell.0 + dx, cell.1 + dy)
}

/// On-disk layout description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    version: u32,
    id: String,
    width: i32,
    height: i32,
    /// Blocked edges between adjacent cells, as ((x,y),(x',y')) pairs.
    walls: Vec<(Cell, Cell)>,
    special_cells: Vec<Cell>,
    /// Per-special-cell shift direction for the adaptation variant.
    #[serde(default)]
    shifts: Option<Vec<Direction>>,
}

/// A validated grid layout. Locations are the cells reachable from the first
/// special cell; observation indices follow row-major order over them.
#[derive(Debug, Clone)]
pub struct GridLayout {
    pub id: String,
    pub width: i32,
    pub height: i32,
    walls: HashSet<(Cell, Cell)>,
    pub special_cells: Vec<Cell>,
    pub shifts: Option<Vec<Direction>>,
    reachable: Vec<Cell>,
    loc_index: HashMap<Cell, usize>,
}

fn wall_key(a: Cell, b: Cell) -> (Cell, Cell) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl GridLayout {
    fn from_file(file: LayoutFile) -> Result<Self> {
        if file.version != LAYOUT_FORMAT_VERSION {
            return Err(Error::format(format!(
                "layout `{}` has version {}, this build reads {}",
                file.id, file.version, LAYOUT_FORMAT_VERSION
            )));
        }
        if file.width < 2 || file.height < 2 {
            return Err(Error::config("layout must be at least 2x2"));
        }
        if file.special_cells.len() != 4 {
            return Err(Error::config(format!(
                "layout `{}` needs exactly 4 special cells, got {}",
                file.id,
                file.special_cells.len()
            )));
        }
        let in_bounds =
            |c: Cell| c.0 >= 0 && c.0 < file.width && c.1 >= 0 && c.1 < file.height;
        let mut walls = HashSet::new();
        for &(a, b) in &file.walls {
            let adjacent = (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1;
            if !adjacent || !in_bounds(a) || !in_bounds(b) {
                return Err(Error::config(format!(
                    "wall {a:?}-{b:?} is not an in-bounds adjacent pair"
                )));
            }
            walls.insert(wall_key(a, b));
        }
        for &c in &file.special_cells {
            if !in_bounds(c) {
                return Err(Error::config(format!("special cell {c:?} out of bounds")));
            }
        }
        if let Some(shifts) = &file.shifts {
            if shifts.len() != 4 {
                return Err(Error::config("shifts must list one direction per special cell"));
            }
        }

        let mut layout = GridLayout {
            id: file.id,
            width: file.width,
            height: file.height,
            walls,
            special_cells: file.special_cells,
            shifts: file.shifts,
            reachable: Vec::new(),
            loc_index: HashMap::new(),
        };
        layout.compute_reachable()?;
        Ok(layout)
    }

    fn compute_reachable(&mut self) -> Result<()> {
        let start = self.special_cells[0];
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start);
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for dir in Direction::ALL {
                let n = neighbor(c, dir);
                if !self.blocked(c, dir) && !seen.contains(&n) {
                    seen.insert(n);
                    queue.push_back(n);
                }
            }
        }
        for &c in &self.special_cells {
            if !seen.contains(&c) {
                return Err(Error::config(format!(
                    "special cell {c:?} is not reachable from {:?}",
                    self.special_cells[0]
                )));
            }
        }
        let mut reachable: Vec<Cell> = seen.into_iter().collect();
        reachable.sort_by_key(|&(x, y)| (y, x));
        self.loc_index = reachable.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        self.reachable = reachable;
        Ok(())
    }

    /// True if moving from `cell` toward `dir` is blocked by a wall or the
    /// grid boundary.
    pub fn blocked(&self, cell: Cell, dir: Direction) -> bool {
        let n = neighbor(cell, dir);
        if n.0 < 0 || n.0 >= self.width || n.1 < 0 || n.1 >= self.height {
            return true;
        }
        self.walls.contains(&wall_key(cell, n))
    }

    pub fn location_count(&self) -> usize {
        self.reachable.len()
    }

    pub fn locations(&self) -> &[Cell] {
        &self.reachable
    }

    /// Row-major index of a reachable cell.
    pub fn location_index(&self, cell: Cell) -> Option<usize> {
        self.loc_index.get(&cell).copied()
    }

    pub fn walls(&self) -> impl Iterator<Item = &(Cell, Cell)> {
        self.walls.iter()
    }

    /// The adaptation variant: every special cell moved one step along its
    /// configured shift direction.
    pub fn shifted(&self) -> Result<GridLayout> {
        let shifts = self.shifts.as_ref().ok_or_else(|| {
            Error::config(format!("layout `{}` declares no shift directions", self.id))
        })?;
        let mut moved = Vec::new();
        for (&c, &dir) in self.special_cells.iter().zip(shifts.iter()) {
            let n = neighbor(c, dir);
            if n.0 < 0 || n.0 >= self.width || n.1 < 0 || n.1 >= self.height {
                return Err(Error::config(format!(
                    "shifting special cell {c:?} {dir:?} leaves the grid"
                )));
            }
            if !self.loc_index.contains_key(&n) {
                return Err(Error::config(format!(
                    "shifting special cell {c:?} {dir:?} lands on an unreachable cell"
                )));
            }
            moved.push(n);
        }
        let distinct: HashSet<Cell> = moved.iter().copied().collect();
        if distinct.len() != 4 {
            return Err(Error::config("shifted special cells collide"));
        }
        let mut out = self.clone();
        out.id = format!("{}-shifted", self.id);
        out.special_cells = moved;
        out.compute_reachable()?;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<GridLayout> {
        let text = std::fs::read_to_string(path)?;
        let file: LayoutFile = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("invalid layout {}: {e}", path.display())))?;
        GridLayout::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = LayoutFile {
            version: LAYOUT_FORMAT_VERSION,
            id: self.id.clone(),
            width: self.width,
            height: self.height,
            walls: self.walls.iter().copied().collect(),
            special_cells: self.special_cells.clone(),
            shifts: self.shifts.clone(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::format(format!("layout serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// A layout shipped with the crate, by id.
    pub fn builtin(id: &str) -> Result<GridLayout> {
        let text = match id {
            "taxi30" => include_str!("layouts/taxi30.json"),
            "open8x8" => include_str!("layouts/open8x8.json"),
            "open10x10" => include_str!("layouts/open10x10.json"),
            _ => {
                return Err(Error::config(format!(
                    "unknown builtin layout `{id}` (known: taxi30, open8x8, open10x10)"
                )))
            }
        };
        let file: LayoutFile = serde_json::from_str(text)
            .map_err(|e| Error::format(format!("builtin layout `{id}` is invalid: {e}")))?;
        GridLayout::from_file(file)
    }

    /// Resolves a layout reference: a builtin id or a path to a layout file.
    pub fn resolve(reference: &str) -> Result<GridLayout> {
        match GridLayout::builtin(reference) {
            Ok(l) => Ok(l),
            Err(_) if Path::new(reference).exists() => GridLayout::load(Path::new(reference)),
            Err(e) => Err(e),
        }
    }
}
