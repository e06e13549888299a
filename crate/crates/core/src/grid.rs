//! Warehouse grid maps.
//!
//! Maps use the MovingAI benchmark text layout extended with three cell
//! characters:
//!
//! ```text
//! type warehouse
//! height 3
//! width 3
//! map
//! U.B
//! ...
//! C..
//! ```
//!
//! `@` is an obstacle, `.` an aisle, `B` a shelf, `C` a cache grid and `U` an
//! unloading port. Every non-obstacle cell is a vertex of the 4-connected
//! movement graph, shelves, caches and ports included.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::ids::{CacheId, ItemKind, PortId};

/// Sentinel distance for cells that cannot be reached from the source.
pub const UNREACHABLE: u32 = u32::MAX;

/// Marker for a missing neighbour in the adjacency table.
const NO_CELL: u32 = u32::MAX;

/// A `(row, col)` grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Manhattan distance; only equal to the hop distance on open maps.
    pub fn manhattan(self, other: Coord) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn is_adjacent_or_same(self, other: Coord) -> bool {
        self.manhattan(other) <= 1
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Obstacle,
    Aisle,
    Shelf(ItemKind),
    Cache(CacheId),
    Port(PortId),
}

impl CellKind {
    pub fn is_passable(self) -> bool {
        !matches!(self, CellKind::Obstacle)
    }

    fn to_char(self) -> char {
        match self {
            CellKind::Obstacle => '@',
            CellKind::Aisle => '.',
            CellKind::Shelf(_) => 'B',
            CellKind::Cache(_) => 'C',
            CellKind::Port(_) => 'U',
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("missing header field: {0}")]
    MissingHeader(&'static str),

    #[error("invalid header value for {field}: {value:?}")]
    InvalidHeader { field: &'static str, value: String },

    #[error("unknown header line: {0:?}")]
    UnknownHeader(String),

    #[error("dimension mismatch: expected {expected} rows, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("row {row} width mismatch: expected {expected}, got {got}")]
    RowWidthMismatch { row: usize, expected: usize, got: usize },

    #[error("unknown cell character {ch:?} at {at}")]
    UnknownCell { ch: char, at: Coord },

    #[error("map has no shelves")]
    NoShelves,

    #[error("kinds file: {0}")]
    KindsFile(String),

    #[error("kinds file assigns kind {0} more than once")]
    DuplicateKind(u32),

    #[error("kinds file assigns shelf {0} more than once")]
    DuplicateShelf(Coord),

    #[error("kinds file entry {0} is not a shelf")]
    NotAShelf(Coord),

    #[error("kind {kind} is outside [0, {shelves})")]
    KindOutOfRange { kind: u32, shelves: usize },

    #[error("kinds file leaves shelf {0} without a kind")]
    UnassignedShelf(Coord),

    #[error("cannot keep {keep} caches, map has only {available}")]
    TooManyCaches { keep: usize, available: usize },

    #[error("{0} is not a passable cell")]
    Blocked(Coord),

    #[error("{0} is outside the map")]
    OutOfBounds(Coord),
}

/// The warehouse movement graph plus the per-cell classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    /// Cell index of the shelf holding each kind.
    shelf_of_kind: Vec<usize>,
    cache_locs: Vec<Coord>,
    port_locs: Vec<Coord>,
    /// Up, down, left, right neighbour cell indices.
    adj: Vec<[u32; 4]>,
}

impl GridMap {
    /// Parses map text. Shelves receive kinds in row-major scan order; use
    /// [`GridMap::assign_item_kinds`] or [`GridMap::apply_kinds_csv`] to
    /// re-label them.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut lines = text.lines();
        let mut height = None;
        let mut width = None;
        let mut saw_type = false;

        loop {
            let Some(line) = lines.next() else {
                return Err(MapError::MissingHeader("map"));
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "map" {
                break;
            }
            let (key, value) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let value = value.trim();
            match key {
                "type" => saw_type = true,
                "height" => height = Some(parse_dim("height", value)?),
                "width" => width = Some(parse_dim("width", value)?),
                _ => return Err(MapError::UnknownHeader(line.to_string())),
            }
        }
        if !saw_type {
            return Err(MapError::MissingHeader("type"));
        }
        let height = height.ok_or(MapError::MissingHeader("height"))?;
        let width = width.ok_or(MapError::MissingHeader("width"))?;

        let mut cells = Vec::with_capacity(width * height);
        let mut rows = 0;
        let mut shelves = 0u32;
        let mut caches = 0u32;
        let mut ports = 0u32;
        for line in lines {
            let line = line.trim_end_matches('\r');
            if rows == height {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(MapError::DimensionMismatch { expected: height, got: rows + 1 });
            }
            let got = line.chars().count();
            if got != width {
                return Err(MapError::RowWidthMismatch { row: rows, expected: width, got });
            }
            for (col, ch) in line.chars().enumerate() {
                let kind = match ch {
                    '@' => CellKind::Obstacle,
                    '.' => CellKind::Aisle,
                    'B' => {
                        shelves += 1;
                        CellKind::Shelf(ItemKind(shelves - 1))
                    }
                    'C' => {
                        caches += 1;
                        CellKind::Cache(CacheId(caches - 1))
                    }
                    'U' => {
                        ports += 1;
                        CellKind::Port(PortId(ports - 1))
                    }
                    _ => return Err(MapError::UnknownCell { ch, at: Coord::new(rows, col) }),
                };
                cells.push(kind);
            }
            rows += 1;
        }
        if rows != height {
            return Err(MapError::DimensionMismatch { expected: height, got: rows });
        }
        Self::from_cells(width, height, cells)
    }

    fn from_cells(width: usize, height: usize, cells: Vec<CellKind>) -> Result<Self, MapError> {
        let mut shelf_of_kind = Vec::new();
        let mut cache_locs = Vec::new();
        let mut port_locs = Vec::new();
        for (idx, cell) in cells.iter().enumerate() {
            let at = Coord::new(idx / width, idx % width);
            match *cell {
                CellKind::Shelf(k) => {
                    if shelf_of_kind.len() <= k.index() {
                        shelf_of_kind.resize(k.index() + 1, usize::MAX);
                    }
                    shelf_of_kind[k.index()] = idx;
                }
                CellKind::Cache(_) => cache_locs.push(at),
                CellKind::Port(_) => port_locs.push(at),
                _ => {}
            }
        }
        if shelf_of_kind.is_empty() {
            return Err(MapError::NoShelves);
        }
        let adj = build_adjacency(width, height, &cells);
        Ok(Self { width, height, cells, shelf_of_kind, cache_locs, port_locs, adj })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Number of shelves, which is also the size of the item-kind universe.
    pub fn num_kinds(&self) -> usize {
        self.shelf_of_kind.len()
    }

    pub fn cache_locs(&self) -> &[Coord] {
        &self.cache_locs
    }

    pub fn port_locs(&self) -> &[Coord] {
        &self.port_locs
    }

    pub fn in_bounds(&self, at: Coord) -> bool {
        at.row < self.height && at.col < self.width
    }

    pub fn index_of(&self, at: Coord) -> usize {
        debug_assert!(self.in_bounds(at));
        at.row * self.width + at.col
    }

    pub fn coord_of(&self, idx: usize) -> Coord {
        Coord::new(idx / self.width, idx % self.width)
    }

    /// Cell class at `at`; out-of-bounds coordinates read as obstacles.
    pub fn cell(&self, at: Coord) -> CellKind {
        if self.in_bounds(at) {
            self.cells[self.index_of(at)]
        } else {
            CellKind::Obstacle
        }
    }

    pub fn cell_at_index(&self, idx: usize) -> CellKind {
        self.cells[idx]
    }

    pub fn is_passable(&self, at: Coord) -> bool {
        self.cell(at).is_passable()
    }

    pub fn shelf_of_kind(&self, kind: ItemKind) -> Coord {
        self.coord_of(self.shelf_of_kind[kind.index()])
    }

    pub fn cache_id_at(&self, at: Coord) -> Option<CacheId> {
        match self.cell(at) {
            CellKind::Cache(id) => Some(id),
            _ => None,
        }
    }

    pub fn aisle_cells(&self) -> Vec<Coord> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, CellKind::Aisle))
            .map(|(i, _)| self.coord_of(i))
            .collect()
    }

    pub fn passable_cells(&self) -> Vec<Coord> {
        self.cells.iter().enumerate().filter(|(_, c)| c.is_passable()).map(|(i, _)| self.coord_of(i)).collect()
    }

    /// Passable neighbour cell indices of `idx`, in up/down/left/right order.
    pub fn neighbors_of_index(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[idx].iter().filter(|&&n| n != NO_CELL).map(|&n| n as usize)
    }

    /// Raw adjacency slot for direction `dir` (0 up, 1 down, 2 left, 3 right).
    pub(crate) fn neighbor_in_direction(&self, idx: usize, dir: usize) -> Option<usize> {
        let n = self.adj[idx][dir];
        (n != NO_CELL).then_some(n as usize)
    }

    pub fn neighbors(&self, at: Coord) -> Vec<Coord> {
        if !self.is_passable(at) {
            return Vec::new();
        }
        self.neighbors_of_index(self.index_of(at)).map(|i| self.coord_of(i)).collect()
    }

    /// Re-labels the shelves with a seeded uniform permutation of `[0, M)`.
    ///
    /// Shelves are visited in row-major order; the i-th shelf receives
    /// `perm[i]` where `perm` is the identity shuffled with a ChaCha8 stream
    /// seeded from `seed`.
    pub fn assign_item_kinds(&self, seed: u64) -> GridMap {
        let shelf_cells = self.shelf_cells_row_major();
        let mut perm: Vec<u32> = (0..shelf_cells.len() as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        self.relabel(shelf_cells.into_iter().zip(perm))
    }

    /// Applies a sidecar kinds CSV (`row,col,kind`, header required).
    pub fn apply_kinds_csv(&self, csv_text: &str) -> Result<GridMap, MapError> {
        #[derive(Deserialize)]
        struct Row {
            row: usize,
            col: usize,
            kind: u32,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_text.as_bytes());
        let headers = reader.headers().map_err(|e| MapError::KindsFile(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["row", "col", "kind"] {
            return Err(MapError::KindsFile("header must be `row,col,kind`".into()));
        }
        let shelves = self.num_kinds();
        let mut seen_kind = vec![false; shelves];
        let mut assigned = vec![None; self.cells.len()];
        for record in reader.deserialize::<Row>() {
            let r = record.map_err(|e| MapError::KindsFile(e.to_string()))?;
            let at = Coord::new(r.row, r.col);
            if !matches!(self.cell(at), CellKind::Shelf(_)) {
                return Err(MapError::NotAShelf(at));
            }
            if r.kind as usize >= shelves {
                return Err(MapError::KindOutOfRange { kind: r.kind, shelves });
            }
            if std::mem::replace(&mut seen_kind[r.kind as usize], true) {
                return Err(MapError::DuplicateKind(r.kind));
            }
            let idx = self.index_of(at);
            if assigned[idx].replace(r.kind).is_some() {
                return Err(MapError::DuplicateShelf(at));
            }
        }
        let shelf_cells = self.shelf_cells_row_major();
        let mut pairs = Vec::with_capacity(shelf_cells.len());
        for idx in shelf_cells {
            let kind = assigned[idx].ok_or_else(|| MapError::UnassignedShelf(self.coord_of(idx)))?;
            pairs.push((idx, kind));
        }
        Ok(self.relabel(pairs))
    }

    /// Keeps the `keep` caches that come first in (column, row) order and
    /// turns the rest into aisles. Cache ids are re-densified in row-major
    /// scan order.
    pub fn remove_caches(&self, keep: usize) -> Result<GridMap, MapError> {
        let available = self.cache_locs.len();
        if keep > available {
            return Err(MapError::TooManyCaches { keep, available });
        }
        let mut order = self.cache_locs.clone();
        order.sort_by_key(|c| (c.col, c.row));
        let mut cells = self.cells.clone();
        for removed in &order[keep..] {
            cells[self.index_of(*removed)] = CellKind::Aisle;
        }
        let mut next = 0u32;
        for cell in cells.iter_mut() {
            if let CellKind::Cache(_) = cell {
                *cell = CellKind::Cache(CacheId(next));
                next += 1;
            }
        }
        Self::from_cells(self.width, self.height, cells)
    }

    /// Serializes back to map text with the `warehouse` type line.
    pub fn to_map_text(&self) -> String {
        let mut out = format!("type warehouse\nheight {}\nwidth {}\nmap\n", self.height, self.width);
        for row in self.cells.chunks(self.width) {
            out.extend(row.iter().map(|c| c.to_char()));
            out.push('\n');
        }
        out
    }

    /// Kinds CSV reproducing this map's current shelf labelling.
    pub fn kinds_csv(&self) -> String {
        let mut out = String::from("row,col,kind\n");
        for idx in self.shelf_cells_row_major() {
            if let CellKind::Shelf(k) = self.cells[idx] {
                let at = self.coord_of(idx);
                out.push_str(&format!("{},{},{}\n", at.row, at.col, k.0));
            }
        }
        out
    }

    fn shelf_cells_row_major(&self) -> Vec<usize> {
        self.cells.iter().enumerate().filter(|(_, c)| matches!(c, CellKind::Shelf(_))).map(|(i, _)| i).collect()
    }

    fn relabel(&self, pairs: impl IntoIterator<Item = (usize, u32)>) -> GridMap {
        let mut out = self.clone();
        for (idx, kind) in pairs {
            out.cells[idx] = CellKind::Shelf(ItemKind(kind));
            out.shelf_of_kind[kind as usize] = idx;
        }
        out
    }

    /// Exact BFS hop distances from `source` over passable cells.
    pub fn distance_field(&self, source: Coord) -> Result<DistanceField, MapError> {
        if !self.in_bounds(source) {
            return Err(MapError::OutOfBounds(source));
        }
        if !self.is_passable(source) {
            return Err(MapError::Blocked(source));
        }
        let src = self.index_of(source);
        let mut dist = vec![UNREACHABLE; self.cells.len()];
        let mut queue = VecDeque::with_capacity(self.cells.len());
        dist[src] = 0;
        queue.push_back(src);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur] + 1;
            for n in self.neighbors_of_index(cur) {
                if dist[n] == UNREACHABLE {
                    dist[n] = d;
                    queue.push_back(n);
                }
            }
        }
        Ok(DistanceField { source, width: self.width, dist })
    }
}

fn parse_dim(field: &'static str, value: &str) -> Result<usize, MapError> {
    match value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(MapError::InvalidHeader { field, value: value.to_string() }),
    }
}

fn build_adjacency(width: usize, height: usize, cells: &[CellKind]) -> Vec<[u32; 4]> {
    let mut adj = vec![[NO_CELL; 4]; cells.len()];
    for (idx, slot) in adj.iter_mut().enumerate() {
        if !cells[idx].is_passable() {
            continue;
        }
        let (r, c) = (idx / width, idx % width);
        let candidates = [
            (r > 0).then(|| idx - width),
            (r + 1 < height).then(|| idx + width),
            (c > 0).then(|| idx - 1),
            (c + 1 < width).then(|| idx + 1),
        ];
        for (dir, n) in candidates.into_iter().enumerate() {
            if let Some(n) = n {
                if cells[n].is_passable() {
                    slot[dir] = n as u32;
                }
            }
        }
    }
    adj
}

/// Hop distances from a single source cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    source: Coord,
    width: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub fn source(&self) -> Coord {
        self.source
    }

    /// Distance to `at`, or [`UNREACHABLE`].
    pub fn get(&self, at: Coord) -> u32 {
        if at.col >= self.width {
            return UNREACHABLE;
        }
        self.dist.get(at.row * self.width + at.col).copied().unwrap_or(UNREACHABLE)
    }

    #[inline]
    pub fn at_index(&self, idx: usize) -> u32 {
        self.dist[idx]
    }
}

/// Lazily filled table of distance fields keyed by target cell.
#[derive(Debug, Clone, Default)]
pub struct DistanceTable {
    fields: Vec<Option<DistanceField>>,
}

impl DistanceTable {
    pub fn new(map: &GridMap) -> Self {
        Self { fields: vec![None; map.num_cells()] }
    }

    /// Table pre-filled for every target in `targets`.
    pub fn for_targets(map: &GridMap, targets: impl IntoIterator<Item = Coord>) -> Result<Self, MapError> {
        let mut table = Self::new(map);
        for t in targets {
            table.ensure(map, t)?;
        }
        Ok(table)
    }

    pub fn ensure(&mut self, map: &GridMap, target: Coord) -> Result<&DistanceField, MapError> {
        if !map.in_bounds(target) {
            return Err(MapError::OutOfBounds(target));
        }
        let idx = map.index_of(target);
        if self.fields[idx].is_none() {
            self.fields[idx] = Some(map.distance_field(target)?);
        }
        Ok(self.fields[idx].as_ref().expect("filled above"))
    }

    /// Field for `target`; panics if [`DistanceTable::ensure`] was never
    /// called for it.
    pub fn field(&self, map: &GridMap, target: Coord) -> &DistanceField {
        self.fields[map.index_of(target)].as_ref().unwrap_or_else(|| panic!("no distance field for {target}"))
    }

    pub fn get(&self, map: &GridMap, target: Coord) -> Option<&DistanceField> {
        self.fields.get(map.index_of(target)).and_then(Option::as_ref)
    }
}
