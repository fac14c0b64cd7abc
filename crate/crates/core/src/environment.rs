//! Grid maps, cell semantics, failure predicates, and the built-in environments.
//!
//! Coordinates are `(x, y)` = `(column, row)` with the origin at the top-left
//! corner and `y` increasing downward, matching the row-major text format.
//!
//! Map text format, one character per cell:
//!
//! | char | meaning                                   |
//! |------|-------------------------------------------|
//! | `.`  | free water                                |
//! | `#`  | obstacle                                  |
//! | `~`  | surface hazard (shipping lane)            |
//! | `*`  | waypoint on a free cell                   |
//! | `+`  | waypoint on a surface-hazard cell         |
//! | `S`  | start (free), first waypoint              |
//! | `G`  | goal (free), last waypoint                |
//! | `s`  | start on a surface-hazard cell            |
//! | `g`  | goal on a surface-hazard cell             |
//!
//! Optional header lines precede the grid:
//! `region <name> <x0> <y0> <x1> <y1>` declares an inclusive rectangle.
//! Waypoint order is recovered by walking 4-adjacency from start to goal.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid coordinate, `(column, row)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub const fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: Coord) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn dist_sq(self, other: Coord) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }

    pub fn is_adjacent(self, other: Coord) -> bool {
        self.manhattan(other) == 1
    }

    /// 4-neighbours in the fixed order Up, Down, Left, Right.
    pub fn neighbors(self) -> [Coord; 4] {
        [
            self.offset(0, -1),
            self.offset(0, 1),
            self.offset(-1, 0),
            self.offset(1, 0),
        ]
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Free,
    Obstacle,
    /// Safe to cross underwater, fatal to surface in.
    SurfaceHazard,
}

/// Terminal classification of an agent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Terminal {
    Active,
    ReachedGoal,
    FailedCollision,
    FailedOffMap,
    FailedSurfaced,
}

impl Terminal {
    pub fn is_active(self) -> bool {
        self == Terminal::Active
    }

    pub fn is_failure(self) -> bool {
        matches!(
            self,
            Terminal::FailedCollision | Terminal::FailedOffMap | Terminal::FailedSurfaced
        )
    }
}

/// Named rectangle used to bucket localization events.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub min: Coord,
    pub max: Coord,
}

impl Region {
    pub fn new(name: impl Into<String>, x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        Self {
            name: name.into(),
            min: Coord::new(x0, y0),
            max: Coord::new(x1, y1),
        }
    }

    pub fn contains(&self, c: Coord) -> bool {
        (self.min.x..=self.max.x).contains(&c.x) && (self.min.y..=self.max.y).contains(&c.y)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("map text contains no grid")]
    MissingGrid,
    #[error("row {row} has {found} cells, expected {expected}")]
    NonRectangular {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown cell character {ch:?} at {at}")]
    UnknownCell { ch: char, at: Coord },
    #[error("map has no start cell")]
    MissingStart,
    #[error("map has no goal cell")]
    MissingGoal,
    #[error("map has more than one start cell")]
    DuplicateStart,
    #[error("map has more than one goal cell")]
    DuplicateGoal,
    #[error("{0} lies outside the grid")]
    OutOfBounds(Coord),
    #[error("start or goal {0} lies on an obstacle")]
    EndpointOnObstacle(Coord),
    #[error("waypoint {0} lies on an obstacle")]
    WaypointOnObstacle(Coord),
    #[error("consecutive waypoints {from} and {to} are not 4-adjacent")]
    NonAdjacentWaypoints { from: Coord, to: Coord },
    #[error("waypoint chain breaks off at {0} before reaching the goal")]
    PathDeadEnd(Coord),
    #[error("waypoint chain branches at {0}")]
    AmbiguousPath(Coord),
    #[error("waypoint {0} is not part of the start-goal chain")]
    StrayWaypoint(Coord),
    #[error("non-consecutive waypoints {0} and {1} touch or coincide")]
    SelfTouchingPath(Coord, Coord),
    #[error("bad header line {line}: {reason}")]
    BadHeader { line: usize, reason: String },
    #[error("invalid region {0:?}")]
    InvalidRegion(String),
    #[error("unknown environment {0:?}")]
    UnknownEnvironment(String),
}

/// Immutable 2-D world: cells, start, goal, the pre-defined waypoint path, and
/// metric regions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    start: Coord,
    goal: Coord,
    path: Vec<Coord>,
    regions: Vec<Region>,
}

impl GridMap {
    /// Builds and validates a map. `cells` is row-major.
    pub fn new(
        width: usize,
        height: usize,
        cells: Vec<CellKind>,
        path: Vec<Coord>,
        regions: Vec<Region>,
    ) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::MissingGrid);
        }
        if cells.len() != width * height {
            return Err(MapError::NonRectangular {
                row: cells.len() / width,
                expected: width,
                found: cells.len() % width,
            });
        }
        let (start, goal) = match (path.first(), path.last()) {
            (Some(&s), Some(&g)) => (s, g),
            _ => return Err(MapError::MissingStart),
        };
        let map = Self {
            width,
            height,
            cells,
            start,
            goal,
            path,
            regions,
        };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<(), MapError> {
        for &end in &[self.start, self.goal] {
            match self.cell(end) {
                None => return Err(MapError::OutOfBounds(end)),
                Some(CellKind::Obstacle) => return Err(MapError::EndpointOnObstacle(end)),
                Some(_) => {}
            }
        }
        for &w in &self.path {
            match self.cell(w) {
                None => return Err(MapError::OutOfBounds(w)),
                Some(CellKind::Obstacle) => return Err(MapError::WaypointOnObstacle(w)),
                Some(_) => {}
            }
        }
        for pair in self.path.windows(2) {
            if !pair[0].is_adjacent(pair[1]) {
                return Err(MapError::NonAdjacentWaypoints {
                    from: pair[0],
                    to: pair[1],
                });
            }
        }
        // A waypoint may only touch its predecessor and successor, otherwise
        // the chain cannot be recovered from the text form.
        let mut index = vec![usize::MAX; self.width * self.height];
        for (i, &w) in self.path.iter().enumerate() {
            let slot = &mut index[self.idx(w)];
            if *slot != usize::MAX {
                return Err(MapError::SelfTouchingPath(self.path[*slot], w));
            }
            *slot = i;
        }
        for (i, &w) in self.path.iter().enumerate() {
            for n in w.neighbors() {
                if !self.in_bounds(n) {
                    continue;
                }
                let j = index[self.idx(n)];
                if j != usize::MAX && j.abs_diff(i) > 1 {
                    return Err(MapError::SelfTouchingPath(w, n));
                }
            }
        }
        let mut names = HashSet::new();
        for r in &self.regions {
            let well_formed = !r.name.is_empty()
                && !r.name.chars().any(char::is_whitespace)
                && r.min.x <= r.max.x
                && r.min.y <= r.max.y;
            if !well_formed || !names.insert(r.name.as_str()) {
                return Err(MapError::InvalidRegion(r.name.clone()));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Coord {
        self.start
    }

    pub fn goal(&self) -> Coord {
        self.goal
    }

    /// Waypoints from start to goal inclusive.
    pub fn path(&self) -> &[Coord] {
        &self.path
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// First declared region containing `c`.
    pub fn region_at(&self, c: Coord) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(c))
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    #[inline]
    fn idx(&self, c: Coord) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    #[inline]
    pub fn cell(&self, c: Coord) -> Option<CellKind> {
        self.in_bounds(c).then(|| self.cells[self.idx(c)])
    }

    pub fn is_traversable(&self, c: Coord) -> bool {
        matches!(self.cell(c), Some(CellKind::Free | CellKind::SurfaceHazard))
    }

    /// Classification of an agent that has just moved (underwater) onto `pos`.
    pub fn classify_move(&self, pos: Coord) -> Terminal {
        match self.cell(pos) {
            None => Terminal::FailedOffMap,
            Some(CellKind::Obstacle) => Terminal::FailedCollision,
            Some(_) if pos == self.goal => Terminal::ReachedGoal,
            Some(_) => Terminal::Active,
        }
    }

    /// Classification of an agent surfacing at `pos`.
    pub fn classify_localize(&self, pos: Coord) -> Terminal {
        match self.cell(pos) {
            Some(CellKind::SurfaceHazard) => Terminal::FailedSurfaced,
            _ => self.classify_move(pos),
        }
    }

    /// Serializes to the text format accepted by [`GridMap::from_str`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.regions {
            out.push_str(&format!(
                "region {} {} {} {} {}\n",
                r.name, r.min.x, r.min.y, r.max.x, r.max.y
            ));
        }
        let on_path: HashSet<Coord> = self.path.iter().copied().collect();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let c = Coord::new(x, y);
                let hazard = self.cells[self.idx(c)] == CellKind::SurfaceHazard;
                let ch = if c == self.start {
                    if hazard { 's' } else { 'S' }
                } else if c == self.goal {
                    if hazard { 'g' } else { 'G' }
                } else if on_path.contains(&c) {
                    if hazard { '+' } else { '*' }
                } else {
                    match self.cells[self.idx(c)] {
                        CellKind::Free => '.',
                        CellKind::Obstacle => '#',
                        CellKind::SurfaceHazard => '~',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// ASCII rendering for terminals: the text format without headers.
    pub fn render(&self) -> String {
        self.to_text()
            .lines()
            .filter(|l| !l.starts_with("region "))
            .map(|l| format!("{l}\n"))
            .collect()
    }

    /// Length of the longest run of consecutive waypoints on surface-hazard cells.
    pub fn longest_hazard_run(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for &w in &self.path {
            if self.cell(w) == Some(CellKind::SurfaceHazard) {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best
    }
}

impl FromStr for GridMap {
    type Err = MapError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_map(text)
    }
}

/// Parses the map text format.
pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    let mut regions = Vec::new();
    let mut lines = text.lines().map(str::trim_end).enumerate().peekable();
    while let Some(&(no, line)) = lines.peek() {
        if line.trim().is_empty() {
            lines.next();
            continue;
        }
        if !line.starts_with("region") {
            break;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "region" {
            return Err(MapError::BadHeader {
                line: no + 1,
                reason: "expected `region <name> <x0> <y0> <x1> <y1>`".into(),
            });
        }
        let mut nums = [0i32; 4];
        for (slot, f) in nums.iter_mut().zip(&fields[2..]) {
            *slot = f.parse().map_err(|_| MapError::BadHeader {
                line: no + 1,
                reason: format!("{f:?} is not an integer"),
            })?;
        }
        regions.push(Region::new(fields[1], nums[0], nums[1], nums[2], nums[3]));
        lines.next();
    }

    let mut rows: Vec<&str> = lines.map(|(_, l)| l).collect();
    while rows.last().is_some_and(|l| l.is_empty()) {
        rows.pop();
    }
    if rows.is_empty() {
        return Err(MapError::MissingGrid);
    }
    let width = rows[0].chars().count();
    let height = rows.len();
    let mut cells = Vec::with_capacity(width * height);
    let mut start = None;
    let mut goal = None;
    let mut marked = HashSet::new();
    for (y, row) in rows.iter().enumerate() {
        let found = row.chars().count();
        if found != width {
            return Err(MapError::NonRectangular {
                row: y,
                expected: width,
                found,
            });
        }
        for (x, ch) in row.chars().enumerate() {
            let at = Coord::new(x as i32, y as i32);
            let (kind, waypoint) = match ch {
                '.' => (CellKind::Free, false),
                '#' => (CellKind::Obstacle, false),
                '~' => (CellKind::SurfaceHazard, false),
                '*' => (CellKind::Free, true),
                '+' => (CellKind::SurfaceHazard, true),
                'S' | 's' | 'G' | 'g' => {
                    let slot = if ch.eq_ignore_ascii_case(&'s') {
                        &mut start
                    } else {
                        &mut goal
                    };
                    if slot.replace(at).is_some() {
                        return Err(if ch.eq_ignore_ascii_case(&'s') {
                            MapError::DuplicateStart
                        } else {
                            MapError::DuplicateGoal
                        });
                    }
                    let kind = if ch.is_ascii_lowercase() {
                        CellKind::SurfaceHazard
                    } else {
                        CellKind::Free
                    };
                    (kind, true)
                }
                _ => return Err(MapError::UnknownCell { ch, at }),
            };
            cells.push(kind);
            if waypoint {
                marked.insert(at);
            }
        }
    }
    let start = start.ok_or(MapError::MissingStart)?;
    let goal = goal.ok_or(MapError::MissingGoal)?;

    let mut path = vec![start];
    let mut visited = HashSet::from([start]);
    let mut cur = start;
    while cur != goal {
        let mut next = cur
            .neighbors()
            .into_iter()
            .filter(|n| marked.contains(n) && !visited.contains(n));
        let step = next.next().ok_or(MapError::PathDeadEnd(cur))?;
        if next.next().is_some() {
            return Err(MapError::AmbiguousPath(cur));
        }
        visited.insert(step);
        path.push(step);
        cur = step;
    }
    if let Some(&stray) = marked.iter().filter(|c| !visited.contains(c)).min() {
        return Err(MapError::StrayWaypoint(stray));
    }
    GridMap::new(width, height, cells, path, regions)
}

/// Names of the built-in environments.
pub const BUILTIN_ENVS: [&str; 3] = ["ENV-TRAINING", "ENV-TUNNEL", "ENV-STT"];

/// Returns one of the built-in maps by name.
pub fn builtin_env(name: &str) -> Result<GridMap, MapError> {
    match name {
        "ENV-TRAINING" => Ok(env_training()),
        "ENV-TUNNEL" => Ok(env_tunnel()),
        "ENV-STT" => Ok(env_stt()),
        other => Err(MapError::UnknownEnvironment(other.to_string())),
    }
}

/// Rectangle-painting helper for the built-in layouts.
struct Sketch {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
}

impl Sketch {
    fn new(width: usize, height: usize, fill: CellKind) -> Self {
        Self {
            width,
            height,
            cells: vec![fill; width * height],
        }
    }

    fn paint(&mut self, kind: CellKind, x0: i32, y0: i32, x1: i32, y1: i32) {
        for y in y0.max(0)..=y1.min(self.height as i32 - 1) {
            for x in x0.max(0)..=x1.min(self.width as i32 - 1) {
                self.cells[y as usize * self.width + x as usize] = kind;
            }
        }
    }

    /// Marks non-obstacle cells as surface hazards.
    fn lane(&mut self, x0: i32, y0: i32, x1: i32, y1: i32) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                let cell = &mut self.cells[y as usize * self.width + x as usize];
                if *cell != CellKind::Obstacle {
                    *cell = CellKind::SurfaceHazard;
                }
            }
        }
    }

    fn finish(self, path: Vec<Coord>, regions: Vec<Region>) -> GridMap {
        GridMap::new(self.width, self.height, self.cells, path, regions)
            .expect("built-in map is valid")
    }
}

/// Expands axis-aligned corner points into unit-step waypoints.
fn polyline(corners: &[(i32, i32)]) -> Vec<Coord> {
    let mut out = vec![Coord::new(corners[0].0, corners[0].1)];
    for pair in corners.windows(2) {
        let (mut c, to) = (Coord::new(pair[0].0, pair[0].1), Coord::new(pair[1].0, pair[1].1));
        let (dx, dy) = ((to.x - c.x).signum(), (to.y - c.y).signum());
        assert!(dx == 0 || dy == 0, "polyline legs must be axis-aligned");
        while c != to {
            c = c.offset(dx, dy);
            out.push(c);
        }
    }
    out
}

/// 30x30 world: two large obstacles bounding a channel that the path follows
/// south, two full-width shipping lanes crossing it, and a walled exit channel
/// to the goal.
fn env_training() -> GridMap {
    use CellKind::*;
    let mut s = Sketch::new(30, 30, Free);
    s.paint(Obstacle, 6, 5, 15, 12);
    s.paint(Obstacle, 19, 5, 26, 12);
    s.paint(Obstacle, 6, 16, 20, 23);
    s.paint(Obstacle, 24, 16, 28, 24);
    s.paint(Obstacle, 24, 28, 28, 28);
    s.lane(0, 8, 29, 12);
    s.lane(0, 16, 29, 21);
    let path = polyline(&[(2, 2), (17, 2), (17, 14), (22, 14), (22, 26), (27, 26)]);
    let regions = vec![
        Region::new("before-lane-1", 0, 0, 29, 7),
        Region::new("lane-1", 0, 8, 29, 12),
        Region::new("between-lanes", 0, 13, 29, 15),
        Region::new("lane-2", 0, 16, 29, 21),
        Region::new("after-lane-2", 0, 22, 29, 29),
    ];
    s.finish(path, regions)
}

/// Rock tunnel whose bends sit inside two shipping lanes separated by a
/// two-cell gap, forcing long stretches without a safe place to surface.
fn env_tunnel() -> GridMap {
    use CellKind::*;
    let corners = [(1, 2), (12, 2), (12, 10), (27, 10), (27, 3), (38, 3)];
    let path = polyline(&corners);
    let mut s = Sketch::new(40, 14, Obstacle);
    for w in &path {
        s.paint(Free, w.x - 1, w.y - 1, w.x + 1, w.y + 1);
    }
    s.lane(8, 0, 20, 13);
    s.lane(23, 0, 34, 13);
    let regions = vec![
        Region::new("before-lane-1", 0, 0, 7, 13),
        Region::new("lane-1", 8, 0, 20, 13),
        Region::new("between-lanes", 21, 0, 22, 13),
        Region::new("lane-2", 23, 0, 34, 13),
        Region::new("after-lane-2", 35, 0, 39, 13),
    ];
    s.finish(path, regions)
}

/// Coastline world: a northern landmass with a southward airport peninsula,
/// reefs south of the path, and a narrowing bay at the destination.
fn env_stt() -> GridMap {
    use CellKind::*;
    let mut s = Sketch::new(40, 30, Free);
    s.paint(Obstacle, 0, 0, 39, 6);
    s.paint(Obstacle, 14, 7, 27, 15);
    s.paint(Obstacle, 33, 7, 39, 16);
    s.paint(Obstacle, 15, 20, 17, 21);
    s.paint(Obstacle, 22, 20, 24, 21);
    s.paint(Obstacle, 32, 20, 34, 22);
    let path = polyline(&[(2, 9), (11, 9), (11, 18), (30, 18), (30, 8)]);
    let regions = vec![
        Region::new("marine-center", 0, 7, 12, 29),
        Region::new("airport-south", 13, 16, 27, 29),
        Region::new("lindbergh-bay", 28, 7, 39, 29),
    ];
    s.finish(path, regions)
}
