//! Tiled world model: walkable grid, named scene areas and A* navigation.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Map shipped with the engine: 24×24, six scenes over the four categories.
pub const DEFAULT_MAP: &str = include_str!("../assets/default.map");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("map parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scenes `{first}` and `{second}` both claim tile {tile}")]
    OverlappingScenes {
        tile: Position,
        first: SceneId,
        second: SceneId,
    },
    #[error("scene `{scene}` lists out-of-bounds tile {tile}")]
    SceneTileOutOfBounds { scene: SceneId, tile: Position },
    #[error("scene `{scene}` lists blocked tile {tile}")]
    SceneTileBlocked { scene: SceneId, tile: Position },
    #[error("scene `{scene}` has no tiles")]
    EmptyScene { scene: SceneId },
    #[error("scene `{scene}` is declared twice")]
    DuplicateScene { scene: SceneId },
    #[error("scene `{scene}` is unreachable from scene `{from}`")]
    UnreachableScene { scene: SceneId, from: SceneId },
    #[error("map has no walkable tile")]
    NoWalkableTile,
    #[error("position {0} is out of bounds")]
    OutOfBounds(Position),
    #[error("position {0} is not walkable")]
    NotWalkable(Position),
    #[error("no route from {start} to {goal}")]
    NoRoute { start: Position, goal: Position },
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
}

/// A tile coordinate. Ordering is row-major: `(y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub x: u32,
    pub y: u32,
}

impl Position {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Position) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl Ord for Position {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Position {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneId(pub String);

impl SceneId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SceneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SceneId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneCategory {
    Dining,
    Leisure,
    Culture,
    Social,
}

impl SceneCategory {
    pub const ALL: [SceneCategory; 4] = [Self::Dining, Self::Leisure, Self::Culture, Self::Social];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dining => "dining",
            Self::Leisure => "leisure",
            Self::Culture => "culture",
            Self::Social => "social",
        }
    }
}

impl FromStr for SceneCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown scene category `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneArea {
    pub id: SceneId,
    pub category: SceneCategory,
    pub tiles: BTreeSet<Position>,
    pub label: String,
}

impl SceneArea {
    /// Representative tile: smallest `(y, x)`.
    pub fn anchor(&self) -> Position {
        *self.tiles.first().expect("validated scenes are non-empty")
    }
}

/// Shortest route, excluding the start tile and including the goal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path {
    pub steps: Vec<Position>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Validated, immutable world map.
///
/// Serializes as its map-format text so snapshots stay readable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct WorldMap {
    width: u32,
    height: u32,
    walkable: Vec<bool>,
    scenes: Vec<SceneArea>,
    scene_of_tile: Vec<Option<usize>>,
}

impl WorldMap {
    pub fn default_map() -> Self {
        load_map(DEFAULT_MAP).expect("bundled map is valid")
    }

    /// Builds and validates a map from raw parts.
    pub fn new(
        width: u32,
        height: u32,
        walkable: Vec<bool>,
        scenes: Vec<SceneArea>,
    ) -> Result<Self, WorldError> {
        assert_eq!(walkable.len(), (width * height) as usize, "grid size mismatch");
        if !walkable.iter().any(|&w| w) {
            return Err(WorldError::NoWalkableTile);
        }
        let mut scene_of_tile = vec![None; walkable.len()];
        let mut seen = HashSet::new();
        for (idx, scene) in scenes.iter().enumerate() {
            if !seen.insert(scene.id.clone()) {
                return Err(WorldError::DuplicateScene {
                    scene: scene.id.clone(),
                });
            }
            if scene.tiles.is_empty() {
                return Err(WorldError::EmptyScene {
                    scene: scene.id.clone(),
                });
            }
            for &tile in &scene.tiles {
                if tile.x >= width || tile.y >= height {
                    return Err(WorldError::SceneTileOutOfBounds {
                        scene: scene.id.clone(),
                        tile,
                    });
                }
                let cell = (tile.y * width + tile.x) as usize;
                if !walkable[cell] {
                    return Err(WorldError::SceneTileBlocked {
                        scene: scene.id.clone(),
                        tile,
                    });
                }
                if let Some(other) = scene_of_tile[cell] {
                    let first: &SceneArea = &scenes[other];
                    return Err(WorldError::OverlappingScenes {
                        tile,
                        first: first.id.clone(),
                        second: scene.id.clone(),
                    });
                }
                scene_of_tile[cell] = Some(idx);
            }
        }
        let map = Self {
            width,
            height,
            walkable,
            scenes,
            scene_of_tile,
        };
        map.check_connected()?;
        Ok(map)
    }

    fn check_connected(&self) -> Result<(), WorldError> {
        let Some(first) = self.scenes.first() else {
            return Ok(());
        };
        let reached = self.reachable_from(first.anchor());
        for scene in &self.scenes[1..] {
            if scene.tiles.iter().any(|t| !reached[self.cell(*t)]) {
                return Err(WorldError::UnreachableScene {
                    scene: scene.id.clone(),
                    from: first.id.clone(),
                });
            }
        }
        if first.tiles.iter().any(|t| !reached[self.cell(*t)]) {
            return Err(WorldError::UnreachableScene {
                scene: first.id.clone(),
                from: first.id.clone(),
            });
        }
        Ok(())
    }

    fn reachable_from(&self, start: Position) -> Vec<bool> {
        let mut reached = vec![false; self.walkable.len()];
        let mut queue = VecDeque::from([start]);
        reached[self.cell(start)] = true;
        while let Some(pos) = queue.pop_front() {
            for next in self.neighbors(pos) {
                let c = self.cell(next);
                if !reached[c] {
                    reached[c] = true;
                    queue.push_back(next);
                }
            }
        }
        reached
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scenes(&self) -> &[SceneArea] {
        &self.scenes
    }

    pub fn scene(&self, id: &str) -> Option<&SceneArea> {
        self.scenes.iter().find(|s| s.id.as_str() == id)
    }

    pub fn walkable_count(&self) -> usize {
        self.walkable.iter().filter(|&&w| w).count()
    }

    pub fn in_bounds(&self, pos: Position) -> bool {
        pos.x < self.width && pos.y < self.height
    }

    pub fn is_walkable(&self, pos: Position) -> bool {
        self.in_bounds(pos) && self.walkable[self.cell(pos)]
    }

    fn cell(&self, pos: Position) -> usize {
        (pos.y * self.width + pos.x) as usize
    }

    /// Walkable 4-neighbors in expansion order: up, down, left, right.
    pub fn neighbors(&self, pos: Position) -> impl Iterator<Item = Position> + '_ {
        let up = pos.y.checked_sub(1).map(|y| Position::new(pos.x, y));
        let down = Some(Position::new(pos.x, pos.y + 1));
        let left = pos.x.checked_sub(1).map(|x| Position::new(x, pos.y));
        let right = Some(Position::new(pos.x + 1, pos.y));
        [up, down, left, right]
            .into_iter()
            .flatten()
            .filter(|p| self.is_walkable(*p))
    }

    /// The scene containing `pos`, or `None` for a corridor tile.
    pub fn scene_at(&self, pos: Position) -> Result<Option<&SceneId>, WorldError> {
        if !self.in_bounds(pos) {
            return Err(WorldError::OutOfBounds(pos));
        }
        Ok(self.scene_of_tile[self.cell(pos)].map(|i| &self.scenes[i].id))
    }

    pub fn scene_anchor(&self, scene: &str) -> Result<Position, WorldError> {
        self.scene(scene)
            .map(SceneArea::anchor)
            .ok_or_else(|| WorldError::UnknownScene(scene.to_owned()))
    }

    /// Shortest 4-neighbor route via A* with a Manhattan heuristic.
    ///
    /// Among equal-f frontier nodes the smaller `(y, x)` is popped first, so
    /// the result is fully determined by the inputs.
    pub fn find_path(&self, start: Position, goal: Position) -> Result<Path, WorldError> {
        for p in [start, goal] {
            if !self.in_bounds(p) {
                return Err(WorldError::OutOfBounds(p));
            }
            if !self.is_walkable(p) {
                return Err(WorldError::NotWalkable(p));
            }
        }
        if start == goal {
            return Ok(Path::default());
        }

        let n = self.walkable.len();
        let mut best_g = vec![u32::MAX; n];
        let mut parent: Vec<Option<Position>> = vec![None; n];
        let mut closed = vec![false; n];
        let mut open = BinaryHeap::new();

        best_g[self.cell(start)] = 0;
        open.push(Reverse((start.manhattan(goal), start)));

        while let Some(Reverse((_, pos))) = open.pop() {
            let c = self.cell(pos);
            if closed[c] {
                continue;
            }
            closed[c] = true;
            if pos == goal {
                let mut steps = vec![goal];
                let mut cur = goal;
                while let Some(prev) = parent[self.cell(cur)] {
                    if prev == start {
                        break;
                    }
                    steps.push(prev);
                    cur = prev;
                }
                steps.reverse();
                return Ok(Path { steps });
            }
            let g = best_g[c];
            for next in self.neighbors(pos) {
                let nc = self.cell(next);
                if closed[nc] || g + 1 >= best_g[nc] {
                    continue;
                }
                best_g[nc] = g + 1;
                parent[nc] = Some(pos);
                open.push(Reverse((g + 1 + next.manhattan(goal), next)));
            }
        }
        Err(WorldError::NoRoute { start, goal })
    }

    /// Renders the map in its text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.walkable[self.cell(Position::new(x, y))] {
                    '.'
                } else {
                    '#'
                });
            }
            out.push('\n');
        }
        for scene in &self.scenes {
            out.push_str("scene ");
            out.push_str(scene.id.as_str());
            out.push(' ');
            out.push_str(scene.category.as_str());
            for t in &scene.tiles {
                out.push_str(&format!(" {},{}", t.x, t.y));
            }
            out.push('\n');
        }
        out
    }
}

impl From<WorldMap> for String {
    fn from(map: WorldMap) -> Self {
        map.to_text()
    }
}

impl TryFrom<String> for WorldMap {
    type Error = WorldError;

    fn try_from(text: String) -> Result<Self, Self::Error> {
        load_map(&text)
    }
}

/// Display label derived from a scene id: `"cafe"` → `"Cafe"`.
fn label_for(id: &str) -> String {
    let mut chars = id.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect::<String>().replace('_', " "),
        None => String::new(),
    }
}

/// Parses and validates a map document.
///
/// Format: a `W H` header, `H` rows of `W` characters (`.` walkable, `#`
/// blocked), then `scene <id> <category> <x,y>...` lines.
pub fn load_map(text: &str) -> Result<WorldMap, WorldError> {
    let parse_err = |line: usize, message: String| WorldError::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (hline, header) = lines
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse_err(1, "empty document".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let [w, h] = dims.as_slice() else {
        return Err(parse_err(hline, format!("expected `W H`, found `{header}`")));
    };
    let width: u32 = w
        .parse()
        .map_err(|_| parse_err(hline, format!("bad width `{w}`")))?;
    let height: u32 = h
        .parse()
        .map_err(|_| parse_err(hline, format!("bad height `{h}`")))?;
    if width == 0 || height == 0 {
        return Err(parse_err(hline, "map dimensions must be positive".into()));
    }

    let mut walkable = Vec::with_capacity((width * height) as usize);
    for row in 0..height {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(hline + row as usize + 1, format!("missing grid row {row}")))?;
        if line.chars().count() != width as usize {
            return Err(parse_err(
                ln,
                format!("row {row} has {} cells, expected {width}", line.chars().count()),
            ));
        }
        for ch in line.chars() {
            match ch {
                '.' => walkable.push(true),
                '#' => walkable.push(false),
                other => return Err(parse_err(ln, format!("unexpected cell `{other}`"))),
            }
        }
    }

    let mut scenes = Vec::new();
    for (ln, line) in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            None => continue,
            Some("scene") => {}
            Some(other) => return Err(parse_err(ln, format!("unexpected directive `{other}`"))),
        }
        let id = parts
            .next()
            .ok_or_else(|| parse_err(ln, "scene line missing id".into()))?;
        let category: SceneCategory = parts
            .next()
            .ok_or_else(|| parse_err(ln, format!("scene `{id}` missing category")))?
            .parse()
            .map_err(|e| parse_err(ln, e))?;
        let mut tiles = BTreeSet::new();
        for tok in parts {
            let (x, y) = tok
                .split_once(',')
                .and_then(|(x, y)| Some((x.parse().ok()?, y.parse().ok()?)))
                .ok_or_else(|| parse_err(ln, format!("bad tile `{tok}` in scene `{id}`")))?;
            tiles.insert(Position::new(x, y));
        }
        scenes.push(SceneArea {
            id: SceneId::new(id),
            category,
            tiles,
            label: label_for(id),
        });
    }

    WorldMap::new(width, height, walkable, scenes)
}
