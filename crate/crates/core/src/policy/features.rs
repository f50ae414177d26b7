//! Joint encoding of (state, candidate action, memory) as a short real vector.
//!
//! Every entry lies in `[-1, 1]`. The layout is fixed per environment kind:
//!
//! | kind        | index | feature                                                        | source     |
//! |-------------|-------|----------------------------------------------------------------|------------|
//! | MineSweeper | 0     | row coordinate, scaled to `[-1, 1]`                            | board      |
//! |             | 1     | column coordinate, scaled to `[-1, 1]`                         | board      |
//! |             | 2     | fraction of neighbors already revealed                         | board      |
//! |             | 3     | max over numbered neighbors of `count / unrevealed neighbors`  | board      |
//! |             | 4     | cell exploded in an earlier episode                            | reflection |
//! |             | 5     | cell was opened safely in an earlier episode                   | reflection |
//! |             | 6     | cell was clicked in an earlier episode                         | trajectory |
//! |             | 7     | cell was the opening click of an earlier episode               | trajectory |
//! | Sokoban     | 0     | move walks into a wall                                         | board      |
//! |             | 1     | move pushes a box                                              | board      |
//! |             | 2     | the push is blocked                                            | board      |
//! |             | 3     | the push lands a box on a target                               | board      |
//! |             | 4     | the push moves a box off a target                              | board      |
//! |             | 5     | the push leaves a box in a dead corner                         | board      |
//! |             | 6     | change in summed box-to-nearest-target distance                | board      |
//! |             | 7     | change in player distance to the nearest loose box, scaled     | board      |
//! |             | 8     | the push leaves a loose box against a wall                     | board      |
//! |             | 9     | mean frequency of this direction in earlier episodes           | trajectory |
//! |             | 10    | the push lands a box where an earlier attempt got one stuck    | reflection |
//! |             | 11    | the push recreates the final layout of an earlier failure      | reflection |
//! | Coin        | 0     | arm index scaled to `[-1, 1]`                                  | board      |

use std::collections::BTreeSet;

use crate::env::{Action, Cell, Direction, Env, EnvKind, MinesweeperState, SokobanState};
use crate::memory::{MemoryDigest, MemoryState};

pub const MINESWEEPER_FEATURES: usize = 8;
pub const SOKOBAN_FEATURES: usize = 12;
pub const COIN_FEATURES: usize = 1;

pub mod minesweeper {
    pub const ROW: usize = 0;
    pub const COL: usize = 1;
    pub const REVEALED_NEIGHBORS: usize = 2;
    pub const LOCAL_DENSITY: usize = 3;
    pub const KNOWN_MINE: usize = 4;
    pub const KNOWN_SAFE: usize = 5;
    pub const TRIED: usize = 6;
    pub const FIRST_CLICK: usize = 7;
}

pub mod sokoban {
    pub const WALL_BUMP: usize = 0;
    pub const PUSH: usize = 1;
    pub const PUSH_BLOCKED: usize = 2;
    pub const ONTO_TARGET: usize = 3;
    pub const OFF_TARGET: usize = 4;
    pub const DEAD_CORNER: usize = 5;
    pub const BOX_DISTANCE: usize = 6;
    pub const PLAYER_APPROACH: usize = 7;
    pub const WALL_HUG: usize = 8;
    pub const PRIOR_FREQUENCY: usize = 9;
    pub const STUCK_REPEAT: usize = 10;
    pub const FAILED_LAYOUT: usize = 11;
}

pub fn feature_dim(kind: EnvKind) -> usize {
    match kind {
        EnvKind::MineSweeper => MINESWEEPER_FEATURES,
        EnvKind::Sokoban => SOKOBAN_FEATURES,
        EnvKind::Coin => COIN_FEATURES,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Encodes one candidate action. Deterministic.
pub fn encode_features(env: &Env, action: &Action, memory: &MemoryState) -> FeatureVector {
    let digest = MemoryDigest::new(memory);
    let mut out = vec![0.0; feature_dim(env.kind())];
    encode_into(env, action, &digest, &mut out);
    FeatureVector(out)
}

/// Writes the features of `action` into `out`, which must be zeroed and of
/// length [`feature_dim`].
pub(crate) fn encode_into(env: &Env, action: &Action, digest: &MemoryDigest, out: &mut [f64]) {
    match (env, action) {
        (Env::MineSweeper(s), Action::Reveal(c)) => encode_minesweeper(s, *c, digest, out),
        (Env::Sokoban(s), Action::Move(d)) => encode_sokoban(s, *d, digest, out),
        (Env::Coin(s), Action::Pick(i)) => out[0] = scaled(*i, s.arms()),
        _ => {}
    }
}

fn scaled(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn encode_minesweeper(s: &MinesweeperState, cell: Cell, digest: &MemoryDigest, out: &mut [f64]) {
    use minesweeper::*;
    let n = s.size();
    out[ROW] = scaled(cell.row, n);
    out[COL] = scaled(cell.col, n);

    let mut total = 0usize;
    let mut revealed = 0usize;
    let mut density: f64 = 0.0;
    for nb in cell.neighbors8(n) {
        total += 1;
        if !s.is_revealed(nb) {
            continue;
        }
        revealed += 1;
        let count = s.adjacent_mines(nb);
        if count > 0 {
            let hidden = nb.neighbors8(n).filter(|c| !s.is_revealed(*c)).count().max(1);
            density = density.max(count as f64 / hidden as f64);
        }
    }
    out[REVEALED_NEIGHBORS] = if total == 0 { 0.0 } else { revealed as f64 / total as f64 };
    out[LOCAL_DENSITY] = density.min(1.0);
    out[KNOWN_MINE] = indicator(digest.known_mines.contains(&cell));
    out[KNOWN_SAFE] = indicator(digest.known_safe.contains(&cell));
    out[TRIED] = indicator(digest.tried.contains(&cell));
    out[FIRST_CLICK] = indicator(digest.first_clicks.contains(&cell));
}

fn nearest_target_distance(s: &SokobanState, b: Cell) -> usize {
    s.targets().iter().map(|t| t.manhattan(&b)).min().unwrap_or(0)
}

fn nearest_loose_box(s: &SokobanState, boxes: &BTreeSet<Cell>, from: Cell) -> usize {
    boxes.iter().filter(|b| !s.targets().contains(b)).map(|b| b.manhattan(&from)).min().unwrap_or(0)
}

fn encode_sokoban(s: &SokobanState, dir: Direction, digest: &MemoryDigest, out: &mut [f64]) {
    use sokoban::*;
    let n = s.size();
    let player = s.player();
    out[PRIOR_FREQUENCY] = digest.move_frequency[dir.index()];

    let Some(next) = player.offset(dir, n) else {
        out[WALL_BUMP] = 1.0;
        return;
    };
    if s.is_wall(next) {
        out[WALL_BUMP] = 1.0;
        return;
    }
    let mut new_player = next;
    let mut new_boxes = s.boxes().clone();
    if s.boxes().contains(&next) {
        out[PUSH] = 1.0;
        let dest = next.offset(dir, n).filter(|&d| !s.is_wall(d) && !s.boxes().contains(&d));
        match dest {
            None => {
                out[PUSH_BLOCKED] = 1.0;
                new_player = player;
            }
            Some(dest) => {
                let was_on = s.targets().contains(&next);
                let lands_on = s.targets().contains(&dest);
                out[ONTO_TARGET] = indicator(lands_on && !was_on);
                out[OFF_TARGET] = indicator(was_on && !lands_on);
                out[DEAD_CORNER] = indicator(s.is_dead_corner(dest));
                let against_wall = Direction::ALL.into_iter().any(|d| dest.offset(d, n).is_none_or(|c| s.is_wall(c)));
                out[WALL_HUG] = indicator(!lands_on && against_wall && !s.is_dead_corner(dest));
                let delta = nearest_target_distance(s, dest) as f64 - nearest_target_distance(s, next) as f64;
                out[BOX_DISTANCE] = delta.clamp(-1.0, 1.0);
                out[STUCK_REPEAT] = indicator(!lands_on && digest.stuck_boxes.contains(&dest));
                new_boxes.remove(&next);
                new_boxes.insert(dest);
                out[FAILED_LAYOUT] = indicator(digest.failed_layouts.contains(&new_boxes));
            }
        }
    }
    let before = nearest_loose_box(s, s.boxes(), player) as f64;
    let after = nearest_loose_box(s, &new_boxes, new_player) as f64;
    out[PLAYER_APPROACH] = ((after - before) / 2.0).clamp(-1.0, 1.0);
}
