//! Inter-episode memory.
//!
//! Memory is what conditions the policy on earlier attempts within a trial.
//! It holds per-episode trajectory summaries and per-episode reflections; the
//! [`MemoryMode`] decides which of the two are retained.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Cell, Direction, Env};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// Raw history of earlier attempts, no reflections.
    TrajectoryOnly,
    /// Reflections only; summaries keep just the outcome.
    ReflectionOnly,
    /// History and reflections.
    #[default]
    Both,
    /// Nothing is carried between episodes.
    Disabled,
}

impl MemoryMode {
    pub fn keeps_trajectories(self) -> bool {
        matches!(self, MemoryMode::TrajectoryOnly | MemoryMode::Both)
    }

    pub fn keeps_reflections(self) -> bool {
        matches!(self, MemoryMode::ReflectionOnly | MemoryMode::Both)
    }
}

/// What is remembered about one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub success: bool,
    /// Actions in order. Empty when the mode drops raw trajectories.
    pub actions: Vec<Action>,
}

/// Deterministic failure analysis produced by the parametric backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuredReflection {
    pub episode: usize,
    /// MineSweeper: the cell that exploded.
    pub known_mines: Vec<Cell>,
    /// MineSweeper: cells that were opened without exploding.
    pub known_safe: Vec<Cell>,
    /// Sokoban: box layout at the end of the failed attempt.
    pub final_boxes: Vec<Cell>,
    /// Sokoban: boxes left in dead corners.
    pub stuck_boxes: Vec<Cell>,
}

impl StructuredReflection {
    /// Summarizes a failed episode from its final state.
    pub fn from_final_state(episode: usize, final_state: &Env) -> Self {
        let mut r = StructuredReflection { episode, ..Default::default() };
        match final_state {
            Env::MineSweeper(s) => {
                r.known_mines.extend(s.exploded());
                r.known_safe = s.revealed();
            }
            Env::Sokoban(s) => {
                r.final_boxes = s.boxes().iter().copied().collect();
                r.stuck_boxes = s.boxes().iter().copied().filter(|&b| s.is_dead_corner(b)).collect();
            }
            Env::Coin(_) => {}
        }
        r
    }

    pub fn to_text(&self) -> String {
        let cells = |v: &[Cell]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ");
        let mut parts = Vec::new();
        if !self.known_mines.is_empty() {
            parts.push(format!("Mine found at {}.", cells(&self.known_mines)));
        }
        if !self.known_safe.is_empty() {
            parts.push(format!("Safe cells: {}.", cells(&self.known_safe)));
        }
        if !self.stuck_boxes.is_empty() {
            parts.push(format!("Boxes got stuck at {}.", cells(&self.stuck_boxes)));
        }
        if !self.final_boxes.is_empty() {
            parts.push(format!("Final box positions: {}.", cells(&self.final_boxes)));
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflection {
    Structured(StructuredReflection),
    Text(String),
}

impl Reflection {
    pub fn is_empty(&self) -> bool {
        match self {
            Reflection::Structured(s) => {
                s.known_mines.is_empty()
                    && s.known_safe.is_empty()
                    && s.final_boxes.is_empty()
                    && s.stuck_boxes.is_empty()
            }
            Reflection::Text(t) => t.trim().is_empty(),
        }
    }

    pub fn text(&self) -> String {
        match self {
            Reflection::Structured(s) => s.to_text(),
            Reflection::Text(t) => t.clone(),
        }
    }
}

/// The context carried into episode `n`: summaries and reflections of episodes `0..n`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub mode: MemoryMode,
    pub episode_summaries: Vec<EpisodeSummary>,
    pub reflections: Vec<Reflection>,
}

impl MemoryState {
    pub fn new(mode: MemoryMode) -> Self {
        MemoryState { mode, episode_summaries: Vec::new(), reflections: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.episode_summaries.is_empty() && self.reflections.is_empty()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        match self.mode {
            MemoryMode::TrajectoryOnly if !self.reflections.is_empty() => {
                Err("trajectory-only memory holds reflections".into())
            }
            // Raw actions stand in for a reflection only when that reflection came back empty.
            MemoryMode::ReflectionOnly
                if self
                    .episode_summaries
                    .iter()
                    .enumerate()
                    .any(|(i, s)| !s.actions.is_empty() && self.reflections.get(i).is_some_and(|r| !r.is_empty())) =>
            {
                Err("reflection-only memory holds raw actions".into())
            }
            MemoryMode::Disabled if !self.is_empty() => Err("disabled memory is not empty".into()),
            _ => Ok(()),
        }
    }
}

/// Memory pre-aggregated into the lookups the feature encoder needs.
///
/// Indicators from a channel the mode excludes stay empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryDigest {
    pub known_mines: BTreeSet<Cell>,
    pub known_safe: BTreeSet<Cell>,
    pub tried: BTreeSet<Cell>,
    pub first_clicks: BTreeSet<Cell>,
    pub stuck_boxes: BTreeSet<Cell>,
    pub failed_layouts: Vec<BTreeSet<Cell>>,
    /// Mean per-episode frequency of each move direction.
    pub move_frequency: [f64; 4],
}

impl MemoryDigest {
    pub fn new(memory: &MemoryState) -> Self {
        let mut d = MemoryDigest::default();
        if memory.mode.keeps_trajectories() {
            let mut episodes_with_moves = 0usize;
            for summary in &memory.episode_summaries {
                if let Some(Action::Reveal(c)) = summary.actions.first() {
                    d.first_clicks.insert(*c);
                }
                let mut counts = [0usize; 4];
                let mut moves = 0usize;
                for a in &summary.actions {
                    match a {
                        Action::Reveal(c) => {
                            d.tried.insert(*c);
                        }
                        Action::Move(dir) => {
                            counts[dir.index()] += 1;
                            moves += 1;
                        }
                        Action::Pick(_) => {}
                    }
                }
                if moves > 0 {
                    episodes_with_moves += 1;
                    for dir in Direction::ALL {
                        d.move_frequency[dir.index()] += counts[dir.index()] as f64 / moves as f64;
                    }
                }
            }
            if episodes_with_moves > 0 {
                for f in &mut d.move_frequency {
                    *f /= episodes_with_moves as f64;
                }
            }
        }
        if memory.mode.keeps_reflections() {
            for r in &memory.reflections {
                if let Reflection::Structured(s) = r {
                    d.known_mines.extend(s.known_mines.iter().copied());
                    d.known_safe.extend(s.known_safe.iter().copied());
                    d.stuck_boxes.extend(s.stuck_boxes.iter().copied());
                    if !s.final_boxes.is_empty() {
                        d.failed_layouts.push(s.final_boxes.iter().copied().collect());
                    }
                }
            }
        }
        d
    }
}
