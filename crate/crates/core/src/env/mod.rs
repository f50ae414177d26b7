//! Grid environments behind one contract.
//!
//! Two puzzle environments are provided, Sokoban (fully observable planning)
//! and MineSweeper (partially observable deduction), plus a one-step coin
//! environment with a known success probability used to calibrate
//! evaluation statistics. All of them:
//!
//! * are generated deterministically from a [`TaskInstance`],
//! * emit a sparse reward of [`SUCCESS_REWARD`] on success and `0` otherwise,
//! * render to the exact text boards consumed by the prompt templates.

pub mod coin;
pub mod minesweeper;
pub mod sokoban;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use coin::CoinState;
pub use minesweeper::MinesweeperState;
pub use sokoban::{SokobanOptions, SokobanState};

/// Reward for a successful episode. Every other step yields zero.
pub const SUCCESS_REWARD: f64 = 10.0;

/// Default Sokoban horizon.
pub const SOKOBAN_MAX_STEPS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("difficulty {difficulty} does not fit a {board_size}x{board_size} {kind} board (capacity {capacity})")]
    CapacityExceeded { kind: EnvKind, board_size: usize, difficulty: usize, capacity: usize },
    #[error("action {action} is not admissible in the current state")]
    InadmissibleAction { action: String },
    #[error("the episode has already terminated")]
    Terminal,
    #[error("failed to generate an instance after {attempts} attempts")]
    Generation { attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Sokoban,
    #[serde(rename = "minesweeper")]
    MineSweeper,
    /// Synthetic one-step environment: `board_size` arms, `difficulty` of
    /// which win. A uniform policy succeeds with probability
    /// `difficulty / board_size`.
    Coin,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Sokoban => "sokoban",
            EnvKind::MineSweeper => "minesweeper",
            EnvKind::Coin => "coin",
        })
    }
}

/// A seeded environment configuration: one task and its initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskInstance {
    pub env_kind: EnvKind,
    /// Cells per side (arm count for the coin environment).
    pub board_size: usize,
    /// Boxes for Sokoban, mines for MineSweeper, winning arms for coin.
    pub difficulty: usize,
    pub seed: u64,
    /// Episode horizon.
    pub max_steps: usize,
}

impl TaskInstance {
    /// A task with the default horizon for its environment kind.
    pub fn new(env_kind: EnvKind, board_size: usize, difficulty: usize, seed: u64) -> Self {
        TaskInstance { env_kind, board_size, difficulty, seed, max_steps: default_max_steps(env_kind, board_size) }
    }

    pub fn sokoban(board_size: usize, boxes: usize, seed: u64) -> Self {
        Self::new(EnvKind::Sokoban, board_size, boxes, seed)
    }

    pub fn minesweeper(board_size: usize, mines: usize, seed: u64) -> Self {
        Self::new(EnvKind::MineSweeper, board_size, mines, seed)
    }

    pub fn coin(arms: usize, winners: usize, seed: u64) -> Self {
        Self::new(EnvKind::Coin, arms, winners, seed)
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Number of placements the board can hold.
    pub fn capacity(&self) -> usize {
        match self.env_kind {
            // Border ring is wall; one interior cell is reserved for the player.
            EnvKind::Sokoban => self.board_size.saturating_sub(2).pow(2).saturating_sub(1),
            // The first revealed cell can never hold a mine.
            EnvKind::MineSweeper => (self.board_size * self.board_size).saturating_sub(1),
            EnvKind::Coin => self.board_size.saturating_sub(1),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.board_size == 0 {
            return Err(EnvError::InvalidTask("board_size must be positive".into()));
        }
        if self.difficulty == 0 {
            return Err(EnvError::InvalidTask("difficulty must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidTask("max_steps must be positive".into()));
        }
        if self.env_kind == EnvKind::Sokoban && self.board_size < 3 {
            return Err(EnvError::InvalidTask("sokoban boards need at least 3 cells per side".into()));
        }
        if self.difficulty > self.capacity() {
            return Err(EnvError::CapacityExceeded {
                kind: self.env_kind,
                board_size: self.board_size,
                difficulty: self.difficulty,
                capacity: self.capacity(),
            });
        }
        Ok(())
    }
}

/// Horizon used when a task does not specify one.
pub fn default_max_steps(kind: EnvKind, board_size: usize) -> usize {
    match kind {
        EnvKind::Sokoban => SOKOBAN_MAX_STEPS,
        EnvKind::MineSweeper => board_size * board_size,
        EnvKind::Coin => 1,
    }
}

/// A board coordinate, zero-indexed internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Builds a cell from the 1-indexed coordinates shown to agents.
    pub fn from_display(row: usize, col: usize) -> Option<Self> {
        Some(Cell::new(row.checked_sub(1)?, col.checked_sub(1)?))
    }

    pub fn index(&self, size: usize) -> usize {
        self.row * size + self.col
    }

    pub fn from_index(index: usize, size: usize) -> Self {
        Cell::new(index / size, index % size)
    }

    /// Neighbor one step in `dir`, if it stays on a `size`-wide board.
    pub fn offset(&self, dir: Direction, size: usize) -> Option<Cell> {
        let (dr, dc) = dir.delta();
        let row = self.row as isize + dr;
        let col = self.col as isize + dc;
        if row < 0 || col < 0 || row >= size as isize || col >= size as isize {
            None
        } else {
            Some(Cell::new(row as usize, col as usize))
        }
    }

    /// The up-to-eight surrounding cells.
    pub fn neighbors8(&self, size: usize) -> impl Iterator<Item = Cell> {
        let (r, c) = (self.row as isize, self.col as isize);
        (-1isize..=1)
            .flat_map(move |dr| (-1isize..=1).map(move |dc| (dr, dc)))
            .filter(|&(dr, dc)| dr != 0 || dc != 0)
            .filter_map(move |(dr, dc)| {
                let (nr, nc) = (r + dr, c + dc);
                (nr >= 0 && nc >= 0 && nr < size as isize && nc < size as isize)
                    .then(|| Cell::new(nr as usize, nc as usize))
            })
    }

    pub fn manhattan(&self, other: &Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

/// Prints the 1-indexed `(row, col)` form used in MineSweeper prompts.
impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row + 1, self.col + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn parse(token: &str) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.name().eq_ignore_ascii_case(token))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Move(Direction),
    Reveal(Cell),
    Pick(usize),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Move(d) => f.write_str(d.name()),
            Action::Reveal(c) => write!(f, "{c}"),
            Action::Pick(i) => write!(f, "arm {i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

impl StepOutcome {
    pub(crate) fn new(success: bool, done: bool) -> Self {
        StepOutcome { reward: if success { SUCCESS_REWARD } else { 0.0 }, done: done || success, success }
    }
}

/// What an agent sees before acting.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub text: String,
    pub admissible_actions: Vec<Action>,
}

/// A live environment state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Env {
    Sokoban(SokobanState),
    MineSweeper(MinesweeperState),
    Coin(CoinState),
}

impl Env {
    /// Regenerates the initial state of `task`. Identical tasks give identical states.
    pub fn generate(task: &TaskInstance) -> Result<Env, EnvError> {
        task.validate()?;
        Ok(match task.env_kind {
            EnvKind::Sokoban => Env::Sokoban(SokobanState::generate(task, &SokobanOptions::default())?),
            EnvKind::MineSweeper => Env::MineSweeper(MinesweeperState::generate(task)?),
            EnvKind::Coin => Env::Coin(CoinState::generate(task)?),
        })
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::Sokoban(_) => EnvKind::Sokoban,
            Env::MineSweeper(_) => EnvKind::MineSweeper,
            Env::Coin(_) => EnvKind::Coin,
        }
    }

    pub fn board_size(&self) -> usize {
        match self {
            Env::Sokoban(s) => s.size(),
            Env::MineSweeper(s) => s.size(),
            Env::Coin(s) => s.arms(),
        }
    }

    pub fn admissible_actions(&self) -> Vec<Action> {
        match self {
            Env::Sokoban(s) => s.admissible_actions(),
            Env::MineSweeper(s) => s.admissible_actions(),
            Env::Coin(s) => s.admissible_actions(),
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        match (self, action) {
            (Env::Sokoban(s), Action::Move(d)) => s.step(*d),
            (Env::MineSweeper(s), Action::Reveal(c)) => s.reveal(*c),
            (Env::Coin(s), Action::Pick(i)) => s.pick(*i),
            (_, a) => Err(EnvError::InadmissibleAction { action: a.to_string() }),
        }
    }

    pub fn render_text(&self) -> String {
        match self {
            Env::Sokoban(s) => s.render_text(),
            Env::MineSweeper(s) => s.render_text(),
            Env::Coin(s) => s.render_text(),
        }
    }

    pub fn observe(&self) -> Observation {
        Observation { text: self.render_text(), admissible_actions: self.admissible_actions() }
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            Env::Sokoban(s) => s.is_terminal(),
            Env::MineSweeper(s) => s.is_terminal(),
            Env::Coin(s) => s.is_terminal(),
        }
    }

    pub fn is_success(&self) -> bool {
        match self {
            Env::Sokoban(s) => s.is_solved(),
            Env::MineSweeper(s) => s.is_won(),
            Env::Coin(s) => s.is_won(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        match self {
            Env::Sokoban(s) => s.steps_taken(),
            Env::MineSweeper(s) => s.steps_taken(),
            Env::Coin(s) => s.steps_taken(),
        }
    }

    /// Number of distinct action slots (4 moves, one per cell, or one per arm).
    pub fn slot_count(&self) -> usize {
        slot_count(self.kind(), self.board_size())
    }
}

pub fn slot_count(kind: EnvKind, board_size: usize) -> usize {
    match kind {
        EnvKind::Sokoban => 4,
        EnvKind::MineSweeper => board_size * board_size,
        EnvKind::Coin => board_size,
    }
}

/// Stable slot index of an action, used for per-slot policy biases.
pub fn action_slot(action: &Action, board_size: usize) -> usize {
    match action {
        Action::Move(d) => d.index(),
        Action::Reveal(c) => c.index(board_size),
        Action::Pick(i) => *i,
    }
}
