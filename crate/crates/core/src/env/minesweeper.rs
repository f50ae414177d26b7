//! MineSweeper with a safe first reveal.
//!
//! The task seed fixes a placement order over all cells. Mines are placed on
//! the first reveal: the first `n_mines` cells of that order, skipping the
//! clicked cell. Two episodes that open with the same click therefore see the
//! same minefield.

use std::collections::VecDeque;

use rand::seq::SliceRandom;

use super::{Action, Cell, EnvError, StepOutcome, TaskInstance};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MinesweeperState {
    size: usize,
    n_mines: usize,
    placement_order: Vec<Cell>,
    mines: Vec<bool>,
    counts: Vec<u8>,
    revealed: Vec<bool>,
    revealed_count: usize,
    exploded: Option<Cell>,
    first_click_done: bool,
    steps_taken: usize,
    max_steps: usize,
}

impl MinesweeperState {
    pub fn generate(task: &TaskInstance) -> Result<Self, EnvError> {
        task.validate()?;
        let n = task.board_size;
        let mut order: Vec<Cell> = (0..n * n).map(|i| Cell::from_index(i, n)).collect();
        order.shuffle(&mut stream(task.seed, &[tags::MINE_ORDER]));
        Ok(MinesweeperState {
            size: n,
            n_mines: task.difficulty,
            placement_order: order,
            mines: vec![false; n * n],
            counts: vec![0; n * n],
            revealed: vec![false; n * n],
            revealed_count: 0,
            exploded: None,
            first_click_done: false,
            steps_taken: 0,
            max_steps: task.max_steps,
        })
    }

    /// A board whose mines are fixed up front; the first reveal gets no protection.
    pub fn with_mines(size: usize, mines: &[Cell], max_steps: usize) -> Result<Self, EnvError> {
        let mut grid = vec![false; size * size];
        for m in mines {
            if m.row >= size || m.col >= size {
                return Err(EnvError::InvalidTask(format!("mine {m:?} outside the board")));
            }
            grid[m.index(size)] = true;
        }
        let n_mines = grid.iter().filter(|&&m| m).count();
        let mut state = MinesweeperState {
            size,
            n_mines,
            placement_order: Vec::new(),
            mines: grid,
            counts: vec![0; size * size],
            revealed: vec![false; size * size],
            revealed_count: 0,
            exploded: None,
            first_click_done: true,
            steps_taken: 0,
            max_steps,
        };
        state.recount();
        Ok(state)
    }

    fn recount(&mut self) {
        for i in 0..self.size * self.size {
            let cell = Cell::from_index(i, self.size);
            self.counts[i] = cell.neighbors8(self.size).filter(|c| self.mines[c.index(self.size)]).count() as u8;
        }
    }

    fn place_mines(&mut self, first: Cell) {
        let chosen: Vec<Cell> =
            self.placement_order.iter().copied().filter(|&c| c != first).take(self.n_mines).collect();
        for c in chosen {
            self.mines[c.index(self.size)] = true;
        }
        self.recount();
        self.first_click_done = true;
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_mines(&self) -> usize {
        self.n_mines
    }

    /// Mine cells; empty until the first reveal of a generated board.
    pub fn mines(&self) -> Vec<Cell> {
        self.cells().filter(|c| self.is_mine(*c)).collect()
    }

    pub fn is_mine(&self, cell: Cell) -> bool {
        self.mines[cell.index(self.size)]
    }

    pub fn is_revealed(&self, cell: Cell) -> bool {
        self.revealed[cell.index(self.size)]
    }

    pub fn revealed(&self) -> Vec<Cell> {
        self.cells().filter(|c| self.is_revealed(*c)).collect()
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed_count
    }

    /// Number of mines in the 8-neighborhood of `cell`.
    pub fn adjacent_mines(&self, cell: Cell) -> u8 {
        self.counts[cell.index(self.size)]
    }

    pub fn exploded(&self) -> Option<Cell> {
        self.exploded
    }

    pub fn first_click_done(&self) -> bool {
        self.first_click_done
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.size * self.size).map(|i| Cell::from_index(i, self.size))
    }

    pub fn is_won(&self) -> bool {
        self.first_click_done && self.exploded.is_none() && self.revealed_count == self.size * self.size - self.n_mines
    }

    pub fn is_terminal(&self) -> bool {
        self.exploded.is_some() || self.is_won() || self.steps_taken >= self.max_steps
    }

    /// Unrevealed cells in row-major order.
    pub fn admissible_actions(&self) -> Vec<Action> {
        if self.is_terminal() {
            return Vec::new();
        }
        self.cells().filter(|c| !self.is_revealed(*c)).map(Action::Reveal).collect()
    }

    /// Opens `cell`. A zero-count cell floods its connected zero region plus
    /// the numbered border of that region.
    pub fn reveal(&mut self, cell: Cell) -> Result<StepOutcome, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::Terminal);
        }
        if cell.row >= self.size || cell.col >= self.size || self.is_revealed(cell) {
            return Err(EnvError::InadmissibleAction { action: cell.to_string() });
        }
        if !self.first_click_done {
            self.place_mines(cell);
        }
        self.steps_taken += 1;
        if self.is_mine(cell) {
            self.exploded = Some(cell);
            return Ok(StepOutcome::new(false, true));
        }
        let mut queue = VecDeque::from([cell]);
        self.revealed[cell.index(self.size)] = true;
        self.revealed_count += 1;
        while let Some(c) = queue.pop_front() {
            if self.adjacent_mines(c) != 0 {
                continue;
            }
            for nb in c.neighbors8(self.size) {
                let i = nb.index(self.size);
                if !self.revealed[i] && !self.mines[i] {
                    self.revealed[i] = true;
                    self.revealed_count += 1;
                    queue.push_back(nb);
                }
            }
        }
        let success = self.is_won();
        Ok(StepOutcome::new(success, self.steps_taken >= self.max_steps))
    }

    pub fn symbol(&self, cell: Cell) -> char {
        if self.exploded == Some(cell) {
            '*'
        } else if !self.is_revealed(cell) {
            '?'
        } else {
            match self.adjacent_mines(cell) {
                0 => '.',
                k => char::from(b'0' + k),
            }
        }
    }

    /// Rows as `Row <i>: <symbols>`, 1-indexed.
    pub fn render_text(&self) -> String {
        (0..self.size)
            .map(|r| {
                let row: Vec<String> = (0..self.size).map(|c| self.symbol(Cell::new(r, c)).to_string()).collect();
                format!("Row {}: {}", r + 1, row.join(" "))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}
