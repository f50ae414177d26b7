//! Sokoban with reverse-play instance generation.
//!
//! Instances start from a solved layout (every box on a target) and the
//! player walks backwards for `2 * board_size` seeded moves, pulling any box
//! it backs away from. Replaying those moves in reverse order with inverted
//! directions is a valid forward solution, so every generated puzzle is
//! solvable and carries its own oracle solution.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Cell, Direction, EnvError, StepOutcome, TaskInstance};
use crate::rng::{stream, tags};

const MAX_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SokobanOptions {
    /// Interior wall cells added on top of the border ring. Default 0.
    pub interior_walls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SokobanState {
    size: usize,
    walls: Vec<bool>,
    boxes: BTreeSet<Cell>,
    targets: BTreeSet<Cell>,
    player: Cell,
    steps_taken: usize,
    max_steps: usize,
    solution: Vec<Direction>,
}

impl SokobanState {
    pub fn generate(task: &TaskInstance, options: &SokobanOptions) -> Result<Self, EnvError> {
        task.validate()?;
        let n = task.board_size;
        let pulls = 2 * n;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = stream(task.seed, &[tags::SOKOBAN_LAYOUT, attempt as u64]);
            let mut interior: Vec<Cell> = (1..n - 1).flat_map(|r| (1..n - 1).map(move |c| Cell::new(r, c))).collect();
            interior.shuffle(&mut rng);

            let mut walls = vec![false; n * n];
            for r in 0..n {
                for c in 0..n {
                    if r == 0 || c == 0 || r == n - 1 || c == n - 1 {
                        walls[r * n + c] = true;
                    }
                }
            }
            let extra = options.interior_walls.min(interior.len().saturating_sub(task.difficulty + 1));
            for cell in interior.drain(..extra) {
                walls[cell.index(n)] = true;
            }
            if interior.len() < task.difficulty + 1 {
                continue;
            }
            let targets: BTreeSet<Cell> = interior[..task.difficulty].iter().copied().collect();
            let mut state = SokobanState {
                size: n,
                walls,
                boxes: targets.clone(),
                targets,
                player: interior[task.difficulty],
                steps_taken: 0,
                max_steps: task.max_steps,
                solution: Vec::new(),
            };

            let mut reverse = Vec::with_capacity(pulls);
            for _ in 0..pulls {
                let options: Vec<Direction> = Direction::ALL
                    .into_iter()
                    .filter(|&d| state.player.offset(d, n).is_some_and(|c| state.is_free(c)))
                    .collect();
                if options.is_empty() {
                    break;
                }
                let dir = options[rng.random_range(0..options.len())];
                state.pull(dir);
                reverse.push(dir);
            }
            if state.boxes == state.targets {
                continue;
            }
            state.solution = reverse.iter().rev().map(|d| d.opposite()).collect();
            return Ok(state);
        }
        Err(EnvError::Generation { attempts: MAX_ATTEMPTS })
    }

    /// Builds a state from explicit parts. Used for hand-built fixtures.
    pub fn from_parts(
        size: usize,
        walls: impl IntoIterator<Item = Cell>,
        boxes: impl IntoIterator<Item = Cell>,
        targets: impl IntoIterator<Item = Cell>,
        player: Cell,
        max_steps: usize,
    ) -> Result<Self, EnvError> {
        let mut wall_grid = vec![false; size * size];
        for r in 0..size {
            for c in 0..size {
                if r == 0 || c == 0 || r == size - 1 || c == size - 1 {
                    wall_grid[r * size + c] = true;
                }
            }
        }
        for w in walls {
            if w.row >= size || w.col >= size {
                return Err(EnvError::InvalidTask(format!("wall {w:?} outside the board")));
            }
            wall_grid[w.index(size)] = true;
        }
        let state = SokobanState {
            size,
            walls: wall_grid,
            boxes: boxes.into_iter().collect(),
            targets: targets.into_iter().collect(),
            player,
            steps_taken: 0,
            max_steps,
            solution: Vec::new(),
        };
        state.check_invariants().map_err(EnvError::InvalidTask)?;
        Ok(state)
    }

    /// Walks backwards one cell in `dir`, dragging a box from the opposite side.
    fn pull(&mut self, dir: Direction) {
        let from = self.player;
        let Some(to) = from.offset(dir, self.size) else { return };
        if let Some(behind) = from.offset(dir.opposite(), self.size) {
            if self.boxes.remove(&behind) {
                self.boxes.insert(from);
            }
        }
        self.player = to;
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls[cell.index(self.size)]
    }

    pub fn walls(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.size * self.size).filter(|&i| self.walls[i]).map(|i| Cell::from_index(i, self.size))
    }

    pub fn boxes(&self) -> &BTreeSet<Cell> {
        &self.boxes
    }

    pub fn targets(&self) -> &BTreeSet<Cell> {
        &self.targets
    }

    pub fn player(&self) -> Cell {
        self.player
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Forward solution recorded by the generator (empty for hand-built states).
    pub fn oracle_solution(&self) -> &[Direction] {
        &self.solution
    }

    fn is_free(&self, cell: Cell) -> bool {
        !self.is_wall(cell) && !self.boxes.contains(&cell)
    }

    pub fn is_solved(&self) -> bool {
        self.boxes == self.targets
    }

    pub fn is_terminal(&self) -> bool {
        self.is_solved() || self.steps_taken >= self.max_steps
    }

    pub fn admissible_actions(&self) -> Vec<super::Action> {
        Direction::ALL.into_iter().map(super::Action::Move).collect()
    }

    /// A box on a non-target cell with walls on two orthogonal sides can never move again.
    pub fn is_dead_corner(&self, cell: Cell) -> bool {
        if self.targets.contains(&cell) || self.is_wall(cell) {
            return false;
        }
        let blocked = |d: Direction| cell.offset(d, self.size).is_none_or(|c| self.is_wall(c));
        (blocked(Direction::Up) || blocked(Direction::Down)) && (blocked(Direction::Left) || blocked(Direction::Right))
    }

    /// Applies one move. Blocked moves still consume a step.
    pub fn step(&mut self, dir: Direction) -> Result<StepOutcome, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::Terminal);
        }
        if let Some(next) = self.player.offset(dir, self.size) {
            if !self.is_wall(next) {
                if self.boxes.contains(&next) {
                    if let Some(dest) = next.offset(dir, self.size).filter(|&d| self.is_free(d)) {
                        self.boxes.remove(&next);
                        self.boxes.insert(dest);
                        self.player = next;
                    }
                } else {
                    self.player = next;
                }
            }
        }
        self.steps_taken += 1;
        let success = self.is_solved();
        Ok(StepOutcome::new(success, self.steps_taken >= self.max_steps))
    }

    pub fn symbol(&self, cell: Cell) -> char {
        let target = self.targets.contains(&cell);
        if self.is_wall(cell) {
            '#'
        } else if self.boxes.contains(&cell) {
            if target {
                '√'
            } else {
                'X'
            }
        } else if self.player == cell {
            if target {
                'S'
            } else {
                'P'
            }
        } else if target {
            'O'
        } else {
            '_'
        }
    }

    /// Rows as `<index>: <symbols>`, zero-indexed, symbols space separated.
    pub fn render_text(&self) -> String {
        (0..self.size)
            .map(|r| {
                let row: Vec<String> = (0..self.size).map(|c| self.symbol(Cell::new(r, c)).to_string()).collect();
                format!("{r}: {}", row.join(" "))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.size;
        if self.boxes.len() != self.targets.len() {
            return Err(format!("{} boxes but {} targets", self.boxes.len(), self.targets.len()));
        }
        for r in 0..n {
            for c in 0..n {
                if (r == 0 || c == 0 || r == n - 1 || c == n - 1) && !self.is_wall(Cell::new(r, c)) {
                    return Err(format!("border cell ({r},{c}) is not a wall"));
                }
            }
        }
        for cell in self.boxes.iter().chain(&self.targets).chain(std::iter::once(&self.player)) {
            if cell.row >= n || cell.col >= n || self.is_wall(*cell) {
                return Err(format!("{cell:?} lies on a wall or off the board"));
            }
        }
        if self.boxes.contains(&self.player) {
            return Err("player shares a cell with a box".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, TaskInstance};

    fn fixture() -> SokobanState {
        // 0: # # # # # #
        // 1: # _ _ _ _ #
        // 2: # _ P X O #
        // 3: # _ _ _ _ #
        // 4: # _ _ X O #
        // 5: # # # # # #
        SokobanState::from_parts(
            6,
            [],
            [Cell::new(2, 3), Cell::new(4, 3)],
            [Cell::new(2, 4), Cell::new(4, 4)],
            Cell::new(2, 2),
            30,
        )
        .unwrap()
    }

    #[test]
    fn generated_instances_satisfy_invariants() {
        for seed in 0..200 {
            let task = TaskInstance::sokoban(6, 2, seed);
            let s = SokobanState::generate(&task, &SokobanOptions::default()).unwrap();
            s.check_invariants().unwrap();
            assert_eq!(s.boxes().len(), 2);
            assert!(!s.is_solved());
            assert!(s.oracle_solution().len() <= 12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let task = TaskInstance::sokoban(6, 2, 7);
        assert_eq!(Env::generate(&task).unwrap(), Env::generate(&task).unwrap());
    }

    #[test]
    fn oracle_solution_replays_to_success() {
        let task = TaskInstance::sokoban(6, 2, 7);
        let mut s = SokobanState::generate(&task, &SokobanOptions::default()).unwrap();
        let plan = s.oracle_solution().to_vec();
        let mut last = None;
        for d in plan {
            last = Some(s.step(d).unwrap());
            if s.is_terminal() {
                break;
            }
        }
        let out = last.unwrap();
        assert!(out.success && out.done);
        assert_eq!(out.reward, 10.0);
    }

    #[test]
    fn interior_walls_option() {
        let task = TaskInstance::sokoban(7, 2, 3);
        let s = SokobanState::generate(&task, &SokobanOptions { interior_walls: 3 }).unwrap();
        assert_eq!(s.walls().count(), 24 + 3);
        s.check_invariants().unwrap();
    }

    #[test]
    fn push_onto_last_target_wins() {
        let mut s = fixture();
        let out = s.step(Direction::Right).unwrap();
        assert_eq!(out, StepOutcome { reward: 0.0, done: false, success: false });
        // Walk around to (4, 2) to push the lower box.
        for d in [Direction::Left, Direction::Down, Direction::Down] {
            s.step(d).unwrap();
        }
        let out = s.step(Direction::Right).unwrap();
        assert_eq!(out, StepOutcome { reward: 10.0, done: true, success: true });
        assert_eq!(s.symbol(Cell::new(4, 4)), '√');
    }

    #[test]
    fn blocked_push_is_a_step_consuming_noop() {
        // Box against the east wall cannot move further east.
        let mut s = SokobanState::from_parts(6, [], [Cell::new(2, 4)], [Cell::new(1, 1)], Cell::new(2, 3), 30).unwrap();
        let before = s.clone();
        s.step(Direction::Right).unwrap();
        assert_eq!(s.boxes(), before.boxes());
        assert_eq!(s.player(), before.player());
        assert_eq!(s.steps_taken(), 1);
        // Walking into a wall is also a no-op.
        s.step(Direction::Up).unwrap();
        s.step(Direction::Up).unwrap();
        assert_eq!(s.player(), Cell::new(1, 3));
        assert_eq!(s.steps_taken(), 3);
    }

    #[test]
    fn box_cannot_push_box() {
        let mut s = SokobanState::from_parts(
            6,
            [],
            [Cell::new(2, 2), Cell::new(2, 3)],
            [Cell::new(1, 1), Cell::new(1, 2)],
            Cell::new(2, 1),
            30,
        )
        .unwrap();
        s.step(Direction::Right).unwrap();
        assert_eq!(s.player(), Cell::new(2, 1));
    }

    #[test]
    fn horizon_terminates() {
        let mut s = SokobanState::from_parts(6, [], [Cell::new(2, 2)], [Cell::new(3, 3)], Cell::new(1, 1), 2).unwrap();
        assert!(!s.step(Direction::Up).unwrap().done);
        assert!(s.step(Direction::Up).unwrap().done);
        assert_eq!(s.step(Direction::Up), Err(EnvError::Terminal));
    }

    #[test]
    fn render_uses_legend() {
        let mut s = fixture();
        assert_eq!(
            s.render_text(),
            "0: # # # # # #\n1: # _ _ _ _ #\n2: # _ P X O #\n3: # _ _ _ _ #\n4: # _ _ X O #\n5: # # # # # #"
        );
        s.step(Direction::Right).unwrap();
        assert!(s.render_text().contains("2: # _ _ P √ #"));
        let s = SokobanState::from_parts(6, [], [Cell::new(2, 2)], [Cell::new(1, 1)], Cell::new(1, 1), 30).unwrap();
        assert!(s.render_text().contains("1: # S _ _ _ #"));
    }

    #[test]
    fn dead_corners() {
        let s = fixture();
        assert!(s.is_dead_corner(Cell::new(1, 1)));
        assert!(!s.is_dead_corner(Cell::new(1, 2)));
        assert!(!s.is_dead_corner(Cell::new(2, 2)));
    }
}
