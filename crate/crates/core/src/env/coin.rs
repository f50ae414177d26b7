//! One-step calibration environment.

use rand::seq::SliceRandom;

use super::{Action, EnvError, StepOutcome, TaskInstance};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoinState {
    winners: Vec<bool>,
    picked: Option<usize>,
    steps_taken: usize,
}

impl CoinState {
    pub fn generate(task: &TaskInstance) -> Result<Self, EnvError> {
        task.validate()?;
        let mut order: Vec<usize> = (0..task.board_size).collect();
        order.shuffle(&mut stream(task.seed, &[tags::COIN_ARMS]));
        let mut winners = vec![false; task.board_size];
        for &i in &order[..task.difficulty] {
            winners[i] = true;
        }
        Ok(CoinState { winners, picked: None, steps_taken: 0 })
    }

    pub fn arms(&self) -> usize {
        self.winners.len()
    }

    pub fn is_winner(&self, arm: usize) -> bool {
        self.winners.get(arm).copied().unwrap_or(false)
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn is_terminal(&self) -> bool {
        self.picked.is_some()
    }

    pub fn is_won(&self) -> bool {
        self.picked.is_some_and(|a| self.winners[a])
    }

    pub fn admissible_actions(&self) -> Vec<Action> {
        if self.is_terminal() {
            return Vec::new();
        }
        (0..self.arms()).map(Action::Pick).collect()
    }

    pub fn pick(&mut self, arm: usize) -> Result<StepOutcome, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::Terminal);
        }
        if arm >= self.arms() {
            return Err(EnvError::InadmissibleAction { action: format!("arm {arm}") });
        }
        self.picked = Some(arm);
        self.steps_taken = 1;
        Ok(StepOutcome::new(self.winners[arm], true))
    }

    pub fn render_text(&self) -> String {
        match self.picked {
            None => format!("Pick one of {} arms.", self.arms()),
            Some(a) => format!("Picked arm {a}: {}.", if self.winners[a] { "win" } else { "loss" }),
        }
    }
}
