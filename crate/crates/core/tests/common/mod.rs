#![allow(dead_code)]

use std::path::PathBuf;

use trialrl::env::{Action, Cell, Direction, Env, TaskInstance};
use trialrl::memory::{EpisodeSummary, MemoryMode, MemoryState, Reflection};
use trialrl::policy::prompt::{render_prompt, PromptBundle, PromptInputs, TemplateId};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `actual` with the golden file `name`; `TRIALRL_BLESS=1` rewrites it.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("TRIALRL_BLESS").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{name} differs from the golden file"))
    }
}

fn fixture_memory(actions: Vec<Action>, remark: &str) -> MemoryState {
    let mut memory = MemoryState::new(MemoryMode::Both);
    memory.episode_summaries.push(EpisodeSummary { episode: 0, success: false, actions });
    memory.reflections.push(Reflection::Text(remark.to_string()));
    memory
}

/// The four templates rendered for fixed tasks, keyed by golden-file name.
pub fn rendered_templates() -> Vec<(&'static str, PromptBundle)> {
    let ms_task = TaskInstance::minesweeper(6, 3, 5);
    let ms_initial = Env::generate(&ms_task).unwrap();
    let mut ms_current = ms_initial.clone();
    let ms_history = vec![Action::Reveal(Cell::new(0, 0))];
    ms_current.step(&ms_history[0]).unwrap();
    let ms_memory = fixture_memory(
        vec![Action::Reveal(Cell::new(2, 2)), Action::Reveal(Cell::new(4, 0))],
        "The mine at (5, 1) ended the attempt; avoid it.",
    );

    let sk_task = TaskInstance::sokoban(6, 1, 5);
    let sk_initial = Env::generate(&sk_task).unwrap();
    let mut sk_current = sk_initial.clone();
    let sk_history: Vec<Action> = sk_current.admissible_actions().into_iter().take(1).collect();
    sk_current.step(&sk_history[0]).unwrap();
    let sk_memory = fixture_memory(
        vec![Action::Move(Direction::Up), Action::Move(Direction::Left)],
        "Pushing the box up trapped it against the wall.",
    );

    let empty = MemoryState::new(MemoryMode::Both);
    let cases = [
        (
            "minesweeper_standard.txt",
            TemplateId::MinesweeperStandard,
            &ms_task,
            &ms_initial,
            &ms_current,
            &ms_history,
            &ms_memory,
        ),
        (
            "minesweeper_reflection.txt",
            TemplateId::MinesweeperReflection,
            &ms_task,
            &ms_initial,
            &ms_current,
            &ms_history,
            &empty,
        ),
        (
            "sokoban_standard.txt",
            TemplateId::SokobanStandard,
            &sk_task,
            &sk_initial,
            &sk_current,
            &sk_history,
            &sk_memory,
        ),
        (
            "sokoban_reflection.txt",
            TemplateId::SokobanReflection,
            &sk_task,
            &sk_initial,
            &sk_current,
            &sk_history,
            &empty,
        ),
    ];
    cases
        .into_iter()
        .map(|(name, id, task, initial, current, history, memory)| {
            let inputs = PromptInputs { task, initial, current, history, memory, num_actions_per_turn: 3 };
            (name, render_prompt(id, &inputs).unwrap())
        })
        .collect()
}
