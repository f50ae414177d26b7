//! Prompt templates for text policies.
//!
//! Templates use `{name}` placeholders. Rendering is a single left-to-right
//! pass, so substituted values are never re-scanned, and a placeholder with
//! no supplied value is an error naming it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvKind, TaskInstance};
use crate::memory::{MemoryState, Reflection};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("no value supplied for placeholder {{{0}}}")]
    MissingValue(String),
    #[error("no {template} template for {kind} environments")]
    UnsupportedEnvironment { template: &'static str, kind: EnvKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    SokobanStandard,
    SokobanReflection,
    MinesweeperStandard,
    MinesweeperReflection,
}

impl TemplateId {
    pub fn standard(kind: EnvKind) -> Result<Self, PromptError> {
        match kind {
            EnvKind::Sokoban => Ok(TemplateId::SokobanStandard),
            EnvKind::MineSweeper => Ok(TemplateId::MinesweeperStandard),
            EnvKind::Coin => Err(PromptError::UnsupportedEnvironment { template: "standard", kind }),
        }
    }

    pub fn reflection(kind: EnvKind) -> Result<Self, PromptError> {
        match kind {
            EnvKind::Sokoban => Ok(TemplateId::SokobanReflection),
            EnvKind::MineSweeper => Ok(TemplateId::MinesweeperReflection),
            EnvKind::Coin => Err(PromptError::UnsupportedEnvironment { template: "reflection", kind }),
        }
    }

    pub fn is_reflection(self) -> bool {
        matches!(self, TemplateId::SokobanReflection | TemplateId::MinesweeperReflection)
    }

    pub fn text(self) -> &'static str {
        match self {
            TemplateId::SokobanStandard => SOKOBAN_STANDARD,
            TemplateId::SokobanReflection => SOKOBAN_REFLECTION,
            TemplateId::MinesweeperStandard => MINESWEEPER_STANDARD,
            TemplateId::MinesweeperReflection => MINESWEEPER_REFLECTION,
        }
    }
}

/// Which tag the response to a prompt is expected to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedTag {
    Action,
    Remark,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub expected_tag: ExpectedTag,
}

impl PromptBundle {
    /// System and user text joined the way they appear in a single-turn prompt.
    pub fn full_text(&self) -> String {
        format!("{}\n{}", self.system_text, self.user_text)
    }
}

macro_rules! sokoban_symbols {
    () => {
        "\
You are an expert agent operating in the Sokoban environment.

# Symbols and Their Meaning
- Walls (#): These block movement. You can't move through or push anything into walls.
- Floor (_): Open spaces where you can walk and move boxes.
- Targets (O): The spots where boxes need to go.
- Boxes (X): These are what you need to push onto the targets.
- Player (P): That's you! You'll move around the grid to push boxes.
- Box on Target (√): A box successfully placed on a target.
- Player on Target (S): You standing on a target.
"
    };
}

macro_rules! sokoban_goal {
    () => {
        "Your goal is to push all the boxes (X) onto the target spots (O). Once all boxes are on the targets, you win!\n"
    };
}

macro_rules! sokoban_rules {
    () => {
        "\
# Rules
Your admissible actions are [\"up\", \"down\", \"left\", \"right\"].
You can only push one box at a time. You can't pull boxes, so plan ahead to avoid getting stuck.
You can't walk through or push boxes into walls (#) or other boxes.
To avoid traps, do not push boxes into corners or against walls where they can't be moved again.
"
    };
}

macro_rules! minesweeper_rules {
    () => {
        "\
# Cell States
- Unopened cells (?): cells that are yet to be revealed and may contain a mine.
- Blank cells (.): opened and non-mine cells, and they have no neighboring mines
- Numbered cells (1-8): opened and non-mine cells, and the number indicates how many mines are in the eight neighboring cells, including those diagonally adjacent. For example, a cell with a ‘8’ means all its neighboring cells contain mines.
- Mine cells (*): opened cells that contain a mine.

# Your Goal
Your goal is to clear the board by revealing all the cells that don't contain mines, without detonating any of the hidden mines scattered throughout the board.
Use clues about the number of neighboring mines in each field to reason about the position of mines and non-mine cells.

# Reveal Rules
Your admissible action is to choose ONE unopened cell (?) to reveal per turn. The outcome depends on the content of that cell:
- Blank cell (.): That cell is revealed, and all contiguous blank cells plus their bordering numbered cells are automatically revealed (auto-cascade).
- Numbered cell (1–8): Only that single cell is revealed, showing the count of neighboring mines.
- Mine (*): The game ends immediately in a loss.
"
    };
}

macro_rules! reflection_instructions {
    () => {
        "\
The task is NOT successfully completed.
Now it's your turn to reflect on the past experience and come up with a new plan of action.
- Your response should first be step-by-step reasoning about the strategy and path you took to attempt to complete the task. Identify where things went wrong or could be better.
- Then devise a concise, new plan of action that accounts for your mistake with reference to specific actions that you should have taken.
- Finally, end the response with your reflection and improved plan inside <remark> </remark> tags, to guide the next trial.
"
    };
}

const SOKOBAN_STANDARD: &str = concat!(
    sokoban_symbols!(),
    "\n# Goal\n",
    sokoban_goal!(),
    "\n",
    sokoban_rules!(),
    "\
{example}

# Observations
The initial state of the game is:
{initial_state}
{past_experience_reflection}
You have already taken the following actions:
{history_actions}
Your current observation is:
{current_state}
Now it's your turn to make moves (choose the next {num_actions_per_turn} actions).
- Your response first be step-by-step reasoning about the current situation — observe the positions of boxes and targets, plan a path to push a box toward a target, and avoid traps like corners or walls.
- Then choose {num_actions_per_turn} admissible actions and present them within <action> </action> tags (separated by comma).
"
);

const SOKOBAN_REFLECTION: &str = concat!(
    sokoban_symbols!(),
    "\n# Your Goal\n",
    sokoban_goal!(),
    "\n",
    sokoban_rules!(),
    "\n",
    "\
# Your Task
You will be given the history of a past experience.
Your job is to **reflect on the past sequence**, identify any **mistakes or inefficiencies**, and then devise a **concise, improved plan** starting from the original initial state.

# Past Experience
The initial state of the game is:
{initial_state}

You have taken the following actions:
{history_actions}
The final state is:
{final_state}
",
    reflection_instructions!()
);

const MINESWEEPER_STANDARD: &str = concat!(
    "\
You are an expert agent operating in the Minesweeper game.
You will be given a two dimensional {board_size} by {board_size} board, with {n_mines} hidden mines.
The rows and columns are indexed from 1 to {board_size}.

",
    minesweeper_rules!(),
    "\
# Observation
The initial state of the game is:
{initial_state}
{past_experience_reflection}
You have already chosen the following cells to reveal: {history_actions}
Your current observation is:
{current_state}
Now it's your turn to make a move.
- Your should first reason step-by-step about the current situation — observe the status of the board, inferring the states of unopened cells (?).
- Then choose ONE unopened cell (?) to reveal. Put the index of cell in the format of “(row, col)” within the <action> </action> tag.
"
);

const MINESWEEPER_REFLECTION: &str = concat!(
    "\
You are an expert agent operating in the Minesweeper game.
You will be given a two dimensional {board_size} by {board_size} board, with {n_mines} hidden mines.
The rows and columns are indexed from 1 to {board_size}

",
    minesweeper_rules!(),
    "\n",
    "\
# Your Task
You will be given the history of a past experience.
Your job now is to **reflect on the past experience**, identify any **mistakes or inefficiencies**, and then devise a **concise, improved plan** for your next try starting from the original initial state.
# Past Experience
The initial state of the game is:
{initial_state}
You have chosen the following cells to reveal:
{history_actions}
The final state is:
{final_state}
",
    reflection_instructions!()
);

/// Placeholder names referenced by a template, in order of first use.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut names: Vec<&str> = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if is_placeholder_name(&after[..end]) => {
                let name = &after[..end];
                if !names.contains(&name) {
                    names.push(name);
                }
                rest = &after[end + 1..];
            }
            _ => rest = after,
        }
    }
    names
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

/// Substitutes every placeholder in one pass.
pub fn substitute(template: &str, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 512);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if is_placeholder_name(&after[..end]) => {
                let name = &after[..end];
                let value = vars.get(name).ok_or_else(|| PromptError::MissingValue(name.to_string()))?;
                out.push_str(value);
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders `id` from explicit substitutions. The first line becomes the
/// system text, the remainder the user text.
pub fn render_template(id: TemplateId, vars: &BTreeMap<&str, String>) -> Result<PromptBundle, PromptError> {
    let text = substitute(id.text(), vars)?;
    let (system, user) = text.split_once('\n').unwrap_or((&text, ""));
    Ok(PromptBundle {
        system_text: system.to_string(),
        user_text: user.to_string(),
        expected_tag: if id.is_reflection() { ExpectedTag::Remark } else { ExpectedTag::Action },
    })
}

/// Everything a template can draw on at one point in a trial.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub task: &'a TaskInstance,
    pub initial: &'a Env,
    /// Current state for standard prompts, final state for reflection prompts.
    pub current: &'a Env,
    /// Actions of the current (or reflected-on) episode.
    pub history: &'a [Action],
    pub memory: &'a MemoryState,
    pub num_actions_per_turn: usize,
}

pub fn format_actions(actions: &[Action]) -> String {
    if actions.is_empty() {
        return "None".to_string();
    }
    actions.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
}

/// The memory block shown to the agent. Empty before the first retry.
pub fn format_past_experience(memory: &MemoryState) -> String {
    if memory.is_empty() {
        return String::new();
    }
    let mut lines = vec!["# Past Experience".to_string()];
    for (i, summary) in memory.episode_summaries.iter().enumerate() {
        let outcome = if summary.success { "succeeded" } else { "failed" };
        if summary.actions.is_empty() {
            lines.push(format!("Attempt {} {outcome}.", i + 1));
        } else {
            lines.push(format!("Attempt {} {outcome} after actions: {}", i + 1, format_actions(&summary.actions)));
        }
        if let Some(r) = memory.reflections.get(i).filter(|r| !r.is_empty()) {
            lines.push(format!("Reflection on attempt {}: {}", i + 1, r.text()));
        }
    }
    // Reflections without a matching summary (should not happen, kept visible anyway).
    for (i, r) in memory.reflections.iter().enumerate().skip(memory.episode_summaries.len()) {
        if !r.is_empty() {
            lines.push(format!("Reflection {}: {}", i + 1, reflection_text(r)));
        }
    }
    lines.join("\n")
}

fn reflection_text(r: &Reflection) -> String {
    r.text()
}

/// Renders `id` for a point in a trial.
pub fn render_prompt(id: TemplateId, inputs: &PromptInputs<'_>) -> Result<PromptBundle, PromptError> {
    let kind = inputs.task.env_kind;
    let expected_kind = match id {
        TemplateId::SokobanStandard | TemplateId::SokobanReflection => EnvKind::Sokoban,
        TemplateId::MinesweeperStandard | TemplateId::MinesweeperReflection => EnvKind::MineSweeper,
    };
    if kind != expected_kind {
        return Err(PromptError::UnsupportedEnvironment { template: "requested", kind });
    }
    let mut vars: BTreeMap<&str, String> = BTreeMap::new();
    vars.insert("board_size", inputs.task.board_size.to_string());
    vars.insert("n_mines", inputs.task.difficulty.to_string());
    vars.insert("initial_state", inputs.initial.render_text());
    vars.insert("history_actions", format_actions(inputs.history));
    vars.insert("num_actions_per_turn", inputs.num_actions_per_turn.to_string());
    vars.insert("example", String::new());
    if id.is_reflection() {
        vars.insert("final_state", inputs.current.render_text());
    } else {
        vars.insert("current_state", inputs.current.render_text());
        vars.insert("past_experience_reflection", format_past_experience(inputs.memory));
    }
    render_template(id, &vars)
}
