//! Episodes and multi-episode trials.
//!
//! A trial replays the same task up to `N` times. Between a failed episode
//! and the next one the backend reflects on the failure and memory is
//! extended according to the [`MemoryMode`]. The trial stops at the first
//! success.

use std::io;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvError, TaskInstance};
use crate::memory::{EpisodeSummary, MemoryMode, MemoryState, Reflection};
use crate::policy::{PolicyBackend, ReflectContext, TurnContext};
use crate::rng::{stream, tags, StreamRng};

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// State the action was taken in.
    pub state: Env,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub index: usize,
    /// Prompt that produced the action, for text backends.
    pub prompt: Option<String>,
}

impl Step {
    pub fn observation_text(&self) -> String {
        self.state.render_text()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub index: usize,
    pub steps: Vec<Step>,
    pub success: bool,
    /// Memory the episode was conditioned on.
    pub memory_used: MemoryState,
    pub final_state: Env,
    /// Why the episode ended early, if the backend failed or chose an inadmissible action.
    pub aborted: Option<String>,
}

impl Episode {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// The reflection written after a failed episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionStep {
    /// Index of the episode reflected on.
    pub episode: usize,
    pub reflection: Reflection,
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub task: TaskInstance,
    pub episodes: Vec<Episode>,
    /// `reflections[n]` follows episode `n`, when one was produced.
    pub reflections: Vec<Option<ReflectionStep>>,
    pub budget: usize,
    pub memory_mode: MemoryMode,
    pub seed: u64,
}

impl Trial {
    pub fn success(&self) -> bool {
        self.episodes.last().is_some_and(|e| e.success)
    }

    /// Index of the successful episode.
    pub fn first_success(&self) -> Option<usize> {
        self.episodes.iter().position(|e| e.success)
    }

    pub fn step_count(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.episodes.is_empty() || self.episodes.len() > self.budget {
            return Err(format!("{} episodes for a budget of {}", self.episodes.len(), self.budget));
        }
        if let Some(n) = self.first_success() {
            if n + 1 != self.episodes.len() {
                return Err(format!("episodes continue after success at {n}"));
            }
        }
        let first = Env::generate(&self.task).map_err(|e| e.to_string())?;
        for (n, ep) in self.episodes.iter().enumerate() {
            if ep.index != n {
                return Err(format!("episode {n} carries index {}", ep.index));
            }
            if ep.steps.len() > self.task.max_steps {
                return Err(format!("episode {n} exceeds the horizon"));
            }
            if ep.steps.iter().enumerate().any(|(t, s)| s.index != t) {
                return Err(format!("episode {n} step indices are not consecutive"));
            }
            if ep.success != ep.steps.last().is_some_and(|s| s.success) {
                return Err(format!("episode {n} success flag disagrees with its last step"));
            }
            if let Some(s) = ep.steps.first() {
                if s.state != first {
                    return Err(format!("episode {n} starts from a different state"));
                }
            }
        }
        Ok(())
    }
}

/// Runs one episode from the task's initial state.
///
/// A backend error or an inadmissible action ends the episode as a failure;
/// the offending turn records no step.
pub fn run_episode<P: PolicyBackend + ?Sized>(
    task: &TaskInstance,
    policy: &P,
    index: usize,
    memory: &MemoryState,
    temperature: f64,
    rng: &mut StreamRng,
) -> Result<Episode, EnvError> {
    let initial = Env::generate(task)?;
    let mut env = initial.clone();
    let mut steps: Vec<Step> = Vec::new();
    let mut history: Vec<Action> = Vec::new();
    let mut aborted = None;
    'turns: while !env.is_terminal() && steps.len() < task.max_steps {
        let ctx = TurnContext { task, initial: &initial, current: &env, memory, history: &history, temperature };
        let decision = match policy.decide(&ctx, rng) {
            Ok(d) if d.actions.is_empty() => {
                aborted = Some("backend returned no actions".to_string());
                break;
            }
            Ok(d) => d,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        let mut prompt = decision.prompt;
        for action in decision.actions {
            if env.is_terminal() || steps.len() >= task.max_steps {
                break 'turns;
            }
            let state = env.clone();
            let outcome = match env.step(&action) {
                Ok(o) => o,
                Err(e) => {
                    aborted = Some(e.to_string());
                    break 'turns;
                }
            };
            let done = outcome.done || steps.len() + 1 >= task.max_steps;
            steps.push(Step {
                state,
                action,
                reward: outcome.reward,
                done,
                success: outcome.success,
                index: steps.len(),
                prompt: prompt.take(),
            });
            history.push(action);
        }
    }
    let success = steps.last().is_some_and(|s| s.success);
    Ok(Episode { index, steps, success, memory_used: memory.clone(), final_state: env, aborted })
}

/// Asks the backend to reflect on a failed episode. A failed reflection
/// yields an empty one rather than ending the trial.
pub fn reflect<P: PolicyBackend + ?Sized>(
    task: &TaskInstance,
    policy: &P,
    episode: &Episode,
    memory: &MemoryState,
    temperature: f64,
) -> Result<ReflectionStep, EnvError> {
    let initial = Env::generate(task)?;
    let actions = episode.actions();
    let ctx = ReflectContext {
        task,
        episode: episode.index,
        initial: &initial,
        final_state: &episode.final_state,
        actions: &actions,
        memory,
        temperature,
    };
    let reflection = policy.reflect(&ctx).unwrap_or_else(|_| Reflection::Text(String::new()));
    Ok(ReflectionStep { episode: episode.index, reflection, prompt: policy.reflection_prompt(&ctx) })
}

/// Memory after `episode`, extended according to `memory.mode`.
pub fn update_memory(memory: &MemoryState, episode: &Episode, reflection: Option<&Reflection>) -> MemoryState {
    let mut next = memory.clone();
    let mode = memory.mode;
    if mode == MemoryMode::Disabled {
        return next;
    }
    let reflection_missing = reflection.is_none_or(|r| r.is_empty());
    // Without a usable reflection the raw actions stand in for it.
    let keep_actions = mode.keeps_trajectories() || reflection_missing;
    next.episode_summaries.push(EpisodeSummary {
        episode: episode.index,
        success: episode.success,
        actions: if keep_actions { episode.actions() } else { Vec::new() },
    });
    if mode.keeps_reflections() {
        next.reflections.push(reflection.cloned().unwrap_or_else(|| Reflection::Text(String::new())));
    }
    next
}

/// Settings shared by every trial of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSettings {
    pub budget: usize,
    pub memory_mode: MemoryMode,
    pub temperature: f64,
    /// Temperature of the reflection step.
    pub reflection_temperature: f64,
}

/// Runs up to `settings.budget` episodes, stopping at the first success.
/// Episode `n` samples from the stream `(seed, EPISODE, n)`.
pub fn run_trial<P: PolicyBackend + ?Sized>(
    task: &TaskInstance,
    policy: &P,
    settings: &TrialSettings,
    seed: u64,
) -> Result<Trial, EnvError> {
    assert!(settings.budget >= 1, "a trial needs at least one episode");
    let mut memory = MemoryState::new(settings.memory_mode);
    let mut episodes = Vec::with_capacity(settings.budget);
    let mut reflections = Vec::with_capacity(settings.budget);
    for n in 0..settings.budget {
        let mut rng = stream(seed, &[tags::EPISODE, n as u64]);
        let episode = run_episode(task, policy, n, &memory, settings.temperature, &mut rng)?;
        let last = episode.success || n + 1 == settings.budget;
        if last {
            reflections.push(None);
            episodes.push(episode);
            break;
        }
        let step = if settings.memory_mode.keeps_reflections() {
            Some(reflect(task, policy, &episode, &memory, settings.reflection_temperature)?)
        } else {
            None
        };
        memory = update_memory(&memory, &episode, step.as_ref().map(|s| &s.reflection));
        reflections.push(step);
        episodes.push(episode);
    }
    Ok(Trial { task: *task, episodes, reflections, budget: settings.budget, memory_mode: settings.memory_mode, seed })
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub trial_id: u64,
    pub episode: usize,
    pub step: usize,
    pub obs_text: String,
    pub action: String,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Append-only destination for trajectory records.
pub trait TrajectorySink {
    fn append(&mut self, record: &StepRecord) -> io::Result<()>;
}

impl TrajectorySink for Vec<StepRecord> {
    fn append(&mut self, record: &StepRecord) -> io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Writes every step of `trial` to `sink` in order.
pub fn emit_trial(trial_id: u64, trial: &Trial, sink: &mut dyn TrajectorySink) -> io::Result<usize> {
    let mut written = 0;
    for ep in &trial.episodes {
        for s in &ep.steps {
            sink.append(&StepRecord {
                trial_id,
                episode: ep.index,
                step: s.index,
                obs_text: s.observation_text(),
                action: s.action.to_string(),
                reward: s.reward,
                done: s.done,
                success: s.success,
            })?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Cell, Direction, EnvKind, MinesweeperState};
    use crate::memory::StructuredReflection;
    use crate::policy::{Decision, ParametricPolicy, PolicyError};

    /// Replays a fixed action list, one action per turn.
    struct Script(Vec<Action>);

    impl PolicyBackend for Script {
        fn decide(&self, ctx: &TurnContext<'_>, _rng: &mut StreamRng) -> Result<Decision, PolicyError> {
            self.0
                .get(ctx.history.len())
                .map(|a| Decision { actions: vec![*a], prompt: None })
                .ok_or(PolicyError::NoActions)
        }

        fn reflect(&self, ctx: &ReflectContext<'_>) -> Result<Reflection, PolicyError> {
            Ok(Reflection::Structured(StructuredReflection::from_final_state(ctx.episode, ctx.final_state)))
        }
    }

    fn settings(budget: usize, memory_mode: MemoryMode) -> TrialSettings {
        TrialSettings { budget, memory_mode, temperature: 1.0, reflection_temperature: 1.0 }
    }

    #[test]
    fn oracle_replay_succeeds() {
        let task = TaskInstance::sokoban(6, 2, 17);
        let Env::Sokoban(s) = Env::generate(&task).unwrap() else { unreachable!() };
        let script = Script(s.oracle_solution().iter().map(|&d| Action::Move(d)).collect());
        let trial = run_trial(&task, &script, &settings(3, MemoryMode::Both), 0).unwrap();
        assert_eq!(trial.episodes.len(), 1);
        assert!(trial.success());
        assert_eq!(trial.episodes[0].steps.last().unwrap().reward, 10.0);
        trial.check_invariants().unwrap();
    }

    #[test]
    fn horizon_of_one() {
        let task = TaskInstance::sokoban(6, 2, 3).with_max_steps(1);
        let policy = ParametricPolicy::uniform(EnvKind::Sokoban, 6);
        let ep = run_episode(&task, &policy, 0, &MemoryState::default(), 1.0, &mut stream(1, &[])).unwrap();
        assert_eq!(ep.steps.len(), 1);
        assert!(ep.steps[0].done);
    }

    #[test]
    fn failed_trials_use_the_whole_budget() {
        let task = TaskInstance::sokoban(6, 2, 5);
        let script = Script(vec![Action::Move(Direction::Up); 40]);
        let trial = run_trial(&task, &script, &settings(3, MemoryMode::Both), 9).unwrap();
        assert_eq!(trial.episodes.len(), 3);
        assert_eq!(trial.reflections.iter().filter(|r| r.is_some()).count(), 2);
        assert!(trial.reflections[2].is_none());
        for (n, ep) in trial.episodes.iter().enumerate() {
            assert_eq!(ep.memory_used.episode_summaries.len(), n);
            assert_eq!(
                ep.memory_used.episode_summaries.iter().map(|s| s.episode).collect::<Vec<_>>(),
                (0..n).collect::<Vec<_>>()
            );
        }
        trial.check_invariants().unwrap();
    }

    #[test]
    fn trials_are_reproducible() {
        let task = TaskInstance::minesweeper(6, 3, 8);
        let policy = ParametricPolicy::uniform(EnvKind::MineSweeper, 6);
        let a = run_trial(&task, &policy, &settings(3, MemoryMode::Both), 77).unwrap();
        let b = run_trial(&task, &policy, &settings(3, MemoryMode::Both), 77).unwrap();
        assert_eq!(a, b);
        a.check_invariants().unwrap();
    }

    #[test]
    fn explosion_is_remembered() {
        let task = TaskInstance::minesweeper(6, 3, 21);
        // Find the mine layout produced by a first click at (1, 1), then step on a mine.
        let mut probe = Env::generate(&task).unwrap();
        probe.step(&Action::Reveal(Cell::new(0, 0))).unwrap();
        let Env::MineSweeper(ms) = &probe else { unreachable!() };
        let mine = (0..36).map(|i| Cell::from_index(i, 6)).find(|&c| ms.is_mine(c)).unwrap();
        let script = Script(vec![Action::Reveal(Cell::new(0, 0)), Action::Reveal(mine)]);
        let trial = run_trial(&task, &script, &settings(2, MemoryMode::Both), 0).unwrap();
        let Some(step) = &trial.reflections[0] else { panic!("no reflection") };
        let Reflection::Structured(r) = &step.reflection else { panic!("unstructured") };
        assert_eq!(r.known_mines, vec![mine]);
        let _: Option<&MinesweeperState> = None;
    }

    #[test]
    fn inadmissible_action_fails_the_episode() {
        let task = TaskInstance::minesweeper(6, 3, 2);
        let script = Script(vec![Action::Move(Direction::Up)]);
        let ep = run_episode(&task, &script, 0, &MemoryState::default(), 1.0, &mut stream(0, &[])).unwrap();
        assert!(ep.steps.is_empty() && !ep.success && ep.aborted.is_some());
    }

    #[test]
    fn memory_modes() {
        let task = TaskInstance::minesweeper(6, 3, 2);
        let script = Script(vec![Action::Reveal(Cell::new(2, 2))]);
        let ep = run_episode(&task, &script, 0, &MemoryState::default(), 1.0, &mut stream(0, &[])).unwrap();
        let refl = Reflection::Text("try the corner".into());
        let m = update_memory(&MemoryState::new(MemoryMode::ReflectionOnly), &ep, Some(&refl));
        assert!(m.episode_summaries[0].actions.is_empty() && m.reflections.len() == 1);
        let m = update_memory(&MemoryState::new(MemoryMode::TrajectoryOnly), &ep, Some(&refl));
        assert!(!m.episode_summaries[0].actions.is_empty() && m.reflections.is_empty());
        let m = update_memory(&MemoryState::new(MemoryMode::Both), &ep, Some(&refl));
        assert!(!m.episode_summaries[0].actions.is_empty() && m.reflections.len() == 1);
        let m = update_memory(&MemoryState::new(MemoryMode::ReflectionOnly), &ep, Some(&Reflection::Text(" ".into())));
        assert!(!m.episode_summaries[0].actions.is_empty());
        m.check_invariants().unwrap();
        assert!(update_memory(&MemoryState::new(MemoryMode::Disabled), &ep, Some(&refl)).is_empty());
    }

    #[test]
    fn sink_receives_every_step() {
        let task = TaskInstance::minesweeper(6, 3, 4);
        let policy = ParametricPolicy::uniform(EnvKind::MineSweeper, 6);
        let trial = run_trial(&task, &policy, &settings(3, MemoryMode::Both), 5).unwrap();
        let mut sink: Vec<StepRecord> = Vec::new();
        assert_eq!(emit_trial(3, &trial, &mut sink).unwrap(), trial.step_count());
        assert!(sink.iter().all(|r| r.trial_id == 3));
    }
}
