//! Property tests for returns, estimators, policies, trials and configs.

use std::collections::BTreeMap;

use proptest::prelude::*;

use trialrl::credit::{
    advantages, cross_episode_returns, within_episode_returns, DiscountConfig, Estimator, ReturnTable,
};
use trialrl::env::{Action, Cell, Env, EnvKind, MinesweeperState, TaskInstance};
use trialrl::eval::{pass_at_k, EvalSettings, Protocol};
use trialrl::harness::{Backend, RunConfig};
use trialrl::memory::{EpisodeSummary, MemoryMode, MemoryState, Reflection, StructuredReflection};
use trialrl::policy::features::minesweeper::KNOWN_MINE;
use trialrl::policy::prompt::{placeholders, substitute, TemplateId};
use trialrl::policy::{action_distribution, softmax, ParametricPolicy, PolicyParams};
use trialrl::rollout::{run_trial, TrialSettings};
use trialrl::trainer::TaskSampler;

fn rewards() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..=10.0, 0..=6), 1..=4)
}

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

proptest! {
    #[test]
    fn cross_episode_recursion(r in rewards(), gs in unit(), gt in unit()) {
        let table = ReturnTable::from_rewards(&r, &DiscountConfig::new(gs, gt).unwrap());
        for (n, ep) in r.iter().enumerate() {
            let next = table.starts.get(n + 1).copied().unwrap_or(0.0);
            let g = within_episode_returns(ep, gs);
            for (big, small) in table.big_g[n].iter().zip(&g) {
                prop_assert!((big - (small + gt * next)).abs() <= 1e-12);
            }
            let start = g.first().copied().unwrap_or(0.0) + gt * next;
            prop_assert!((table.starts[n] - start).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_trajectory_discount_isolates_episodes(r in rewards(), gs in unit()) {
        let g: Vec<Vec<f64>> = r.iter().map(|e| within_episode_returns(e, gs)).collect();
        let (big_g, _) = cross_episode_returns(&g, 0.0);
        prop_assert_eq!(big_g, g);
    }

    #[test]
    fn objective_is_monotone_in_trajectory_discount(r in rewards(), gs in unit(), a in unit(), b in unit()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at = |gt| ReturnTable::from_rewards(&r, &DiscountConfig::new(gs, gt).unwrap()).trial_objective();
        prop_assert!(at(lo) <= at(hi) + 1e-12);
    }

    #[test]
    fn estimator_invariants(objs in prop::collection::vec(prop::sample::select(vec![0.0, 6.0, 10.0]), 2..12)) {
        let d = DiscountConfig::default();
        let group: Vec<ReturnTable> = objs.iter().map(|&o| ReturnTable::from_rewards(&[vec![o]], &d)).collect();
        let n = objs.len() as f64;
        let constant = objs.iter().all(|&o| o == objs[0]);
        for est in [Estimator::GroupNorm, Estimator::LeaveOneOut, Estimator::MeanBaseline] {
            let adv: Vec<f64> = advantages(&group, est).unwrap().trials.iter().map(|t| t.trial).collect();
            prop_assert!(adv.iter().sum::<f64>().abs() < 1e-9, "{:?} does not center", est);
            if constant {
                prop_assert!(adv.iter().all(|a| a.abs() < 1e-12));
            }
            // Better trials never get smaller advantages.
            for i in 0..objs.len() {
                for j in 0..objs.len() {
                    if objs[i] > objs[j] {
                        prop_assert!(adv[i] > adv[j]);
                    }
                }
            }
        }
        if !constant {
            let adv: Vec<f64> = advantages(&group, Estimator::GroupNorm).unwrap().trials.iter().map(|t| t.trial).collect();
            let var = adv.iter().map(|a| a * a).sum::<f64>() / n;
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_is_normalized(logits in prop::collection::vec(-50.0f64..50.0, 1..40), t in 0.05f64..5.0) {
        let p = softmax(&logits, t);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn trials_respect_their_invariants(
        seed in any::<u64>(),
        task_seed in any::<u64>(),
        budget in 1usize..4,
        mode in prop::sample::select(vec![MemoryMode::TrajectoryOnly, MemoryMode::ReflectionOnly, MemoryMode::Both, MemoryMode::Disabled]),
        kind in prop::sample::select(vec![EnvKind::MineSweeper, EnvKind::Sokoban]),
    ) {
        let task = match kind {
            EnvKind::MineSweeper => TaskInstance::minesweeper(4, 3, task_seed),
            _ => TaskInstance::sokoban(5, 1, task_seed),
        };
        let settings = TrialSettings { budget, memory_mode: mode, temperature: 1.0, reflection_temperature: 1.0 };
        let policy = ParametricPolicy::uniform(kind, task.board_size);
        let trial = run_trial(&task, &policy, &settings, seed).unwrap();
        prop_assert!(trial.check_invariants().is_ok(), "{:?}", trial.check_invariants());
        prop_assert!(trial.episodes.len() <= budget);
        for ep in &trial.episodes {
            prop_assert!(ep.memory_used.check_invariants().is_ok());
            if mode == MemoryMode::Disabled {
                prop_assert!(ep.memory_used.is_empty());
            }
        }
    }

    #[test]
    fn changing_one_substitution_changes_the_prompt(
        which in 0usize..4,
        k in any::<prop::sample::Index>(),
        a in "[a-z]{1,8}",
        b in "[a-z]{1,8}",
    ) {
        prop_assume!(a != b);
        let id = [TemplateId::SokobanStandard, TemplateId::SokobanReflection, TemplateId::MinesweeperStandard, TemplateId::MinesweeperReflection][which];
        let names = placeholders(id.text());
        let target = names[k.index(names.len())];
        let mut vars: BTreeMap<&str, String> = names.iter().map(|n| (*n, format!("<{n}>"))).collect();
        vars.insert(target, a);
        let first = substitute(id.text(), &vars).unwrap();
        vars.insert(target, b);
        let second = substitute(id.text(), &vars).unwrap();
        prop_assert_ne!(first, second);
    }

    #[test]
    fn run_configs_round_trip(
        seed in 0u64..=i64::MAX as u64,
        gt in unit(),
        gs in unit(),
        group in 2usize..32,
        episodes in 1usize..6,
        lr in 1e-4f64..10.0,
        kind in prop::sample::select(vec![EnvKind::MineSweeper, EnvKind::Sokoban, EnvKind::Coin]),
        k in 1usize..6,
        temp in 0.05f64..2.0,
        protocol in prop::sample::select(vec![Protocol::Independent, Protocol::SequentialWithMemory]),
        llm in any::<bool>(),
    ) {
        let sampler = match kind {
            EnvKind::MineSweeper => TaskSampler::new(kind, 6, 3),
            EnvKind::Sokoban => TaskSampler::new(kind, 6, 1),
            EnvKind::Coin => TaskSampler::new(kind, 10, 3),
        };
        let mut c = RunConfig::new(sampler, "runs/prop");
        c.seed = seed;
        c.backend = if llm && kind != EnvKind::Coin { Backend::Llm } else { Backend::Parametric };
        c.train.discount = DiscountConfig::new(gs, gt).unwrap();
        c.train.group_size = group;
        c.train.episodes = episodes;
        c.train.learning_rate = lr;
        c.eval.k_max = k;
        c.eval.temperature = temp;
        c.eval.protocol = protocol;
        prop_assert!(c.validate().is_ok());
        let text = c.to_toml();
        prop_assert_eq!(RunConfig::parse(&text, "prop.toml").unwrap(), c);
    }
}

#[test]
fn remembered_mine_is_less_likely() {
    let mine = Cell::new(1, 2);
    let board = MinesweeperState::with_mines(4, &[mine, Cell::new(3, 3)], 100).unwrap();
    let mut exploded = board.clone();
    exploded.reveal(mine).unwrap();
    let reflection = Reflection::Structured(StructuredReflection::from_final_state(0, &Env::MineSweeper(exploded)));

    let mut params = PolicyParams::zeros(EnvKind::MineSweeper, 4);
    params.weights[KNOWN_MINE] = -2.0;
    let env = Env::MineSweeper(board);
    let p = |memory: &MemoryState| {
        action_distribution(&params, &env, memory, 1.0).probability_of(&Action::Reveal(mine)).unwrap()
    };

    for mode in [MemoryMode::Both, MemoryMode::ReflectionOnly] {
        let first = MemoryState::new(mode);
        let mut second = MemoryState::new(mode);
        let actions = if mode.keeps_trajectories() { vec![Action::Reveal(mine)] } else { Vec::new() };
        second.episode_summaries.push(EpisodeSummary { episode: 0, success: false, actions });
        second.reflections.push(reflection.clone());
        assert!(p(&second) < p(&first), "{mode:?}");
    }
}

#[test]
fn pass_rates_are_monotone_and_reproducible() {
    let tasks = TaskSampler::new(EnvKind::MineSweeper, 4, 3).eval_tasks(40);
    let policy = ParametricPolicy::uniform(EnvKind::MineSweeper, 4);
    for protocol in [Protocol::Independent, Protocol::SequentialWithMemory] {
        let settings = EvalSettings { k_max: 4, protocol, seed: 5, ..Default::default() };
        let a = pass_at_k(&policy, &tasks, &settings).unwrap();
        a.check_invariants().unwrap();
        assert!(a.rates.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(pass_at_k(&policy, &tasks, &settings).unwrap(), a);
    }
}
