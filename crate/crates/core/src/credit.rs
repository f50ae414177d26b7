//! Returns and advantages.
//!
//! Within an episode the return is the usual discounted reward-to-go
//! `g_t = r_t + gamma_step * g_{t+1}`. Across episodes every step also
//! collects the discounted start returns of the later episodes of the same
//! trial:
//!
//! ```text
//! G_t^(n) = g_t^(n) + sum_{m > n} gamma_traj^(m - n) * g_0^(m)
//!         = g_t^(n) + gamma_traj * G_0^(n+1)
//! ```
//!
//! The trial objective is `G_0^(0)`, which equals
//! `sum_n gamma_traj^n sum_t gamma_step^t r_t^(n)`.

use serde::{Deserialize, Serialize};

use crate::rollout::Trial;

/// Below this group standard deviation, normalized advantages are zero.
pub const STD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CreditError {
    #[error("{name} = {value} is outside [0, 1]")]
    DiscountOutOfRange { name: &'static str, value: f64 },
    #[error("the {estimator:?} estimator needs a group of at least 2 trials, got {size}")]
    GroupTooSmall { estimator: Estimator, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscountConfig {
    pub gamma_step: f64,
    pub gamma_traj: f64,
}

impl Default for DiscountConfig {
    fn default() -> Self {
        DiscountConfig { gamma_step: 1.0, gamma_traj: 0.6 }
    }
}

impl DiscountConfig {
    pub fn new(gamma_step: f64, gamma_traj: f64) -> Result<Self, CreditError> {
        let c = DiscountConfig { gamma_step, gamma_traj };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CreditError> {
        for (name, value) in [("gamma_step", self.gamma_step), ("gamma_traj", self.gamma_traj)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CreditError::DiscountOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

/// Discounted reward-to-go of one episode.
pub fn within_episode_returns(rewards: &[f64], gamma_step: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma_step * acc;
        g[t] = acc;
    }
    g
}

/// Cross-episode returns from per-episode reward-to-go tables. Also returns
/// the start return `G_0^(n)` of every episode; an episode without steps
/// contributes `g_0 = 0`.
pub fn cross_episode_returns(g: &[Vec<f64>], gamma_traj: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = g.len();
    let mut starts = vec![0.0; m];
    let mut big = vec![Vec::new(); m];
    let mut later = 0.0;
    for n in (0..m).rev() {
        let carry = gamma_traj * later;
        big[n] = g[n].iter().map(|v| v + carry).collect();
        starts[n] = g[n].first().copied().unwrap_or(0.0) + carry;
        later = starts[n];
    }
    (big, starts)
}

/// Returns of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnTable {
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub big_g: Vec<Vec<f64>>,
    /// `G_0^(n)` per episode.
    pub starts: Vec<f64>,
    pub gamma_traj: f64,
}

impl ReturnTable {
    pub fn from_rewards(rewards: &[Vec<f64>], discount: &DiscountConfig) -> Self {
        let g: Vec<Vec<f64>> = rewards.iter().map(|r| within_episode_returns(r, discount.gamma_step)).collect();
        let (big_g, starts) = cross_episode_returns(&g, discount.gamma_traj);
        ReturnTable { g, big_g, starts, gamma_traj: discount.gamma_traj }
    }

    pub fn from_trial(trial: &Trial, discount: &DiscountConfig) -> Self {
        let rewards: Vec<Vec<f64>> = trial.episodes.iter().map(|e| e.rewards()).collect();
        Self::from_rewards(&rewards, discount)
    }

    pub fn episodes(&self) -> usize {
        self.g.len()
    }

    pub fn trial_objective(&self) -> f64 {
        self.starts.first().copied().unwrap_or(0.0)
    }

    /// Return credited to the reflection written after episode `n`: the
    /// discounted outcome of everything that follows it.
    pub fn reflection_return(&self, n: usize) -> f64 {
        self.starts.get(n + 1).map_or(0.0, |s| self.gamma_traj * s)
    }
}

pub fn trial_objective(table: &ReturnTable) -> f64 {
    table.trial_objective()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Z-score of the trial objective within the group, shared by every action of the trial.
    #[default]
    GroupNorm,
    /// Per-episode z-score: `G_t^(n)` normalized by the group statistics of
    /// `G_0^(n)` over trials that reached episode `n`. Falls back to the
    /// trial-level z-score where fewer than two trials reached `n`.
    GroupNormPerEpisode,
    /// Trial objective minus the mean objective of the other trials.
    LeaveOneOut,
    /// `G_t^(n)` minus the group mean objective.
    MeanBaseline,
}

impl Estimator {
    pub fn min_group(self) -> usize {
        match self {
            Estimator::MeanBaseline => 1,
            _ => 2,
        }
    }
}

/// Advantages of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAdvantages {
    /// Per episode, per step.
    pub actions: Vec<Vec<f64>>,
    /// `reflections[n]` is credited to the reflection after episode `n`.
    pub reflections: Vec<f64>,
    /// Trial-level value the estimator assigned before any broadcast.
    pub trial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageTable {
    pub estimator: Estimator,
    pub trials: Vec<TrialAdvantages>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn z(value: f64, mean: f64, std: f64) -> f64 {
    if std < STD_EPSILON {
        0.0
    } else {
        (value - mean) / std
    }
}

fn broadcast(table: &ReturnTable, value: f64) -> TrialAdvantages {
    TrialAdvantages {
        actions: table.g.iter().map(|ep| vec![value; ep.len()]).collect(),
        reflections: vec![value; table.episodes().saturating_sub(1)],
        trial: value,
    }
}

/// Advantages for one group of trials on the same task.
pub fn advantages(group: &[ReturnTable], estimator: Estimator) -> Result<AdvantageTable, CreditError> {
    if group.len() < estimator.min_group() {
        return Err(CreditError::GroupTooSmall { estimator, size: group.len() });
    }
    let objectives: Vec<f64> = group.iter().map(|t| t.trial_objective()).collect();
    let (mean, std) = mean_std(&objectives);
    let trials = match estimator {
        Estimator::GroupNorm => group.iter().zip(&objectives).map(|(t, &j)| broadcast(t, z(j, mean, std))).collect(),
        Estimator::LeaveOneOut => {
            let total: f64 = objectives.iter().sum();
            let others = (group.len() - 1) as f64;
            group.iter().zip(&objectives).map(|(t, &j)| broadcast(t, j - (total - j) / others)).collect()
        }
        Estimator::MeanBaseline => group
            .iter()
            .zip(&objectives)
            .map(|(t, &j)| TrialAdvantages {
                actions: t.big_g.iter().map(|ep| ep.iter().map(|v| v - mean).collect()).collect(),
                reflections: (0..t.episodes().saturating_sub(1)).map(|n| t.reflection_return(n) - mean).collect(),
                trial: j - mean,
            })
            .collect(),
        Estimator::GroupNormPerEpisode => {
            let depth = group.iter().map(|t| t.episodes()).max().unwrap_or(0);
            let stats: Vec<Option<(f64, f64)>> = (0..depth)
                .map(|n| {
                    let starts: Vec<f64> = group.iter().filter_map(|t| t.starts.get(n).copied()).collect();
                    (starts.len() >= 2).then(|| mean_std(&starts))
                })
                .collect();
            group
                .iter()
                .zip(&objectives)
                .map(|(t, &j)| {
                    let fallback = z(j, mean, std);
                    let norm = |n: usize, v: f64| match stats[n] {
                        Some((m, s)) => z(v, m, s),
                        None => fallback,
                    };
                    TrialAdvantages {
                        actions: t
                            .big_g
                            .iter()
                            .enumerate()
                            .map(|(n, ep)| ep.iter().map(|&v| norm(n, v)).collect())
                            .collect(),
                        reflections: (0..t.episodes().saturating_sub(1))
                            .map(|n| norm(n, t.reflection_return(n)))
                            .collect(),
                        trial: fallback,
                    }
                })
                .collect()
        }
    };
    Ok(AdvantageTable { estimator, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn within_episode_examples() {
        let g = within_episode_returns(&[0.0, 0.0, 10.0], 0.9);
        assert!(close(g[0], 8.1) && close(g[1], 9.0) && close(g[2], 10.0));
        assert_eq!(within_episode_returns(&[1.0, 2.0, 3.0], 0.0), vec![1.0, 2.0, 3.0]);
        assert_eq!(within_episode_returns(&[1.0, 2.0, 3.0], 1.0)[0], 6.0);
    }

    #[test]
    fn cross_episode_example() {
        let t = ReturnTable::from_rewards(&[vec![0.0], vec![0.0], vec![10.0]], &DiscountConfig::new(1.0, 0.6).unwrap());
        assert!(close(t.trial_objective(), 3.6));
        let t0 = ReturnTable::from_rewards(&[vec![1.0, 2.0], vec![5.0]], &DiscountConfig::new(0.5, 0.0).unwrap());
        assert_eq!(t0.big_g, t0.g);
    }

    #[test]
    fn sparse_success_objective() {
        // Success on the final step t* = 3 of episode 2.
        let d = DiscountConfig::new(0.9, 0.6).unwrap();
        let t = ReturnTable::from_rewards(&[vec![0.0; 5], vec![0.0; 2], vec![0.0, 0.0, 0.0, 10.0]], &d);
        assert!(close(t.trial_objective(), 0.36 * 0.9f64.powi(3) * 10.0));
    }

    #[test]
    fn reflection_return_uses_next_episode() {
        let d = DiscountConfig::new(1.0, 0.5).unwrap();
        let t = ReturnTable::from_rewards(&[vec![0.0, 0.0], vec![0.0, 10.0]], &d);
        assert!(close(t.reflection_return(0), 5.0));
        assert_eq!(t.reflection_return(1), 0.0);
    }

    #[test]
    fn discount_validation() {
        assert!(DiscountConfig::new(1.0, 1.5).is_err());
        assert!(DiscountConfig::new(-0.1, 0.5).is_err());
        assert!(DiscountConfig::new(0.0, 1.0).is_ok());
    }

    fn group(objectives: &[f64]) -> Vec<ReturnTable> {
        let d = DiscountConfig::new(1.0, 0.6).unwrap();
        objectives.iter().map(|&j| ReturnTable::from_rewards(&[vec![0.0, j]], &d)).collect()
    }

    #[test]
    fn group_norm_example() {
        let a = advantages(&group(&[10.0, 0.0, 0.0, 0.0]), Estimator::GroupNorm).unwrap();
        let want = [1.7320508075688772, -0.5773502691896258, -0.5773502691896258, -0.5773502691896258];
        for (t, w) in a.trials.iter().zip(want) {
            assert!((t.trial - w).abs() < 1e-12);
            assert!(t.actions[0].iter().all(|&v| v == t.trial));
        }
        let flat = advantages(&group(&[3.0; 5]), Estimator::GroupNorm).unwrap();
        assert!(flat.trials.iter().all(|t| t.trial == 0.0));
    }

    #[test]
    fn leave_one_out_example() {
        let a = advantages(&group(&[10.0, 0.0]), Estimator::LeaveOneOut).unwrap();
        assert_eq!(a.trials[0].trial, 10.0);
        assert_eq!(a.trials[1].trial, -10.0);
    }

    #[test]
    fn small_groups_are_rejected() {
        assert!(advantages(&group(&[1.0]), Estimator::GroupNorm).is_err());
        assert!(advantages(&group(&[1.0]), Estimator::MeanBaseline).is_ok());
    }

    #[test]
    fn per_episode_alignment() {
        let d = DiscountConfig::new(1.0, 0.5).unwrap();
        let g = vec![
            ReturnTable::from_rewards(&[vec![10.0]], &d),
            ReturnTable::from_rewards(&[vec![0.0], vec![10.0]], &d),
            ReturnTable::from_rewards(&[vec![0.0], vec![0.0]], &d),
        ];
        let a = advantages(&g, Estimator::GroupNormPerEpisode).unwrap();
        // Episode 0 starts: [10, 5, 0] -> z = [1.2247, 0, -1.2247].
        assert!((a.trials[0].actions[0][0] - 1.224744871391589).abs() < 1e-12);
        assert!(a.trials[1].actions[0][0].abs() < 1e-12);
        // Episode 1 starts: [10, 0] -> z = [1, -1].
        assert!((a.trials[1].actions[1][0] - 1.0).abs() < 1e-12);
        assert!((a.trials[2].actions[1][0] + 1.0).abs() < 1e-12);
        // Reflection after episode 0 of trial 1 carries 0.5 * 10 = 5 against episode-0 statistics.
        assert!(a.trials[1].reflections[0].abs() < 1e-12);
    }
}
