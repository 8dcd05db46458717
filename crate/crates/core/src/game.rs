//! Multi-level Stackelberg games over finite action sets, solved by backward
//! induction.
//!
//! Level 0 is the leader. Utilities are extensional tables indexed by
//! context and the full action profile, so a level's payoff may depend on
//! every other level's choice. Levels are 0-based throughout this module.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Utility gap below which two actions count as tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("game needs at least one level")]
    NoLevels,
    #[error("game needs at least one context")]
    NoContexts,
    #[error("level {0} has an empty action set")]
    EmptyActions(String),
    #[error("utility table has {got} entries, expected {expected}")]
    UtilityShape { expected: usize, got: usize },
    #[error("utility table contains a non-finite value")]
    NonFinite,
    #[error("level {level} expects an upstream profile of length {level}, got {got}")]
    UpstreamLength { level: usize, got: usize },
    #[error("context index {0} out of range")]
    UnknownContext(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub label: String,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    levels: Vec<Level>,
    contexts: Vec<String>,
    /// `[context][profile][level]`, profiles in mixed radix with level 0 most
    /// significant.
    utility: Vec<f64>,
}

impl GameSpec {
    pub fn new(levels: Vec<Level>, contexts: Vec<String>, utility: Vec<f64>) -> Result<Self, GameError> {
        if levels.is_empty() {
            return Err(GameError::NoLevels);
        }
        if contexts.is_empty() {
            return Err(GameError::NoContexts);
        }
        if let Some(l) = levels.iter().find(|l| l.actions.is_empty()) {
            return Err(GameError::EmptyActions(l.label.clone()));
        }
        let profiles: usize = levels.iter().map(|l| l.actions.len()).product();
        let expected = contexts.len() * profiles * levels.len();
        if utility.len() != expected {
            return Err(GameError::UtilityShape {
                expected,
                got: utility.len(),
            });
        }
        if utility.iter().any(|u| !u.is_finite()) {
            return Err(GameError::NonFinite);
        }
        Ok(Self {
            levels,
            contexts,
            utility,
        })
    }

    /// Builds a game from a closure `u(context, profile) -> per-level utilities`.
    pub fn from_fn<F>(levels: Vec<Level>, contexts: Vec<String>, mut u: F) -> Result<Self, GameError>
    where
        F: FnMut(usize, &[usize]) -> Vec<f64>,
    {
        let sizes: Vec<usize> = levels.iter().map(|l| l.actions.len()).collect();
        let profiles: usize = sizes.iter().product();
        let mut utility = Vec::with_capacity(contexts.len() * profiles * levels.len());
        for c in 0..contexts.len() {
            for idx in 0..profiles {
                let profile = decode_profile(idx, &sizes);
                let row = u(c, &profile);
                utility.extend(row);
            }
        }
        Self::new(levels, contexts, utility)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn contexts(&self) -> &[String] {
        &self.contexts
    }

    pub fn num_actions(&self, level: usize) -> usize {
        self.levels[level].actions.len()
    }

    pub fn num_profiles(&self) -> usize {
        self.levels.iter().map(|l| l.actions.len()).product()
    }

    fn profile_index(&self, profile: &[usize]) -> usize {
        profile
            .iter()
            .zip(&self.levels)
            .fold(0, |acc, (&a, l)| acc * l.actions.len() + a)
    }

    /// `U_level(context, profile)` for a complete profile.
    pub fn utility(&self, context: usize, profile: &[usize], level: usize) -> f64 {
        let m = self.levels.len();
        let base = (context * self.num_profiles() + self.profile_index(profile)) * m;
        self.utility[base + level]
    }

    /// Completes `prefix` with the backward-induction responses of all
    /// remaining levels, returning the levels whose choice was tied along the
    /// completed path. Visits each leaf of the subtree once.
    fn complete(&self, context: usize, prefix: &mut Vec<usize>) -> Vec<usize> {
        let level = prefix.len();
        if level == self.levels.len() {
            return Vec::new();
        }
        let mut best: Option<(Vec<usize>, f64, Vec<usize>)> = None;
        let mut tied = false;
        for a in 0..self.num_actions(level) {
            let mut profile = prefix.clone();
            profile.push(a);
            let ties = self.complete(context, &mut profile);
            let value = self.utility(context, &profile, level);
            match &best {
                None => best = Some((profile, value, ties)),
                Some((_, b, _)) if value > b + TIE_TOL => {
                    best = Some((profile, value, ties));
                    tied = false;
                }
                Some((_, b, _)) if (value - b).abs() <= TIE_TOL => tied = true,
                _ => {}
            }
        }
        let (profile, _, mut ties) = best.expect("non-empty action set");
        *prefix = profile;
        if tied {
            ties.push(level);
        }
        ties
    }

    /// Best response at level `prefix.len()`: `(action, value)`.
    fn respond(&self, context: usize, prefix: &[usize]) -> (usize, f64) {
        let level = prefix.len();
        let mut profile = prefix.to_vec();
        self.complete(context, &mut profile);
        (profile[level], self.utility(context, &profile, level))
    }
}

fn decode_profile(mut idx: usize, sizes: &[usize]) -> Vec<usize> {
    let mut profile = vec![0; sizes.len()];
    for (slot, &size) in profile.iter_mut().zip(sizes).rev() {
        *slot = idx % size;
        idx /= size;
    }
    profile
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPath {
    /// `decision[context][level]`.
    pub decision: Vec<Vec<usize>>,
    /// `(context, level)` pairs where the on-path choice was tied.
    pub tie_report: BTreeSet<(usize, usize)>,
    pub utilities_at_path: Vec<Vec<f64>>,
}

/// Subgame perfect equilibrium path for every context.
pub fn solve_spe(g: &GameSpec) -> SolutionPath {
    let mut decision = Vec::with_capacity(g.contexts.len());
    let mut tie_report = BTreeSet::new();
    let mut utilities_at_path = Vec::with_capacity(g.contexts.len());
    for c in 0..g.contexts.len() {
        let mut profile = Vec::with_capacity(g.num_levels());
        let ties = g.complete(c, &mut profile);
        tie_report.extend(ties.into_iter().map(|l| (c, l)));
        utilities_at_path.push((0..g.num_levels()).map(|l| g.utility(c, &profile, l)).collect());
        decision.push(profile);
    }
    SolutionPath {
        decision,
        tie_report,
        utilities_at_path,
    }
}

/// SPE action and utility of `level` given the actions of the levels above it.
pub fn best_response(
    g: &GameSpec,
    level: usize,
    context: usize,
    upstream: &[usize],
) -> Result<(usize, f64), GameError> {
    if upstream.len() != level || level >= g.num_levels() {
        return Err(GameError::UpstreamLength {
            level,
            got: upstream.len(),
        });
    }
    if context >= g.contexts.len() {
        return Err(GameError::UnknownContext(context));
    }
    Ok(g.respond(context, upstream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub context: usize,
    pub level: usize,
    pub action: usize,
    pub path_utility: f64,
    pub deviation_utility: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub violations: Vec<Deviation>,
}

impl DeviationReport {
    pub fn is_equilibrium(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the no-profitable-deviation property of `path` at every level,
/// with downstream levels re-optimizing after each deviation.
pub fn verify_spe(g: &GameSpec, path: &SolutionPath) -> DeviationReport {
    let mut violations = Vec::new();
    for (c, profile) in path.decision.iter().enumerate() {
        for level in 0..g.num_levels() {
            let on_path = g.utility(c, profile, level);
            for alt in 0..g.num_actions(level) {
                if alt == profile[level] {
                    continue;
                }
                let mut dev = profile[..level].to_vec();
                dev.push(alt);
                g.complete(c, &mut dev);
                let u = g.utility(c, &dev, level);
                if u > on_path + TIE_TOL {
                    violations.push(Deviation {
                        context: c,
                        level,
                        action: alt,
                        path_utility: on_path,
                        deviation_utility: u,
                    });
                }
            }
        }
    }
    DeviationReport { violations }
}

/// Export keyed by context and level labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPath {
    pub contexts: BTreeMap<String, BTreeMap<String, LabeledDecision>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDecision {
    pub action: String,
    pub utility: f64,
    pub tie: bool,
}

pub fn label_path(g: &GameSpec, path: &SolutionPath) -> LabeledPath {
    let mut contexts = BTreeMap::new();
    for (c, profile) in path.decision.iter().enumerate() {
        let mut levels = BTreeMap::new();
        for (l, &a) in profile.iter().enumerate() {
            levels.insert(
                g.levels[l].label.clone(),
                LabeledDecision {
                    action: g.levels[l].actions[a].clone(),
                    utility: path.utilities_at_path[c][l],
                    tie: path.tie_report.contains(&(c, l)),
                },
            );
        }
        contexts.insert(g.contexts[c].clone(), levels);
    }
    LabeledPath { contexts }
}
