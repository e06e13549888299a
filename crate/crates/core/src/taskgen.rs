//! Seeded task streams.
//!
//! Three demand shapes are supported:
//!
//! * `Mk { window, kinds_per_window }`: every `window` consecutive tasks
//!   contain at most `kinds_per_window` distinct kinds, while the popular set
//!   drifts over time.
//! * `Zhang`: 70% of the kinds share 10% of the demand, 20% share 20%, and the
//!   remaining 10% take 70%.
//! * `Rdd`: i.i.d. draws proportional to a frequency table, typically loaded
//!   from a CSV of historical demand.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ItemKind, PortId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub kind: ItemKind,
    pub port: PortId,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskGenError {
    #[error("invalid M-K parameters: window {window}, kinds per window {per_window}, universe {kinds}")]
    InvalidMk { window: usize, per_window: usize, kinds: usize },
    #[error("zhang classes need at least one kind each; universe of {0} kinds is too small")]
    ZhangTooSmall(usize),
    #[error("frequency table is empty")]
    EmptyTable,
    #[error("frequency table has no positive weight")]
    ZeroWeights,
    #[error("invalid weight {weight} for kind {kind}")]
    BadWeight { kind: u64, weight: f64 },
    #[error("frequency table: {0}")]
    TableFormat(String),
}

/// Which distribution to draw kinds from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DistributionKind {
    Mk { window: usize, kinds_per_window: usize },
    Zhang,
    Rdd { table: FrequencyTable },
}

/// Full description of a stream: distribution, kind universe and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    /// Size of the item-kind universe (number of shelves).
    pub kinds: usize,
    pub seed: u64,
    pub port: PortId,
}

/// `item_kind -> weight` pairs in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub entries: Vec<(u64, f64)>,
}

impl FrequencyTable {
    /// Parses an `item_kind,weight` CSV with header.
    pub fn from_csv(text: &str) -> Result<Self, TaskGenError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| TaskGenError::TableFormat(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["item_kind", "weight"] {
            return Err(TaskGenError::TableFormat("header must be `item_kind,weight`".into()));
        }
        let mut entries = Vec::new();
        for record in reader.deserialize::<(u64, f64)>() {
            entries.push(record.map_err(|e| TaskGenError::TableFormat(e.to_string()))?);
        }
        let table = Self { entries };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), TaskGenError> {
        if self.entries.is_empty() {
            return Err(TaskGenError::EmptyTable);
        }
        for &(kind, weight) in &self.entries {
            if !weight.is_finite() || weight < 0.0 {
                return Err(TaskGenError::BadWeight { kind, weight });
            }
        }
        if self.entries.iter().all(|&(_, w)| w == 0.0) {
            return Err(TaskGenError::ZeroWeights);
        }
        Ok(())
    }
}

/// Rounds half away from zero, the usual nearest-integer rounding.
fn round_share(kinds: usize, share: f64) -> usize {
    (kinds as f64 * share).round() as usize
}

/// Sizes of the (cold, warm, hot) Zhang classes.
pub fn zhang_class_sizes(kinds: usize) -> Result<[usize; 3], TaskGenError> {
    let cold = round_share(kinds, 0.7);
    let warm = round_share(kinds, 0.2);
    if cold == 0 || warm == 0 || cold + warm >= kinds {
        return Err(TaskGenError::ZhangTooSmall(kinds));
    }
    Ok([cold, warm, kinds - cold - warm])
}

/// Probability mass of the (cold, warm, hot) classes.
pub const ZHANG_CLASS_MASS: [f64; 3] = [0.1, 0.2, 0.7];

/// An unbounded, deterministic task iterator.
#[derive(Debug, Clone)]
pub struct TaskStream {
    port: PortId,
    rng: ChaCha8Rng,
    source: Source,
    emitted: u64,
}

#[derive(Debug, Clone)]
enum Source {
    Mk(MkState),
    Zhang { classes: [Vec<ItemKind>; 3] },
    Rdd { kinds: Vec<ItemKind>, index: WeightedIndex<f64> },
}

#[derive(Debug, Clone)]
struct MkState {
    window: usize,
    per_window: usize,
    universe: usize,
    pool: Vec<ItemKind>,
    /// Retired kind and emissions since its retirement.
    pending: Option<(ItemKind, usize)>,
}

impl TaskStream {
    pub fn new(spec: &DistributionSpec) -> Result<Self, TaskGenError> {
        match &spec.kind {
            DistributionKind::Mk { window, kinds_per_window } => {
                gen_mk(*window, *kinds_per_window, spec.kinds, spec.seed, spec.port)
            }
            DistributionKind::Zhang => gen_zhang(spec.kinds, spec.seed, spec.port),
            DistributionKind::Rdd { table } => gen_rdd(table, spec.kinds, spec.seed, spec.port),
        }
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn next_task(&mut self) -> Task {
        let kind = match &mut self.source {
            Source::Mk(state) => state.next(&mut self.rng),
            Source::Zhang { classes } => {
                let u: f64 = self.rng.gen();
                let class = if u < ZHANG_CLASS_MASS[0] {
                    0
                } else if u < ZHANG_CLASS_MASS[0] + ZHANG_CLASS_MASS[1] {
                    1
                } else {
                    2
                };
                *classes[class].choose(&mut self.rng).expect("classes are non-empty")
            }
            Source::Rdd { kinds, index } => kinds[index.sample(&mut self.rng)],
        };
        self.emitted += 1;
        Task { kind, port: self.port }
    }

    pub fn take_kinds(&mut self, n: usize) -> Vec<ItemKind> {
        (0..n).map(|_| self.next_task().kind).collect()
    }
}

impl Iterator for TaskStream {
    type Item = Task;

    fn next(&mut self) -> Option<Task> {
        Some(self.next_task())
    }
}

impl MkState {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> ItemKind {
        if let Some((retired, since)) = self.pending {
            if since >= self.window {
                let fresh: Vec<ItemKind> = (0..self.universe as u32)
                    .map(ItemKind)
                    .filter(|k| *k != retired && !self.pool.contains(k))
                    .collect();
                let pick = *fresh.choose(rng).expect("universe exceeds pool");
                self.pool.push(pick);
                self.pending = None;
            }
        }
        // Retiring needs a spare kind to add later and one to keep emitting.
        let can_rotate = self.per_window >= 2 && self.universe > self.per_window;
        if self.pending.is_none() && can_rotate && rng.gen_bool(1.0 / self.window as f64) {
            let at = rng.gen_range(0..self.pool.len());
            let retired = self.pool.swap_remove(at);
            self.pending = Some((retired, 0));
        }
        let kind = *self.pool.choose(rng).expect("pool is non-empty");
        if let Some((_, since)) = self.pending.as_mut() {
            *since += 1;
        }
        kind
    }
}

/// M-K stream: at most `per_window` distinct kinds in any `window`
/// consecutive tasks.
///
/// An active pool of `per_window` kinds is sampled uniformly. With
/// probability `1/window` per emission one pool kind is retired; its
/// replacement joins only after `window` emissions without it, so no window
/// sees both. With `per_window == 1` or `per_window == kinds` the pool never
/// rotates.
pub fn gen_mk(
    window: usize,
    per_window: usize,
    kinds: usize,
    seed: u64,
    port: PortId,
) -> Result<TaskStream, TaskGenError> {
    if window == 0 || per_window == 0 || per_window > kinds {
        return Err(TaskGenError::InvalidMk { window, per_window, kinds });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<ItemKind> =
        rand::seq::index::sample(&mut rng, kinds, per_window).into_iter().map(|i| ItemKind(i as u32)).collect();
    let state = MkState { window, per_window, universe: kinds, pool, pending: None };
    Ok(TaskStream { port, rng, source: Source::Mk(state), emitted: 0 })
}

/// Zhang 7:2:1 stream with a seeded partition of the kinds into classes.
pub fn gen_zhang(kinds: usize, seed: u64, port: PortId) -> Result<TaskStream, TaskGenError> {
    let [cold, warm, _] = zhang_class_sizes(kinds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<ItemKind> = (0..kinds as u32).map(ItemKind).collect();
    all.shuffle(&mut rng);
    let hot = all.split_off(cold + warm);
    let warm_set = all.split_off(cold);
    let classes = [all, warm_set, hot];
    Ok(TaskStream { port, rng, source: Source::Zhang { classes }, emitted: 0 })
}

/// Kinds of each Zhang class for a given seed, as used by [`gen_zhang`].
pub fn zhang_classes(kinds: usize, seed: u64) -> Result<[Vec<ItemKind>; 3], TaskGenError> {
    match gen_zhang(kinds, seed, PortId(0))?.source {
        Source::Zhang { classes } => Ok(classes),
        _ => unreachable!(),
    }
}

/// Stream drawing kinds proportionally to `table`.
///
/// Table ids are used directly when they all fit in `[0, kinds)`. Otherwise
/// entries go onto kinds in seeded order; distinct kinds while they last,
/// then sharing kinds round-robin when the table is larger than the map.
pub fn gen_rdd(table: &FrequencyTable, kinds: usize, seed: u64, port: PortId) -> Result<TaskStream, TaskGenError> {
    table.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
    for &(k, w) in &table.entries {
        *merged.entry(k).or_default() += w;
    }
    let ids: Vec<u64> = merged.keys().copied().collect();
    let mapped: Vec<ItemKind> = if ids.iter().all(|&k| (k as usize) < kinds) {
        ids.iter().map(|&k| ItemKind(k as u32)).collect()
    } else {
        let mut universe: Vec<ItemKind> = (0..kinds as u32).map(ItemKind).collect();
        universe.shuffle(&mut rng);
        (0..ids.len()).map(|i| universe[i % kinds]).collect()
    };
    let index = WeightedIndex::new(merged.values().copied()).map_err(|_| TaskGenError::ZeroWeights)?;
    Ok(TaskStream { port, rng, source: Source::Rdd { kinds: mapped, index }, emitted: 0 })
}

/// Brute-force window check: `Err(start)` for the first window of length
/// `window` holding more than `max_kinds` distinct kinds. Sequences shorter
/// than the window are checked as a whole.
pub fn verify_mk_window(tasks: &[ItemKind], window: usize, max_kinds: usize) -> Result<(), usize> {
    let distinct = |w: &[ItemKind]| {
        let mut seen: Vec<ItemKind> = w.to_vec();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    };
    if tasks.len() <= window {
        return if distinct(tasks) <= max_kinds { Ok(()) } else { Err(0) };
    }
    for start in 0..=tasks.len() - window {
        if distinct(&tasks[start..start + window]) > max_kinds {
            return Err(start);
        }
    }
    Ok(())
}
