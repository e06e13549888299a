//! One-timestep joint move planning.
//!
//! [`Pibt`] is the reference planner: priority inheritance with
//! backtracking, one step at a time. [`GreedyPlanner`] is a deliberately weak
//! second implementation used for differential testing.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Coord, DistanceField, DistanceTable, GridMap};
use crate::ids::AgentId;

const NONE: u32 = u32::MAX;

/// Planner priority: agents that have waited longer for an arrival go first,
/// then lower agent ids.
///
/// `a > b` means `a` plans before `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Priority {
    /// Steps since this agent last reached a target.
    pub age: u64,
    pub agent: AgentId,
}

impl Priority {
    pub fn new(agent: AgentId) -> Self {
        Self { age: 0, agent }
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.age.cmp(&other.age).then_with(|| other.agent.cmp(&self.agent))
    }
}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Ages every priority by one step, resetting agents that just arrived.
pub fn update_priorities(priorities: &mut [Priority], arrived: &[bool]) {
    assert_eq!(priorities.len(), arrived.len());
    for (p, &hit) in priorities.iter_mut().zip(arrived) {
        p.age = if hit { 0 } else { p.age + 1 };
    }
}

/// Indices of `priorities` from highest to lowest.
pub fn priority_order(priorities: &[Priority]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..priorities.len()).collect();
    order.sort_by(|&a, &b| priorities[b].cmp(&priorities[a]));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanAgent {
    pub id: AgentId,
    pub current: Coord,
    pub target: Coord,
    pub priority: Priority,
}

/// Everything a planner may look at for one step.
#[derive(Debug, Clone, Copy)]
pub struct StepRequest<'a> {
    pub map: &'a GridMap,
    /// Must hold a field for every agent target.
    pub distances: &'a DistanceTable,
    pub agents: &'a [PlanAgent],
    pub seed: u64,
}

/// Next cell for each agent, aligned with [`StepRequest::agents`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub moves: Vec<Coord>,
}

impl StepPlan {
    pub fn wait_all(req: &StepRequest<'_>) -> Self {
        Self { moves: req.agents.iter().map(|a| a.current).collect() }
    }
}

pub trait StepPlanner: Send + Sync {
    fn name(&self) -> &'static str;

    /// Plans one collision-free step. Must be a pure function of `req`.
    fn plan_step(&self, req: &StepRequest<'_>) -> StepPlan;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    #[default]
    Pibt,
    Greedy,
}

impl PlannerKind {
    pub fn build(self) -> Box<dyn StepPlanner> {
        match self {
            PlannerKind::Pibt => Box::new(Pibt),
            PlannerKind::Greedy => Box::new(GreedyPlanner),
        }
    }
}

/// Candidate cells of `idx` (the four neighbours then staying), in the
/// fixed direction order up, down, left, right, stay.
fn candidates(map: &GridMap, idx: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..4).filter_map(move |dir| map.neighbor_in_direction(idx, dir).map(|n| (dir, n))).chain(std::iter::once((4, idx)))
}

/// Priority inheritance with backtracking.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pibt;

impl StepPlanner for Pibt {
    fn name(&self) -> &'static str {
        "pibt"
    }

    fn plan_step(&self, req: &StepRequest<'_>) -> StepPlan {
        let map = req.map;
        let n = req.agents.len();
        let mut search = PibtSearch {
            map,
            fields: req.agents.iter().map(|a| req.distances.field(map, a.target)).collect(),
            current: req.agents.iter().map(|a| map.index_of(a.current)).collect(),
            next: vec![NONE; n],
            occupied_now: vec![NONE; map.num_cells()],
            occupied_next: vec![NONE; map.num_cells()],
            rng: ChaCha8Rng::seed_from_u64(req.seed),
        };
        for (i, &c) in search.current.iter().enumerate() {
            search.occupied_now[c] = i as u32;
        }
        let priorities: Vec<Priority> = req.agents.iter().map(|a| a.priority).collect();
        for i in priority_order(&priorities) {
            if search.next[i] == NONE {
                search.solve(i, None);
            }
        }
        StepPlan { moves: search.next.iter().map(|&c| map.coord_of(c as usize)).collect() }
    }
}

struct PibtSearch<'a> {
    map: &'a GridMap,
    fields: Vec<&'a DistanceField>,
    current: Vec<usize>,
    next: Vec<u32>,
    occupied_now: Vec<u32>,
    occupied_next: Vec<u32>,
    rng: ChaCha8Rng,
}

impl PibtSearch<'_> {
    /// Ordered candidates for `agent`: by distance to target, then a seeded
    /// random key, then direction order.
    fn ranked(&mut self, agent: usize) -> Vec<usize> {
        let field = self.fields[agent];
        let mut cands: Vec<(u32, u32, usize, usize)> =
            candidates(self.map, self.current[agent]).map(|(dir, cell)| (field.at_index(cell), 0, dir, cell)).collect();
        for c in cands.iter_mut() {
            c.1 = self.rng.gen();
        }
        cands.sort_unstable();
        cands.into_iter().map(|c| c.3).collect()
    }

    fn solve(&mut self, agent: usize, parent: Option<usize>) -> bool {
        for cell in self.ranked(agent) {
            if self.occupied_next[cell] != NONE {
                continue;
            }
            if let Some(p) = parent {
                if cell == self.current[p] {
                    continue;
                }
            }
            self.occupied_next[cell] = agent as u32;
            self.next[agent] = cell as u32;
            let other = self.occupied_now[cell];
            if other != NONE
                && other as usize != agent
                && self.next[other as usize] == NONE
                && !self.solve(other as usize, Some(agent))
            {
                continue;
            }
            return true;
        }
        let stay = self.current[agent];
        self.occupied_next[stay] = agent as u32;
        self.next[agent] = stay as u32;
        false
    }
}

/// Moves an agent only when its single best cell is currently empty and not
/// yet claimed; everyone else waits.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyPlanner;

impl StepPlanner for GreedyPlanner {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn plan_step(&self, req: &StepRequest<'_>) -> StepPlan {
        let map = req.map;
        let current: Vec<usize> = req.agents.iter().map(|a| map.index_of(a.current)).collect();
        let mut occupied = vec![false; map.num_cells()];
        for &c in &current {
            occupied[c] = true;
        }
        let mut claimed = vec![false; map.num_cells()];
        let mut moves: Vec<Coord> = req.agents.iter().map(|a| a.current).collect();
        let priorities: Vec<Priority> = req.agents.iter().map(|a| a.priority).collect();
        for i in priority_order(&priorities) {
            let field = req.distances.field(map, req.agents[i].target);
            let best = candidates(map, current[i])
                .min_by_key(|&(dir, cell)| (field.at_index(cell), dir))
                .map(|(_, cell)| cell)
                .expect("stay is always a candidate");
            if best != current[i] && !occupied[best] && !claimed[best] {
                claimed[best] = true;
                moves[i] = map.coord_of(best);
            }
        }
        StepPlan { moves }
    }
}

/// A single safety violation between two consecutive configurations.
/// Agents are identified by position in the input slices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conflict {
    Vertex { a: usize, b: usize, cell: Coord },
    Swap { a: usize, b: usize },
    Adjacency { agent: usize, from: Coord, to: Coord },
    Blocked { agent: usize, cell: Coord },
    LengthMismatch { before: usize, after: usize },
}

impl Conflict {
    /// Renames agent indices, e.g. from slice positions to agent ids.
    pub fn map_agents(self, f: impl Fn(usize) -> usize) -> Self {
        match self {
            Conflict::Vertex { a, b, cell } => Conflict::Vertex { a: f(a), b: f(b), cell },
            Conflict::Swap { a, b } => Conflict::Swap { a: f(a), b: f(b) },
            Conflict::Adjacency { agent, from, to } => Conflict::Adjacency { agent: f(agent), from, to },
            Conflict::Blocked { agent, cell } => Conflict::Blocked { agent: f(agent), cell },
            other => other,
        }
    }
}

impl std::fmt::Display for Conflict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Conflict::Vertex { a, b, cell } => write!(f, "vertex conflict: agents {a} and {b} at {cell}"),
            Conflict::Swap { a, b } => write!(f, "swap conflict: agents {a} and {b}"),
            Conflict::Adjacency { agent, from, to } => {
                write!(f, "adjacency violation: agent {agent} jumped {from} -> {to}")
            }
            Conflict::Blocked { agent, cell } => write!(f, "agent {agent} entered blocked cell {cell}"),
            Conflict::LengthMismatch { before, after } => {
                write!(f, "configuration sizes differ: {before} vs {after}")
            }
        }
    }
}

/// Checks vertex, swap and adjacency safety of the move `before -> after`.
pub fn validate_step(map: &GridMap, before: &[Coord], after: &[Coord]) -> Result<(), Vec<Conflict>> {
    if before.len() != after.len() {
        return Err(vec![Conflict::LengthMismatch { before: before.len(), after: after.len() }]);
    }
    let mut conflicts = Vec::new();
    for (i, (&from, &to)) in before.iter().zip(after).enumerate() {
        if !map.is_passable(to) {
            conflicts.push(Conflict::Blocked { agent: i, cell: to });
        }
        if !from.is_adjacent_or_same(to) {
            conflicts.push(Conflict::Adjacency { agent: i, from, to });
        }
    }
    let mut at_next: HashMap<Coord, usize> = HashMap::with_capacity(after.len());
    for (i, &to) in after.iter().enumerate() {
        if let Some(&a) = at_next.get(&to) {
            conflicts.push(Conflict::Vertex { a, b: i, cell: to });
        } else {
            at_next.insert(to, i);
        }
    }
    let at_now: HashMap<Coord, usize> = before.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    for (i, (&from, &to)) in before.iter().zip(after).enumerate() {
        if from == to {
            continue;
        }
        if let Some(&j) = at_now.get(&to) {
            if j > i && after[j] == from {
                conflicts.push(Conflict::Swap { a: i, b: j });
            }
        }
    }
    if conflicts.is_empty() {
        Ok(())
    } else {
        Err(conflicts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_map(h: usize, w: usize) -> GridMap {
        let mut text = format!("type warehouse\nheight {h}\nwidth {w}\nmap\n");
        for r in 0..h {
            for c in 0..w {
                text.push(if r == 0 && c == 0 { 'B' } else { '.' });
            }
            text.push('\n');
        }
        GridMap::parse(&text).unwrap()
    }

    fn agent(id: u32, current: Coord, target: Coord, age: u64) -> PlanAgent {
        PlanAgent { id: AgentId(id), current, target, priority: Priority { age, agent: AgentId(id) } }
    }

    fn plan_with(planner: &dyn StepPlanner, map: &GridMap, agents: &[PlanAgent], seed: u64) -> StepPlan {
        let table = DistanceTable::for_targets(map, agents.iter().map(|a| a.target)).unwrap();
        planner.plan_step(&StepRequest { map, distances: &table, agents, seed })
    }

    #[test]
    fn priority_order_and_tie_break() {
        let a = Priority { age: 3, agent: AgentId(5) };
        let b = Priority { age: 3, agent: AgentId(2) };
        let c = Priority { age: 7, agent: AgentId(9) };
        assert!(b > a);
        assert!(c > b);
        assert_eq!(priority_order(&[a, b, c]), vec![2, 1, 0]);
    }

    #[test]
    fn update_priorities_ages_and_resets() {
        let mut p = vec![Priority::new(AgentId(0)), Priority::new(AgentId(1))];
        for _ in 0..4 {
            update_priorities(&mut p, &[false, false]);
        }
        assert_eq!(p[0].age, 4);
        update_priorities(&mut p, &[true, false]);
        assert_eq!((p[0].age, p[1].age), (0, 5));
    }

    #[test]
    fn single_agent_moves_toward_target() {
        let map = open_map(1, 5);
        let agents = [agent(0, Coord::new(0, 1), Coord::new(0, 4), 0)];
        for planner in [&Pibt as &dyn StepPlanner, &GreedyPlanner] {
            let plan = plan_with(planner, &map, &agents, 7);
            assert_eq!(plan.moves, vec![Coord::new(0, 2)], "{}", planner.name());
        }
    }

    #[test]
    fn agents_at_targets_stay() {
        let map = open_map(3, 3);
        let agents = [agent(0, Coord::new(0, 0), Coord::new(0, 0), 4), agent(1, Coord::new(2, 2), Coord::new(2, 2), 1)];
        let plan = plan_with(&Pibt, &map, &agents, 1);
        assert_eq!(plan.moves, vec![Coord::new(0, 0), Coord::new(2, 2)]);
    }

    #[test]
    fn corridor_face_off_has_no_swap() {
        let map = open_map(1, 3);
        let left = Coord::new(0, 0);
        let right = Coord::new(0, 2);
        let agents = [agent(0, left, right, 1), agent(1, right, left, 0)];

        // Every joint next-cell pair, judged without the validator.
        let options = |c: Coord| -> Vec<Option<Coord>> {
            vec![
                c.row.checked_sub(1).map(|r| Coord::new(r, c.col)),
                Some(Coord::new(c.row + 1, c.col)),
                c.col.checked_sub(1).map(|cc| Coord::new(c.row, cc)),
                Some(Coord::new(c.row, c.col + 1)),
                Some(c),
            ]
        };
        let mut safe = Vec::new();
        for a in options(left) {
            for b in options(right) {
                let (Some(a), Some(b)) = (a, b) else { continue };
                let on_map = |c: Coord| c.row == 0 && c.col < 3;
                let ok = on_map(a) && on_map(b) && a != b && !(a == right && b == left);
                if ok {
                    safe.push((a, b));
                }
            }
        }
        assert!(!safe.is_empty());
        for seed in 0..16 {
            let plan = plan_with(&Pibt, &map, &agents, seed);
            assert!(safe.contains(&(plan.moves[0], plan.moves[1])), "{:?}", plan.moves);
        }
    }

    #[test]
    fn validator_reports_each_violation_kind() {
        let map = open_map(3, 3);
        let (a, b) = (Coord::new(1, 0), Coord::new(1, 2));
        let mid = Coord::new(1, 1);
        assert_eq!(validate_step(&map, &[a, b], &[mid, mid]), Err(vec![Conflict::Vertex { a: 0, b: 1, cell: mid }]));
        assert_eq!(validate_step(&map, &[a, mid], &[mid, a]), Err(vec![Conflict::Swap { a: 0, b: 1 }]));
        assert_eq!(
            validate_step(&map, &[a], &[Coord::new(0, 1)]),
            Err(vec![Conflict::Adjacency { agent: 0, from: a, to: Coord::new(0, 1) }])
        );
        assert!(validate_step(&map, &[a, b], &[a, b]).is_ok());
    }

    #[test]
    fn pibt_pushes_lower_priority_agent_out_of_the_way() {
        let map = open_map(1, 4);
        // Agent 1 sits on agent 0's path and is already at its own target.
        let agents = [agent(0, Coord::new(0, 0), Coord::new(0, 3), 5), agent(1, Coord::new(0, 1), Coord::new(0, 1), 0)];
        let plan = plan_with(&Pibt, &map, &agents, 3);
        assert_eq!(plan.moves, vec![Coord::new(0, 1), Coord::new(0, 2)]);
        let greedy = plan_with(&GreedyPlanner, &map, &agents, 3);
        assert_eq!(greedy.moves, vec![Coord::new(0, 0), Coord::new(0, 1)]);
    }
}
