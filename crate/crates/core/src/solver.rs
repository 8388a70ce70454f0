//! Enumeration of all subset-minimal satisfying assignments of a monotone
//! CNF, bounded by assignment size.
//!
//! The search is an explicit-stack DFS over *uncovered-clause masks*: bit `i`
//! of the mask is set while clause `i` is not yet hit by the chosen
//! variables. Each expansion branches on the lowest uncovered clause and
//! picks one of its variables, clearing every clause that variable covers.
//! A state whose mask reaches zero is a satisfying leaf; it is kept iff no
//! chosen variable is redundant.
//!
//! Masks are `u64` words for formulas with at most 64 clauses and
//! heap-allocated bit vectors above that.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{is_satisfied, sorted_intersect, ApiVar, MonotoneCnf};

/// A set of API variables in ascending order. Serves both as a fault
/// injection plan and as a satisfying assignment.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultSet(Vec<ApiVar>);

impl FaultSet {
    pub fn new<I: IntoIterator<Item = ApiVar>>(vars: I) -> Self {
        let mut vars: Vec<ApiVar> = vars.into_iter().collect();
        vars.sort_unstable();
        vars.dedup();
        FaultSet(vars)
    }

    pub fn empty() -> Self {
        FaultSet(Vec::new())
    }

    pub fn vars(&self) -> &[ApiVar] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, var: ApiVar) -> bool {
        self.0.binary_search(&var).is_ok()
    }

    pub fn is_subset_of(&self, other: &FaultSet) -> bool {
        if self.len() > other.len() {
            return false;
        }
        let mut it = other.0.iter();
        'outer: for v in &self.0 {
            for w in it.by_ref() {
                if w == v {
                    continue 'outer;
                }
                if w > v {
                    return false;
                }
            }
            return false;
        }
        true
    }

    pub fn intersects(&self, other: &FaultSet) -> bool {
        sorted_intersect(&self.0, &other.0)
    }

    /// Copy of the set with `var` removed.
    pub fn without(&self, var: ApiVar) -> FaultSet {
        FaultSet(self.0.iter().copied().filter(|&v| v != var).collect())
    }

    /// Elements of `self` not in `other`.
    pub fn difference(&self, other: &FaultSet) -> FaultSet {
        FaultSet(self.0.iter().copied().filter(|v| !other.contains(*v)).collect())
    }

    pub fn union(&self, other: &FaultSet) -> FaultSet {
        FaultSet::new(self.0.iter().chain(other.0.iter()).copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = ApiVar> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<ApiVar> for FaultSet {
    fn from_iter<T: IntoIterator<Item = ApiVar>>(iter: T) -> Self {
        FaultSet::new(iter)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolverError {
    #[error("brute-force enumeration refuses {n_vars} variables (limit {limit})")]
    TooManyVars { n_vars: usize, limit: usize },
    #[error("candidate {0:?} does not satisfy the formula")]
    NotSatisfying(FaultSet),
}

/// Largest universe [`brute_force_minimal`] will enumerate.
pub const BRUTE_FORCE_VAR_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Upper bound on the size of an emitted assignment.
    pub max_size: usize,
    /// Sort the output lexicographically. Without it, solutions come out in
    /// discovery order.
    pub deterministic: bool,
    /// Drop a branch as soon as one of its chosen variables has no clause
    /// that only it covers; such a branch can never reach a minimal leaf.
    pub redundancy_pruning: bool,
    /// Memoize the smallest depth at which each mask was expanded and skip
    /// revisits at a greater depth. This is fast but not complete for
    /// subset-minimal enumeration: a deeper route to a known mask can carry
    /// a different minimal solution. Off by default.
    pub depth_memo: bool,
}

impl SolverConfig {
    pub fn new(max_size: usize) -> Self {
        SolverConfig { max_size, deterministic: true, redundancy_pruning: true, depth_memo: false }
    }
}

/// Search counters, useful for profiling scaling behaviour.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    /// States whose children were generated.
    pub expansions: u64,
    /// States that reached mask zero.
    pub leaf_hits: u64,
    /// Distinct masks ever expanded.
    pub distinct_masks: u64,
    pub pruned_depth: u64,
    pub pruned_memo: u64,
    pub pruned_redundant: u64,
}

trait ClauseMask: Clone + Eq + Hash {
    fn zero(m: usize) -> Self;
    fn full(m: usize) -> Self;
    fn set(&mut self, bit: usize);
    fn is_zero(&self) -> bool;
    fn lowest_set(&self) -> usize;
    fn and_not(&self, other: &Self) -> Self;
    fn and(&self, other: &Self) -> Self;
    fn or(&self, other: &Self) -> Self;
}

impl ClauseMask for u64 {
    fn zero(_: usize) -> Self {
        0
    }
    fn full(m: usize) -> Self {
        if m == 64 {
            u64::MAX
        } else {
            (1u64 << m) - 1
        }
    }
    fn set(&mut self, bit: usize) {
        *self |= 1 << bit;
    }
    fn is_zero(&self) -> bool {
        *self == 0
    }
    fn lowest_set(&self) -> usize {
        // Index of the lowest set bit, i.e. bit_length(u & -u) - 1.
        self.trailing_zeros() as usize
    }
    fn and_not(&self, other: &Self) -> Self {
        self & !other
    }
    fn and(&self, other: &Self) -> Self {
        self & other
    }
    fn or(&self, other: &Self) -> Self {
        self | other
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct WideMask(Box<[u64]>);

impl ClauseMask for WideMask {
    fn zero(m: usize) -> Self {
        WideMask(vec![0; m.div_ceil(64)].into_boxed_slice())
    }
    fn full(m: usize) -> Self {
        let mut w = Self::zero(m);
        for (i, word) in w.0.iter_mut().enumerate() {
            let bits = (m - i * 64).min(64);
            *word = <u64 as ClauseMask>::full(bits);
        }
        w
    }
    fn set(&mut self, bit: usize) {
        self.0[bit / 64] |= 1 << (bit % 64);
    }
    fn is_zero(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }
    fn lowest_set(&self) -> usize {
        for (i, &w) in self.0.iter().enumerate() {
            if w != 0 {
                return i * 64 + w.trailing_zeros() as usize;
            }
        }
        usize::MAX
    }
    fn and_not(&self, other: &Self) -> Self {
        WideMask(self.0.iter().zip(other.0.iter()).map(|(a, b)| a & !b).collect())
    }
    fn and(&self, other: &Self) -> Self {
        WideMask(self.0.iter().zip(other.0.iter()).map(|(a, b)| a & b).collect())
    }
    fn or(&self, other: &Self) -> Self {
        WideMask(self.0.iter().zip(other.0.iter()).map(|(a, b)| a | b).collect())
    }
}

struct State<M> {
    uncovered: M,
    /// Clauses hit by exactly one chosen variable.
    once: M,
    chosen: Vec<ApiVar>,
}

struct Problem<M> {
    m: usize,
    /// Variables of each clause, ascending.
    clause_list: Vec<Vec<ApiVar>>,
    /// Clauses covered by each variable.
    cover: HashMap<ApiVar, M>,
}

impl<M: ClauseMask> Problem<M> {
    fn build(cnf: &MonotoneCnf) -> Self {
        let m = cnf.len();
        let mut cover: HashMap<ApiVar, M> = HashMap::new();
        for (i, clause) in cnf.clauses().iter().enumerate() {
            for &v in clause.vars() {
                cover.entry(v).or_insert_with(|| M::zero(m)).set(i);
            }
        }
        let clause_list = cnf.clauses().iter().map(|c| c.vars().to_vec()).collect();
        Problem { m, clause_list, cover }
    }

    fn run(&self, config: &SolverConfig, stats: &mut SolverStats) -> Vec<FaultSet> {
        let maxd = config.max_size;
        let mut best_depth: HashMap<M, usize> = HashMap::new();
        let mut expanded_masks: HashSet<M> = HashSet::new();
        let mut found: HashSet<FaultSet> = HashSet::new();
        let mut solutions = Vec::new();

        let mut stack = vec![State { uncovered: M::full(self.m), once: M::zero(self.m), chosen: Vec::new() }];
        while let Some(State { uncovered, once, chosen }) = stack.pop() {
            let depth = chosen.len();
            if uncovered.is_zero() {
                stats.leaf_hits += 1;
                let candidate = FaultSet::new(chosen.iter().copied());
                if found.contains(&candidate) || !self.leaf_is_minimal(&candidate, &once) {
                    continue;
                }
                found.insert(candidate.clone());
                solutions.push(candidate);
                continue;
            }
            if depth >= maxd {
                stats.pruned_depth += 1;
                continue;
            }
            if config.depth_memo {
                let best = best_depth.get(&uncovered).copied().unwrap_or(maxd + 1);
                if depth > best {
                    stats.pruned_memo += 1;
                    continue;
                }
                best_depth.insert(uncovered.clone(), depth);
            }
            stats.expansions += 1;
            if expanded_masks.insert(uncovered.clone()) {
                stats.distinct_masks += 1;
            }

            let i = uncovered.lowest_set();
            for &node in &self.clause_list[i] {
                if chosen.contains(&node) {
                    continue;
                }
                let cv = &self.cover[&node];
                let next_once = once.and_not(cv).or(&cv.and(&uncovered));
                if config.redundancy_pruning && chosen.iter().any(|w| self.cover[w].and(&next_once).is_zero()) {
                    stats.pruned_redundant += 1;
                    continue;
                }
                let mut next_chosen = Vec::with_capacity(depth + 1);
                next_chosen.extend_from_slice(&chosen);
                next_chosen.push(node);
                stack.push(State { uncovered: uncovered.and_not(cv), once: next_once, chosen: next_chosen });
            }
        }
        if config.deterministic {
            solutions.sort_unstable();
        }
        solutions
    }

    /// A satisfying set is minimal iff each member covers some clause that
    /// no other member covers.
    fn leaf_is_minimal(&self, chosen: &FaultSet, once: &M) -> bool {
        chosen.iter().all(|w| !self.cover[&w].and(once).is_zero())
    }
}

/// All subset-minimal satisfying assignments with at most
/// `config.max_size` variables. An empty formula yields `[∅]`.
pub fn enumerate_minimal(cnf: &MonotoneCnf, config: &SolverConfig) -> Vec<FaultSet> {
    enumerate_minimal_with_stats(cnf, config).0
}

pub fn enumerate_minimal_with_stats(cnf: &MonotoneCnf, config: &SolverConfig) -> (Vec<FaultSet>, SolverStats) {
    let mut stats = SolverStats::default();
    let out = if cnf.len() <= 64 {
        Problem::<u64>::build(cnf).run(config, &mut stats)
    } else {
        Problem::<WideMask>::build(cnf).run(config, &mut stats)
    };
    (out, stats)
}

/// True iff removing any single variable from `candidate` breaks
/// satisfaction. The candidate must satisfy `cnf`.
pub fn is_minimal(candidate: &FaultSet, cnf: &MonotoneCnf) -> Result<bool, SolverError> {
    if !is_satisfied(cnf, candidate) {
        return Err(SolverError::NotSatisfying(candidate.clone()));
    }
    Ok(candidate.iter().all(|v| !is_satisfied(cnf, &candidate.without(v))))
}

/// Exhaustive reference enumeration: walks every subset of size at most
/// `max_size` in order of increasing size and keeps a satisfying subset iff
/// no previously kept set is contained in it.
pub fn brute_force_minimal(cnf: &MonotoneCnf, max_size: usize) -> Result<Vec<FaultSet>, SolverError> {
    let n = cnf.n_vars();
    if n > BRUTE_FORCE_VAR_LIMIT {
        return Err(SolverError::TooManyVars { n_vars: n, limit: BRUTE_FORCE_VAR_LIMIT });
    }
    let clause_bits: Vec<u32> =
        cnf.clauses().iter().map(|c| c.vars().iter().fold(0u32, |acc, v| acc | (1 << v.0))).collect();
    let satisfies = |subset: u32| clause_bits.iter().all(|&c| c & subset != 0);

    let mut kept: Vec<u32> = Vec::new();
    for size in 0..=max_size.min(n) {
        for subset in subsets_of_size(n as u32, size as u32) {
            if satisfies(subset) && !kept.iter().any(|&k| k & !subset == 0) {
                kept.push(subset);
            }
        }
    }
    let mut out: Vec<FaultSet> = kept
        .into_iter()
        .map(|bits| FaultSet::new((0..n as u32).filter(|i| bits & (1 << i) != 0).map(ApiVar)))
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// All `size`-element subsets of `{0..n}` as bit masks (Gosper's hack).
fn subsets_of_size(n: u32, size: u32) -> impl Iterator<Item = u32> {
    let limit: u64 = 1u64 << n;
    let first: u64 = if size == 0 { 0 } else { (1u64 << size) - 1 };
    let mut next = if size > n { None } else { Some(first) };
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 {
            None
        } else {
            let c = cur & cur.wrapping_neg();
            let r = cur + c;
            let n = (((r ^ cur) >> 2) / c) | r;
            (n < limit).then_some(n)
        };
        Some(cur as u32)
    })
}
