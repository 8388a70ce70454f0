//! Feedback-driven k-fault injection.
//!
//! A campaign starts from the single path observed without faults and
//! alternates between solving and injecting. Each candidate is a minimal
//! satisfying assignment of the current path formula, i.e. a set of APIs
//! that breaks every path seen so far. Injecting it either fails the
//! request, which confirms a minimal combinatorial fault, or reveals a path
//! the formula did not know about. A revealed path is conjoined into the
//! formula and the candidate pool is re-solved from scratch, so stale
//! candidates are never injected.
//!
//! Candidates are skipped when a confirmed fault is a subset of them
//! (adding injection points cannot mask a failure) or when they were
//! already injected.

use std::collections::{HashSet, VecDeque};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{conjoin, is_satisfied, make_cnf, Clause, CnfError, MonotoneCnf};
use crate::sim::{ExecutionOracle, SimError};
use crate::solver::{enumerate_minimal, FaultSet, SolverConfig};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("k_max must be at least 1")]
    InvalidBound,
    #[error(transparent)]
    Oracle(#[from] SimError),
    #[error("oracle reported an invalid path: {0}")]
    BadPath(#[from] CnfError),
}

/// When the fault-size bound `k` grows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Escalation {
    /// Grow `k` whenever the candidate pool drains below `k_max`. The
    /// campaign then returns every minimal fault of size at most `k_max`.
    #[default]
    Exhaustive,
    /// Grow `k` only right after a newly revealed path leaves no candidate
    /// at the current bound. Once a round of candidates all confirm as
    /// faults, the campaign stops, typically at the smallest fault size.
    NewPath,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub k_max: usize,
    pub request_id: u32,
    pub escalation: Escalation,
}

impl CampaignConfig {
    pub fn new(request_id: u32, k_max: usize) -> Self {
        CampaignConfig { k_max, request_id, escalation: Escalation::Exhaustive }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InjectionOutcome {
    Failed,
    Revealed(Clause),
}

/// Every injected fault set, in order, with its outcome.
#[derive(Clone, Debug, Default)]
pub struct InjectionHistory {
    entries: Vec<(FaultSet, InjectionOutcome)>,
    seen: HashSet<FaultSet>,
}

impl InjectionHistory {
    fn record(&mut self, fault: FaultSet, outcome: InjectionOutcome) {
        self.seen.insert(fault.clone());
        self.entries.push((fault, outcome));
    }

    pub fn contains(&self, fault: &FaultSet) -> bool {
        self.seen.contains(fault)
    }

    pub fn entries(&self) -> &[(FaultSet, InjectionOutcome)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseTimes {
    pub solve: Duration,
    pub inject: Duration,
    pub bookkeeping: Duration,
    pub total: Duration,
}

#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub request_id: u32,
    pub k_max: usize,
    /// Confirmed faults in lexicographic order.
    pub valid_faults: Vec<FaultSet>,
    /// Executions with a non-empty fault set; the fault-free bootstrap run
    /// is not counted.
    pub injections: u64,
    pub solver_calls: u64,
    pub final_cnf: MonotoneCnf,
    pub final_k: usize,
    pub wall_times: PhaseTimes,
    pub history: InjectionHistory,
    /// Formula size at the moment each history entry was injected.
    pub clauses_at_injection: Vec<usize>,
}

/// True iff some member of `valid` is a subset of `candidate`.
pub fn is_subsumed(candidate: &FaultSet, valid: &[FaultSet]) -> bool {
    valid.iter().any(|v| v.is_subset_of(candidate))
}

/// Confirmed faults with a subset lookup that enumerates the candidate's
/// subsets when that is cheaper than scanning.
#[derive(Default)]
struct ValidIndex {
    list: Vec<FaultSet>,
    set: HashSet<FaultSet>,
}

impl ValidIndex {
    fn insert(&mut self, fault: FaultSet) {
        if self.set.insert(fault.clone()) {
            self.list.push(fault);
        }
    }

    fn subsumes(&self, candidate: &FaultSet) -> bool {
        let n = candidate.len();
        if n > 16 || (1usize << n) > self.list.len() {
            return is_subsumed(candidate, &self.list);
        }
        let vars = candidate.vars();
        (0u32..(1 << n)).any(|bits| {
            let subset = FaultSet::new((0..n).filter(|i| bits & (1 << i) != 0).map(|i| vars[i]));
            self.set.contains(&subset)
        })
    }
}

struct Runner<'a, O: ?Sized> {
    oracle: &'a O,
    request_id: u32,
    cnf: MonotoneCnf,
    k: usize,
    stack: VecDeque<FaultSet>,
    valid: ValidIndex,
    history: InjectionHistory,
    clauses_at_injection: Vec<usize>,
    injections: u64,
    solver_calls: u64,
    times: PhaseTimes,
}

impl<O: ExecutionOracle + ?Sized> Runner<'_, O> {
    fn solve(&mut self) {
        let t = Instant::now();
        let config = SolverConfig::new(self.k);
        self.stack = enumerate_minimal(&self.cnf, &config).into();
        self.solver_calls += 1;
        self.times.solve += t.elapsed();
    }

    fn inject(&mut self, fault: &FaultSet) -> Result<InjectionOutcome, CampaignError> {
        let t = Instant::now();
        let outcome = self.oracle.execute(self.request_id, fault)?;
        self.times.inject += t.elapsed();
        self.injections += 1;
        Ok(match outcome.observed_path {
            None => InjectionOutcome::Failed,
            Some(path) => InjectionOutcome::Revealed(path),
        })
    }

    /// Pops candidates until the pool drains.
    fn drain(&mut self, k_max: usize, escalate_on_new_path: bool) -> Result<(), CampaignError> {
        while let Some(candidate) = self.stack.pop_front() {
            if self.valid.subsumes(&candidate) || self.history.contains(&candidate) {
                continue;
            }
            debug_assert!(is_satisfied(&self.cnf, &candidate), "stale candidate {candidate:?}");
            self.clauses_at_injection.push(self.cnf.len());
            let outcome = self.inject(&candidate)?;
            self.history.record(candidate.clone(), outcome.clone());
            match outcome {
                InjectionOutcome::Failed => self.valid.insert(candidate),
                InjectionOutcome::Revealed(path) => {
                    self.cnf = conjoin(&self.cnf, path.vars().iter().copied())?;
                    self.solve();
                    if escalate_on_new_path && self.stack.is_empty() && self.k < k_max {
                        self.k += 1;
                        self.solve();
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Dynamic(Escalation),
    Static,
}

fn run<O: ExecutionOracle + ?Sized>(
    oracle: &O,
    request_id: u32,
    start_k: usize,
    k_max: usize,
    mode: Mode,
) -> Result<CampaignResult, CampaignError> {
    let started = Instant::now();
    let mut runner = Runner {
        oracle,
        request_id,
        cnf: MonotoneCnf::empty(oracle.n_vars()),
        k: start_k,
        stack: VecDeque::new(),
        valid: ValidIndex::default(),
        history: InjectionHistory::default(),
        clauses_at_injection: Vec::new(),
        injections: 0,
        solver_calls: 0,
        times: PhaseTimes::default(),
    };

    let t = Instant::now();
    let bootstrap = oracle.execute(request_id, &FaultSet::empty())?;
    runner.times.inject += t.elapsed();
    match bootstrap.observed_path {
        // Nothing needs to be injected to fail the request.
        None => runner.valid.insert(FaultSet::empty()),
        Some(path) => {
            runner.cnf = make_cnf([path.vars().to_vec()], oracle.n_vars())?;
            runner.solve();
            loop {
                let dynamic = matches!(mode, Mode::Dynamic(_));
                runner.drain(k_max, dynamic)?;
                match mode {
                    Mode::Dynamic(Escalation::Exhaustive) if runner.k < k_max => {
                        runner.k += 1;
                        runner.solve();
                    }
                    _ => break,
                }
            }
        }
    }

    let mut valid_faults = runner.valid.list;
    valid_faults.sort_unstable();
    let mut times = runner.times;
    times.total = started.elapsed();
    times.bookkeeping = times.total.saturating_sub(times.solve + times.inject);
    Ok(CampaignResult {
        request_id,
        k_max,
        valid_faults,
        injections: runner.injections,
        solver_calls: runner.solver_calls,
        final_cnf: runner.cnf,
        final_k: runner.k,
        wall_times: times,
        history: runner.history,
        clauses_at_injection: runner.clauses_at_injection,
    })
}

/// Dynamic k-fault injection: starts at `k = 1` and grows the bound per
/// `config.escalation` up to `config.k_max`.
pub fn run_campaign<O: ExecutionOracle + ?Sized>(
    oracle: &O,
    config: &CampaignConfig,
) -> Result<CampaignResult, CampaignError> {
    if config.k_max < 1 {
        return Err(CampaignError::InvalidBound);
    }
    run(oracle, config.request_id, 1, config.k_max, Mode::Dynamic(config.escalation))
}

/// The same loop with the bound fixed at `k_fixed` from the start.
pub fn run_campaign_static<O: ExecutionOracle + ?Sized>(
    oracle: &O,
    request_id: u32,
    k_fixed: usize,
) -> Result<CampaignResult, CampaignError> {
    run(oracle, request_id, k_fixed, k_fixed, Mode::Static)
}
