//! Budgeted selection of API call sites to harden.
//!
//! Every confirmed fault of a request becomes a clause over its APIs; the
//! clause is satisfied once any of those APIs is hardened. Clauses of
//! high-priority requests are hard constraints, clauses of the remaining
//! requests are soft, and at most `budget` APIs may be selected. The goal
//! is to satisfy every hard clause while covering as many soft clauses as
//! possible.
//!
//! [`optimize`] works in two stages. Stage one enumerates the minimal
//! assignments of the hard formula that fit the budget and scores each by
//! the soft clauses it already covers. Stage two spends the residual budget
//! on the uncovered soft clauses, exactly by branch and bound while the
//! residual problem is small and greedily above that.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{make_cnf, ApiVar, Clause, CnfError, MonotoneCnf};
use crate::sim::{ExecutionOracle, Hardened, SimError};
use crate::solver::{enumerate_minimal, FaultSet, SolverConfig};

/// Residual problems up to this many candidate APIs are solved exactly.
pub const EXACT_MAX_CANDIDATES: usize = 24;
/// Residual problems up to this many uncovered soft clauses are solved
/// exactly.
pub const EXACT_MAX_SOFT: usize = 64;

#[derive(Debug, Error)]
pub enum HardeningError {
    #[error("hard clauses unsatisfiable within budget {budget} ({hard_clauses} hard clauses)")]
    Infeasible { budget: usize, hard_clauses: usize },
    #[error("budgets must be strictly increasing")]
    UnorderedBudgets,
    #[error("no campaign result for request {0}")]
    MissingRequest(u32),
    #[error(transparent)]
    Cnf(#[from] CnfError),
    #[error(transparent)]
    Oracle(#[from] SimError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Exact,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HardeningInstance {
    pub hard: Vec<(u32, MonotoneCnf)>,
    pub soft: Vec<(u32, MonotoneCnf)>,
    pub budget: usize,
    pub n_vars: usize,
}

impl HardeningInstance {
    /// Splits per-request faults into hard (`high`) and soft (the rest).
    pub fn from_faults(
        high: &[u32],
        faults: &BTreeMap<u32, Vec<FaultSet>>,
        budget: usize,
        n_vars: usize,
    ) -> Result<Self, HardeningError> {
        if let Some(&missing) = high.iter().find(|id| !faults.contains_key(id)) {
            return Err(HardeningError::MissingRequest(missing));
        }
        let mut hard = Vec::new();
        let mut soft = Vec::new();
        for (&id, valid) in faults {
            let cnf = build_request_cnf(valid, n_vars)?;
            if high.contains(&id) {
                hard.push((id, cnf));
            } else {
                soft.push((id, cnf));
            }
        }
        Ok(HardeningInstance { hard, soft, budget, n_vars })
    }

    pub fn with_budget(&self, budget: usize) -> Self {
        HardeningInstance { budget, ..self.clone() }
    }

    /// All hard clauses as one normalized formula.
    pub fn hard_cnf(&self) -> MonotoneCnf {
        let paths = self.hard.iter().flat_map(|(_, c)| c.clauses().iter().map(|cl| cl.vars().to_vec()));
        make_cnf(paths, self.n_vars).expect("request formulas are valid")
    }

    /// Soft clauses of every request, duplicates across requests kept.
    pub fn soft_clauses(&self) -> Vec<&Clause> {
        self.soft.iter().flat_map(|(_, c)| c.clauses().iter()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardeningPlan {
    pub budget: usize,
    pub selected: FaultSet,
    pub hard_satisfied: bool,
    pub soft_covered: usize,
    pub soft_total: usize,
    pub cr: f64,
    /// False when some residual problem fell back to the greedy rule.
    pub exact: bool,
    pub feasible: bool,
}

impl HardeningPlan {
    fn new(instance: &HardeningInstance, selected: FaultSet, exact: bool) -> Self {
        let hard_satisfied = instance.hard_cnf().clauses().iter().all(|c| c.intersects(&selected));
        let soft = instance.soft_clauses();
        let soft_covered = soft.iter().filter(|c| c.intersects(&selected)).count();
        let soft_total = soft.len();
        let cr = if soft_total == 0 { 1.0 } else { soft_covered as f64 / soft_total as f64 };
        HardeningPlan {
            budget: instance.budget,
            selected,
            hard_satisfied,
            soft_covered,
            soft_total,
            cr,
            exact,
            feasible: hard_satisfied,
        }
    }
}

/// One clause per confirmed fault; satisfied once any API of the fault is
/// hardened.
pub fn build_request_cnf(valid_faults: &[FaultSet], n_vars: usize) -> Result<MonotoneCnf, CnfError> {
    make_cnf(valid_faults.iter().map(|f| f.vars().to_vec()), n_vars)
}

/// Soft clauses restricted to a residual candidate set, as bit masks.
struct Residual {
    candidates: Vec<ApiVar>,
    masks: Vec<u64>,
    full: u64,
}

impl Residual {
    fn build(uncovered: &[&Clause], exclude: &FaultSet) -> Option<Self> {
        if uncovered.len() > EXACT_MAX_SOFT {
            return None;
        }
        let mut by_var: BTreeMap<ApiVar, u64> = BTreeMap::new();
        for (i, c) in uncovered.iter().enumerate() {
            for &v in c.vars() {
                if !exclude.contains(v) {
                    *by_var.entry(v).or_default() |= 1 << i;
                }
            }
        }
        if by_var.len() > EXACT_MAX_CANDIDATES {
            return None;
        }
        let full = if uncovered.len() == 64 { u64::MAX } else { (1u64 << uncovered.len()) - 1 };
        // Strongest candidates first so good incumbents appear early.
        let mut pairs: Vec<(ApiVar, u64)> = by_var.into_iter().collect();
        pairs.sort_by(|a, b| b.1.count_ones().cmp(&a.1.count_ones()).then(a.0.cmp(&b.0)));
        let (candidates, masks) = pairs.into_iter().unzip();
        Some(Residual { candidates, masks, full })
    }

    /// Maximum number of clauses coverable with at most `picks` candidates.
    fn solve(&self, picks: usize) -> (Vec<ApiVar>, usize) {
        let mut best = (Vec::new(), 0usize);
        let mut chosen = Vec::new();
        self.branch(0, picks, 0, &mut chosen, &mut best);
        let (idx, covered) = best;
        (idx.into_iter().map(|i| self.candidates[i]).collect(), covered)
    }

    fn branch(&self, from: usize, picks: usize, covered: u64, chosen: &mut Vec<usize>, best: &mut (Vec<usize>, usize)) {
        let count = covered.count_ones() as usize;
        if count > best.1 {
            *best = (chosen.clone(), count);
        }
        if picks == 0 || from == self.masks.len() || covered == self.full {
            return;
        }
        let mut gains: Vec<u32> = self.masks[from..].iter().map(|m| (m & !covered).count_ones()).collect();
        gains.sort_unstable_by(|a, b| b.cmp(a));
        let bound = count + gains.iter().take(picks).sum::<u32>() as usize;
        if bound <= best.1 {
            return;
        }
        for i in from..self.masks.len() {
            if self.masks[i] & !covered == 0 {
                continue;
            }
            chosen.push(i);
            self.branch(i + 1, picks - 1, covered | self.masks[i], chosen, best);
            chosen.pop();
        }
    }
}

/// Repeatedly takes the API covering the most still-uncovered clauses,
/// ties by ascending id, while budget remains and some API helps.
fn greedy_cover(clauses: &[&Clause], start: &FaultSet, budget: usize) -> FaultSet {
    let mut selected = start.clone();
    let mut uncovered: Vec<&Clause> = clauses.iter().copied().filter(|c| !c.intersects(&selected)).collect();
    while selected.len() < budget && !uncovered.is_empty() {
        let mut gain: BTreeMap<ApiVar, usize> = BTreeMap::new();
        for c in &uncovered {
            for &v in c.vars() {
                *gain.entry(v).or_default() += 1;
            }
        }
        // BTreeMap iterates ascending, so max_by keeps the first maximum
        // only if we compare with reversed ids.
        let Some((&pick, _)) = gain.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            break;
        };
        selected = selected.union(&FaultSet::new([pick]));
        uncovered.retain(|c| !c.contains(pick));
    }
    selected
}

/// Two-stage budgeted selection.
///
/// Every minimal hard solution that fits the budget is completed with the
/// best residual selection, and the highest total soft coverage wins. Hard
/// solutions are visited by descending stage-one coverage, then
/// lexicographically, and the first maximum is kept.
pub fn optimize(instance: &HardeningInstance) -> Result<HardeningPlan, HardeningError> {
    let hard = instance.hard_cnf();
    let stage_one = enumerate_minimal(&hard, &SolverConfig::new(instance.budget));
    if stage_one.is_empty() {
        return Err(HardeningError::Infeasible { budget: instance.budget, hard_clauses: hard.len() });
    }
    let soft = instance.soft_clauses();
    let coverage = |h: &FaultSet| soft.iter().filter(|c| c.intersects(h)).count();
    let mut ranked: Vec<(usize, FaultSet)> = stage_one.into_iter().map(|h| (coverage(&h), h)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    let mut best: Option<(usize, FaultSet)> = None;
    let mut exact = true;
    for (cov, h) in ranked {
        let uncovered: Vec<&Clause> = soft.iter().copied().filter(|c| !c.intersects(&h)).collect();
        if let Some((best_cov, _)) = &best {
            if cov + uncovered.len() <= *best_cov {
                continue;
            }
        }
        let picks = instance.budget - h.len();
        let (selected, total) = match Residual::build(&uncovered, &h) {
            Some(residual) => {
                let (extra, gained) = residual.solve(picks);
                (h.union(&FaultSet::new(extra)), cov + gained)
            }
            None => {
                exact = false;
                log::warn!(
                    "residual problem with {} soft clauses exceeds exact limits; using greedy completion",
                    uncovered.len()
                );
                let selected = greedy_cover(&uncovered, &h, instance.budget);
                let total = coverage(&selected);
                (selected, total)
            }
        };
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, selected));
        }
    }
    let (_, selected) = best.expect("stage one produced at least one solution");
    Ok(HardeningPlan::new(instance, selected, exact))
}

/// Inverted-index greedy baseline: first cover the hard clauses by largest
/// marginal gain, then spend what is left on the soft clauses the same way.
/// An incomplete hard cover is reported through `feasible = false`.
pub fn greedy_baseline(instance: &HardeningInstance) -> HardeningPlan {
    let hard = instance.hard_cnf();
    let hard_clauses: Vec<&Clause> = hard.clauses().iter().collect();
    let mut selected = greedy_cover(&hard_clauses, &FaultSet::empty(), instance.budget);
    let hard_done = hard_clauses.iter().all(|c| c.intersects(&selected));
    if hard_done {
        selected = greedy_cover(&instance.soft_clauses(), &selected, instance.budget);
    }
    HardeningPlan::new(instance, selected, true)
}

/// Runs the chosen method, mapping an incomplete greedy hard cover to the
/// same error [`optimize`] raises.
pub fn plan_for(instance: &HardeningInstance, method: Method) -> Result<HardeningPlan, HardeningError> {
    match method {
        Method::Exact => optimize(instance),
        Method::Greedy => {
            let plan = greedy_baseline(instance);
            if plan.feasible {
                Ok(plan)
            } else {
                Err(HardeningError::Infeasible { budget: instance.budget, hard_clauses: instance.hard_cnf().len() })
            }
        }
    }
}

/// Change in covered soft clauses between two budget levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mcg {
    pub gain: i64,
    pub budget_delta: usize,
}

impl Mcg {
    pub fn value(&self) -> f64 {
        self.gain as f64 / self.budget_delta as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub budget: usize,
    /// `None` when the level is infeasible.
    pub plan: Option<HardeningPlan>,
    /// Marginal coverage gain against the previous feasible level.
    pub mcg: Option<Mcg>,
    pub afvr: Option<f64>,
}

impl SweepLevel {
    pub fn feasible(&self) -> bool {
        self.plan.is_some()
    }

    pub fn covered(&self) -> Option<usize> {
        self.plan.as_ref().map(|p| p.soft_covered)
    }

    pub fn cr(&self) -> Option<f64> {
        self.plan.as_ref().map(|p| p.cr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSweep {
    pub levels: Vec<SweepLevel>,
}

impl BudgetSweep {
    /// Orders levels by budget and fills in marginal gains.
    pub fn assemble(mut levels: Vec<SweepLevel>) -> Result<Self, HardeningError> {
        if levels.windows(2).any(|w| w[0].budget >= w[1].budget) {
            return Err(HardeningError::UnorderedBudgets);
        }
        let mut prev: Option<(usize, usize)> = None;
        for level in &mut levels {
            level.mcg = None;
            if let Some(cn) = level.covered() {
                if let Some((pb, pcn)) = prev {
                    level.mcg = Some(Mcg { gain: cn as i64 - pcn as i64, budget_delta: level.budget - pb });
                }
                prev = Some((level.budget, cn));
            }
        }
        Ok(BudgetSweep { levels })
    }
}

/// Average over requests with known faults of the fraction of those faults
/// that still fail the request once `hardened` APIs are immune. Zero when
/// no request has a known fault.
pub fn afvr<O: ExecutionOracle + ?Sized>(
    oracle: &O,
    faults: &BTreeMap<u32, Vec<FaultSet>>,
    hardened: &FaultSet,
) -> Result<f64, HardeningError> {
    let view = Hardened::new(oracle, hardened.clone());
    let mut sum = 0.0;
    let mut requests = 0usize;
    for (&id, valid) in faults {
        if valid.is_empty() {
            continue;
        }
        let mut still = 0usize;
        for s in valid {
            if view.execute(id, s)?.failed {
                still += 1;
            }
        }
        sum += still as f64 / valid.len() as f64;
        requests += 1;
    }
    Ok(if requests == 0 { 0.0 } else { sum / requests as f64 })
}

/// Plans one budget level and measures it by re-injection. Infeasibility
/// yields a level without a plan.
pub fn evaluate_level<O: ExecutionOracle + ?Sized>(
    template: &HardeningInstance,
    budget: usize,
    method: Method,
    oracle: &O,
    faults: &BTreeMap<u32, Vec<FaultSet>>,
) -> Result<SweepLevel, HardeningError> {
    match plan_for(&template.with_budget(budget), method) {
        Ok(plan) => {
            let afvr = afvr(oracle, faults, &plan.selected)?;
            Ok(SweepLevel { budget, plan: Some(plan), mcg: None, afvr: Some(afvr) })
        }
        Err(HardeningError::Infeasible { .. }) => Ok(SweepLevel { budget, plan: None, mcg: None, afvr: None }),
        Err(e) => Err(e),
    }
}

/// Plans every budget level and computes CR, MCG and AFVR.
pub fn budget_sweep<O: ExecutionOracle + ?Sized>(
    template: &HardeningInstance,
    budgets: &[usize],
    method: Method,
    oracle: &O,
    faults: &BTreeMap<u32, Vec<FaultSet>>,
) -> Result<BudgetSweep, HardeningError> {
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HardeningError::UnorderedBudgets);
    }
    let ids = template.hard.iter().chain(&template.soft).map(|(id, _)| *id);
    for id in ids {
        if !faults.contains_key(&id) {
            return Err(HardeningError::MissingRequest(id));
        }
    }
    let levels =
        budgets.iter().map(|&b| evaluate_level(template, b, method, oracle, faults)).collect::<Result<Vec<_>, _>>()?;
    BudgetSweep::assemble(levels)
}
