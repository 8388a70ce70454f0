//! Simulated microservice systems and the fault-injection execution oracle.
//!
//! Requests are generated with a grouped-skeleton layout. Each request has
//! `group_num` groups of two alternative paths: a short fast path (cache
//! hit) and a long full path (cache miss), split 3:7 over `edge_num` call
//! edges. The two paths of a group share `bone_num` skeleton calls and are
//! otherwise disjoint; different groups share nothing except variables
//! drawn from the optional cross-request pool.
//!
//! Executing a request under an injected fault set walks the paths in
//! priority order and serves the request through the first path that
//! contains no injected API. If every path is hit, the request fails.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{make_cnf, ApiVar, Clause, MonotoneCnf};
use crate::solver::FaultSet;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid generator parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error("unknown request id {0}")]
    UnknownRequest(u32),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters of the grouped-skeleton generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub group_num: usize,
    /// Call edges across the fast and full path of one group, skeleton
    /// edges counted on both paths.
    pub edge_num: usize,
    pub bone_num: usize,
    pub n_requests: usize,
    /// Fraction of each request's non-skeleton calls remapped onto a global
    /// pool of APIs shared between requests.
    pub shared_api_fraction: f64,
    pub seed: u64,
}

impl GenParams {
    pub fn new(group_num: usize, edge_num: usize, bone_num: usize) -> Self {
        GenParams { group_num, edge_num, bone_num, n_requests: 1, shared_api_fraction: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut violations = Vec::new();
        if self.group_num < 1 {
            violations.push("group_num must be >= 1".to_string());
        }
        if self.edge_num < 4 {
            violations.push(format!("edge_num must be >= 4 (got {})", self.edge_num));
        }
        let cap = 3 * self.edge_num / 10;
        if self.bone_num > cap {
            violations.push(format!("bone_num {} exceeds floor(0.3 * edge_num) = {cap}", self.bone_num));
        }
        if self.n_requests < 1 {
            violations.push("n_requests must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.shared_api_fraction) {
            violations.push(format!("shared_api_fraction must lie in [0, 1] (got {})", self.shared_api_fraction));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidParams(violations))
        }
    }

    /// Calls on the fast path, round(0.3 · edge_num), skeleton included.
    pub fn fast_len(&self) -> usize {
        (3 * self.edge_num + 5) / 10
    }

    pub fn full_len(&self) -> usize {
        self.edge_num - self.fast_len()
    }

    /// Variables owned by one request: skeleton once plus both remainders.
    pub fn vars_per_request(&self) -> usize {
        self.group_num * (self.edge_num - self.bone_num)
    }

    /// ACO of one generated request, G·B / (C(2G, 2) · E/2). Only skeleton
    /// variables appear in two clauses and the mean clause length is E/2.
    pub fn closed_form_aco(&self) -> f64 {
        let g = self.group_num as f64;
        let pairs = g * (2.0 * g - 1.0);
        if pairs == 0.0 {
            return 0.0;
        }
        g * self.bone_num as f64 / (pairs * self.edge_num as f64 / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub id: u32,
    /// Non-negative popularity weight used for priority assignment.
    pub frequency: u64,
    /// Alternative paths in failover priority order.
    pub paths: Vec<Clause>,
    pub group_of_path: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiSymbol {
    pub var: ApiVar,
    pub service: String,
    pub api: String,
    pub replica: u32,
}

/// An immutable generated world: the requests, their paths, and names for
/// every variable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedSystem {
    pub n_vars: usize,
    pub requests: Vec<RequestSpec>,
    pub symbol_table: Vec<ApiSymbol>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionOutcome {
    pub failed: bool,
    /// The path that served the request; `None` iff it failed.
    pub observed_path: Option<Clause>,
}

impl ExecutionOutcome {
    fn served_by(path: Clause) -> Self {
        ExecutionOutcome { failed: false, observed_path: Some(path) }
    }

    fn failure() -> Self {
        ExecutionOutcome { failed: true, observed_path: None }
    }
}

/// Anything a campaign can inject faults into.
pub trait ExecutionOracle {
    /// Size of the variable universe fault sets are drawn from.
    fn n_vars(&self) -> usize;
    fn execute(&self, request_id: u32, injected: &FaultSet) -> Result<ExecutionOutcome, SimError>;
}

impl SimulatedSystem {
    pub fn request(&self, id: u32) -> Result<&RequestSpec, SimError> {
        self.requests
            .binary_search_by_key(&id, |r| r.id)
            .map(|i| &self.requests[i])
            .map_err(|_| SimError::UnknownRequest(id))
    }

    pub fn request_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.requests.iter().map(|r| r.id)
    }

    pub fn frequency(&self, id: u32) -> Result<u64, SimError> {
        Ok(self.request(id)?.frequency)
    }

    pub fn symbol(&self, var: ApiVar) -> Option<&ApiSymbol> {
        self.symbol_table.get(var.index())
    }

    /// The `n` most frequent requests, ties broken by ascending id.
    pub fn top_frequent(&self, n: usize) -> Vec<u32> {
        let mut ids: Vec<(u64, u32)> = self.requests.iter().map(|r| (r.frequency, r.id)).collect();
        ids.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        ids.into_iter().take(n).map(|(_, id)| id).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("system serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let system: SimulatedSystem = serde_path_to_error::deserialize(de)
            .map_err(|e| SimError::Schema { path: e.path().to_string(), message: e.inner().to_string() })?;
        system.check()?;
        Ok(system)
    }

    fn check(&self) -> Result<(), SimError> {
        let schema = |path: String, message: &str| SimError::Schema { path, message: message.to_string() };
        if self.symbol_table.len() != self.n_vars {
            return Err(schema("symbol_table".into(), "must have one entry per variable"));
        }
        for (i, sym) in self.symbol_table.iter().enumerate() {
            if sym.var.index() != i {
                return Err(schema(format!("symbol_table[{i}].var"), "must equal its position"));
            }
        }
        for (ri, req) in self.requests.iter().enumerate() {
            if ri > 0 && self.requests[ri - 1].id >= req.id {
                return Err(schema(format!("requests[{ri}].id"), "ids must be strictly increasing"));
            }
            if req.paths.is_empty() {
                return Err(schema(format!("requests[{ri}].paths"), "request has no paths"));
            }
            if req.group_of_path.len() != req.paths.len() {
                return Err(schema(format!("requests[{ri}].group_of_path"), "must have one entry per path"));
            }
            for (pi, path) in req.paths.iter().enumerate() {
                if path.is_empty() {
                    return Err(schema(format!("requests[{ri}].paths[{pi}]"), "empty path"));
                }
                let mut sorted = path.vars().to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted != path.vars() {
                    return Err(schema(
                        format!("requests[{ri}].paths[{pi}]"),
                        "variables must be ascending and unique",
                    ));
                }
                if path.vars().iter().any(|v| v.index() >= self.n_vars) {
                    return Err(schema(format!("requests[{ri}].paths[{pi}]"), "variable out of range"));
                }
            }
        }
        Ok(())
    }
}

impl ExecutionOracle for SimulatedSystem {
    fn n_vars(&self) -> usize {
        self.n_vars
    }

    fn execute(&self, request_id: u32, injected: &FaultSet) -> Result<ExecutionOutcome, SimError> {
        execute(self, request_id, injected)
    }
}

/// Runs a request with `injected` APIs failed.
pub fn execute(system: &SimulatedSystem, request_id: u32, injected: &FaultSet) -> Result<ExecutionOutcome, SimError> {
    let req = system.request(request_id)?;
    Ok(match req.paths.iter().find(|p| !p.intersects(injected)) {
        Some(p) => ExecutionOutcome::served_by(p.clone()),
        None => ExecutionOutcome::failure(),
    })
}

/// All paths of a request. Meant for oracles in tests; a campaign only ever
/// observes paths through [`ExecutionOracle::execute`].
pub fn ground_truth_paths(system: &SimulatedSystem, request_id: u32) -> Result<&[Clause], SimError> {
    Ok(&system.request(request_id)?.paths)
}

/// The complete path formula of a request.
pub fn ground_truth_cnf(system: &SimulatedSystem, request_id: u32) -> Result<MonotoneCnf, SimError> {
    let paths = ground_truth_paths(system, request_id)?;
    Ok(make_cnf(paths.iter().map(|p| p.vars().to_vec()), system.n_vars).expect("generated paths are valid"))
}

/// A view of an oracle in which hardened APIs never fail.
pub struct Hardened<'a, O: ?Sized> {
    inner: &'a O,
    hardened: FaultSet,
}

impl<'a, O: ExecutionOracle + ?Sized> Hardened<'a, O> {
    pub fn new(inner: &'a O, hardened: FaultSet) -> Self {
        Hardened { inner, hardened }
    }
}

impl<O: ExecutionOracle + ?Sized> ExecutionOracle for Hardened<'_, O> {
    fn n_vars(&self) -> usize {
        self.inner.n_vars()
    }

    fn execute(&self, request_id: u32, injected: &FaultSet) -> Result<ExecutionOutcome, SimError> {
        self.inner.execute(request_id, &injected.difference(&self.hardened))
    }
}

/// Adds transient path unavailability with retries. Each attempt drops
/// every healthy path independently with probability `flake_rate`; the
/// request counts as failed only if all `retries + 1` attempts fail. Meant
/// for robustness experiments, not for reproducing exact counts.
pub struct FlakyOracle<'a> {
    system: &'a SimulatedSystem,
    flake_rate: f64,
    retries: u32,
    rng: RefCell<ChaCha8Rng>,
}

impl<'a> FlakyOracle<'a> {
    pub fn new(system: &'a SimulatedSystem, flake_rate: f64, retries: u32, seed: u64) -> Self {
        FlakyOracle { system, flake_rate, retries, rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)) }
    }
}

impl ExecutionOracle for FlakyOracle<'_> {
    fn n_vars(&self) -> usize {
        self.system.n_vars
    }

    fn execute(&self, request_id: u32, injected: &FaultSet) -> Result<ExecutionOutcome, SimError> {
        let req = self.system.request(request_id)?;
        let mut rng = self.rng.borrow_mut();
        for _ in 0..=self.retries {
            let served =
                req.paths.iter().filter(|p| !p.intersects(injected)).find(|_| !rng.random_bool(self.flake_rate));
            if let Some(p) = served {
                return Ok(ExecutionOutcome::served_by(p.clone()));
            }
        }
        Ok(ExecutionOutcome::failure())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Skeleton,
    Fast,
    Full,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Skeleton => "skeleton",
            Role::Fast => "cache",
            Role::Full => "db",
        }
    }
}

/// Power-law weight of the `rank`-th pool API.
fn pool_weight(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).powf(1.2)
}

/// Builds a system from `params`. Deterministic in `params.seed`; all
/// randomness comes from one ChaCha8 stream.
pub fn generate_system(params: &GenParams) -> Result<SimulatedSystem, SimError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let g = params.group_num;
    let b = params.bone_num;
    let fast_rest = params.fast_len() - b;
    let full_rest = params.full_len() - b;
    let non_skeleton = g * (fast_rest + full_rest);
    let shared_per_request = (params.shared_api_fraction * non_skeleton as f64).round() as usize;
    let pool_size = if shared_per_request > 0 { non_skeleton } else { 0 };

    let mut symbols: Vec<ApiSymbol> = (0..pool_size)
        .map(|i| ApiSymbol {
            var: ApiVar(i as u32),
            service: format!("shared-svc-{}", i / 4),
            api: format!("/shared/api-{i}"),
            replica: 0,
        })
        .collect();

    // Frequencies follow a Zipf-like profile over a random popularity rank.
    let mut ranks: Vec<usize> = (1..=params.n_requests).collect();
    ranks.shuffle(&mut rng);

    let mut requests = Vec::with_capacity(params.n_requests);
    for (r, &rank) in ranks.iter().enumerate() {
        // Slot layout per group: skeleton, fast remainder, full remainder.
        let mut slots: Vec<(usize, Role)> = Vec::with_capacity(g * (params.edge_num - b));
        for group in 0..g {
            slots.extend(std::iter::repeat_n((group, Role::Skeleton), b));
            slots.extend(std::iter::repeat_n((group, Role::Fast), fast_rest));
            slots.extend(std::iter::repeat_n((group, Role::Full), full_rest));
        }

        let shareable: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].1 != Role::Skeleton).collect();
        let shared_slots: HashSet<usize> = shareable.choose_multiple(&mut rng, shared_per_request).copied().collect();
        let mut pool_picks = pick_pool_vars(&mut rng, pool_size, shared_slots.len()).into_iter();

        let n_private = slots.len() - shared_slots.len();
        let base = symbols.len();
        let mut private_ids: Vec<u32> = (base..base + n_private).map(|v| v as u32).collect();
        private_ids.shuffle(&mut rng);
        let mut private_ids = private_ids.into_iter();

        let mut slot_var = vec![ApiVar(0); slots.len()];
        let mut private_meta: Vec<(u32, usize, Role, usize)> = Vec::with_capacity(n_private);
        for (i, &(group, role)) in slots.iter().enumerate() {
            slot_var[i] = if shared_slots.contains(&i) {
                ApiVar(pool_picks.next().expect("pool sized for picks"))
            } else {
                let id = private_ids.next().expect("one private id per slot");
                private_meta.push((id, group, role, i));
                ApiVar(id)
            };
        }
        private_meta.sort_unstable();
        for (id, group, role, slot) in private_meta {
            debug_assert_eq!(id as usize, symbols.len());
            symbols.push(ApiSymbol {
                var: ApiVar(id),
                service: format!("req{r}-g{group}-{}", role.name()),
                api: format!("/call-{slot}"),
                replica: 0,
            });
        }

        let mut paths = Vec::with_capacity(2 * g);
        let mut group_of_path = Vec::with_capacity(2 * g);
        for group in 0..g {
            for role in [Role::Fast, Role::Full] {
                let vars = slots
                    .iter()
                    .zip(&slot_var)
                    .filter(|((sg, sr), _)| *sg == group && (*sr == Role::Skeleton || *sr == role))
                    .map(|(_, &v)| v);
                paths.push(Clause::new(vars).expect("paths are non-empty"));
                group_of_path.push(group);
            }
        }
        requests.push(RequestSpec {
            id: r as u32,
            frequency: (10_000.0 / rank as f64).round() as u64,
            paths,
            group_of_path,
        });
    }

    Ok(SimulatedSystem { n_vars: symbols.len(), requests, symbol_table: symbols })
}

/// Draws `count` distinct pool ids, favouring low ranks.
fn pick_pool_vars(rng: &mut ChaCha8Rng, pool_size: usize, count: usize) -> Vec<u32> {
    let mut remaining: Vec<usize> = (0..pool_size).collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().map(|&i| pool_weight(i)).sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            target -= pool_weight(i);
            if target <= 0.0 {
                pick = pos;
                break;
            }
        }
        out.push(remaining.remove(pick) as u32);
    }
    out
}
