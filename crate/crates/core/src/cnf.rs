//! Monotone CNF formulas over API-call variables.
//!
//! Every clause is a disjunction of positive literals; one clause models one
//! alternative execution path of a request (or, on the hardening side, one
//! known combinatorial fault). A formula is satisfied by a set of variables
//! iff that set intersects every clause.
//!
//! The text format (`p mcnf <n_vars> <n_clauses>`) is a monotone cousin of
//! DIMACS: variables are written 1-based, every clause line ends with `0`,
//! and negative literals are rejected.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::FaultSet;

/// One API call site, identified by a dense id in `[0, n_vars)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApiVar(pub u32);

impl ApiVar {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ApiVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CnfError {
    #[error("clause {index} is empty")]
    EmptyClause { index: usize },
    #[error("variable {var} is out of range for a universe of {n_vars} variables")]
    VarOutOfRange { var: u32, n_vars: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> CnfError {
    CnfError::Parse { line, message: message.into() }
}

/// A non-empty set of variables, stored sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Clause(Vec<ApiVar>);

impl Clause {
    /// Builds a clause from arbitrary ids, sorting and dropping duplicates.
    /// Returns `None` for an empty input.
    pub fn new<I: IntoIterator<Item = ApiVar>>(vars: I) -> Option<Self> {
        let mut vars: Vec<ApiVar> = vars.into_iter().collect();
        vars.sort_unstable();
        vars.dedup();
        if vars.is_empty() {
            None
        } else {
            Some(Clause(vars))
        }
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

    /// True iff the clause shares at least one variable with `set`.
    pub fn intersects(&self, set: &FaultSet) -> bool {
        sorted_intersect(&self.0, set.vars())
    }

    pub fn intersection_len(&self, other: &Clause) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

pub(crate) fn sorted_intersect(a: &[ApiVar], b: &[ApiVar]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// A conjunction of monotone clauses over `n_vars` variables.
///
/// Formulas built through [`make_cnf`] or [`conjoin`] are normalized:
/// identical clauses are kept once, in order of first occurrence. Subsumed
/// clauses are kept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotoneCnf {
    n_vars: usize,
    clauses: Vec<Clause>,
}

impl MonotoneCnf {
    pub fn empty(n_vars: usize) -> Self {
        MonotoneCnf { n_vars, clauses: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// Relabels the occurring variables densely as `0..k` in ascending order.
    /// Returns the compacted formula and the map from new id to old id.
    pub fn compact(&self) -> (MonotoneCnf, Vec<ApiVar>) {
        let mut used: Vec<ApiVar> = self.clauses.iter().flat_map(|c| c.vars().iter().copied()).collect();
        used.sort_unstable();
        used.dedup();
        let relabel = |v: &ApiVar| ApiVar(used.binary_search(v).expect("occurring variable") as u32);
        let clauses = self.clauses.iter().map(|c| Clause(c.vars().iter().map(relabel).collect())).collect();
        (MonotoneCnf { n_vars: used.len(), clauses }, used)
    }

    fn push_normalized(&mut self, clause: Clause) {
        if !self.clauses.contains(&clause) {
            self.clauses.push(clause);
        }
    }

    fn check_range(&self, clause: &Clause) -> Result<(), CnfError> {
        match clause.vars().last() {
            Some(v) if v.index() >= self.n_vars => Err(CnfError::VarOutOfRange { var: v.0, n_vars: self.n_vars }),
            _ => Ok(()),
        }
    }
}

/// Builds a normalized formula with one clause per path.
pub fn make_cnf<P, I>(paths: P, n_vars: usize) -> Result<MonotoneCnf, CnfError>
where
    P: IntoIterator<Item = I>,
    I: IntoIterator<Item = ApiVar>,
{
    let mut cnf = MonotoneCnf::empty(n_vars);
    let mut seen = HashSet::new();
    for (index, path) in paths.into_iter().enumerate() {
        let clause = Clause::new(path).ok_or(CnfError::EmptyClause { index })?;
        cnf.check_range(&clause)?;
        if seen.insert(clause.clone()) {
            cnf.clauses.push(clause);
        }
    }
    Ok(cnf)
}

/// Returns `cnf ∧ new_path`, leaving `cnf` untouched.
pub fn conjoin<I>(cnf: &MonotoneCnf, new_path: I) -> Result<MonotoneCnf, CnfError>
where
    I: IntoIterator<Item = ApiVar>,
{
    let clause = Clause::new(new_path).ok_or(CnfError::EmptyClause { index: cnf.len() })?;
    cnf.check_range(&clause)?;
    let mut out = cnf.clone();
    out.push_normalized(clause);
    Ok(out)
}

/// Monotone satisfaction: every clause contains an assigned variable.
pub fn is_satisfied(cnf: &MonotoneCnf, assignment: &FaultSet) -> bool {
    cnf.clauses.iter().all(|c| c.intersects(assignment))
}

/// Summary statistics of a formula's shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnfStats {
    pub m: usize,
    pub mean_clause_len: f64,
    /// Average number of clauses containing a variable, over variables that
    /// occur at all.
    pub mean_var_coverage: f64,
    /// Average Clause Overlap: expected intersection size of two distinct
    /// clauses, normalized by the mean clause length.
    pub aco: f64,
}

pub fn compute_stats(cnf: &MonotoneCnf) -> CnfStats {
    stats_of_clauses(&cnf.clauses)
}

/// Statistics over a raw clause list, duplicates included.
pub fn stats_of_clauses(clauses: &[Clause]) -> CnfStats {
    let m = clauses.len();
    let total_len: usize = clauses.iter().map(Clause::len).sum();
    let mut degree: std::collections::HashMap<ApiVar, u64> = std::collections::HashMap::new();
    for c in clauses {
        for &v in c.vars() {
            *degree.entry(v).or_default() += 1;
        }
    }
    let mean_clause_len = if m == 0 { 0.0 } else { total_len as f64 / m as f64 };
    let mean_var_coverage = if degree.is_empty() { 0.0 } else { total_len as f64 / degree.len() as f64 };
    let aco = if m < 2 {
        0.0
    } else {
        // Σ_x C(deg(x), 2) counts every shared variable of every clause pair.
        let shared_pairs: u64 = degree.values().map(|&d| d * d.saturating_sub(1) / 2).sum();
        2.0 * shared_pairs as f64 / ((m * (m - 1)) as f64 * mean_clause_len)
    };
    CnfStats { m, mean_clause_len, mean_var_coverage, aco }
}

/// Parses the `p mcnf` text format.
pub fn parse_cnf(text: &str) -> Result<MonotoneCnf, CnfError> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    let mut header = None;
    for (no, line) in lines.by_ref() {
        if line.starts_with("c ") || line == "c" {
            continue;
        }
        header = Some((no, line));
        break;
    }
    let (header_no, header) = header.ok_or_else(|| parse_err(1, "missing header"))?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    let (n_vars, n_clauses) = match fields.as_slice() {
        ["p", "mcnf", n, m] => {
            let n = n.parse::<usize>().map_err(|_| parse_err(header_no, "malformed header"))?;
            let m = m.parse::<usize>().map_err(|_| parse_err(header_no, "malformed header"))?;
            (n, m)
        }
        _ => return Err(parse_err(header_no, "malformed header, expected `p mcnf <n_vars> <n_clauses>`")),
    };

    let mut raw = Vec::with_capacity(n_clauses);
    let mut last_line = header_no;
    for (no, line) in lines {
        last_line = no;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('c') {
            return Err(parse_err(no, "comment after header"));
        }
        let mut vars = Vec::new();
        let mut terminated = false;
        for tok in line.split_ascii_whitespace() {
            if terminated {
                return Err(parse_err(no, "literal after clause terminator"));
            }
            let lit: i64 = tok.parse().map_err(|_| parse_err(no, format!("invalid literal `{tok}`")))?;
            match lit {
                0 => terminated = true,
                l if l < 0 => return Err(parse_err(no, "negative literal")),
                l => {
                    if l as u64 > n_vars as u64 {
                        return Err(parse_err(no, format!("variable {l} exceeds n_vars {n_vars}")));
                    }
                    vars.push(ApiVar((l - 1) as u32));
                }
            }
        }
        if !terminated {
            return Err(parse_err(no, "missing terminator `0`"));
        }
        if vars.is_empty() {
            return Err(parse_err(no, "empty clause"));
        }
        raw.push(vars);
    }
    if raw.len() != n_clauses {
        return Err(parse_err(last_line, format!("header declares {n_clauses} clauses, found {}", raw.len())));
    }
    make_cnf(raw, n_vars)
}

/// Writes the canonical text form: header, then one ascending clause per line.
pub fn serialize_cnf(cnf: &MonotoneCnf) -> String {
    let mut out = format!("p mcnf {} {}\n", cnf.n_vars, cnf.clauses.len());
    for c in &cnf.clauses {
        for v in c.vars() {
            let _ = write!(out, "{} ", v.0 + 1);
        }
        out.push_str("0\n");
    }
    out
}
