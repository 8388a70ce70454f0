//! Shared generators for the integration tests.

#![allow(dead_code)]

use faultplan::cnf::make_cnf;
use faultplan::{ApiVar, FaultSet, MonotoneCnf};
use proptest::prelude::*;

pub fn fs(ids: &[u32]) -> FaultSet {
    FaultSet::new(ids.iter().map(|&i| ApiVar(i)))
}

/// Raw clause lists over `n` variables.
pub fn clause_lists(n: u32, max_m: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(
        prop::collection::btree_set(0..n, 1..=max_len).prop_map(|s| s.into_iter().collect()),
        0..=max_m,
    )
}

/// A formula together with its universe size.
pub fn cnf_strategy(max_n: u32, max_m: usize, max_len: usize) -> impl Strategy<Value = MonotoneCnf> {
    (1..=max_n).prop_flat_map(move |n| {
        clause_lists(n, max_m, max_len.min(n as usize)).prop_map(move |cl| build(&cl, n as usize))
    })
}

pub fn build(clauses: &[Vec<u32>], n: usize) -> MonotoneCnf {
    make_cnf(clauses.iter().map(|c| c.iter().map(|&v| ApiVar(v)).collect::<Vec<_>>()), n).unwrap()
}

pub fn assignment(n: usize) -> impl Strategy<Value = FaultSet> {
    prop::collection::btree_set(0..n.max(1) as u32, 0..=n).prop_map(|s| s.into_iter().map(ApiVar).collect())
}
