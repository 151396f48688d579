//! Structural invariants of reasoning and matching over random instances.

mod common;

use common::invariants::{case, inactive_nodes_unchanged, reasoning_and_matching};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reasoning_and_matching_invariants(c in case()) {
        reasoning_and_matching(&c)?;
    }

    #[test]
    fn inactive_nodes_are_bit_identical_across_steps(
        seed in any::<u64>(),
        k in 2usize..=6,
        clauses in 1usize..=3,
    ) {
        inactive_nodes_unchanged(seed, k, clauses)?;
    }
}
