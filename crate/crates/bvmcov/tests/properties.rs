//! Property tests for the structural invariants that hold for every input,
//! not just the hand-picked cases.

use bvmcov::graph::{junction_tree, mcs_decomposable, random_decomposable, UGraph};
use bvmcov::matcore::{
    elimination_matrix, graph_elimination_map, vec_of, vech, vech_inverse, SymMatrix,
};
use proptest::prelude::*;

fn arb_sym(p: usize) -> impl Strategy<Value = SymMatrix> {
    proptest::collection::vec(-10.0f64..10.0, p * (p + 1) / 2)
        .prop_map(move |v| vech_inverse(&v).expect("triangular length"))
}

proptest! {
    #[test]
    fn vech_round_trips_and_matches_elimination(p in 1usize..=8, seed in any::<u64>()) {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) * 4.0 - 2.0
        };
        let a = SymMatrix::from_lower(p, |_, _| next());
        let v = vech(&a);
        let back = vech_inverse(v.as_vector().as_slice()).unwrap();
        prop_assert_eq!(back.as_matrix(), a.as_matrix());
        let selected = elimination_matrix(p).apply_vec(&vec_of(a.as_matrix())).unwrap();
        prop_assert_eq!(&selected, v.as_vector());
    }

    #[test]
    fn sym_matrices_stay_exactly_symmetric(a in arb_sym(5)) {
        for i in 0..5 {
            for j in 0..5 {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn graph_edge_list_round_trips(p in 1usize..=9, seed in any::<u64>()) {
        let g = random_decomposable(p, seed);
        let text = g.to_edge_list_string();
        let back = UGraph::from_edge_list_str(&text).unwrap();
        prop_assert_eq!(&g, &back);
    }

    #[test]
    fn grown_graphs_are_decomposable_with_valid_trees(p in 1usize..=10, seed in any::<u64>()) {
        let g = random_decomposable(p, seed);
        prop_assert!(mcs_decomposable(&g).0);
        let jt = junction_tree(&g).unwrap();
        prop_assert!(jt.vertex_multiset_identity());
        // Every edge is inside some clique and the free-coordinate count
        // matches the restricted elimination map.
        let map = graph_elimination_map(&g);
        prop_assert_eq!(map.rows(), g.free_count());
    }

    #[test]
    fn graph_map_selects_subset_of_full_map(p in 1usize..=7, seed in any::<u64>()) {
        let g = random_decomposable(p, seed);
        let full = elimination_matrix(p);
        let restricted = graph_elimination_map(&g);
        // The restricted coordinates appear in the full map in the same
        // column-stacked order.
        let full_cols: Vec<usize> = (0..full.rows()).map(|r| full.col_of_row(r)).collect();
        let mut last_pos = 0usize;
        for r in 0..restricted.rows() {
            let col = restricted.col_of_row(r);
            let pos = full_cols.iter().position(|&c| c == col).unwrap();
            if r > 0 {
                prop_assert!(pos > last_pos, "order preserved");
            }
            last_pos = pos;
        }
    }
}
