use crown_core::embedder::{clean_to_expander, CleanOptions, NodeId, PartialEmbedding, Policy};
use crown_core::{Graph, VertexSet};
use proptest::prelude::*;

fn arb_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (4usize..=max_n, 0.2f64..0.9).prop_flat_map(|(n, p)| {
        proptest::collection::vec(proptest::bool::weighted(p), n * (n - 1) / 2).prop_map(move |bits| {
            let mut edges = Vec::new();
            let mut k = 0;
            for u in 0..n as u32 {
                for v in u + 1..n as u32 {
                    if bits[k] {
                        edges.push((u, v));
                    }
                    k += 1;
                }
            }
            Graph::from_edges(n, &edges).unwrap()
        })
    })
}

#[derive(Debug, Clone)]
enum Op {
    Place(usize),
    Extend(usize, bool),
    Rollback(usize),
}

fn arb_ops() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(
        prop_oneof![
            any::<usize>().prop_map(Op::Place),
            (any::<usize>(), any::<bool>()).prop_map(|(i, b)| Op::Extend(i, b)),
            any::<usize>().prop_map(Op::Rollback),
        ],
        1..40,
    )
}

fn apply(e: &mut PartialEmbedding, op: &Op) {
    let ids: Vec<NodeId> = e.node_ids().collect();
    match *op {
        Op::Place(i) => {
            let free: Vec<u32> = e.universe().iter().filter(|&v| !e.used().contains(v)).collect();
            if !free.is_empty() {
                let _ = e.place(free[i % free.len()]);
            }
        }
        Op::Extend(i, lowest) if !ids.is_empty() => {
            let policy = if lowest { Policy::LowestId } else { Policy::MaxFreeNeighbors };
            let _ = e.extend_leaf(ids[i % ids.len()], policy);
        }
        Op::Rollback(i) => {
            let leaves: Vec<NodeId> = ids.into_iter().filter(|&id| e.degree(id).unwrap() <= 1).collect();
            if !leaves.is_empty() {
                e.rollback_leaf(leaves[i % leaves.len()]).unwrap();
            }
        }
        Op::Extend(..) => {}
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_ops_keep_bookkeeping_consistent(g in arb_graph(14), ops in arb_ops(), scale in 1usize..=4, cap in 1usize..=3) {
        let n = g.n();
        let mut e = PartialEmbedding::new(&g, VertexSet::full(n), scale, cap).with_size_limit(n);
        for op in &ops {
            apply(&mut e, op);
            prop_assert!(e.check_structure().is_ok(), "{:?}", e.check_structure());
            let exact = e.goodness_exact(u64::MAX).unwrap();
            let inc = e.goodness_incremental(u64::MAX).unwrap();
            prop_assert_eq!(exact.good, inc.good);
        }
    }

    #[test]
    fn rollback_undoes_extend(g in arb_graph(14), ops in arb_ops(), pick in any::<usize>()) {
        let n = g.n();
        let mut e = PartialEmbedding::new(&g, VertexSet::full(n), 2, 3).with_size_limit(n);
        for op in &ops {
            apply(&mut e, op);
        }
        let ids: Vec<NodeId> = e.node_ids().collect();
        prop_assume!(!ids.is_empty());
        let before = e.clone();
        let before_free: Vec<usize> = (0..n as u32).map(|v| before.free_degree(v)).collect();
        if let Ok(leaf) = e.extend_leaf(ids[pick % ids.len()], Policy::MaxFreeNeighbors) {
            prop_assert!(e != before);
            e.rollback_leaf(leaf).unwrap();
        }
        prop_assert!(e == before);
        let after_free: Vec<usize> = (0..n as u32).map(|v| e.free_degree(v)).collect();
        prop_assert_eq!(before_free, after_free);
        prop_assert!(e.check_structure().is_ok());
    }

    #[test]
    fn cleaning_is_idempotent(g in arb_graph(30), delta in 0.05f64..0.2, drop in 0usize..4) {
        let n = g.n();
        let u = VertexSet::from_vertices(n, (drop as u32)..n as u32);
        let opts = CleanOptions::default();
        let Ok(first) = clean_to_expander(&g, &u, delta, &opts) else {
            return Ok(());
        };
        for v in first.kept.iter() {
            prop_assert!(g.degree_into(v, &first.kept) as f64 >= first.threshold);
        }
        prop_assert_eq!(first.kept.union(&first.removed), u);
        let second = clean_to_expander(&g, &first.kept, delta, &opts).unwrap();
        prop_assert!(second.removed.is_empty());
        prop_assert_eq!(second.kept, first.kept);
    }
}
