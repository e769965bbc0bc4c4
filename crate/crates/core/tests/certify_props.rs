use std::collections::VecDeque;

use crown_core::certificate::Crown;
use crown_core::certify::{square_hamilton_order, verify_crown, verify_square_hamilton, CrownCheck, SquareFailure};
use crown_core::generators::{crown_fixture, random_regular};
use crown_core::Graph;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

const SPANNING: CrownCheck = CrownCheck {
    spanning: true,
    spike_count: None,
};

fn arb_fixture() -> impl Strategy<Value = (Graph, Crown)> {
    (3usize..60).prop_flat_map(|len| {
        proptest::collection::vec(any::<bool>(), len).prop_map(move |mask| {
            let spikes: Vec<usize> = (0..len).filter(|&i| mask[i]).collect();
            crown_fixture(len, &spikes).unwrap()
        })
    })
}

fn clauses(g: &Graph, crown: &Crown) -> Vec<&'static str> {
    verify_crown(g, crown, SPANNING).violations.iter().map(|v| v.clause()).collect()
}

fn bfs_distance(g: &Graph, s: u32, t: u32) -> usize {
    let mut dist = vec![usize::MAX; g.n()];
    dist[s as usize] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(v) = q.pop_front() {
        for &w in g.neighbors(v) {
            if dist[w as usize] == usize::MAX {
                dist[w as usize] = dist[v as usize] + 1;
                q.push_back(w);
            }
        }
    }
    dist[t as usize]
}

proptest! {
    #[test]
    fn fixture_orders_are_square_hamilton((g, crown) in arb_fixture()) {
        prop_assert!(verify_crown(&g, &crown, SPANNING).is_valid());
        let cert = square_hamilton_order(&crown, g.n()).unwrap();
        prop_assert!(verify_square_hamilton(&g, &cert.order).ok);
        let k = cert.order.len();
        for i in 0..k {
            prop_assert!(bfs_distance(&g, cert.order[i], cert.order[(i + 1) % k]) <= 2);
        }
    }

    #[test]
    fn single_clause_mutations_are_rejected((g, crown) in arb_fixture(), pick in any::<usize>()) {
        let n = g.n() as u32;
        let len = crown.cycle.len();

        let mut m = crown.clone();
        m.cycle.remove(pick % len);
        prop_assert!(clauses(&g, &m).contains(&"not-spanning"));

        let mut m = crown.clone();
        m.cycle[1] = m.cycle[0];
        prop_assert!(clauses(&g, &m).contains(&"cycle-repeats-vertex"));

        let mut m = crown.clone();
        m.cycle.push(n);
        prop_assert!(clauses(&g, &m).contains(&"vertex-out-of-range"));

        let mut m = crown.clone();
        m.cycle.truncate(2);
        prop_assert!(clauses(&g, &m).contains(&"cycle-too-short"));

        if len > 3 {
            let mut m = crown.clone();
            m.cycle.swap(0, 1);
            prop_assert!(clauses(&g, &m).contains(&"cycle-edge-missing"));
        }

        if !crown.spikes.is_empty() {
            let j = pick % crown.spikes.len();
            let (a, b) = crown.spikes[j];

            let mut m = crown.clone();
            m.spikes.remove(j);
            prop_assert!(clauses(&g, &m).contains(&"not-spanning"));

            let mut m = crown.clone();
            m.spikes.push((a, b));
            prop_assert!(clauses(&g, &m).contains(&"spikes-share-vertex"));

            let mut m = crown.clone();
            let next = crown.cycle[(crown.cycle.iter().position(|&v| v == a).unwrap() + 1) % len];
            m.spikes[j] = (a, next);
            let c = clauses(&g, &m);
            prop_assert!(c.contains(&"spike-inside-cycle") && c.contains(&"spike-is-cycle-edge"));

            let mut m = crown.clone();
            m.spikes[j] = (b, b);
            prop_assert!(clauses(&g, &m).contains(&"spike-not-touching-cycle"));

            let far = crown.cycle[(crown.cycle.iter().position(|&v| v == a).unwrap() + len / 2) % len];
            if far != a {
                let mut m = crown.clone();
                m.spikes[j] = (far, b);
                prop_assert!(clauses(&g, &m).contains(&"spike-not-edge"));
            }
        }
    }
}

#[test]
fn random_orders_on_sparse_graphs_fail_with_far_witness() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    for seed in 0..20 {
        let g = random_regular(200, 3, seed).unwrap();
        let mut order: Vec<u32> = (0..200).collect();
        order.shuffle(&mut rng);
        let check = verify_square_hamilton(&g, &order);
        assert!(!check.ok);
        match check.witness {
            Some(SquareFailure::TooFar { u, v, .. }) => assert!(bfs_distance(&g, u, v) > 2),
            other => panic!("unexpected witness {other:?}"),
        }
    }
}
