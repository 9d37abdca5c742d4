//! Shortest paths on the shipped Sioux Falls network against Floyd–Warshall.

use std::path::Path;

use messrl_core::transport::{Location, TransportNetwork};
use proptest::prelude::*;

fn sioux_falls() -> TransportNetwork {
    TransportNetwork::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/sioux_falls.net")).unwrap()
}

fn floyd_warshall(net: &TransportNetwork) -> Vec<Vec<f64>> {
    let nodes = net.nodes();
    let idx = |n| nodes.iter().position(|&m| m == n).unwrap();
    let n = nodes.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for (a, b, w) in net.edges() {
        let (i, j) = (idx(a), idx(b));
        d[i][j] = d[i][j].min(w);
        d[j][i] = d[j][i].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

#[test]
fn shipped_network_shape() {
    let net = sioux_falls();
    assert_eq!(net.node_count(), 24);
    assert_eq!(net.edge_count(), 38);
    assert_eq!(net.depots().len(), 1);
    assert_eq!(net.microgrids().len(), 3);
}

#[test]
fn all_pairs_equal_floyd_warshall() {
    let net = sioux_falls();
    let fw = floyd_warshall(&net);
    let nodes = net.nodes().to_vec();
    for (i, &a) in nodes.iter().enumerate() {
        for (j, &b) in nodes.iter().enumerate() {
            let route = net.shortest_path(&Location::at(a), b).unwrap();
            assert_eq!(route.distance, fw[i][j], "{a} -> {b}");
            // The node sequence must realise the reported distance.
            let mut prev = a;
            let mut walked = 0.0;
            for &n in &route.path {
                if n != prev {
                    walked += net.edge_weight(prev, n).expect("consecutive path nodes are adjacent");
                }
                prev = n;
            }
            assert_eq!(prev, b);
            assert_eq!(walked, route.distance);
        }
    }
}

proptest! {
    /// On random connected graphs the same identity holds, with float weights
    /// compared to a tight tolerance.
    #[test]
    fn random_graphs_match(
        n in 2usize..12,
        extra in prop::collection::vec((0usize..12, 0usize..12, 0.5f64..50.0), 0..30),
        chain in prop::collection::vec(0.5f64..50.0, 11),
    ) {
        let mut text = String::new();
        for i in 0..n {
            text.push_str(&format!("node {i}\n"));
        }
        for i in 1..n {
            text.push_str(&format!("edge {} {} {}\n", i - 1, i, chain[i - 1]));
        }
        let mut seen = std::collections::BTreeSet::new();
        for i in 1..n {
            seen.insert((i - 1, i));
        }
        for (a, b, w) in extra {
            let (a, b) = (a % n, b % n);
            let key = (a.min(b), a.max(b));
            if a != b && seen.insert(key) {
                text.push_str(&format!("edge {a} {b} {w}\n"));
            }
        }
        text.push_str("depot 1 0\n");
        let net = TransportNetwork::parse(&text).unwrap();
        let fw = floyd_warshall(&net);
        for (i, &a) in net.nodes().iter().enumerate() {
            for (j, &b) in net.nodes().iter().enumerate() {
                let d = net.distance(&Location::at(a), b).unwrap();
                prop_assert!((d - fw[i][j]).abs() <= 1e-9 * fw[i][j].max(1.0));
            }
        }
    }
}
