use bglab_core::combinatorics::*;
use bglab_core::par::Execution;
use bglab_core::rng::stream_rng;
use bglab_core::sampler::{rejection_acceptance_rate, GrandCanonicalParams};
use bglab_core::torus::VecD;
use bglab_core::trees::CollisionTree;
use proptest::prelude::*;

fn all_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

// Literal definition: every graph on n vertices, edge weight -1 if adjacent else 0.
fn cumulant_all_graphs(x: &PointSet<2>) -> f64 {
    let n = x.len();
    let edges = all_edges(n);
    let adj = x.adjacency();
    let mut total = 0.0;
    for s in 0u64..(1 << edges.len()) {
        let mut w = 1.0;
        let mut chosen = Vec::new();
        for (k, e) in edges.iter().enumerate() {
            if s >> k & 1 == 1 {
                w *= if adj.contains(e) { -1.0 } else { 0.0 };
                chosen.push(*e);
            }
        }
        if w != 0.0 && spanning_trees_enumerated(n, &chosen) > 0 {
            total += w;
        }
    }
    total
}

// Degree sequence of every labeled tree, from (n-1)-edge subsets of K_n.
fn degree_histogram(n: usize) -> std::collections::HashMap<Vec<u32>, u128> {
    let edges = all_edges(n);
    let mut map = std::collections::HashMap::new();
    for s in 0u64..(1 << edges.len()) {
        if s.count_ones() as usize != n - 1 {
            continue;
        }
        let chosen: Vec<_> = edges.iter().enumerate().filter(|(k, _)| s >> k & 1 == 1).map(|(_, e)| *e).collect();
        if spanning_trees_enumerated(n, &chosen) != 1 {
            continue;
        }
        let mut d = vec![0u32; n];
        for (a, b) in chosen {
            d[a] += 1;
            d[b] += 1;
        }
        *map.entry(d).or_insert(0) += 1;
    }
    map
}

#[test]
fn tree_counts_match_enumeration() {
    for n in 2..=6usize {
        let hist = degree_histogram(n);
        let total: u128 = hist.values().sum();
        assert_eq!(total, count_labeled_trees(n as u32).unwrap());
        let seqs = tree_degree_sequences(n as u32);
        let mut sum = 0;
        for ds in &seqs {
            let c = count_trees_with_degrees(ds).unwrap();
            assert_eq!(c, *hist.get(ds.degrees()).unwrap_or(&0), "{:?}", ds);
            sum += c;
        }
        assert_eq!(sum, total);
        assert_eq!(seqs.len(), hist.len());
    }
}

#[test]
fn collision_tree_counts_match_enumeration() {
    for n in 1..=4u32 {
        for m in 0..=(7 - n) {
            let e = CollisionTree::enumerate(n as usize, m as usize).len() as u128;
            assert_eq!(count_collision_trees(n, m).unwrap(), e, "n={n} m={m}");
        }
    }
}

#[test]
fn kirchhoff_matches_enumeration_on_random_graphs() {
    let mut rng = stream_rng(3, 0);
    use rand::Rng;
    for _ in 0..200 {
        let n = rng.random_range(2..=6);
        let edges: Vec<_> = all_edges(n).into_iter().filter(|_| rng.random::<bool>()).collect();
        assert_eq!(spanning_trees_kirchhoff(n, &edges), spanning_trees_enumerated(n, &edges) as f64);
    }
}

#[test]
fn penrose_sweep_has_no_violations() {
    let bad = penrose_sweep::<2>(10_000, &[2, 3, 4, 5, 6], &[0.05, 0.2], 17, Execution::Parallel).unwrap();
    assert_eq!(bad, 0);
    let r = penrose_check(&PointSet::new(vec![VecD([0.5, 0.5]), VecD([0.52, 0.5]), VecD([0.5, 0.52])], 0.1).unwrap()).unwrap();
    assert_eq!((r.phi, r.tree_bound, r.ok), (2.0, 3.0, true));
}

#[test]
fn size_cap() {
    let pts = vec![VecD([0.0, 0.0]); 8];
    assert!(matches!(PointSet::new(pts, 0.1), Err(CombinatoricsError::TooLarge { .. })));
}

#[test]
fn block_vertex_extends_adjacency() {
    // A long block touching two otherwise separated points.
    let block = [VecD([0.1, 0.5]), VecD([0.3, 0.5]), VecD([0.5, 0.5])];
    let others = PointSet::new(vec![VecD([0.1, 0.55]), VecD([0.5, 0.55])], 0.1).unwrap();
    assert_eq!(cumulant_phi_with_block(&block, &others).unwrap(), 1.0);
    assert_eq!(cumulant_phi_with_block(&block[..1], &others).unwrap(), 0.0);
}

#[test]
fn partition_function_limits() {
    let p0 = GrandCanonicalParams::<2>::new(0.0, 1.5).unwrap();
    let z = partition_function_small_n(&p0, 6, 100, 1, Execution::Parallel).unwrap();
    let partial: f64 = (0..=6).map(|n| 1.5f64.powi(n) / (1..=n).map(|k| k as f64).product::<f64>()).sum();
    assert!((z.value - partial).abs() < 1e-12);
    assert!((z.tail_bound - (1.5f64.exp() - partial)).abs() < 1e-12);

    let p = GrandCanonicalParams::<3>::new(0.2, 2.0).unwrap();
    let z2 = partition_function_small_n(&p, 2, 200_000, 2, Execution::Parallel).unwrap();
    let exact = partition_function_two(&p);
    assert!((z2.value - exact).abs() < 4.0 * z2.stderr, "{} +- {} vs {exact}", z2.value, z2.stderr);
}

#[test]
fn sampler_acceptance_matches_partition_ratio() {
    let p = GrandCanonicalParams::<2>::new(0.1, 2.0).unwrap();
    let z = partition_function_small_n(&p, 6, 100_000, 5, Execution::Parallel).unwrap();
    let ratio = z.value / p.mu.exp();
    let ratio_err = z.stderr / p.mu.exp();
    let attempts = 200_000u64;
    let mut rng = stream_rng(6, 0);
    let acc = rejection_acceptance_rate(&p, attempts, &mut rng);
    let acc_err = (acc * (1.0 - acc) / attempts as f64).sqrt();
    let tail = z.tail_bound / p.mu.exp();
    let comb = (ratio_err.powi(2) + acc_err.powi(2)).sqrt();
    assert!((acc - ratio).abs() <= 3.0 * comb + tail, "{acc} vs {ratio} (+- {comb}, tail {tail})");
}

fn point_set() -> impl Strategy<Value = (Vec<[f64; 2]>, f64)> {
    (prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..=6), prop::sample::select(vec![0.05, 0.2, 0.35]))
        .prop_map(|(v, e)| (v.into_iter().map(|(a, b)| [0.4 + 0.3 * a, 0.4 + 0.3 * b]).collect(), e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cumulant_matches_literal_sum((pts, eps) in point_set()) {
        let x = PointSet::new(pts.into_iter().map(VecD).collect(), eps).unwrap();
        prop_assert_eq!(cumulant_phi(&x).unwrap(), cumulant_all_graphs(&x));
    }

    #[test]
    fn cumulant_is_translation_invariant((pts, eps) in point_set(), sx in 0.0..1.0f64, sy in 0.0..1.0f64) {
        // Shifts by multiples of 1/64 keep coordinates exact in binary.
        let s = [(sx * 64.0).floor() / 64.0, (sy * 64.0).floor() / 64.0];
        let x = PointSet::new(pts.iter().map(|p| VecD(*p)).collect(), eps).unwrap();
        let y = PointSet::new(pts.iter().map(|p| VecD([p[0] + s[0], p[1] + s[1]]).wrapped()).collect(), eps).unwrap();
        prop_assert_eq!(x.adjacency(), y.adjacency());
        prop_assert_eq!(cumulant_phi(&x).unwrap(), cumulant_phi(&y).unwrap());
    }

    #[test]
    fn cumulant_depends_only_on_adjacency((pts, eps) in point_set(), jitter in prop::collection::vec(-1.0..1.0f64, 12)) {
        let x = PointSet::new(pts.iter().map(|p| VecD(*p)).collect(), eps).unwrap();
        let y = PointSet::new(
            pts.iter().enumerate().map(|(i, p)| VecD([p[0] + 1e-3 * jitter[2 * i], p[1] + 1e-3 * jitter[2 * i + 1]])).collect(),
            eps,
        ).unwrap();
        if x.adjacency() == y.adjacency() {
            prop_assert_eq!(cumulant_phi(&x).unwrap(), cumulant_phi(&y).unwrap());
        }
    }

    #[test]
    fn penrose_bound_holds((pts, eps) in point_set()) {
        let x = PointSet::new(pts.into_iter().map(VecD).collect(), eps).unwrap();
        let r = penrose_check(&x).unwrap();
        prop_assert!(r.ok, "{:?}", r);
    }
}
