use std::collections::{BTreeMap, BTreeSet};

use ogmc_core::metrics::{bcubed, extract_identities, nmi, nmi_ignoring, IdentityPartition};
use ogmc_core::model::{ClusterDatabase, ClusterId, Params, Sample};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn partition(labels: &[u32]) -> IdentityPartition {
    IdentityPartition::from_labels(labels.iter().enumerate().map(|(i, &l)| (i as u64, l)))
}

/// Quadratic BCubed straight from the per-item definition.
fn naive_bcubed(pred: &[u32], truth: &[u32]) -> (f64, f64) {
    let n = pred.len();
    let (mut p, mut r) = (0.0, 0.0);
    for i in 0..n {
        let same_pred: Vec<usize> = (0..n).filter(|&j| pred[j] == pred[i]).collect();
        let same_true: Vec<usize> = (0..n).filter(|&j| truth[j] == truth[i]).collect();
        p += same_pred.iter().filter(|&&j| truth[j] == truth[i]).count() as f64 / same_pred.len() as f64;
        r += same_true.iter().filter(|&&j| pred[j] == pred[i]).count() as f64 / same_true.len() as f64;
    }
    (p / n as f64, r / n as f64)
}

/// NMI from a contingency table built by nested loops.
fn naive_nmi(pred: &[u32], truth: &[u32]) -> f64 {
    let n = pred.len() as f64;
    let ps: BTreeSet<u32> = pred.iter().copied().collect();
    let ts: BTreeSet<u32> = truth.iter().copied().collect();
    let count = |f: &dyn Fn(usize) -> bool| (0..pred.len()).filter(|&i| f(i)).count() as f64;
    let mut hp = 0.0;
    for &a in &ps {
        let c = count(&|i| pred[i] == a) / n;
        hp -= c * c.ln();
    }
    let mut ht = 0.0;
    for &b in &ts {
        let c = count(&|i| truth[i] == b) / n;
        ht -= c * c.ln();
    }
    let mut mi = 0.0;
    for &a in &ps {
        for &b in &ts {
            let joint = count(&|i| pred[i] == a && truth[i] == b) / n;
            if joint > 0.0 {
                let pa = count(&|i| pred[i] == a) / n;
                let pb = count(&|i| truth[i] == b) / n;
                mi += joint * (joint / (pa * pb)).ln();
            }
        }
    }
    if hp == 0.0 || ht == 0.0 {
        // up to renaming, identical iff the bijection is exact
        let same = (0..pred.len()).all(|i| (0..pred.len()).all(|j| (pred[i] == pred[j]) == (truth[i] == truth[j])));
        return if same { 1.0 } else { 0.0 };
    }
    mi / (hp * ht).sqrt()
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: u32) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

#[test]
fn random_pairs_match_quadratic_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..40 {
        let n = rng.random_range(1..300);
        let kp = rng.random_range(1..40);
        let kt = rng.random_range(1..40);
        let pred = random_labels(&mut rng, n, kp);
        let truth = random_labels(&mut rng, n, kt);
        let b = bcubed(&partition(&pred), &partition(&truth), &BTreeSet::new()).unwrap();
        let (p, r) = naive_bcubed(&pred, &truth);
        assert!((b.precision - p).abs() < 1e-9);
        assert!((b.recall - r).abs() < 1e-9);
        let m = nmi(&partition(&pred), &partition(&truth)).unwrap();
        assert!((m - naive_nmi(&pred, &truth)).abs() < 1e-9);
    }
}

#[test]
fn hand_computed_fixtures() {
    let truth = partition(&[0, 0, 1, 1]);
    let singles = bcubed(&partition(&[0, 1, 2, 3]), &truth, &BTreeSet::new()).unwrap();
    assert_eq!((singles.precision, singles.recall), (1.0, 0.5));
    assert!((singles.f - 2.0 / 3.0).abs() < 1e-12);
    let one = bcubed(&partition(&[0, 0, 0, 0]), &truth, &BTreeSet::new()).unwrap();
    assert_eq!((one.precision, one.recall), (0.5, 1.0));
    assert!((one.f - 2.0 / 3.0).abs() < 1e-12);

    assert_eq!(nmi(&truth, &truth).unwrap(), 1.0);
    assert_eq!(nmi(&partition(&[5, 5, 5, 5]), &truth).unwrap(), 0.0);
    let m = nmi(&partition(&[0, 0, 0, 1]), &truth).unwrap();
    assert!((m - naive_nmi(&[0, 0, 0, 1], &[0, 0, 1, 1])).abs() < 1e-12);
    assert!((m - 0.345_592_029_944_211_3).abs() < 1e-12);
}

#[test]
fn ignored_items_leave_anchors_and_peers() {
    let truth = partition(&[0, 0, 1, 1, 2]);
    let pred = partition(&[0, 0, 1, 1, 1]);
    let ignore: BTreeSet<u64> = [4].into();
    let b = bcubed(&pred, &truth, &ignore).unwrap();
    assert_eq!((b.precision, b.recall, b.f), (1.0, 1.0, 1.0));
    assert_eq!(nmi_ignoring(&pred, &truth, &ignore).unwrap(), 1.0);
}

#[test]
fn missing_labels_are_reported() {
    let truth = IdentityPartition::from_labels([(0u64, 0u32), (1, 0)]);
    let pred = IdentityPartition::from_labels([(0u64, 0u32), (1, 0), (2, 1)]);
    assert!(bcubed(&pred, &truth, &BTreeSet::new()).is_err());
    assert!(bcubed(&truth, &pred, &BTreeSet::new()).is_err());
    assert!(nmi(&pred, &truth).is_err());
}

proptest! {
    #[test]
    fn swapping_sides_swaps_precision_and_recall(
        pred in proptest::collection::vec(0u32..8, 1..150),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_labels(&mut rng, pred.len(), 6);
        let a = bcubed(&partition(&pred), &partition(&truth), &BTreeSet::new()).unwrap();
        let b = bcubed(&partition(&truth), &partition(&pred), &BTreeSet::new()).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
    }

    #[test]
    fn nmi_is_symmetric_and_renaming_invariant(
        pred in proptest::collection::vec(0u32..8, 1..150),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_labels(&mut rng, pred.len(), 6);
        let ab = nmi(&partition(&pred), &partition(&truth)).unwrap();
        let ba = nmi(&partition(&truth), &partition(&pred)).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        let renamed: Vec<u32> = pred.iter().map(|&l| 1000 - 7 * l).collect();
        let rn = nmi(&partition(&renamed), &partition(&truth)).unwrap();
        prop_assert!((ab - rn).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn f_is_harmonic_mean(
        pred in proptest::collection::vec(0u32..5, 1..80),
        truth_seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(truth_seed);
        let truth = random_labels(&mut rng, pred.len(), 5);
        let b = bcubed(&partition(&pred), &partition(&truth), &BTreeSet::new()).unwrap();
        let expect = 2.0 * b.precision * b.recall / (b.precision + b.recall);
        prop_assert!((b.f - expect).abs() < 1e-15);
    }
}

/// Union-find over cluster ids, labelling each component by its smallest id.
fn union_find_components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

/// Database of `n` single-sample clusters along distinct random directions,
/// linked by `edges`. Robustness all round so that any edge is legal.
fn graph_db(n: usize, edges: &[(usize, usize)], seed: u64) -> ClusterDatabase {
    let dim = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = ClusterDatabase::new(dim, Params::new(0.5, 0.5, 0.5, 1, n.max(1)).unwrap()).unwrap();
    for i in 0..n {
        let v: Vec<f32> = (0..dim).map(|_| rng.random::<f32>() - 0.5).collect();
        db.create_cluster(&Sample::new(i as u64, &v).unwrap()).unwrap();
    }
    for &(a, b) in edges {
        db.connect(ClusterId(a as u64), ClusterId(b as u64), 0.1).unwrap();
    }
    db
}

#[test]
fn spec_component_example() {
    let edges = [(0, 3), (2, 4), (4, 5)];
    let part = extract_identities(&graph_db(6, &edges, 1));
    let ids: Vec<u32> = (0..6).map(|s| part.get(s).unwrap()).collect();
    assert_eq!(ids, vec![0, 1, 2, 0, 2, 2]);
    assert_eq!(part.n_identities(), 3);

    let chain = extract_identities(&graph_db(3, &[(0, 1), (1, 2)], 2));
    assert_eq!(chain.n_identities(), 1);
    let none = extract_identities(&graph_db(3, &[], 3));
    assert_eq!(none.n_identities(), 3);
}

#[test]
fn components_match_union_find_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..6 {
        let n = [10, 100, 1000, 3000, 10_000, 10_000][trial];
        let m = rng.random_range(0..n);
        let mut set = BTreeSet::new();
        while set.len() < m {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let part = extract_identities(&graph_db(n, &edges, trial as u64));
        let roots = union_find_components(n, &edges);
        // dense relabel by ascending root, which is the component minimum
        let dense: BTreeMap<usize, u32> = roots
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (r, i as u32))
            .collect();
        for s in 0..n {
            assert_eq!(part.get(s as u64), Some(dense[&roots[s]]));
        }
        assert_eq!(part.n_identities(), dense.len());
    }
}
