use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};

use sfl_core::data::{self, partition_dirichlet, partition_iid, Dataset, Partition};
use sfl_core::Tensor;

/// `per_class` samples of each of `classes` labels, class-major.
fn labelled(classes: usize, per_class: usize) -> Dataset {
    let n = classes * per_class;
    let labels = (0..n).map(|i| i / per_class).collect();
    Dataset::new(Tensor::zeros(vec![n, 1]), labels, classes).unwrap()
}

fn assert_partition_law(p: &Partition, n: usize) {
    let mut all: Vec<usize> = p.assignments().iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..n).collect::<Vec<_>>());
    let sum: f64 = p.weights().iter().sum();
    assert!((sum - 1.0).abs() <= 1e-12);
    assert!(p.weights().iter().all(|&a| a > 0.0));
    for (k, a) in p.assignments().iter().enumerate() {
        assert_eq!(p.sizes()[k], a.len());
    }
}

/// Mean over clients of the largest single-class share of the client's data.
fn mean_max_class_share(ds: &Dataset, p: &Partition) -> f64 {
    let shares: Vec<f64> = p
        .assignments()
        .iter()
        .map(|a| *ds.class_counts(a).iter().max().unwrap() as f64 / a.len() as f64)
        .collect();
    shares.iter().sum::<f64>() / shares.len() as f64
}

/// Fraction of the client's samples covered by its two largest classes.
fn top2_share(ds: &Dataset, idx: &[usize]) -> f64 {
    let mut counts = ds.class_counts(idx);
    counts.sort_unstable_by(|a, b| b.cmp(a));
    (counts[0] + counts.get(1).copied().unwrap_or(0)) as f64 / idx.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partitions_are_disjoint_unions(
        classes in 2usize..6,
        per_class in 1usize..40,
        k in 1usize..8,
        mu in 0.05f64..50.0,
        seed in any::<u64>(),
        dirichlet in any::<bool>(),
    ) {
        let ds = labelled(classes, per_class);
        let n = ds.len();
        prop_assume!(n >= k);
        let p = if dirichlet {
            match partition_dirichlet(&ds, k, mu, seed, 1) {
                Ok(p) => p,
                // An exhausted retry budget is a reported error, not a broken partition.
                Err(sfl_core::Error::PartitionInfeasible { .. }) => return Ok(()),
                Err(e) => panic!("{e}"),
            }
        } else {
            partition_iid(&ds, k, seed).unwrap()
        };
        prop_assert_eq!(p.num_clients(), k);
        assert_partition_law(&p, n);
    }

    #[test]
    fn batch_streams_cover_each_sample_once(
        n in 1usize..200,
        k in 1usize..5,
        b in 1usize..70,
        seed in any::<u64>(),
        round in 0usize..50,
        epoch in 0usize..5,
    ) {
        prop_assume!(n >= k);
        let p = partition_iid(&labelled(1, n), k, seed).unwrap();
        for c in 0..k {
            let batches = data::minibatch_stream(&p, c, b, seed, round, epoch);
            prop_assert_eq!(batches.len(), data::batches_per_epoch(p.sizes()[c], b));
            prop_assert!(batches.iter().take(batches.len() - 1).all(|x| x.len() == b));
            let mut seen: Vec<usize> = batches.concat();
            seen.sort_unstable();
            prop_assert_eq!(&seen[..], p.client(c));
            prop_assert_eq!(&batches, &data::minibatch_stream(&p, c, b, seed, round, epoch));
        }
    }
}

#[test]
fn dirichlet_skew_shrinks_with_concentration() {
    let ds = labelled(10, 200);
    let mut wins = 0;
    for seed in 0..20 {
        let skewed = partition_dirichlet(&ds, 10, 0.1, seed, 1).unwrap();
        let mild = partition_dirichlet(&ds, 10, 10.0, seed, 1).unwrap();
        wins += usize::from(mean_max_class_share(&ds, &skewed) > mean_max_class_share(&ds, &mild));
    }
    assert!(wins >= 19, "skew ordering held in {wins}/20 seeds");
}

#[test]
fn huge_concentration_matches_global_proportions() {
    let ds = labelled(10, 1000);
    for seed in 0..100 {
        let p = partition_dirichlet(&ds, 10, 1e6, seed, 1).unwrap();
        for a in p.assignments() {
            for &c in &ds.class_counts(a) {
                assert!((c as f64 / a.len() as f64 - 0.1).abs() <= 0.01);
            }
        }
    }
}

#[test]
fn small_concentration_concentrates_clients_on_two_classes() {
    let ds = labelled(10, 5000);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let oracle = Dirichlet::new([0.1; 100]).unwrap();
    for seed in 0..20 {
        let p = partition_dirichlet(&ds, 100, 0.1, seed, 1).unwrap();
        let skewed = p.assignments().iter().filter(|a| top2_share(&ds, a) >= 0.8).count();
        assert!(skewed >= 50, "seed {seed}: {skewed}/100 skewed clients");

        // The same statistic for client proportions drawn by an independent
        // Dirichlet sampler, with expected (not floored) class counts.
        let props: Vec<[f64; 100]> = (0..10).map(|_| oracle.sample(&mut rng)).collect();
        let oracle_skewed = (0..100)
            .filter(|&k| {
                let mut counts: Vec<f64> = props.iter().map(|p| p[k] * 5000.0).collect();
                let total: f64 = counts.iter().sum();
                counts.sort_by(|a, b| b.total_cmp(a));
                (counts[0] + counts[1]) / total >= 0.8
            })
            .count();
        assert!(oracle_skewed >= 50, "oracle draw {seed}: {oracle_skewed}/100");
    }
}

#[test]
fn iid_class_histograms_stay_within_three_sigma() {
    // A client of size m drawn without replacement from N samples with N_c of
    // class c has hypergeometric count variance m·p·(1−p)·(N−m)/(N−1); the
    // multinomial variance m·p·(1−p) bounds it from above.
    let (classes, n, k) = (10, 10_000, 10);
    let ds = labelled(classes, n / classes);
    let (mut inside, mut cells) = (0, 0);
    for seed in 0..20 {
        let p = partition_iid(&ds, k, seed).unwrap();
        for a in p.assignments() {
            let m = a.len() as f64;
            for &count in &ds.class_counts(a) {
                let q = 1.0 / classes as f64;
                let sd = (m * q * (1.0 - q)).sqrt();
                inside += usize::from((count as f64 - m * q).abs() <= 3.0 * sd);
                cells += 1;
            }
        }
    }
    assert!(inside as f64 / cells as f64 >= 0.9973, "{inside}/{cells} cells within 3σ");
}

#[test]
fn iid_examples() {
    let p = partition_iid(&labelled(2, 50), 100, 3).unwrap();
    assert!(p.sizes().iter().all(|&d| d == 1));
    assert!(p.weights().iter().all(|&a| a == 0.01));
    let mut sizes = partition_iid(&labelled(2, 5), 3, 3).unwrap().sizes().to_vec();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![3, 3, 4]);
    assert!(partition_iid(&labelled(2, 1), 3, 0).is_err());
}

#[test]
fn minibatch_examples() {
    let ds = labelled(2, 50);
    let p = Partition::from_assignments(vec![(0..64).collect(), (64..100).collect()], 100).unwrap();
    assert_eq!(data::minibatch_stream(&p, 0, 64, 1, 0, 0).len(), 1);
    let joined = Partition::from_assignments(vec![(0..100).collect()], 100).unwrap();
    let lens: Vec<usize> = data::minibatch_stream(&joined, 0, 64, 1, 0, 0).iter().map(Vec::len).collect();
    assert_eq!(lens, vec![64, 36]);
    assert_eq!(ds.len(), 100);
}
