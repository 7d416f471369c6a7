mod common;

use odlab::data::{
    corrupt_labels, corrupt_raw, gen_blobs, gen_blobs_split, subsample_per_class, transition_matrix, BlobSpec,
    NoiseKind, NoiseSpec,
};

fn spec(seed: u64) -> BlobSpec {
    BlobSpec {
        n_classes: 10,
        n_per_class: 50,
        channels: 1,
        width: 8,
        height: 8,
        spread: 0.3,
        seed,
    }
}

/// Nearest-class-mean is a linear rule; well separated blobs must yield to it.
#[test]
fn blobs_are_linearly_separable() {
    let ds = gen_blobs(&spec(3)).unwrap();
    let d: usize = ds.sample_shape().iter().product();
    let rows: Vec<&[f64]> = ds.images().data().chunks(d).collect();
    let mut means = vec![vec![0.0; d]; 10];
    for (row, &y) in rows.iter().zip(ds.labels()) {
        means[y].iter_mut().zip(*row).for_each(|(m, v)| *m += v / 50.0);
    }
    let correct = rows
        .iter()
        .zip(ds.labels())
        .filter(|(row, &y)| {
            let dist = |m: &Vec<f64>| m.iter().zip(row.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..10).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap() == y
        })
        .count();
    assert!(correct as f64 / ds.len() as f64 > 0.95, "{correct}/{}", ds.len());
}

#[test]
fn blobs_are_deterministic_and_split_disjointly() {
    let a = gen_blobs(&spec(5)).unwrap();
    assert_eq!(a, gen_blobs(&spec(5)).unwrap());
    assert_ne!(a, gen_blobs(&spec(6)).unwrap());
    assert_eq!(a.class_counts(), vec![50; 10]);
    let (train, test) = gen_blobs_split(&spec(5), 7).unwrap();
    assert_eq!(train, a);
    assert_eq!(test.class_counts(), vec![7; 10]);
    assert_ne!(test.images().data()[..64], train.images().data()[..64]);
}

#[test]
fn subsampling_keeps_exact_class_counts() {
    let ds = gen_blobs(&spec(1)).unwrap();
    let sub = subsample_per_class(&ds, 12, 9).unwrap();
    assert_eq!(sub.class_counts(), vec![12; 10]);
    assert_eq!(sub, subsample_per_class(&ds, 12, 9).unwrap());
    let msg = subsample_per_class(&ds, 51, 9).unwrap_err().to_string();
    assert!(msg.contains("class 0"), "{msg}");
}

#[test]
fn transition_rows_are_stochastic() {
    for kind in [NoiseKind::Symmetric, NoiseKind::Pair] {
        for rate in [0.0, 0.2, 0.45, 1.0] {
            let t = transition_matrix(kind, 10, rate).unwrap();
            for row in t.rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }
    assert!((transition_matrix(NoiseKind::Pair, 10, 0.45).unwrap().get(3, 4) - 0.45).abs() < 1e-15);
    assert!(transition_matrix(NoiseKind::Symmetric, 1, 0.2).is_err());
}

#[test]
fn pair_noise_flip_rate_is_close_to_nominal() {
    let labels: Vec<usize> = (0..50_000).map(|i| i % 10).collect();
    let t = transition_matrix(NoiseKind::Pair, 10, 0.45).unwrap();
    let noisy = corrupt_raw(&labels, &t, 17);
    let mut flipped = 0;
    for (&c, &n) in labels.iter().zip(&noisy) {
        if c != n {
            assert_eq!(n, (c + 1) % 10);
            flipped += 1;
        }
    }
    let rate = flipped as f64 / labels.len() as f64;
    assert!((rate - 0.45).abs() < 0.01, "{rate}");
}

#[test]
fn symmetric_destinations_are_uniform() {
    let labels = vec![2usize; 90_000];
    let t = transition_matrix(NoiseKind::Symmetric, 10, 0.5).unwrap();
    let noisy = corrupt_raw(&labels, &t, 4);
    let mut counts = [0usize; 10];
    noisy.iter().filter(|&&n| n != 2).for_each(|&n| counts[n] += 1);
    let flipped: usize = counts.iter().sum();
    let expected = flipped as f64 / 9.0;
    let chi2: f64 = counts
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != 2)
        .map(|(_, &o)| (o as f64 - expected).powi(2) / expected)
        .sum();
    // 99.9th percentile of chi-square with 8 degrees of freedom.
    assert!(chi2 < 26.12, "chi2 {chi2}");
    assert!((flipped as f64 / 90_000.0 - 0.5).abs() < 0.01);
}

#[test]
fn zero_rate_is_identity_and_mask_marks_flips() {
    let ds = gen_blobs(&spec(2)).unwrap();
    let (same, mask) = corrupt_labels(&ds, &NoiseSpec { kind: NoiseKind::Symmetric, rate: 0.0, seed: 1 }).unwrap();
    assert_eq!(same.labels(), ds.labels());
    assert!(mask.iter().all(|&m| !m));
    let spec = NoiseSpec { kind: NoiseKind::Symmetric, rate: 0.3, seed: 1 };
    let (noisy, mask) = corrupt_labels(&ds, &spec).unwrap();
    for ((a, b), m) in ds.labels().iter().zip(noisy.labels()).zip(&mask) {
        assert_eq!(a != b, *m);
    }
    assert_eq!(noisy, corrupt_labels(&ds, &spec).unwrap().0);
    assert_eq!(noisy.images(), ds.images());
    assert!(corrupt_labels(&ds, &NoiseSpec { rate: 1.5, ..spec }).is_err());
}
