use proptest::prelude::*;
use protoseg_core::clustering::*;
use protoseg_core::ingest::{simplex_blobs, BlobConfig};
use protoseg_core::rng::stage_rng;
use rand::Rng;

fn random_points(rng: &mut impl Rng, n: usize, dim: usize) -> Points {
    let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Points::new(dim, &data).unwrap()
}

#[test]
fn restarts_reach_exact_optimum_on_small_instances() {
    let mut rng = stage_rng(2024);
    for case in 0..40 {
        let n = rng.random_range(3..=12);
        let dim = rng.random_range(1..=4);
        let k = rng.random_range(1..=3usize.min(n));
        let pts = random_points(&mut rng, n, dim);
        let (opt, _) = exact_kmeans(&pts, k).unwrap();
        let r = cluster(&pts, k, 64, case, &KMeansParams::default()).unwrap();
        let rel = (r.inertia - opt) / opt.max(1e-300);
        assert!(rel <= 1e-6, "case {case}: n={n} k={k} got {} optimum {opt}", r.inertia);
    }
}

/// Twelve points in 4-d where no choice of three data points as initial
/// centroids leads plain Lloyd iteration to the optimal 3-partition (checked
/// over all 220 triples); single-point transfers reach it.
#[test]
fn transfers_escape_lloyd_local_optimum() {
    let data = [
        -0.7750125370184384, 0.4263974701711071, -0.5618332559937116, -0.2700892369049881,
        -0.3575227423882654, -0.31952959546951165, -0.4815404503820635, -0.25527837495764016,
        -0.06713329172510818, 0.43841902558434587, -0.7748458100040208, -0.029088974150752733,
        -0.40543582026816605, -0.6925942936259748, 0.6842253673109311, -0.28852743972659756,
        -0.4737015770736712, 0.0826189764569003, -0.03235167663401839, 0.7187125950637667,
        0.28628173242888577, -0.17851858125017905, 0.9108820396821438, -0.31340699493317103,
        -0.173487630716878, -0.047751719293485095, -0.5038807762187232, 0.13977577415332876,
        -0.3763178393701172, -0.7477188561574954, 0.07566874721053374, 0.011991339894064978,
        -0.34881385166995305, -0.33612498428939697, 0.051736230793607785, -0.8277567646742687,
        0.6805296025923657, 0.4693288030894016, -0.6783073461027858, -0.22824524802669277,
        -0.5423665094952086, -0.5428351884172837, 0.7992854440395871, -0.20173178303036954,
        -0.2741445186079212, -0.016498774599788213, 0.05683106787280101, -0.20609344289260756,
    ];
    let pts = Points::new(4, &data).unwrap();
    let optimum = 3.5703879239685175;
    let (exact, _) = exact_kmeans(&pts, 3).unwrap();
    assert!((exact - optimum).abs() < 1e-12);
    let plain = KMeansParams { transfers: false, ..KMeansParams::default() };
    let lloyd = cluster(&pts, 3, 64, 102, &plain).unwrap();
    assert!(lloyd.inertia > optimum + 0.1, "{}", lloyd.inertia);
    let refined = cluster(&pts, 3, 64, 102, &KMeansParams::default()).unwrap();
    assert!((refined.inertia - optimum).abs() < 1e-9, "{}", refined.inertia);
}

/// Probability that the second D^2 draw lands in the same pair as the first,
/// for the 1-d points {0, 1, l, l + 1}, by direct enumeration.
fn same_pair_probability(l: f64) -> f64 {
    let xs = [0.0, 1.0, l, l + 1.0];
    let mut p = 0.0;
    for i in 0..4 {
        let w: Vec<f64> = xs.iter().map(|x| (x - xs[i]).powi(2)).collect();
        let total: f64 = w.iter().sum();
        let partner = i ^ 1;
        p += 0.25 * w[partner] / total;
    }
    p
}

#[test]
fn d2_seeding_distribution() {
    assert!((same_pair_probability(100.0) - 0.5 * (1.0 / 20202.0 + 1.0 / 19802.0)).abs() < 1e-15);
    assert!((same_pair_probability(2.0) - 5.0 / 42.0).abs() < 1e-15);

    let far = Points::from_rows(&[[0.0], [1.0], [100.0], [101.0]]).unwrap();
    for seed in 0..200 {
        let s = kmeanspp_seed(&far, 2, seed).unwrap();
        assert_ne!(s.chosen[0] / 2, s.chosen[1] / 2, "seed {seed}");
    }

    let near = Points::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
    let trials = 4000;
    let same = (0..trials)
        .filter(|&seed| {
            let s = kmeanspp_seed(&near, 2, seed).unwrap();
            s.chosen[0] / 2 == s.chosen[1] / 2
        })
        .count();
    let freq = same as f64 / trials as f64;
    assert!((freq - same_pair_probability(2.0)).abs() < 0.025, "frequency {freq}");
}

#[test]
fn tight_blobs_are_recovered() {
    let cfg = BlobConfig { clusters: 4, per_cluster: 5, dim: 4, separation: 10.0, sigma: 0.05 };
    let blobs = simplex_blobs(&cfg, 3).unwrap();
    let pts = Points::new(cfg.dim, &blobs.data).unwrap();
    let r = cluster(&pts, 4, 8, 1, &KMeansParams::default()).unwrap();
    for c in 0..4 {
        let members = r.members(c);
        assert_eq!(members.len(), 5);
        assert!(members.iter().all(|&i| blobs.labels[i] == blobs.labels[members[0]]));
    }
    let (opt, _) = exact_kmeans(&Points::new(cfg.dim, &blobs.data[..12 * 4]).unwrap(), 3).unwrap();
    let r3 = cluster(&Points::new(cfg.dim, &blobs.data[..12 * 4]).unwrap(), 3, 8, 1, &KMeansParams::default()).unwrap();
    assert!((r3.inertia - opt).abs() <= 1e-9 * opt.max(1.0));
    // within-blob scatter
    let mut scatter = 0.0;
    for c in 0..4 {
        let rows: Vec<&[f64]> = (0..20).filter(|&i| blobs.labels[i] == c).map(|i| pts.row(i)).collect();
        for d in 0..4 {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64;
            scatter += rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>();
        }
    }
    assert!((r.inertia - scatter).abs() < 1e-9);
}

#[test]
fn canonical_order_makes_permutations_relabelings() {
    let mut rng = stage_rng(8);
    let pts_rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let mut perm: Vec<usize> = (0..30).collect();
    perm.reverse();
    perm.swap(3, 17);
    let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts_rows[i].clone()).collect();
    let a = cluster_canonical(&Points::from_rows(&pts_rows).unwrap(), 4, 4, 9, &KMeansParams::default()).unwrap();
    let b = cluster_canonical(&Points::from_rows(&shuffled).unwrap(), 4, 4, 9, &KMeansParams::default()).unwrap();
    assert_eq!(a.inertia, b.inertia);
    for (pos, &orig) in perm.iter().enumerate() {
        assert_eq!(a.assignments[orig], b.assignments[pos]);
    }
}

#[test]
fn elbow_finds_blob_count() {
    for &c in &[3usize, 5, 8] {
        for seed in 0..3 {
            let cfg = BlobConfig { clusters: c, per_cluster: 30, dim: 16, separation: 20.0, sigma: 1.0 / 2f64.sqrt() };
            let blobs = simplex_blobs(&cfg, seed).unwrap();
            let pts = Points::new(cfg.dim, &blobs.data).unwrap();
            let trace = elbow_select(&pts, 2..=12, 8, seed, &KMeansParams::default()).unwrap();
            assert_eq!(trace.selected_k, c, "c={c} seed={seed} trace={:?}", trace.inertia);
            let inversions: Vec<f64> = trace
                .inertia
                .windows(2)
                .filter(|w| w[1] > w[0])
                .map(|w| (w[1] - w[0]) / w[0])
                .collect();
            assert!(inversions.len() <= 1 && inversions.iter().all(|&r| r < 1e-3), "{inversions:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn lloyd_post_state(seed in any::<u64>(), n in 2usize..40, dim in 1usize..5, k in 1usize..6) {
        let mut rng = stage_rng(seed);
        let pts = random_points(&mut rng, n, dim);
        let k = k.min(n);
        let r = cluster(&pts, k, 2, seed, &KMeansParams::default()).unwrap();
        prop_assert!(r.validate(Some(n)).is_ok());
        prop_assert_eq!(r.cluster_sizes.iter().sum::<usize>(), n);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut total = 0.0;
        for i in 0..n {
            let a = r.assignments[i] as usize;
            prop_assert!(a < k);
            let own = sq(pts.row(i), &r.centroids[a]);
            total += own;
            for c in &r.centroids {
                prop_assert!(own <= sq(pts.row(i), c) + 1e-9);
            }
        }
        prop_assert!((total - r.inertia).abs() <= 1e-5 * total.max(1e-12));
        for w in r.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        if r.converged {
            for c in 0..k {
                let members = r.members(c);
                if members.is_empty() { continue; }
                for d in 0..dim {
                    let mean = members.iter().map(|&i| pts.row(i)[d]).sum::<f64>() / members.len() as f64;
                    prop_assert!((mean - r.centroids[c][d]).abs() <= 1e-5 * mean.abs().max(1.0));
                }
            }
        }
    }
}
