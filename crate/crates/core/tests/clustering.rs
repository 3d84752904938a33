use modelpoint::clustering::{baseline_grouping, cluster_portfolio, kmeans, ClusterModel, KMeansConfig};
use modelpoint::portfolio::{synth_dc, synth_term_life, Contract, Portfolio, PortfolioEntry, ProductLine};
use ndarray::{array, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn assert_nearest(points: &Array2<f64>, model: &ClusterModel) {
    for (i, p) in points.outer_iter().enumerate() {
        let d = |k: usize| -> f64 {
            p.iter()
                .zip(model.centroids.row(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let own = d(model.assignment[i]);
        for k in 0..model.k() {
            assert!(own <= d(k) + 1e-10, "point {i} is closer to cluster {k}");
        }
    }
}

#[test]
fn single_cluster_is_the_mean() {
    let pts = uniform_points(200, 5, 1);
    let m = kmeans(pts.view(), 1, &KMeansConfig::default()).unwrap();
    let mean = pts.mean_axis(Axis(0)).unwrap();
    for (a, b) in m.centroids.row(0).iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(m.assignment.iter().all(|&a| a == 0));
    assert_eq!(m.sizes, vec![200]);
}

#[test]
fn one_cluster_per_point_has_zero_inertia() {
    let pts = uniform_points(40, 5, 2);
    let m = kmeans(pts.view(), 40, &KMeansConfig::default()).unwrap();
    assert_eq!(m.inertia, 0.0);
    assert!(m.sizes.iter().all(|&s| s == 1));
    for (i, &a) in m.assignment.iter().enumerate() {
        assert_eq!(m.centroids.row(a), pts.row(i));
    }
}

#[test]
fn duplicates_with_k_equal_n_leave_no_empty_cluster() {
    let pts = array![[0.1, 0.2], [0.1, 0.2], [0.1, 0.2], [0.5, -0.5]];
    let m = kmeans(pts.view(), 4, &KMeansConfig::default()).unwrap();
    assert!(m.sizes.iter().all(|&s| s == 1), "{:?}", m.sizes);
    assert_eq!(m.inertia, 0.0);
}

#[test]
fn separated_blobs_are_recovered() {
    let sigma = 0.05;
    let means = [[-0.5, -0.5, 0.0, 0.2, 0.1], [0.0, 0.0, 0.0, 0.2, 0.1]];
    let separation: f64 = means[0]
        .iter()
        .zip(&means[1])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(separation >= 10.0 * sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let per = 5000;
    let mut pts = Array2::zeros((2 * per, 5));
    for (i, mut row) in pts.outer_iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = means[i / per][j] + sigma * gaussian(&mut rng);
        }
    }
    let m = kmeans(pts.view(), 2, &KMeansConfig::default()).unwrap();
    for mean in means {
        let best = (0..2)
            .map(|k| {
                m.centroids
                    .row(k)
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1 * sigma, "centroid off by {best}");
    }
    // every point sits with its own blob
    let first = m.assignment[0];
    assert!(m.assignment[..per].iter().all(|&a| a == first));
    assert!(m.assignment[per..].iter().all(|&a| a != first));
}

#[test]
fn lloyd_invariants_on_contract_features() {
    let p = synth_term_life(3000, 1).unwrap();
    let (m, rows) = cluster_portfolio(&p, 10, &KMeansConfig::default()).unwrap();
    assert_eq!(rows.len(), 3000);
    let pts = modelpoint::clustering::feature_matrix(&p).unwrap();
    assert_nearest(&pts, &m);
    assert!(m.inertia_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert_eq!(m.sizes.iter().sum::<usize>(), 3000);
    assert!(m.sizes.iter().all(|&s| s > 0));
    for c in m.centroids.iter() {
        assert!((-1.0..=1.0).contains(c));
    }
}

#[test]
fn deterministic_under_seed() {
    let pts = uniform_points(500, 5, 4);
    let cfg = KMeansConfig {
        seed: 9,
        ..Default::default()
    };
    let a = kmeans(pts.view(), 7, &cfg).unwrap();
    let b = kmeans(pts.view(), 7, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn more_clusters_than_points_is_an_error() {
    let pts = uniform_points(3, 5, 5);
    assert!(kmeans(pts.view(), 4, &KMeansConfig::default()).is_err());
    assert!(kmeans(pts.view(), 0, &KMeansConfig::default()).is_err());
}

#[test]
fn baseline_of_identical_contracts_is_the_contract() {
    let c = Contract::new(ProductLine::DcPlan, [40.0, 1e5, 5e4, 0.02, 0.05]).unwrap();
    let p = Portfolio::new(
        ProductLine::DcPlan,
        vec![
            PortfolioEntry { contract: c, count: 4 },
            PortfolioEntry { contract: c, count: 3 },
        ],
    )
    .unwrap();
    let (m, _) = cluster_portfolio(&p, 1, &KMeansConfig::default()).unwrap();
    let g = baseline_grouping(&m, ProductLine::DcPlan).unwrap();
    assert_eq!(g.len(), 1);
    assert_eq!(g.entries[0].count, 7);
    for (a, b) in g.entries[0].contract.x.iter().zip(&c.x) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn baseline_of_two_points_reproduces_both() {
    let p = synth_dc(2, 5).unwrap();
    let (m, _) = cluster_portfolio(&p, 2, &KMeansConfig::default()).unwrap();
    let g = baseline_grouping(&m, ProductLine::DcPlan).unwrap();
    assert_eq!(g.total_count(), 2);
    for orig in p.contracts() {
        assert!(g.contracts().any(|c| c
            .x
            .iter()
            .zip(&orig.x)
            .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0))));
    }
}

#[test]
fn baseline_counts_sum_to_portfolio_size() {
    let p = synth_dc(1000, 1).unwrap();
    let (m, _) = cluster_portfolio(&p, 25, &KMeansConfig::default()).unwrap();
    let g = baseline_grouping(&m, ProductLine::DcPlan).unwrap();
    assert_eq!(g.total_count(), 1000);
    assert_eq!(g.len(), 25);
}

#[test]
fn assignment_csv_and_json() {
    let pts = uniform_points(5, 5, 6);
    let m = kmeans(pts.view(), 2, &KMeansConfig::default()).unwrap();
    let mut buf = Vec::new();
    m.write_assignment_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "contract_index,cluster");
    assert_eq!(lines.len(), 6);
    let doc: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    assert_eq!(doc["centroids"].as_array().unwrap().len(), 2);
    assert_eq!(
        doc["sizes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .sum::<u64>(),
        5
    );
}
