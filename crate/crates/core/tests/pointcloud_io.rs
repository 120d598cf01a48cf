use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trivol::pointcloud::{voxelize, PointCloud, GRID_CHANNELS, OCCUPANCY_CAP};

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect(),
        (0..n).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect(),
    )
    .unwrap()
}

#[test]
fn hundred_thousand_points_roundtrip_exactly() {
    let pc = random_cloud(100_000, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("points.txt");
    pc.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 100_000);
    assert_eq!(PointCloud::load(&path).unwrap(), pc);
}

#[test]
fn voxel_grid_matches_hashmap_counting() {
    let s = 8;
    // clustered points so many voxels exceed the occupancy cap
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 3000;
    let positions: Vec<[f64; 3]> = (0..n)
        .map(|_| std::array::from_fn(|_| (rng.gen::<f64>().powi(3)).min(1.0)))
        .collect();
    let colors: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen())).collect();
    let pc = PointCloud::new(positions.clone(), colors.clone()).unwrap();
    let grid = voxelize(&pc, s).unwrap();

    let mut buckets: HashMap<(usize, usize, usize), Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        let idx = p.map(|v| ((v * s as f64) as usize).min(s - 1));
        buckets.entry((idx[0], idx[1], idx[2])).or_default().push(i);
    }
    let cells = s * s * s;
    let data = grid.data().data();
    assert_eq!(grid.data().shape(), [GRID_CHANNELS, s, s, s]);
    assert_eq!(grid.occupied(), buckets.len());
    for i in 0..s {
        for j in 0..s {
            for k in 0..s {
                let v = (i * s + j) * s + k;
                match buckets.get(&(i, j, k)) {
                    None => (0..GRID_CHANNELS).for_each(|c| assert_eq!(data[c * cells + v], 0.0)),
                    Some(members) => {
                        let n = members.len() as f64;
                        for c in 0..3 {
                            let mean = members.iter().map(|&m| colors[m][c]).sum::<f64>() / n;
                            assert!((data[c * cells + v] - mean).abs() < 1e-12);
                        }
                        assert_eq!(data[3 * cells + v], (n / OCCUPANCY_CAP as f64).min(1.0));
                    }
                }
            }
        }
    }
}
