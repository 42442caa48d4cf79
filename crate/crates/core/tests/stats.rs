mod common;

use nalgebra::Vector2;
use plbench::io::{compute_frame_stats, compute_stats, stats_csv};
use plbench::sequence::{Endpoint, Frame, LineId, LineMeasurement, PointId, PointMeasurement};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn points(pixels: &[(f64, f64)]) -> Frame {
    let points = pixels
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| PointMeasurement { landmark: PointId(i as u32), pixel: Vector2::new(x, y), depth: 1.0 })
        .collect();
    Frame { points, lines: vec![] }
}

#[test]
fn oracle_agrees_on_random_frames() {
    let check = common::stats_oracle(1000, 23);
    assert!(check.passed, "{}", check.detail);
}

#[test]
fn small_frames() {
    let k = common::camera();
    assert_eq!(compute_frame_stats(0, &points(&[(5.0, 5.0)]), &k).occupied_cells, 1);
    assert_eq!(compute_frame_stats(0, &points(&[(3.0, 3.0), (9.0, 9.0)]), &k).occupied_cells, 1);
    assert_eq!(compute_frame_stats(0, &points(&[(9.999, 5.0), (10.0, 5.0)]), &k).occupied_cells, 2);
    let line = Frame {
        points: vec![],
        lines: vec![LineMeasurement {
            landmark: LineId(0),
            start: Endpoint { pixel: Vector2::new(5.0, 5.0), depth: 1.0 },
            end: Endpoint { pixel: Vector2::new(95.0, 5.0), depth: 1.0 },
        }],
    };
    let s = compute_frame_stats(4, &line, &k);
    assert_eq!((s.frame_id, s.num_points, s.num_lines, s.occupied_cells), (4, 0, 1, 2));
}

#[test]
fn generated_sequence_matches_oracle() {
    let seq = common::sequence("box", Some(40), Some(5), true);
    let stats = compute_stats(&seq);
    assert_eq!(stats.len(), seq.len());
    for (i, (s, f)) in stats.iter().zip(&seq.frames).enumerate() {
        assert_eq!(s.frame_id, i);
        assert_eq!(s.num_points, f.points.len());
        assert_eq!(s.num_lines, f.lines.len());
        assert_eq!(s.occupied_cells, common::occupied_cells_oracle(f));
    }
    let csv = stats_csv(&stats);
    assert_eq!(csv.lines().count(), seq.len() + 1);
}

proptest! {
    #[test]
    fn oracle_agrees_for_any_seed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = common::camera();
        let f = common::random_frame(&mut rng, &k);
        let s = compute_frame_stats(0, &f, &k);
        prop_assert_eq!(s.occupied_cells, common::occupied_cells_oracle(&f));
        // bounded by the number of features and by the grid
        prop_assert!(s.occupied_cells <= f.points.len() + 2 * f.lines.len());
        prop_assert!(s.occupied_cells <= 64 * 48);
    }
}
