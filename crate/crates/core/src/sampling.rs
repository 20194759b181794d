//! Representative-point selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{dist2, Point3, PointCloud};

fn check_m(m: usize, n: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::MOutOfRange { m, n });
    }
    Ok(())
}

/// Index of the first FPS pick for a cloud of `n` points.
pub fn fps_seed_index(n: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}

pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    farthest_point_sample_coords(cloud.coords(), m, seed)
}

/// Greedy max-min selection on coordinates.
///
/// The first index is drawn from a seeded RNG. Each later pick maximizes the
/// squared distance to its nearest already-selected point, lowest index on
/// ties.
pub fn farthest_point_sample_coords(coords: &[Point3], m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = coords.len();
    check_m(m, n)?;
    let first = fps_seed_index(n, seed);
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let cc = coords[current];
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist2(&coords[i], &cc);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            // Strict comparison keeps the lowest index among ties.
            if best.is_none_or(|(bd, _)| min_d2[i] > bd) {
                best = Some((min_d2[i], i));
            }
        }
        current = best.expect("m <= n leaves an unselected point").1;
    }
    Ok(selected)
}

/// `m` distinct indices drawn uniformly without replacement.
pub fn random_sample(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    random_sample_n(cloud.len(), m, seed)
}

pub fn random_sample_n(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    check_m(m, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, m).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Point3> {
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]
    }

    #[test]
    fn square_opposite_corner() {
        let coords = square();
        let seed = (0..u64::MAX)
            .find(|&s| fps_seed_index(4, s) == 0)
            .unwrap();
        let picks = farthest_point_sample_coords(&coords, 2, seed).unwrap();
        assert_eq!(picks, vec![0, 3]);
    }

    #[test]
    fn full_selection_is_permutation() {
        let coords: Vec<Point3> = (0..17).map(|i| [i as f64 * 0.3, (i % 4) as f64, 0.0]).collect();
        let mut picks = farthest_point_sample_coords(&coords, 17, 5).unwrap();
        picks.sort_unstable();
        assert_eq!(picks, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn single_pick_is_seed_index() {
        let coords = square();
        for seed in 0..20 {
            assert_eq!(
                farthest_point_sample_coords(&coords, 1, seed).unwrap(),
                vec![fps_seed_index(4, seed)]
            );
        }
    }

    #[test]
    fn duplicates_still_distinct() {
        let coords = vec![[0.0; 3]; 5];
        let mut picks = farthest_point_sample_coords(&coords, 5, 1).unwrap();
        picks.sort_unstable();
        assert_eq!(picks, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn m_range_checked() {
        assert!(matches!(
            farthest_point_sample_coords(&square(), 0, 0),
            Err(Error::MOutOfRange { m: 0, n: 4 })
        ));
        assert!(farthest_point_sample_coords(&square(), 5, 0).is_err());
        assert!(random_sample_n(4, 5, 0).is_err());
    }

    #[test]
    fn random_sample_deterministic_permutation() {
        let a = random_sample_n(50, 50, 9).unwrap();
        assert_eq!(a, random_sample_n(50, 50, 9).unwrap());
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }
}
