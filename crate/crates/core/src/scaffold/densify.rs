//! Anchor growing, pruning and voxel initialization.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Anchor, AnchorSet};
use crate::error::{Error, Result};

/// Std of the noise put on offsets of freshly grown anchors.
const NEW_OFFSET_NOISE: f64 = 0.01;

pub fn voxel_key(p: &Vector3<f64>, voxel_size: f64) -> [i64; 3] {
    [
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    ]
}

fn voxel_center(key: [i64; 3], voxel_size: f64) -> Vector3<f64> {
    Vector3::new(
        (key[0] as f64 + 0.5) * voxel_size,
        (key[1] as f64 + 0.5) * voxel_size,
        (key[2] as f64 + 0.5) * voxel_size,
    )
}

fn check_voxel(voxel_size: f64) -> Result<()> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
    }
    Ok(())
}

/// One anchor per occupied voxel, ordered by voxel index. Features and
/// offsets start at zero and `l_v` equals the voxel size.
pub fn init_anchors_from_points(
    points: &[Vector3<f64>],
    voxel_size: f64,
    k: usize,
    feature_dim: usize,
) -> Result<AnchorSet> {
    check_voxel(voxel_size)?;
    if points.is_empty() {
        return Err(Error::invalid("no points to initialize anchors from"));
    }
    if let Some(p) = points.iter().find(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid(format!("non-finite point {p:?}")));
    }
    let keys: BTreeSet<[i64; 3]> = points.iter().map(|p| voxel_key(p, voxel_size)).collect();
    let mut set = AnchorSet::new(k, feature_dim);
    for key in keys {
        set.push(&Anchor {
            position: voxel_center(key, voxel_size),
            feature: vec![0.0; feature_dim],
            offsets: vec![Vector3::zeros(); k],
            scaling: Vector3::repeat(voxel_size),
        })?;
    }
    Ok(set)
}

/// Grows anchors where neural Gaussians saw large screen-space gradients.
///
/// `grad_sum` and `hits` are indexed by `anchor × k + slot`. Qualifying
/// Gaussians vote their current mean into a voxel grid; each voted voxel
/// not already holding an anchor yields one new anchor, inheriting the
/// feature of the first voter.
pub fn densify_anchors<R: Rng>(
    anchors: &AnchorSet,
    grad_sum: &[f64],
    hits: &[u32],
    voxel_size: f64,
    grow_threshold: f64,
    rng: &mut R,
) -> Result<Vec<Anchor>> {
    check_voxel(voxel_size)?;
    let k = anchors.k;
    let n = anchors.len() * k;
    if grad_sum.len() != n || hits.len() != n {
        return Err(Error::invalid("densify statistics do not match the anchor set"));
    }
    let occupied: BTreeSet<[i64; 3]> = (0..anchors.len())
        .map(|i| voxel_key(&anchors.position(i), voxel_size))
        .collect();
    let mut votes: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    for a in 0..anchors.len() {
        let anchor = anchors.get(a);
        for s in 0..k {
            let h = hits[a * k + s];
            if h == 0 || grad_sum[a * k + s] / h as f64 <= grow_threshold {
                continue;
            }
            let mu = anchor.position + anchor.offsets[s].component_mul(&anchor.scaling);
            let key = voxel_key(&mu, voxel_size);
            if !occupied.contains(&key) {
                votes.entry(key).or_insert(a);
            }
        }
    }
    let noise = Normal::new(0.0, NEW_OFFSET_NOISE).expect("valid normal");
    Ok(votes
        .into_iter()
        .map(|(key, parent)| Anchor {
            position: voxel_center(key, voxel_size),
            feature: anchors.features[parent * anchors.feature_dim..(parent + 1) * anchors.feature_dim].to_vec(),
            offsets: (0..k).map(|_| Vector3::from_fn(|_, _| noise.sample(rng))).collect(),
            scaling: Vector3::repeat(voxel_size),
        })
        .collect())
}

/// Keep mask for anchors. `opacity_sum[i] / opacity_count[i]` is the mean
/// visible opacity of anchor `i`; anchors never observed are kept.
pub fn prune_anchors(opacity_sum: &[f64], opacity_count: &[u32], prune_threshold: f64) -> Result<Vec<bool>> {
    if opacity_sum.len() != opacity_count.len() {
        return Err(Error::invalid("prune statistics length mismatch"));
    }
    Ok(opacity_sum
        .iter()
        .zip(opacity_count)
        .map(|(&s, &c)| c == 0 || s / c as f64 >= prune_threshold)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_anchor(offsets: Vec<Vector3<f64>>) -> AnchorSet {
        let mut set = AnchorSet::new(offsets.len(), 2);
        set.push(&Anchor {
            position: Vector3::new(0.5, 0.5, 0.5),
            feature: vec![0.3, -0.1],
            offsets,
            scaling: Vector3::repeat(1.0),
        })
        .unwrap();
        set
    }

    #[test]
    fn init_dedups_points_per_voxel() {
        let pts = [Vector3::new(0.1, 0.1, 0.1), Vector3::new(0.2, 0.3, 0.4)];
        let set = init_anchors_from_points(&pts, 1.0, 4, 3).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.position(0), Vector3::repeat(0.5));
        let a = set.get(0);
        assert_eq!(a.scaling, Vector3::repeat(1.0));
        assert!(a.feature.iter().all(|f| *f == 0.0));
    }

    #[test]
    fn init_one_point() {
        let set = init_anchors_from_points(&[Vector3::new(-0.3, 1.7, 2.2)], 0.5, 2, 1).unwrap();
        assert_eq!(set.len(), 1);
        assert!((set.position(0) - Vector3::new(-0.25, 1.75, 2.25)).norm() < 1e-12);
    }

    #[test]
    fn init_rejects_bad_voxel() {
        assert!(init_anchors_from_points(&[Vector3::zeros()], 0.0, 2, 1).is_err());
        assert!(init_anchors_from_points(&[], 1.0, 2, 1).is_err());
    }

    #[test]
    fn below_threshold_grows_nothing() {
        let set = one_anchor(vec![Vector3::new(2.0, 0.0, 0.0); 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grown = densify_anchors(&set, &[1e-5, 1e-5], &[1, 1], 1.0, 2e-4, &mut rng).unwrap();
        assert!(grown.is_empty());
    }

    #[test]
    fn one_vote_grows_one_anchor_at_voxel_center() {
        let set = one_anchor(vec![Vector3::new(2.0, 0.0, 0.0), Vector3::zeros()]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grown = densify_anchors(&set, &[1.0, 1.0], &[1, 1], 1.0, 2e-4, &mut rng).unwrap();
        // The second slot lands in the parent's own voxel.
        assert_eq!(grown.len(), 1);
        assert_eq!(grown[0].position, Vector3::new(2.5, 0.5, 0.5));
        assert_eq!(grown[0].feature, vec![0.3, -0.1]);
        assert!(grown[0].offsets.iter().all(|o| o.norm() < 0.1));
    }

    #[test]
    fn two_votes_in_one_voxel_grow_one_anchor() {
        let set = one_anchor(vec![Vector3::new(2.0, 0.0, 0.0), Vector3::new(2.2, 0.1, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grown = densify_anchors(&set, &[1.0, 1.0], &[2, 2], 1.0, 2e-4, &mut rng).unwrap();
        assert_eq!(grown.len(), 1);
    }

    #[test]
    fn densify_is_deterministic() {
        let set = one_anchor(vec![Vector3::new(2.0, 0.0, 0.0), Vector3::new(-3.0, 1.0, 0.0)]);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            densify_anchors(&set, &[1.0, 1.0], &[1, 1], 1.0, 2e-4, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prune_rules() {
        assert_eq!(prune_anchors(&[1.0, 2.0], &[2, 2], 0.005).unwrap(), vec![true, true]);
        assert_eq!(prune_anchors(&[0.0, 2.0], &[5, 2], 0.005).unwrap(), vec![false, true]);
        assert_eq!(prune_anchors(&[0.0], &[0], 0.005).unwrap(), vec![true]);
    }
}
