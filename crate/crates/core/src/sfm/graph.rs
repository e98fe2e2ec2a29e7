use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector2;

use crate::geometry::{estimate_essential_ransac, CameraModel, GeometryError, RansacConfig};
use crate::matching::Match;
use crate::scalar::Real;

/// Keypoints of every image and the verified inlier matches of each
/// overlapping pair, keyed by `(image_a, image_b)` with `image_a < image_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph<T: Real> {
    pub image_ids: Vec<String>,
    pub keypoints: Vec<Vec<Vector2<T>>>,
    /// Inlier correspondences as `(keypoint in a, keypoint in b)`.
    pub pairs: BTreeMap<(usize, usize), Vec<(usize, usize)>>,
}

/// Keypoints across images that observe one physical point, as
/// `(image, keypoint)` pairs sorted by image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Track {
    pub observations: Vec<(usize, usize)>,
}

impl Track {
    /// Keypoint index of this track in `image`, if observed there.
    pub fn keypoint_in(&self, image: usize) -> Option<usize> {
        self.observations
            .binary_search_by_key(&image, |&(i, _)| i)
            .ok()
            .map(|pos| self.observations[pos].1)
    }
}

/// Geometric verification of one pair: the matches that are inliers of a
/// robustly estimated essential matrix.
pub fn verify_matches<T: Real>(
    keypoints_a: &[Vector2<T>],
    keypoints_b: &[Vector2<T>],
    matches: &[Match],
    cam: &CameraModel<T>,
    ransac: &RansacConfig,
) -> Result<Vec<(usize, usize)>, GeometryError> {
    let pa: Vec<Vector2<T>> = matches.iter().map(|m| keypoints_a[m.index_a]).collect();
    let pb: Vec<Vector2<T>> = matches.iter().map(|m| keypoints_b[m.index_b]).collect();
    let (_, mask) = estimate_essential_ransac(&pa, &pb, cam, ransac)?;
    Ok(matches
        .iter()
        .zip(mask)
        .filter(|(_, inlier)| *inlier)
        .map(|(m, _)| (m.index_a, m.index_b))
        .collect())
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Assembles the scene graph and chains pairwise matches into tracks.
/// Pairs with no matches are dropped; tracks holding two keypoints of one
/// image are discarded. Tracks are ordered by their first observation.
pub fn build_scene_graph<T: Real>(
    image_ids: Vec<String>,
    keypoints: Vec<Vec<Vector2<T>>>,
    verified: impl IntoIterator<Item = ((usize, usize), Vec<(usize, usize)>)>,
) -> (SceneGraph<T>, Vec<Track>) {
    assert_eq!(image_ids.len(), keypoints.len(), "one keypoint list per image");
    let mut pairs = BTreeMap::new();
    for ((a, b), matches) in verified {
        assert!(a < keypoints.len() && b < keypoints.len() && a != b, "pair references unknown images");
        if matches.is_empty() {
            continue;
        }
        let (key, m) = if a < b {
            ((a, b), matches)
        } else {
            ((b, a), matches.into_iter().map(|(x, y)| (y, x)).collect())
        };
        pairs.entry(key).or_insert_with(Vec::new).extend(m);
    }

    let mut offset = Vec::with_capacity(keypoints.len() + 1);
    offset.push(0);
    for k in &keypoints {
        offset.push(offset.last().unwrap() + k.len());
    }
    let node = |image: usize, kp: usize| offset[image] + kp;
    let mut uf = UnionFind::new(*offset.last().unwrap());
    let mut touched = Vec::new();
    for (&(a, b), matches) in &pairs {
        for &(ka, kb) in matches {
            let (na, nb) = (node(a, ka), node(b, kb));
            uf.union(na, nb);
            touched.push((na, (a, ka)));
            touched.push((nb, (b, kb)));
        }
    }
    touched.sort_unstable();
    touched.dedup();
    let mut components: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (n, obs) in touched {
        components.entry(uf.find(n)).or_default().push(obs);
    }
    let mut tracks: Vec<Track> = components
        .into_values()
        .filter_map(|mut obs| {
            obs.sort_unstable();
            let consistent = obs.windows(2).all(|w| w[0].0 != w[1].0);
            (consistent && obs.len() >= 2).then_some(Track { observations: obs })
        })
        .collect();
    tracks.sort_by(|a, b| a.observations.cmp(&b.observations));

    (
        SceneGraph {
            image_ids,
            keypoints,
            pairs,
        },
        tracks,
    )
}

/// Lookup from `(image, keypoint)` to track index.
pub fn track_index(tracks: &[Track]) -> HashMap<(usize, usize), usize> {
    let mut map = HashMap::new();
    for (t, track) in tracks.iter().enumerate() {
        for &obs in &track.observations {
            map.insert(obs, t);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(
        matches: Vec<((usize, usize), Vec<(usize, usize)>)>,
    ) -> (SceneGraph<f64>, Vec<Track>) {
        let ids = vec!["A".to_string(), "B".into(), "C".into()];
        let kps = vec![vec![Vector2::zeros(); 10]; 3];
        build_scene_graph(ids, kps, matches)
    }

    #[test]
    fn transitive_closure() {
        let (g, tracks) = graph(vec![((0, 1), vec![(1, 3)]), ((1, 2), vec![(3, 7)])]);
        assert_eq!(g.pairs.len(), 2);
        assert_eq!(tracks, vec![Track { observations: vec![(0, 1), (1, 3), (2, 7)] }]);
        assert_eq!(tracks[0].keypoint_in(2), Some(7));
        assert_eq!(tracks[0].keypoint_in(5), None);
    }

    #[test]
    fn inconsistent_track_is_discarded() {
        let (_, tracks) = graph(vec![((0, 1), vec![(1, 3), (2, 3), (4, 5)])]);
        assert_eq!(tracks, vec![Track { observations: vec![(0, 4), (1, 5)] }]);
    }

    #[test]
    fn empty_matches() {
        let (g, tracks) = graph(vec![((0, 1), vec![])]);
        assert!(g.pairs.is_empty());
        assert!(tracks.is_empty());
    }

    #[test]
    fn reversed_pairs_are_normalised() {
        let (g, tracks) = graph(vec![((2, 0), vec![(4, 6)])]);
        assert_eq!(g.pairs[&(0, 2)], vec![(6, 4)]);
        assert_eq!(tracks[0].observations, vec![(0, 6), (2, 4)]);
    }
}
