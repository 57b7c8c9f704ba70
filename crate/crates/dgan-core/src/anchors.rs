//! Per-class anchor trajectories in the agent-centric frame, built from
//! training futures by k-means or uniform sampling, plus the ground-truth
//! anchor assignment used for training targets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{AgentClass, AgentFrame, Point2, Track};

/// Number of k-means restarts; the run with the lowest objective wins.
const KMEANS_RESTARTS: u64 = 8;

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorMetadata {
    /// How the set was produced: "kmeans", "uniform" or "manual".
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub horizon_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAnchors {
    pub class: AgentClass,
    /// K_c trajectories, each `horizon_steps` points `[x, y]` in the
    /// agent-centric frame.
    pub trajectories: Vec<Vec<[f64; 2]>>,
    /// Cluster populations from k-means, surfaced so skewed clusters can be
    /// spotted and pruned by hand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub populations: Option<Vec<usize>>,
}

/// Anchor trajectories grouped by class, in ascending class order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSet {
    pub metadata: AnchorMetadata,
    pub classes: Vec<ClassAnchors>,
}

impl AnchorSet {
    pub fn class_anchors(&self, class: AgentClass) -> Option<&ClassAnchors> {
        self.classes.iter().find(|c| c.class == class)
    }

    /// Anchor `k` of `class` as points.
    pub fn anchor(&self, class: AgentClass, k: usize) -> Option<Vec<Point2>> {
        let ca = self.class_anchors(class)?;
        ca.trajectories.get(k).map(|t| t.iter().map(|p| Point2::new(p[0], p[1])).collect())
    }

    pub fn horizon_steps(&self) -> usize {
        self.metadata.horizon_steps
    }

    /// Anchor counts in class order, as stored.
    pub fn counts(&self) -> Vec<(AgentClass, usize)> {
        self.classes.iter().map(|c| (c.class, c.trajectories.len())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.metadata.horizon_steps;
        for ca in &self.classes {
            if ca.trajectories.is_empty() {
                return Err(Error::InvalidValue(format!("class {} has no anchors", ca.class.name())));
            }
            for (k, tr) in ca.trajectories.iter().enumerate() {
                if tr.len() != t {
                    return Err(Error::InvalidValue(format!(
                        "anchor {k} of class {} has {} steps, expected {t}",
                        ca.class.name(),
                        tr.len()
                    )));
                }
                if tr.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
                    return Err(Error::InvalidValue(format!(
                        "anchor {k} of class {} has non-finite coordinates",
                        ca.class.name()
                    )));
                }
            }
            for i in 0..ca.trajectories.len() {
                for j in i + 1..ca.trajectories.len() {
                    let a = to_points(&ca.trajectories[i]);
                    let b = to_points(&ca.trajectories[j]);
                    if traj_distance(&a, &b)? <= 1e-9 {
                        return Err(Error::InvalidValue(format!(
                            "anchors {i} and {j} of class {} coincide",
                            ca.class.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidValue(format!("encoding anchors: {e}")))?;
        std::fs::write(path, body + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AnchorSet> {
        let body = std::fs::read_to_string(path)?;
        let set: AnchorSet = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        set.validate()?;
        Ok(set)
    }
}

fn to_points(tr: &[[f64; 2]]) -> Vec<Point2> {
    tr.iter().map(|p| Point2::new(p[0], p[1])).collect()
}

fn to_pairs(tr: &[Point2]) -> Vec<[f64; 2]> {
    tr.iter().map(|p| [p.x, p.y]).collect()
}

/// Ground-truth future of `track` over `t_ob+1..=t_f`, mapped into the
/// agent-centric frame. Requires a point at every future step.
pub fn normalize_future(
    track: &Track,
    frame: &AgentFrame,
    t_ob: i64,
    t_f: i64,
) -> Result<Vec<Point2>> {
    let mut out = Vec::with_capacity((t_f - t_ob).max(0) as usize);
    for t in t_ob + 1..=t_f {
        let Some(p) = track.position_at(t) else {
            return Err(Error::shape(
                "normalize_future",
                format!("agent {} has no point at timestep {t}", track.agent_id),
            ));
        };
        out.push(frame.to_agent_frame(p));
    }
    Ok(out)
}

/// Sum over timesteps of the squared point distance.
pub fn traj_distance(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "traj_distance",
            format!("trajectory lengths differ: {} vs {}", a.len(), b.len()),
        ));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(p, q)| {
            let (dx, dy) = (p.x - q.x, p.y - q.y);
            dx * dx + dy * dy
        })
        .sum())
}

/// Index of the anchor of `class` closest to `y` under `traj_distance`;
/// ties go to the lowest index.
pub fn nearest_anchor(anchors: &AnchorSet, class: AgentClass, y: &[Point2]) -> Result<usize> {
    let ca = anchors
        .class_anchors(class)
        .ok_or_else(|| Error::InsufficientData(format!("no anchors for class {}", class.name())))?;
    if ca.trajectories.is_empty() {
        return Err(Error::InsufficientData(format!("no anchors for class {}", class.name())));
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (k, tr) in ca.trajectories.iter().enumerate() {
        let d = traj_distance(&to_points(tr), y)?;
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    Ok(best)
}

/// One Lloyd run from given seeds. Assignment ties go to the lowest
/// cluster index; an emptied cluster keeps its previous centroid.
struct LloydRun {
    centroids: Vec<Vec<Point2>>,
    populations: Vec<usize>,
    objective: f64,
    /// Objective after each assignment step, for monotonicity checks.
    #[cfg_attr(not(test), allow(dead_code))]
    objective_history: Vec<f64>,
}

fn assign(futures: &[Vec<Point2>], centroids: &[Vec<Point2>]) -> Result<(Vec<usize>, f64)> {
    let mut assignment = Vec::with_capacity(futures.len());
    let mut objective = 0.0;
    for f in futures {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, c) in centroids.iter().enumerate() {
            let d = traj_distance(f, c)?;
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        assignment.push(best);
        objective += best_d;
    }
    Ok((assignment, objective))
}

fn lloyd(futures: &[Vec<Point2>], seeds: Vec<Vec<Point2>>) -> Result<LloydRun> {
    let k = seeds.len();
    let t = futures[0].len();
    let mut centroids = seeds;
    let (mut assignment, mut objective) = assign(futures, &centroids)?;
    let mut history = vec![objective];
    for _ in 0..KMEANS_MAX_ITERS {
        // Per-timestep mean of each cluster's members.
        let mut sums = vec![vec![Point2::new(0.0, 0.0); t]; k];
        let mut counts = vec![0usize; k];
        for (f, &a) in futures.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, p) in sums[a].iter_mut().zip(f) {
                s.x += p.x;
                s.y += p.y;
            }
        }
        for (c, (sum, &n)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if n > 0 {
                *c = sum.iter().map(|s| Point2::new(s.x / n as f64, s.y / n as f64)).collect();
            }
        }
        let (next_assignment, next_objective) = assign(futures, &centroids)?;
        history.push(next_objective);
        let stable = next_assignment == assignment;
        assignment = next_assignment;
        objective = next_objective;
        if stable {
            break;
        }
    }
    let mut populations = vec![0usize; k];
    for &a in &assignment {
        populations[a] += 1;
    }
    Ok(LloydRun { centroids, populations, objective, objective_history: history })
}

/// Seeding: first center uniform, then each next center drawn with
/// probability proportional to the squared distance to the nearest chosen
/// center. With total weight zero (all remaining points coincide with a
/// center) the draw falls back to uniform.
fn kmeans_pp_seeds(futures: &[Vec<Point2>], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Point2>>> {
    let mut seeds: Vec<Vec<Point2>> = Vec::with_capacity(k);
    seeds.push(futures[rng.gen_range(0..futures.len())].clone());
    let mut dist: Vec<f64> = futures
        .iter()
        .map(|f| traj_distance(f, &seeds[0]))
        .collect::<Result<_>>()?;
    while seeds.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let mut draw = rng.gen::<f64>() * total;
            let mut chosen = futures.len() - 1;
            for (i, &w) in dist.iter().enumerate() {
                if draw < w {
                    chosen = i;
                    break;
                }
                draw -= w;
            }
            chosen
        } else {
            rng.gen_range(0..futures.len())
        };
        seeds.push(futures[idx].clone());
        for (d, f) in dist.iter_mut().zip(futures) {
            *d = d.min(traj_distance(f, seeds.last().unwrap())?);
        }
    }
    Ok(seeds)
}

fn check_pool(futures: &[Vec<Point2>], k: usize, class: AgentClass) -> Result<usize> {
    if futures.len() < k {
        return Err(Error::InsufficientData(format!(
            "class {}: {} futures for {k} anchors",
            class.name(),
            futures.len()
        )));
    }
    let t = futures[0].len();
    if futures.iter().any(|f| f.len() != t) {
        return Err(Error::shape("kmeans_anchors", "futures have mixed lengths"));
    }
    // Distinct futures bound the number of separable clusters.
    let mut distinct: Vec<&Vec<Point2>> = Vec::new();
    for f in futures {
        if !distinct.iter().any(|d| traj_distance(d, f).map(|v| v == 0.0).unwrap_or(false)) {
            distinct.push(f);
        }
    }
    if distinct.len() < k {
        return Err(Error::InsufficientData(format!(
            "class {}: {} distinct futures for {k} anchors",
            class.name(),
            distinct.len()
        )));
    }
    Ok(t)
}

/// K-means over normalized futures, one centroid set per class. Restarted
/// a fixed number of times per class from seeded RNG streams; the lowest
/// objective wins, first run on ties.
pub fn kmeans_anchors(
    futures: &BTreeMap<AgentClass, Vec<Vec<Point2>>>,
    k_c: usize,
    seed: u64,
) -> Result<AnchorSet> {
    if k_c == 0 {
        return Err(Error::InvalidValue("k_c must be >= 1".into()));
    }
    let mut classes = Vec::new();
    let mut horizon = 0usize;
    for (&class, pool) in futures {
        horizon = check_pool(pool, k_c, class)?;
        let mut best: Option<LloydRun> = None;
        for restart in 0..KMEANS_RESTARTS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class.index() as u64) << 32);
            rng.set_stream(restart);
            let seeds = kmeans_pp_seeds(pool, k_c, &mut rng)?;
            let run = lloyd(pool, seeds)?;
            if best.as_ref().map_or(true, |b| run.objective < b.objective) {
                best = Some(run);
            }
        }
        let run = best.expect("at least one restart");
        classes.push(ClassAnchors {
            class,
            trajectories: run.centroids.iter().map(|c| to_pairs(c)).collect(),
            populations: Some(run.populations),
        });
    }
    let set = AnchorSet {
        metadata: AnchorMetadata {
            method: "kmeans".into(),
            seed: Some(seed),
            dataset: None,
            horizon_steps: horizon,
        },
        classes,
    };
    set.validate()?;
    Ok(set)
}

/// K_c futures per class drawn without replacement, kept in population
/// order.
pub fn uniform_sample_anchors(
    futures: &BTreeMap<AgentClass, Vec<Vec<Point2>>>,
    k_c: usize,
    seed: u64,
) -> Result<AnchorSet> {
    if k_c == 0 {
        return Err(Error::InvalidValue("k_c must be >= 1".into()));
    }
    let mut classes = Vec::new();
    let mut horizon = 0usize;
    for (&class, pool) in futures {
        horizon = check_pool(pool, k_c, class)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class.index() as u64) << 32);
        let mut picked = rand::seq::index::sample(&mut rng, pool.len(), k_c).into_vec();
        picked.sort_unstable();
        // Drawing without replacement can still select duplicate futures;
        // swap those for unpicked distinct ones, scanning in order.
        let mut result: Vec<usize> = Vec::with_capacity(k_c);
        for i in picked {
            if result.iter().any(|&r| dup(&pool[r], &pool[i])) {
                continue;
            }
            result.push(i);
        }
        let mut next = 0usize;
        while result.len() < k_c {
            if !result.contains(&next) && !result.iter().any(|&r| dup(&pool[r], &pool[next])) {
                result.push(next);
            }
            next += 1;
        }
        result.sort_unstable();
        classes.push(ClassAnchors {
            class,
            trajectories: result.iter().map(|&i| to_pairs(&pool[i])).collect(),
            populations: None,
        });
    }
    let set = AnchorSet {
        metadata: AnchorMetadata {
            method: "uniform".into(),
            seed: Some(seed),
            dataset: None,
            horizon_steps: horizon,
        },
        classes,
    };
    set.validate()?;
    Ok(set)
}

fn dup(a: &[Point2], b: &[Point2]) -> bool {
    traj_distance(a, b).map(|d| d <= 1e-9).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{normalize_angle, TrafficState};
    use proptest::prelude::*;
    use rand::Rng;

    fn pts(coords: &[(f64, f64)]) -> Vec<Point2> {
        coords.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    fn straight_track(n: i64) -> Track {
        Track {
            agent_id: 1,
            class: AgentClass::Pedestrian,
            points: (1..=n).map(|t| (t, Point2::new(t as f64, 0.0))).collect(),
            states: vec![],
        }
    }

    #[test]
    fn straight_future_normalizes_to_unit_steps() {
        let track = straight_track(8);
        let frame = AgentFrame::for_track(&track, 4).unwrap();
        let y = normalize_future(&track, &frame, 4, 8).unwrap();
        assert_eq!(y.len(), 4);
        for (i, p) in y.iter().enumerate() {
            assert!((p.x - (i + 1) as f64).abs() < 1e-12);
            assert!(p.y.abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_future_normalizes_to_zeros() {
        let mut track = straight_track(4);
        let last = track.points.last().unwrap().1;
        for t in 5..=8 {
            track.points.push((t, last));
        }
        let frame = AgentFrame::for_track(&track, 4).unwrap();
        let y = normalize_future(&track, &frame, 4, 8).unwrap();
        for p in y {
            assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        }
    }

    #[test]
    fn missing_future_step_is_a_shape_error() {
        let mut track = straight_track(8);
        track.points.retain(|(t, _)| *t != 6);
        let frame = AgentFrame::for_track(&track, 4).unwrap();
        assert!(normalize_future(&track, &frame, 4, 8).is_err());
    }

    #[test]
    fn traj_distance_examples() {
        let a = pts(&[(0.0, 0.0)]);
        let b = pts(&[(3.0, 4.0)]);
        assert_eq!(traj_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(traj_distance(&a, &b).unwrap(), 25.0);
        let c = pts(&[(1.0, 0.0), (2.0, 0.0)]);
        let d = pts(&[(0.0, 0.0), (0.0, 0.0)]);
        assert_eq!(traj_distance(&c, &d).unwrap(), 5.0);
        assert!(traj_distance(&a, &c).is_err());
    }

    fn single_step_pool(coords: &[(f64, f64)]) -> Vec<Vec<Point2>> {
        coords.iter().map(|&(x, y)| pts(&[(x, y)])).collect()
    }

    #[test]
    fn kmeans_two_well_separated_pairs() {
        let mut futures = BTreeMap::new();
        futures.insert(
            AgentClass::Pedestrian,
            single_step_pool(&[(0.0, 0.0), (0.0, 0.1), (10.0, 0.0), (10.0, 0.1)]),
        );
        let set = kmeans_anchors(&futures, 2, 7).unwrap();
        let ca = set.class_anchors(AgentClass::Pedestrian).unwrap();
        let mut centers: Vec<[f64; 2]> = ca.trajectories.iter().map(|t| t[0]).collect();
        centers.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((centers[0][0] - 0.0).abs() < 1e-12 && (centers[0][1] - 0.05).abs() < 1e-12);
        assert!((centers[1][0] - 10.0).abs() < 1e-12 && (centers[1][1] - 0.05).abs() < 1e-12);
        assert_eq!(ca.populations.as_ref().unwrap().iter().sum::<usize>(), 4);
    }

    #[test]
    fn kmeans_with_k_equal_to_distinct_count_returns_the_futures() {
        let pool = single_step_pool(&[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0), (5.0, 0.0)]);
        let mut futures = BTreeMap::new();
        futures.insert(AgentClass::Vehicle, pool);
        let set = kmeans_anchors(&futures, 3, 3).unwrap();
        let ca = set.class_anchors(AgentClass::Vehicle).unwrap();
        let mut got: Vec<[f64; 2]> = ca.trajectories.iter().map(|t| t[0]).collect();
        got.sort_by(|a, b| (a[0], a[1]).partial_cmp(&(b[0], b[1])).unwrap());
        assert_eq!(got, vec![[0.0, 0.0], [0.0, 5.0], [5.0, 0.0]]);
    }

    #[test]
    fn kmeans_objective_is_monotone_across_iterations() {
        let pool: Vec<Vec<Point2>> = (0..30)
            .map(|i| {
                let a = i as f64 * 0.7;
                pts(&[(a.sin() * 5.0, a.cos() * 3.0), (a.sin() * 9.0, a.cos() * 6.0)])
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seeds = kmeans_pp_seeds(&pool, 4, &mut rng).unwrap();
        let run = lloyd(&pool, seeds).unwrap();
        for w in run.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective rose: {:?}", w);
        }
    }

    #[test]
    fn kmeans_matches_exhaustive_bipartition_oracle() {
        let coords =
            [(0.0, 0.0), (1.0, 0.5), (0.5, 1.0), (8.0, 8.0), (9.0, 7.5), (7.5, 9.0), (8.5, 8.5)];
        let pool = single_step_pool(&coords);
        // Best 2-partition by brute force over all assignments.
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << (pool.len() - 1)) {
            let groups: (Vec<_>, Vec<_>) =
                (0..pool.len()).partition(|&i| mask & (1 << i.min(31)) != 0);
            if groups.0.is_empty() || groups.1.is_empty() {
                continue;
            }
            let mut total = 0.0;
            for idx in [&groups.0, &groups.1] {
                let n = idx.len() as f64;
                let cx = idx.iter().map(|&i| pool[i][0].x).sum::<f64>() / n;
                let cy = idx.iter().map(|&i| pool[i][0].y).sum::<f64>() / n;
                total += idx
                    .iter()
                    .map(|&i| {
                        let (dx, dy) = (pool[i][0].x - cx, pool[i][0].y - cy);
                        dx * dx + dy * dy
                    })
                    .sum::<f64>();
            }
            best = best.min(total);
        }
        let mut futures = BTreeMap::new();
        futures.insert(AgentClass::Cyclist, pool.clone());
        let set = kmeans_anchors(&futures, 2, 5).unwrap();
        let ca = set.class_anchors(AgentClass::Cyclist).unwrap();
        let centroids: Vec<Vec<Point2>> = ca.trajectories.iter().map(|t| to_points(t)).collect();
        let (_, objective) = assign(&pool, &centroids).unwrap();
        assert!((objective - best).abs() < 1e-9, "kmeans {objective} vs oracle {best}");
    }

    #[test]
    fn kmeans_rejects_thin_pools() {
        let mut futures = BTreeMap::new();
        futures.insert(AgentClass::Vehicle, single_step_pool(&[(0.0, 0.0)]));
        assert!(matches!(kmeans_anchors(&futures, 2, 0), Err(Error::InsufficientData(_))));
        let mut dup_futures = BTreeMap::new();
        dup_futures
            .insert(AgentClass::Vehicle, single_step_pool(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]));
        assert!(matches!(kmeans_anchors(&dup_futures, 2, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn uniform_sampling_is_seeded_and_subset() {
        let pool = single_step_pool(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        let mut futures = BTreeMap::new();
        futures.insert(AgentClass::Pedestrian, pool.clone());
        let a = uniform_sample_anchors(&futures, 3, 9).unwrap();
        let b = uniform_sample_anchors(&futures, 3, 9).unwrap();
        assert_eq!(
            a.class_anchors(AgentClass::Pedestrian).unwrap().trajectories,
            b.class_anchors(AgentClass::Pedestrian).unwrap().trajectories
        );
        for tr in &a.class_anchors(AgentClass::Pedestrian).unwrap().trajectories {
            assert!(pool.iter().any(|f| to_pairs(f) == *tr));
        }
        let full = uniform_sample_anchors(&futures, 5, 1).unwrap();
        let got = &full.class_anchors(AgentClass::Pedestrian).unwrap().trajectories;
        assert_eq!(*got, pool.iter().map(|f| to_pairs(f)).collect::<Vec<_>>());
    }

    #[test]
    fn nearest_anchor_picks_exact_match_and_breaks_ties_low() {
        let pool = single_step_pool(&[(0.0, 0.0), (2.0, 0.0), (4.0, 0.0), (6.0, 0.0)]);
        let mut futures = BTreeMap::new();
        futures.insert(AgentClass::Vehicle, pool);
        let set = uniform_sample_anchors(&futures, 4, 0).unwrap();
        assert_eq!(nearest_anchor(&set, AgentClass::Vehicle, &pts(&[(4.0, 0.0)])).unwrap(), 2);
        // (1, 0) is equidistant from anchors 0 and 1.
        assert_eq!(nearest_anchor(&set, AgentClass::Vehicle, &pts(&[(1.0, 0.0)])).unwrap(), 0);
        assert!(nearest_anchor(&set, AgentClass::Cyclist, &pts(&[(0.0, 0.0)])).is_err());
    }

    #[test]
    fn nearest_anchor_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pool: Vec<Vec<Point2>> = (0..20)
            .map(|_| (0..6).map(|_| Point2::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0)).collect())
            .collect();
        let mut futures = BTreeMap::new();
        futures.insert(AgentClass::Cyclist, pool.clone());
        let set = uniform_sample_anchors(&futures, 20, 0).unwrap();
        for _ in 0..100 {
            let y: Vec<Point2> =
                (0..6).map(|_| Point2::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0)).collect();
            let got = nearest_anchor(&set, AgentClass::Cyclist, &y).unwrap();
            let want = (0..20)
                .min_by(|&i, &j| {
                    let di = traj_distance(&pool[i], &y).unwrap();
                    let dj = traj_distance(&pool[j], &y).unwrap();
                    di.partial_cmp(&dj).unwrap()
                })
                .unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn anchor_file_round_trips() {
        let mut futures = BTreeMap::new();
        futures.insert(
            AgentClass::Pedestrian,
            single_step_pool(&[(0.0, 0.0), (1.0, 2.0), (3.0, 4.0)]),
        );
        let set = kmeans_anchors(&futures, 2, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchors.json");
        set.save(&path).unwrap();
        let loaded = AnchorSet::load(&path).unwrap();
        loaded.save(&dir.path().join("anchors2.json")).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("anchors2.json")).unwrap()
        );
    }

    proptest! {
        #[test]
        fn traj_distance_is_a_symmetric_relaxed_metric(
            raw in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3 * 4)
        ) {
            let t = 4;
            let a = pts(&raw[0..t]);
            let b = pts(&raw[t..2 * t]);
            let c = pts(&raw[2 * t..3 * t]);
            let ab = traj_distance(&a, &b).unwrap();
            let ba = traj_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(traj_distance(&a, &a).unwrap(), 0.0);
            let ac = traj_distance(&a, &c).unwrap();
            let bc = traj_distance(&b, &c).unwrap();
            prop_assert!(ac <= 2.0 * (ab + bc) + 1e-9);
        }

        #[test]
        fn normalized_future_ignores_rigid_world_motion(
            theta in -3.1f64..3.1,
            tx in -100.0f64..100.0,
            ty in -100.0f64..100.0,
        ) {
            let track = Track {
                agent_id: 9,
                class: AgentClass::Vehicle,
                points: (1..=8)
                    .map(|t| {
                        let s = t as f64 * 0.5;
                        (t, Point2::new(s, (s * 0.8).sin()))
                    })
                    .collect(),
                states: vec![(
                    4,
                    TrafficState {
                        velocity: 1.0,
                        acceleration: 0.0,
                        heading: 0.3,
                        width: 1.8,
                        length: 4.5,
                        class: AgentClass::Vehicle,
                    },
                )],
            };
            let (sin_t, cos_t) = theta.sin_cos();
            let mut moved = track.clone();
            for (_, p) in &mut moved.points {
                *p = Point2::new(
                    cos_t * p.x - sin_t * p.y + tx,
                    sin_t * p.x + cos_t * p.y + ty,
                );
            }
            for (_, s) in &mut moved.states {
                s.heading = normalize_angle(s.heading + theta);
            }
            let f_a = AgentFrame::for_track(&track, 4).unwrap();
            let f_b = AgentFrame::for_track(&moved, 4).unwrap();
            let y_a = normalize_future(&track, &f_a, 4, 8).unwrap();
            let y_b = normalize_future(&moved, &f_b, 4, 8).unwrap();
            for (p, q) in y_a.iter().zip(&y_b) {
                prop_assert!((p.x - q.x).abs() < 1e-9);
                prop_assert!((p.y - q.y).abs() < 1e-9);
            }
        }

        #[test]
        fn nearest_anchor_is_shift_invariant(
            sx in -20.0f64..20.0,
            sy in -20.0f64..20.0,
            seed in 0u64..50,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool: Vec<Vec<Point2>> = (0..6)
                .map(|_| (0..3).map(|_| Point2::new(rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 8.0)).collect())
                .collect();
            let mut futures = BTreeMap::new();
            futures.insert(AgentClass::Pedestrian, pool.clone());
            let set = uniform_sample_anchors(&futures, 6, 0).unwrap();
            let shifted = AnchorSet {
                metadata: set.metadata.clone(),
                classes: set
                    .classes
                    .iter()
                    .map(|ca| ClassAnchors {
                        class: ca.class,
                        trajectories: ca
                            .trajectories
                            .iter()
                            .map(|tr| tr.iter().map(|p| [p[0] + sx, p[1] + sy]).collect())
                            .collect(),
                        populations: None,
                    })
                    .collect(),
            };
            let y: Vec<Point2> =
                (0..3).map(|_| Point2::new(rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 8.0)).collect();
            let y_shifted: Vec<Point2> =
                y.iter().map(|p| Point2::new(p.x + sx, p.y + sy)).collect();
            let a = nearest_anchor(&set, AgentClass::Pedestrian, &y).unwrap();
            let b = nearest_anchor(&shifted, AgentClass::Pedestrian, &y_shifted).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
