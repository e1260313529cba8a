//! Per-case trajectories in projected space and the measures defined over
//! them: tail convergence radius, motion-normalised DTW dissimilarity and
//! top-k similarity retrieval.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FrameKey;
use crate::projection::ProjectionResult;

/// Default tail window for the convergence radius.
pub const DEFAULT_K_WINDOW: usize = 5;
/// Default number of similar cases returned.
pub const DEFAULT_TOP_K: usize = 6;
/// Floor on the local-motion denominator of the DTW cost.
pub const MOTION_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error("trajectory of case {case_id} has {len} point(s); at least 2 are required")]
    TrajectoryTooShort { case_id: String, len: usize },
    #[error("empty trajectory set")]
    EmptySet,
    #[error("trajectory sets cover different cases")]
    CaseSetMismatch,
    #[error("baseline mean convergence radius is zero")]
    ZeroBaseline,
    #[error("k must be >= 1")]
    InvalidK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t_index: u32,
    pub x: f64,
    pub y: f64,
}

impl TrajectoryPoint {
    fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub case_id: String,
    pub channel: String,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(case_id: impl Into<String>, channel: impl Into<String>, xy: &[[f64; 2]]) -> Self {
        Self {
            case_id: case_id.into(),
            channel: channel.into(),
            points: xy
                .iter()
                .enumerate()
                .map(|(t, p)| TrajectoryPoint {
                    t_index: t as u32,
                    x: p[0],
                    y: p[1],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xy(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(TrajectoryPoint::xy).collect()
    }
}

/// Chronologically ordered points of one case.
pub fn build_trajectory(projection: &ProjectionResult, case_id: &str) -> Result<Trajectory, TrajectoryError> {
    let points: Vec<TrajectoryPoint> = projection
        .coords
        .range(FrameKey::new(case_id, 0)..)
        .take_while(|(k, _)| k.case_id == case_id)
        .map(|(k, [x, y])| TrajectoryPoint {
            t_index: k.t_index,
            x: *x,
            y: *y,
        })
        .collect();
    if points.is_empty() {
        return Err(TrajectoryError::UnknownCase(case_id.to_string()));
    }
    Ok(Trajectory {
        case_id: case_id.to_string(),
        channel: projection.spec.channel.clone(),
        points,
    })
}

/// Trajectories of every case in the projection, ascending case id.
pub fn build_all(projection: &ProjectionResult) -> Vec<Trajectory> {
    projection
        .spec
        .scope
        .iter()
        .filter_map(|c| build_trajectory(projection, c).ok())
        .collect()
}

fn norm(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub k_window: usize,
    pub tail_mean: [f64; 2],
    pub radius: f64,
}

/// Mean distance of the last `min(k, len)` points to their mean.
pub fn convergence_radius(traj: &Trajectory, k: usize) -> ConvergenceStats {
    let k = k.max(1);
    let tail = &traj.points[traj.len().saturating_sub(k)..];
    let n = tail.len().max(1) as f64;
    // accumulate offsets from the first tail point so coincident points
    // reproduce it exactly
    let origin = tail.first().map_or([0.0, 0.0], TrajectoryPoint::xy);
    let (sx, sy) = tail
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + (p.x - origin[0]), sy + (p.y - origin[1])));
    let mean = [origin[0] + sx / n, origin[1] + sy / n];
    let radius = tail.iter().map(|p| norm(p.xy(), mean)).sum::<f64>() / n;
    ConvergenceStats {
        k_window: k,
        tail_mean: mean,
        radius,
    }
}

pub fn mean_convergence_radius(trajectories: &[Trajectory], k: usize) -> Result<f64, TrajectoryError> {
    if trajectories.is_empty() {
        return Err(TrajectoryError::EmptySet);
    }
    let total: f64 = trajectories.iter().map(|t| convergence_radius(t, k).radius).sum();
    Ok(total / trajectories.len() as f64)
}

/// Relative reduction, in percent, of the mean convergence radius of
/// `focused` against `baseline`: `(mean_b - mean_a) / mean_b * 100`.
pub fn compare_embedding_variants(
    focused: &[Trajectory],
    baseline: &[Trajectory],
    k: usize,
) -> Result<f64, TrajectoryError> {
    let mut a: Vec<&str> = focused.iter().map(|t| t.case_id.as_str()).collect();
    let mut b: Vec<&str> = baseline.iter().map(|t| t.case_id.as_str()).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a.is_empty() || b.is_empty() {
        return Err(TrajectoryError::EmptySet);
    }
    if a != b {
        return Err(TrajectoryError::CaseSetMismatch);
    }
    let mean_a = mean_convergence_radius(focused, k)?;
    let mean_b = mean_convergence_radius(baseline, k)?;
    if mean_b == 0.0 {
        return Err(TrajectoryError::ZeroBaseline);
    }
    Ok((mean_b - mean_a) / mean_b * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityResult {
    pub case_a: String,
    pub case_b: String,
    pub value: f64,
    /// 1-based `(a, b)` index pairs from `(1, 1)` to `(len_a, len_b)`.
    pub path: Vec<(usize, usize)>,
}

/// Local motion magnitude at each point; the first point uses the forward
/// difference.
pub fn local_motion(points: &[[f64; 2]]) -> Vec<f64> {
    let mut m: Vec<f64> = (0..points.len())
        .map(|i| if i == 0 { 0.0 } else { norm(points[i], points[i - 1]) })
        .collect();
    if points.len() >= 2 {
        m[0] = m[1];
    }
    m
}

/// Cost matrix `c[a][b] = |p_a - q_b| / max(m_a + m_b, MOTION_EPS)`.
pub fn pair_costs(a: &[[f64; 2]], b: &[[f64; 2]]) -> Vec<Vec<f64>> {
    let ma = local_motion(a);
    let mb = local_motion(b);
    a.iter()
        .zip(&ma)
        .map(|(pa, ma)| {
            b.iter()
                .zip(&mb)
                .map(|(pb, mb)| norm(*pa, *pb) / (ma + mb).max(MOTION_EPS))
                .collect()
        })
        .collect()
}

/// Minimum-cost monotone alignment over a cost matrix with steps
/// `(1,1)`, `(1,0)`, `(0,1)`. Returns the cost and the 1-based path. On equal
/// accumulated costs the backtrack prefers the diagonal, then advancing `a`
/// alone, then advancing `b` alone.
pub fn dtw(costs: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let n = costs.len();
    let m = costs.first().map_or(0, Vec::len);
    assert!(n > 0 && m > 0, "dtw over an empty cost matrix");
    let mut acc = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[i - 1][j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i][j] = prev + costs[i][j];
        }
    }

    let mut path = vec![(n, m)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[i - 1][j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i + 1, j + 1));
    }
    path.reverse();
    (acc[n - 1][m - 1], path)
}

/// Motion-normalised DTW dissimilarity between two trajectories.
pub fn trajectory_dissimilarity(a: &Trajectory, b: &Trajectory) -> Result<DissimilarityResult, TrajectoryError> {
    for t in [a, b] {
        if t.len() < 2 {
            return Err(TrajectoryError::TrajectoryTooShort {
                case_id: t.case_id.clone(),
                len: t.len(),
            });
        }
    }
    let (value, path) = dtw(&pair_costs(&a.xy(), &b.xy()));
    Ok(DissimilarityResult {
        case_a: a.case_id.clone(),
        case_b: b.case_id.clone(),
        value,
        path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarCase {
    pub case_id: String,
    pub value: f64,
}

/// The `k` cases of `projection` least dissimilar to `case_id`, ascending by
/// value with ties broken by case id. Candidates with fewer than two points
/// are skipped.
pub fn top_k_similar(
    projection: &ProjectionResult,
    case_id: &str,
    k: usize,
) -> Result<Vec<SimilarCase>, TrajectoryError> {
    if k == 0 {
        return Err(TrajectoryError::InvalidK);
    }
    let target = build_trajectory(projection, case_id)?;
    let candidates: Vec<Trajectory> = build_all(projection)
        .into_iter()
        .filter(|t| t.case_id != case_id)
        .collect();
    rank_candidates(&target, &candidates, k)
}

/// Ranks precomputed candidate trajectories against `target`.
pub fn rank_candidates(
    target: &Trajectory,
    candidates: &[Trajectory],
    k: usize,
) -> Result<Vec<SimilarCase>, TrajectoryError> {
    let mut scored = Vec::with_capacity(candidates.len());
    for cand in candidates {
        if cand.case_id == target.case_id || cand.len() < 2 {
            continue;
        }
        let d = trajectory_dissimilarity(target, cand)?;
        scored.push(SimilarCase {
            case_id: cand.case_id.clone(),
            value: d.value,
        });
    }
    scored.sort_by(|x, y| x.value.total_cmp(&y.value).then_with(|| x.case_id.cmp(&y.case_id)));
    scored.truncate(k);
    Ok(scored)
}

/// Full symmetric dissimilarity matrix over the trajectories with at least
/// two points. Returns the case ids (row/column order) and the matrix.
pub fn dissimilarity_matrix(trajectories: &[Trajectory]) -> (Vec<String>, Vec<Vec<f64>>) {
    let usable: Vec<&Trajectory> = trajectories.iter().filter(|t| t.len() >= 2).collect();
    let n = usable.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = trajectory_dissimilarity(usable[i], usable[j])
                .expect("lengths checked")
                .value;
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    (usable.iter().map(|t| t.case_id.clone()).collect(), matrix)
}

/// Convergence statistics for every trajectory, keyed by case id.
pub fn convergence_table(trajectories: &[Trajectory], k: usize) -> BTreeMap<String, ConvergenceStats> {
    trajectories
        .iter()
        .map(|t| (t.case_id.clone(), convergence_radius(t, k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{ProjectionMethod, ProjectionSpec};

    fn traj(id: &str, xy: &[[f64; 2]]) -> Trajectory {
        Trajectory::new(id, "pressure", xy)
    }

    fn projection_of(cases: &[(&str, Vec<[f64; 2]>)]) -> ProjectionResult {
        let mut coords = BTreeMap::new();
        for (id, pts) in cases {
            for (t, p) in pts.iter().enumerate() {
                coords.insert(FrameKey::new(*id, t as u32), *p);
            }
        }
        ProjectionResult {
            spec: ProjectionSpec {
                channel: "pressure".into(),
                method: ProjectionMethod::External,
                scope: cases.iter().map(|(id, _)| id.to_string()).collect(),
                external_file: Some("x.csv".into()),
                method_params: Default::default(),
            },
            coords,
            fit_stats: None,
            degenerate: false,
        }
    }

    #[test]
    fn build_orders_by_time() {
        let p = projection_of(&[("a", (0..10).map(|i| [i as f64, 0.0]).collect()), ("b", vec![[5.0, 5.0]])]);
        let t = build_trajectory(&p, "a").unwrap();
        assert_eq!(t.len(), 10);
        assert!(t.points.windows(2).all(|w| w[0].t_index < w[1].t_index));
        assert_eq!(build_trajectory(&p, "b").unwrap().len(), 1);
        assert_eq!(build_trajectory(&p, "zz").unwrap_err(), TrajectoryError::UnknownCase("zz".into()));
    }

    #[test]
    fn radius_examples() {
        let t = traj("a", &[[9.0, 9.0], [0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]]);
        let s = convergence_radius(&t, 5);
        assert_eq!(s.tail_mean, [0.0, 0.0]);
        assert!((s.radius - 1.6).abs() < 1e-12);

        let constant = traj("c", &[[3.0, 4.0]; 7]);
        assert_eq!(convergence_radius(&constant, 5).radius, 0.0);

        let short = traj("s", &[[0.0, 0.0], [3.0, 0.0], [0.0, 0.0]]);
        let s = convergence_radius(&short, 5);
        assert!((s.tail_mean[0] - 1.0).abs() < 1e-15);
        assert!((s.radius - (1.0 + 2.0 + 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn variant_comparison() {
        let a = vec![traj("x", &[[0.0, 0.0], [1.0, 0.0]]), traj("y", &[[0.0, 0.0], [0.0, 3.0]])];
        assert_eq!(compare_embedding_variants(&a, &a, 5).unwrap(), 0.0);
        let half = vec![traj("x", &[[0.0, 0.0], [0.5, 0.0]]), traj("y", &[[0.0, 0.0], [0.0, 1.5]])];
        assert!((compare_embedding_variants(&half, &a, 5).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(compare_embedding_variants(&[], &a, 5).unwrap_err(), TrajectoryError::EmptySet);
        assert_eq!(
            compare_embedding_variants(&a[..1], &a, 5).unwrap_err(),
            TrajectoryError::CaseSetMismatch
        );
    }

    #[test]
    fn identical_trajectories_have_zero_dissimilarity() {
        let a = traj("a", &[[0.0, 0.0], [1.0, 0.5], [1.5, 2.0]]);
        let mut b = a.clone();
        b.case_id = "b".into();
        let d = trajectory_dissimilarity(&a, &b).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.path, [(1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn short_pair_example() {
        let a = traj("a", &[[0.0, 0.0], [1.0, 0.0]]);
        let b = traj("b", &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        // every local motion is 1, so c(a,b) = |p_a - q_b| / 2
        let d = trajectory_dissimilarity(&a, &b).unwrap();
        assert_eq!(d.value, 0.5);
        assert_eq!(d.path, [(1, 1), (2, 2), (2, 3)]);
    }

    #[test]
    fn too_short() {
        let a = traj("a", &[[0.0, 0.0]]);
        let b = traj("b", &[[0.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(
            trajectory_dissimilarity(&a, &b),
            Err(TrajectoryError::TrajectoryTooShort { len: 1, .. })
        ));
    }

    #[test]
    fn stationary_frames_use_floor() {
        let a = traj("a", &[[0.0, 0.0], [0.0, 0.0]]);
        let b = traj("b", &[[1e-12, 0.0], [1e-12, 0.0]]);
        let d = trajectory_dissimilarity(&a, &b).unwrap();
        assert!(d.value.is_finite());
        assert!((d.value - 2e-3).abs() < 1e-12);
    }

    #[test]
    fn backtrack_tie_preference() {
        // All zero costs: the diagonal must win.
        let (v, path) = dtw(&vec![vec![0.0; 3]; 3]);
        assert_eq!(v, 0.0);
        assert_eq!(path, [(1, 1), (2, 2), (3, 3)]);
        // Rectangular zero costs: walking back from the end, diagonal first,
        // then retreat along `a`.
        let (_, path) = dtw(&vec![vec![0.0; 2]; 4]);
        assert_eq!(path, [(1, 1), (2, 1), (3, 1), (4, 2)]);
        let (_, path) = dtw(&vec![vec![0.0; 4]; 2]);
        assert_eq!(path, [(1, 1), (1, 2), (1, 3), (2, 4)]);
    }

    #[test]
    fn top_k_with_duplicate() {
        let base = vec![[0.0, 0.0], [1.0, 0.2], [1.5, 0.9], [1.7, 1.0]];
        let far: Vec<[f64; 2]> = base.iter().map(|p| [p[0] * -3.0 + 10.0, p[1] + 4.0]).collect();
        let p = projection_of(&[("A", base.clone()), ("B", base), ("C", far), ("D", vec![[0.0, 0.0]])]);
        let top = top_k_similar(&p, "A", 2).unwrap();
        assert_eq!(top[0], SimilarCase { case_id: "B".into(), value: 0.0 });
        assert_eq!(top[1].case_id, "C");
        assert!(top[1].value > 0.0);
        // D is too short and A is the target: only two candidates exist
        assert_eq!(top_k_similar(&p, "A", 10).unwrap().len(), 2);
        assert_eq!(top_k_similar(&p, "A", 0).unwrap_err(), TrajectoryError::InvalidK);
        assert!(matches!(top_k_similar(&p, "Q", 3), Err(TrajectoryError::UnknownCase(_))));
    }

    #[test]
    fn matrix_is_symmetric_with_zero_diagonal() {
        let ts = vec![
            traj("a", &[[0.0, 0.0], [1.0, 1.0], [2.0, 1.0]]),
            traj("b", &[[0.0, 1.0], [1.0, 3.0]]),
            traj("c", &[[0.0, 1.0]]),
            traj("d", &[[5.0, 1.0], [4.0, 3.0], [4.0, 4.0], [4.5, 4.0]]),
        ];
        let (ids, m) = dissimilarity_matrix(&ts);
        assert_eq!(ids, ["a", "b", "d"]);
        #[allow(clippy::needless_range_loop)]
        for i in 0..3 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }
}
