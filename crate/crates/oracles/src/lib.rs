//! Slow, obviously-correct reference implementations.
//!
//! Nothing here depends on `tfv-core`; inputs are plain slices so the checks
//! stay independent of the code paths they verify.

#![allow(clippy::needless_range_loop)]

pub type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

// ---------------------------------------------------------------------------
// Trajectory dissimilarity
// ---------------------------------------------------------------------------

/// Motion magnitude of point `i`; the first point borrows the forward step.
pub fn motion(points: &[Point], i: usize) -> f64 {
    if i == 0 {
        dist(points[1], points[0])
    } else {
        dist(points[i], points[i - 1])
    }
}

/// Normalised cost of aligning `a[i]` with `b[j]` (0-based).
pub fn pair_cost(a: &[Point], b: &[Point], i: usize, j: usize) -> f64 {
    let denom = motion(a, i) + motion(b, j);
    dist(a[i], b[j]) / if denom > 1e-9 { denom } else { 1e-9 }
}

/// Sum of pair costs along a 1-based path, accumulated from the start.
pub fn path_cost(a: &[Point], b: &[Point], path: &[(usize, usize)]) -> f64 {
    path.iter().fold(0.0, |acc, &(i, j)| acc + pair_cost(a, b, i - 1, j - 1))
}

/// Every monotone path from `(1,1)` to `(n,m)` with unit steps.
pub fn all_paths(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(i: usize, j: usize, n: usize, m: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        cur.push((i, j));
        if i == n && j == m {
            out.push(cur.clone());
        } else {
            if i < n && j < m {
                walk(i + 1, j + 1, n, m, cur, out);
            }
            if i < n {
                walk(i + 1, j, n, m, cur, out);
            }
            if j < m {
                walk(i, j + 1, n, m, cur, out);
            }
        }
        cur.pop();
    }
    let mut out = Vec::new();
    walk(1, 1, n, m, &mut Vec::new(), &mut out);
    out
}

/// Minimum path cost by exhaustive enumeration. Only practical for short
/// trajectories (lengths up to ~7).
pub fn dtw_exhaustive(a: &[Point], b: &[Point]) -> f64 {
    all_paths(a.len(), b.len())
        .iter()
        .map(|p| path_cost(a, b, p))
        .fold(f64::INFINITY, f64::min)
}

/// Minimum path cost by memoised recursion from the end cell, for lengths
/// where enumeration is infeasible.
pub fn dtw_recursive(a: &[Point], b: &[Point]) -> f64 {
    fn best(i: usize, j: usize, a: &[Point], b: &[Point], memo: &mut Vec<Vec<Option<f64>>>) -> f64 {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let prev = if i == 0 && j == 0 {
            0.0
        } else {
            let mut p = f64::INFINITY;
            if i > 0 && j > 0 {
                p = p.min(best(i - 1, j - 1, a, b, memo));
            }
            if i > 0 {
                p = p.min(best(i - 1, j, a, b, memo));
            }
            if j > 0 {
                p = p.min(best(i, j - 1, a, b, memo));
            }
            p
        };
        let v = prev + pair_cost(a, b, i, j);
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    best(a.len() - 1, b.len() - 1, a, b, &mut memo)
}

/// Mean distance of the last `k` points to their mean.
pub fn tail_radius(points: &[Point], k: usize) -> f64 {
    let start = points.len().saturating_sub(k);
    let tail = &points[start..];
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = tail.iter().map(|p| p[1]).sum::<f64>() / n;
    tail.iter().map(|p| dist(*p, [mx, my])).sum::<f64>() / n
}

// ---------------------------------------------------------------------------
// DBSCAN
// ---------------------------------------------------------------------------

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Textbook DBSCAN via connected components of core points.
///
/// A point is core when its closed eps-ball (itself included) holds at least
/// `min_samples` points. Clusters are the connected components of the
/// core-adjacency graph, numbered by their smallest core index. A non-core
/// point within eps of some core joins the lowest-numbered such cluster;
/// otherwise it is noise (-1).
pub fn dbscan_textbook(points: &[Point], eps: f64, min_samples: usize) -> Vec<i32> {
    let n = points.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| dist(points[i], points[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|row| row.iter().filter(|b| **b).count() >= min_samples).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] && adj[i][j] {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    // number components by smallest core index
    let mut component_label = vec![-1i32; n];
    let mut next = 0;
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            if component_label[r] < 0 {
                component_label[r] = next;
                next += 1;
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                component_label[find(&mut parent, i)]
            } else {
                (0..n)
                    .filter(|&j| core[j] && adj[i][j])
                    .map(|j| component_label[find(&mut parent, j)])
                    .min()
                    .unwrap_or(-1)
            }
        })
        .collect()
}

/// Groups indices by label, ignoring noise; each group sorted, groups sorted.
pub fn partition(labels: &[i32]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut groups: std::collections::BTreeMap<i32, Vec<usize>> = Default::default();
    let mut noise = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if *l < 0 {
            noise.push(i);
        } else {
            groups.entry(*l).or_default().push(i);
        }
    }
    let mut g: Vec<Vec<usize>> = groups.into_values().collect();
    g.sort();
    (g, noise)
}

// ---------------------------------------------------------------------------
// Centroids
// ---------------------------------------------------------------------------

/// Index (into `members`, assumed in tie-break order) of the point closest
/// to the members' mean. Computes every distance, then keeps the first
/// minimum.
pub fn centroid_argmin(members: &[Point]) -> usize {
    let n = members.len() as f64;
    let mean = [
        members.iter().fold(0.0, |s, p| s + p[0]) / n,
        members.iter().fold(0.0, |s, p| s + p[1]) / n,
    ];
    let d: Vec<f64> = members.iter().map(|p| dist(*p, mean)).collect();
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    d.iter().position(|v| *v == min).expect("non-empty")
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors (as columns of the returned row-major
/// matrix `v[row][col]`).
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub struct PcaOracle {
    pub eigenvalues: [f64; 2],
    pub components: [Vec<f64>; 2],
    pub coords: Vec<Point>,
}

/// PCA by explicit covariance (denominator n-1) and Jacobi rotation, with
/// the largest-magnitude-entry-positive sign rule.
pub fn pca_oracle(rows: &[Vec<f64>]) -> PcaOracle {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| centered.iter().map(|r| r[i] * r[j]).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect();
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| vals[y].partial_cmp(&vals[x]).unwrap());
    let column = |c: usize| -> Vec<f64> {
        let mut col: Vec<f64> = (0..d).map(|r| vecs[r][c]).collect();
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        col.iter_mut().for_each(|x| *x /= norm);
        let mut big = 0;
        for i in 1..d {
            if col[i].abs() > col[big].abs() {
                big = i;
            }
        }
        if col[big] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        col
    };
    let c0 = column(order[0]);
    let c1 = column(order[1]);
    let coords = centered
        .iter()
        .map(|r| {
            [
                r.iter().zip(&c0).map(|(a, b)| a * b).sum(),
                r.iter().zip(&c1).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect();
    PcaOracle {
        eigenvalues: [vals[order[0]], vals[order[1]]],
        components: [c0, c1],
        coords,
    }
}
