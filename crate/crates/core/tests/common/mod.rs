//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use h2oflow::affordance::HoiSampleSet;
use h2oflow::geometry::VoxelGridSpec;

type P = [f64; 3];

fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: P, b: P) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: P, b: P) -> P {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Plain arrays pulled out of a sample set: human points per sample,
/// flows per sample, object points and per-sample weights (1 when absent).
pub struct Raw {
    pub humans: Vec<Vec<P>>,
    pub flows: Vec<Vec<P>>,
    pub object: Vec<P>,
    pub weights: Vec<Vec<Vec<f64>>>,
}

impl Raw {
    pub fn from_set(set: &HoiSampleSet, use_weights: bool) -> Self {
        let nh = set.h0.len();
        let no = set.object.len();
        let k = set.flows.len();
        let humans: Vec<Vec<P>> = (0..k)
            .map(|s| {
                (0..nh)
                    .map(|i| {
                        let h = set.h0.points()[i];
                        let f = set.flows[s].vectors()[i];
                        [h.x + f.x, h.y + f.y, h.z + f.z]
                    })
                    .collect()
            })
            .collect();
        let flows = (0..k)
            .map(|s| set.flows[s].vectors().iter().map(|f| [f.x, f.y, f.z]).collect())
            .collect();
        let object = set.object.points().iter().map(|o| [o.x, o.y, o.z]).collect();
        let weights = (0..k)
            .map(|s| {
                (0..nh)
                    .map(|i| {
                        (0..no)
                            .map(|j| match (&set.weights, use_weights) {
                                (Some(w), true) => w[s].data()[i * no + j],
                                _ => 1.0,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Raw {
            humans,
            flows,
            object,
            weights,
        }
    }
}

/// `C_ij = (1/K) sum_k w exp(-|h - o|) / tau`, row-major.
pub fn contact(raw: &Raw, tau: f64) -> Vec<f64> {
    let k = raw.humans.len();
    let nh = raw.humans[0].len();
    let mut out = Vec::new();
    for i in 0..nh {
        for (j, o) in raw.object.iter().enumerate() {
            let mut acc = 0.0;
            for s in 0..k {
                let d = sub(raw.humans[s][i], *o);
                acc += raw.weights[s][i][j] * (-dot(d, d).sqrt()).exp() / tau;
            }
            out.push(acc / k as f64);
        }
    }
    out
}

/// `(H_ij, R_ij)` row-major: kernel-pooled orientation entropy and its
/// weighted, temperature-scaled score.
pub fn orientational(raw: &Raw, bins: &[P], sigma2: f64, tau: f64, min_fraction: f64) -> (Vec<f64>, Vec<f64>) {
    let k = raw.humans.len();
    let nh = raw.humans[0].len();
    let uniform = -(bins.len() as f64).ln();
    let mut hs = Vec::new();
    let mut rs = Vec::new();
    for i in 0..nh {
        for (j, o) in raw.object.iter().enumerate() {
            let mut pooled = vec![0.0; bins.len()];
            let mut valid = 0;
            for s in 0..k {
                let c = cross(sub(raw.humans[s][i], *o), raw.flows[s][i]);
                let n = dot(c, c).sqrt();
                if n < 1e-9 {
                    continue;
                }
                valid += 1;
                let x = [c[0] / n, c[1] / n, c[2] / n];
                let e: Vec<f64> = bins
                    .iter()
                    .map(|b| {
                        let d = sub(x, *b);
                        (-dot(d, d) / (2.0 * sigma2)).exp()
                    })
                    .collect();
                let z: f64 = e.iter().sum();
                for (p, v) in pooled.iter_mut().zip(&e) {
                    *p += v / z;
                }
            }
            let h = if valid == 0 || (valid as f64) < min_fraction * k as f64 {
                uniform
            } else {
                let z: f64 = pooled.iter().sum();
                pooled.iter().map(|p| p / z).filter(|p| *p > 0.0).map(|p| p * p.ln()).sum()
            };
            let w: f64 = (0..k).map(|s| raw.weights[s][i][j]).sum::<f64>() / k as f64;
            hs.push(h);
            rs.push(w * h / tau);
        }
    }
    (hs, rs)
}

/// Per-point occupancy frequencies by scanning every cell's box.
pub fn spatial(raw: &Raw, grid: &VoxelGridSpec) -> Vec<f64> {
    let k = raw.humans.len();
    let nh = raw.humans[0].len();
    let [dx, dy, dz] = grid.dims;
    let cells = dx * dy * dz;
    let o = [grid.origin.x, grid.origin.y, grid.origin.z];
    let mut out = vec![0.0; nh * cells];
    for human in &raw.humans {
        for (i, p) in human.iter().enumerate() {
            'cells: for a in 0..dx {
                for b in 0..dy {
                    for c in 0..dz {
                        let lo = [
                            o[0] + a as f64 * grid.cell_size,
                            o[1] + b as f64 * grid.cell_size,
                            o[2] + c as f64 * grid.cell_size,
                        ];
                        let inside = (0..3).all(|ax| lo[ax] <= p[ax] && p[ax] < lo[ax] + grid.cell_size);
                        if inside {
                            out[i * cells + (a * dy + b) * dz + c] += 1.0 / k as f64;
                            break 'cells;
                        }
                    }
                }
            }
        }
    }
    out
}

/// `|a - b| <= tol * max(|a|, |b|)`, exact equality always accepted.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() / x.abs().max(y.abs()) })
        .fold(0.0, f64::max)
}

/// Lloyd's k-means with two clusters, seeded with the first point and the
/// point farthest from it. Returns the cluster of every point.
pub fn kmeans2(points: &[Vec<f64>]) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let far = (0..points.len())
        .max_by(|&a, &b| dist(&points[0], &points[a]).total_cmp(&dist(&points[0], &points[b])))
        .unwrap();
    let mut centers = vec![points[0].clone(), points[far].clone()];
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let next: Vec<usize> = points
            .iter()
            .map(|p| usize::from(dist(p, &centers[1]) < dist(p, &centers[0])))
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assign
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative gradient error, with `floor` guarding tiny entries.
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
