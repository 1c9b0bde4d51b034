//! Independent f64 references for gradients and k-means optima.

use rand::Rng;

use weightpress::model::{backward, init_network, Matrix, Network};
use weightpress::quant::{centroid_gradients, kmeans, materialize, quantize_values, Codebook, IndexAssignment, QuantConfig};

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Parameters of one layer in f64.
#[derive(Clone)]
pub struct Params {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

pub fn params_of(net: &Network) -> Vec<Params> {
    net.layers()
        .iter()
        .map(|l| Params {
            w: (0..l.out_dim()).map(|r| l.weights.row(r).iter().map(|v| *v as f64).collect()).collect(),
            b: l.bias.iter().map(|v| *v as f64).collect(),
        })
        .collect()
}

/// Hidden pre-activations per sample, used to keep finite differences away from ReLU kinks.
pub fn hidden_preactivations(params: &[Params], x: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for sample in x {
        let mut a = sample.clone();
        for p in &params[..params.len() - 1] {
            let z: Vec<f64> = p.w.iter().zip(&p.b).map(|(row, b)| row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b).collect();
            out.extend(&z);
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    out
}

/// Mean softmax cross-entropy of a ReLU network with a softmax output.
pub fn loss(params: &[Params], x: &[Vec<f64>], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (sample, &label) in x.iter().zip(labels) {
        let mut a = sample.clone();
        for (i, p) in params.iter().enumerate() {
            let z: Vec<f64> = p.w.iter().zip(&p.b).map(|(row, b)| row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b).collect();
            a = if i + 1 < params.len() { z.into_iter().map(|v| v.max(0.0)).collect() } else { z };
        }
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = a.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - a[label as usize];
    }
    total / x.len() as f64
}

/// Relative error with the denominator floored at a thousandth of the largest reference
/// magnitude, so entries that are zero up to rounding do not dominate.
pub fn relative_errors(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / r.abs().max(a.abs()).max(1e-3 * scale).max(1e-12))
        .fold(0.0, f64::max)
}

pub struct ToyProblem {
    pub net: Network,
    pub x: Matrix,
    pub x64: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

/// Toy network and batch with every hidden pre-activation at least `margin` from zero.
pub fn toy_problem(rng: &mut impl Rng, dims: &[usize], batch: usize, margin: f64) -> ToyProblem {
    loop {
        let net = init_network(dims, rng.random()).unwrap();
        let mut net = net;
        for i in 0..net.layers().len() {
            let b = (0..net.layer(i).out_dim()).map(|_| rng.random_range(-0.2..0.2)).collect();
            net.set_bias(i, b).unwrap();
        }
        let data: Vec<f32> = (0..batch * dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(batch, dims[0], data).unwrap();
        let x64: Vec<Vec<f64>> = (0..batch).map(|r| x.row(r).iter().map(|v| *v as f64).collect()).collect();
        let labels: Vec<u8> = (0..batch).map(|_| rng.random_range(0..*dims.last().unwrap() as u8)).collect();
        if hidden_preactivations(&params_of(&net), &x64).iter().all(|z| z.abs() >= margin) {
            return ToyProblem { net, x, x64, labels };
        }
    }
}

/// Worst relative error of backprop weight and bias gradients against central differences.
pub fn backprop_gradient_error(problem: &ToyProblem) -> f64 {
    let (grads, _) = backward(&problem.net, &problem.x, &problem.labels).unwrap();
    let base = params_of(&problem.net);
    let mut analytic = Vec::new();
    let mut reference = Vec::new();
    for l in 0..base.len() {
        for r in 0..base[l].w.len() {
            for c in 0..base[l].w[r].len() {
                let mut p = base.clone();
                p[l].w[r][c] += FD_STEP;
                let up = loss(&p, &problem.x64, &problem.labels);
                p[l].w[r][c] -= 2.0 * FD_STEP;
                let down = loss(&p, &problem.x64, &problem.labels);
                reference.push((up - down) / (2.0 * FD_STEP));
                analytic.push(grads.weights[l].get(r, c) as f64);
            }
        }
        for r in 0..base[l].b.len() {
            let mut p = base.clone();
            p[l].b[r] += FD_STEP;
            let up = loss(&p, &problem.x64, &problem.labels);
            p[l].b[r] -= 2.0 * FD_STEP;
            let down = loss(&p, &problem.x64, &problem.labels);
            reference.push((up - down) / (2.0 * FD_STEP));
            analytic.push(grads.biases[l][r] as f64);
        }
    }
    relative_errors(&analytic, &reference)
}

/// Worst relative error of the grouped centroid gradients against central differences of
/// the loss with respect to each shared centroid.
pub fn centroid_gradient_error(rng: &mut impl Rng, problem: &ToyProblem, k: usize) -> f64 {
    let (net, books, assignments, masks) = loop {
        let mut net = problem.net.clone();
        let mut books = Vec::new();
        let mut assignments = Vec::new();
        let mut masks = Vec::new();
        for l in 0..net.layers().len() {
            let (r, c) = net.layer(l).weights.shape();
            let mask = Matrix::from_vec(r, c, (0..r * c).map(|_| if rng.random_bool(0.7) { 1.0 } else { 0.0 }).collect()).unwrap();
            let survivors = mask.count_nonzero();
            let book = Codebook::new((0..k).map(|i| (i as f32 - k as f32 / 2.0) * 0.15 + rng.random_range(-0.02..0.02)).collect()).unwrap();
            let idx = IndexAssignment::new((0..survivors).map(|_| rng.random_range(0..k) as u16).collect(), k).unwrap();
            net.set_weights(l, materialize(&book, &idx, &mask).unwrap()).unwrap();
            books.push(book);
            assignments.push(idx);
            masks.push(mask);
        }
        // a centroid step moves many weights at once, so the margin must hold for the shared net
        if hidden_preactivations(&params_of(&net), &problem.x64).iter().all(|z| z.abs() >= 0.05) {
            break (net, books, assignments, masks);
        }
    };
    let (grads, _) = backward(&net, &problem.x, &problem.labels).unwrap();
    let base = params_of(&net);
    let mut analytic = Vec::new();
    let mut reference = Vec::new();
    for l in 0..base.len() {
        let cg = centroid_gradients(&grads.weights[l], &assignments[l], &masks[l], k).unwrap();
        for j in 0..k {
            let shifted = |delta: f64| {
                let mut p = base.clone();
                let mut next = assignments[l].indices().iter();
                for (pos, m) in masks[l].as_slice().iter().enumerate() {
                    if *m != 0.0 {
                        let a = *next.next().unwrap() as usize;
                        let cols = p[l].w[0].len();
                        p[l].w[pos / cols][pos % cols] = books[l].centroids()[a] as f64 + if a == j { delta } else { 0.0 };
                    }
                }
                loss(&p, &problem.x64, &problem.labels)
            };
            reference.push((shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP));
            analytic.push(cg[j] as f64);
        }
    }
    relative_errors(&analytic, &reference)
}

fn wcss_of(values: &[f64], groups: &[usize], k: usize) -> f64 {
    (0..k)
        .map(|g| {
            let members: Vec<f64> = values.iter().zip(groups).filter(|(_, x)| **x == g).map(|(v, _)| *v).collect();
            if members.is_empty() {
                return 0.0;
            }
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            members.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        })
        .sum()
}

/// Minimum two-cluster WCSS over every split of the points.
pub fn brute_force_two_means(values: &[f64]) -> f64 {
    let n = values.len();
    (0..1usize << n)
        .map(|bits| {
            let groups: Vec<usize> = (0..n).map(|i| bits >> i & 1).collect();
            wcss_of(values, &groups, 2)
        })
        .fold(f64::INFINITY, f64::min)
}

/// True when moving any single point to the other cluster (means recomputed) cannot lower WCSS.
pub fn is_local_optimum(values: &[f64], groups: &[usize]) -> bool {
    let here = wcss_of(values, groups, 2);
    (0..values.len()).all(|i| {
        let mut g = groups.to_vec();
        g[i] = 1 - g[i];
        wcss_of(values, &g, 2) >= here - 1e-9
    })
}

/// Lloyd fixed point: every centroid of a nonempty cluster is its members' mean and every
/// point is at least as close to its own centroid as to any other.
pub fn is_lloyd_fixed_point(values: &[f64], centroids: &[f32], assignment: &[u16]) -> bool {
    let means_ok = (0..centroids.len()).all(|c| {
        let members: Vec<f64> = values.iter().zip(assignment).filter(|(_, a)| **a as usize == c).map(|(v, _)| *v).collect();
        members.is_empty() || {
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            (mean - centroids[c] as f64).abs() <= 1e-6
        }
    });
    let nearest_ok = values.iter().zip(assignment).all(|(v, a)| {
        let d = |c: f32| (v - c as f64).abs();
        centroids.iter().all(|c| d(centroids[*a as usize]) <= d(*c))
    });
    means_ok && nearest_ok
}

/// Checks every multiset of 4 points drawn from a 9-value grid with k = 2:
/// the best Lloyd run over all distinct-pair initializations equals the brute-force
/// optimum, every run is monotone and ends at a Lloyd fixed point, and the production
/// quantizer never beats the optimum. Returns the number of instances checked.
pub fn kmeans_brute_force_suite() -> Result<usize, String> {
    let grid: Vec<f32> = (0..9).map(|i| i as f32 * 0.25 - 1.0).collect();
    let mut checked = 0;
    let n = grid.len();
    for a in 0..n {
        for b in a..n {
            for c in b..n {
                for d in c..n {
                    let pts = [grid[a], grid[b], grid[c], grid[d]];
                    let pts64: Vec<f64> = pts.iter().map(|v| *v as f64).collect();
                    let optimum = brute_force_two_means(&pts64);
                    let mut distinct = pts.to_vec();
                    distinct.dedup();
                    let mut best = f64::INFINITY;
                    if distinct.len() == 1 {
                        best = 0.0;
                    }
                    for i in 0..distinct.len() {
                        for j in i + 1..distinct.len() {
                            let r = kmeans(&pts, &[distinct[i], distinct[j]], 100, 0.0).map_err(|e| e.to_string())?;
                            if r.history.windows(2).any(|w| w[1] > w[0] + 1e-12) {
                                return Err(format!("{pts:?}: WCSS increased {:?}", r.history));
                            }
                            if !is_lloyd_fixed_point(&pts64, &r.centroids, &r.assignment) {
                                return Err(format!("{pts:?}: run from {:?} is not a Lloyd fixed point", (distinct[i], distinct[j])));
                            }
                            best = best.min(r.wcss);
                        }
                    }
                    if (best - optimum).abs() > 1e-9 {
                        return Err(format!("{pts:?}: best Lloyd WCSS {best} vs optimum {optimum}"));
                    }
                    let q = quantize_values(&pts, &QuantConfig { bits: 1, ..QuantConfig::default() }).map_err(|e| e.to_string())?;
                    if q.wcss < optimum - 1e-9 {
                        return Err(format!("{pts:?}: quantizer WCSS {} below optimum {optimum}", q.wcss));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}

/// Lloyd WCSS histories never increase on random instances.
pub fn lloyd_monotone_suite(rng: &mut impl Rng, cases: usize) -> Result<(), String> {
    use weightpress::quant::{init_centroids, InitMethod};
    for case in 0..cases {
        let n = rng.random_range(2..400);
        let values: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0).powi(3)).collect();
        let k = rng.random_range(1..=32);
        let init = InitMethod::ALL[case % 3];
        let start = init_centroids(&values, k, init, rng.random()).map_err(|e| e.to_string())?;
        let r = kmeans(&values, &start.centroids, 100, 0.0).map_err(|e| e.to_string())?;
        if let Some(w) = r.history.windows(2).find(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-15) {
            return Err(format!("case {case}: WCSS rose from {} to {}", w[0], w[1]));
        }
    }
    Ok(())
}
