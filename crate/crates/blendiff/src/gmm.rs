//! Gaussian mixture fitting: k-means++ seeding and EM with
//! ridge-regularized full covariances.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Rng;
use crate::tensor::Tensor;

const COV_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Tensor,
}

/// Gaussian or GMM statistics over latent features.
#[derive(Debug, Clone)]
pub struct LatentGaussianSet {
    pub components: Vec<GaussianComponent>,
}

impl LatentGaussianSet {
    pub fn single(component: GaussianComponent) -> Self {
        LatentGaussianSet {
            components: vec![component],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Degenerate(format!(
                "component weights sum to {total}"
            )));
        }
        for c in &self.components {
            let asym = linalg::max_asymmetry(&c.cov);
            if asym > 1e-8 {
                return Err(Error::NotSymmetric(asym));
            }
        }
        Ok(())
    }
}

/// Sample mean and (n-1)-normalized covariance of row vectors.
pub fn single_gaussian(data: &Tensor) -> Result<GaussianComponent> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 samples for a covariance, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            mean[c] += data.at(r, c);
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = Tensor::zeros(vec![d, d]);
    for r in 0..n {
        for i in 0..d {
            let di = data.at(r, i) - mean[i];
            for j in 0..d {
                let dj = data.at(r, j) - mean[j];
                let v = cov.at(i, j) + di * dj / (n - 1) as f64;
                cov.set(i, j, v);
            }
        }
    }
    Ok(GaussianComponent {
        weight: 1.0,
        mean,
        cov,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, the rest proportional to
/// the squared distance to the nearest chosen center.
fn kmeans_pp_init(data: &Tensor, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = data.rows();
    let mut centers: Vec<Vec<f64>> = vec![data.row(rng.below(n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|r| sq_dist(data.row(r), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 1e-300 {
            rng.below(n)
        } else {
            let mut target = rng.uniform() * total;
            let mut chosen = n - 1;
            for (r, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = r;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.push(data.row(idx).to_vec());
        for r in 0..n {
            d2[r] = d2[r].min(sq_dist(data.row(r), centers.last().unwrap()));
        }
    }
    centers
}

struct Precision {
    chol: Tensor,
    log_det: f64,
}

fn precision(cov: &Tensor) -> Result<Precision> {
    let d = cov.rows();
    let mut c = cov.clone();
    for i in 0..d {
        let v = c.at(i, i) + COV_RIDGE;
        c.set(i, i, v);
    }
    let chol = linalg::cholesky(&c)?;
    let log_det = linalg::log_det_from_cholesky(&chol);
    Ok(Precision { chol, log_det })
}

fn log_gaussian(x: &[f64], mean: &[f64], p: &Precision) -> f64 {
    let d = x.len();
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let sol = linalg::cholesky_solve(&p.chol, &diff);
    let maha: f64 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum();
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + p.log_det + maha)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// EM fit with `restarts` k-means++ initializations; the run with the
/// best log-likelihood wins. The per-iteration log-likelihood is
/// non-decreasing up to the covariance ridge.
pub fn fit_gmm(
    data: &Tensor,
    k: usize,
    rng: &mut Rng,
    restarts: usize,
) -> Result<LatentGaussianSet> {
    let fitted = fit_gmm_traced(data, k, rng, restarts)?;
    Ok(fitted.0)
}

/// Like [`fit_gmm`] but also returns the winning run's log-likelihood
/// trace.
pub fn fit_gmm_traced(
    data: &Tensor,
    k: usize,
    rng: &mut Rng,
    restarts: usize,
) -> Result<(LatentGaussianSet, Vec<f64>)> {
    let n = data.rows();
    if k == 0 || n < k {
        return Err(Error::Degenerate(format!(
            "cannot fit {k} components to {n} samples"
        )));
    }
    let mut best: Option<(f64, LatentGaussianSet, Vec<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let (set, trace) = em_single(data, k, rng)?;
        let ll = *trace.last().unwrap();
        if best.as_ref().map_or(true, |(b, _, _)| ll > *b) {
            best = Some((ll, set, trace));
        }
    }
    let (_, set, trace) = best.unwrap();
    Ok((set, trace))
}

fn em_single(data: &Tensor, k: usize, rng: &mut Rng) -> Result<(LatentGaussianSet, Vec<f64>)> {
    let (n, d) = (data.rows(), data.cols());
    let centers = kmeans_pp_init(data, k, rng);

    // initial covariance: pooled data covariance (or identity fallback)
    let pooled = single_gaussian(data)
        .map(|g| g.cov)
        .unwrap_or_else(|_| Tensor::identity(d));
    let mut comps: Vec<GaussianComponent> = centers
        .into_iter()
        .map(|mean| GaussianComponent {
            weight: 1.0 / k as f64,
            mean,
            cov: pooled.clone(),
        })
        .collect();

    let mut trace = Vec::new();
    let max_iter = 200;
    let mut resp = Tensor::zeros(vec![n, k]);
    for _iter in 0..max_iter {
        // E-step
        let precisions: Vec<Precision> = comps
            .iter()
            .map(|c| precision(&c.cov))
            .collect::<Result<_>>()?;
        let mut ll = 0.0;
        for r in 0..n {
            let logs: Vec<f64> = (0..k)
                .map(|j| {
                    comps[j].weight.max(1e-300).ln()
                        + log_gaussian(data.row(r), &comps[j].mean, &precisions[j])
                })
                .collect();
            let lse = log_sum_exp(&logs);
            ll += lse;
            for j in 0..k {
                resp.set(r, j, (logs[j] - lse).exp());
            }
        }
        trace.push(ll);

        // M-step
        for (j, comp) in comps.iter_mut().enumerate() {
            let nj: f64 = (0..n).map(|r| resp.at(r, j)).sum();
            let nj_safe = nj.max(1e-12);
            comp.weight = nj / n as f64;
            let mut mean = vec![0.0; d];
            for r in 0..n {
                let w = resp.at(r, j);
                for c in 0..d {
                    mean[c] += w * data.at(r, c);
                }
            }
            for m in mean.iter_mut() {
                *m /= nj_safe;
            }
            let mut cov = Tensor::zeros(vec![d, d]);
            for r in 0..n {
                let w = resp.at(r, j);
                if w == 0.0 {
                    continue;
                }
                for a in 0..d {
                    let da = data.at(r, a) - mean[a];
                    for b in 0..d {
                        let db = data.at(r, b) - mean[b];
                        let v = cov.at(a, b) + w * da * db / nj_safe;
                        cov.set(a, b, v);
                    }
                }
            }
            for a in 0..d {
                let v = cov.at(a, a) + COV_RIDGE;
                cov.set(a, a, v);
            }
            comp.mean = mean;
            comp.cov = cov;
        }

        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            let cur = trace[trace.len() - 1];
            if (cur - prev).abs() <= 1e-9 * (1.0 + cur.abs()) {
                break;
            }
        }
    }
    let set = LatentGaussianSet { components: comps };
    set.validate()?;
    Ok((set, trace))
}
