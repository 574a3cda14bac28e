//! Linear-chain CRF inference over a `T x K` emission matrix.
//!
//! Transitions are a `(K+2) x (K+2)` matrix whose row `K` holds the start
//! scores and whose column `K+1` holds the stop scores. Entries may be
//! `-inf` to forbid a transition.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CrfError {
    #[error("empty sequence")]
    Empty,
    #[error("non-finite emission score at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("tag {tag} out of range for {labels} labels")]
    TagOutOfRange { tag: usize, labels: usize },
    #[error("gold path has length {gold}, emissions have {steps} steps")]
    LengthMismatch { gold: usize, steps: usize },
    #[error("transition matrix is {rows}x{cols}, expected {expected}x{expected}")]
    BadTransitions { rows: usize, cols: usize, expected: usize },
}

pub fn start(k: usize) -> usize {
    k
}

pub fn stop(k: usize) -> usize {
    k + 1
}

pub(crate) fn logsumexp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check(em: ArrayView2<f64>, trans: ArrayView2<f64>) -> Result<(usize, usize), CrfError> {
    let (t, k) = em.dim();
    if t == 0 {
        return Err(CrfError::Empty);
    }
    if trans.dim() != (k + 2, k + 2) {
        return Err(CrfError::BadTransitions {
            rows: trans.nrows(),
            cols: trans.ncols(),
            expected: k + 2,
        });
    }
    for ((i, j), v) in em.indexed_iter() {
        if !v.is_finite() {
            return Err(CrfError::NonFinite(i, j));
        }
    }
    Ok((t, k))
}

/// Log-space forward scores `alpha[t][k]`: all prefixes ending in `k` at `t`.
fn forward(em: ArrayView2<f64>, trans: ArrayView2<f64>) -> Array2<f64> {
    let (t_len, k) = em.dim();
    let mut alpha = Array2::from_elem((t_len, k), f64::NEG_INFINITY);
    for j in 0..k {
        alpha[[0, j]] = trans[[start(k), j]] + em[[0, j]];
    }
    for t in 1..t_len {
        for j in 0..k {
            alpha[[t, j]] = logsumexp((0..k).map(|i| alpha[[t - 1, i]] + trans[[i, j]])) + em[[t, j]];
        }
    }
    alpha
}

/// Log-space backward scores `beta[t][k]`: all suffixes after `k` at `t`,
/// including the stop transition.
fn backward(em: ArrayView2<f64>, trans: ArrayView2<f64>) -> Array2<f64> {
    let (t_len, k) = em.dim();
    let mut beta = Array2::from_elem((t_len, k), f64::NEG_INFINITY);
    for i in 0..k {
        beta[[t_len - 1, i]] = trans[[i, stop(k)]];
    }
    for t in (0..t_len - 1).rev() {
        for i in 0..k {
            beta[[t, i]] = logsumexp((0..k).map(|j| trans[[i, j]] + em[[t + 1, j]] + beta[[t + 1, j]]));
        }
    }
    beta
}

/// `log sum_paths exp(score(path))`.
pub fn log_partition(em: ArrayView2<f64>, trans: ArrayView2<f64>) -> Result<f64, CrfError> {
    let (t_len, k) = check(em, trans)?;
    let alpha = forward(em, trans);
    Ok(logsumexp((0..k).map(|j| alpha[[t_len - 1, j]] + trans[[j, stop(k)]])))
}

/// Emission plus transition score of one label path, start and stop
/// included.
pub fn path_score(em: ArrayView2<f64>, trans: ArrayView2<f64>, path: &[usize]) -> f64 {
    let k = em.ncols();
    let mut s = 0.0;
    let mut prev = start(k);
    for (t, &y) in path.iter().enumerate() {
        s += trans[[prev, y]] + em[[t, y]];
        prev = y;
    }
    s + trans[[prev, stop(k)]]
}

/// Per-position posterior label probabilities.
pub fn marginals(em: ArrayView2<f64>, trans: ArrayView2<f64>) -> Result<Array2<f64>, CrfError> {
    let (t_len, k) = check(em, trans)?;
    let alpha = forward(em, trans);
    let beta = backward(em, trans);
    let log_z = logsumexp((0..k).map(|j| alpha[[t_len - 1, j]] + trans[[j, stop(k)]]));
    Ok(Array2::from_shape_fn((t_len, k), |(t, j)| (alpha[[t, j]] + beta[[t, j]] - log_z).exp()))
}

#[derive(Debug, Clone)]
pub struct NllOutput {
    pub loss: f64,
    /// d loss / d emissions, `T x K`.
    pub d_emissions: Array2<f64>,
    /// d loss / d transitions, `(K+2) x (K+2)`.
    pub d_transitions: Array2<f64>,
}

/// `log Z - score(gold)` with its gradient: expected minus observed
/// feature counts from forward-backward.
pub fn neg_log_likelihood(
    em: ArrayView2<f64>,
    trans: ArrayView2<f64>,
    gold: &[usize],
) -> Result<NllOutput, CrfError> {
    let (t_len, k) = check(em, trans)?;
    if gold.len() != t_len {
        return Err(CrfError::LengthMismatch {
            gold: gold.len(),
            steps: t_len,
        });
    }
    if let Some(&tag) = gold.iter().find(|&&y| y >= k) {
        return Err(CrfError::TagOutOfRange { tag, labels: k });
    }
    let alpha = forward(em, trans);
    let beta = backward(em, trans);
    let log_z = logsumexp((0..k).map(|j| alpha[[t_len - 1, j]] + trans[[j, stop(k)]]));

    let mut d_em = Array2::from_shape_fn((t_len, k), |(t, j)| (alpha[[t, j]] + beta[[t, j]] - log_z).exp());
    let mut d_tr = Array2::zeros((k + 2, k + 2));
    for j in 0..k {
        d_tr[[start(k), j]] += d_em[[0, j]];
        d_tr[[j, stop(k)]] += d_em[[t_len - 1, j]];
    }
    for t in 0..t_len - 1 {
        for i in 0..k {
            for j in 0..k {
                let lp = alpha[[t, i]] + trans[[i, j]] + em[[t + 1, j]] + beta[[t + 1, j]] - log_z;
                d_tr[[i, j]] += lp.exp();
            }
        }
    }

    let mut prev = start(k);
    for (t, &y) in gold.iter().enumerate() {
        d_em[[t, y]] -= 1.0;
        d_tr[[prev, y]] -= 1.0;
        prev = y;
    }
    d_tr[[prev, stop(k)]] -= 1.0;

    Ok(NllOutput {
        loss: log_z - path_score(em, trans, gold),
        d_emissions: d_em,
        d_transitions: d_tr,
    })
}

/// Best label path and its score. Ties go to the lowest label index, both
/// at each back-pointer and at the final step.
pub fn viterbi(em: ArrayView2<f64>, trans: ArrayView2<f64>) -> Result<(Vec<usize>, f64), CrfError> {
    let (t_len, k) = check(em, trans)?;
    let mut delta = Array2::from_elem((t_len, k), f64::NEG_INFINITY);
    let mut back = Array2::<usize>::zeros((t_len, k));
    for j in 0..k {
        delta[[0, j]] = trans[[start(k), j]] + em[[0, j]];
    }
    for t in 1..t_len {
        for j in 0..k {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for i in 0..k {
                let s = delta[[t - 1, i]] + trans[[i, j]];
                if s > best_score {
                    best_score = s;
                    best = i;
                }
            }
            delta[[t, j]] = best_score + em[[t, j]];
            back[[t, j]] = best;
        }
    }
    let mut last = 0;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..k {
        let s = delta[[t_len - 1, j]] + trans[[j, stop(k)]];
        if s > best_score {
            best_score = s;
            last = j;
        }
    }
    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    Ok((path, best_score))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// All `k^t` label paths in lexicographic order.
    pub fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..t {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..k).map(move |y| {
                        let mut q = p.clone();
                        q.push(y);
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// Independent path scorer: sums the pieces directly from the matrices.
    pub fn brute_score(em: &Array2<f64>, tr: &Array2<f64>, path: &[usize]) -> f64 {
        let k = em.ncols();
        let mut s = tr[[k, path[0]]] + tr[[*path.last().unwrap(), k + 1]];
        for t in 0..path.len() {
            s += em[[t, path[t]]];
            if t > 0 {
                s += tr[[path[t - 1], path[t]]];
            }
        }
        s
    }

    pub fn random_instance(rng: &mut ChaCha8Rng, t: usize, k: usize, scale: f64) -> (Array2<f64>, Array2<f64>) {
        let em = Array2::from_shape_fn((t, k), |_| rng.random_range(-scale..scale));
        let tr = Array2::from_shape_fn((k + 2, k + 2), |_| rng.random_range(-scale..scale));
        (em, tr)
    }

    #[test]
    fn single_step_two_labels_zero_scores() {
        let em = Array2::zeros((1, 2));
        let tr = Array2::zeros((4, 4));
        assert!((log_partition(em.view(), tr.view()).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_exhaustive_logsumexp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (em, tr) = random_instance(&mut rng, 4, 3, 2.0);
        let brute = logsumexp(all_paths(4, 3).iter().map(|p| brute_score(&em, &tr, p)));
        assert_eq!(all_paths(4, 3).len(), 81);
        assert!((log_partition(em.view(), tr.view()).unwrap() - brute).abs() < 1e-8);
    }

    #[test]
    fn single_allowed_path_gives_its_score() {
        let k = 3;
        let path = [2, 0, 1];
        let mut tr = Array2::from_elem((k + 2, k + 2), f64::NEG_INFINITY);
        tr[[start(k), 2]] = 0.5;
        tr[[2, 0]] = -1.0;
        tr[[0, 1]] = 0.25;
        tr[[1, stop(k)]] = 2.0;
        let em = Array2::from_shape_fn((3, k), |(t, j)| (t * 3 + j) as f64 * 0.1);
        let z = log_partition(em.view(), tr.view()).unwrap();
        assert!((z - brute_score(&em, &tr, &path)).abs() < 1e-12);
        assert_eq!(viterbi(em.view(), tr.view()).unwrap().0, path.to_vec());
    }

    #[test]
    fn uniform_scores_loss_is_two_log_three() {
        let em = Array2::zeros((2, 3));
        let tr = Array2::zeros((5, 5));
        let out = neg_log_likelihood(em.view(), tr.view(), &[0, 2]).unwrap();
        assert!((out.loss - 2.0 * 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn confident_gold_has_near_zero_loss() {
        let mut em = Array2::zeros((3, 3));
        for (t, y) in [1usize, 2, 0].iter().enumerate() {
            em[[t, *y]] = 40.0;
        }
        let tr = Array2::zeros((5, 5));
        let out = neg_log_likelihood(em.view(), tr.view(), &[1, 2, 0]).unwrap();
        assert!(out.loss >= 0.0 && out.loss < 1e-15, "{}", out.loss);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..10 {
            let t = rng.random_range(1..=6);
            let (em, tr) = random_instance(&mut rng, t, 3, 1.5);
            let gold: Vec<usize> = (0..t).map(|_| rng.random_range(0..3)).collect();
            let out = neg_log_likelihood(em.view(), tr.view(), &gold).unwrap();
            let loss = |em: &Array2<f64>, tr: &Array2<f64>| neg_log_likelihood(em.view(), tr.view(), &gold).unwrap().loss;
            for idx in ndarray::indices(em.dim()) {
                let (mut p, mut m) = (em.clone(), em.clone());
                p[idx] += h;
                m[idx] -= h;
                let fd = (loss(&p, &tr) - loss(&m, &tr)) / (2.0 * h);
                let a = out.d_emissions[idx];
                assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-5) < 1e-4, "{a} vs {fd}");
            }
            for idx in ndarray::indices(tr.dim()) {
                let (mut p, mut m) = (tr.clone(), tr.clone());
                p[idx] += h;
                m[idx] -= h;
                let fd = (loss(&em, &p) - loss(&em, &m)) / (2.0 * h);
                let a = out.d_transitions[idx];
                assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-5) < 1e-4, "{a} vs {fd}");
            }
        }
    }

    #[test]
    fn marginals_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 1..=6 {
            let (em, tr) = random_instance(&mut rng, t, 5, 3.0);
            let m = marginals(em.view(), tr.view()).unwrap();
            for row in m.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn viterbi_single_step_and_one_hot() {
        let em = ndarray::array![[0.1, 0.3, 0.2]];
        let mut tr = Array2::zeros((5, 5));
        tr[[start(3), 2]] = 0.5;
        assert_eq!(viterbi(em.view(), tr.view()).unwrap().0, vec![2]);
        tr[[2, stop(3)]] = -1.0;
        assert_eq!(viterbi(em.view(), tr.view()).unwrap().0, vec![1]);

        let path = [0usize, 2, 2, 1];
        let em = Array2::from_shape_fn((4, 3), |(t, j)| if path[t] == j { 1.0 } else { 0.0 });
        let tr = Array2::zeros((5, 5));
        let (p, score) = viterbi(em.view(), tr.view()).unwrap();
        assert_eq!(p, path.to_vec());
        assert_eq!(score, path_score(em.view(), tr.view(), &p));
    }

    #[test]
    fn viterbi_matches_exhaustive_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let t = rng.random_range(1..=6);
            let (em, tr) = random_instance(&mut rng, t, 3, 2.0);
            let paths = all_paths(t, 3);
            // first maximum in lexicographic order
            let mut best = &paths[0];
            for p in &paths {
                if brute_score(&em, &tr, p) > brute_score(&em, &tr, best) {
                    best = p;
                }
            }
            let (v, score) = viterbi(em.view(), tr.view()).unwrap();
            assert_eq!(&v, best);
            assert_eq!(score, path_score(em.view(), tr.view(), &v));
        }
    }

    #[test]
    fn ties_go_to_lowest_label() {
        let em = Array2::zeros((3, 3));
        let tr = Array2::zeros((5, 5));
        assert_eq!(viterbi(em.view(), tr.view()).unwrap().0, vec![0, 0, 0]);
    }

    #[test]
    fn partition_bounds_every_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (em, tr) = random_instance(&mut rng, 3, 3, 2.0);
        let z = log_partition(em.view(), tr.view()).unwrap();
        for p in all_paths(3, 3) {
            assert!(z > brute_score(&em, &tr, &p));
        }
    }

    #[test]
    fn errors() {
        let tr = Array2::zeros((5, 5));
        assert_eq!(log_partition(Array2::zeros((0, 3)).view(), tr.view()), Err(CrfError::Empty));
        let mut em = Array2::zeros((2, 3));
        em[[1, 2]] = f64::NAN;
        assert_eq!(log_partition(em.view(), tr.view()), Err(CrfError::NonFinite(1, 2)));
        let em = Array2::zeros((2, 3));
        assert_eq!(
            neg_log_likelihood(em.view(), tr.view(), &[0, 3]).unwrap_err(),
            CrfError::TagOutOfRange { tag: 3, labels: 3 }
        );
    }
}
