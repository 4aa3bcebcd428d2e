//! Linear-chain CRF over encoder features.
//!
//! Scores are split into an n×k emission matrix (a linear map of the
//! per-token features) and a (k+2)×(k+2) transition matrix whose last two
//! states are START and STOP. Only `START→y`, `y→y'` and `y→STOP` entries
//! are ever read, so transitions into START or out of STOP never receive
//! gradient.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{glorot, log_sum_exp, param_rng, Graph, NodeId, ParamId, ParamStore, Tensor};

/// Added to forbidden transitions when hard constraints are enabled.
pub const FORBIDDEN: f64 = -1e9;

#[inline]
pub fn start_state(labels: usize) -> usize {
    labels
}

#[inline]
pub fn stop_state(labels: usize) -> usize {
    labels + 1
}

fn check_shapes(emissions: &Tensor, transitions: &Tensor) -> Result<usize> {
    let k = emissions.cols();
    if transitions.shape() != (k + 2, k + 2) {
        return Err(Error::Dimension {
            op: "crf transitions",
            left: emissions.shape(),
            right: transitions.shape(),
        });
    }
    if emissions.rows() == 0 {
        return Err(Error::Usage("CRF requires a non-empty sequence".into()));
    }
    Ok(k)
}

/// Unnormalized log-score of one label path.
pub fn score(emissions: &Tensor, transitions: &Tensor, labels: &[usize]) -> Result<f64> {
    let k = check_shapes(emissions, transitions)?;
    if labels.len() != emissions.rows() {
        return Err(Error::Dimension {
            op: "crf score",
            left: emissions.shape(),
            right: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Usage(format!(
            "label index {bad} out of range for {k} labels"
        )));
    }
    let mut s = transitions.get(start_state(k), labels[0]);
    for (t, &y) in labels.iter().enumerate() {
        s += emissions.get(t, y);
        if t > 0 {
            s += transitions.get(labels[t - 1], y);
        }
    }
    s += transitions.get(labels[labels.len() - 1], stop_state(k));
    Ok(s)
}

/// Forward log-messages: `alpha[t][y]` covers positions `0..=t` ending in `y`.
fn forward(emissions: &Tensor, transitions: &Tensor, k: usize) -> Tensor {
    let n = emissions.rows();
    let mut alpha = Tensor::zeros(n, k);
    for y in 0..k {
        alpha.set(
            0,
            y,
            transitions.get(start_state(k), y) + emissions.get(0, y),
        );
    }
    let mut buf = vec![0.0; k];
    for t in 1..n {
        for y in 0..k {
            for (a, b) in buf.iter_mut().enumerate() {
                *b = alpha.get(t - 1, a) + transitions.get(a, y);
            }
            alpha.set(t, y, emissions.get(t, y) + log_sum_exp(&buf));
        }
    }
    alpha
}

/// Backward log-messages: `beta[t][y]` covers positions after `t` and STOP.
fn backward(emissions: &Tensor, transitions: &Tensor, k: usize) -> Tensor {
    let n = emissions.rows();
    let mut beta = Tensor::zeros(n, k);
    for y in 0..k {
        beta.set(n - 1, y, transitions.get(y, stop_state(k)));
    }
    let mut buf = vec![0.0; k];
    for t in (0..n - 1).rev() {
        for y in 0..k {
            for (b, v) in buf.iter_mut().enumerate() {
                *v = transitions.get(y, b) + emissions.get(t + 1, b) + beta.get(t + 1, b);
            }
            beta.set(t, y, log_sum_exp(&buf));
        }
    }
    beta
}

fn final_log_partition(alpha: &Tensor, transitions: &Tensor, k: usize) -> f64 {
    let last = alpha.rows() - 1;
    let ends: Vec<f64> = (0..k)
        .map(|y| alpha.get(last, y) + transitions.get(y, stop_state(k)))
        .collect();
    log_sum_exp(&ends)
}

/// Log of the sum of exponentiated scores over every label path.
pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let k = check_shapes(emissions, transitions)?;
    let alpha = forward(emissions, transitions, k);
    Ok(final_log_partition(&alpha, transitions, k))
}

/// Per-position posterior label probabilities (n×k).
pub fn marginals(emissions: &Tensor, transitions: &Tensor) -> Result<Tensor> {
    let k = check_shapes(emissions, transitions)?;
    let alpha = forward(emissions, transitions, k);
    let beta = backward(emissions, transitions, k);
    let log_z = final_log_partition(&alpha, transitions, k);
    let mut m = Tensor::zeros(emissions.rows(), k);
    for t in 0..emissions.rows() {
        for y in 0..k {
            m.set(t, y, (alpha.get(t, y) + beta.get(t, y) - log_z).exp());
        }
    }
    Ok(m)
}

/// Highest-scoring path and its score. Ties resolve to the lowest label index.
pub fn viterbi(emissions: &Tensor, transitions: &Tensor) -> Result<(Vec<usize>, f64)> {
    let k = check_shapes(emissions, transitions)?;
    let n = emissions.rows();
    let mut delta = vec![0.0; k];
    for (y, d) in delta.iter_mut().enumerate() {
        *d = transitions.get(start_state(k), y) + emissions.get(0, y);
    }
    let mut backptr = vec![vec![0usize; k]; n];
    let mut next = vec![0.0; k];
    for t in 1..n {
        for y in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + transitions.get(0, y);
            for a in 1..k {
                let s = delta[a] + transitions.get(a, y);
                if s > best_score {
                    best = a;
                    best_score = s;
                }
            }
            backptr[t][y] = best;
            next[y] = best_score + emissions.get(t, y);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut best_score = delta[0] + transitions.get(0, stop_state(k));
    for y in 1..k {
        let s = delta[y] + transitions.get(y, stop_state(k));
        if s > best_score {
            last = y;
            best_score = s;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = backptr[t][path[t]];
    }
    Ok((path, best_score))
}

#[derive(Debug, Clone)]
pub struct NllOutput {
    pub nll: f64,
    pub grad_emissions: Tensor,
    pub grad_transitions: Tensor,
}

/// `log Z − score(gold)` with gradients: expected minus empirical counts.
pub fn nll_and_grads(
    emissions: &Tensor,
    transitions: &Tensor,
    gold: &[usize],
) -> Result<NllOutput> {
    let gold_score = score(emissions, transitions, gold)?;
    let k = emissions.cols();
    let n = emissions.rows();
    let alpha = forward(emissions, transitions, k);
    let beta = backward(emissions, transitions, k);
    let log_z = final_log_partition(&alpha, transitions, k);

    let mut grad_emissions = Tensor::zeros(n, k);
    let mut grad_transitions = Tensor::zeros(k + 2, k + 2);
    for t in 0..n {
        for y in 0..k {
            grad_emissions.set(t, y, (alpha.get(t, y) + beta.get(t, y) - log_z).exp());
        }
    }
    for y in 0..k {
        let start = grad_transitions.get(start_state(k), y) + grad_emissions.get(0, y);
        grad_transitions.set(start_state(k), y, start);
        let stop = grad_transitions.get(y, stop_state(k)) + grad_emissions.get(n - 1, y);
        grad_transitions.set(y, stop_state(k), stop);
    }
    for t in 1..n {
        for a in 0..k {
            for b in 0..k {
                let p = (alpha.get(t - 1, a)
                    + transitions.get(a, b)
                    + emissions.get(t, b)
                    + beta.get(t, b)
                    - log_z)
                    .exp();
                grad_transitions.set(a, b, grad_transitions.get(a, b) + p);
            }
        }
    }
    // Empirical counts.
    let mut prev = start_state(k);
    for (t, &y) in gold.iter().enumerate() {
        grad_emissions.set(t, y, grad_emissions.get(t, y) - 1.0);
        grad_transitions.set(prev, y, grad_transitions.get(prev, y) - 1.0);
        prev = y;
    }
    grad_transitions.set(
        prev,
        stop_state(k),
        grad_transitions.get(prev, stop_state(k)) - 1.0,
    );

    Ok(NllOutput {
        nll: log_z - gold_score,
        grad_emissions,
        grad_transitions,
    })
}

/// Transition mask forbidding BIO-invalid bigrams: `I-x` may only follow
/// `B-x` or `I-x`. Works for typed labels (`B-person`) and bare `B`/`I`/`O`.
pub fn bio_transition_mask(labels: &[String]) -> Tensor {
    let k = labels.len();
    let mut mask = Tensor::zeros(k + 2, k + 2);
    let parse = |l: &str| -> (char, String) {
        match l.split_once('-') {
            Some((p, c)) => (p.chars().next().unwrap_or('O'), c.to_string()),
            None => (l.chars().next().unwrap_or('O'), String::new()),
        }
    };
    for (b, lb) in labels.iter().enumerate() {
        let (pb, cb) = parse(lb);
        if pb != 'I' {
            continue;
        }
        mask.set(start_state(k), b, FORBIDDEN);
        for (a, la) in labels.iter().enumerate() {
            let (pa, ca) = parse(la);
            let allowed = (pa == 'B' || pa == 'I') && ca == cb;
            if !allowed {
                mask.set(a, b, FORBIDDEN);
            }
        }
    }
    mask
}

/// CRF parameters living in a [`ParamStore`]: emission map `z·W + b` and
/// the transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    pub labels: usize,
    pub feature_dim: usize,
    pub transitions: ParamId,
    pub emission_w: ParamId,
    pub emission_b: ParamId,
    /// Optional additive constraint mask (see [`bio_transition_mask`]).
    pub mask: Option<Tensor>,
}

impl CrfParams {
    /// Registers `{prefix}.transitions`, `{prefix}.w` and `{prefix}.b`.
    /// Emission weights are Glorot-initialized; transitions and bias start at zero.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        labels: usize,
        seed: u64,
    ) -> Result<Self> {
        let w_name = format!("{prefix}.w");
        let mut rng = param_rng(seed, &w_name);
        let w = glorot(feature_dim, labels, feature_dim, labels, &mut rng);
        Ok(CrfParams {
            labels,
            feature_dim,
            transitions: store.add(
                format!("{prefix}.transitions"),
                Tensor::zeros(labels + 2, labels + 2),
            )?,
            emission_w: store.add(w_name, w)?,
            emission_b: store.add(format!("{prefix}.b"), Tensor::zeros(1, labels))?,
            mask: None,
        })
    }

    /// Looks up previously registered parameters by prefix.
    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |suffix: &str| {
            store
                .id(&format!("{prefix}.{suffix}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{prefix}.{suffix}`")))
        };
        let w = get("w")?;
        let (feature_dim, labels) = store.value(w).shape();
        Ok(CrfParams {
            labels,
            feature_dim,
            transitions: get("transitions")?,
            emission_w: w,
            emission_b: get("b")?,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Option<Tensor>) -> Self {
        self.mask = mask;
        self
    }

    /// Effective transition matrix (parameters plus mask).
    pub fn transition_matrix(&self, store: &ParamStore) -> Tensor {
        let mut t = store.value(self.transitions).clone();
        if let Some(m) = &self.mask {
            t.add_assign(m).expect("mask shaped like transitions");
        }
        t
    }

    pub fn emissions(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let mut e = z.matmul(store.value(self.emission_w))?;
        let b = store.value(self.emission_b).data();
        for r in 0..e.rows() {
            for (x, y) in e.row_mut(r).iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(e)
    }

    pub fn score(&self, store: &ParamStore, z: &Tensor, labels: &[usize]) -> Result<f64> {
        score(
            &self.emissions(store, z)?,
            &self.transition_matrix(store),
            labels,
        )
    }

    pub fn log_partition(&self, store: &ParamStore, z: &Tensor) -> Result<f64> {
        log_partition(&self.emissions(store, z)?, &self.transition_matrix(store))
    }

    pub fn marginals(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        marginals(&self.emissions(store, z)?, &self.transition_matrix(store))
    }

    pub fn viterbi(&self, store: &ParamStore, z: &Tensor) -> Result<(Vec<usize>, f64)> {
        viterbi(&self.emissions(store, z)?, &self.transition_matrix(store))
    }

    pub fn nll(&self, store: &ParamStore, z: &Tensor, gold: &[usize]) -> Result<f64> {
        Ok(nll_and_grads(
            &self.emissions(store, z)?,
            &self.transition_matrix(store),
            gold,
        )?
        .nll)
    }

    /// Records the negative log-likelihood on a graph so gradients reach the
    /// CRF parameters and, through the emission map, the features `z`.
    pub fn nll_node(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: NodeId,
        gold: &[usize],
    ) -> Result<NodeId> {
        let w = g.param(store, self.emission_w);
        let b = g.param(store, self.emission_b);
        let zw = g.matmul(z, w)?;
        let em = g.add_row(zw, b)?;
        let mut tr = g.param(store, self.transitions);
        if let Some(m) = &self.mask {
            let mn = g.input(m.clone());
            tr = g.add(tr, mn)?;
        }
        g.crf_nll(em, tr, gold)
    }
}

/// Random instance helper for tests and the gradient suite.
pub fn random_instance(n: usize, k: usize, rng: &mut impl Rng, scale: f64) -> (Tensor, Tensor) {
    let em = Tensor::from_vec(
        n,
        k,
        (0..n * k).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .expect("sized");
    let mut tr = Tensor::zeros(k + 2, k + 2);
    for a in 0..k + 2 {
        for b in 0..k + 2 {
            if b != start_state(k) && a != stop_state(k) {
                tr.set(a, b, rng.gen_range(-scale..scale));
            }
        }
    }
    (em, tr)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Every label path of length `n` over `k` labels.
    fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
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

    fn raw_score(em: &Tensor, tr: &Tensor, y: &[usize]) -> f64 {
        let k = em.cols();
        let mut s = tr.get(k, y[0]) + tr.get(y[y.len() - 1], k + 1);
        for t in 0..y.len() {
            s += em.get(t, y[t]);
            if t > 0 {
                s += tr.get(y[t - 1], y[t]);
            }
        }
        s
    }

    #[test]
    fn zero_params_uniform() {
        for n in 1..=6 {
            let em = Tensor::zeros(n, 3);
            let tr = Tensor::zeros(5, 5);
            let lz = log_partition(&em, &tr).unwrap();
            assert!((lz - n as f64 * 3f64.ln()).abs() < 1e-12);
            let (path, s) = viterbi(&em, &tr).unwrap();
            assert_eq!(path, vec![0; n]);
            assert_eq!(s, 0.0);
            let m = marginals(&em, &tr).unwrap();
            assert!(m.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
            assert_eq!(score(&em, &tr, &vec![2; n]).unwrap(), 0.0);
        }
    }

    #[test]
    fn length_one_score() {
        let em = Tensor::from_vec(1, 2, vec![0.5, -1.0]).unwrap();
        let mut tr = Tensor::zeros(4, 4);
        tr.set(2, 1, 0.25);
        tr.set(1, 3, 2.0);
        assert_eq!(score(&em, &tr, &[1]).unwrap(), -1.0 + 0.25 + 2.0);
        let lz = log_partition(&em, &tr).unwrap();
        assert!((lz - log_sum_exp(&[0.5, 1.25])).abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.gen_range(1..=4);
            let k = rng.gen_range(2..=4);
            let (em, tr) = random_instance(n, k, &mut rng, 2.0);
            let paths = all_paths(n, k);
            let scores: Vec<f64> = paths.iter().map(|p| raw_score(&em, &tr, p)).collect();
            let lz = log_sum_exp(&scores);
            assert!((log_partition(&em, &tr).unwrap() - lz).abs() < 1e-10);

            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (path, s) = viterbi(&em, &tr).unwrap();
            assert!((s - best).abs() < 1e-10);
            assert!((raw_score(&em, &tr, &path) - s).abs() < 1e-10);

            let m = marginals(&em, &tr).unwrap();
            for t in 0..n {
                for y in 0..k {
                    let brute: f64 = paths
                        .iter()
                        .zip(&scores)
                        .filter(|(p, _)| p[t] == y)
                        .map(|(_, s)| (s - lz).exp())
                        .sum();
                    assert!((m.get(t, y) - brute).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn transition_gradient_is_expected_minus_gold_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (em, tr) = random_instance(4, 3, &mut rng, 1.0);
        let gold = [0, 2, 2, 1];
        let out = nll_and_grads(&em, &tr, &gold).unwrap();
        let paths = all_paths(4, 3);
        let scores: Vec<f64> = paths.iter().map(|p| raw_score(&em, &tr, p)).collect();
        let lz = log_sum_exp(&scores);
        for a in 0..3 {
            for b in 0..3 {
                let expected: f64 = paths
                    .iter()
                    .zip(&scores)
                    .map(|(p, s)| {
                        let c = p.windows(2).filter(|w| w[0] == a && w[1] == b).count();
                        c as f64 * (s - lz).exp()
                    })
                    .sum();
                let gold_count = gold.windows(2).filter(|w| w[0] == a && w[1] == b).count() as f64;
                assert!((out.grad_transitions.get(a, b) - (expected - gold_count)).abs() < 1e-10);
            }
        }
        // START row into START and STOP row never receive gradient.
        for a in 0..5 {
            assert_eq!(out.grad_transitions.get(a, 3), 0.0);
            assert_eq!(out.grad_transitions.get(4, a), 0.0);
        }
    }

    #[test]
    fn dominant_gold_path_has_tiny_nll() {
        let gold = [1, 0, 2];
        let mut em = Tensor::zeros(3, 3);
        for (t, &y) in gold.iter().enumerate() {
            em.set(t, y, 1e3);
        }
        let tr = Tensor::zeros(5, 5);
        let out = nll_and_grads(&em, &tr, &gold).unwrap();
        assert!(out.nll >= 0.0 && out.nll < 1e-6);
        let m = marginals(&em, &tr).unwrap();
        for (t, &y) in gold.iter().enumerate() {
            assert!((m.get(t, y) - 1.0).abs() < 1e-12);
        }
        assert_eq!(viterbi(&em, &tr).unwrap().0, gold);
    }

    #[test]
    fn forbidden_transition_never_decoded() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (em, mut tr) = random_instance(5, 3, &mut rng, 3.0);
            tr.set(1, 2, -1e9);
            let (path, _) = viterbi(&em, &tr).unwrap();
            assert!(path.windows(2).all(|w| !(w[0] == 1 && w[1] == 2)));
        }
    }

    #[test]
    fn emission_shift_moves_log_partition_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (em, tr) = random_instance(4, 3, &mut rng, 1.5);
        let mut shifted = em.clone();
        for y in 0..3 {
            shifted.set(2, y, shifted.get(2, y) + 7.25);
        }
        let (p0, _) = viterbi(&em, &tr).unwrap();
        let (p1, _) = viterbi(&shifted, &tr).unwrap();
        assert_eq!(p0, p1);
        let d = log_partition(&shifted, &tr).unwrap() - log_partition(&em, &tr).unwrap();
        assert!((d - 7.25).abs() < 1e-10);
    }

    #[test]
    fn bio_mask_forbids_cross_class_continuation() {
        let labels: Vec<String> = ["B-loc", "B-per", "I-loc", "I-per", "O"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let m = bio_transition_mask(&labels);
        assert_eq!(m.get(2, 3), FORBIDDEN); // I-loc -> I-per
        assert_eq!(m.get(4, 2), FORBIDDEN); // O -> I-loc
        assert_eq!(m.get(5, 3), FORBIDDEN); // START -> I-per
        assert_eq!(m.get(0, 2), 0.0); // B-loc -> I-loc
        assert_eq!(m.get(2, 2), 0.0);
        assert_eq!(m.get(4, 0), 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let em = Tensor::zeros(3, 2);
        let tr = Tensor::zeros(4, 4);
        assert!(score(&em, &tr, &[0, 1]).is_err());
        assert!(log_partition(&Tensor::zeros(0, 2), &tr).is_err());
        assert!(log_partition(&em, &Tensor::zeros(3, 3)).is_err());
    }
}
