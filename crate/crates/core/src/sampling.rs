//! Generative-model simulation and the static tracking sampler.
//!
//! A [`SampleState`] owns the draw counts, the per-pair transition counts,
//! and a seedable RNG. The tracking rule picks the pair minimizing
//! `N_sa/ω_sa` (ties broken by lowest lexicographic index), which keeps
//! every count within `[t·ω_sa − |W|, t·ω_sa + 1]` of its target after the
//! initialization sweep.
//!
//! Determinism: identical `(seed, stream)` pairs reproduce identical
//! trajectories. Parallel trials use one stream per trial index so their
//! draws never overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::kl::Allocation;
use crate::mdp::TransitionKernel;

/// Sampling counts, empirical statistics, and RNG state for one run.
#[derive(Debug, Clone)]
pub struct SampleState {
    n_states: usize,
    n_actions: usize,
    counts: Vec<u64>,
    transition_counts: Vec<u64>,
    t: u64,
    rng: ChaCha8Rng,
}

/// Empirical statistics snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalStats {
    pub t: u64,
    /// Pairs never sampled (their empirical rows are uniform placeholders).
    pub unsampled: Vec<(usize, usize)>,
}

impl SampleState {
    /// Fresh state on RNG stream 0.
    pub fn new(n_states: usize, n_actions: usize, seed: u64) -> Self {
        Self::with_stream(n_states, n_actions, seed, 0)
    }

    /// Fresh state on a dedicated RNG stream; use one stream per trial for
    /// reproducible parallel experiments.
    pub fn with_stream(n_states: usize, n_actions: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            n_states,
            n_actions,
            counts: vec![0; n_states * n_actions],
            transition_counts: vec![0; n_states * n_actions * n_states],
            t: 0,
            rng,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Total draws so far (`t`).
    pub fn t(&self) -> u64 {
        self.t
    }

    /// `N_sa(t)`.
    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.n_actions + a]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// One generative-model draw: samples `s' ~ p(·|s,a)` and updates the
    /// counts. Returns the next state.
    pub fn draw(&mut self, true_kernel: &TransitionKernel, s: usize, a: usize) -> usize {
        let row = true_kernel.row(s, a);
        let u: f64 = self.rng.random();
        let mut cum = 0.0;
        let mut next = row.len() - 1;
        for (i, p) in row.iter().enumerate() {
            cum += p;
            if u < cum {
                next = i;
                break;
            }
        }
        self.counts[s * self.n_actions + a] += 1;
        self.transition_counts[(s * self.n_actions + a) * self.n_states + next] += 1;
        self.t += 1;
        next
    }

    /// Initialization sweep: one draw for every pair with `ω_sa > 0`, in
    /// lexicographic order. These draws count toward `t`.
    pub fn initialize(&mut self, true_kernel: &TransitionKernel, w: &Allocation) {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                if w.get(s, a) > 0.0 {
                    self.draw(true_kernel, s, a);
                }
            }
        }
    }

    /// The tracking rule: the pair with `ω_sa > 0` minimizing `N_sa/ω_sa`,
    /// ties broken by lowest `(s,a)` in lexicographic order.
    pub fn tracking_next(&self, w: &Allocation) -> (usize, usize) {
        let mut best: Option<(usize, usize, u64, f64)> = None;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let weight = w.get(s, a);
                if weight <= 0.0 {
                    continue;
                }
                let count = self.count(s, a);
                match best {
                    None => best = Some((s, a, count, weight)),
                    Some((_, _, bc, bw)) => {
                        // count/weight < bc/bw without the division
                        if (count as f64) * bw < (bc as f64) * weight {
                            best = Some((s, a, count, weight));
                        }
                    }
                }
            }
        }
        let (s, a, _, _) = best.expect("allocation has at least one positive weight");
        (s, a)
    }

    /// Empirical kernel `p̂_t`: row `(s,a)` is `n(s,a,·)/N_sa`; rows of
    /// unsampled pairs are uniform placeholders. The placeholders are inert
    /// downstream because the empirical allocation of such pairs is zero and
    /// a zero weight silences the KL term.
    pub fn empirical_kernel(&self) -> TransitionKernel {
        let mut probs = vec![0.0; self.n_states * self.n_actions * self.n_states];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let pair = s * self.n_actions + a;
                let n = self.counts[pair];
                let base = pair * self.n_states;
                if n == 0 {
                    for v in &mut probs[base..base + self.n_states] {
                        *v = 1.0 / self.n_states as f64;
                    }
                } else {
                    for s_next in 0..self.n_states {
                        probs[base + s_next] =
                            self.transition_counts[base + s_next] as f64 / n as f64;
                    }
                }
            }
        }
        TransitionKernel::new(self.n_states, self.n_actions, probs)
            .expect("empirical rows are stochastic")
    }

    /// Empirical allocation `ω̂(t) = N(t)/t`.
    pub fn empirical_allocation(&self) -> Allocation {
        assert!(self.t > 0, "no draws yet");
        let w: Vec<f64> = self
            .counts
            .iter()
            .map(|&c| c as f64 / self.t as f64)
            .collect();
        Allocation::new(self.n_states, self.n_actions, w)
            .expect("counts normalized by t form a distribution")
    }

    pub fn stats(&self) -> EmpiricalStats {
        let mut unsampled = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                if self.count(s, a) == 0 {
                    unsampled.push((s, a));
                }
            }
        }
        EmpiricalStats {
            t: self.t,
            unsampled,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn degenerate_row_always_returns_same_state() {
        let kernel = TransitionKernel::new(2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut state = SampleState::new(2, 1, 7);
        for _ in 0..100 {
            assert_eq!(state.draw(&kernel, 0, 0), 0);
            assert_eq!(state.draw(&kernel, 1, 0), 1);
        }
    }

    #[test]
    fn law_of_large_numbers_seeded() {
        let kernel = TransitionKernel::new(2, 1, vec![0.7, 0.3, 0.5, 0.5]).unwrap();
        let mut state = SampleState::new(2, 1, 12345);
        let n = 100_000;
        let mut hits = 0u64;
        for _ in 0..n {
            if state.draw(&kernel, 0, 0) == 0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.7).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn count_bookkeeping_is_consistent() {
        let (instance, w) = instances::two_state();
        let mut state = SampleState::new(2, 2, 3);
        state.initialize(instance.kernel(), &w);
        for _ in 0..500 {
            let (s, a) = state.tracking_next(&w);
            state.draw(instance.kernel(), s, a);
        }
        let total: u64 = state.counts().iter().sum();
        assert_eq!(total, state.t());
        for s in 0..2 {
            for a in 0..2 {
                let pair = s * 2 + a;
                let row_total: u64 = (0..2).map(|n| state.transition_counts[pair * 2 + n]).sum();
                assert_eq!(row_total, state.count(s, a));
            }
        }
    }

    #[test]
    fn round_robin_under_uniform_allocation() {
        let (instance, w) = instances::two_state();
        let mut state = SampleState::new(2, 2, 11);
        state.initialize(instance.kernel(), &w);
        // after each full round of 4 draws all counts are equal
        for round in 0..50u64 {
            for _ in 0..4 {
                let (s, a) = state.tracking_next(&w);
                state.draw(instance.kernel(), s, a);
            }
            for s in 0..2 {
                for a in 0..2 {
                    assert_eq!(state.count(s, a), round + 2);
                }
            }
        }
    }

    #[test]
    fn tracking_bounds_hold_on_skewed_allocation() {
        let (instance, _) = instances::two_state();
        let w = Allocation::new(2, 2, vec![0.9, 0.1, 0.0, 0.0]).unwrap();
        let mut state = SampleState::new(2, 2, 5);
        state.initialize(instance.kernel(), &w);
        let support = 2.0;
        while state.t() < 100 {
            let (s, a) = state.tracking_next(&w);
            assert!(w.get(s, a) > 0.0);
            state.draw(instance.kernel(), s, a);
            let t = state.t() as f64;
            for (pair, &count) in state.counts().iter().enumerate() {
                let weight = w.weights()[pair];
                let c = count as f64;
                assert!(c <= t * weight + 1.0, "upper tracking bound");
                assert!(c >= t * weight - support, "lower tracking bound");
            }
        }
        // N ~ (90, 10) at t = 100
        assert!((state.count(0, 0) as i64 - 90).unsigned_abs() <= 2);
        assert!((state.count(0, 1) as i64 - 10).unsigned_abs() <= 2);
    }

    #[test]
    fn empirical_kernel_matches_counts_and_flags_unsampled() {
        let (instance, _) = instances::two_state();
        let w = Allocation::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let mut state = SampleState::new(2, 2, 1);
        state.initialize(instance.kernel(), &w);
        let hat = state.empirical_kernel();
        // sampled pairs are point masses after one draw
        for a in 0..2 {
            let row = hat.row(0, a);
            assert!(row.iter().any(|&p| (p - 1.0).abs() < 1e-12));
        }
        // unsampled pairs are uniform and flagged
        for a in 0..2 {
            for p in hat.row(1, a) {
                assert!((p - 0.5).abs() < 1e-12);
            }
        }
        let stats = state.stats();
        assert_eq!(stats.unsampled, vec![(1, 0), (1, 1)]);
    }

    #[test]
    fn empirical_kernel_converges_to_truth() {
        let (instance, w) = instances::two_state();
        let mut state = SampleState::new(2, 2, 777);
        state.initialize(instance.kernel(), &w);
        while state.t() < 400_000 {
            let (s, a) = state.tracking_next(&w);
            state.draw(instance.kernel(), s, a);
        }
        let hat = state.empirical_kernel();
        for (est, truth) in hat.as_slice().iter().zip(instance.kernel().as_slice()) {
            assert!((est - truth).abs() < 0.02, "est {est} vs truth {truth}");
        }
    }

    #[test]
    fn identical_seeds_reproduce_trajectories() {
        let (instance, w) = instances::three_state();
        let run = |seed, stream| {
            let mut state = SampleState::with_stream(3, 3, seed, stream);
            state.initialize(instance.kernel(), &w);
            let mut trace = Vec::new();
            for _ in 0..200 {
                let (s, a) = state.tracking_next(&w);
                let next = state.draw(instance.kernel(), s, a);
                trace.push((s, a, next));
            }
            (trace, state.counts().to_vec())
        };
        assert_eq!(run(42, 0), run(42, 0));
        assert_ne!(run(42, 0), run(42, 1));
        assert_ne!(run(42, 0), run(43, 0));
    }
}
