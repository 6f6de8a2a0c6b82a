//! Finite-state continuous-time Markov chain for the random environment.
//!
//! Jumps are sampled exactly: the holding time in state `i` is exponential
//! with rate `-q_ii` and the next state is `j` with probability
//! `q_ij / (-q_ii)`.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, SimRng, STREAM_CHAIN};

/// Rows whose sum is within this distance of zero are renormalized.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtmcError {
    #[error("generator must be a non-empty square matrix (got {rows} rows, row {row} has {cols} entries)")]
    NotSquare { rows: usize, row: usize, cols: usize },
    #[error("generator entry ({i}, {j}) is not finite")]
    NonFinite { i: usize, j: usize },
    #[error("off-diagonal rate q[{i}][{j}] = {value} is negative")]
    NegativeOffDiagonal { i: usize, j: usize, value: f64 },
    #[error("diagonal rate q[{i}][{i}] = {value} must be negative when m > 1")]
    NonAbsorbingRowViolation { i: usize, value: f64 },
    #[error("row {i} sums to {residual:e}, beyond the 1e-9 tolerance")]
    RowSumTooLarge { i: usize, residual: f64 },
    #[error("regime {regime} out of range for a chain with {m} states")]
    RegimeOutOfRange { regime: usize, m: usize },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
}

/// Validated rate matrix `Q` of the environment chain, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<f64>>")]
pub struct GeneratorMatrix {
    m: usize,
    rates: Vec<f64>,
}

impl From<GeneratorMatrix> for Vec<Vec<f64>> {
    fn from(q: GeneratorMatrix) -> Self {
        q.rows()
    }
}

impl<'de> Deserialize<'de> for GeneratorMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        validate_generator(&rows).map_err(serde::de::Error::custom)
    }
}

/// Validates a rate matrix and renormalizes the diagonal so rows sum to zero.
pub fn validate_generator(rows: &[Vec<f64>]) -> Result<GeneratorMatrix, CtmcError> {
    let m = rows.len();
    if m == 0 {
        return Err(CtmcError::NotSquare { rows: 0, row: 0, cols: 0 });
    }
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(CtmcError::NotSquare { rows: m, row, cols: r.len() });
    }
    let mut rates = Vec::with_capacity(m * m);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(CtmcError::NonFinite { i, j });
            }
            if i != j && v < 0.0 {
                return Err(CtmcError::NegativeOffDiagonal { i, j, value: v });
            }
        }
        let residual: f64 = row.iter().sum();
        if residual.abs() > ROW_SUM_TOLERANCE {
            return Err(CtmcError::RowSumTooLarge { i, residual });
        }
        let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
        let mut row = row.clone();
        row[i] = -off;
        if m > 1 && row[i] >= 0.0 {
            return Err(CtmcError::NonAbsorbingRowViolation { i, value: row[i] });
        }
        rates.extend_from_slice(&row);
    }
    Ok(GeneratorMatrix { m, rates })
}

impl GeneratorMatrix {
    /// The static environment: a single regime that never switches.
    pub fn single_regime() -> Self {
        Self { m: 1, rates: vec![0.0] }
    }

    /// Two-state generator `[[-l1, l1], [l2, -l2]]`.
    pub fn two_state(l1: f64, l2: f64) -> Result<Self, CtmcError> {
        validate_generator(&[vec![-l1, l1], vec![l2, -l2]])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.m + j]
    }

    /// Total jump intensity `-q_ii` out of state `i`.
    #[inline]
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rate(i, i)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.rates.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    fn check_regime(&self, regime: usize) -> Result<(), CtmcError> {
        if regime < self.m {
            Ok(())
        } else {
            Err(CtmcError::RegimeOutOfRange { regime, m: self.m })
        }
    }
}

/// Event-driven sampler of chain jumps; yields jump times in increasing order.
#[derive(Debug, Clone)]
pub struct ChainSampler<'a> {
    q: &'a GeneratorMatrix,
    state: usize,
    clock: f64,
    rng: SimRng,
}

impl<'a> ChainSampler<'a> {
    pub fn new(q: &'a GeneratorMatrix, initial: usize, rng: SimRng) -> Self {
        Self { q, state: initial, clock: 0.0, rng }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Samples the next jump `(time, new_state)`, or `None` if the current
    /// state is absorbing (only possible for `m = 1`).
    pub fn next_jump(&mut self) -> Option<(f64, usize)> {
        let rate = self.q.exit_rate(self.state);
        if rate <= 0.0 {
            return None;
        }
        let hold: f64 = self.rng.sample::<f64, _>(Exp1) / rate;
        self.clock += hold;
        let u: f64 = self.rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = self.state;
        for j in 0..self.q.m() {
            if j == self.state {
                continue;
            }
            let qij = self.q.rate(self.state, j);
            if qij <= 0.0 {
                continue;
            }
            next = j;
            acc += qij;
            if u < acc {
                break;
            }
        }
        self.state = next;
        Some((self.clock, next))
    }
}

/// One realization of the environment on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePath {
    pub jump_times: Vec<f64>,
    /// `regimes[0]` is the initial regime, `regimes[k + 1]` the regime after jump `k`.
    pub regimes: Vec<usize>,
    pub horizon: f64,
}

/// Samples the chain exactly on `[0, horizon]`.
pub fn simulate_chain(
    q: &GeneratorMatrix,
    initial: usize,
    horizon: f64,
    seed: u64,
) -> Result<RegimePath, CtmcError> {
    q.check_regime(initial)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CtmcError::InvalidHorizon(horizon));
    }
    let mut sampler = ChainSampler::new(q, initial, stream_rng(seed, STREAM_CHAIN));
    let mut path = RegimePath { jump_times: Vec::new(), regimes: vec![initial], horizon };
    while let Some((t, j)) = sampler.next_jump() {
        if t > horizon {
            break;
        }
        path.jump_times.push(t);
        path.regimes.push(j);
    }
    Ok(path)
}

impl RegimePath {
    /// Regime in force at `t`. With `left_limit` the value of `α(t−)` is returned.
    pub fn regime_at(&self, t: f64, left_limit: bool) -> Result<usize, CtmcError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(CtmcError::TimeOutOfRange { t, horizon: self.horizon });
        }
        let jumps = if left_limit {
            self.jump_times.partition_point(|&s| s < t)
        } else {
            self.jump_times.partition_point(|&s| s <= t)
        };
        Ok(self.regimes[jumps])
    }

    /// Time spent in each of `m` regimes over `[0, horizon]`.
    pub fn occupation_times(&self, m: usize) -> Vec<f64> {
        let mut occ = vec![0.0; m];
        let mut last = 0.0;
        for (k, &t) in self.jump_times.iter().enumerate() {
            occ[self.regimes[k]] += t - last;
            last = t;
        }
        occ[*self.regimes.last().expect("at least the initial regime")] += self.horizon - last;
        occ
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn symmetric_two_state_is_valid() {
        let q = validate_generator(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(q.m(), 2);
        assert_eq!(q.exit_rate(0), 1.0);
    }

    #[test]
    fn row_sum_one_is_rejected() {
        let err = validate_generator(&[vec![-1.0, 2.0], vec![1.0, -1.0]]).unwrap_err();
        assert!(matches!(err, CtmcError::RowSumTooLarge { i: 0, .. }));
    }

    #[test]
    fn example_one_generator_is_valid() {
        for (l1, l2) in [(1.0, 1.0), (0.3, 2.5), (1e-3, 40.0)] {
            let q = GeneratorMatrix::two_state(l1, l2).unwrap();
            assert_eq!(q.rate(0, 1), l1);
            assert_eq!(q.rate(1, 0), l2);
        }
    }

    #[test]
    fn negative_off_diagonal_rejected() {
        let err = validate_generator(&[vec![1.0, -1.0], vec![1.0, -1.0]]).unwrap_err();
        assert!(matches!(err, CtmcError::NegativeOffDiagonal { i: 0, j: 1, .. }));
    }

    #[test]
    fn zero_row_rejected_when_switching() {
        let err = validate_generator(&[vec![0.0, 0.0], vec![1.0, -1.0]]).unwrap_err();
        assert!(matches!(err, CtmcError::NonAbsorbingRowViolation { i: 0, .. }));
    }

    #[test]
    fn decimal_noise_is_renormalized() {
        let q = validate_generator(&[vec![-0.3, 0.1, 0.2 + 1e-12], vec![0.5, -0.5, 0.0], vec![0.1, 0.1, -0.2]])
            .unwrap();
        for row in q.rows() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn single_regime_never_jumps() {
        let q = validate_generator(&[vec![0.0]]).unwrap();
        let path = simulate_chain(&q, 0, 100.0, 3).unwrap();
        assert!(path.jump_times.is_empty());
        assert_eq!(path.regimes, vec![0]);
    }

    #[test]
    fn mean_holding_time_matches_rate() {
        let q = GeneratorMatrix::two_state(1.0, 1.0).unwrap();
        let mut s = ChainSampler::new(&q, 0, stream_rng(11, STREAM_CHAIN));
        let n = 100_000;
        let mut last = 0.0;
        let mut total = 0.0;
        for _ in 0..n {
            let (t, _) = s.next_jump().unwrap();
            total += t - last;
            last = t;
        }
        let mean = total / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean holding time {mean}");
    }

    #[test]
    fn sojourn_means_per_state_within_three_sigma() {
        let q = validate_generator(&[vec![-2.0, 1.5, 0.5], vec![0.2, -0.4, 0.2], vec![3.0, 1.0, -4.0]]).unwrap();
        let mut s = ChainSampler::new(&q, 0, stream_rng(5, STREAM_CHAIN));
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        let mut last = 0.0;
        while counts.iter().min().copied().unwrap() < 100_000 {
            let from = s.state();
            let (t, _) = s.next_jump().unwrap();
            sums[from] += t - last;
            counts[from] += 1;
            last = t;
        }
        for i in 0..3 {
            let expected = 1.0 / q.exit_rate(i);
            let mean = sums[i] / counts[i] as f64;
            // exponential: sd equals the mean
            let se = expected / (counts[i] as f64).sqrt();
            assert!((mean - expected).abs() < 3.0 * se, "state {i}: {mean} vs {expected}");
        }
    }

    /// Stationary law from πQ = 0, Σπ = 1 by a dense linear solve.
    fn stationary_oracle(q: &GeneratorMatrix) -> Vec<f64> {
        let m = q.m();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                a[(j, i)] = q.rate(i, j);
            }
        }
        for i in 0..m {
            a[(m - 1, i)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(m);
        rhs[m - 1] = 1.0;
        a.lu().solve(&rhs).unwrap().iter().copied().collect()
    }

    #[test]
    fn occupation_fraction_two_state() {
        let q = validate_generator(&[vec![-2.0, 2.0], vec![1.0, -1.0]]).unwrap();
        let pi = stationary_oracle(&q);
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-12);
        let path = simulate_chain(&q, 0, 50_000.0, 99).unwrap();
        let occ = path.occupation_times(2);
        let frac = occ[0] / path.horizon;
        assert!((frac - 1.0 / 3.0).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn occupation_fractions_match_stationary_law() {
        let cases = [
            vec![vec![-1.0, 0.4, 0.6], vec![2.0, -3.0, 1.0], vec![0.5, 0.5, -1.0]],
            vec![
                vec![-1.0, 0.5, 0.25, 0.25],
                vec![0.1, -0.2, 0.05, 0.05],
                vec![1.0, 1.0, -3.0, 1.0],
                vec![0.0, 0.3, 0.3, -0.6],
            ],
        ];
        for rows in cases {
            let q = validate_generator(&rows).unwrap();
            let pi = stationary_oracle(&q);
            let path = simulate_chain(&q, 0, 50_000.0, 2024).unwrap();
            let occ = path.occupation_times(q.m());
            for (o, p) in occ.iter().zip(&pi) {
                assert!((o / path.horizon - p).abs() < 0.01, "{o} vs {p}");
            }
        }
    }

    #[test]
    fn equal_seeds_reproduce_paths() {
        let q = GeneratorMatrix::two_state(0.7, 1.3).unwrap();
        let a = simulate_chain(&q, 1, 200.0, 17).unwrap();
        let b = simulate_chain(&q, 1, 200.0, 17).unwrap();
        assert_eq!(a, b);
        let c = simulate_chain(&q, 1, 200.0, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn path_invariants_hold() {
        let q = validate_generator(&[vec![-1.0, 0.5, 0.5], vec![1.0, -2.0, 1.0], vec![0.2, 0.2, -0.4]]).unwrap();
        let p = simulate_chain(&q, 2, 500.0, 1).unwrap();
        assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!(p.jump_times.iter().all(|&t| t > 0.0 && t <= p.horizon));
        assert!(p.regimes.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(p.regimes.len(), p.jump_times.len() + 1);
    }

    #[test]
    fn regime_at_uses_cadlag_convention() {
        let p = RegimePath { jump_times: vec![1.0], regimes: vec![0, 1], horizon: 2.0 };
        assert_eq!(p.regime_at(0.5, false).unwrap(), 0);
        assert_eq!(p.regime_at(1.0, false).unwrap(), 1);
        assert_eq!(p.regime_at(1.0, true).unwrap(), 0);
        assert!(matches!(p.regime_at(2.5, false), Err(CtmcError::TimeOutOfRange { .. })));
        let still = RegimePath { jump_times: vec![], regimes: vec![3], horizon: 1.0 };
        assert_eq!(still.regime_at(0.5, false).unwrap(), 3);
    }

    #[test]
    fn out_of_range_initial_rejected() {
        let q = GeneratorMatrix::two_state(1.0, 1.0).unwrap();
        assert!(matches!(simulate_chain(&q, 2, 1.0, 0), Err(CtmcError::RegimeOutOfRange { .. })));
    }
}
