//! Small numeric helpers shared across modules.

/// Neumaier compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Compensated sum of an iterator.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Component-wise compensated accumulator for vectors.
#[derive(Clone, Debug)]
pub struct CompensatedVec {
    parts: Vec<CompensatedSum>,
}

impl CompensatedVec {
    pub fn zeros(dim: usize) -> Self {
        CompensatedVec {
            parts: vec![CompensatedSum::new(); dim],
        }
    }

    pub fn add_scaled(&mut self, weight: f64, v: &[f64]) {
        for (acc, &x) in self.parts.iter_mut().zip(v) {
            if x != 0.0 {
                acc.add(weight * x);
            }
        }
    }

    pub fn merge(&mut self, other: &CompensatedVec) {
        for (a, b) in self.parts.iter_mut().zip(&other.parts) {
            a.add(b.sum);
            a.add(b.carry);
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.parts.iter().map(CompensatedSum::value).collect()
    }
}

/// Numerically stable log-softmax of `logits` written into `out`.
pub fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
}

/// Softmax of `logits` written into `out`.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Dot product with four independent accumulators.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral norm of a symmetric matrix given in row-major order.
pub fn symmetric_spectral_norm(n: usize, data: &[f64]) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let m = nalgebra::DMatrix::from_row_slice(n, n, data);
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().fold(0.0f64, |acc, e| acc.max(e.abs()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(n: usize, data: &[f64]) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(n, n, data);
    let mut eig: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// SplitMix64 finalizer, used to derive independent streams and hash histories.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one.
pub fn mix_all(seed: u64, words: &[u64]) -> u64 {
    words.iter().fold(mix64(seed), |h, &w| mix64(h ^ mix64(w)))
}

/// Maps a hash to a uniform value in `[0, 1)`.
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values), 2.0);
    }

    #[test]
    fn softmax_examples() {
        let mut p = [0.0; 2];
        softmax(&[3f64.ln(), 0.0], &mut p);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let mut lp = [0.0; 2];
        log_softmax(&[1000.0, 0.0], &mut lp);
        assert_eq!(lp[0], 0.0);
        assert!(lp[1].is_finite());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        assert_eq!(symmetric_spectral_norm(2, &[-3.0, 0.0, 0.0, 2.0]), 3.0);
    }
}
