//! Small numeric utilities: compensated summation and a symmetric eigensolver.

/// Neumaier compensated accumulator. Adding the same values in the same order
/// always reproduces the same total bitwise.
#[derive(Debug, Clone, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sums a slice in index order with compensation.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.total()
}

/// Mean and standard error of a sample, computed with compensated sums.
/// Returns (mean, std_error). A sample whose entries are all bitwise equal
/// yields that value with std_error exactly 0.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "empty sample");
    let first = values[0];
    if values.iter().all(|v| v.to_bits() == first.to_bits()) {
        return (first, 0.0);
    }
    let mean = compensated_sum(values) / n as f64;
    let mut sq = CompensatedSum::new();
    for &v in values {
        let d = v - mean;
        sq.add(d * d);
    }
    if n == 1 {
        return (mean, 0.0);
    }
    let var = sq.total() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Eigenvalue range (min, max) of a symmetric n x n matrix (row-major) by
/// cyclic Jacobi rotations.
pub fn symmetric_eigen_range(a: &[f64], n: usize) -> (f64, f64) {
    assert_eq!(a.len(), n * n);
    if n == 1 {
        return (a[0], a[0]);
    }
    let mut m = a.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frobenius(&m, n)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        lo = lo.min(m[i * n + i]);
        hi = hi.max(m[i * n + i]);
    }
    (lo, hi)
}

fn frobenius(m: &[f64], n: usize) -> f64 {
    m.iter().take(n * n).map(|v| v * v).sum::<f64>().sqrt()
}
