use serde::{Deserialize, Serialize};

/// Welford running mean and variance per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *m2 += d * (v - *m);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population standard deviation per feature; features with (near) zero
    /// spread get scale 1 so they pass through standardization unchanged.
    pub fn std(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2
            .iter()
            .zip(&self.mean)
            .map(|(m2, m)| {
                let s = (m2 / n).max(0.0).sqrt();
                if s > 1e-8 * m.abs().max(1.0) {
                    s
                } else {
                    1.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass() {
        let data = [[1.0, 10.0], [2.0, 10.0], [4.0, 10.0], [7.0, 10.0]];
        let mut st = RunningStats::new(2);
        for row in &data {
            st.push(row);
        }
        let mean = 14.0 / 4.0;
        let var = data.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((st.mean()[0] - mean).abs() < 1e-12);
        assert!((st.std()[0] - var.sqrt()).abs() < 1e-12);
        assert_eq!(st.std()[1], 1.0);
    }
}
