use serde::Serialize;

/// Fixed-width histogram on `[lo, hi)`; values outside are counted but not binned.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins],
            total: 0,
        }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn add(&mut self, x: f64) {
        self.total += 1;
        if x >= self.lo && x < self.hi {
            let i = ((x - self.lo) / self.bin_width()) as usize;
            let last = self.counts.len() - 1;
            self.counts[i.min(last)] += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        self.total += other.total;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `(bin_lo, bin_hi, density)` rows, normalized by the total count.
    pub fn density_rows(&self) -> Vec<(f64, f64, f64)> {
        let w = self.bin_width();
        let n = self.total.max(1) as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let a = self.lo + i as f64 * w;
                (a, a + w, c as f64 / (n * w))
            })
            .collect()
    }
}
