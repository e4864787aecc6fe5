//! Small numeric helpers shared across modules.

/// Compensated (Kahan) summation, so reductions do not depend on chunking order.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    kahan_sum(xs.iter().copied()) / xs.len() as f64
}

/// Population (1/n) standard deviation.
pub fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = kahan_sum(xs.iter().map(|x| (x - m) * (x - m))) / xs.len() as f64;
    var.sqrt()
}

/// Sample (1/(n-1)) standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = kahan_sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() - 1) as f64;
    var.sqrt()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derives a stream-specific seed from a master seed, for reproducible
/// per-patient / per-run randomness.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 over master ^ golden-ratio-scrambled stream
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_matches_naive_on_small_input() {
        let xs = [1.0, 2.0, 3.5, -0.5];
        assert_eq!(kahan_sum(xs), 6.0);
    }

    #[test]
    fn pop_std_of_1_2_3() {
        let sd = pop_std(&[1.0, 2.0, 3.0]);
        assert!((sd - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        assert!((sigmoid(1.3) + sigmoid(-1.3) - 1.0).abs() < 1e-15);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
    }
}
