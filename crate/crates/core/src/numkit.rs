//! Dense f64 vector arithmetic and deterministic stream-keyed random number
//! generation. Every stochastic choice in the simulator draws from an
//! [`RngStream`] keyed by `(root_seed, client, round, purpose)`, so results
//! are independent of scheduling and parallelism.

/// Flat parameter/gradient vector of fixed dimension.
///
/// All binary operations require equal dimensions and panic otherwise.
/// Values returned from an operation are treated as immutable and may be
/// shared freely across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        let v = ParamVector { values };
        v.debug_check_finite();
        v
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `self + c * other`, elementwise.
    pub fn scale_add(&self, other: &ParamVector, c: f64) -> ParamVector {
        assert_eq!(
            self.dim(),
            other.dim(),
            "scale_add dimension mismatch: {} vs {}",
            self.dim(),
            other.dim()
        );
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        ParamVector::from_vec(values)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &ParamVector) -> ParamVector {
        assert_eq!(
            self.dim(),
            other.dim(),
            "hadamard dimension mismatch: {} vs {}",
            self.dim(),
            other.dim()
        );
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        ParamVector::from_vec(values)
    }

    /// In-place `self += c * other`. Used by hot loops; the result obeys the
    /// same finiteness contract as the pure operations.
    pub fn axpy(&mut self, c: f64, other: &ParamVector) {
        assert_eq!(
            self.dim(),
            other.dim(),
            "axpy dimension mismatch: {} vs {}",
            self.dim(),
            other.dim()
        );
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        self.debug_check_finite();
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        self.scale_add(other, -1.0)
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot dimension mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "max_abs_diff dimension mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn debug_check_finite(&self) {
        debug_assert!(
            self.values.iter().all(|v| v.is_finite()),
            "ParamVector contains non-finite values"
        );
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    let mut s = h ^ v.wrapping_mul(GOLDEN);
    splitmix64(&mut s)
}

/// Pseudo-client id used for server-side or dataset-level streams.
pub const SERVER: u32 = u32::MAX;

/// What a random stream is consumed for. Separate purposes guarantee that,
/// e.g., mini-batch shuffling never perturbs participation draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    BatchShuffle,
    Participation,
    Fisher,
    Partition,
    Synthetic,
    Subset,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::BatchShuffle => 2,
            Purpose::Participation => 3,
            Purpose::Fisher => 4,
            Purpose::Partition => 5,
            Purpose::Synthetic => 6,
            Purpose::Subset => 7,
        }
    }
}

/// Deterministic random stream keyed by `(root_seed, client, round, purpose)`.
///
/// Identical keys yield identical sample sequences regardless of execution
/// order. The generator is splitmix64 over a key-derived state; it is not
/// cryptographic and must never be used for secrets.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    spare_gaussian: Option<f64>,
}

impl RngStream {
    pub fn new(root_seed: u64, client: u32, round: u32, purpose: Purpose) -> Self {
        let mut h = mix(0, root_seed);
        h = mix(h, client as u64 + 1);
        h = mix(h, round as u64 + 1);
        h = mix(h, purpose.tag());
        RngStream {
            state: h,
            spare_gaussian: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; safe to pass through `ln`.
    #[inline]
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. Modulo bias is negligible for simulation
    /// ranges (n far below 2^64).
    #[inline]
    pub fn gen_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0, "gen_range on empty range");
        (self.next_u64() % n as u64) as usize
    }

    pub fn gen_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// One N(mean, sd^2) sample via Box-Muller, caching the spare.
    pub fn next_gaussian(&mut self, mean: f64, sd: f64) -> f64 {
        assert!(sd >= 0.0, "gaussian requires sd >= 0, got {sd}");
        if let Some(z) = self.spare_gaussian.take() {
            return mean + sd * z;
        }
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(r * theta.sin());
        mean + sd * r * theta.cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.gen_range(i + 1);
            items.swap(i, j);
        }
    }
}

/// `n` Gaussian samples from the stream.
pub fn gaussian(stream: &mut RngStream, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    (0..n).map(|_| stream.next_gaussian(mean, sd)).collect()
}
