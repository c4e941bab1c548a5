//! Counter-based random number streams.
//!
//! Every stream is a pure function of `(seed, stream_id, counter)`, so
//! path `i` always sees the same increments no matter how many paths are
//! simulated or how the work is split across threads.

const PHI: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a named sub-stream id from a top-level seed, so the forward
/// simulation, the regression cloud, the hypothesis checkers etc. consume
/// disjoint streams of the same seed.
pub fn substream(seed: u64, label: &str) -> u64 {
    let mut h = splitmix64(seed ^ 0x51ed_270b);
    for b in label.bytes() {
        h = splitmix64(h ^ u64::from(b).wrapping_mul(PHI));
    }
    h
}

/// A counter-based stream: `next` hashes an incrementing counter with a
/// fixed per-stream key.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
    cached_normal: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = splitmix64(splitmix64(seed).wrapping_add(splitmix64(stream_id ^ PHI)));
        Stream {
            key,
            counter: 0,
            cached_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix64(self.key ^ self.counter.wrapping_mul(PHI))
    }

    /// Uniform draw in the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        // 53 significant bits, offset by half an ulp to avoid exact 0.
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via Box-Muller, one spare value cached.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fills `out` with standard normal draws.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    /// Uniform point in the ball of given radius around the origin.
    pub fn point_in_ball(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        // Gaussian direction, radial inverse-cdf for the uniform ball law.
        let mut x: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let r = radius * self.uniform().powf(1.0 / dim as f64);
        for v in x.iter_mut() {
            *v *= r / norm;
        }
        x
    }
}
