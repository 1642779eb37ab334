/// The splitmix64 generator. Used for toy-model weights and for the
/// deterministic tie-breaking noise in affinity propagation; it is trivial to
/// reproduce bit-for-bit in any language.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-0.5, 0.5)`, built from the top 24 bits so the value is
    /// exactly representable as an `f32`.
    pub fn next_centered_f32(&mut self) -> f32 {
        let top = (self.next_u64() >> 40) as f32;
        top / 16_777_216.0 - 0.5
    }
}
