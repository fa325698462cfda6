//! Fixed 64-bit generator used for seeded weight initialisation.
//!
//! The algorithm is part of the weights contract: xorshift64* (shifts 12,
//! 25, 27; multiplier `0x2545F4914F6CDD1D`) with the state seeded by one
//! SplitMix64 step of the user seed. Doubles take the top 53 bits of each
//! output. Any implementation following this description reproduces the
//! same weights bit for bit.

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const XORSHIFT_MUL: u64 = 0x2545_F491_4F6C_DD1D;

pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let state = splitmix64(seed);
        // all-zero state is a fixed point
        Self {
            state: if state == 0 { SPLITMIX_GAMMA } else { state },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MUL)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`.
    pub fn next_signed(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_sequence() {
        // Reference values computed independently from the published
        // SplitMix64 / xorshift64* definitions.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        let mut r = XorShift64Star::new(42);
        assert_eq!(r.next_u64(), 0x31B0_ECE7_C4F6_97A2);
        assert_eq!(r.next_u64(), 0x9008_A3B1_CB68_6F03);
        assert_eq!(r.next_u64(), 0x7C71_73AB_D97B_E16F);
        assert_ne!(XorShift64Star::new(43).next_u64(), 0x31B0_ECE7_C4F6_97A2);
    }

    #[test]
    fn unit_interval() {
        let mut r = XorShift64Star::new(7);
        for _ in 0..10_000 {
            let v = r.next_signed();
            assert!((-1.0..1.0).contains(&v));
        }
    }
}
