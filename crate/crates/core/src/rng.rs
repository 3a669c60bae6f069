//! Seedable, label-addressed random streams.
//!
//! Every stream is a xoshiro256++ generator whose 256-bit state is expanded by
//! SplitMix64 from `mix(master_seed, fnv1a64(label))`. Gaussians come from
//! Box–Muller over 53-bit uniforms, using both outputs of each pair.

/// Stream labels used by the experiment drivers.
pub mod labels {
    pub const X: &str = "X";
    pub const W0: &str = "W0";
    pub const BETA0: &str = "beta0";
    pub const B: &str = "b";
    pub const TEACHER_W: &str = "teacher_W";
    pub const TEACHER_BETA: &str = "teacher_beta";

    pub fn repeat(k: usize) -> String {
        format!("rep{k}")
    }
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[derive(Clone, Debug)]
pub struct Xoshiro256PlusPlus {
    s: [u64; 4],
}

impl Xoshiro256PlusPlus {
    pub fn from_splitmix(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let s = [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()];
        Xoshiro256PlusPlus { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Clone, Debug)]
pub struct RngStream {
    gen: Xoshiro256PlusPlus,
    stream_id: u64,
    spare: Option<f64>,
}

/// Derives the stream for `(master_seed, label)`.
pub fn derive_stream(master_seed: u64, label: &str) -> RngStream {
    let stream_id = fnv1a64(label.as_bytes());
    let mixed = SplitMix64::new(master_seed).next_u64() ^ stream_id;
    RngStream {
        gen: Xoshiro256PlusPlus::from_splitmix(mixed),
        stream_id,
        spare: None,
    }
}

impl RngStream {
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform on (0, 1].
    fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG_53
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64], std: f64) {
        for v in out {
            *v = std * self.standard_normal();
        }
    }

    /// `count` i.i.d. draws from N(0, std²).
    pub fn gaussian(&mut self, count: usize, std: f64) -> Vec<f64> {
        assert!(std > 0.0, "gaussian std must be positive");
        let mut v = vec![0.0; count];
        self.fill_gaussian(&mut v, std);
        v
    }
}
