//! Deterministic inputs shared by the benchmarks.

/// Small xorshift generator so inputs are identical across runs without
/// pulling a RNG crate into the benchmark build.
pub struct XorShift(u64);

impl XorShift {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform on [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Approximately normal via the sum of twelve uniforms.
    pub fn normalish(&mut self) -> f64 {
        (0..12).map(|_| self.unit()).sum::<f64>() - 6.0
    }
}

/// `n` draws with the given location and scale.
pub fn sample(rng: &mut XorShift, n: usize, loc: f64, scale: f64) -> Vec<f64> {
    (0..n).map(|_| loc + scale * rng.normalish()).collect()
}

/// `n` Likert-style integer scores on 1..=levels.
pub fn likert(rng: &mut XorShift, n: usize, levels: u64) -> Vec<f64> {
    (0..n).map(|_| (rng.next_u64() % levels + 1) as f64).collect()
}

/// A survey-shaped CSV with a boolean group, a categorical column, two
/// numeric scores and roughly 2% blank cells.
pub fn survey_csv(rows: usize, seed: u64) -> String {
    let mut rng = XorShift::new(seed);
    let mut out = String::from("student_id,used_tool,age_group,final_score,likert_score\n");
    for i in 0..rows {
        let used = rng.next_u64() % 2 == 0;
        let band = ["18-24", "25-34", "35+"][(rng.next_u64() % 3) as usize];
        let score = 75.0 + if used { 3.0 } else { 0.0 } + 8.0 * rng.normalish();
        let blank = rng.unit() < 0.02;
        let likert = rng.next_u64() % 5 + 1;
        if blank {
            out.push_str(&format!("s{i:06},{used},{band},,{likert}\n"));
        } else {
            out.push_str(&format!("s{i:06},{used},{band},{score:.2},{likert}\n"));
        }
    }
    out
}
