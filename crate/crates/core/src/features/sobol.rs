//! Gray-code Sobol sequence with Joe-Kuo direction numbers.

use crate::error::{Error, Result};

const TABLE: &str = include_str!("../../data/sobol_directions.txt");
const BITS: usize = 32;

/// Dimensions covered by the bundled direction-number table.
pub const MAX_DIMENSIONS: usize = 1024;

#[derive(Clone, Debug)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl Sobol {
    /// A generator positioned just after the all-zero point, so the first call
    /// to [`Sobol::next_point`] yields `(0.5, ..., 0.5)`.
    pub fn new(dimensions: usize) -> Result<Self> {
        if dimensions == 0 {
            return Err(Error::InvalidArgument("Sobol dimension must be at least 1".into()));
        }
        if dimensions > MAX_DIMENSIONS {
            return Err(Error::InvalidArgument(format!(
                "Sobol dimension {dimensions} exceeds the direction-number table ({MAX_DIMENSIONS})"
            )));
        }
        let mut directions = Vec::with_capacity(dimensions);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        directions.push(first);
        for line in TABLE.lines().skip(1).take(dimensions - 1) {
            directions.push(parse_row(line));
        }
        Ok(Sobol { directions, state: vec![0; dimensions], index: 0 })
    }

    pub fn dimensions(&self) -> usize {
        self.directions.len()
    }

    /// Number of points emitted so far (the skipped zero point excluded).
    pub fn emitted(&self) -> u64 {
        self.index
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        // Flip the direction of the lowest zero bit of the running index.
        let c = (!self.index).trailing_zeros() as usize;
        assert!(c < BITS, "Sobol sequence exhausted after 2^32 - 1 points");
        for (x, dir) in self.state.iter_mut().zip(&self.directions) {
            *x ^= dir[c];
        }
        self.index += 1;
        let scale = 1.0 / (1u64 << BITS) as f64;
        self.state.iter().map(|&x| x as f64 * scale).collect()
    }
}

impl Iterator for Sobol {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        Some(self.next_point())
    }
}

fn parse_row(line: &str) -> [u32; BITS] {
    let nums: Vec<u32> = line.split_whitespace().map(|t| t.parse().expect("direction table")).collect();
    let (s, a) = (nums[1] as usize, nums[2]);
    let m = &nums[3..3 + s];
    let mut v = [0u32; BITS];
    for k in 0..BITS {
        v[k] = if k < s {
            m[k] << (BITS - 1 - k)
        } else {
            let mut x = v[k - s] ^ (v[k - s] >> s);
            for j in 1..s {
                if (a >> (s - 1 - j)) & 1 == 1 {
                    x ^= v[k - j];
                }
            }
            x
        };
    }
    v
}
