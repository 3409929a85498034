//! Suppliers of measurement outcome words.

use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub trait MeasurementSource {
    /// Next outcome word of `width` bits, or `None` when exhausted.
    fn measure(&mut self, width: u32) -> Option<u32>;
}

fn mask(width: u32) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1 << width) - 1
    }
}

/// Replays a fixed list of outcomes.
#[derive(Debug, Clone, Default)]
pub struct Scripted {
    values: Vec<u32>,
    pos: usize,
}

impl Scripted {
    pub fn new(values: Vec<u32>) -> Scripted {
        Scripted { values, pos: 0 }
    }

    /// Parses a comma-separated list of integers (binary with `0b`).
    pub fn parse(list: &str) -> Result<Scripted, String> {
        let values = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match s.strip_prefix("0b") {
                Some(b) => u32::from_str_radix(b, 2),
                None => s.parse(),
            })
            .collect::<Result<Vec<u32>, _>>()
            .map_err(|e| format!("bad measurement list '{list}': {e}"))?;
        Ok(Scripted::new(values))
    }
}

impl MeasurementSource for Scripted {
    fn measure(&mut self, width: u32) -> Option<u32> {
        let v = *self.values.get(self.pos)?;
        self.pos += 1;
        Some(v & mask(width))
    }
}

/// Always the same outcome.
#[derive(Debug, Clone, Copy)]
pub struct Fixed(pub u32);

impl MeasurementSource for Fixed {
    fn measure(&mut self, width: u32) -> Option<u32> {
        Some(self.0 & mask(width))
    }
}

/// Uniform pseudo-random outcomes from a seed.
#[derive(Debug, Clone)]
pub struct Seeded(ChaCha8Rng);

impl Seeded {
    pub fn new(seed: u64) -> Seeded {
        Seeded(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl MeasurementSource for Seeded {
    fn measure(&mut self, width: u32) -> Option<u32> {
        Some(self.0.gen::<u32>() & mask(width))
    }
}

/// Reads one outcome per line from a reader (stdin for interactive use).
pub struct Lines<R: BufRead>(pub R);

impl<R: BufRead> MeasurementSource for Lines<R> {
    fn measure(&mut self, width: u32) -> Option<u32> {
        let mut line = String::new();
        self.0.read_line(&mut line).ok()?;
        let s = line.trim();
        let v = match s.strip_prefix("0b") {
            Some(b) => u32::from_str_radix(b, 2).ok()?,
            None => s.parse().ok()?,
        };
        Some(v & mask(width))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_runs_out() {
        let mut s = Scripted::parse("0,1, 0b11").unwrap();
        assert_eq!(s.measure(2), Some(0));
        assert_eq!(s.measure(2), Some(1));
        assert_eq!(s.measure(1), Some(1));
        assert_eq!(s.measure(1), None);
        assert!(Scripted::parse("1,x").is_err());
    }

    #[test]
    fn seeded_is_reproducible() {
        let a: Vec<_> = (0..10).map({
            let mut s = Seeded::new(7);
            move |_| s.measure(4)
        }).collect();
        let mut s = Seeded::new(7);
        assert_eq!(a, (0..10).map(|_| s.measure(4)).collect::<Vec<_>>());
        assert!(a.iter().all(|v| v.unwrap() < 16));
    }

    #[test]
    fn lines() {
        let mut l = Lines("3\n0b10\n".as_bytes());
        assert_eq!(l.measure(8), Some(3));
        assert_eq!(l.measure(8), Some(2));
        assert_eq!(l.measure(8), None);
    }
}
