//! Dual-tone DDS bookkeeping: counter-synchronized phase accumulators,
//! the persistent frame accumulator and Stark frame ramps.

use crate::config::{CLOCK_HZ, TONES, WORD_MASK};
use crate::pulse::ModulationNode;

/// Phase an oscillator at `ftw` would have reached after `counter` cycles
/// had it run uninterrupted from zero: the low 40 bits of the full product.
pub fn sync_phase(counter: u64, ftw: u64) -> u64 {
    ((counter as u128 * ftw as u128) & WORD_MASK as u128) as u64
}

/// Frame multiplier for `tone`: 0 when the frame is not applied, -1 when
/// applied inverted.
pub fn frame_multiplier(apply_mask: u8, invert_mask: u8, tone: u8) -> i64 {
    let bit = 1 << tone;
    match (apply_mask & bit != 0, invert_mask & bit != 0) {
        (false, _) => 0,
        (true, false) => 1,
        (true, true) => -1,
    }
}

/// `phase + offset + m * frame` modulo a full turn.
pub fn effective_phase(phase: u64, offset: u64, frame: u64, m: i64) -> u64 {
    let f = match m {
        0 => 0,
        1 => frame,
        _ => frame.wrapping_neg(),
    };
    phase.wrapping_add(offset).wrapping_add(f) & WORD_MASK
}

/// Oscillator and frame state of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DdsChannel {
    pub phase: [u64; TONES],
    pub ftw: [u64; TONES],
    /// Committed frame rotation; persists across pulses and gates.
    pub frame: u64,
}

impl DdsChannel {
    pub fn sync(&mut self, tone: usize, counter: u64, ftw: u64) {
        self.phase[tone] = sync_phase(counter, ftw);
    }

    /// Advances both tones by one cycle at their current tuning words.
    pub fn advance(&mut self) {
        for t in 0..TONES {
            self.phase[t] = self.phase[t].wrapping_add(self.ftw[t]) & WORD_MASK;
        }
    }

    pub fn commit_frame(&mut self, delta: u64) {
        self.frame = self.frame.wrapping_add(delta) & WORD_MASK;
    }
}

/// Elementwise tone product used as the intensity proxy for Stark shifts.
pub fn intensity_product(tone0: &[f64], tone1: &[f64]) -> Vec<f64> {
    tone0.iter().zip(tone1).map(|(a, b)| a * b).collect()
}

/// Cumulative trapezoidal integral of equally spaced samples.
pub fn cumulative_trapezoid(samples: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in samples.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * dt;
        out.push(acc);
    }
    out.truncate(samples.len());
    out
}

/// FRM spline compensating a Stark shift: knots are `scale` times the
/// running integral of the intensity profile, in radians when `scale` is in
/// radians per second per unit intensity.
pub fn stark_frame_from_amplitude(intensity: &[f64], scale: f64, duration_cycles: u64) -> ModulationNode {
    if intensity.len() < 2 {
        let t = duration_cycles as f64 / CLOCK_HZ;
        let v = intensity.first().copied().unwrap_or(0.0);
        return ModulationNode::Spline(vec![0.0, scale * v * t]);
    }
    let dt = duration_cycles as f64 / CLOCK_HZ / (intensity.len() - 1) as f64;
    ModulationNode::Spline(
        cumulative_trapezoid(intensity, dt)
            .into_iter()
            .map(|v| v * scale)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sync_examples() {
        assert_eq!(sync_phase(0, 0x12345), 0);
        assert_eq!(sync_phase(5, 1), 5);
        assert_eq!(sync_phase(0x100, 0x200), 0x20000);
        assert_eq!(sync_phase(1 << 39, 2), 0);
    }

    #[test]
    fn masks() {
        let frame = 1u64 << 38;
        let m0 = frame_multiplier(0b01, 0b10, 0);
        let m1 = frame_multiplier(0b11, 0b10, 1);
        assert_eq!(effective_phase(0, 0, frame, m0), frame);
        assert_eq!(effective_phase(0, 0, frame, m1), (1 << 40) - frame);
        assert_eq!(effective_phase(7, 3, frame, 0), 10);
    }

    #[test]
    fn constant_intensity_gives_linear_ramp() {
        let n = 4096;
        let ModulationNode::Spline(k) = stark_frame_from_amplitude(&[0.5; 5], 2.0, n) else {
            panic!()
        };
        let t = n as f64 / CLOCK_HZ;
        assert!((k[4] - 2.0 * 0.5 * t).abs() < 1e-12 * t);
        for w in k.windows(3) {
            assert!(((w[2] - w[1]) - (w[1] - w[0])).abs() < 1e-18);
        }
        let ModulationNode::Spline(z) = stark_frame_from_amplitude(&[0.0; 4], 2.0, n) else {
            panic!()
        };
        assert!(z.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn uninterrupted_matches_product(ftw in 0u64..(1 << 40), n in 0u64..2000) {
            let mut d = DdsChannel { ftw: [ftw, 0], ..Default::default() };
            for _ in 0..n {
                d.advance();
            }
            prop_assert_eq!(d.phase[0], sync_phase(n, ftw));
        }
    }
}
