//! Natural cubic spline fitting, forward-difference transformation and the
//! fixed-point interpolator model.
//!
//! A segment is a cubic `p(τ) = a + bτ + cτ² + dτ³` on `τ ∈ [0, 1]` played
//! over `N` cycles. The interpolator only adds: it emits `u0` and then
//! performs `u0 += u1; u1 += u2; u2 += u3` once per cycle, so cycle `k`
//! emits `p(k/N)`.
//!
//! Quantized coefficients are 40-bit fields. The higher-order terms carry an
//! implied binary point that depends on the segment duration: with
//! `s = ceil(log2 N)`, coefficient `u_j` is stored as the signed mantissa
//! `round(u_j · 2^(j·s − g))`, where `g` is a small per-word headroom shift
//! picked so the mantissa fits. Internal accumulators hold `3s` fractional
//! bits in 128-bit integers.

use num_bigint::BigInt;
use num_traits::{FromPrimitive, Num, One, ToPrimitive};
use thiserror::Error;

use crate::config::{Param, AMP_FULL_SCALE, FTW_CLOCK_HZ, WORD_BITS, WORD_MASK};

/// Largest duration exponent used for the implied binary point. Longer
/// segments still play correctly but lose precision on curved trajectories.
pub const MAX_DURATION_SHIFT: u32 = 28;
/// Largest headroom shift representable in the word metadata.
pub const MAX_COEF_SHIFT: u8 = 63;

const MANTISSA_MAX: i64 = (1 << 39) - 1;
const MANTISSA_MIN: i64 = -(1 << 39);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplineError {
    #[error("natural cubic spline needs at least two knots, got {0}")]
    TooFewKnots(usize),
    #[error("{param} value {value} is outside the representable range")]
    RangeOverflow { param: Param, value: f64 },
    #[error("{param} accumulator left its range at cycle {cycle}")]
    AccumulatorOverflow { param: Param, cycle: u64 },
    #[error("segment duration must be at least one cycle")]
    ZeroCycles,
}

/// Power-basis cubic on the unit interval, played over `cycles` cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSegment<T = f64> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub cycles: u64,
}

impl<T: Clone + Num> CubicSegment<T> {
    pub fn constant(value: T, cycles: u64) -> Self {
        CubicSegment {
            a: value,
            b: T::zero(),
            c: T::zero(),
            d: T::zero(),
            cycles,
        }
    }

    pub fn eval(&self, tau: T) -> T {
        let (a, b, c, d) = (
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
        );
        a + tau.clone() * (b + tau.clone() * (c + tau * d))
    }
}

impl CubicSegment<f64> {
    pub fn end_value(&self) -> f64 {
        self.a + self.b + self.c + self.d
    }

    pub fn scaled(&self, k: f64) -> CubicSegment<f64> {
        CubicSegment {
            a: self.a * k,
            b: self.b * k,
            c: self.c * k,
            d: self.d * k,
            cycles: self.cycles,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.b == 0.0 && self.c == 0.0 && self.d == 0.0
    }
}

/// Forward-difference accumulator coefficients. `cycles` is the fifth
/// parameter the interpolator needs to place its binary point.
#[derive(Debug, Clone, PartialEq)]
pub struct FdCoefficients<T = f64> {
    pub u0: T,
    pub u1: T,
    pub u2: T,
    pub u3: T,
    pub cycles: u64,
}

/// Fits a natural cubic spline through equally spaced knots and returns one
/// segment per knot interval, each parameterized on `τ ∈ [0, 1]`. The
/// returned segments carry `cycles = 0`; callers assign durations.
pub fn fit_natural_cubic(knots: &[f64]) -> Result<Vec<CubicSegment>, SplineError> {
    let k = knots.len();
    if k < 2 {
        return Err(SplineError::TooFewKnots(k));
    }
    let m = second_derivatives(knots);
    Ok((0..k - 1)
        .map(|i| {
            let (y0, y1) = (knots[i], knots[i + 1]);
            let (m0, m1) = (m[i], m[i + 1]);
            CubicSegment {
                a: y0,
                b: (y1 - y0) - (2.0 * m0 + m1) / 6.0,
                c: m0 / 2.0,
                d: (m1 - m0) / 6.0,
                cycles: 0,
            }
        })
        .collect())
}

/// Second derivatives at the knots with `M₀ = M_{K−1} = 0`, from the
/// tridiagonal system `M_{i−1} + 4M_i + M_{i+1} = 6(y_{i−1} − 2y_i + y_{i+1})`
/// solved with the Thomas algorithm.
pub fn second_derivatives(knots: &[f64]) -> Vec<f64> {
    let k = knots.len();
    let mut m = vec![0.0; k];
    if k < 3 {
        return m;
    }
    let n = k - 2;
    let mut diag = vec![4.0; n];
    let mut rhs: Vec<f64> = (1..=n)
        .map(|i| 6.0 * (knots[i - 1] - 2.0 * knots[i] + knots[i + 1]))
        .collect();
    for i in 1..n {
        let w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    m[n] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
    }
    m
}

/// Transforms a cubic into additive accumulator coefficients:
/// `u0 = a`, `u1 = bh + ch² + dh³`, `u2 = 2ch² + 6dh³`, `u3 = 6dh³` with `h = 1/N`.
pub fn to_forward_difference<T>(seg: &CubicSegment<T>) -> FdCoefficients<T>
where
    T: Clone + Num + FromPrimitive,
{
    let n = T::from_u64(seg.cycles.max(1)).expect("cycle count representable");
    let h = T::one() / n;
    let h2 = h.clone() * h.clone();
    let h3 = h2.clone() * h.clone();
    let two = T::from_u8(2).unwrap();
    let six = T::from_u8(6).unwrap();
    let (b, c, d) = (seg.b.clone(), seg.c.clone(), seg.d.clone());
    FdCoefficients {
        u0: seg.a.clone(),
        u1: b * h + c.clone() * h2.clone() + d.clone() * h3.clone(),
        u2: two * c * h2 + six.clone() * d.clone() * h3.clone(),
        u3: six * d * h3,
        cycles: seg.cycles,
    }
}

/// Output format of one parameter kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointFormat {
    pub param: Param,
    /// Bits of the value the interpolator emits.
    pub output_bits: u32,
    /// Physical value of one output LSB (Hz, radians or full-scale fraction).
    pub lsb: f64,
}

impl FixedPointFormat {
    pub fn of(param: Param) -> FixedPointFormat {
        match param {
            Param::Amp => FixedPointFormat {
                param,
                output_bits: 16,
                lsb: 1.0 / AMP_FULL_SCALE as f64,
            },
            Param::Frq => FixedPointFormat {
                param,
                output_bits: WORD_BITS,
                lsb: FTW_CLOCK_HZ / (1u64 << WORD_BITS) as f64,
            },
            Param::Phs | Param::Frm => FixedPointFormat {
                param,
                output_bits: WORD_BITS,
                lsb: std::f64::consts::TAU / (1u64 << WORD_BITS) as f64,
            },
        }
    }

    /// Physical value expressed in output LSBs, before rounding.
    pub fn to_lsb(&self, value: f64) -> f64 {
        value / self.lsb
    }

    /// Encodes a physical value into the 40-bit field.
    pub fn encode(&self, value: f64) -> Result<u64, SplineError> {
        let v = self.to_lsb(value).round();
        self.encode_lsb(v, value)
    }

    fn encode_lsb(&self, v: f64, original: f64) -> Result<u64, SplineError> {
        let overflow = || SplineError::RangeOverflow {
            param: self.param,
            value: original,
        };
        if !v.is_finite() {
            return Err(overflow());
        }
        match self.param {
            Param::Amp => {
                if v.abs() > AMP_FULL_SCALE as f64 {
                    return Err(overflow());
                }
                Ok(amp_field(v as i64))
            }
            Param::Frq => {
                if v < 0.0 || v > WORD_MASK as f64 {
                    return Err(overflow());
                }
                Ok(v as u64)
            }
            Param::Phs | Param::Frm => {
                let turns = (v / (1u64 << WORD_BITS) as f64).floor();
                let wrapped = v - turns * (1u64 << WORD_BITS) as f64;
                Ok((wrapped as i64 as u64) & WORD_MASK)
            }
        }
    }

    /// Decodes a 40-bit field into physical units.
    pub fn decode(&self, word: u64) -> f64 {
        self.field_value(word) as f64 * self.lsb
    }

    /// Signed integer value of a raw field.
    pub fn field_value(&self, word: u64) -> i64 {
        match self.param {
            Param::Amp => (word & 0xffff) as u16 as i16 as i64,
            _ => (word & WORD_MASK) as i64,
        }
    }
}

fn amp_field(v: i64) -> u64 {
    (v as i16 as u16) as u64
}

fn sign_extend40(v: u64) -> i64 {
    ((v << 24) as i64) >> 24
}

fn to_field40(v: i64) -> u64 {
    (v as u64) & WORD_MASK
}

/// Exponent of the implied binary point for a segment of `cycles` cycles.
pub fn duration_shift(cycles: u64) -> u32 {
    let s = if cycles <= 1 {
        0
    } else {
        64 - (cycles - 1).leading_zeros()
    };
    s.min(MAX_DURATION_SHIFT)
}

/// Quantized forward-difference coefficients exactly as carried in a
/// pulselet word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedFd {
    pub param: Param,
    /// Raw 40-bit start value field.
    pub u0: u64,
    /// Signed 40-bit mantissas of the higher-order terms.
    pub u1: i64,
    pub u2: i64,
    pub u3: i64,
    /// Headroom shift `g`.
    pub coef_shift: u8,
    pub cycles: u64,
}

impl FixedFd {
    pub fn constant(param: Param, u0: u64, cycles: u64) -> FixedFd {
        FixedFd {
            param,
            u0,
            u1: 0,
            u2: 0,
            u3: 0,
            coef_shift: 0,
            cycles,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.u1 == 0 && self.u2 == 0 && self.u3 == 0
    }

    /// Rebuilds from the four raw 40-bit payload fields of a word.
    pub fn from_fields(param: Param, fields: [u64; 4], coef_shift: u8, cycles: u64) -> FixedFd {
        FixedFd {
            param,
            u0: fields[0] & WORD_MASK,
            u1: sign_extend40(fields[1]),
            u2: sign_extend40(fields[2]),
            u3: sign_extend40(fields[3]),
            coef_shift,
            cycles,
        }
    }

    pub fn fields(&self) -> [u64; 4] {
        [
            self.u0 & WORD_MASK,
            to_field40(self.u1),
            to_field40(self.u2),
            to_field40(self.u3),
        ]
    }

    fn start_value(&self) -> i64 {
        FixedPointFormat::of(self.param).field_value(self.u0)
    }

    /// Output of the interpolator at cycle `k` (k may equal `cycles`, giving
    /// the value the next cycle would emit), evaluated in closed form.
    pub fn value_at(&self, k: u64) -> Result<u64, SplineError> {
        let s = duration_shift(self.cycles);
        let frac = 3 * s;
        let g = self.coef_shift as u32;
        let k = BigInt::from(k);
        let one = BigInt::one();
        let c2 = &k * (&k - &one) / 2;
        let c3 = &c2 * (&k - BigInt::from(2)) / 3;
        let mut acc = BigInt::from(self.start_value()) << frac;
        acc += &k * (BigInt::from(self.u1) << (2 * s + g));
        acc += c2 * (BigInt::from(self.u2) << (s + g));
        acc += c3 * (BigInt::from(self.u3) << g);
        if frac > 0 {
            acc += BigInt::one() << (frac - 1);
        }
        let out = acc >> frac;
        self.finish(out, 0)
    }

    fn finish(&self, out: BigInt, cycle: u64) -> Result<u64, SplineError> {
        match self.param {
            Param::Phs | Param::Frm => {
                let m = BigInt::from(1u64 << WORD_BITS);
                let r = ((out % &m) + &m) % &m;
                Ok(r.to_u64().unwrap())
            }
            Param::Frq => match out.to_u64() {
                Some(v) if v <= WORD_MASK => Ok(v),
                _ => Err(SplineError::AccumulatorOverflow {
                    param: self.param,
                    cycle,
                }),
            },
            Param::Amp => match out.to_i64() {
                Some(v) if v.abs() <= AMP_FULL_SCALE => Ok(amp_field(v)),
                _ => Err(SplineError::AccumulatorOverflow {
                    param: self.param,
                    cycle,
                }),
            },
        }
    }
}

/// Quantizes real-valued forward-difference coefficients given in physical
/// units. Values are rounded half away from zero.
pub fn quantize(fd: &FdCoefficients<f64>, param: Param) -> Result<FixedFd, SplineError> {
    let fmt = FixedPointFormat::of(param);
    let scaled = FdCoefficients {
        u0: fmt.to_lsb(fd.u0),
        u1: fmt.to_lsb(fd.u1),
        u2: fmt.to_lsb(fd.u2),
        u3: fmt.to_lsb(fd.u3),
        cycles: fd.cycles,
    };
    quantize_lsb(&scaled, param)
}

/// Same as [`quantize`] for coefficients already expressed in output LSBs.
pub fn quantize_lsb(fd: &FdCoefficients<f64>, param: Param) -> Result<FixedFd, SplineError> {
    if fd.cycles == 0 {
        return Err(SplineError::ZeroCycles);
    }
    let fmt = FixedPointFormat::of(param);
    let u0 = fmt.encode_lsb(fd.u0.round(), fd.u0 * fmt.lsb)?;
    let lsb = [fd.u1, fd.u2, fd.u3];
    if lsb.iter().all(|&u| u == 0.0) {
        return Ok(FixedFd::constant(param, u0, fd.cycles));
    }
    if !param.wraps() {
        let n = fd.cycles as f64;
        let end = fd.u0
            + n * lsb[0]
            + n * (n - 1.0) / 2.0 * lsb[1]
            + n * (n - 1.0) * (n - 2.0) / 6.0 * lsb[2];
        fmt.encode_lsb(end.round(), end * fmt.lsb)?;
    }
    let s = duration_shift(fd.cycles) as i32;
    let mut g: u8 = 0;
    loop {
        let m = [0usize, 1, 2].map(|j| (lsb[j] * 2f64.powi((j as i32 + 1) * s - g as i32)).round());
        let fits = |v: f64| v - 4.0 >= MANTISSA_MIN as f64 && v + 4.0 <= MANTISSA_MAX as f64;
        if m.iter().all(|&v| fits(v)) {
            let m = if g == 0 {
                m.map(|v| v as i64)
            } else {
                best_mantissas(fd, m, s, g, fd.u0.round() - fd.u0)
            };
            return Ok(FixedFd {
                param,
                u0,
                u1: m[0],
                u2: m[1],
                u3: m[2],
                coef_shift: g,
                cycles: fd.cycles,
            });
        }
        if g == MAX_COEF_SHIFT {
            return Err(SplineError::RangeOverflow {
                param,
                value: fd.u1 * fmt.lsb,
            });
        }
        g += 1;
    }
}

/// Picks the mantissas that minimize the largest deviation from the exact
/// trajectory, sampled across the segment. The three basis sequences are
/// strongly correlated, so when a large swing forces a nonzero headroom
/// shift, rounding each mantissa on its own lets the errors stack.
fn best_mantissas(fd: &FdCoefficients<f64>, m: [f64; 3], s: i32, g: u8, u0_err: f64) -> [i64; 3] {
    const R3: i32 = 4;
    const R: i32 = 2;
    let n = fd.cycles;
    let exact = [fd.u1, fd.u2, fd.u3];
    let scale = [0usize, 1, 2].map(|j| 2f64.powi(g as i32 - (j as i32 + 1) * s));
    let samples = if n <= 256 { n } else { 64 };
    let ks: Vec<[f64; 3]> = (0..=samples)
        .map(|i| {
            let k = (n * i / samples) as f64;
            [k, k * (k - 1.0) / 2.0, k * (k - 1.0) * (k - 2.0) / 6.0]
        })
        .collect();
    // The output is rounded to whole LSBs, so score the rounded value.
    let frac = fd.u0 - fd.u0.floor();
    let worst = |c: [f64; 3]| {
        let d = [0, 1, 2].map(|j| c[j] * scale[j] - exact[j]);
        ks.iter()
            .map(|b| {
                let drift = u0_err + b[0] * d[0] + b[1] * d[1] + b[2] * d[2];
                let exact_frac = frac + b[0] * exact[0] + b[1] * exact[1] + b[2] * exact[2];
                let exact_frac = exact_frac - exact_frac.floor();
                ((exact_frac + drift).round() - exact_frac).abs()
            })
            .fold(0.0, f64::max)
    };
    // For each cubic mantissa near its rounded value, solve the lower two in
    // least squares against the remaining error and search around that.
    let mut best = (worst(m), m);
    if best.0 <= 1.0 {
        return m.map(|v| v as i64);
    }
    let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
    for b in &ks {
        a11 += b[0] * b[0] * scale[0] * scale[0];
        a12 += b[0] * b[1] * scale[0] * scale[1];
        a22 += b[1] * b[1] * scale[1] * scale[1];
    }
    let det = a11 * a22 - a12 * a12;
    for d3 in -R3..=R3 {
        let m3 = m[2] + d3 as f64;
        let mut centre = [m[0], m[1]];
        if det.abs() > 1e-9 * a11 * a22 {
            // Residual without the two lower terms, which the solve replaces.
            let (mut r1, mut r2) = (0.0, 0.0);
            for b in &ks {
                let e = u0_err - b[0] * exact[0] - b[1] * exact[1] + b[2] * (m3 * scale[2] - exact[2]);
                r1 -= e * b[0] * scale[0];
                r2 -= e * b[1] * scale[1];
            }
            centre = [(a22 * r1 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det];
        }
        for d1 in -R..=R {
            for d2 in -R..=R {
                let c = [centre[0].round() + d1 as f64, centre[1].round() + d2 as f64, m3];
                if c.iter().any(|&v| v < MANTISSA_MIN as f64 || v > MANTISSA_MAX as f64) {
                    continue;
                }
                let e = worst(c);
                if e < best.0 {
                    best = (e, c);
                }
            }
        }
    }
    best.1.map(|v| v as i64)
}

/// Quantizes a cubic segment given in physical units.
pub fn quantize_segment(seg: &CubicSegment<f64>, param: Param) -> Result<FixedFd, SplineError> {
    quantize(&to_forward_difference(seg), param)
}

/// Cycle-by-cycle additive interpolator for one quantized word.
#[derive(Debug, Clone)]
pub struct Interpolator {
    param: Param,
    acc: [i128; 4],
    frac: u32,
    bias: i128,
    wrap_mask: i128,
    constant: bool,
}

impl Interpolator {
    pub fn new(fd: &FixedFd) -> Interpolator {
        let s = duration_shift(fd.cycles);
        let frac = 3 * s;
        let g = fd.coef_shift as u32;
        let acc = [
            (fd.start_value() as i128) << frac,
            (fd.u1 as i128) << (2 * s + g),
            (fd.u2 as i128) << (s + g),
            (fd.u3 as i128) << g,
        ];
        Interpolator {
            param: fd.param,
            acc,
            frac,
            bias: if frac > 0 { 1i128 << (frac - 1) } else { 0 },
            wrap_mask: (1i128 << (WORD_BITS + frac)) - 1,
            constant: fd.is_constant(),
        }
    }

    /// Current output word (truncating tap after the half-LSB load bias).
    pub fn output(&self, cycle: u64) -> Result<u64, SplineError> {
        let v = (self.acc[0] + self.bias) >> self.frac;
        match self.param {
            Param::Phs | Param::Frm => Ok((v as u64) & WORD_MASK),
            Param::Frq if (0..=WORD_MASK as i128).contains(&v) => Ok(v as u64),
            Param::Amp if v.abs() <= AMP_FULL_SCALE as i128 => Ok(amp_field(v as i64)),
            _ => Err(SplineError::AccumulatorOverflow {
                param: self.param,
                cycle,
            }),
        }
    }

    pub fn step(&mut self) {
        if self.constant {
            return;
        }
        self.acc[0] += self.acc[1];
        self.acc[1] += self.acc[2];
        self.acc[2] += self.acc[3];
        if self.param.wraps() {
            self.acc[0] &= self.wrap_mask;
        }
    }
}

/// Runs a quantized word to completion and returns one output per cycle.
pub fn interpolate(fd: &FixedFd) -> Result<Vec<u64>, SplineError> {
    let mut it = Interpolator::new(fd);
    let mut out = Vec::with_capacity(fd.cycles as usize);
    for k in 0..fd.cycles {
        out.push(it.output(k)?);
        it.step();
    }
    Ok(out)
}

/// Helper for analyses: real forward-difference playback in `f64`.
pub fn play_real(fd: &FdCoefficients<f64>) -> Vec<f64> {
    let (mut u0, mut u1, mut u2) = (fd.u0, fd.u1, fd.u2);
    let mut out = Vec::with_capacity(fd.cycles as usize);
    for _ in 0..fd.cycles {
        out.push(u0);
        u0 += u1;
        u1 += u2;
        u2 += fd.u3;
    }
    out
}
