//! Numeric literals to exact rationals.

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Largest denominator a source literal may carry.
pub const MAX_DENOMINATOR: i64 = 1_000_000_000;

/// Parses an integer or decimal literal (optional sign, fraction and
/// exponent). Decimals whose reduced denominator exceeds
/// [`MAX_DENOMINATOR`] become the closest rational within that bound.
pub fn parse_rational(text: &str) -> Option<Rational64> {
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.as_bytes().first()? {
        b'-' => (true, &mantissa[1..]),
        b'+' => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut numer: BigInt = digits.parse().ok()?;
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i32;
    if scale.unsigned_abs() > 400 {
        return None;
    }
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    to_rational64(&limit_denominator(&value, &BigInt::from(MAX_DENOMINATOR)))
}

fn to_rational64(r: &BigRational) -> Option<Rational64> {
    Some(Rational64::new(r.numer().to_i64()?, r.denom().to_i64()?))
}

/// Closest rational to `x` with denominator at most `max`.
pub fn limit_denominator(x: &BigRational, max: &BigInt) -> BigRational {
    if x.denom() <= max {
        return x.clone();
    }
    let (mut p0, mut q0, mut p1, mut q1) = (BigInt::zero(), BigInt::one(), BigInt::one(), BigInt::zero());
    let (mut n, mut d) = (x.numer().clone(), x.denom().clone());
    loop {
        let a = n.div_floor(&d);
        let q2 = &q0 + &a * &q1;
        if &q2 > max {
            break;
        }
        let p2 = &p0 + &a * &p1;
        p0 = std::mem::replace(&mut p1, p2);
        q0 = std::mem::replace(&mut q1, q2);
        let r = &n - &a * &d;
        n = std::mem::replace(&mut d, r);
        if d.is_zero() {
            break;
        }
    }
    let k = (max - &q0) / &q1;
    let bound1 = BigRational::new(&p0 + &k * &p1, &q0 + &k * &q1);
    let bound2 = BigRational::new(p1, q1);
    if (&bound2 - x).abs() <= (&bound1 - x).abs() {
        bound2
    } else {
        bound1
    }
}

/// Renders a rational as a literal that parses back to the same value.
pub fn format_rational(r: &Rational64) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    let neg = r.numer() < &0;
    let mut n = r.numer().unsigned_abs() as u128;
    let d = *r.denom() as u128;
    let mut s = String::new();
    if neg {
        s.push('-');
    }
    s.push_str(&(n / d).to_string());
    s.push('.');
    n %= d;
    // 30 fraction digits pin any denominator up to 10^9 on re-parse
    for _ in 0..30 {
        if n == 0 {
            break;
        }
        n *= 10;
        s.push(char::from(b'0' + (n / d) as u8));
        n %= d;
    }
    s
}
