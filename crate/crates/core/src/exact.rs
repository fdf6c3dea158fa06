//! Exact accumulation of non-negative `f64` values.
//!
//! Every finite non-negative double is an integer multiple of 2^-1074, so the
//! running total is kept as a wide fixed-point integer with that unit. Sums are
//! therefore exact, associative and commutative: any partition of the input and
//! any merge order give the same bits. Rounding happens once, in [`ExactSum::to_f64`].

use std::cmp::Ordering;

const LIMBS: usize = 18;
// Weight of bit 0 is 2^-LSB_EXP.
const LSB_EXP: i32 = 1074;

/// Fixed-point accumulator covering `[2^-1074, 2^78)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ExactSum {
    limbs: [u64; LIMBS],
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExactSum({})", self.to_f64())
    }
}

impl ExactSum {
    pub const fn new() -> Self {
        Self { limbs: [0; LIMBS] }
    }

    pub fn from_f64(x: f64) -> Self {
        let mut s = Self::new();
        s.add_f64(x);
        s
    }

    pub fn from_u64(n: u64) -> Self {
        let mut s = Self::new();
        s.add_u64(n);
        s
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|&l| l == 0)
    }

    /// Adds a finite, non-negative value. Panics otherwise.
    #[inline]
    pub fn add_f64(&mut self, x: f64) {
        assert!(x >= 0.0 && x.is_finite(), "ExactSum accepts finite non-negative values, got {x}");
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        // x = mantissa * 2^(exp), with exp >= -1074
        let (mantissa, exp) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        let offset = (exp + LSB_EXP) as usize;
        self.add_shifted(mantissa, offset);
    }

    #[inline]
    pub fn add_u64(&mut self, n: u64) {
        if n != 0 {
            self.add_shifted(n, LSB_EXP as usize);
        }
    }

    #[inline]
    fn add_shifted(&mut self, value: u64, offset: usize) {
        let limb = offset / 64;
        let shift = offset % 64;
        let wide = (value as u128) << shift;
        let lo = wide as u64;
        let hi = (wide >> 64) as u64;
        let (s, c0) = self.limbs[limb].overflowing_add(lo);
        self.limbs[limb] = s;
        let mut carry = c0 as u64;
        let mut i = limb + 1;
        let mut add = hi;
        while (add != 0 || carry != 0) && i < LIMBS {
            let (s1, c1) = self.limbs[i].overflowing_add(add);
            let (s2, c2) = s1.overflowing_add(carry);
            self.limbs[i] = s2;
            carry = (c1 as u64) + (c2 as u64);
            add = 0;
            i += 1;
        }
        assert!(add == 0 && carry == 0, "ExactSum overflow");
    }

    pub fn add(&mut self, other: &ExactSum) {
        let mut carry = 0u64;
        for i in 0..LIMBS {
            let (s1, c1) = self.limbs[i].overflowing_add(other.limbs[i]);
            let (s2, c2) = s1.overflowing_add(carry);
            self.limbs[i] = s2;
            carry = (c1 as u64) + (c2 as u64);
        }
        assert!(carry == 0, "ExactSum overflow");
    }

    /// `|self - other|`, exactly.
    pub fn abs_diff(&self, other: &ExactSum) -> ExactSum {
        let (big, small) = match self.cmp(other) {
            Ordering::Less => (other, self),
            _ => (self, other),
        };
        let mut out = ExactSum::new();
        let mut borrow = 0u64;
        for i in 0..LIMBS {
            let (d1, b1) = big.limbs[i].overflowing_sub(small.limbs[i]);
            let (d2, b2) = d1.overflowing_sub(borrow);
            out.limbs[i] = d2;
            borrow = (b1 as u64) + (b2 as u64);
        }
        debug_assert_eq!(borrow, 0);
        out
    }

    /// `self - other` as a signed double (one rounding).
    pub fn signed_diff_f64(&self, other: &ExactSum) -> f64 {
        let mag = self.abs_diff(other).to_f64();
        if self < other {
            -mag
        } else {
            mag
        }
    }

    /// Nearest double (ties to even) to the exact total.
    pub fn to_f64(&self) -> f64 {
        let top = match self.limbs.iter().rposition(|&l| l != 0) {
            Some(i) => i,
            None => return 0.0,
        };
        if top == 0 {
            return ldexp(self.limbs[0] as f64, -LSB_EXP);
        }
        // Take the 128 most significant limb bits, fold the rest into a sticky bit
        // so the u128 -> f64 conversion rounds correctly.
        let mut head = ((self.limbs[top] as u128) << 64) | self.limbs[top - 1] as u128;
        if self.limbs[..top - 1].iter().any(|&l| l != 0) {
            head |= 1;
        }
        let scale = 64 * (top as i32 - 1) - LSB_EXP;
        ldexp(head as f64, scale)
    }
}

impl PartialOrd for ExactSum {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExactSum {
    fn cmp(&self, other: &Self) -> Ordering {
        for i in (0..LIMBS).rev() {
            match self.limbs[i].cmp(&other.limbs[i]) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

impl<'a> std::iter::Sum<&'a f64> for ExactSum {
    fn sum<I: Iterator<Item = &'a f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for &x in iter {
            s.add_f64(x);
        }
        s
    }
}

fn ldexp(mut x: f64, mut exp: i32) -> f64 {
    // step in ranges where 2^k is a normal double
    while exp > 1000 {
        x *= 2f64.powi(1000);
        exp -= 1000;
    }
    while exp < -1000 {
        x *= 2f64.powi(-1000);
        exp += 1000;
    }
    x * 2f64.powi(exp)
}

/// Mean of non-negative values, exact up to the final rounding. `None` when empty.
pub fn exact_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut s = ExactSum::new();
    let mut n = 0u64;
    for v in values {
        s.add_f64(v);
        n += 1;
    }
    (n > 0).then(|| s.to_f64() / n as f64)
}
