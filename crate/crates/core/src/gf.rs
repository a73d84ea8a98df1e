//! Arithmetic in the binary finite field GF(2^u), 1 <= u <= 16.
//!
//! Elements are polynomials over GF(2) in the standard basis, stored as the
//! integer whose bits are the coefficients. Multiplication is carry-less
//! polynomial multiplication reduced by a fixed irreducible polynomial per
//! field exponent (see [`REDUCTION_POLYS`]), so results are bit-reproducible.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GfError {
    #[error("unsupported field exponent u={0} (supported: 1..=16)")]
    UnsupportedExponent(u32),
    #[error("reduction polynomial {poly:#x} is not a degree-{u} irreducible polynomial")]
    BadReductionPoly { poly: u32, u: u32 },
    #[error("value {value} out of range for GF(2^{u})")]
    OutOfRange { value: u32, u: u32 },
    #[error("field mismatch: element of GF(2^{elem_u}) used in GF(2^{spec_u})")]
    FieldMismatch { elem_u: u32, spec_u: u32 },
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

/// Fixed reduction polynomial per exponent, index `u - 1`.
///
/// Each entry is a low-weight irreducible polynomial of degree u, encoded as a
/// bitmask (bit i = coefficient of x^i):
///
/// | u  | polynomial                  | mask     |
/// |----|-----------------------------|----------|
/// | 1  | x + 1                       | 0x3      |
/// | 2  | x^2 + x + 1                 | 0x7      |
/// | 3  | x^3 + x + 1                 | 0xB      |
/// | 4  | x^4 + x + 1                 | 0x13     |
/// | 5  | x^5 + x^2 + 1               | 0x25     |
/// | 6  | x^6 + x + 1                 | 0x43     |
/// | 7  | x^7 + x + 1                 | 0x83     |
/// | 8  | x^8 + x^4 + x^3 + x + 1     | 0x11B    |
/// | 9  | x^9 + x^4 + 1               | 0x211    |
/// | 10 | x^10 + x^3 + 1              | 0x409    |
/// | 11 | x^11 + x^2 + 1              | 0x805    |
/// | 12 | x^12 + x^6 + x^4 + x + 1    | 0x1053   |
/// | 13 | x^13 + x^4 + x^3 + x + 1    | 0x201B   |
/// | 14 | x^14 + x^10 + x^6 + x + 1   | 0x4443   |
/// | 15 | x^15 + x + 1                | 0x8003   |
/// | 16 | x^16 + x^12 + x^3 + x + 1   | 0x1100B  |
pub const REDUCTION_POLYS: [u32; 16] = [
    0x3, 0x7, 0xB, 0x13, 0x25, 0x43, 0x83, 0x11B, 0x211, 0x409, 0x805, 0x1053, 0x201B, 0x4443,
    0x8003, 0x1100B,
];

/// Arithmetic context for one field GF(2^u).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    u: u32,
    q: u32,
    reduction_poly: u32,
}

/// A residue in GF(2^u). Carries its field exponent so cross-field use is
/// detected instead of silently producing garbage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement {
    value: u16,
    u: u8,
}

impl FieldElement {
    pub fn value(&self) -> u16 {
        self.value
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }
}

fn poly_degree(p: u32) -> i32 {
    31 - p.leading_zeros() as i32
}

/// Remainder of carry-less division of `a` by `m` (m != 0).
fn poly_mod(mut a: u64, m: u64) -> u64 {
    let md = 63 - m.leading_zeros() as i32;
    loop {
        let ad = 63 - (a | 1).leading_zeros() as i32;
        if a == 0 || ad < md {
            return a;
        }
        a ^= m << (ad - md);
    }
}

/// Carry-less product of two GF(2)[x] polynomials.
fn poly_mul(a: u64, b: u64) -> u64 {
    let mut acc = 0u64;
    let mut a = a;
    let mut shift = 0;
    while a != 0 {
        if a & 1 != 0 {
            acc ^= b << shift;
        }
        a >>= 1;
        shift += 1;
    }
    acc
}

/// Trial division irreducibility test over GF(2), fine for degree <= 16.
fn poly_is_irreducible(p: u32, degree: u32) -> bool {
    if poly_degree(p) != degree as i32 {
        return false;
    }
    // A reducible polynomial has a factor of degree <= degree/2.
    for d in 1..=(degree / 2) {
        for low in 0..(1u32 << d) {
            let candidate = (1u64 << d) | low as u64;
            if poly_mod(p as u64, candidate) == 0 {
                return false;
            }
        }
    }
    true
}

impl FieldSpec {
    /// Field with the fixed reduction polynomial from [`REDUCTION_POLYS`].
    pub fn new(u: u32) -> Result<Self, GfError> {
        if !(1..=16).contains(&u) {
            return Err(GfError::UnsupportedExponent(u));
        }
        Ok(FieldSpec {
            u,
            q: 1 << u,
            reduction_poly: REDUCTION_POLYS[(u - 1) as usize],
        })
    }

    /// Field with a caller-chosen irreducible polynomial of degree u.
    pub fn with_poly(u: u32, reduction_poly: u32) -> Result<Self, GfError> {
        if !(1..=16).contains(&u) {
            return Err(GfError::UnsupportedExponent(u));
        }
        if !poly_is_irreducible(reduction_poly, u) {
            return Err(GfError::BadReductionPoly {
                poly: reduction_poly,
                u,
            });
        }
        Ok(FieldSpec {
            u,
            q: 1 << u,
            reduction_poly,
        })
    }

    pub fn u(&self) -> u32 {
        self.u
    }

    /// Field size q = 2^u.
    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn reduction_poly(&self) -> u32 {
        self.reduction_poly
    }

    /// Bytes needed to serialize one symbol canonically.
    pub fn symbol_bytes(&self) -> usize {
        self.u.div_ceil(8) as usize
    }

    pub fn element(&self, value: u32) -> Result<FieldElement, GfError> {
        if value >= self.q {
            return Err(GfError::OutOfRange { value, u: self.u });
        }
        Ok(FieldElement {
            value: value as u16,
            u: self.u as u8,
        })
    }

    pub fn zero(&self) -> FieldElement {
        FieldElement {
            value: 0,
            u: self.u as u8,
        }
    }

    pub fn one(&self) -> FieldElement {
        FieldElement {
            value: 1,
            u: self.u as u8,
        }
    }

    /// All q field elements in ascending integer order.
    pub fn elements(&self) -> impl Iterator<Item = FieldElement> + '_ {
        let u = self.u as u8;
        (0..self.q).map(move |v| FieldElement { value: v as u16, u })
    }

    fn check(&self, x: FieldElement) -> Result<(), GfError> {
        if x.u as u32 != self.u {
            return Err(GfError::FieldMismatch {
                elem_u: x.u as u32,
                spec_u: self.u,
            });
        }
        Ok(())
    }

    pub fn add(&self, x: FieldElement, y: FieldElement) -> Result<FieldElement, GfError> {
        self.check(x)?;
        self.check(y)?;
        Ok(FieldElement {
            value: x.value ^ y.value,
            u: self.u as u8,
        })
    }

    pub fn mul(&self, x: FieldElement, y: FieldElement) -> Result<FieldElement, GfError> {
        self.check(x)?;
        self.check(y)?;
        Ok(FieldElement {
            value: self.mul_raw(x.value, y.value),
            u: self.u as u8,
        })
    }

    pub fn inv(&self, x: FieldElement) -> Result<FieldElement, GfError> {
        self.check(x)?;
        if x.value == 0 {
            return Err(GfError::ZeroInverse);
        }
        // x^(q-2) by square-and-multiply; the multiplicative group has order q-1.
        Ok(FieldElement {
            value: self.pow_raw(x.value, (self.q - 2) as u64),
            u: self.u as u8,
        })
    }

    /// pow(x, 0) = 1 for every x, including 0 (keeps the all-ones Vandermonde
    /// row free of special cases).
    pub fn pow(&self, x: FieldElement, e: u64) -> Result<FieldElement, GfError> {
        self.check(x)?;
        Ok(FieldElement {
            value: self.pow_raw(x.value, e),
            u: self.u as u8,
        })
    }

    #[inline]
    pub fn add_raw(&self, x: u16, y: u16) -> u16 {
        debug_assert!((x as u32) < self.q && (y as u32) < self.q);
        x ^ y
    }

    #[inline]
    pub fn mul_raw(&self, x: u16, y: u16) -> u16 {
        debug_assert!((x as u32) < self.q && (y as u32) < self.q);
        poly_mod(poly_mul(x as u64, y as u64), self.reduction_poly as u64) as u16
    }

    pub fn pow_raw(&self, x: u16, mut e: u64) -> u16 {
        let mut base = x;
        let mut acc: u16 = 1;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul_raw(acc, base);
            }
            base = self.mul_raw(base, base);
            e >>= 1;
        }
        acc
    }

    pub fn inv_raw(&self, x: u16) -> Result<u16, GfError> {
        if x == 0 {
            return Err(GfError::ZeroInverse);
        }
        Ok(self.pow_raw(x, (self.q - 2) as u64))
    }
}
