//! Exact rationals and the coefficient-ring abstraction shared by every
//! multilinear map in the crate.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Deserializer};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};

/// Exact rational number.
pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn q_to_string(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Commutative ring of coefficients for multilinear maps. Implemented by
/// plain rationals, polynomials in time, and Novikov scalars.
pub trait Coeff: Clone + fmt::Debug + PartialEq + Send + Sync + 'static {
    fn nil() -> Self;
    fn unit() -> Self;
    fn is_nil(&self) -> bool;
    fn plus(&self, other: &Self) -> Self;
    fn times(&self, other: &Self) -> Self;
    fn negated(&self) -> Self;
    fn scaled(&self, c: &Q) -> Self;
    fn from_q(c: Q) -> Self;
    /// Human-readable form used in reports.
    fn render(&self) -> String;

    fn minus(&self, other: &Self) -> Self {
        self.plus(&other.negated())
    }
}

impl Coeff for Q {
    fn nil() -> Self {
        Zero::zero()
    }
    fn unit() -> Self {
        One::one()
    }
    fn is_nil(&self) -> bool {
        Zero::is_zero(self)
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn times(&self, other: &Self) -> Self {
        self * other
    }
    fn negated(&self) -> Self {
        -self
    }
    fn scaled(&self, c: &Q) -> Self {
        self * c
    }
    fn from_q(c: Q) -> Self {
        c
    }
    fn render(&self) -> String {
        q_to_string(self)
    }
    fn minus(&self, other: &Self) -> Self {
        self - other
    }
}

/// Serde adapter: a rational travels as a `[numerator, denominator]` pair.
/// Integers that fit in `i64` are written as JSON numbers, larger ones as
/// decimal strings, so round-trips are bit-exact.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RatRepr(pub Q);

fn ser_int<S: SerializeTuple>(t: &mut S, n: &BigInt) -> Result<(), S::Error> {
    match n.to_i64() {
        Some(v) => t.serialize_element(&v),
        None => t.serialize_element(&n.to_string()),
    }
}

impl Serialize for RatRepr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(2)?;
        ser_int(&mut t, self.0.numer())?;
        ser_int(&mut t, self.0.denom())?;
        t.end()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IntRepr {
    Small(i64),
    Big(String),
}

impl IntRepr {
    fn into_bigint<E: de::Error>(self) -> Result<BigInt, E> {
        match self {
            IntRepr::Small(v) => Ok(BigInt::from(v)),
            IntRepr::Big(s) => s
                .trim()
                .parse::<BigInt>()
                .map_err(|_| E::custom(format!("invalid integer `{s}`"))),
        }
    }
}

impl<'de> Deserialize<'de> for RatRepr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (n, m): (IntRepr, IntRepr) = Deserialize::deserialize(d)?;
        let n = n.into_bigint::<D::Error>()?;
        let m = m.into_bigint::<D::Error>()?;
        if m.is_zero() {
            return Err(de::Error::custom("zero denominator"));
        }
        Ok(RatRepr(Q::new(n, m)))
    }
}

impl From<Q> for RatRepr {
    fn from(x: Q) -> Self {
        RatRepr(x)
    }
}

pub fn abs_q(x: &Q) -> Q {
    x.abs()
}

pub fn factorial(n: usize) -> Q {
    let mut acc = BigInt::one();
    for i in 2..=n {
        acc *= BigInt::from(i);
    }
    Q::from_integer(acc)
}

/// Integer power of a rational, negative exponents allowed for nonzero bases.
pub fn q_pow(x: &Q, e: i64) -> Q {
    let mut base = if e < 0 { x.recip() } else { x.clone() };
    let mut k = e.unsigned_abs();
    let mut acc = Q::one();
    while k > 0 {
        if k & 1 == 1 {
            acc *= &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    acc
}
