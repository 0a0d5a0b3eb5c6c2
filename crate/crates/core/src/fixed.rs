//! Signed fixed-point arithmetic in `<X, Y>` notation.
//!
//! `X` is the total width in bits and `Y` the number of bits above the binary
//! point, sign bit included, so a format has `F = X - Y` fractional bits, a
//! step of `2^-F` and the range `[-2^(Y-1), 2^(Y-1) - 2^-F]`.
//!
//! Every operation is a pure function of raw integer bits. Intermediate
//! results (products, sums, conversions from `f64`) are carried exactly in a
//! 256-bit integer scaled by a power of two and only rounded once, when they
//! are fitted into a destination format.

use core::fmt;
use core::str::FromStr;

use ethnum::I256;

/// How bits below the destination step are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rounding {
    /// Round toward negative infinity (drop the low bits).
    #[default]
    Truncate,
    /// Round to nearest, ties toward positive infinity.
    HalfUp,
}

/// What happens to values outside the representable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Overflow {
    /// Clamp to the nearest representable bound.
    #[default]
    Saturate,
    /// Keep the low `X` bits (two's complement wrap-around).
    Wrap,
}

/// Why a format or precision string was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatError {
    TotalBits(u32),
    IntegerBits { total: u32, integer: i64 },
    Parse { position: usize, message: &'static str },
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::TotalBits(x) => {
                write!(f, "total bit width {x} outside the supported range 2..=64")
            }
            FormatError::IntegerBits { total, integer } => {
                write!(f, "integer bit count {integer} must satisfy 1 <= Y <= X (X = {total})")
            }
            FormatError::Parse { position, message } => {
                write!(f, "invalid precision at position {position}: {message}")
            }
        }
    }
}

impl core::error::Error for FormatError {}

/// A fixed-point format `<X, Y>` together with its rounding and overflow modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedFormat {
    total_bits: u8,
    integer_bits: u8,
    rounding: Rounding,
    overflow: Overflow,
}

impl FixedFormat {
    pub const MAX_BITS: u32 = 64;

    /// Build `<total, integer>` with the default truncate + saturate modes.
    pub fn new(total_bits: u32, integer_bits: i64) -> Result<Self, FormatError> {
        if !(2..=Self::MAX_BITS).contains(&total_bits) {
            return Err(FormatError::TotalBits(total_bits));
        }
        if integer_bits < 1 || integer_bits > i64::from(total_bits) {
            return Err(FormatError::IntegerBits {
                total: total_bits,
                integer: integer_bits,
            });
        }
        Ok(FixedFormat {
            total_bits: total_bits as u8,
            integer_bits: integer_bits as u8,
            rounding: Rounding::default(),
            overflow: Overflow::default(),
        })
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn with_overflow(mut self, overflow: Overflow) -> Self {
        self.overflow = overflow;
        self
    }

    #[inline]
    pub fn total_bits(&self) -> u32 {
        u32::from(self.total_bits)
    }

    #[inline]
    pub fn integer_bits(&self) -> u32 {
        u32::from(self.integer_bits)
    }

    #[inline]
    pub fn frac_bits(&self) -> u32 {
        self.total_bits() - self.integer_bits()
    }

    #[inline]
    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    #[inline]
    pub fn overflow(&self) -> Overflow {
        self.overflow
    }

    #[inline]
    pub fn min_raw(&self) -> i64 {
        i64::MIN >> (64 - self.total_bits())
    }

    #[inline]
    pub fn max_raw(&self) -> i64 {
        i64::MAX >> (64 - self.total_bits())
    }

    /// Size of one step, `2^-F`.
    pub fn step(&self) -> f64 {
        exp2i(-(self.frac_bits() as i32))
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.step()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.step()
    }

    /// Bus word width holding one raw value: `X` rounded up to a power of two
    /// (at least 8).
    pub fn bus_word_bits(&self) -> u32 {
        self.total_bits().next_power_of_two().max(8)
    }

    /// Bytes occupied by one raw value on the wire, `ceil(X / 8)`.
    pub fn wire_bytes(&self) -> usize {
        self.total_bits().div_ceil(8) as usize
    }

    /// Accumulator format for a dot product of `fan_in` terms.
    ///
    /// Width and integer bits both grow by `ceil(log2(fan_in)) + 1`, capped so
    /// that the total stays within 64 bits. The fractional bit count is kept.
    pub fn accumulator_for(&self, fan_in: usize) -> FixedFormat {
        let growth = ceil_log2(fan_in.max(1)) + 1;
        let total = (self.total_bits() + growth).min(Self::MAX_BITS);
        let grown = total - self.total_bits();
        FixedFormat {
            total_bits: total as u8,
            integer_bits: (self.integer_bits() + grown) as u8,
            rounding: self.rounding,
            overflow: self.overflow,
        }
    }

    /// Reduce an arbitrary raw pattern to a valid raw value of this format by
    /// sign-extending its low `X` bits.
    #[inline]
    pub fn wrap_raw(&self, raw: i64) -> i64 {
        let unused = 64 - self.total_bits();
        (raw << unused) >> unused
    }

    #[inline]
    pub fn contains_raw(&self, raw: i64) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }
}

impl fmt::Display for FixedFormat {
    /// Formats as the `X:Y` precision string, with mode suffixes only when
    /// they differ from the defaults.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.total_bits, self.integer_bits)?;
        if self.rounding == Rounding::HalfUp {
            f.write_str(":rnd")?;
        }
        if self.overflow == Overflow::Wrap {
            f.write_str(":wrap")?;
        }
        Ok(())
    }
}

impl FromStr for FixedFormat {
    type Err = FormatError;

    /// Parses `X:Y`, optionally followed by `:trn`/`:rnd` and `:sat`/`:wrap`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut fields = Fields { text: s, pos: 0 };
        let (x_pos, x_text) = fields.next().ok_or(FormatError::Parse {
            position: 0,
            message: "empty precision string",
        })?;
        let total = parse_number(x_text, x_pos)?;
        let (y_pos, y_text) = fields.next().ok_or(FormatError::Parse {
            position: s.len(),
            message: "expected ':' followed by the integer bit count",
        })?;
        let integer = parse_number(y_text, y_pos)?;
        if total > u64::from(u32::MAX) {
            return Err(FormatError::Parse {
                position: x_pos,
                message: "total bit width too large",
            });
        }
        let mut format = FixedFormat::new(total as u32, integer.min(i64::MAX as u64) as i64)?;
        let mut seen_rounding = false;
        let mut seen_overflow = false;
        for (pos, mode) in fields {
            match mode {
                "trn" | "rnd" if !seen_rounding => {
                    seen_rounding = true;
                    format.rounding = if mode == "rnd" {
                        Rounding::HalfUp
                    } else {
                        Rounding::Truncate
                    };
                }
                "sat" | "wrap" if !seen_overflow => {
                    seen_overflow = true;
                    format.overflow = if mode == "wrap" {
                        Overflow::Wrap
                    } else {
                        Overflow::Saturate
                    };
                }
                _ => {
                    return Err(FormatError::Parse {
                        position: pos,
                        message: "expected one of trn, rnd, sat, wrap (each at most once)",
                    })
                }
            }
        }
        Ok(format)
    }
}

struct Fields<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Iterator for Fields<'a> {
    type Item = (usize, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos > self.text.len() {
            return None;
        }
        let rest = &self.text[self.pos..];
        let start = self.pos;
        match rest.find(':') {
            Some(i) => {
                self.pos += i + 1;
                Some((start, &rest[..i]))
            }
            None => {
                self.pos = self.text.len() + 1;
                Some((start, rest))
            }
        }
    }
}

fn parse_number(text: &str, position: usize) -> Result<u64, FormatError> {
    if text.is_empty() {
        return Err(FormatError::Parse {
            position,
            message: "expected a decimal number",
        });
    }
    if let Some(i) = text.bytes().position(|b| !b.is_ascii_digit()) {
        return Err(FormatError::Parse {
            position: position + i,
            message: "expected a decimal digit",
        });
    }
    text.parse().map_err(|_| FormatError::Parse {
        position,
        message: "number out of range",
    })
}

/// A raw fixed-point value tagged with its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedValue {
    raw: i64,
    format: FixedFormat,
}

impl FixedValue {
    /// `None` when `raw` is outside the format's `X`-bit range.
    pub fn from_raw(raw: i64, format: FixedFormat) -> Option<Self> {
        format.contains_raw(raw).then_some(FixedValue { raw, format })
    }

    pub fn zero(format: FixedFormat) -> Self {
        FixedValue { raw: 0, format }
    }

    /// Nearest representable value under the format's modes.
    ///
    /// NaN maps to zero; infinities behave like very large finite values.
    pub fn quantize(x: f64, format: FixedFormat) -> Self {
        FixedValue {
            raw: quantize_raw(x, format),
            format,
        }
    }

    #[inline]
    pub fn raw(&self) -> i64 {
        self.raw
    }

    #[inline]
    pub fn format(&self) -> FixedFormat {
        self.format
    }

    /// Real value `raw * 2^-F`; exact whenever `|raw| < 2^53`.
    pub fn to_f64(&self) -> f64 {
        raw_to_f64(self.raw, self.format)
    }

    pub fn resize(&self, format: FixedFormat) -> Self {
        FixedValue {
            raw: fit(I256::new(i128::from(self.raw)), self.format.frac_bits() as i32, format),
            format,
        }
    }

    /// Exact sum fitted into the format of `self`.
    pub fn add(&self, other: &FixedValue) -> Self {
        let frac = self.format.frac_bits().max(other.format.frac_bits());
        let a = I256::new(i128::from(self.raw)) << (frac - self.format.frac_bits());
        let b = I256::new(i128::from(other.raw)) << (frac - other.format.frac_bits());
        FixedValue {
            raw: fit(a + b, frac as i32, self.format),
            format: self.format,
        }
    }

    /// Exact product fitted into the format of `self`.
    pub fn mul(&self, other: &FixedValue) -> Self {
        self.mul_into(other, self.format)
    }

    /// Exact product fitted into `format`.
    pub fn mul_into(&self, other: &FixedValue, format: FixedFormat) -> Self {
        let product = i128::from(self.raw) * i128::from(other.raw);
        let frac = self.format.frac_bits() + other.format.frac_bits();
        FixedValue {
            raw: fit(I256::new(product), frac as i32, format),
            format,
        }
    }

    /// `max(self, 0)`.
    pub fn relu(&self) -> Self {
        FixedValue {
            raw: self.raw.max(0),
            format: self.format,
        }
    }
}

impl fmt::Display for FixedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}<{}>", self.to_f64(), self.format)
    }
}

/// Dot product of `pairs` accumulated exactly in index order and fitted once
/// into `acc_format`.
pub fn mac_accumulate(pairs: &[(FixedValue, FixedValue)], acc_format: FixedFormat) -> FixedValue {
    let frac = pairs
        .iter()
        .map(|(a, b)| a.format.frac_bits() + b.format.frac_bits())
        .max()
        .unwrap_or(0);
    let mut acc = WideAccumulator::new(frac);
    for (a, b) in pairs {
        let shift = frac - (a.format.frac_bits() + b.format.frac_bits());
        acc.add_wide(I256::new(i128::from(a.raw) * i128::from(b.raw)) << shift);
    }
    FixedValue {
        raw: acc.finish(acc_format),
        format: acc_format,
    }
}

/// Exact running sum of raw terms sharing one fractional scale.
///
/// Sums stay in `i128` while they fit and spill into 256 bits otherwise, so
/// the result never depends on the order of intermediate overflow.
#[derive(Debug, Clone, Copy)]
pub struct WideAccumulator {
    frac: u32,
    low: i128,
    spill: I256,
}

impl WideAccumulator {
    pub fn new(frac_bits: u32) -> Self {
        WideAccumulator {
            frac: frac_bits,
            low: 0,
            spill: I256::ZERO,
        }
    }

    #[inline]
    pub fn frac_bits(&self) -> u32 {
        self.frac
    }

    /// Add the exact product of two raw words.
    #[inline]
    pub fn add_product(&mut self, a: i64, b: i64) {
        self.add_i128(i128::from(a) * i128::from(b));
    }

    #[inline]
    pub fn add_i128(&mut self, term: i128) {
        match self.low.checked_add(term) {
            Some(sum) => self.low = sum,
            None => {
                self.spill += I256::new(self.low);
                self.low = term;
            }
        }
    }

    pub fn add_wide(&mut self, term: I256) {
        self.spill += term;
    }

    /// Add a raw value that has `frac_bits` fractional bits (at most the
    /// accumulator's own scale).
    pub fn add_scaled(&mut self, raw: i64, frac_bits: u32) {
        debug_assert!(frac_bits <= self.frac);
        self.add_wide(I256::new(i128::from(raw)) << (self.frac - frac_bits));
    }

    pub fn exact(&self) -> I256 {
        self.spill + I256::new(self.low)
    }

    pub fn finish(&self, format: FixedFormat) -> i64 {
        fit(self.exact(), self.frac as i32, format)
    }
}

/// Quantize an `f64` to a raw word of `format`.
pub fn quantize_raw(x: f64, format: FixedFormat) -> i64 {
    if x.is_nan() {
        return 0;
    }
    if x.is_infinite() {
        return match format.overflow {
            Overflow::Saturate if x > 0.0 => format.max_raw(),
            Overflow::Saturate => format.min_raw(),
            Overflow::Wrap => 0,
        };
    }
    let bits = x.to_bits();
    let exponent = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    let (mantissa, exp2) = if exponent == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1u64 << 52), exponent - 1075)
    };
    let signed = if bits >> 63 == 1 {
        -i128::from(mantissa)
    } else {
        i128::from(mantissa)
    };
    fit(I256::new(signed), -exp2, format)
}

#[inline]
pub fn raw_to_f64(raw: i64, format: FixedFormat) -> f64 {
    raw as f64 * format.step()
}

/// Fit the exact value `mantissa * 2^-frac` into `format`: round per the
/// format's rounding mode, then resolve overflow per its overflow mode.
pub fn fit(mantissa: I256, frac: i32, format: FixedFormat) -> i64 {
    let shift = format.frac_bits() as i32 - frac;
    let scaled = if shift >= 0 {
        let shift = shift as u32;
        if mantissa == I256::ZERO {
            I256::ZERO
        } else if shift >= 128 || mantissa.unsigned_abs().leading_zeros() <= shift + 2 {
            // Far outside any 64-bit range; only the low bits (all zero once
            // shifted by >= 64) matter for wrap.
            return match format.overflow {
                Overflow::Saturate if mantissa > I256::ZERO => format.max_raw(),
                Overflow::Saturate => format.min_raw(),
                Overflow::Wrap if shift >= 64 => 0,
                Overflow::Wrap => format.wrap_raw((mantissa.as_i128() as i64) << shift),
            };
        } else {
            mantissa << shift
        }
    } else {
        shift_right_rounded(mantissa, (-shift) as u32, format.rounding)
    };
    let (min, max) = (
        I256::new(i128::from(format.min_raw())),
        I256::new(i128::from(format.max_raw())),
    );
    if scaled >= min && scaled <= max {
        return scaled.as_i128() as i64;
    }
    match format.overflow {
        Overflow::Saturate if scaled > max => format.max_raw(),
        Overflow::Saturate => format.min_raw(),
        Overflow::Wrap => format.wrap_raw(scaled.as_i128() as i64),
    }
}

fn shift_right_rounded(value: I256, shift: u32, rounding: Rounding) -> I256 {
    if shift >= 250 {
        // |value| < 2^249 here, so the scaled magnitude is below one half.
        return match rounding {
            Rounding::Truncate if value < I256::ZERO => I256::MINUS_ONE,
            _ => I256::ZERO,
        };
    }
    match rounding {
        Rounding::Truncate => value >> shift,
        Rounding::HalfUp => (value + (I256::ONE << (shift - 1))) >> shift,
    }
}

/// `ceil(log2(n))` for `n >= 1`.
#[inline]
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// `2^k` for `k` in the normal exponent range.
#[inline]
pub(crate) fn exp2i(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}
