use std::fmt;

/// 16-bit brain float: 1 sign, 8 exponent, 7 mantissa bits.
///
/// Conversions from wider formats round to nearest, ties to even. Subnormals
/// are kept (no flush-to-zero). Every NaN collapses to [`Bf16::NAN`].
#[derive(Copy, Clone, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Bf16(u16);

impl Bf16 {
    pub const ZERO: Self = Self(0x0000);
    pub const ONE: Self = Self(0x3F80);
    pub const NEG_INFINITY: Self = Self(0xFF80);
    pub const INFINITY: Self = Self(0x7F80);
    /// Canonical quiet NaN.
    pub const NAN: Self = Self(0x7FC0);

    pub const fn from_bits(bits: u16) -> Self {
        Self(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub fn from_f32(value: f32) -> Self {
        if value.is_nan() {
            return Self::NAN;
        }
        let bits = value.to_bits();
        let lsb = (bits >> 16) & 1;
        // Overflow of the rounded mantissa carries into the exponent, which is
        // exactly the round-up behaviour (including to infinity).
        let rounded = bits.wrapping_add(0x7FFF + lsb);
        Self((rounded >> 16) as u16)
    }

    /// Exact widening.
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }

    pub fn is_nan(self) -> bool {
        (self.0 & 0x7F80) == 0x7F80 && (self.0 & 0x007F) != 0
    }

    pub fn to_le_bytes(self) -> [u8; 2] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 2]) -> Self {
        Self(u16::from_le_bytes(bytes))
    }
}

/// Round a 32-bit value to the nearest BF16 and widen it back.
pub fn round_bf16(value: f32) -> f32 {
    Bf16::from_f32(value).to_f32()
}

impl From<Bf16> for f32 {
    fn from(v: Bf16) -> f32 {
        v.to_f32()
    }
}

impl fmt::Debug for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bf16({:?} / {:#06x})", self.to_f32(), self.0)
    }
}

impl fmt::Display for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}
