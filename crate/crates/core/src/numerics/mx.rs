//! MXFP8 (E4M3 elements, E8M0 shared scale) block encoding.

use super::bf16::Bf16;

/// Elements per MX block.
pub const MX_BLOCK_LEN: usize = 32;
/// Serialized size of one block: the scale byte followed by the elements.
pub const MX_BLOCK_BYTES: usize = MX_BLOCK_LEN + 1;
/// Largest finite E4M3 magnitude.
pub const E4M3_MAX: f64 = 448.0;
/// E8M0 bias; scale byte `e` encodes `2^(e - 127)`.
pub const E8M0_BIAS: i32 = 127;

const E4M3_NAN: u8 = 0x7F;

/// Decode one E4M3 pattern (bias 7, no infinities; `S.1111.111` is NaN).
pub fn e4m3_decode(byte: u8) -> f32 {
    let negative = byte & 0x80 != 0;
    let exp = ((byte >> 3) & 0x0F) as i32;
    let man = (byte & 0x07) as f32;
    let magnitude = if exp == 0x0F && byte & 0x07 == 0x07 {
        return f32::NAN;
    } else if exp == 0 {
        man / 8.0 * (1.0 / 64.0)
    } else {
        (1.0 + man / 8.0) * pow2(exp - 7) as f32
    };
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

/// Round `value` to the nearest E4M3 pattern, ties to even, saturating at ±448.
pub fn e4m3_encode(value: f64) -> u8 {
    if value.is_nan() {
        return E4M3_NAN;
    }
    let sign = if value.is_sign_negative() { 0x80 } else { 0x00 };
    let mag = value.abs();
    if mag == 0.0 {
        return sign;
    }
    let quantum = if mag >= pow2(-6) {
        pow2(binary_exponent(mag).min(8) - 3)
    } else {
        pow2(-9)
    };
    let rounded = ((mag / quantum).round_ties_even() * quantum).min(E4M3_MAX);
    sign | encode_representable(rounded)
}

fn encode_representable(mag: f64) -> u8 {
    if mag == 0.0 {
        return 0;
    }
    let e = binary_exponent(mag);
    if e < -6 {
        (mag * 512.0) as u8
    } else {
        let man = ((mag / pow2(e) - 1.0) * 8.0) as u8;
        (((e + 7) as u8) << 3) | man
    }
}

/// `2^e` for `e` in the normal f64 exponent range.
fn pow2(e: i32) -> f64 {
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// floor(log2(x)) for a positive normal f64.
fn binary_exponent(x: f64) -> i32 {
    (((x.to_bits() >> 52) & 0x7FF) as i32) - 1023
}

/// A 32-element MXFP8 block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MxFp8Block {
    pub scale: u8,
    pub elements: [u8; MX_BLOCK_LEN],
}

impl MxFp8Block {
    pub fn zeroed() -> Self {
        Self {
            scale: E8M0_BIAS as u8,
            elements: [0; MX_BLOCK_LEN],
        }
    }

    /// Shared scale as a real multiplier; `0xFF` is the E8M0 NaN.
    pub fn scale_factor(&self) -> f64 {
        if self.scale == 0xFF {
            f64::NAN
        } else {
            pow2(self.scale as i32 - E8M0_BIAS)
        }
    }

    pub fn to_bytes(&self) -> [u8; MX_BLOCK_BYTES] {
        let mut out = [0u8; MX_BLOCK_BYTES];
        out[0] = self.scale;
        out[1..].copy_from_slice(&self.elements);
        out
    }

    pub fn from_bytes(bytes: &[u8; MX_BLOCK_BYTES]) -> Self {
        let mut elements = [0u8; MX_BLOCK_LEN];
        elements.copy_from_slice(&bytes[1..]);
        Self {
            scale: bytes[0],
            elements,
        }
    }
}

/// Dequantize a block to BF16 (round-to-nearest-even of element × scale).
pub fn mx_decode(block: &MxFp8Block) -> [Bf16; MX_BLOCK_LEN] {
    let scale = block.scale_factor();
    let mut out = [Bf16::ZERO; MX_BLOCK_LEN];
    for (dst, &byte) in out.iter_mut().zip(block.elements.iter()) {
        // The product has at most four significant bits, so the f64 → f32 step is
        // exact (or overflows to infinity) and only the BF16 step rounds.
        let exact = e4m3_decode(byte) as f64 * scale;
        *dst = Bf16::from_f32(exact as f32);
    }
    out
}

/// Quantize 32 values into one block.
///
/// The shared scale is the smallest power of two `2^k` with `max|v| <= 448·2^k`,
/// so no element saturates; an all-zero input yields scale 127 and zero elements.
pub fn mx_encode(values: &[f32; MX_BLOCK_LEN]) -> MxFp8Block {
    let amax = values
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |acc, v| acc.max((*v as f64).abs()));
    if amax == 0.0 {
        let mut block = MxFp8Block::zeroed();
        for (dst, v) in block.elements.iter_mut().zip(values) {
            if v.is_nan() {
                *dst = E4M3_NAN;
            }
        }
        return block;
    }
    let k = shared_exponent(amax);
    let scale = pow2(k);
    let mut elements = [0u8; MX_BLOCK_LEN];
    for (dst, &v) in elements.iter_mut().zip(values.iter()) {
        *dst = e4m3_encode(v as f64 / scale);
    }
    MxFp8Block {
        scale: (k + E8M0_BIAS) as u8,
        elements,
    }
}

fn shared_exponent(amax: f64) -> i32 {
    let mut k = binary_exponent(amax) - 8;
    while amax > E4M3_MAX * pow2(k) {
        k += 1;
    }
    while amax <= E4M3_MAX * pow2(k - 1) {
        k -= 1;
    }
    k.clamp(-E8M0_BIAS, E8M0_BIAS)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Table decoder built from the format definition, independent of
    /// `e4m3_decode`'s bit manipulation.
    fn reference_table() -> Vec<f32> {
        let mut table = Vec::with_capacity(256);
        for byte in 0u16..256 {
            let sign = if byte >= 128 { -1.0f64 } else { 1.0 };
            let low = byte % 128;
            let exp = low / 8;
            let man = low % 8;
            let v = if low == 127 {
                f64::NAN
            } else if exp == 0 {
                sign * man as f64 * 2f64.powi(-9)
            } else {
                sign * (8 + man) as f64 * 2f64.powi(exp as i32 - 10)
            };
            table.push(v as f32);
        }
        table
    }

    #[test]
    fn decode_spot_values() {
        assert_eq!(e4m3_decode(0x00), 0.0);
        assert_eq!(e4m3_decode(0x38), 1.0);
        assert!(e4m3_decode(0x7F).is_nan());
        assert!(e4m3_decode(0xFF).is_nan());
        assert_eq!(e4m3_decode(0x7E), 448.0);
        assert_eq!(e4m3_decode(0x01), 2f32.powi(-9));
    }

    #[test]
    fn decode_matches_table_for_every_pattern() {
        let table = reference_table();
        for byte in 0..=255u8 {
            let got = e4m3_decode(byte);
            let want = table[byte as usize];
            if want.is_nan() {
                assert!(got.is_nan(), "{byte:#04x}");
            } else {
                assert_eq!(got.to_bits(), want.to_bits(), "{byte:#04x}");
            }
        }
    }

    #[test]
    fn encode_inverts_decode_on_representable_values() {
        for byte in 0..=255u8 {
            let v = e4m3_decode(byte);
            if v.is_nan() || byte == 0x80 {
                continue;
            }
            assert_eq!(e4m3_encode(v as f64), byte, "{byte:#04x}");
        }
    }

    #[test]
    fn encode_is_nearest_with_ties_to_even() {
        let table = reference_table();
        let finite: Vec<f64> = table.iter().take(127).map(|v| *v as f64).collect();
        let mut x = 0.0f64;
        while x <= 448.0 {
            let got = e4m3_decode(e4m3_encode(x)) as f64;
            let best = finite
                .iter()
                .map(|c| (c - x).abs())
                .fold(f64::INFINITY, f64::min);
            assert_eq!((got - x).abs(), best, "x = {x}");
            x += 2f64.powi(-11) * 3.0 + x * 0.01;
        }
        // 1.0625 is halfway between 1.0 (mantissa 0, even) and 1.125.
        assert_eq!(e4m3_encode(1.0625), 0x38);
        // 1.1875 is halfway between 1.125 (odd) and 1.25 (even).
        assert_eq!(e4m3_encode(1.1875), 0x3A);
    }

    #[test]
    fn encode_saturates() {
        assert_eq!(e4m3_decode(e4m3_encode(1.0e6)), 448.0);
        assert_eq!(e4m3_decode(e4m3_encode(-500.0)), -448.0);
    }

    #[test]
    fn block_unit_scale_ones() {
        let block = MxFp8Block {
            scale: 127,
            elements: [0x38; 32],
        };
        assert!(mx_decode(&block).iter().all(|v| *v == Bf16::ONE));
    }

    #[test]
    fn block_scale_doubles() {
        let mut block = MxFp8Block::zeroed();
        block.scale = 128;
        block.elements[0] = 0x38;
        assert_eq!(mx_decode(&block)[0].to_f32(), 2.0);
    }

    #[test]
    fn encode_all_zero() {
        let block = mx_encode(&[0.0; 32]);
        assert_eq!(block, MxFp8Block::zeroed());
    }

    #[test]
    fn encode_ones_round_trips_exactly() {
        let block = mx_encode(&[1.0; 32]);
        assert!(mx_decode(&block).iter().all(|v| v.to_f32() == 1.0));
    }

    #[test]
    fn byte_layout_is_scale_then_elements() {
        let mut block = MxFp8Block::zeroed();
        block.scale = 0x81;
        block.elements[31] = 0x42;
        let bytes = block.to_bytes();
        assert_eq!(bytes[0], 0x81);
        assert_eq!(bytes[32], 0x42);
        assert_eq!(MxFp8Block::from_bytes(&bytes), block);
    }
}
