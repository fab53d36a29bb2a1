//! Slow reference models used to cross-check the decoder.
//!
//! Nothing here shares code with the table-driven decoder: bounds are
//! recovered by locating the representable region around the cursor and
//! picking the one residue of the mantissa that falls inside it.

use super::{EncodedCapability, MANTISSA_WIDTH};

/// Correction found by trying every candidate upper part.
///
/// The cursor sits in slice `a3` of its `a_top` block; the representable
/// region starts at slice `r` and spans eight slices. Exactly one of
/// `a_top - 1`, `a_top`, `a_top + 1` places a bound with slice `x3` inside it.
pub fn brute_force_correction(a3: u8, x3: u8, r: u8) -> i8 {
    const A_TOP: i64 = 1000;
    let cursor = A_TOP * 8 + i64::from(a3);
    let region_lo = cursor - (i64::from(a3) - i64::from(r)).rem_euclid(8);
    let hits: Vec<i8> = [-1i8, 0, 1]
        .into_iter()
        .filter(|&c| {
            let bound = (A_TOP + i64::from(c)) * 8 + i64::from(x3);
            (region_lo..region_lo + 8).contains(&bound)
        })
        .collect();
    assert_eq!(hits.len(), 1, "a3={a3} x3={x3} r={r}");
    hits[0]
}

/// Bounds recovered from an encoding: `(base, top, op_top)`.
///
/// `op_top` is zero for conventional capabilities.
pub fn reference_bounds(enc: &EncodedCapability) -> (u64, u64, u64) {
    let m = enc.meta;
    let conditional = (m >> 49) & 7 != 7;
    let width: u32 = if conditional { 48 } else { 64 };
    let a = i128::from(enc.cursor) & ((1i128 << width) - 1);
    let ie = (m >> 29) & 1 == 1;
    let t_raw = i128::from((m >> 17) & 0xFFF);
    let b_raw = i128::from((m >> 3) & 0x3FFF);

    let (e, b_mant, t_low) = if ie {
        let e = (((t_raw & 7) << 3) | (b_raw & 7)) as u32;
        (e.min(width - 12), b_raw & !7, t_raw & !7)
    } else {
        (0, b_raw, t_raw)
    };
    // Rebuild the top two bits of T from the length the fields imply.
    let b_low = b_mant & 0xFFF;
    let carry = i128::from(t_low < b_low);
    let t_mant = ((((b_mant >> 12) + carry + i128::from(ie)) & 3) << 12) | t_low;

    let slice = 1i128 << (e + MANTISSA_WIDTH - 3);
    let span = slice * 8;
    let r = ((b_mant >> (MANTISSA_WIDTH - 3)) - 1).rem_euclid(8);
    let a3 = (a / slice).rem_euclid(8);
    let region_lo = (a / slice) * slice - (a3 - r).rem_euclid(8) * slice;
    let place = |x: i128| region_lo + (x - region_lo).rem_euclid(span);

    // Shift everything by one address-space length if the region wrapped below zero.
    let base = place(b_mant << e);
    let shift = if base < 0 { 1i128 << width } else { 0 };
    let top = place(t_mant << e) + shift;

    let op_top = if conditional {
        let o_hi = i128::from((enc.cursor >> 53) & 0x7FF);
        let o_e = i128::from((enc.cursor >> 48) & 0x1F);
        let o_full = if ie {
            (o_hi << (e + 3)) | (o_e & ((1 << (e + 3)) - 1))
        } else {
            (o_hi << 3) | (o_e >> 2)
        };
        (place(o_full) + shift) as u64
    } else {
        0
    };
    ((base + shift) as u64, top as u64, op_top)
}
