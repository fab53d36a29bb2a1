use serde::Serialize;

use super::{
    CapError, Capability, CpKind, EncodedCapability, Permissions, ADDR_BITS, ADDR_LIMIT,
    MANTISSA_WIDTH, MAX_CONDITIONAL_EXP, OTYPE_MASK,
};

const MW: u32 = MANTISSA_WIDTH;

const PERMS_SHIFT: u32 = 52;
const POP_SHIFT: u32 = 49;
const FLAG_SHIFT: u32 = 48;
const OTYPE_SHIFT: u32 = 30;
const IE_SHIFT: u32 = 29;
const T_SHIFT: u32 = 17;
const B_SHIFT: u32 = 3;

const OHI_SHIFT: u32 = 53;
const OE_SHIFT: u32 = 48;
const ADDR_MASK: u64 = ADDR_LIMIT - 1;

/// Exponent selection for a pair of bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Exponent {
    /// `I_E`: the exponent lives in the low bits of `T` and `B`.
    pub internal: bool,
    pub e: u32,
}

impl Exponent {
    /// The unique exponent that encodes `[base, top)` exactly, if any.
    pub fn for_bounds(base: u64, top: u64) -> Result<Exponent, CapError> {
        if base > top {
            return Err(CapError::NotRepresentable);
        }
        let len = top - base;
        if len < 1 << (MW - 2) {
            return Ok(Exponent {
                internal: false,
                e: 0,
            });
        }
        let e = 63 - len.leading_zeros() - (MW - 2);
        let align = (1u64 << (e + 3)) - 1;
        if base & align != 0 || top & align != 0 {
            return Err(CapError::NotRepresentable);
        }
        Ok(Exponent { internal: true, e })
    }
}

/// Intermediate values of a decode, exposed for inspection and tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DecodeScratch {
    pub internal_exp: bool,
    pub e: u32,
    pub a_top: u64,
    pub a3: u8,
    pub b3: u8,
    pub t3: u8,
    pub o3: u8,
    pub r: u8,
    pub l_carry_out: bool,
    pub l_msb: bool,
    pub c_t: i8,
    pub c_b: i8,
    pub c_o: i8,
    pub b_mantissa: u16,
    pub t_mantissa: u16,
    pub o_mantissa: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Decoded {
    pub cap: Capability,
    pub scratch: DecodeScratch,
    /// False for bit patterns no valid capability encodes to, e.g. a
    /// conditional capability with an exponent above 2.
    pub well_formed: bool,
}

/// Region correction for the upper address bits of one bound.
///
/// `a3` and `x3` are the three bits below the mantissa top of the address and
/// of the bound, `r` is the bottom of the representable region.
pub fn correction(a3: u8, x3: u8, r: u8) -> i8 {
    match (a3 < r, x3 < r) {
        (false, true) => 1,
        (true, false) => -1,
        _ => 0,
    }
}

pub fn decode(enc: EncodedCapability) -> Capability {
    decode_full(enc).cap
}

/// Total decode: every 128-bit pattern yields a capability.
pub fn decode_full(enc: EncodedCapability) -> Decoded {
    let m = enc.meta;
    let perms = Permissions::from_bits_retain(((m >> PERMS_SHIFT) & 0xFFF) as u16);
    let cp = CpKind::from_bits(((m >> POP_SHIFT) & 7) as u8);
    let flag = (m >> FLAG_SHIFT) & 1 == 1;
    let otype = ((m >> OTYPE_SHIFT) as u32) & OTYPE_MASK;
    let internal = (m >> IE_SHIFT) & 1 == 1;
    let t_field = (m >> T_SHIFT) & 0xFFF;
    let b_field = (m >> B_SHIFT) & 0x3FFF;

    let conditional = cp.is_conditional();
    let width = if conditional { ADDR_BITS } else { 64 };
    let a = if conditional {
        enc.cursor & ADDR_MASK
    } else {
        enc.cursor
    };

    let (raw_e, t_low12, b_mant, carry, l_msb) = if internal {
        let e = (((t_field & 7) << 3) | (b_field & 7)) as u32;
        let t12 = t_field & !7;
        let b = b_field & !7;
        (e, t12, b, (t12 >> 3) < ((b & 0xFFF) >> 3), true)
    } else {
        (0, t_field, b_field, t_field < (b_field & 0xFFF), false)
    };
    let e = raw_e.min(width - MW + 2);
    let t_hi = ((b_mant >> 12) + u64::from(carry) + u64::from(l_msb)) & 3;
    let t_mant = (t_hi << 12) | t_low12;

    let (o_mant, o_low) = if conditional {
        let o_hi = (enc.cursor >> OHI_SHIFT) & 0x7FF;
        let o_e = (enc.cursor >> OE_SHIFT) & 0x1F;
        if internal {
            let low3 = o_e.checked_shr(e).unwrap_or(0) & 7;
            let sub = o_e & ((1u64 << e.min(5)) - 1);
            ((o_hi << 3) | low3, sub)
        } else {
            ((o_hi << 3) | (o_e >> 2), 0)
        }
    } else {
        (0, 0)
    };

    let a_top = a.checked_shr(e + MW).unwrap_or(0);
    let a3 = ((a >> (e + MW - 3)) & 7) as u8;
    let b3 = (b_mant >> (MW - 3)) as u8;
    let t3 = (t_mant >> (MW - 3)) as u8;
    let o3 = (o_mant >> (MW - 3)) as u8;
    let r = b3.wrapping_sub(1) & 7;
    let c_b = correction(a3, b3, r);
    let c_t = correction(a3, t3, r);
    let c_o = correction(a3, o3, r);

    let assemble = |c: i8, mant: u64, low: u64| -> u128 {
        let upper = (a_top as i128 + c as i128) as u128;
        (upper << (e + MW)) | ((mant as u128) << e) | low as u128
    };
    let mask = |bits: u32| -> u128 { (1u128 << bits) - 1 };
    let fix_top = |x: u128, b: u128| -> u128 {
        let hi = ((x >> (width - 1)) & 3) as i32;
        let b_msb = ((b >> (width - 1)) & 1) as i32;
        if e < width - MW + 1 && hi - b_msb > 1 {
            x ^ (1u128 << width)
        } else {
            x
        }
    };

    let base = assemble(c_b, b_mant, 0) & mask(width);
    let top = fix_top(assemble(c_t, t_mant, 0) & mask(width + 1), base);
    let op_top = if conditional {
        fix_top(assemble(c_o, o_mant, o_low) & mask(width + 1), base)
    } else {
        0
    };

    let top64 = u64::try_from(top).unwrap_or(u64::MAX);
    let base64 = base as u64;
    let op64 = u64::try_from(op_top).unwrap_or(u64::MAX);
    let mut well_formed = base64 <= top64 && top64 <= ADDR_LIMIT && raw_e == e;
    if conditional {
        well_formed &= raw_e <= MAX_CONDITIONAL_EXP && base64 <= op64 && op64 <= top64;
    }

    Decoded {
        cap: Capability {
            tag: enc.tag,
            perms,
            cp,
            otype,
            flag,
            base: base64,
            top: top64,
            addr: a,
            op_top: op64,
        },
        scratch: DecodeScratch {
            internal_exp: internal,
            e,
            a_top,
            a3,
            b3,
            t3,
            o3,
            r,
            l_carry_out: carry,
            l_msb,
            c_t,
            c_b,
            c_o,
            b_mantissa: b_mant as u16,
            t_mantissa: t_mant as u16,
            o_mantissa: o_mant as u16,
        },
        well_formed,
    }
}

/// Exact encode. Never rounds: anything that would not decode back to `cap`
/// is rejected.
pub fn encode(cap: &Capability) -> Result<EncodedCapability, CapError> {
    if cap.base > cap.top || cap.top > ADDR_LIMIT || cap.otype > OTYPE_MASK {
        return Err(CapError::NotRepresentable);
    }
    if cap.perms.bits() & !0xFFF != 0 {
        return Err(CapError::NotRepresentable);
    }
    let conditional = cap.is_conditional();
    if conditional {
        if cap.addr >= ADDR_LIMIT || cap.op_top < cap.base || cap.op_top > cap.top {
            return Err(CapError::NotRepresentable);
        }
    } else if cap.op_top != 0 {
        return Err(CapError::NotRepresentable);
    }

    let exp = Exponent::for_bounds(cap.base, cap.top)?;
    let e = exp.e;
    if conditional && e > MAX_CONDITIONAL_EXP {
        return Err(CapError::NotRepresentable);
    }
    let (t_field, b_field) = if exp.internal {
        let t = ((cap.top >> e) & 0xFF8) | u64::from(e >> 3);
        let b = ((cap.base >> e) & 0x3FF8) | u64::from(e & 7);
        (t, b)
    } else {
        (cap.top & 0xFFF, cap.base & 0x3FFF)
    };

    let meta = (u64::from(cap.perms.bits()) << PERMS_SHIFT)
        | (u64::from(cap.cp.bits()) << POP_SHIFT)
        | (u64::from(cap.flag) << FLAG_SHIFT)
        | (u64::from(cap.otype) << OTYPE_SHIFT)
        | (u64::from(exp.internal) << IE_SHIFT)
        | (t_field << T_SHIFT)
        | (b_field << B_SHIFT);

    let cursor = if conditional {
        let o = cap.op_top;
        let (o_hi, o_e) = if exp.internal {
            ((o >> (e + 3)) & 0x7FF, o & ((1 << (e + 3)) - 1))
        } else {
            ((o >> 3) & 0x7FF, (o & 7) << 2)
        };
        (o_hi << OHI_SHIFT) | (o_e << OE_SHIFT) | cap.addr
    } else {
        cap.addr
    };

    let enc = EncodedCapability {
        meta,
        cursor,
        tag: cap.tag,
    };
    // The cursor may sit outside the window the bounds can be recovered from.
    if decode(enc) != *cap {
        return Err(CapError::NotRepresentable);
    }
    Ok(enc)
}
