use super::{
    CapError, Capability, CpKind, Exponent, ADDR_LIMIT, MANTISSA_WIDTH, MAX_CONDITIONAL_EXP,
};

/// Rounds `[base, top)` outward to the nearest encodable bounds.
///
/// The base moves down and the top moves up to the `2^(E+3)` grid of the
/// smallest exponent whose mantissa can hold the rounded length.
pub fn round_bounds(base: u64, top: u64) -> Result<(u64, u64, Exponent), CapError> {
    if base > top || top > ADDR_LIMIT {
        return Err(CapError::NotRepresentable);
    }
    let len = top - base;
    if len < 1 << (MANTISSA_WIDTH - 2) {
        return Ok((
            base,
            top,
            Exponent {
                internal: false,
                e: 0,
            },
        ));
    }
    let mut e = 63 - len.leading_zeros() - (MANTISSA_WIDTH - 2);
    loop {
        let align = 1u128 << (e + 3);
        let b = base as u128 & !(align - 1);
        let t = (top as u128 + align - 1) & !(align - 1);
        if t - b < 1u128 << (e + MANTISSA_WIDTH - 1) {
            if t > ADDR_LIMIT as u128 {
                return Err(CapError::NotRepresentable);
            }
            return Ok((b as u64, t as u64, Exponent { internal: true, e }));
        }
        e += 1;
    }
}

/// Length that `len` rounds up to when placed at a suitably aligned base.
pub fn representable_length(len: u64) -> u64 {
    let (b, t, _) = round_bounds(0, len.min(ADDR_LIMIT)).expect("[0, len) always rounds");
    t - b
}

/// Alignment a base must have for an allocation of `len` bytes to be exact.
pub fn representable_alignment(len: u64) -> u64 {
    match round_bounds(0, len.min(ADDR_LIMIT)) {
        Ok((_, _, Exponent { internal: true, e })) => 1 << (e + 3),
        _ => 1,
    }
}

/// Narrows `cap` to `[cap.addr, cap.addr + length)`, rounded outward.
///
/// The cursor stays where it was. A conditional capability keeps its kind and
/// has its operation top clamped into the new bounds.
pub fn set_bounds(cap: &Capability, length: u64) -> Result<Capability, CapError> {
    if !cap.tag {
        return Err(CapError::TagViolation);
    }
    let top = cap.addr as u128 + length as u128;
    if cap.addr < cap.base || top > cap.top as u128 {
        return Err(CapError::MonotonicityViolation);
    }
    let (base, top, exp) = round_bounds(cap.addr, top as u64)?;
    if base < cap.base || top > cap.top {
        return Err(CapError::MonotonicityViolation);
    }
    let mut out = Capability { base, top, ..*cap };
    if out.is_conditional() {
        if exp.e > MAX_CONDITIONAL_EXP {
            return Err(CapError::RepresentabilityViolation(exp.e));
        }
        out.op_top = out.op_top.clamp(base, top);
    }
    debug_assert!(out.is_representable(), "{out}");
    Ok(out)
}

/// Installs or narrows the operation bound: `op_top = base + length`.
pub fn set_op_bounds(cap: &Capability, kind: CpKind, length: u64) -> Result<Capability, CapError> {
    if !cap.tag {
        return Err(CapError::TagViolation);
    }
    if !kind.is_conditional() {
        return Err(CapError::InvalidKind);
    }
    if cap.addr >= ADDR_LIMIT {
        return Err(CapError::AddressMaskViolation);
    }
    let exp = cap.exponent()?;
    if exp.e > MAX_CONDITIONAL_EXP {
        return Err(CapError::RepresentabilityViolation(exp.e));
    }
    let op_top = cap.base as u128 + length as u128;
    if op_top > cap.top as u128 {
        return Err(CapError::OutOfBounds);
    }
    let op_top = op_top as u64;
    if cap.is_conditional() {
        if cap.cp != kind {
            return Err(CapError::KindMismatch {
                current: cap.cp,
                requested: kind,
            });
        }
        if op_top > cap.op_top {
            return Err(CapError::OpBoundsIncrease);
        }
    }
    Ok(Capability {
        cp: kind,
        op_top,
        ..*cap
    })
}
