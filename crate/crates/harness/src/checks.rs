//! Randomized self-checks of the capability format and its operation bound.

use monvm_core::cap::oracle::{brute_force_correction, reference_bounds};
use monvm_core::cap::{
    advance_op_top, check_access, correction, decode, encode, parse_vectors, round_bounds,
    set_bounds, set_op_bounds, Access, AccessVerdict, DenyReason, ADDR_LIMIT, GOLDEN_VECTORS,
    MAX_CONDITIONAL_EXP,
};
use monvm_core::{Capability, CpKind, EnforcementConfig, Permissions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const MAX_REPORTED: usize = 10;

fn note(failures: &mut Vec<String>, msg: impl FnOnce() -> String) {
    if failures.len() < MAX_REPORTED {
        failures.push(msg());
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CodecFuzzReport {
    pub n: u64,
    pub seed: u64,
    pub round_trip_failures: u64,
    pub containment_failures: u64,
    pub correction_entries: u64,
    pub correction_mismatches: u64,
    pub vectors: u64,
    pub vector_failures: u64,
    pub failures: Vec<String>,
}

impl CodecFuzzReport {
    pub fn passed(&self) -> bool {
        self.round_trip_failures
            + self.containment_failures
            + self.correction_mismatches
            + self.vector_failures
            == 0
            && self.correction_entries == 512
    }
}

/// A random capability whose bounds encode. Conditional ones keep to the
/// exponents that still give the operation top byte precision.
pub fn random_representable(rng: &mut impl Rng) -> Capability {
    loop {
        let cp = CpKind::from_bits(rng.gen_range(0..8));
        let max_bits = if cp.is_conditional() { 14 } else { 48 };
        let bits = rng.gen_range(0..=max_bits);
        let len = if bits == 0 {
            0
        } else {
            rng.gen::<u64>() >> (64 - bits)
        };
        let base = rng.gen_range(0..=ADDR_LIMIT - len);
        let Ok((base, top, exp)) = round_bounds(base, base + len) else {
            continue;
        };
        if cp.is_conditional() && exp.e > MAX_CONDITIONAL_EXP {
            continue;
        }
        let span = top - base + 1;
        let cap = Capability {
            tag: rng.gen(),
            perms: Permissions::from_bits_truncate(rng.gen()),
            cp,
            otype: rng.gen::<u32>() & ((1 << 18) - 1),
            flag: rng.gen(),
            base,
            top,
            addr: base + rng.gen_range(0..span),
            op_top: if cp.is_conditional() {
                base + rng.gen_range(0..span)
            } else {
                0
            },
        };
        if encode(&cap).is_ok() {
            return cap;
        }
    }
}

/// Round trips, rounded-bounds containment, the correction table and the
/// golden vectors.
pub fn codec_fuzz(n: u64, seed: u64) -> CodecFuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = CodecFuzzReport {
        n,
        seed,
        ..Default::default()
    };
    let mut failures = Vec::new();
    for _ in 0..n {
        let cap = random_representable(&mut rng);
        let enc = encode(&cap).expect("generated capabilities encode");
        if decode(enc) != cap || reference_bounds(&enc) != (cap.base, cap.top, cap.op_top) {
            r.round_trip_failures += 1;
            note(&mut failures, || format!("round trip: {cap}"));
        }

        let addr = rng.gen_range(0..ADDR_LIMIT);
        let bits = rng.gen_range(0..=48);
        let len = if bits == 0 {
            0
        } else {
            (rng.gen::<u64>() >> (64 - bits)).min(ADDR_LIMIT - addr)
        };
        let root = Capability::root(ADDR_LIMIT).with_address(addr);
        let contained = match set_bounds(&root, len) {
            Ok(c) => {
                c.base <= addr
                    && addr + len <= c.top
                    && c.addr == addr
                    && encode(&c).is_ok_and(|e| decode(e) == c)
            }
            Err(_) => false,
        };
        if !contained {
            r.containment_failures += 1;
            note(&mut failures, || format!("set_bounds({addr:#x}, {len:#x})"));
        }
    }
    for a3 in 0..8u8 {
        for b3 in 0..8u8 {
            for x3 in 0..8u8 {
                let rb = b3.wrapping_sub(1) & 7;
                r.correction_entries += 1;
                if correction(a3, x3, rb) != brute_force_correction(a3, x3, rb) {
                    r.correction_mismatches += 1;
                    note(&mut failures, || {
                        format!("correction a3={a3} b3={b3} x3={x3}")
                    });
                }
            }
        }
    }
    match parse_vectors(GOLDEN_VECTORS) {
        Ok(vectors) => {
            for enc in vectors {
                r.vectors += 1;
                if encode(&decode(enc)) != Ok(enc) {
                    r.vector_failures += 1;
                    note(&mut failures, || format!("vector {enc}"));
                }
            }
        }
        Err(e) => {
            r.vector_failures += 1;
            note(&mut failures, || e.to_string());
        }
    }
    r.failures = failures;
    r
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FrontierReport {
    pub sequences: u64,
    pub decisions: u64,
    pub gap_stores: u64,
    pub straddles: u64,
    pub mismatches: u64,
    pub failures: Vec<String>,
}

/// Per-byte record of what a Write-before-Read object may read. A store
/// makes its bytes readable only when it starts inside or right after the
/// readable prefix.
struct Shadow {
    readable: Vec<bool>,
}

impl Shadow {
    fn prefix(&self) -> usize {
        self.readable
            .iter()
            .position(|r| !r)
            .unwrap_or(self.readable.len())
    }
}

/// Random store and load sequences on fresh Write-before-Read objects,
/// every allow or deny decision compared with the shadow.
pub fn frontier_sequences(n: u64, seed: u64) -> FrontierReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EnforcementConfig::wbr();
    let mut r = FrontierReport {
        sequences: n,
        ..Default::default()
    };
    let mut failures = Vec::new();
    const BASE: u64 = 0x10000;
    for s in 0..n {
        let len = rng.gen_range(1..=256u64);
        let obj = set_bounds(&Capability::root(ADDR_LIMIT).with_address(BASE), len)
            .expect("small bounds");
        let mut cap = set_op_bounds(&obj, CpKind::WriteBeforeRead, 0).expect("fresh bound");
        let len = cap.length();
        let mut shadow = Shadow {
            readable: vec![false; len as usize],
        };
        for _ in 0..rng.gen_range(1..48) {
            let size = [1u64, 2, 4, 8, 16][rng.gen_range(0..5)];
            let off = rng.gen_range(0..len + 4);
            let store = rng.gen_bool(0.5);
            let access = if store { Access::Store } else { Access::Load };
            let verdict = check_access(&cap, BASE + off, size, access, &cfg);
            r.decisions += 1;
            let prefix = shadow.prefix() as u64;
            let expected = if off + size > len {
                AccessVerdict::Deny(DenyReason::BoundsViolation)
            } else if store || (off..off + size).all(|i| shadow.readable[i as usize]) {
                AccessVerdict::Allow
            } else {
                AccessVerdict::Deny(DenyReason::OpBoundsViolation)
            };
            if off < prefix && off + size > prefix {
                r.straddles += 1;
            }
            if verdict != expected {
                r.mismatches += 1;
                note(&mut failures, || {
                    format!("sequence {s}: {access:?} {off}+{size} of {len}: {verdict:?}")
                });
                break;
            }
            if store && verdict.is_allow() {
                if off > prefix {
                    r.gap_stores += 1;
                } else {
                    (off..off + size).for_each(|i| shadow.readable[i as usize] = true);
                }
                cap = advance_op_top(&cap, BASE + off, size);
                if cap.op_top - BASE != shadow.prefix() as u64 {
                    r.mismatches += 1;
                    note(&mut failures, || {
                        format!("sequence {s}: frontier {:#x}", cap.op_top)
                    });
                    break;
                }
            }
        }
    }
    r.failures = failures;
    r
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MonotonicityReport {
    pub sequences: u64,
    pub derivations: u64,
    pub violations: u64,
    pub failures: Vec<String>,
}

/// One random derivation step: narrowing bounds, masking permissions,
/// moving the cursor or installing an operation bound.
fn derive(cap: &Capability, rng: &mut impl Rng) -> Option<Capability> {
    match rng.gen_range(0..4) {
        0 => {
            let len = cap.length();
            let start = cap.base + if len == 0 { 0 } else { rng.gen_range(0..len) };
            let rest = cap.top - start;
            let want = if rest == 0 {
                0
            } else {
                rng.gen_range(0..=rest)
            };
            set_bounds(&cap.with_address(start), want).ok()
        }
        1 => Some(cap.with_perms(Permissions::from_bits_truncate(rng.gen()))),
        2 => {
            let span = cap.length().max(1) * 4;
            let delta = rng.gen_range(0..span) as i64 - (span / 2) as i64;
            Some(cap.with_address(cap.addr.wrapping_add(delta as u64)))
        }
        _ => {
            let len = cap.length();
            let kind = if cap.is_conditional() {
                cap.cp
            } else {
                CpKind::CONDITIONAL[rng.gen_range(0..7)]
            };
            set_op_bounds(cap, kind, rng.gen_range(0..=len)).ok()
        }
    }
}

/// Random derivation chains from a root. No tagged result may exceed its
/// parent's bounds, permissions or operation top, and every result encodes.
pub fn derivation_sequences(n: u64, seed: u64) -> MonotonicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = MonotonicityReport {
        sequences: n,
        ..Default::default()
    };
    let mut failures = Vec::new();
    for s in 0..n {
        let bits = rng.gen_range(4..=20);
        let start = rng.gen_range(0..ADDR_LIMIT >> 1);
        let Ok(mut cap) = set_bounds(&Capability::root(ADDR_LIMIT).with_address(start), 1 << bits)
        else {
            continue;
        };
        for _ in 0..rng.gen_range(1..24) {
            let Some(child) = derive(&cap, &mut rng) else {
                continue;
            };
            r.derivations += 1;
            if !child.tag {
                continue;
            }
            let op_ok = !(cap.is_conditional() && child.is_conditional())
                || child.op_top <= cap.op_top.max(child.base);
            let encodes = encode(&child).is_ok_and(|e| decode(e) == child);
            if !child.derives_from(&cap) || !op_ok || !encodes {
                r.violations += 1;
                note(&mut failures, || format!("sequence {s}: {cap} -> {child}"));
                break;
            }
            cap = child;
        }
    }
    r.failures = failures;
    r
}
