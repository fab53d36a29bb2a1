//! Operation-bound checks against a per-byte shadow of the initialized prefix.

use monvm_core::cap::{
    advance_op_top, check_access, set_bounds, set_op_bounds, Access, AccessVerdict, DenyReason,
};
use monvm_core::{Capability, CpKind, EnforcementConfig};
use proptest::prelude::*;

const BASE: u64 = 0x4000;

/// Bytes that became readable. A store marks its bytes readable only when it
/// starts at or below the end of the readable prefix; bytes written past a
/// gap stay unreadable.
struct Shadow {
    written: Vec<bool>,
    readable: Vec<bool>,
}

impl Shadow {
    fn new(len: usize) -> Shadow {
        Shadow {
            written: vec![false; len],
            readable: vec![false; len],
        }
    }

    fn prefix_end(&self) -> usize {
        self.readable
            .iter()
            .position(|r| !r)
            .unwrap_or(self.readable.len())
    }

    fn store(&mut self, off: usize, size: usize) {
        let contiguous = off <= self.prefix_end();
        for i in off..off + size {
            self.written[i] = true;
            if contiguous {
                self.readable[i] = true;
            }
        }
    }

    fn may_load(&self, off: usize, size: usize) -> bool {
        (off..off + size).all(|i| self.readable[i])
    }
}

#[derive(Clone, Debug)]
enum Op {
    Store(u64, u64),
    Load(u64, u64),
}

fn arb_ops(len: u64) -> impl Strategy<Value = Vec<Op>> {
    let size = prop::sample::select(vec![1u64, 2, 4, 8, 16]);
    let op = (any::<bool>(), 0..len, size).prop_map(|(st, off, size)| {
        if st {
            Op::Store(off, size)
        } else {
            Op::Load(off, size)
        }
    });
    prop::collection::vec(op, 1..64)
}

fn fresh(len: u64) -> Capability {
    let cap = set_bounds(&Capability::root(1 << 48).with_address(BASE), len).unwrap();
    set_op_bounds(&cap, CpKind::WriteBeforeRead, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn gate_agrees_with_shadow((len, ops) in (1u64..200).prop_flat_map(|len| (Just(len), arb_ops(len)))) {
        let cfg = EnforcementConfig::wbr();
        let mut cap = fresh(len);
        let mut shadow = Shadow::new(len as usize);
        for op in ops {
            let (off, size, access) = match op {
                Op::Store(o, s) => (o, s, Access::Store),
                Op::Load(o, s) => (o, s, Access::Load),
            };
            let verdict = check_access(&cap, BASE + off, size, access, &cfg);
            if off + size > len {
                prop_assert_eq!(verdict, AccessVerdict::Deny(DenyReason::BoundsViolation));
                continue;
            }
            let (o, s) = (off as usize, size as usize);
            match access {
                Access::Store => {
                    prop_assert!(verdict.is_allow());
                    cap = advance_op_top(&cap, BASE + off, size);
                    shadow.store(o, s);
                }
                _ => {
                    prop_assert_eq!(verdict.is_allow(), shadow.may_load(o, s), "load {}+{}", off, size);
                }
            }
            // Frontier soundness: everything below the operation top was written.
            let frontier = (cap.op_top - BASE) as usize;
            prop_assert_eq!(frontier, shadow.prefix_end());
            prop_assert!(shadow.written[..frontier].iter().all(|&w| w));
            prop_assert!(cap.op_top <= cap.top);
        }
    }

    #[test]
    fn strict_store_denies_exactly_the_gaps((len, ops) in (1u64..200).prop_flat_map(|len| (Just(len), arb_ops(len)))) {
        let cfg = EnforcementConfig { strict_store: true, ..EnforcementConfig::wbr() };
        let mut cap = fresh(len);
        for op in ops {
            if let Op::Store(off, size) = op {
                if off + size > len {
                    continue;
                }
                let addr = BASE + off;
                let verdict = check_access(&cap, addr, size, Access::Store, &cfg);
                prop_assert_eq!(verdict.is_allow(), addr <= cap.op_top);
                if verdict.is_allow() {
                    cap = advance_op_top(&cap, addr, size);
                }
            }
        }
    }

    #[test]
    fn op_top_never_increases_by_set_op_bounds(
        len in 1u64..0x4000,
        steps in prop::collection::vec((any::<bool>(), any::<u64>(), 1u64..17), 1..40),
    ) {
        let mut cap = fresh(len);
        for (advance, x, size) in steps {
            let before = cap.op_top;
            if advance {
                let addr = cap.base + x % len;
                cap = advance_op_top(&cap, addr, size);
            } else {
                match set_op_bounds(&cap, CpKind::WriteBeforeRead, x % (len + 1)) {
                    Ok(next) => {
                        prop_assert!(next.op_top <= before);
                        cap = next;
                    }
                    Err(_) => prop_assert!(x % (len + 1) + cap.base > before),
                }
            }
            prop_assert!(cap.base <= cap.op_top && cap.op_top <= cap.top);
            prop_assert!(cap.is_representable());
        }
    }
}
