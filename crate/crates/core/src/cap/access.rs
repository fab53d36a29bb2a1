use serde::Serialize;

use super::{Capability, CpKind};
use crate::config::EnforcementConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Access {
    Load,
    Store,
    Fetch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum DenyReason {
    TagViolation,
    PermitViolation(Access),
    BoundsViolation,
    OpBoundsViolation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AccessVerdict {
    Allow,
    Deny(DenyReason),
}

impl AccessVerdict {
    pub fn is_allow(self) -> bool {
        self == AccessVerdict::Allow
    }
}

/// Effective-permission check for `[addr, addr + size)`.
///
/// The conventional checks come first. The conditional gate only applies in
/// a mode that enforces it, and only to the operations the kind constrains.
pub fn check_access(
    cap: &Capability,
    addr: u64,
    size: u64,
    access: Access,
    config: &EnforcementConfig,
) -> AccessVerdict {
    use AccessVerdict::{Allow, Deny};

    if !config.mode.checks_capabilities() {
        return Allow;
    }
    if !cap.tag {
        return Deny(DenyReason::TagViolation);
    }
    let permitted = match access {
        Access::Load => cap.perms.read(),
        Access::Store => cap.perms.write(),
        Access::Fetch => cap.perms.execute(),
    };
    if !permitted {
        return Deny(DenyReason::PermitViolation(access));
    }
    if !cap.in_bounds(addr, size) {
        return Deny(DenyReason::BoundsViolation);
    }
    if !config.mode.enforces_conditional() || !cap.is_conditional() {
        return Allow;
    }

    let end = addr as u128 + size as u128;
    let o = cap.op_top;
    use CpKind::*;
    let gate = match (cap.cp, access) {
        (WriteBeforeRead | WriteBeforeReadOnly, Access::Load)
        | (WriteBeforeExecute | WriteBeforeExecuteOnly, Access::Fetch) => end <= o as u128,
        (WriteBeforeReadOnly | WriteBeforeExecuteOnly | WriteOnce, Access::Store)
        | (ReadOnce, Access::Load)
        | (ExecuteOnce, Access::Fetch) => addr == o,
        (WriteBeforeRead | WriteBeforeExecute, Access::Store) => !config.strict_store || addr <= o,
        _ => true,
    };
    if gate {
        Allow
    } else {
        Deny(DenyReason::OpBoundsViolation)
    }
}

/// Moves the operation top past an access that touches or straddles it.
///
/// Accesses wholly below the frontier and accesses leaving a gap above it
/// leave the capability unchanged.
pub fn advance_op_top(cap: &Capability, addr: u64, size: u64) -> Capability {
    let mut out = *cap;
    if !cap.is_conditional() {
        return out;
    }
    let end = addr.saturating_add(size);
    if addr <= cap.op_top && cap.op_top < end {
        out.op_top = end.min(cap.top);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cap::{set_bounds, set_op_bounds, ADDR_LIMIT};
    use crate::config::Mode;

    fn wbr(kind: CpKind) -> Capability {
        let cap = set_bounds(&Capability::root(ADDR_LIMIT).with_address(0x1000), 0x40).unwrap();
        set_op_bounds(&cap, kind, 0).unwrap()
    }

    fn check(cap: &Capability, addr: u64, size: u64, access: Access) -> AccessVerdict {
        check_access(cap, addr, size, access, &EnforcementConfig::wbr())
    }

    const DENY_OP: AccessVerdict = AccessVerdict::Deny(DenyReason::OpBoundsViolation);

    #[test]
    fn fresh_wbr_is_write_only() {
        let cap = wbr(CpKind::WriteBeforeRead);
        assert_eq!(check(&cap, 0x1000, 4, Access::Load), DENY_OP);
        assert_eq!(check(&cap, 0x1000, 4, Access::Store), AccessVerdict::Allow);
    }

    #[test]
    fn conventional_load_ignores_history() {
        let cap = set_bounds(&Capability::root(ADDR_LIMIT).with_address(0x1000), 0x40).unwrap();
        assert!(check(&cap, 0x1000, 8, Access::Load).is_allow());
    }

    #[test]
    fn conventional_reasons_take_priority() {
        let cap = wbr(CpKind::WriteBeforeRead);
        let untagged = Capability { tag: false, ..cap };
        assert_eq!(
            check(&untagged, 0x1000, 4, Access::Load),
            AccessVerdict::Deny(DenyReason::TagViolation)
        );
        assert_eq!(
            check(&cap, 0x103E, 4, Access::Load),
            AccessVerdict::Deny(DenyReason::BoundsViolation)
        );
        assert_eq!(
            check(&cap, 0x1000, 4, Access::Fetch),
            AccessVerdict::Allow,
            "WBR does not gate fetches"
        );
        let ro = cap.with_perms(!crate::cap::Permissions::STORE);
        assert_eq!(
            check(&ro, 0x1000, 4, Access::Store),
            AccessVerdict::Deny(DenyReason::PermitViolation(Access::Store))
        );
    }

    #[test]
    fn modes_switch_enforcement() {
        let cap = wbr(CpKind::WriteBeforeRead);
        for (mode, expect) in [
            (Mode::NoCap, AccessVerdict::Allow),
            (Mode::PureCap, AccessVerdict::Allow),
            (Mode::Wbr, DENY_OP),
        ] {
            let cfg = EnforcementConfig::new(mode);
            assert_eq!(
                check_access(&cap, 0x1000, 4, Access::Load, &cfg),
                expect,
                "{mode}"
            );
        }
        let untagged = Capability { tag: false, ..cap };
        let nocap = EnforcementConfig::new(Mode::NoCap);
        assert!(check_access(&untagged, 0, 1, Access::Load, &nocap).is_allow());
    }

    #[test]
    fn load_after_store_is_allowed_up_to_frontier() {
        let cap = advance_op_top(&wbr(CpKind::WriteBeforeRead), 0x1000, 4);
        assert_eq!(cap.op_top, 0x1004);
        assert!(check(&cap, 0x1000, 4, Access::Load).is_allow());
        assert_eq!(check(&cap, 0x1002, 4, Access::Load), DENY_OP);
    }

    #[test]
    fn advance_rules() {
        let fresh = wbr(CpKind::WriteBeforeRead);
        assert_eq!(advance_op_top(&fresh, 0x1000, 4).op_top, 0x1004);
        let at_8 = Capability {
            op_top: 0x1008,
            ..fresh
        };
        assert_eq!(advance_op_top(&at_8, 0x1000, 4).op_top, 0x1008);
        let at_4 = Capability {
            op_top: 0x1004,
            ..fresh
        };
        assert_eq!(advance_op_top(&at_4, 0x1000, 8).op_top, 0x1008);
        assert_eq!(advance_op_top(&at_4, 0x1010, 8).op_top, 0x1004, "gap");
        let near_top = Capability {
            op_top: 0x103C,
            ..fresh
        };
        assert_eq!(advance_op_top(&near_top, 0x103C, 4).op_top, 0x1040);
    }

    #[test]
    fn gap_store_allowed_unless_strict() {
        let cap = wbr(CpKind::WriteBeforeRead);
        assert!(check(&cap, 0x1010, 4, Access::Store).is_allow());
        let strict = EnforcementConfig {
            strict_store: true,
            ..EnforcementConfig::wbr()
        };
        assert_eq!(
            check_access(&cap, 0x1010, 4, Access::Store, &strict),
            DENY_OP
        );
        assert!(check_access(&cap, 0x1000, 4, Access::Store, &strict).is_allow());
    }

    #[test]
    fn exact_frontier_kinds() {
        for kind in [CpKind::WriteBeforeReadOnly, CpKind::WriteOnce] {
            let cap = advance_op_top(&wbr(kind), 0x1000, 4);
            assert!(check(&cap, 0x1004, 4, Access::Store).is_allow(), "{kind:?}");
            assert_eq!(
                check(&cap, 0x1000, 4, Access::Store),
                DENY_OP,
                "{kind:?} rewrite"
            );
            assert_eq!(
                check(&cap, 0x1008, 4, Access::Store),
                DENY_OP,
                "{kind:?} gap"
            );
        }
        let ro = advance_op_top(&wbr(CpKind::ReadOnce), 0x1000, 4);
        assert!(check(&ro, 0x1004, 4, Access::Load).is_allow());
        assert_eq!(check(&ro, 0x1000, 4, Access::Load), DENY_OP);
        let xo = wbr(CpKind::ExecuteOnce);
        assert!(check(&xo, 0x1000, 4, Access::Fetch).is_allow());
        assert_eq!(check(&xo, 0x1004, 4, Access::Fetch), DENY_OP);
    }

    #[test]
    fn wbx_gates_fetch_only() {
        let cap = advance_op_top(&wbr(CpKind::WriteBeforeExecute), 0x1000, 8);
        assert!(check(&cap, 0x1004, 4, Access::Fetch).is_allow());
        assert_eq!(check(&cap, 0x1008, 4, Access::Fetch), DENY_OP);
        assert!(check(&cap, 0x1020, 4, Access::Load).is_allow());
    }
}
