//! Deliberate, thread-scoped defects used to prove that the verification
//! suite notices broken gradients. Nothing is injected unless a caller asks.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the gradient flowing through every sigmoid node.
    SigmoidBackwardSignFlip,
}

thread_local! {
    static ACTIVE: Cell<Option<Fault>> = const { Cell::new(None) };
}

/// Keeps `fault` active on the current thread until dropped.
#[must_use = "the fault is cleared when the guard is dropped"]
pub struct FaultGuard {
    previous: Option<Fault>,
}

pub fn inject(fault: Fault) -> FaultGuard {
    let previous = ACTIVE.with(|a| a.replace(Some(fault)));
    FaultGuard { previous }
}

impl Drop for FaultGuard {
    fn drop(&mut self) {
        ACTIVE.with(|a| a.set(self.previous));
    }
}

pub(crate) fn active(fault: Fault) -> bool {
    ACTIVE.with(|a| a.get() == Some(fault))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_scopes_fault() {
        assert!(!active(Fault::SigmoidBackwardSignFlip));
        {
            let _g = inject(Fault::SigmoidBackwardSignFlip);
            assert!(active(Fault::SigmoidBackwardSignFlip));
        }
        assert!(!active(Fault::SigmoidBackwardSignFlip));
    }
}
