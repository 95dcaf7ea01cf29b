//! Fault injection wrapper for exercising error paths. Arm it with a
//! prompt kind and a call index; the matching invocation fails instead of
//! reaching the inner backend, and everything else passes through.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::model::{Attribute, ClientId, FilterMemory, PropagatedMessage, TextualGradient};

use super::{
    BackendError, CallCounters, GradientContext, ModuleRef, PredictOutcome, PromptBackend,
    PromptKind, RouterDecision, RouterFacts,
};
use std::collections::BTreeSet;

struct Fault {
    kind: PromptKind,
    at: u64,
}

pub struct FaultInjector<B> {
    inner: B,
    armed: Mutex<Option<Fault>>,
    seen: [AtomicU64; 7],
}

impl<B> FaultInjector<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, armed: Mutex::new(None), seen: Default::default() }
    }

    /// Fail the `at`-th call (zero-based) of `kind` from now on. Re-arming
    /// resets the per-kind call count.
    pub fn arm(&self, kind: PromptKind, at: u64) {
        *self.armed.lock().unwrap() = Some(Fault { kind, at });
        for slot in &self.seen {
            slot.store(0, Ordering::SeqCst);
        }
    }

    pub fn disarm(&self) {
        *self.armed.lock().unwrap() = None;
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn check(&self, kind: PromptKind) -> Result<(), BackendError> {
        let armed = self.armed.lock().unwrap();
        if let Some(fault) = armed.as_ref() {
            if fault.kind == kind {
                let n = self.seen[kind as usize].fetch_add(1, Ordering::SeqCst);
                if n == fault.at {
                    return Err(BackendError::Unavailable {
                        kind,
                        detail: format!("injected fault at call {n}"),
                    });
                }
            }
        }
        Ok(())
    }
}

impl<B: PromptBackend> PromptBackend for FaultInjector<B> {
    fn extract(&self, profile: &str) -> Result<BTreeSet<Attribute>, BackendError> {
        self.check(PromptKind::Extract)?;
        self.inner.extract(profile)
    }

    fn summarize(
        &self,
        profile: &str,
        new_attrs: &BTreeSet<Attribute>,
    ) -> Result<String, BackendError> {
        self.check(PromptKind::Summarize)?;
        self.inner.summarize(profile, new_attrs)
    }

    fn merge(
        &self,
        messages: &[PropagatedMessage],
        filter: &FilterMemory,
        profile: &str,
    ) -> Result<String, BackendError> {
        self.check(PromptKind::Merge)?;
        self.inner.merge(messages, filter, profile)
    }

    fn predict(
        &self,
        user_profile: &str,
        positive: (&ClientId, &str),
        negative: (&ClientId, &str),
    ) -> Result<PredictOutcome, BackendError> {
        self.check(PromptKind::Predict)?;
        self.inner.predict(user_profile, positive, negative)
    }

    fn gradient(
        &self,
        module: &ModuleRef,
        ctx: &GradientContext<'_>,
    ) -> Result<TextualGradient, BackendError> {
        self.check(PromptKind::Gradient)?;
        self.inner.gradient(module, ctx)
    }

    fn optimize_profile(&self, content: &str, gradient: &str) -> Result<String, BackendError> {
        self.check(PromptKind::Optimize)?;
        self.inner.optimize_profile(content, gradient)
    }

    fn decide_router(
        &self,
        facts: &RouterFacts,
        gradient: &str,
    ) -> Result<RouterDecision, BackendError> {
        self.check(PromptKind::Optimize)?;
        self.inner.decide_router(facts, gradient)
    }

    fn rank(
        &self,
        profile: &str,
        candidates: &[(ClientId, String)],
    ) -> Result<Vec<ClientId>, BackendError> {
        self.check(PromptKind::Rank)?;
        self.inner.rank(profile, candidates)
    }

    fn counters(&self) -> &CallCounters {
        self.inner.counters()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    #[test]
    fn armed_kind_fails_at_index_and_only_there() {
        let backend = FaultInjector::new(MockBackend::new());
        backend.arm(PromptKind::Extract, 1);
        assert!(backend.extract("jazz").is_ok());
        let err = backend.extract("jazz").unwrap_err();
        assert!(matches!(err, BackendError::Unavailable { kind: PromptKind::Extract, .. }));
        assert!(backend.extract("jazz").is_ok());
    }

    #[test]
    fn other_kinds_pass_through() {
        let backend = FaultInjector::new(MockBackend::new());
        backend.arm(PromptKind::Merge, 0);
        assert!(backend.extract("jazz").is_ok());
        assert_eq!(backend.counters().get(PromptKind::Extract), 1);
    }

    #[test]
    fn failed_call_does_not_reach_inner_counters() {
        let backend = FaultInjector::new(MockBackend::new());
        backend.arm(PromptKind::Extract, 0);
        assert!(backend.extract("jazz").is_err());
        assert_eq!(backend.counters().get(PromptKind::Extract), 0);
    }

    #[test]
    fn disarm_restores_normal_operation() {
        let backend = FaultInjector::new(MockBackend::new());
        backend.arm(PromptKind::Extract, 0);
        backend.disarm();
        assert!(backend.extract("jazz").is_ok());
    }
}
