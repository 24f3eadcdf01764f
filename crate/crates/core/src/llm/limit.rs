use std::sync::{Condvar, Mutex};

use super::{Generation, GenerationRequest, LanguageModel};
use crate::error::Result;

/// Caps the number of concurrent `generate` calls on the wrapped model.
pub struct InflightLimit<L> {
    inner: L,
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

impl<L> InflightLimit<L> {
    pub fn new(inner: L, max_inflight: usize) -> Self {
        InflightLimit {
            inner,
            max: max_inflight.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }

    pub fn max_inflight(&self) -> usize {
        self.max
    }
}

struct Permit<'a, L>(&'a InflightLimit<L>);

impl<L> Drop for Permit<'_, L> {
    fn drop(&mut self) {
        *self.0.current.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

impl<L: LanguageModel> LanguageModel for InflightLimit<L> {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation> {
        let _permit = {
            let mut n = self.current.lock().unwrap();
            while *n >= self.max {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
            Permit(self)
        };
        self.inner.generate(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{OracleHint, Prompt};
    use crate::mock::{MockLlm, OracleSpec};
    use std::sync::Arc;

    #[test]
    fn never_exceeds_limit() {
        let mock = Arc::new(MockLlm::new(OracleSpec::Delay {
            millis: 5,
            inner: Box::new(OracleSpec::AlwaysNone),
        }));
        let limited = InflightLimit::new(mock.clone(), 3);
        let prompt = Prompt::single_turn("<Options>: \nA: x\nB: None of the above.", "Answer:");
        std::thread::scope(|s| {
            for _ in 0..12 {
                s.spawn(|| {
                    let req = GenerationRequest {
                        prompt: &prompt,
                        max_tokens: 1,
                        temperature: 0.0,
                        top_logprobs: None,
                        hint: OracleHint::default(),
                    };
                    limited.generate(&req).unwrap();
                });
            }
        });
        assert_eq!(mock.calls(), 12);
        assert!(mock.max_inflight() <= 3);
        assert!(mock.max_inflight() >= 2);
    }
}
