//! A scripted backend for tests and dry runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Backend, BackendError, BackendKind, ChatRequest, Completion, RequestContext};

/// Replays a fixed queue of results; once the queue is empty it answers with
/// `fallback` (or a fatal error when there is none).
pub struct ScriptedBackend {
    script: Mutex<VecDeque<Result<Completion, BackendError>>>,
    fallback: Option<String>,
    seen: Mutex<Vec<ChatRequest>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_results(
            answers
                .into_iter()
                .map(|a| {
                    Ok(Completion {
                        content: a.into(),
                        usage: None,
                    })
                })
                .collect(),
        )
    }

    pub fn from_results(results: Vec<Result<Completion, BackendError>>) -> Self {
        Self {
            script: Mutex::new(results.into()),
            fallback: None,
            seen: Mutex::new(Vec::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_fallback(mut self, answer: impl Into<String>) -> Self {
        self.fallback = Some(answer.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest, _ctx: &RequestContext<'_>) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(request.clone());
        match self.script.lock().unwrap().pop_front() {
            Some(r) => r,
            None => match &self.fallback {
                Some(a) => Ok(Completion {
                    content: a.clone(),
                    usage: None,
                }),
                None => Err(BackendError::Fatal("script exhausted".into())),
            },
        }
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Simulated { seed: 0 }
    }
}
