use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{ChatBackend, ChatRequest, Completion, GatewayError};

/// Deterministic offline backend.
///
/// The response is a pure function of the request: it names the strategy
/// and item, echoes the prompt text and, for image prompts, the tokens of the
/// image reference (standing in for what a vision model would see).
/// Counters make call volume and concurrency observable in tests.
#[derive(Debug)]
pub struct MockBackend {
    model_id: String,
    parallelism: usize,
    delay: Option<Duration>,
    panic_after: Option<usize>,
    fail_items: HashSet<String>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    seen: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn new(model_id: impl Into<String>) -> Self {
        MockBackend {
            model_id: model_id.into(),
            parallelism: 1,
            delay: None,
            panic_after: None,
            fail_items: HashSet::new(),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    /// Sleeps this long inside every call.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    /// Panics on call number `n + 1`, simulating a crash mid-run.
    pub fn with_panic_after(mut self, n: usize) -> Self {
        self.panic_after = Some(n);
        self
    }

    /// Every call for these items fails with a backend error.
    pub fn with_failing_items<I: IntoIterator<Item = S>, S: Into<String>>(mut self, items: I) -> Self {
        self.fail_items = items.into_iter().map(Into::into).collect();
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous calls observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// `(strategy_tag, item_id)` of every call, in arrival order.
    pub fn call_log(&self) -> Vec<String> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// The response the mock gives for a request.
    pub fn response_for(request: &ChatRequest<'_>) -> String {
        let mut text = format!(
            "{} response for {}. {}",
            request.prompt.strategy.tag(),
            request.item_id,
            request.prompt.text
        );
        if let Some(img) = &request.prompt.image_ref {
            let tokens: Vec<&str> = img
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .collect();
            text.push_str(" Image shows ");
            text.push_str(&tokens.join(" "));
            text.push('.');
        }
        text
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl ChatBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, GatewayError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak.fetch_max(now, Ordering::SeqCst);
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(limit) = self.panic_after {
            if n >= limit {
                panic!("mock backend crash injected at call {}", n + 1);
            }
        }
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(format!("{}:{}", request.prompt.strategy.tag(), request.item_id));
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        if self.fail_items.contains(request.item_id) {
            return Err(GatewayError::Backend(format!("injected failure for {}", request.item_id)));
        }
        Ok(Completion {
            text: Self::response_for(request),
            attempts: 1,
        })
    }
}
