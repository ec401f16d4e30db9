use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mmrec_core::corpus::{Item, Source};
use mmrec_core::gateway::{
    enrich_corpus, BackendConfig, ChatBackend, ChatRequest, EnrichOptions, GatewayError, HttpChatBackend, MockBackend,
    ResponseCache,
};
use mmrec_core::prompting::{render, PromptConfig, Strategy};
use mmrec_core::testkit::{FakeServer, Reply};
use serde_json::Value;

fn backend(server: &FakeServer, retries: u32) -> (HttpChatBackend, Arc<AtomicUsize>) {
    let slept = Arc::new(AtomicUsize::new(0));
    let counter = slept.clone();
    let config = BackendConfig {
        max_retries: retries,
        backoff_base_ms: 1,
        ..BackendConfig::new(server.url(), "vision-model")
    };
    let b = HttpChatBackend::new(config).unwrap().with_sleeper(Arc::new(move |_: Duration| {
        counter.fetch_add(1, Ordering::SeqCst);
    }));
    (b, slept)
}

fn item(id: &str, image: bool) -> Item {
    Item {
        item_id: id.into(),
        title: format!("Title {id}"),
        description: format!("Description of {id}"),
        image_ref: image.then(|| format!("https://example.com/{id}.jpg")),
        source: Source::Movielens,
    }
}

fn complete(b: &HttpChatBackend, strategy: Strategy) -> Result<String, GatewayError> {
    let it = item("7", true);
    let prompt = render(strategy, &it, None, &PromptConfig::default()).unwrap();
    b.complete(&ChatRequest { item_id: "7", prompt: &prompt }).map(|c| c.text)
}

#[test]
fn transient_statuses_are_retried() {
    let server = FakeServer::start(vec![Reply::status(429), Reply::status(503), Reply::chat("a poster")]);
    let (b, slept) = backend(&server, 5);
    assert_eq!(complete(&b, Strategy::VisualOnly).unwrap(), "a poster");
    assert_eq!(server.hits(), 3);
    assert_eq!(slept.load(Ordering::SeqCst), 2);
}

#[test]
fn auth_failure_is_not_retried() {
    let server = FakeServer::start(vec![Reply::status(401)]);
    let (b, _) = backend(&server, 5);
    assert!(matches!(complete(&b, Strategy::LlmRec), Err(GatewayError::AuthFailure { status: 401 })));
    assert_eq!(server.hits(), 1);
}

#[test]
fn retries_are_bounded() {
    let server = FakeServer::start(vec![Reply::status(429)]);
    let (b, _) = backend(&server, 3);
    assert!(matches!(complete(&b, Strategy::LlmRec), Err(GatewayError::RateLimited { attempts: 4 })));
    assert_eq!(server.hits(), 4);
}

#[test]
fn malformed_reply_is_reported() {
    let server = FakeServer::start(vec![Reply::status(200)]);
    let (b, _) = backend(&server, 0);
    assert!(matches!(complete(&b, Strategy::LlmRec), Err(GatewayError::MalformedResponse(_))));
}

#[test]
fn request_carries_text_and_image_parts() {
    let server = FakeServer::start(vec![Reply::chat("ok")]);
    let (b, _) = backend(&server, 0);
    complete(&b, Strategy::VisualTextual).unwrap();
    let body: Value = serde_json::from_str(&server.bodies()[0]).unwrap();
    assert_eq!(body["model"], "vision-model");
    assert_eq!(body["temperature"], 0.0);
    let content = body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(content[0]["type"], "text");
    assert_eq!(content[1]["image_url"]["url"], "https://example.com/7.jpg");
}

#[test]
fn cache_serves_repeat_runs_without_backend_calls() {
    let server = FakeServer::start(vec![Reply::chat("described")]);
    let (b, _) = backend(&server, 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let items: Vec<Item> = (0..4).map(|i| item(&i.to_string(), true)).collect();
    {
        let cache = ResponseCache::open(&path).unwrap();
        let rep = enrich_corpus(&items, Strategy::LlmRec, &b, &cache, None, &EnrichOptions::default()).unwrap();
        assert_eq!(rep.records.len(), 4);
    }
    let hits = server.hits();
    let cache = ResponseCache::open(&path).unwrap();
    let rep = enrich_corpus(&items, Strategy::LlmRec, &b, &cache, None, &EnrichOptions::default()).unwrap();
    assert_eq!(server.hits(), hits);
    assert!(rep.records.iter().all(|r| r.response_text == "described"));
}

#[test]
fn fan_out_respects_parallelism() {
    let mock = MockBackend::new("m").with_parallelism(3).with_delay(Duration::from_millis(5));
    let items: Vec<Item> = (0..24).map(|i| item(&format!("{i:02}"), true)).collect();
    let cache = ResponseCache::in_memory();
    let rep = enrich_corpus(&items, Strategy::LlmRec, &mock, &cache, None, &EnrichOptions::default()).unwrap();
    assert_eq!(rep.records.len(), 24);
    assert!(mock.peak_in_flight() <= 3, "peak {}", mock.peak_in_flight());
    let ids: Vec<&str> = rep.records.iter().map(|r| r.item_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn separate_flow_calls_twice_and_skips_imageless_items() {
    let mock = MockBackend::new("m");
    let mut items: Vec<Item> = (0..6).map(|i| item(&i.to_string(), true)).collect();
    items.push(item("blind", false));
    let options = EnrichOptions {
        prompt_config: PromptConfig {
            omit_l_text: false,
            ..PromptConfig::default()
        },
        ..EnrichOptions::default()
    };
    let rep = enrich_corpus(&items, Strategy::XrSeparateFuse, &mock, &ResponseCache::in_memory(), None, &options).unwrap();
    assert_eq!(rep.records.len(), 6);
    assert_eq!(rep.skipped.len(), 1);
    assert_eq!(rep.skipped[0].0, "blind");
    assert_eq!(mock.calls(), 3 * 6);
}

#[test]
fn failed_items_are_retried_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let items: Vec<Item> = (0..5).map(|i| item(&i.to_string(), true)).collect();
    let cache = ResponseCache::in_memory();
    let flaky = MockBackend::new("m").with_failing_items(["3"]);
    let first = enrich_corpus(&items, Strategy::Cot, &flaky, &cache, Some(&journal), &EnrichOptions::default()).unwrap();
    assert_eq!(first.failed.len(), 1);
    assert_eq!(first.records.len(), 4);

    let healthy = MockBackend::new("m");
    let second = enrich_corpus(&items, Strategy::Cot, &healthy, &cache, Some(&journal), &EnrichOptions::default()).unwrap();
    assert_eq!(second.records.len(), 5);
    assert!(second.failed.is_empty());
    assert_eq!(second.resumed, 4);
    assert_eq!(healthy.calls(), 1);
}
