mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::Value;

use mpr_core::caption::{build_prompt, request_caption, request_captions, CaptionError, EndpointConfig, ProductMetadata};

fn job(sku: &str) -> mpr_core::caption::CaptionJob {
    let meta = ProductMetadata::new(sku, "A jar of peanut butter.", "brand: Skippy; size: 16.3 oz", vec![]).unwrap();
    build_prompt(&meta, 77).unwrap()
}

fn config(url: &str) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(url);
    cfg.backoff = Duration::from_millis(5);
    cfg.timeout = Duration::from_secs(10);
    cfg
}

#[test]
fn retries_after_non_json_body() {
    let stub = common::serve(|n, _| match n {
        0 => (200, "<html>busy</html>".into()),
        _ => (200, common::label("The product is Skippy peanut butter.")),
    });
    assert_eq!(request_caption(&job("a"), &config(&stub.url)).unwrap(), "The product is Skippy peanut butter.");
    assert_eq!(stub.hits(), 2);
}

#[test]
fn retries_server_errors_and_accepts_fenced_content() {
    let stub = common::serve(|n, _| match n {
        0 => (503, "{}".into()),
        _ => (200, common::chat("```json\n{\"label\": \"The product is jam.\"}\n```")),
    });
    assert_eq!(request_caption(&job("a"), &config(&stub.url)).unwrap(), "The product is jam.");
    assert_eq!(stub.hits(), 2);
}

#[test]
fn missing_label_exhausts_attempts() {
    let stub = common::serve(|_, _| (200, common::chat("{\"caption\": \"The product is jam.\"}")));
    let err = request_caption(&job("a"), &config(&stub.url)).unwrap_err();
    assert!(matches!(err, CaptionError::MissingLabelKey), "{err:?}");
    assert_eq!(stub.hits(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = common::serve(|_, _| (401, "{\"error\": \"bad token\"}".into()));
    let err = request_caption(&job("a"), &config(&stub.url)).unwrap_err();
    assert!(matches!(err, CaptionError::MalformedResponse(ref m) if m.contains("401")), "{err:?}");
    assert_eq!(stub.hits(), 1);
}

#[test]
fn unreachable_endpoint() {
    let mut cfg = config(&common::dead_url());
    cfg.max_attempts = 2;
    let err = request_caption(&job("a"), &cfg).unwrap_err();
    assert!(matches!(err, CaptionError::EndpointUnreachable(_)), "{err:?}");
}

#[test]
fn request_carries_prompt_and_settings() {
    let seen = Arc::new(Mutex::new(Value::Null));
    let sink = Arc::clone(&seen);
    let stub = common::serve(move |_, req| {
        *sink.lock().unwrap() = req.clone();
        (200, common::label("The product is jam."))
    });
    let j = job("sku-9");
    request_caption(&j, &config(&stub.url)).unwrap();
    let req = seen.lock().unwrap().clone();
    assert_eq!(req["model"], "meta-llama/Llama-3.1-8B-Instruct");
    assert_eq!(req["temperature"], 0.0);
    assert_eq!(req["messages"][0]["role"], "system");
    assert_eq!(req["messages"][0]["content"], j.system_message());
    assert_eq!(req["messages"][1]["content"], j.user_message());
    assert!(j.user_message().contains("sku-9"));
}

#[test]
fn concurrent_requests_keep_order_and_bound() {
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (live, high) = (Arc::clone(&in_flight), Arc::clone(&peak));
    let stub = common::serve(move |_, req| {
        let now = live.fetch_add(1, Ordering::SeqCst) + 1;
        high.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(30));
        let user = req["messages"][1]["content"].as_str().unwrap_or("");
        let sku = user.lines().find_map(|l| l.strip_prefix("SKU: ")).unwrap_or("?").to_string();
        live.fetch_sub(1, Ordering::SeqCst);
        (200, common::label(&format!("The product is {sku}.")))
    });
    let jobs: Vec<_> = (0..12).map(|i| job(&format!("sku-{i:02}"))).collect();
    let mut cfg = config(&stub.url);
    cfg.concurrency = 3;
    let results = request_captions(&jobs, &cfg);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap(), &format!("The product is sku-{i:02}."));
    }
    let peak = peak.load(Ordering::SeqCst);
    assert!((1..=3).contains(&peak), "peak in flight {peak}");
}

#[test]
fn invalid_config_is_reported_per_job() {
    let mut cfg = config("http://127.0.0.1:9/x");
    cfg.concurrency = 0;
    let results = request_captions(&[job("a"), job("b")], &cfg);
    assert!(results.iter().all(|r| matches!(r, Err(CaptionError::InvalidConfig(_)))));
}
