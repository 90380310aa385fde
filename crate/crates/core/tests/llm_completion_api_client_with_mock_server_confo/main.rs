//! Remote completion client against local servers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use normlab::backend::stub::{StubOptions, StubServer};
use normlab::backend::{BackendConfig, BackendError, BackendKind, Corpus, PatternBackend, PrecedentBackend, RemoteBackend, RemoteConfig};
use normlab::seq::Sequence;
use proptest::prelude::*;

fn local() -> PrecedentBackend {
    let mut b = PrecedentBackend::table();
    b.consolidate(&Corpus::from_texts(["the cat sat", "the dog sat down", "a cat ran"])).unwrap();
    b
}

fn client(url: &str, tweak: impl FnOnce(&mut RemoteConfig)) -> RemoteBackend {
    let mut r = RemoteConfig { endpoint: url.to_string(), backoff_ms: 1, samples: 64, ..RemoteConfig::default() };
    tweak(&mut r);
    RemoteBackend::connect(r).unwrap()
}

#[test]
fn api_key_is_sent_and_checked() {
    let server = StubServer::start(Box::new(local()), StubOptions { api_key: Some("k1".into()), ..StubOptions::serving() }).unwrap();
    let ctx = Sequence::new("the");
    let ok = client(server.url(), |r| r.api_key = Some("k1".into()));
    assert!(ok.log_prob(&ctx, &"cat".into()).unwrap().is_finite());
    let hits = server.hits();
    let wrong = client(server.url(), |r| r.api_key = Some("k2".into()));
    match wrong.log_prob(&ctx, &"cat".into()) {
        Err(BackendError::Protocol(m)) => assert!(m.contains("401")),
        other => panic!("expected a 401 protocol error, got {other:?}"),
    }
    // client errors are not retried
    assert_eq!(server.hits(), hits + 1);
    let snap = ok.snapshot().unwrap();
    assert!(snap["remote"]["api_key"].is_null());
    assert!(!snap.to_string().contains("k1"));
}

#[test]
fn unreachable_endpoint_reports_attempts() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = client(&format!("http://127.0.0.1:{port}"), |r| r.max_retries = 2);
    match b.sample_completion(&"the".into(), 3, 0) {
        Err(BackendError::RemoteUnavailable { attempts, last_status, .. }) => {
            assert_eq!(attempts, 3);
            assert_eq!(last_status, None);
        }
        other => panic!("expected RemoteUnavailable, got {other:?}"),
    }
}

#[test]
fn missing_logprobs_are_not_supported() {
    let server = StubServer::start(Box::new(local()), StubOptions { logprobs: false, ..StubOptions::serving() }).unwrap();
    let b = client(server.url(), |_| {});
    assert!(matches!(b.log_prob_complete(&"the".into(), &"cat".into()), Err(BackendError::NotSupported(_))));
    assert_eq!(b.sample_completions(&"the".into(), 3, 5, 1).unwrap().len(), 5);
}

#[test]
fn sampling_is_seeded_and_in_support() {
    let server = StubServer::start(Box::new(local()), StubOptions::serving()).unwrap();
    let b = client(server.url(), |_| {});
    let ctx = Sequence::new("the");
    let a = b.sample_completions(&ctx, 4, 20, 5).unwrap();
    assert_eq!(a, b.sample_completions(&ctx, 4, 20, 5).unwrap());
    assert_eq!(a, local().sample_completions(&ctx, 4, 20, 5).unwrap());
    let vocab = local().vocabulary();
    assert!(a.iter().all(|s| s.token_count() <= 4 && s.tokens().iter().all(|t| vocab.contains(t))));
    let sent = server.requests();
    assert_eq!(sent[0]["n"], 20);
    assert_eq!(sent[0]["seed"], 5);
    assert_eq!(sent[0]["max_tokens"], 4);
    assert!(sent[0].get("continuation").is_none());
}

#[test]
fn remote_backend_cannot_learn_or_enumerate() {
    let server = StubServer::start(Box::new(local()), StubOptions::serving()).unwrap();
    let mut b = client(server.url(), |_| {});
    assert!(!b.is_enumerable());
    assert!(b.consolidate(&Corpus::from_texts(["x"])).is_err());
    assert!(matches!(b.next_distribution(&"the".into()), Err(BackendError::NotEnumerable)));
    assert!(b.kl_divergence(&"the".into(), &"a".into(), 0).is_err());
    let config = BackendConfig { kind: BackendKind::Remote, ..BackendConfig::default() };
    assert!(config.build().is_err());
}

/// A server that sleeps on every request and records peak concurrency.
fn slow_server(workers: usize) -> (String, Arc<AtomicUsize>, Arc<tiny_http::Server>) {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let port = server.server_addr().to_ip().unwrap().port();
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    for _ in 0..workers {
        let (server, live, peak) = (Arc::clone(&server), Arc::clone(&live), Arc::clone(&peak));
        std::thread::spawn(move || {
            while let Ok(req) = server.recv() {
                let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(40));
                live.fetch_sub(1, Ordering::SeqCst);
                let body = r#"{"samples":[{"text":"x"}]}"#;
                let _ = req.respond(tiny_http::Response::from_string(body));
            }
        });
    }
    (format!("http://127.0.0.1:{port}"), peak, server)
}

#[test]
fn in_flight_requests_are_bounded() {
    let (url, peak, server) = slow_server(8);
    let b = Arc::new(client(&url, |r| r.max_in_flight = 2));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let b = Arc::clone(&b);
            std::thread::spawn(move || b.sample_completion(&"go".into(), 1, i).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap().as_str(), "x");
    }
    let seen = peak.load(Ordering::SeqCst);
    assert!((1..=2).contains(&seen), "peak concurrency {seen}");
    server.unblock();
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn remote_scores_equal_local_scores(ctx in "(the|a|cat|dog)( (the|a|cat|dog|sat)){0,2}", cont in "(cat|dog|sat|ran|down)( (sat|down|ran)){0,2}") {
        let server = StubServer::start(Box::new(local()), StubOptions::serving()).unwrap();
        let b = client(server.url(), |_| {});
        let (ctx, cont) = (Sequence::new(&ctx), Sequence::new(&cont));
        let l = local();
        prop_assert!((b.log_prob(&ctx, &cont).unwrap() - l.log_prob(&ctx, &cont).unwrap()).abs() < 1e-9);
        prop_assert!((b.log_prob_complete(&ctx, &cont).unwrap() - l.log_prob_complete(&ctx, &cont).unwrap()).abs() < 1e-9);
        let sent = server.requests();
        prop_assert_eq!(sent.last().unwrap()["continuation"].as_str(), Some(cont.as_str()));
    }
}
