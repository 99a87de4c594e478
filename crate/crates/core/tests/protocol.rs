use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use sdnum::config::ExperimentConfig;
use sdnum::horizon::{run_controller, LocalBus, RunTrace};
use sdnum::protocol::{
    audit_record, decode, encode, serve_site, Payload, RemoteBus, RemoteOptions, ServeExit, ServeOptions, WireMessage,
};

const PANDEMIC: &str = r#"
schema_version = 1
mode = "pandemic"
seed = 11

[horizon]
horizon = 4
period = 2
epochs = 6

[market]
z = 3

[estimate]
replicas = 20

[[pandemic.sites]]
preset = "Loc.1"

[[pandemic.sites]]
preset = "Loc.2"
"#;

const SYNTHETIC: &str = r#"
schema_version = 1
mode = "synthetic"

[horizon]
horizon = 2
period = 1
epochs = 3

[market]
z = 5

[[synthetic.sites]]
utility = "log"
c = 1.0

[[synthetic.sites]]
utility = "log"
c = 2.0

[[synthetic.sites]]
utility = "quadratic"
a = 0.5
b = 2.0
"#;

/// Serves site `l` until shutdown, rebuilding the agent from scratch after
/// each simulated crash.
fn spawn_site(cfg: ExperimentConfig, l: usize, crash_after: Option<usize>) -> (String, JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = thread::spawn(move || {
        let mut crashes = 0;
        let mut opts = ServeOptions { crash_after };
        loop {
            let mut agent = cfg.agent(l).unwrap();
            match serve_site(agent.as_mut(), l, &listener, opts).unwrap() {
                ServeExit::Shutdown => return crashes,
                ServeExit::Crashed => {
                    crashes += 1;
                    opts.crash_after = None;
                }
            }
        }
    });
    (addr, handle)
}

fn in_process(cfg: &ExperimentConfig) -> RunTrace {
    let agents = (0..cfg.site_count()).map(|l| cfg.agent(l).unwrap()).collect();
    run_controller(&mut LocalBus::new(agents), &cfg.controller()).unwrap()
}

fn distributed(cfg: &ExperimentConfig, crash: Option<(usize, usize)>) -> (RunTrace, Vec<u8>, usize, usize) {
    let mut handles = Vec::new();
    let mut endpoints = Vec::new();
    for l in 0..cfg.site_count() {
        let crash_after = crash.filter(|(site, _)| *site == l).map(|(_, n)| n);
        let (addr, h) = spawn_site(cfg.clone(), l, crash_after);
        endpoints.push(addr);
        handles.push(h);
    }
    let transcript = Arc::new(Mutex::new(Vec::new()));
    let mut bus = RemoteBus::new(endpoints, RemoteOptions::default()).with_transcript(transcript.clone());
    let trace = run_controller(&mut bus, &cfg.controller()).unwrap();
    bus.shutdown().unwrap();
    let reconnects = bus.reconnects();
    let crashes = handles.into_iter().map(|h| h.join().unwrap()).sum();
    let bytes = transcript.lock().unwrap().clone();
    (trace, bytes, reconnects, crashes)
}

fn assert_same(a: &RunTrace, b: &RunTrace) {
    assert_eq!(a.windows.len(), b.windows.len());
    for (x, y) in a.windows.iter().zip(&b.windows) {
        assert!((x.lambda - y.lambda).abs() <= 1e-9, "window {}: {} vs {}", x.span.window, x.lambda, y.lambda);
        for (dx, dy) in x.demands.iter().zip(&y.demands) {
            assert!((dx - dy).abs() <= 1e-9);
        }
        assert_eq!(x.allocations, y.allocations);
        assert_eq!(x.models, y.models);
        assert_eq!(x.realized, y.realized);
        assert_eq!(x.iterations, y.iterations);
    }
}

#[test]
fn synthetic_transport_matches_in_process() {
    let cfg = ExperimentConfig::from_toml(SYNTHETIC).unwrap();
    let local = in_process(&cfg);
    let (remote, _, reconnects, _) = distributed(&cfg, None);
    assert_eq!(reconnects, 0);
    assert_same(&local, &remote);
}

#[test]
fn pandemic_transport_matches_in_process_bit_for_bit() {
    let cfg = ExperimentConfig::from_toml(PANDEMIC).unwrap();
    let local = in_process(&cfg);
    let (remote, _, _, _) = distributed(&cfg, None);
    assert_same(&local, &remote);
    for (x, y) in local.windows.iter().zip(&remote.windows) {
        assert_eq!(x.lambda.to_bits(), y.lambda.to_bits());
        assert_eq!(x.trajectories, y.trajectories);
    }
}

#[test]
fn restarted_agent_catches_up_by_replay() {
    let cfg = ExperimentConfig::from_toml(PANDEMIC).unwrap();
    let local = in_process(&cfg);
    // message 5 to site 1 lands mid-way through a later window's market
    let (remote, _, reconnects, crashes) = distributed(&cfg, Some((1, 5)));
    assert_eq!(crashes, 1);
    assert!(reconnects >= 1);
    assert_same(&local, &remote);
}

#[test]
fn wire_carries_only_schema_fields() {
    let cfg = ExperimentConfig::from_toml(PANDEMIC).unwrap();
    let (_, bytes, _, _) = distributed(&cfg, None);
    let text = String::from_utf8(bytes).unwrap();
    let mut kinds = std::collections::BTreeSet::new();
    for line in text.lines() {
        audit_record(line).unwrap();
        kinds.insert(decode(line, 0).unwrap().kind());
    }
    assert_eq!(kinds.len(), 5, "every message kind appears: {kinds:?}");
    for banned in ["edges", "states", "graph", "policy", "rollout", "old_first"] {
        assert!(!text.contains(banned), "transcript mentions {banned}");
    }
}

#[test]
fn agent_survives_garbage_and_unknown_kinds() {
    let cfg = ExperimentConfig::from_toml(SYNTHETIC).unwrap();
    let (addr, handle) = spawn_site(cfg, 0, None);
    let stream = TcpStream::connect(&addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut w = stream;
    let advance = WireMessage {
        k: 0,
        window: 0,
        site: 0,
        payload: Payload::WindowAdvance { z: 5, history: Vec::new(), last: false },
    };
    w.write_all(b"{\"v\":1,\"kind\":\"pri\n").unwrap();
    w.write_all(b"{\"v\":1,\"kind\":\"bid\",\"k\":0,\"window\":0,\"site\":0,\"payload\":{}}\n").unwrap();
    w.write_all(encode(&advance).as_bytes()).unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    assert!(matches!(decode(&line, 0).unwrap().payload, Payload::FbarReport(_)));

    // a duplicate price gets the identical reply
    let price = WireMessage { k: 4, window: 0, site: 0, payload: Payload::Price { lambda: vec![0.25] } };
    let mut replies = Vec::new();
    for _ in 0..2 {
        w.write_all(encode(&price).as_bytes()).unwrap();
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        replies.push(line);
    }
    assert_eq!(replies[0], replies[1]);
    match decode(&replies[0], 0).unwrap().payload {
        Payload::Demand { y, .. } => assert!((y[0] - 3.0).abs() < 1e-12),
        other => panic!("expected demand, got {other:?}"),
    }

    let bye = WireMessage { k: 0, window: 0, site: 0, payload: Payload::Shutdown };
    w.write_all(encode(&bye).as_bytes()).unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    assert_eq!(decode(&line, 0).unwrap().payload, Payload::Shutdown);
    assert_eq!(handle.join().unwrap(), 0);
}
