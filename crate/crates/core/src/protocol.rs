//! Coordinator/site message passing over TCP.
//!
//! Wire format: one JSON object per line,
//!
//! ```text
//! {"v":1,"kind":"price","k":3,"window":0,"site":1,"payload":{"lambda":[0.7]}}
//! ```
//!
//! | field     | meaning                                                    |
//! |-----------|------------------------------------------------------------|
//! | `v`       | protocol version, currently 1; mandatory                   |
//! | `kind`    | `price`, `demand`, `fbar_report`, `window_advance`, `shutdown` |
//! | `k`       | dual iteration (0 outside the market loop)                 |
//! | `window`  | rolling-horizon window index                               |
//! | `site`    | site index                                                 |
//! | `payload` | kind-specific object, see below                            |
//!
//! Payloads:
//!
//! - `price`: `{"lambda": [f64]}`
//! - `demand`: `{"y": [f64], "value": f64, "capped": bool}`
//! - `window_advance`: `{"z": usize, "history": [{"allocation", "epochs"}],
//!   "final": bool}`; the site replays its own commitments and, unless
//!   `final`, re-estimates and refits its surrogate.
//! - `fbar_report`: `{"model": text?, "samples": [{"mean", "stderr", "n"}],
//!   "previous": {"realized", "trajectory"}?, "error": text?}`. The model uses
//!   the `pwl-utility v1` text format; the trajectory carries state counts
//!   per epoch, never per-node states.
//! - `shutdown`: `{}`; the site answers with `shutdown` and exits.
//!
//! `(kind, k, window, site)` identifies a message. Delivery is at least once:
//! the coordinator resends on failure, sites answer duplicates with the same
//! reply, and the coordinator discards replies that do not match the request
//! it is waiting on. A coordinator that reconnects first resends the current
//! `window_advance`, so a restarted site rebuilds its surrogate by replay.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fit::PwlUtility;
use crate::horizon::{site_report, Commitment, SiteAgent, SiteBus, SiteReport, WindowOutcome};
use crate::market::{Response, SiteUtility};
use crate::stats::Estimate;

pub const VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Price,
    Demand,
    FbarReport,
    WindowAdvance,
    Shutdown,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Price => "price",
            Kind::Demand => "demand",
            Kind::FbarReport => "fbar_report",
            Kind::WindowAdvance => "window_advance",
            Kind::Shutdown => "shutdown",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "price" => Kind::Price,
            "demand" => Kind::Demand,
            "fbar_report" => Kind::FbarReport,
            "window_advance" => Kind::WindowAdvance,
            "shutdown" => Kind::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub samples: Vec<Estimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<WindowOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Price { lambda: Vec<f64> },
    Demand { y: Vec<f64>, value: f64, capped: bool },
    FbarReport(ReportBody),
    WindowAdvance { z: usize, history: Vec<Commitment>, last: bool },
    Shutdown,
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Price { .. } => Kind::Price,
            Payload::Demand { .. } => Kind::Demand,
            Payload::FbarReport(_) => Kind::FbarReport,
            Payload::WindowAdvance { .. } => Kind::WindowAdvance,
            Payload::Shutdown => Kind::Shutdown,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub k: usize,
    pub window: usize,
    pub site: usize,
    pub payload: Payload,
}

/// Identity of a message for deduplication.
pub type MessageKey = (Kind, usize, usize, usize);

impl WireMessage {
    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    pub fn key(&self) -> MessageKey {
        (self.kind(), self.k, self.window, self.site)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriceBody {
    lambda: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandBody {
    y: Vec<f64>,
    value: f64,
    capped: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceBody {
    z: usize,
    history: Vec<Commitment>,
    #[serde(rename = "final")]
    last: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    v: u64,
    kind: String,
    k: usize,
    window: usize,
    site: usize,
    payload: Value,
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("wire bodies serialize")
}

/// Encodes `msg` as one newline-terminated record.
pub fn encode(msg: &WireMessage) -> String {
    let payload = match &msg.payload {
        Payload::Price { lambda } => to_value(&PriceBody { lambda: lambda.clone() }),
        Payload::Demand { y, value, capped } => to_value(&DemandBody { y: y.clone(), value: *value, capped: *capped }),
        Payload::FbarReport(r) => to_value(r),
        Payload::WindowAdvance { z, history, last } => {
            to_value(&AdvanceBody { z: *z, history: history.clone(), last: *last })
        }
        Payload::Shutdown => to_value(&Empty {}),
    };
    let env = Envelope {
        v: VERSION,
        kind: msg.kind().as_str().to_string(),
        k: msg.k,
        window: msg.window,
        site: msg.site,
        payload,
    };
    let mut line = serde_json::to_string(&env).expect("envelopes serialize");
    line.push('\n');
    line
}

/// Decodes one record; `offset` is the record's position in the stream and
/// is added to the byte offset of any error.
pub fn decode(line: &str, offset: usize) -> Result<WireMessage> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let at = |e: serde_json::Error| {
        let col = if e.line() <= 1 { e.column().saturating_sub(1) } else { line.len() };
        Error::Decode { offset: offset + col, message: e.to_string() }
    };
    let raw: Value = serde_json::from_str(line).map_err(at)?;
    match raw.get("v").and_then(Value::as_u64) {
        Some(VERSION) => {}
        Some(v) => return Err(Error::Version(format!("protocol version {v} (expected {VERSION})"))),
        None => return Err(Error::Decode { offset, message: "missing version field".into() }),
    }
    let kind = match raw.get("kind").and_then(Value::as_str) {
        Some(s) => Kind::parse(s).ok_or_else(|| Error::Version(format!("unknown message kind '{s}'")))?,
        None => return Err(Error::Decode { offset, message: "missing kind field".into() }),
    };
    let env: Envelope = serde_json::from_value(raw).map_err(|e| Error::Decode { offset, message: e.to_string() })?;
    let body = |e: serde_json::Error| Error::Decode { offset, message: format!("{} payload: {e}", kind.as_str()) };
    let payload = match kind {
        Kind::Price => {
            let b: PriceBody = serde_json::from_value(env.payload).map_err(body)?;
            Payload::Price { lambda: b.lambda }
        }
        Kind::Demand => {
            let b: DemandBody = serde_json::from_value(env.payload).map_err(body)?;
            Payload::Demand { y: b.y, value: b.value, capped: b.capped }
        }
        Kind::FbarReport => Payload::FbarReport(serde_json::from_value(env.payload).map_err(body)?),
        Kind::WindowAdvance => {
            let b: AdvanceBody = serde_json::from_value(env.payload).map_err(body)?;
            Payload::WindowAdvance { z: b.z, history: b.history, last: b.last }
        }
        Kind::Shutdown => {
            let _: Empty = serde_json::from_value(env.payload).map_err(body)?;
            Payload::Shutdown
        }
    };
    Ok(WireMessage { k: env.k, window: env.window, site: env.site, payload })
}

/// Field names a record may contain, at any depth.
const ALLOWED_KEYS: &[&str] = &[
    "v",
    "kind",
    "k",
    "window",
    "site",
    "payload",
    "lambda",
    "y",
    "value",
    "capped",
    "z",
    "history",
    "allocation",
    "epochs",
    "final",
    "model",
    "samples",
    "mean",
    "stderr",
    "n",
    "previous",
    "realized",
    "trajectory",
    "error",
];

/// Checks that a record only uses the documented field names, so no graph,
/// node-level state or policy internals can be smuggled onto the wire.
pub fn audit_record(line: &str) -> Result<()> {
    fn walk(v: &Value, allowed: &BTreeSet<&str>) -> std::result::Result<(), String> {
        match v {
            Value::Object(map) => {
                for (key, val) in map {
                    if !allowed.contains(key.as_str()) {
                        return Err(format!("field '{key}' is not part of the wire schema"));
                    }
                    walk(val, allowed)?;
                }
                Ok(())
            }
            Value::Array(items) => items.iter().try_for_each(|x| walk(x, allowed)),
            _ => Ok(()),
        }
    }
    let allowed: BTreeSet<&str> = ALLOWED_KEYS.iter().copied().collect();
    let v: Value =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Decode { offset: 0, message: e.to_string() })?;
    walk(&v, &allowed).map_err(Error::Contract)
}

/// Line-oriented connection that tracks the byte offset of each record.
struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    offset: usize,
    transcript: Option<Arc<Mutex<Vec<u8>>>>,
}

impl Conn {
    fn new(stream: TcpStream, transcript: Option<Arc<Mutex<Vec<u8>>>>) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self { reader, writer: BufWriter::new(stream), offset: 0, transcript })
    }

    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        let line = encode(msg);
        if let Some(t) = &self.transcript {
            t.lock().expect("transcript lock").extend_from_slice(line.as_bytes());
        }
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next decoded record; `Ok(None)` on end of stream.
    fn recv(&mut self) -> Result<Option<Result<WireMessage>>> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line)?;
        if n == 0 {
            return Ok(None);
        }
        if !line.ends_with('\n') {
            return Err(Error::Transport("connection closed mid-record".into()));
        }
        if let Some(t) = &self.transcript {
            t.lock().expect("transcript lock").extend_from_slice(line.as_bytes());
        }
        let at = self.offset;
        self.offset += n;
        Ok(Some(decode(&line, at)))
    }
}

/// Options of a site agent server.
#[derive(Debug, Clone, Copy, Default)]
pub struct ServeOptions {
    /// Drop the connection and stop, without replying, when this many
    /// messages have been received. Used to exercise coordinator recovery.
    pub crash_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeExit {
    Shutdown,
    Crashed,
}

struct SiteServer<'a> {
    agent: &'a mut dyn SiteAgent,
    site: usize,
    z: f64,
    window: Option<usize>,
    model: Option<PwlUtility>,
    last: Option<(MessageKey, WireMessage)>,
    received: usize,
}

enum Step {
    Reply(WireMessage),
    Ignore,
    Close,
    Exit(WireMessage),
}

impl SiteServer<'_> {
    fn reply(&self, request: &WireMessage, payload: Payload) -> WireMessage {
        WireMessage { k: request.k, window: request.window, site: self.site, payload }
    }

    fn handle(&mut self, msg: WireMessage) -> Step {
        if msg.site != self.site {
            log::warn!("site {} received a message addressed to site {}", self.site, msg.site);
            return Step::Ignore;
        }
        if let Some((key, reply)) = &self.last {
            if *key == msg.key() {
                return Step::Reply(reply.clone());
            }
        }
        let reply = match &msg.payload {
            Payload::WindowAdvance { z, history, last } => {
                let body = if *last {
                    self.model = None;
                    match self.agent.sync(history) {
                        Ok(previous) => ReportBody { model: None, samples: Vec::new(), previous, error: None },
                        Err(e) => {
                            ReportBody { model: None, samples: Vec::new(), previous: None, error: Some(e.to_string()) }
                        }
                    }
                } else {
                    match site_report(self.agent, msg.window, history, *z) {
                        Ok(r) => {
                            let text = r.model.to_text();
                            self.model = Some(r.model);
                            ReportBody { model: Some(text), samples: r.samples, previous: r.previous, error: None }
                        }
                        Err(e) => {
                            self.model = None;
                            ReportBody { model: None, samples: Vec::new(), previous: None, error: Some(e.to_string()) }
                        }
                    }
                };
                self.z = *z as f64;
                self.window = Some(msg.window);
                self.reply(&msg, Payload::FbarReport(body))
            }
            Payload::Price { lambda } => {
                let model = match (&self.model, self.window) {
                    (Some(m), Some(w)) if w == msg.window => m,
                    _ => {
                        log::warn!("site {} has no surrogate for window {}; closing", self.site, msg.window);
                        return Step::Close;
                    }
                };
                let r = model.respond(lambda, &[self.z]);
                self.reply(&msg, Payload::Demand { y: r.y, value: r.value, capped: r.capped })
            }
            Payload::Shutdown => return Step::Exit(self.reply(&msg, Payload::Shutdown)),
            Payload::Demand { .. } | Payload::FbarReport(_) => {
                log::warn!("site {} ignoring unexpected {} message", self.site, msg.kind().as_str());
                return Step::Ignore;
            }
        };
        self.last = Some((msg.key(), reply.clone()));
        Step::Reply(reply)
    }
}

/// Serves `agent` as site `site` on `listener` until a shutdown message.
///
/// Connections are handled one at a time; agent state survives reconnects.
pub fn serve_site(
    agent: &mut dyn SiteAgent,
    site: usize,
    listener: &TcpListener,
    opts: ServeOptions,
) -> Result<ServeExit> {
    let mut server = SiteServer { agent, site, z: 0.0, window: None, model: None, last: None, received: 0 };
    loop {
        let (stream, peer) = listener.accept()?;
        log::debug!("site {site} accepted {peer}");
        let mut conn = Conn::new(stream, None)?;
        loop {
            let msg = match conn.recv() {
                Ok(Some(Ok(m))) => m,
                Ok(Some(Err(e))) => {
                    log::warn!("site {site} skipping record: {e}");
                    continue;
                }
                Ok(None) => break,
                Err(e) => {
                    log::warn!("site {site} connection error: {e}");
                    break;
                }
            };
            server.received += 1;
            if opts.crash_after.is_some_and(|n| server.received >= n) {
                log::warn!("site {site} simulating a crash");
                return Ok(ServeExit::Crashed);
            }
            match server.handle(msg) {
                Step::Reply(r) => {
                    if let Err(e) = conn.send(&r) {
                        log::warn!("site {site} failed to reply: {e}");
                        break;
                    }
                }
                Step::Ignore => {}
                Step::Close => break,
                Step::Exit(r) => {
                    conn.send(&r)?;
                    return Ok(ServeExit::Shutdown);
                }
            }
        }
    }
}

/// Coordinator connection settings.
#[derive(Debug, Clone)]
pub struct RemoteOptions {
    /// Reconnect attempts per request before giving up.
    pub retries: usize,
    pub backoff: Duration,
    /// Read timeout while waiting for a reply.
    pub timeout: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self { retries: 100, backoff: Duration::from_millis(100), timeout: Duration::from_secs(600) }
    }
}

/// [`SiteBus`] over TCP connections to remote site agents.
pub struct RemoteBus {
    endpoints: Vec<String>,
    conns: Vec<Option<Conn>>,
    /// Current `window_advance` per site, replayed after a reconnect.
    advance: Vec<Option<WireMessage>>,
    opts: RemoteOptions,
    transcript: Option<Arc<Mutex<Vec<u8>>>>,
    connected: Vec<bool>,
    reconnects: usize,
}

impl RemoteBus {
    pub fn new(endpoints: Vec<String>, opts: RemoteOptions) -> Self {
        let n = endpoints.len();
        Self {
            endpoints,
            conns: (0..n).map(|_| None).collect(),
            advance: vec![None; n],
            opts,
            transcript: None,
            connected: vec![false; n],
            reconnects: 0,
        }
    }

    /// Records every byte sent or received into `sink`.
    pub fn with_transcript(mut self, sink: Arc<Mutex<Vec<u8>>>) -> Self {
        self.transcript = Some(sink);
        self
    }

    /// Number of reconnections performed after a failure.
    pub fn reconnects(&self) -> usize {
        self.reconnects
    }

    fn connect(&mut self, l: usize) -> Result<()> {
        let addr = self.endpoints[l]
            .to_socket_addrs()
            .map_err(|e| Error::Transport(format!("bad endpoint '{}': {e}", self.endpoints[l])))?
            .next()
            .ok_or_else(|| Error::Transport(format!("endpoint '{}' did not resolve", self.endpoints[l])))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
        stream.set_read_timeout(Some(self.opts.timeout))?;
        self.conns[l] = Some(Conn::new(stream, self.transcript.clone())?);
        if self.connected[l] {
            self.reconnects += 1;
        }
        self.connected[l] = true;
        Ok(())
    }

    fn send(&mut self, l: usize, msg: &WireMessage) -> Result<()> {
        if self.conns[l].is_none() {
            self.connect(l)?;
        }
        self.conns[l].as_mut().expect("connected").send(msg)
    }

    /// Reads until the reply matching `request` arrives.
    fn await_reply(&mut self, l: usize, request: &WireMessage, expect: Kind) -> Result<WireMessage> {
        let conn = self.conns[l].as_mut().ok_or_else(|| Error::Transport("not connected".into()))?;
        loop {
            match conn.recv()? {
                None => return Err(Error::Transport(format!("site {l} closed the connection"))),
                Some(Err(e)) => log::warn!("coordinator skipping record from site {l}: {e}"),
                Some(Ok(m)) => {
                    if m.key() == (expect, request.k, request.window, request.site) {
                        return Ok(m);
                    }
                    log::debug!("discarding stale {:?} from site {l}", m.key());
                }
            }
        }
    }

    fn attempt(&mut self, l: usize, msg: &WireMessage, expect: Kind, fresh: bool) -> Result<WireMessage> {
        if fresh {
            self.connect(l)?;
            // a restarted site needs the current window before it can price
            if let Some(adv) = self.advance[l].clone() {
                if adv.key() != msg.key() {
                    self.send(l, &adv)?;
                    self.await_reply(l, &adv, Kind::FbarReport)?;
                }
            }
        }
        self.send(l, msg)?;
        self.await_reply(l, msg, expect)
    }

    /// Request/reply with reconnect-and-resend.
    fn exchange(&mut self, l: usize, msg: &WireMessage, expect: Kind) -> Result<WireMessage> {
        let mut last_err = None;
        for attempt in 0..=self.opts.retries {
            let fresh = attempt > 0 || self.conns[l].is_none();
            if attempt > 0 {
                thread::sleep(self.opts.backoff);
            }
            match self.attempt(l, msg, expect, fresh) {
                Ok(m) => return Ok(m),
                Err(e @ (Error::Io(_) | Error::Transport(_))) => {
                    log::warn!("site {l}: {e}; retrying");
                    self.conns[l] = None;
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Transport(format!(
            "site {l} unreachable after {} retries: {}",
            self.opts.retries,
            last_err.map_or_else(String::new, |e| e.to_string())
        )))
    }

    /// Sends `msgs[l]` to every listed site, then collects the replies.
    fn broadcast(&mut self, sites: &[usize], msgs: &[WireMessage], expect: Kind) -> Result<Vec<WireMessage>> {
        let mut sent = vec![false; sites.len()];
        for (i, (&l, msg)) in sites.iter().zip(msgs).enumerate() {
            if self.conns[l].is_some() {
                match self.send(l, msg) {
                    Ok(()) => sent[i] = true,
                    Err(_) => self.conns[l] = None,
                }
            }
        }
        let mut replies = Vec::with_capacity(sites.len());
        for (i, (&l, msg)) in sites.iter().zip(msgs).enumerate() {
            let first = if sent[i] { self.await_reply(l, msg, expect).ok() } else { None };
            let reply = match first {
                Some(r) => r,
                None => {
                    self.conns[l] = None;
                    self.exchange(l, msg, expect)?
                }
            };
            replies.push(reply);
        }
        Ok(replies)
    }

    /// Sends `shutdown` to every site and waits for the acknowledgements.
    pub fn shutdown(&mut self) -> Result<()> {
        let sites: Vec<usize> = (0..self.endpoints.len()).collect();
        let msgs: Vec<WireMessage> =
            sites.iter().map(|&l| WireMessage { k: 0, window: 0, site: l, payload: Payload::Shutdown }).collect();
        self.broadcast(&sites, &msgs, Kind::Shutdown)?;
        self.conns.iter_mut().for_each(|c| *c = None);
        Ok(())
    }
}

fn report_from(body: ReportBody) -> Result<SiteReport> {
    if let Some(e) = body.error {
        return Err(Error::Transport(format!("site reported failure: {e}")));
    }
    let text = body.model.ok_or_else(|| Error::Contract("report without a surrogate".into()))?;
    Ok(SiteReport { model: PwlUtility::from_text(&text)?, samples: body.samples, previous: body.previous })
}

impl SiteBus for RemoteBus {
    fn sites(&self) -> usize {
        self.endpoints.len()
    }

    fn open_window(
        &mut self,
        window: usize,
        z: usize,
        histories: &[Vec<Commitment>],
    ) -> Result<Vec<Result<SiteReport>>> {
        let sites: Vec<usize> = (0..self.endpoints.len()).collect();
        let msgs: Vec<WireMessage> = sites
            .iter()
            .map(|&l| WireMessage {
                k: 0,
                window,
                site: l,
                payload: Payload::WindowAdvance { z, history: histories[l].clone(), last: false },
            })
            .collect();
        for (l, m) in msgs.iter().enumerate() {
            self.advance[l] = Some(m.clone());
        }
        let replies = self.broadcast(&sites, &msgs, Kind::FbarReport)?;
        Ok(replies
            .into_iter()
            .map(|m| match m.payload {
                Payload::FbarReport(body) => report_from(body),
                _ => Err(Error::Contract("expected a surrogate report".into())),
            })
            .collect())
    }

    fn demands(&mut self, window: usize, k: usize, lambda: &[f64], sites: &[usize]) -> Result<Vec<Response>> {
        let msgs: Vec<WireMessage> = sites
            .iter()
            .map(|&l| WireMessage { k, window, site: l, payload: Payload::Price { lambda: lambda.to_vec() } })
            .collect();
        self.broadcast(sites, &msgs, Kind::Demand)?
            .into_iter()
            .map(|m| match m.payload {
                Payload::Demand { y, value, capped } => Ok(Response { y, value, capped }),
                _ => Err(Error::Contract("expected a demand".into())),
            })
            .collect()
    }

    fn finish(&mut self, histories: &[Vec<Commitment>]) -> Result<Vec<Result<Option<WindowOutcome>>>> {
        let window = histories.first().map_or(0, Vec::len);
        let sites: Vec<usize> = (0..self.endpoints.len()).collect();
        let msgs: Vec<WireMessage> = sites
            .iter()
            .map(|&l| WireMessage {
                k: 0,
                window,
                site: l,
                payload: Payload::WindowAdvance { z: 0, history: histories[l].clone(), last: true },
            })
            .collect();
        for (l, m) in msgs.iter().enumerate() {
            self.advance[l] = Some(m.clone());
        }
        Ok(self
            .broadcast(&sites, &msgs, Kind::FbarReport)?
            .into_iter()
            .map(|m| match m.payload {
                Payload::FbarReport(ReportBody { error: Some(e), .. }) => {
                    Err(Error::Transport(format!("site reported failure: {e}")))
                }
                Payload::FbarReport(body) => Ok(body.previous),
                _ => Err(Error::Contract("expected a final report".into())),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn price(k: usize, lambda: f64) -> WireMessage {
        WireMessage { k, window: 2, site: 1, payload: Payload::Price { lambda: vec![lambda] } }
    }

    #[test]
    fn price_round_trips() {
        let m = price(3, 0.7);
        let line = encode(&m);
        assert_eq!(
            line,
            "{\"v\":1,\"kind\":\"price\",\"k\":3,\"window\":2,\"site\":1,\"payload\":{\"lambda\":[0.7]}}\n"
        );
        assert_eq!(decode(&line, 0).unwrap(), m);
        audit_record(&line).unwrap();
    }

    #[test]
    fn awkward_floats_round_trip() {
        for x in [0.1 + 0.2, 1.0 / 3.0, 1e-300, 123456.789e10, f64::MIN_POSITIVE] {
            let m = WireMessage {
                k: 0,
                window: 0,
                site: 0,
                payload: Payload::Demand { y: vec![x], value: -x, capped: true },
            };
            assert_eq!(decode(&encode(&m), 0).unwrap(), m);
        }
    }

    #[test]
    fn report_round_trips() {
        let body = ReportBody {
            model: Some("pwl-utility v1\ndim 1\n".into()),
            samples: vec![Estimate { mean: -1.25, stderr: 0.1, n: 7 }],
            previous: Some(WindowOutcome { realized: -2.0, trajectory: vec![(5, [1, 2, 3, 4, 5])] }),
            error: None,
        };
        let m = WireMessage { k: 0, window: 4, site: 0, payload: Payload::FbarReport(body) };
        let line = encode(&m);
        assert_eq!(decode(&line, 0).unwrap(), m);
        audit_record(&line).unwrap();
    }

    #[test]
    fn truncated_record_reports_offset() {
        let line = encode(&price(1, 0.5));
        let cut = &line[..20];
        match decode(cut, 100) {
            Err(Error::Decode { offset, .. }) => assert!((100..=120).contains(&offset)),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_is_a_version_error() {
        let line = r#"{"v":1,"kind":"bid","k":0,"window":0,"site":0,"payload":{}}"#;
        assert!(matches!(decode(line, 0), Err(Error::Version(_))));
        let line = r#"{"v":2,"kind":"price","k":0,"window":0,"site":0,"payload":{}}"#;
        assert!(matches!(decode(line, 0), Err(Error::Version(_))));
    }

    #[test]
    fn unexpected_fields_are_rejected() {
        let line = r#"{"v":1,"kind":"price","k":0,"window":0,"site":0,"payload":{"lambda":[1.0],"edges":[[0,1]]}}"#;
        assert!(matches!(decode(line, 0), Err(Error::Decode { .. })));
        assert!(audit_record(line).is_err());
    }
}
