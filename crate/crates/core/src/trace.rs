//! Memory-access trace events and the line-oriented text codec.
//!
//! ```text
//! CFG line_size=<int> sets=<int> assoc=<int> cores=<int>
//! GLOBAL <name> 0x<hex-start> 0x<hex-size>
//! SYM 0x<hex-ip> <file>:<line>
//! # GT key=value
//! M <seq> <tid> <callsite> 0x<hex-addr> <size>
//! F <seq> <tid> 0x<hex-addr>
//! A <seq> <tid> 0x<hex-ip> 0x<hex-addr> <L|S>
//! ```
//!
//! Header records (`CFG`, `GLOBAL`, `SYM`, `# GT`) precede the body. Other
//! `#` lines are comments. `seq` doubles as the simulation clock.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache_sim::CacheConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccessKind {
    Load,
    Store,
}

impl AccessKind {
    pub fn code(self) -> char {
        match self {
            AccessKind::Load => 'L',
            AccessKind::Store => 'S',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    pub seq: u64,
    pub tid: u32,
    pub ip: u64,
    pub addr: u64,
    pub kind: AccessKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocEvent {
    pub seq: u64,
    pub tid: u32,
    pub callsite: u64,
    pub addr: u64,
    pub size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeEvent {
    pub seq: u64,
    pub tid: u32,
    pub addr: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Access(AccessEvent),
    Alloc(AllocEvent),
    Free(FreeEvent),
}

impl Event {
    pub fn seq(&self) -> u64 {
        match self {
            Event::Access(e) => e.seq,
            Event::Alloc(e) => e.seq,
            Event::Free(e) => e.seq,
        }
    }

    pub fn set_seq(&mut self, seq: u64) {
        match self {
            Event::Access(e) => e.seq = seq,
            Event::Alloc(e) => e.seq = seq,
            Event::Free(e) => e.seq = seq,
        }
    }

    pub fn tid(&self) -> u32 {
        match self {
            Event::Access(e) => e.tid,
            Event::Alloc(e) => e.tid,
            Event::Free(e) => e.tid,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Access(e) => write!(
                f,
                "A {} {} 0x{:x} 0x{:x} {}",
                e.seq,
                e.tid,
                e.ip,
                e.addr,
                e.kind.code()
            ),
            Event::Alloc(e) => write!(f, "M {} {} {} 0x{:x} {}", e.seq, e.tid, e.callsite, e.addr, e.size),
            Event::Free(e) => write!(f, "F {} {} 0x{:x}", e.seq, e.tid, e.addr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalRegion {
    pub name: String,
    pub start: u64,
    pub size: u64,
}

impl GlobalRegion {
    pub fn end(&self) -> u64 {
        self.start + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceHeader {
    pub cache: CacheConfig,
    pub globals: Vec<GlobalRegion>,
    /// ip -> `file:line`.
    pub symbols: BTreeMap<u64, String>,
    /// `# GT key=value` metadata, in file order.
    pub ground_truth: Vec<(String, String)>,
}

impl TraceHeader {
    pub fn new(cache: CacheConfig) -> Self {
        Self {
            cache,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        self.cache
            .validate()
            .map_err(|e| TraceError::InvalidHeader(e.to_string()))?;
        let mut regions: Vec<&GlobalRegion> = self.globals.iter().collect();
        regions.sort_by_key(|g| g.start);
        for g in &regions {
            if g.size == 0 || g.name.is_empty() || g.name.contains(char::is_whitespace) {
                return Err(TraceError::InvalidHeader(format!("bad global region {:?}", g.name)));
            }
        }
        for pair in regions.windows(2) {
            if pair[0].end() > pair[1].start {
                return Err(TraceError::InvalidHeader(format!(
                    "global regions {} and {} overlap",
                    pair[0].name, pair[1].name
                )));
            }
        }
        for stmt in self.symbols.values() {
            if stmt.is_empty() || stmt.contains(char::is_whitespace) {
                return Err(TraceError::InvalidHeader(format!("bad statement id {stmt:?}")));
            }
        }
        for (k, v) in &self.ground_truth {
            if k.is_empty() || k.contains(['=', ' ']) || v.contains(char::is_whitespace) {
                return Err(TraceError::InvalidHeader(format!("bad GT entry {k}={v}")));
            }
        }
        Ok(())
    }

    pub fn ground_truth_value(&self, key: &str) -> Option<&str> {
        self.ground_truth
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let c = &self.cache;
        writeln!(
            w,
            "CFG line_size={} sets={} assoc={} cores={}",
            c.line_size, c.num_sets, c.associativity, c.num_cores
        )?;
        for (k, v) in &self.ground_truth {
            writeln!(w, "# GT {k}={v}")?;
        }
        for g in &self.globals {
            writeln!(w, "GLOBAL {} 0x{:x} 0x{:x}", g.name, g.start, g.size)?;
        }
        for (ip, stmt) in &self.symbols {
            writeln!(w, "SYM 0x{ip:x} {stmt}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: unmatched free of 0x{addr:x}")]
    UnmatchedFree { line: u64, addr: u64 },
    #[error("line {line}: allocation [0x{start:x}, 0x{end:x}) overlaps live object [0x{live_start:x}, 0x{live_end:x})")]
    Overlap {
        line: u64,
        start: u64,
        end: u64,
        live_start: u64,
        live_end: u64,
    },
    #[error("line {line}: sequence number {seq} does not follow {prev}")]
    OutOfOrder { line: u64, seq: u64, prev: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("missing CFG header line")]
    MissingConfig,
}

/// Live heap ranges, used to validate alloc/free streams.
#[derive(Debug, Default, Clone)]
pub struct LiveRanges {
    ranges: BTreeMap<u64, u64>,
}

impl LiveRanges {
    /// Returns the conflicting live range on overlap.
    pub fn insert(&mut self, start: u64, size: u64) -> Result<(), (u64, u64)> {
        let end = start.saturating_add(size);
        if let Some((&s, &e)) = self.ranges.range(..end).next_back() {
            if e > start {
                return Err((s, e));
            }
        }
        self.ranges.insert(start, end);
        Ok(())
    }

    pub fn remove(&mut self, start: u64) -> bool {
        self.ranges.remove(&start).is_some()
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Sequence, overlap and free-matching checks shared by reader and writer.
#[derive(Debug, Default, Clone)]
struct BodyValidator {
    last_seq: Option<u64>,
    live: LiveRanges,
}

impl BodyValidator {
    fn check(&mut self, ev: &Event, line: u64) -> Result<(), TraceError> {
        let seq = ev.seq();
        if let Some(prev) = self.last_seq {
            if seq <= prev {
                return Err(TraceError::OutOfOrder { line, seq, prev });
            }
        }
        match ev {
            Event::Alloc(a) => {
                if a.size == 0 {
                    return Err(TraceError::Parse {
                        line,
                        msg: "allocation size must be >= 1".into(),
                    });
                }
                self.live
                    .insert(a.addr, a.size)
                    .map_err(|(live_start, live_end)| TraceError::Overlap {
                        line,
                        start: a.addr,
                        end: a.addr.saturating_add(a.size),
                        live_start,
                        live_end,
                    })?;
            }
            Event::Free(f) => {
                if !self.live.remove(f.addr) {
                    return Err(TraceError::UnmatchedFree { line, addr: f.addr });
                }
            }
            Event::Access(_) => {}
        }
        self.last_seq = Some(seq);
        Ok(())
    }
}

/// Streaming encoder. Validates events as they are written.
pub struct TraceWriter<W: Write> {
    out: W,
    validator: BodyValidator,
    written: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: &TraceHeader) -> Result<Self, TraceError> {
        header.validate()?;
        header.write_to(&mut out)?;
        Ok(Self {
            out,
            validator: BodyValidator::default(),
            written: 0,
        })
    }

    pub fn write_event(&mut self, ev: &Event) -> Result<(), TraceError> {
        self.written += 1;
        self.validator.check(ev, self.written)?;
        writeln!(self.out, "{ev}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, TraceError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_trace<W, I>(header: &TraceHeader, events: I, sink: W) -> Result<W, TraceError>
where
    W: Write,
    I: IntoIterator<Item = Event>,
{
    let mut w = TraceWriter::new(sink, header)?;
    for ev in events {
        w.write_event(&ev)?;
    }
    w.finish()
}

/// Streaming decoder: the header is parsed eagerly, body events are yielded
/// one at a time. Iteration stops after the first error.
pub struct TraceReader<R: BufRead> {
    input: R,
    header: TraceHeader,
    line_no: u64,
    buf: String,
    pending: Option<Result<Event, TraceError>>,
    validator: BodyValidator,
    done: bool,
}

fn parse_err(line: u64, msg: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_hex(tok: &str, line: u64, what: &str) -> Result<u64, TraceError> {
    let digits = tok
        .strip_prefix("0x")
        .or_else(|| tok.strip_prefix("0X"))
        .ok_or_else(|| parse_err(line, format!("{what} must be 0x-prefixed hex, got {tok:?}")))?;
    u64::from_str_radix(digits, 16).map_err(|_| parse_err(line, format!("bad hex {what} {tok:?}")))
}

fn parse_dec<T: std::str::FromStr>(tok: &str, line: u64, what: &str) -> Result<T, TraceError> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("bad {what} {tok:?}")))
}

fn parse_cfg(rest: &[&str], line: u64) -> Result<CacheConfig, TraceError> {
    let mut cfg = CacheConfig::default();
    let mut seen = [false; 4];
    for tok in rest {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected key=value, got {tok:?}")))?;
        let v: u32 = parse_dec(v, line, k)?;
        let idx = match k {
            "line_size" => {
                cfg.line_size = v;
                0
            }
            "sets" => {
                cfg.num_sets = v;
                1
            }
            "assoc" => {
                cfg.associativity = v;
                2
            }
            "cores" => {
                cfg.num_cores = v;
                3
            }
            _ => return Err(parse_err(line, format!("unknown CFG key {k:?}"))),
        };
        seen[idx] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(parse_err(line, "CFG needs line_size, sets, assoc and cores"));
    }
    cfg.validate().map_err(|e| parse_err(line, e.to_string()))?;
    Ok(cfg)
}

fn parse_body(toks: &[&str], line: u64) -> Result<Event, TraceError> {
    let arity = |n: usize| {
        if toks.len() == n {
            Ok(())
        } else {
            Err(parse_err(
                line,
                format!("{} record needs {} fields, got {}", toks[0], n - 1, toks.len() - 1),
            ))
        }
    };
    match toks[0] {
        "A" => {
            arity(6)?;
            let kind = match toks[5] {
                "L" => AccessKind::Load,
                "S" => AccessKind::Store,
                other => return Err(parse_err(line, format!("access kind must be L or S, got {other:?}"))),
            };
            Ok(Event::Access(AccessEvent {
                seq: parse_dec(toks[1], line, "seq")?,
                tid: parse_dec(toks[2], line, "tid")?,
                ip: parse_hex(toks[3], line, "ip")?,
                addr: parse_hex(toks[4], line, "addr")?,
                kind,
            }))
        }
        "M" => {
            arity(6)?;
            Ok(Event::Alloc(AllocEvent {
                seq: parse_dec(toks[1], line, "seq")?,
                tid: parse_dec(toks[2], line, "tid")?,
                callsite: parse_dec(toks[3], line, "callsite")?,
                addr: parse_hex(toks[4], line, "addr")?,
                size: parse_dec(toks[5], line, "size")?,
            }))
        }
        "F" => {
            arity(4)?;
            Ok(Event::Free(FreeEvent {
                seq: parse_dec(toks[1], line, "seq")?,
                tid: parse_dec(toks[2], line, "tid")?,
                addr: parse_hex(toks[3], line, "addr")?,
            }))
        }
        other => Err(parse_err(line, format!("unknown record type {other:?}"))),
    }
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R) -> Result<Self, TraceError> {
        let mut r = Self {
            input,
            header: TraceHeader::default(),
            line_no: 0,
            buf: String::new(),
            pending: None,
            validator: BodyValidator::default(),
            done: false,
        };
        r.read_header()?;
        Ok(r)
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    /// Reads the next non-blank line into `buf`; false at EOF.
    fn next_line(&mut self) -> Result<bool, TraceError> {
        loop {
            self.buf.clear();
            if self.input.read_line(&mut self.buf)? == 0 {
                return Ok(false);
            }
            self.line_no += 1;
            if !self.buf.trim().is_empty() {
                return Ok(true);
            }
        }
    }

    fn read_header(&mut self) -> Result<(), TraceError> {
        let mut have_cfg = false;
        while self.next_line()? {
            let line = self.line_no;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if let Some(comment) = text.strip_prefix('#') {
                if let Some(gt) = comment.trim_start().strip_prefix("GT ") {
                    let (k, v) = gt
                        .trim()
                        .split_once('=')
                        .ok_or_else(|| parse_err(line, "GT entry must be key=value"))?;
                    self.header.ground_truth.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            if text.contains('\t') {
                return Err(parse_err(line, "tabs are not allowed"));
            }
            let toks: Vec<&str> = text.split(' ').collect();
            match toks[0] {
                "CFG" => {
                    if have_cfg {
                        return Err(parse_err(line, "duplicate CFG line"));
                    }
                    self.header.cache = parse_cfg(&toks[1..], line)?;
                    have_cfg = true;
                }
                "GLOBAL" => {
                    if toks.len() != 4 {
                        return Err(parse_err(line, "GLOBAL needs name, start and size"));
                    }
                    self.header.globals.push(GlobalRegion {
                        name: toks[1].to_string(),
                        start: parse_hex(toks[2], line, "start")?,
                        size: parse_hex(toks[3], line, "size")?,
                    });
                }
                "SYM" => {
                    if toks.len() != 3 {
                        return Err(parse_err(line, "SYM needs ip and statement"));
                    }
                    let ip = parse_hex(toks[1], line, "ip")?;
                    if self.header.symbols.insert(ip, toks[2].to_string()).is_some() {
                        return Err(parse_err(line, format!("duplicate SYM for ip 0x{ip:x}")));
                    }
                }
                _ => {
                    if !have_cfg {
                        return Err(TraceError::MissingConfig);
                    }
                    let ev = parse_body(&toks, line).and_then(|ev| {
                        self.validator.check(&ev, line)?;
                        Ok(ev)
                    });
                    self.pending = Some(ev);
                    break;
                }
            }
        }
        if !have_cfg {
            return Err(TraceError::MissingConfig);
        }
        self.header.validate()
    }

    fn read_event(&mut self) -> Option<Result<Event, TraceError>> {
        loop {
            match self.next_line() {
                Err(e) => return Some(Err(e)),
                Ok(false) => return None,
                Ok(true) => {}
            }
            let line = self.line_no;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.starts_with('#') {
                continue;
            }
            if text.contains('\t') {
                return Some(Err(parse_err(line, "tabs are not allowed")));
            }
            let toks: Vec<&str> = text.split(' ').collect();
            if matches!(toks[0], "CFG" | "GLOBAL" | "SYM") {
                return Some(Err(parse_err(line, format!("{} record after body", toks[0]))));
            }
            let ev = parse_body(&toks, line).and_then(|ev| {
                self.validator.check(&ev, line)?;
                Ok(ev)
            });
            return Some(ev);
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<Event, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = match self.pending.take() {
            Some(p) => Some(p),
            None => self.read_event(),
        };
        match &item {
            None | Some(Err(_)) => self.done = true,
            Some(Ok(_)) => {}
        }
        item
    }
}

pub fn read_trace<R: BufRead>(source: R) -> Result<TraceReader<R>, TraceError> {
    TraceReader::new(source)
}

/// Order-sensitive 64-bit FNV-style digest of a trace's semantic content
/// (strings byte-wise, numbers one 64-bit word at a time), used as the trace
/// id that ties reports and oracle outputs together.
#[derive(Debug, Clone)]
pub struct TraceDigest {
    state: u64,
    events: u64,
}

impl Default for TraceDigest {
    fn default() -> Self {
        Self {
            state: 0xcbf2_9ce4_8422_2325,
            events: 0,
        }
    }
}

impl TraceDigest {
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    fn bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(Self::PRIME);
        }
    }

    #[inline]
    fn word(&mut self, w: u64) {
        self.state ^= w;
        self.state = self.state.wrapping_mul(Self::PRIME);
    }

    pub fn update_header(&mut self, h: &TraceHeader) {
        let c = &h.cache;
        for v in [c.line_size, c.num_sets, c.associativity, c.num_cores] {
            self.word(v as u64);
        }
        for g in &h.globals {
            self.bytes(g.name.as_bytes());
            self.word(g.start);
            self.word(g.size);
        }
        for (ip, stmt) in &h.symbols {
            self.word(*ip);
            self.bytes(stmt.as_bytes());
        }
        for (k, v) in &h.ground_truth {
            self.bytes(k.as_bytes());
            self.bytes(b"=");
            self.bytes(v.as_bytes());
        }
    }

    #[inline]
    pub fn update_event(&mut self, ev: &Event) {
        self.events += 1;
        match ev {
            Event::Access(a) => {
                self.word(a.seq ^ (a.tid as u64) << 48 ^ (a.kind as u64) << 62);
                self.word(a.ip);
                self.word(a.addr);
            }
            Event::Alloc(a) => {
                self.word(a.seq | 1 << 63);
                self.word(a.tid as u64 ^ a.callsite << 16);
                self.word(a.addr);
                self.word(a.size);
            }
            Event::Free(f) => {
                self.word(f.seq | 3 << 62);
                self.word(f.tid as u64);
                self.word(f.addr);
            }
        }
    }

    pub fn finish(&self) -> String {
        let mut d = self.clone();
        d.word(self.events);
        format!("{:016x}", d.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> TraceHeader {
        let mut h = TraceHeader::new(CacheConfig::new(64, 128, 8, 16));
        h.globals.push(GlobalRegion {
            name: "counter".into(),
            start: 0x600000,
            size: 8,
        });
        h.symbols.insert(0x401000, "main.c:10".into());
        h.ground_truth.push(("kind".into(), "true-sharing".into()));
        h
    }

    fn small_body() -> Vec<Event> {
        vec![
            Event::Alloc(AllocEvent {
                seq: 1,
                tid: 0,
                callsite: 7,
                addr: 0x2000,
                size: 64,
            }),
            Event::Access(AccessEvent {
                seq: 2,
                tid: 0,
                ip: 0x401000,
                addr: 0x2008,
                kind: AccessKind::Store,
            }),
            Event::Free(FreeEvent {
                seq: 3,
                tid: 0,
                addr: 0x2000,
            }),
        ]
    }

    fn decode(bytes: &[u8]) -> (TraceHeader, Vec<Result<Event, TraceError>>) {
        let r = TraceReader::new(bytes).unwrap();
        let h = r.header().clone();
        (h, r.collect())
    }

    #[test]
    fn empty_body_is_header_only() {
        let out = write_trace(&header(), Vec::new(), Vec::new()).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(text.lines().all(|l| !l.starts_with(['A', 'M', 'F'])));
        let (h, evs) = decode(&out);
        assert_eq!(h, header());
        assert!(evs.is_empty());
    }

    #[test]
    fn three_line_body_round_trips() {
        let out = write_trace(&header(), small_body(), Vec::new()).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| l.starts_with(['A', 'M', 'F'])).collect();
        assert_eq!(body, ["M 1 0 7 0x2000 64", "A 2 0 0x401000 0x2008 S", "F 3 0 0x2000"]);
        let (_, evs) = decode(&out);
        let evs: Vec<Event> = evs.into_iter().map(Result::unwrap).collect();
        assert_eq!(evs, small_body());
    }

    #[test]
    fn cfg_line_parses() {
        let (h, _) = decode(b"CFG line_size=64 sets=128 assoc=8 cores=16\n");
        assert_eq!(h.cache, CacheConfig::new(64, 128, 8, 16));
    }

    #[test]
    fn missing_cfg_is_error() {
        assert!(matches!(
            TraceReader::new(&b"A 1 0 0x1 0x2 L\n"[..]),
            Err(TraceError::MissingConfig)
        ));
    }

    #[test]
    fn free_before_alloc_is_unmatched() {
        let text = b"CFG line_size=64 sets=4 assoc=2 cores=1\nF 1 0 0x2000\nM 2 0 1 0x2000 8\n";
        let (_, evs) = decode(text);
        match &evs[0] {
            Err(e @ TraceError::UnmatchedFree { addr: 0x2000, .. }) => {
                assert!(e.to_string().contains("unmatched free"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(evs.len(), 1);
    }

    #[test]
    fn truncated_last_line_errors_after_prefix() {
        let text = b"CFG line_size=64 sets=4 assoc=2 cores=1\nA 1 0 0x10 0x40 L\nA 2 0 0x10 0x80 S\nA 3 0 0x1";
        let (_, evs) = decode(text);
        assert_eq!(evs.len(), 3);
        assert!(evs[0].is_ok() && evs[1].is_ok());
        match &evs[2] {
            Err(TraceError::Parse { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = b"CFG line_size=64 sets=4 assoc=2 cores=1\n# note\nA 1 0 0x10 0x40 X\n";
        let (_, evs) = decode(text);
        match &evs[0] {
            Err(TraceError::Parse { line: 3, msg }) => assert!(msg.contains("L or S")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn writer_rejects_out_of_order_and_overlap() {
        let mut w = TraceWriter::new(Vec::new(), &header()).unwrap();
        let a = |seq, addr| {
            Event::Alloc(AllocEvent {
                seq,
                tid: 0,
                callsite: 1,
                addr,
                size: 64,
            })
        };
        w.write_event(&a(5, 0x1000)).unwrap();
        assert!(matches!(w.write_event(&a(5, 0x4000)), Err(TraceError::OutOfOrder { .. })));
        assert!(matches!(w.write_event(&a(6, 0x1020)), Err(TraceError::Overlap { .. })));
        w.write_event(&a(7, 0x1040)).unwrap();
    }

    #[test]
    fn reader_rejects_overlapping_allocs() {
        let text = b"CFG line_size=64 sets=4 assoc=2 cores=1\nM 1 0 1 0x1000 64\nM 2 0 1 0x103f 8\n";
        let (_, evs) = decode(text);
        assert!(matches!(evs[1], Err(TraceError::Overlap { .. })));
    }

    #[test]
    fn overlapping_globals_rejected() {
        let mut h = header();
        h.globals.push(GlobalRegion {
            name: "other".into(),
            start: 0x600004,
            size: 8,
        });
        assert!(h.validate().is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let mut a = TraceDigest::default();
        let mut b = TraceDigest::default();
        a.update_header(&header());
        b.update_header(&header());
        for e in small_body() {
            a.update_event(&e);
            b.update_event(&e);
        }
        assert_eq!(a.finish(), b.finish());
        b.update_event(&small_body()[1]);
        assert_ne!(a.finish(), b.finish());
    }
}
