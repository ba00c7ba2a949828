//! Synchronous message rounds over a communication graph.
//!
//! Each call to [`Network::exchange`] is one lock-step round: every payload is
//! checked against the topology and the phase rules, then all of them are
//! delivered together and appended to the transcript in `(sender, receiver)`
//! order. The transcript is what an eavesdropper on every link would see.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::netgraph::WeightedGraph;
use crate::paillier::{Ciphertext, PublicKey};

#[derive(Debug, thiserror::Error)]
pub enum SimnetError {
    #[error("agents {0} and {1} are not neighbours")]
    Topology(usize, usize),
    #[error("{kind} payload is not allowed in the {phase} phase")]
    PhaseViolation { phase: Phase, kind: PayloadKind },
    #[error("transcript record {index} breaks the phase rules: {kind} in {phase}")]
    Transcript { index: usize, phase: Phase, kind: PayloadKind },
    #[error("transcript I/O: {0}")]
    Io(#[from] io::Error),
    #[error("transcript parse error on line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// Protocol phase of a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Shuffle,
    Consensus,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Shuffle => "shuffle",
            Phase::Consensus => "consensus",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadKind {
    PublicKey,
    Ciphertext,
    PlaintextState,
}

impl PayloadKind {
    pub fn allowed_in(self, phase: Phase) -> bool {
        match phase {
            Phase::Shuffle => matches!(self, PayloadKind::PublicKey | PayloadKind::Ciphertext),
            Phase::Consensus => self == PayloadKind::PlaintextState,
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadKind::PublicKey => "public-key",
            PayloadKind::Ciphertext => "ciphertext",
            PayloadKind::PlaintextState => "plaintext-state",
        })
    }
}

/// A message body.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    PublicKey(PublicKey),
    Ciphertext(Ciphertext),
    State(f64),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::PublicKey(_) => PayloadKind::PublicKey,
            Payload::Ciphertext(_) => PayloadKind::Ciphertext,
            Payload::State(_) => PayloadKind::PlaintextState,
        }
    }

    /// Wire text: decimal integers for keys and ciphertexts, shortest
    /// round-trip decimal for states.
    pub fn to_text(&self) -> String {
        match self {
            Payload::PublicKey(pk) => pk.n().to_string(),
            Payload::Ciphertext(c) => c.value().to_string(),
            Payload::State(x) => format!("{x:?}"),
        }
    }
}

/// One delivered message as an eavesdropper records it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub round: u64,
    pub sender: usize,
    pub receiver: usize,
    pub phase: Phase,
    pub kind: PayloadKind,
    pub payload: String,
}

/// Ordered message log of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    records: Vec<Record>,
}

impl Transcript {
    pub fn from_records(records: Vec<Record>) -> Self {
        Transcript { records }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks that every record's payload kind is allowed in its phase.
    pub fn validate(&self) -> Result<(), SimnetError> {
        for (index, r) in self.records.iter().enumerate() {
            if !r.kind.allowed_in(r.phase) {
                return Err(SimnetError::Transcript { index, phase: r.phase, kind: r.kind });
            }
        }
        Ok(())
    }

    /// Line-delimited JSON, one record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), SimnetError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, SimnetError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|source| SimnetError::Parse { line: i + 1, source })?;
            records.push(rec);
        }
        Ok(Transcript { records })
    }

    pub fn count(&self, phase: Phase, kind: PayloadKind) -> usize {
        self.records.iter().filter(|r| r.phase == phase && r.kind == kind).count()
    }
}

/// Read-only projection of a transcript onto one phase (or all of it).
pub fn eavesdropper_view(transcript: &Transcript, phase: Option<Phase>) -> Vec<&Record> {
    transcript
        .records
        .iter()
        .filter(|r| phase.is_none_or(|p| r.phase == p))
        .collect()
}

/// A message addressed along a directed edge.
#[derive(Clone, Debug)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub payload: Payload,
}

impl Message {
    pub fn new(from: usize, to: usize, payload: Payload) -> Self {
        Message { from, to, payload }
    }
}

/// What one agent received in a round: `(sender, payload)` sorted by sender.
pub type Inbox = Vec<(usize, Payload)>;

/// Lock-step message fabric over a graph.
pub struct Network {
    graph: Arc<WeightedGraph>,
    round: u64,
    capture: bool,
    transcript: Transcript,
    sink: Option<Box<dyn Write + Send>>,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("n", &self.graph.n())
            .field("round", &self.round)
            .field("capture", &self.capture)
            .field("records", &self.transcript.len())
            .finish()
    }
}

impl Network {
    /// A network that keeps a full in-memory transcript.
    pub fn new(graph: Arc<WeightedGraph>) -> Self {
        Network { graph, round: 0, capture: true, transcript: Transcript::default(), sink: None }
    }

    /// Same topology checks, but no transcript is kept (Monte Carlo mode).
    pub fn without_capture(graph: Arc<WeightedGraph>) -> Self {
        Network { capture: false, ..Network::new(graph) }
    }

    /// Additionally streams each record as a JSON line to `sink`.
    pub fn with_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<WeightedGraph> {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.graph.neighbors(i).iter().map(|&(j, _)| j)
    }

    /// Rounds completed so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn capturing(&self) -> bool {
        self.capture
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Runs one round: validates, records and delivers all `messages`.
    ///
    /// Returns one inbox per agent. Nothing is delivered or recorded if any
    /// message is invalid. An empty round does not advance the round counter.
    pub fn exchange(&mut self, phase: Phase, mut messages: Vec<Message>) -> Result<Vec<Inbox>, SimnetError> {
        for m in &messages {
            if !self.graph.has_edge(m.from, m.to) {
                return Err(SimnetError::Topology(m.from, m.to));
            }
            let kind = m.payload.kind();
            if !kind.allowed_in(phase) {
                return Err(SimnetError::PhaseViolation { phase, kind });
            }
        }
        if messages.is_empty() {
            return Ok(vec![Vec::new(); self.n()]);
        }
        messages.sort_by_key(|m| (m.from, m.to));
        if self.capture || self.sink.is_some() {
            for m in &messages {
                let rec = Record {
                    round: self.round,
                    sender: m.from,
                    receiver: m.to,
                    phase,
                    kind: m.payload.kind(),
                    payload: m.payload.to_text(),
                };
                if let Some(sink) = self.sink.as_mut() {
                    serde_json::to_writer(&mut *sink, &rec).map_err(io::Error::from)?;
                    sink.write_all(b"\n")?;
                }
                if self.capture {
                    self.transcript.records.push(rec);
                }
            }
        }
        let mut inboxes: Vec<Inbox> = vec![Vec::new(); self.n()];
        for m in messages {
            inboxes[m.to].push((m.from, m.payload));
        }
        self.round += 1;
        Ok(inboxes)
    }

    /// One consensus round: every agent sends its state to every neighbour.
    pub fn broadcast_states(&mut self, states: &[f64]) -> Result<Vec<Inbox>, SimnetError> {
        let mut msgs = Vec::with_capacity(2 * self.graph.edge_count());
        for (i, &x) in states.iter().enumerate() {
            for &(j, _) in self.graph.neighbors(i) {
                msgs.push(Message::new(i, j, Payload::State(x)));
            }
        }
        self.exchange(Phase::Consensus, msgs)
    }

    pub fn flush(&mut self) -> Result<(), SimnetError> {
        if let Some(s) = self.sink.as_mut() {
            s.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::GraphSpec;

    fn cycle() -> Arc<WeightedGraph> {
        Arc::new(GraphSpec::cycle(10, 0.3).build().unwrap())
    }

    #[test]
    fn cycle_neighbours() {
        let net = Network::new(cycle());
        for i in 0..10 {
            assert_eq!(net.neighbors(i).count(), 2);
        }
    }

    #[test]
    fn non_neighbour_is_rejected() {
        let mut net = Network::new(cycle());
        let err = net
            .exchange(Phase::Consensus, vec![Message::new(0, 5, Payload::State(1.0))])
            .unwrap_err();
        assert!(matches!(err, SimnetError::Topology(0, 5)));
        assert!(net.transcript().is_empty());
    }

    #[test]
    fn empty_round_changes_nothing() {
        let mut net = Network::new(cycle());
        net.exchange(Phase::Shuffle, Vec::new()).unwrap();
        assert!(net.transcript().is_empty());
        assert_eq!(net.round(), 0);
    }

    #[test]
    fn plaintext_in_shuffle_phase_is_refused() {
        let mut net = Network::new(cycle());
        let err = net
            .exchange(Phase::Shuffle, vec![Message::new(0, 1, Payload::State(1.0))])
            .unwrap_err();
        assert!(matches!(err, SimnetError::PhaseViolation { .. }));
    }

    #[test]
    fn consensus_round_records_every_direction_in_order() {
        let mut net = Network::new(cycle());
        let states: Vec<f64> = (0..10).map(f64::from).collect();
        let inboxes = net.broadcast_states(&states).unwrap();
        assert_eq!(net.transcript().count(Phase::Consensus, PayloadKind::PlaintextState), 20);
        assert_eq!(inboxes[0], vec![(1, Payload::State(1.0)), (9, Payload::State(9.0))]);
        let order: Vec<_> = net.transcript().records().iter().map(|r| (r.sender, r.receiver)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        net.transcript().validate().unwrap();
        let view = eavesdropper_view(net.transcript(), Some(Phase::Shuffle));
        assert!(view.is_empty());
    }

    #[test]
    fn jsonl_roundtrip_and_tamper_detection() {
        let mut net = Network::new(cycle());
        net.broadcast_states(&[0.5; 10]).unwrap();
        let mut buf = Vec::new();
        net.transcript().write_jsonl(&mut buf).unwrap();
        let back = Transcript::read_jsonl(&buf[..]).unwrap();
        assert_eq!(&back, net.transcript());
        let text = String::from_utf8(buf).unwrap().replacen("\"consensus\"", "\"shuffle\"", 1);
        let tampered = Transcript::read_jsonl(text.as_bytes()).unwrap();
        assert!(tampered.validate().is_err());
    }

    #[test]
    fn sink_receives_records_without_capture() {
        #[derive(Clone, Default)]
        struct Shared(Arc<std::sync::Mutex<Vec<u8>>>);
        impl Write for Shared {
            fn write(&mut self, b: &[u8]) -> io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let shared = Shared::default();
        let mut net = Network::without_capture(cycle()).with_sink(Box::new(shared.clone()));
        net.broadcast_states(&[1.0; 10]).unwrap();
        assert!(net.transcript().is_empty());
        let text = String::from_utf8(shared.0.lock().unwrap().clone()).unwrap();
        assert_eq!(text.lines().count(), 20);
    }
}
