use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;

use super::protocol::{expected_classes, Ack, HelloResponse, PredictResponse, Request, WireExample, PROTOCOL_VERSION};
use super::{BackendError, ClassifierBackend, Prediction, ProbVector, TrainExample};
use crate::corpus::Utterance;

/// Line-oriented protocol client over any reader/writer pair.
#[derive(Debug)]
pub struct ProtocolClient<R, W> {
    reader: R,
    writer: W,
    batch_size: usize,
}

impl<R: BufRead, W: Write> ProtocolClient<R, W> {
    /// Wraps the streams and performs the handshake.
    pub fn connect(reader: R, writer: W, batch_size: usize) -> Result<Self, BackendError> {
        if batch_size == 0 {
            return Err(BackendError::Config("batch_size must be positive".into()));
        }
        let mut client = ProtocolClient { reader, writer, batch_size };
        let hello: HelloResponse = client.call_json(&Request::Hello { version: PROTOCOL_VERSION })?;
        if !hello.ok {
            return Err(BackendError::Protocol { message: "handshake refused".into(), raw: String::new() });
        }
        if hello.classes != expected_classes() {
            return Err(BackendError::Protocol {
                message: format!("peer classes {:?}, expected [positive, negative]", hello.classes),
                raw: String::new(),
            });
        }
        Ok(client)
    }

    /// Sends one request line and returns the raw response line.
    pub fn call(&mut self, request: &Request) -> Result<String, BackendError> {
        let mut line = serde_json::to_string(request).expect("requests always serialize");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| BackendError::Lost(format!("write failed: {e}")))?;

        let mut response = String::new();
        let n = self
            .reader
            .read_line(&mut response)
            .map_err(|e| BackendError::Lost(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(BackendError::Lost("peer closed its output".into()));
        }
        Ok(response.trim_end_matches(['\n', '\r']).to_string())
    }

    fn call_json<T: DeserializeOwned>(&mut self, request: &Request) -> Result<T, BackendError> {
        let raw = self.call(request)?;
        serde_json::from_str(&raw).map_err(|e| BackendError::Protocol { message: e.to_string(), raw })
    }

    /// Probabilities for one batch of texts, validated and count-checked.
    pub fn predict_texts(&mut self, texts: Vec<String>) -> Result<Vec<ProbVector>, BackendError> {
        let expected = texts.len();
        let raw = self.call(&Request::Predict { texts })?;
        let resp: PredictResponse = serde_json::from_str(&raw)
            .map_err(|e| BackendError::Protocol { message: e.to_string(), raw: raw.clone() })?;
        if resp.probs.len() != expected {
            return Err(BackendError::CountMismatch { expected, got: resp.probs.len() });
        }
        resp.probs
            .iter()
            .map(|&[p, n]| {
                ProbVector::new(p, n).ok_or_else(|| BackendError::Protocol {
                    message: format!("invalid probability pair [{p}, {n}]"),
                    raw: raw.clone(),
                })
            })
            .collect()
    }

    pub fn bye(&mut self) -> Result<(), BackendError> {
        let line = serde_json::to_string(&Request::Bye).expect("requests always serialize") + "\n";
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| BackendError::Lost(format!("write failed: {e}")))
    }
}

impl<R: BufRead, W: Write> ClassifierBackend for ProtocolClient<R, W> {
    fn predict_batch(&mut self, utterances: &[&Utterance]) -> Result<Vec<Prediction>, BackendError> {
        let mut out = Vec::with_capacity(utterances.len());
        for (batch, chunk) in utterances.chunks(self.batch_size).enumerate() {
            let texts = chunk.iter().map(|u| u.text.clone()).collect();
            let probs = self
                .predict_texts(texts)
                .map_err(|e| BackendError::Batch { batch, source: Box::new(e) })?;
            out.extend(chunk.iter().zip(probs).map(|(u, p)| Prediction::new(u.id.clone(), p)));
        }
        Ok(out)
    }

    fn train(&mut self, examples: &[TrainExample], epochs: usize) -> Result<(), BackendError> {
        if examples.is_empty() {
            return Ok(());
        }
        let mut wire = Vec::with_capacity(examples.len());
        for ex in examples {
            if !ex.label.is_binary() {
                return Err(BackendError::NonBinaryLabel(ex.utterance_id.clone()));
            }
            wire.push(WireExample { text: ex.text.clone(), label: ex.label });
        }
        let ack: Ack = self.call_json(&Request::Train { examples: wire, epochs })?;
        if !ack.ok {
            return Err(BackendError::Protocol {
                message: format!("train rejected: {}", ack.error.unwrap_or_default()),
                raw: String::new(),
            });
        }
        Ok(())
    }
}

/// A model served by a child process speaking the line protocol.
#[derive(Debug)]
pub struct ExternalBackend {
    child: Child,
    client: Option<ProtocolClient<BufReader<ChildStdout>, ChildStdin>>,
}

impl ExternalBackend {
    /// Spawns `cmd[0]` with `cmd[1..]` and completes the handshake.
    pub fn spawn(cmd: &[String], batch_size: usize) -> Result<Self, BackendError> {
        let (program, args) = cmd
            .split_first()
            .ok_or_else(|| BackendError::Config("external backend command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Lost(format!("failed to start {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut backend = ExternalBackend { child, client: None };
        match ProtocolClient::connect(BufReader::new(stdout), stdin, batch_size) {
            Ok(client) => {
                backend.client = Some(client);
                Ok(backend)
            }
            Err(e) => Err(backend.enrich(e)),
        }
    }

    fn enrich(&mut self, err: BackendError) -> BackendError {
        match err {
            BackendError::Lost(msg) => match self.child.try_wait() {
                Ok(Some(status)) => BackendError::Lost(format!("{msg}; peer exited with {status}")),
                _ => BackendError::Lost(msg),
            },
            BackendError::Batch { batch, source } => BackendError::Batch { batch, source: Box::new(self.enrich(*source)) },
            other => other,
        }
    }

    fn client(&mut self) -> Result<&mut ProtocolClient<BufReader<ChildStdout>, ChildStdin>, BackendError> {
        self.client.as_mut().ok_or_else(|| BackendError::Lost("backend already shut down".into()))
    }

    /// Raw request/response exchange.
    pub fn call(&mut self, request: &Request) -> Result<String, BackendError> {
        let r = self.client()?.call(request);
        r.map_err(|e| self.enrich(e))
    }

    /// Sends `bye` and waits briefly for the peer to exit, killing it otherwise.
    pub fn shutdown(&mut self) -> Result<(), BackendError> {
        if let Some(mut client) = self.client.take() {
            let _ = client.bye();
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(_)) => return Ok(()),
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
                _ => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    return Ok(());
                }
            }
        }
    }
}

impl ClassifierBackend for ExternalBackend {
    fn predict_batch(&mut self, utterances: &[&Utterance]) -> Result<Vec<Prediction>, BackendError> {
        let r = self.client()?.predict_batch(utterances);
        r.map_err(|e| self.enrich(e))
    }

    fn train(&mut self, examples: &[TrainExample], epochs: usize) -> Result<(), BackendError> {
        let r = self.client()?.train(examples, epochs);
        r.map_err(|e| self.enrich(e))
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LangTag, SentimentLabel, Token};

    const HELLO: &str = "{\"ok\":true,\"classes\":[\"positive\",\"negative\"]}\n";

    fn client(responses: &str, batch: usize) -> Result<ProtocolClient<&[u8], Vec<u8>>, BackendError> {
        ProtocolClient::connect(responses.as_bytes(), Vec::new(), batch)
    }

    fn utts(n: usize) -> Vec<Utterance> {
        (0..n)
            .map(|i| Utterance::from_tokens(format!("u{i}"), vec![Token::new(format!("w{i}"), LangTag::L1)], None))
            .collect()
    }

    #[test]
    fn handshake_then_predict() {
        let script = format!("{HELLO}{{\"probs\":[[0.6,0.4],[0.6,0.4]]}}\n");
        let mut c = client(&script, 16).unwrap();
        let us = utts(2);
        let refs: Vec<&Utterance> = us.iter().collect();
        let preds = c.predict_batch(&refs).unwrap();
        assert_eq!(preds.len(), 2);
        for (p, u) in preds.iter().zip(&us) {
            assert_eq!(p.utterance_id, u.id);
            assert_eq!(p.probs, ProbVector { p_positive: 0.6, p_negative: 0.4 });
        }
        let sent = String::from_utf8(c.writer.clone()).unwrap();
        let lines: Vec<&str> = sent.lines().collect();
        assert_eq!(lines[0], r#"{"op":"hello","version":1}"#);
        assert_eq!(lines[1], r#"{"op":"predict","texts":["w0","w1"]}"#);
    }

    #[test]
    fn count_mismatch() {
        let script = format!("{HELLO}{{\"probs\":[[0.6,0.4]]}}\n");
        let mut c = client(&script, 16).unwrap();
        let us = utts(2);
        let refs: Vec<&Utterance> = us.iter().collect();
        match c.predict_batch(&refs) {
            Err(BackendError::Batch { batch: 0, source }) => {
                assert!(matches!(*source, BackendError::CountMismatch { expected: 2, got: 1 }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn failed_batch_index_is_reported() {
        let script = format!("{HELLO}{{\"probs\":[[0.6,0.4],[0.6,0.4]]}}\n");
        let mut c = client(&script, 2).unwrap();
        let us = utts(3);
        let refs: Vec<&Utterance> = us.iter().collect();
        match c.predict_batch(&refs) {
            Err(BackendError::Batch { batch: 1, source }) => assert!(matches!(*source, BackendError::Lost(_))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_keeps_raw() {
        let script = format!("{HELLO}garbage\n");
        let mut c = client(&script, 16).unwrap();
        match c.predict_texts(vec!["x".into()]) {
            Err(BackendError::Protocol { raw, .. }) => assert_eq!(raw, "garbage"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_probabilities_are_rejected() {
        let script = format!("{HELLO}{{\"probs\":[[0.7,0.7]]}}\n");
        let mut c = client(&script, 16).unwrap();
        assert!(matches!(c.predict_texts(vec!["x".into()]), Err(BackendError::Protocol { .. })));
    }

    #[test]
    fn train_consumes_ack() {
        let script = format!("{HELLO}{{\"ok\":true}}\n");
        let mut c = client(&script, 16).unwrap();
        let examples: Vec<TrainExample> = (0..5)
            .map(|i| TrainExample::from_text(format!("u{i}"), "a b", SentimentLabel::Positive))
            .collect();
        c.train(&examples, 1).unwrap();
        let sent = String::from_utf8(c.writer.clone()).unwrap();
        let train_line = sent.lines().nth(1).unwrap();
        let v: serde_json::Value = serde_json::from_str(train_line).unwrap();
        assert_eq!(v["op"], "train");
        assert_eq!(v["epochs"], 1);
        assert_eq!(v["examples"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn eof_is_lost() {
        let mut c = client(HELLO, 16).unwrap();
        assert!(matches!(c.predict_texts(vec!["x".into()]), Err(BackendError::Lost(_))));
        assert!(matches!(client("", 16), Err(BackendError::Lost(_))));
    }

    #[test]
    fn wrong_classes_rejected() {
        let r = client("{\"ok\":true,\"classes\":[\"pos\",\"neg\"]}\n", 16);
        assert!(matches!(r, Err(BackendError::Protocol { .. })));
    }

    #[test]
    fn process_that_exits_immediately_is_lost() {
        let err = ExternalBackend::spawn(&["true".to_string()], 16).unwrap_err();
        assert!(matches!(err, BackendError::Lost(_)), "{err:?}");
    }

    #[test]
    fn missing_program_is_lost() {
        let err = ExternalBackend::spawn(&["/nonexistent/peer".to_string()], 16).unwrap_err();
        assert!(matches!(err, BackendError::Lost(_)));
    }
}
