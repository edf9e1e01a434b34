//! Wire messages of the external backend protocol.
//!
//! Newline-delimited JSON over a child process's stdin/stdout, one message per
//! line, one request in flight at a time:
//!
//! ```text
//! -> {"op":"hello","version":1}
//! <- {"ok":true,"classes":["positive","negative"]}
//! -> {"op":"predict","texts":["...", "..."]}
//! <- {"probs":[[0.6,0.4],[0.1,0.9]]}
//! -> {"op":"train","examples":[{"text":"...","label":"positive"}],"epochs":1}
//! <- {"ok":true}
//! -> {"op":"bye"}
//! ```

use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello { version: u32 },
    Predict { texts: Vec<String> },
    Train { examples: Vec<WireExample>, epochs: usize },
    Bye,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireExample {
    pub text: String,
    pub label: SentimentLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelloResponse {
    pub ok: bool,
    #[serde(default)]
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probs: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Ack {
    pub fn ok() -> Self {
        Ack { ok: true, error: None }
    }
}

pub fn expected_classes() -> Vec<String> {
    vec!["positive".to_string(), "negative".to_string()]
}
