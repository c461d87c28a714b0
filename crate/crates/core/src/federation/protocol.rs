//! Newline-delimited JSON wire format.
//!
//! Every line is one envelope `{"type", "iter", "payload"}`. Rewards travel
//! as shortest-round-trip decimal strings so a TCP round reproduces the
//! in-process `f64` values bit for bit. No message carries target
//! distributions.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{GroupId, TaskMode};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadcastItem {
    pub question_id: String,
    pub response: String,
}

/// One iteration's rollout as sent to every group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutBroadcast {
    pub iteration: u64,
    pub task_mode: TaskMode,
    pub items: Vec<BroadcastItem>,
}

/// A group's rewards for a broadcast, aligned with its item order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub group: GroupId,
    pub iteration: u64,
    #[serde(with = "decimal_strings")]
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub group: GroupId,
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    Rollout(RolloutBroadcast),
    RewardReport(RewardReport),
    Error(ErrorPayload),
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Envelope {
    #[serde(rename = "type")]
    kind: String,
    iter: Option<u64>,
    payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    /// Well-formed envelope with a `type` this protocol does not define.
    UnknownType(String),
    Malformed(String),
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeError::UnknownType(t) => write!(f, "unknown message type {t:?}"),
            DecodeError::Malformed(m) => write!(f, "malformed message: {m}"),
        }
    }
}

impl Message {
    pub fn error(message: impl Into<String>) -> Self {
        Message::Error(ErrorPayload {
            message: message.into(),
        })
    }

    /// One JSON line, without the trailing newline.
    pub fn encode(&self) -> String {
        let (kind, iter, payload) = match self {
            Message::Hello(h) => ("hello", None, value(h)),
            Message::Rollout(r) => ("rollout", Some(r.iteration), value(r)),
            Message::RewardReport(r) => ("reward_report", Some(r.iteration), value(r)),
            Message::Error(e) => ("error", None, value(e)),
            Message::Shutdown => ("shutdown", None, Value::Object(Default::default())),
        };
        let env = Envelope {
            kind: kind.to_string(),
            iter,
            payload,
        };
        serde_json::to_string(&env).expect("envelope serializes")
    }

    pub fn decode(line: &str) -> Result<Self, DecodeError> {
        let env: Envelope =
            serde_json::from_str(line.trim()).map_err(|e| DecodeError::Malformed(e.to_string()))?;
        fn payload<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, DecodeError> {
            serde_json::from_value(v).map_err(|e| DecodeError::Malformed(e.to_string()))
        }
        let msg = match env.kind.as_str() {
            "hello" => Message::Hello(payload(env.payload)?),
            "rollout" => Message::Rollout(payload(env.payload)?),
            "reward_report" => Message::RewardReport(payload(env.payload)?),
            "error" => Message::Error(payload(env.payload)?),
            "shutdown" => Message::Shutdown,
            other => return Err(DecodeError::UnknownType(other.to_string())),
        };
        Ok(msg)
    }
}

fn value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload serializes")
}

mod decimal_strings {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| serde::de::Error::custom(format!("bad reward {t:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_rewards_are_decimal_strings() {
        let r = RewardReport {
            group: GroupId::new("us").unwrap(),
            iteration: 3,
            rewards: vec![0.1, 1.0, 0.7354149064592234],
        };
        let line = Message::RewardReport(r.clone()).encode();
        assert!(line.contains(r#""rewards":["0.1","1","0.7354149064592234"]"#), "{line}");
        assert!(line.contains(r#""type":"reward_report""#));
        assert!(line.contains(r#""iter":3"#));
        assert_eq!(Message::decode(&line).unwrap(), Message::RewardReport(r));
    }

    #[test]
    fn envelope_shapes() {
        let hello = Message::Hello(Hello {
            group: GroupId::new("g").unwrap(),
            protocol_version: PROTOCOL_VERSION,
        });
        assert_eq!(
            hello.encode(),
            r#"{"type":"hello","iter":null,"payload":{"group":"g","protocol_version":1}}"#
        );
        let rollout = Message::Rollout(RolloutBroadcast {
            iteration: 0,
            task_mode: TaskMode::Opa,
            items: vec![BroadcastItem {
                question_id: "q1".into(),
                response: "B,A".into(),
            }],
        });
        let line = rollout.encode();
        assert_eq!(
            line,
            r#"{"type":"rollout","iter":0,"payload":{"items":[{"question_id":"q1","response":"B,A"}],"iteration":0,"task_mode":"opa"}}"#
        );
        assert_eq!(Message::decode(&line).unwrap(), rollout);
        assert_eq!(
            Message::decode(&Message::Shutdown.encode()).unwrap(),
            Message::Shutdown
        );
    }

    #[test]
    fn unknown_and_malformed() {
        assert_eq!(
            Message::decode(r#"{"type":"gossip","iter":null,"payload":{}}"#),
            Err(DecodeError::UnknownType("gossip".into()))
        );
        assert!(matches!(Message::decode("not json"), Err(DecodeError::Malformed(_))));
        assert!(matches!(
            Message::decode(
                r#"{"type":"reward_report","iter":1,"payload":{"group":"g","iteration":1,"rewards":["x"]}}"#
            ),
            Err(DecodeError::Malformed(_))
        ));
    }
}
