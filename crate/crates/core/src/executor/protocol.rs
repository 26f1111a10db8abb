//! Request/response messages exchanged with an executor.
//!
//! Both transports carry the same bytes: a UTF-8 JSON document framed by a
//! 4-byte little-endian length. A request names the function and lists the
//! argument values (receiver first for instance methods):
//!
//! ```text
//! {"function":"com.example.Data.propagateData","args":[<value>, ...]}
//! ```
//!
//! The response reports the status, the return value (absent for `void`),
//! the post-call state of every argument and free-form log text:
//!
//! ```text
//! {"status":"ok","ret":<value>,"args_post":[<value>, ...],"log":""}
//! ```
//!
//! `status` is one of `ok`, `fault` or `timeout`. The reserved function name
//! [`LIST_FUNCTIONS`] asks the callee for the names it can dispatch; the reply
//! carries them as a `string[]` in `ret`.

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError};
use crate::typesys::{TypeDesc, Value};

pub const LIST_FUNCTIONS: &str = "__list__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub function: String,
    pub args: Vec<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Fault,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResponse {
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ret: Option<Value>,
    #[serde(default)]
    pub args_post: Vec<Value>,
    #[serde(default)]
    pub log: String,
}

impl ExecResponse {
    pub fn ok(ret: Option<Value>, args_post: Vec<Value>) -> Self {
        ExecResponse {
            status: ExecStatus::Ok,
            ret,
            args_post,
            log: String::new(),
        }
    }

    pub fn fault(log: impl Into<String>) -> Self {
        ExecResponse {
            status: ExecStatus::Fault,
            ret: None,
            args_post: Vec::new(),
            log: log.into(),
        }
    }

    pub fn timeout(log: impl Into<String>) -> Self {
        ExecResponse {
            status: ExecStatus::Timeout,
            ..ExecResponse::fault(log)
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    /// Reply to a [`LIST_FUNCTIONS`] request.
    pub fn function_list<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let elems = names.into_iter().map(Value::str).collect();
        ExecResponse::ok(Some(Value::array(TypeDesc::Str, elems)), Vec::new())
    }
}

pub fn encode_request(req: &ExecRequest) -> Vec<u8> {
    codec::frame(&serde_json::to_vec(req).expect("request serialization is infallible"))
}

pub fn decode_request(bytes: &[u8]) -> Result<ExecRequest, CodecError> {
    Ok(serde_json::from_slice(codec::unframe(bytes)?)?)
}

pub fn encode_response(resp: &ExecResponse) -> Vec<u8> {
    codec::frame(&serde_json::to_vec(resp).expect("response serialization is infallible"))
}

pub fn decode_response(bytes: &[u8]) -> Result<ExecResponse, CodecError> {
    Ok(serde_json::from_slice(codec::unframe(bytes)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_bytes_are_length_prefixed_json() {
        let req = ExecRequest {
            function: "id".into(),
            args: vec![Value::Int32(5)],
        };
        let bytes = encode_request(&req);
        let body = br#"{"function":"id","args":[{"kind":"int32","value":5}]}"#;
        assert_eq!(&bytes[..4], &(body.len() as u32).to_le_bytes());
        assert_eq!(&bytes[4..], body);
        assert_eq!(decode_request(&bytes).unwrap(), req);
    }

    #[test]
    fn void_response_omits_ret() {
        let resp = ExecResponse::ok(None, vec![]);
        let bytes = encode_response(&resp);
        assert_eq!(&bytes[4..], br#"{"status":"ok","args_post":[],"log":""}"#);
        assert_eq!(decode_response(&bytes).unwrap(), resp);
    }
}
