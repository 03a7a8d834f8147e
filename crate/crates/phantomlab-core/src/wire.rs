//! Typed protocol messages and their canonical JSON wire encoding.
//!
//! Requests and responses are encoded as canonical JSON: keys sorted, no
//! insignificant whitespace, optional fields omitted when absent. A
//! registration request looks like
//!
//! ```json
//! {"id":100,"method":"registerDevice","params":{"mac":"60:01:94:A2:D5:7C",
//! "model":"JIKONG_LIVING_OUTLET_00003","version":"0.0.0;APP2.0;OTA1.0"},
//! "request":{"cid":"000000000000000010671484","uuid":""},
//! "system":{"key":"5gPFl8G4GyFZ1fPWk20m","sign":"…","time":"0"}}
//! ```
//!
//! and a success response carries `result.code == 1000` with the device ID in
//! `result.data.uuid`. The `sign` field is a keyed digest over the canonical
//! bytes of the message with the sign cleared; the real vendor algorithms are
//! unpublished, so the digest here is a simulation stand-in with the observed
//! shape (32 lowercase hex chars).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;

/// Success code in wire responses.
pub const CODE_SUCCESS: u32 = 1000;

/// Protocol method names, exactly as they appear on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "registerDevice")]
    RegisterDevice,
    #[serde(rename = "bindDevice")]
    BindDevice,
    #[serde(rename = "unbindDevice")]
    UnbindDevice,
    #[serde(rename = "loginDevice")]
    LoginDevice,
    #[serde(rename = "statusUpload")]
    StatusUpload,
    #[serde(rename = "controlCommand")]
    ControlCommand,
    #[serde(rename = "otaUpdate")]
    OtaUpdate,
    #[serde(rename = "discover")]
    Discover,
    #[serde(rename = "provision")]
    Provision,
    #[serde(rename = "appBind")]
    AppBind,
    #[serde(rename = "appUnbind")]
    AppUnbind,
    #[serde(rename = "appControl")]
    AppControl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::RegisterDevice => "registerDevice",
            Method::BindDevice => "bindDevice",
            Method::UnbindDevice => "unbindDevice",
            Method::LoginDevice => "loginDevice",
            Method::StatusUpload => "statusUpload",
            Method::ControlCommand => "controlCommand",
            Method::OtaUpdate => "otaUpdate",
            Method::Discover => "discover",
            Method::Provision => "provision",
            Method::AppBind => "appBind",
            Method::AppUnbind => "appUnbind",
            Method::AppControl => "appControl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A params/data value; the protocol only carries strings and integers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            Value::Int(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            Value::Str(_) => None,
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

pub type Params = BTreeMap<String, Value>;

/// The `system` envelope: legitimacy credentials and a timestamp (simulation
/// ticks rendered as a decimal string).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<String>,
    pub time: String,
}

/// The `request` envelope: chip ID and device ID context.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestCtx {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uuid: Option<String>,
}

/// A user account reference attached to app-side (and, under strict
/// authorization, device-side) requests. Credentials are random 128-bit
/// tokens, unforgeable within the simulation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountRef {
    pub credential: String,
    pub user_id: String,
}

/// A protocol request.
///
/// Fields are declared in alphabetical order so that struct serialization
/// emits canonical key order directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub account: Option<AccountRef>,
    pub id: u64,
    pub method: Method,
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<RequestCtx>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemFields>,
}

impl Request {
    pub fn new(method: Method, id: u64) -> Self {
        Request {
            account: None,
            id,
            method,
            params: Params::new(),
            request: None,
            system: None,
        }
    }

    pub fn param(&self, key: &str) -> Option<&Value> {
        self.params.get(key)
    }

    pub fn str_param(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(Value::as_str)
    }

    /// Device ID carried in the request context, if any.
    pub fn uuid(&self) -> Option<&str> {
        self.request
            .as_ref()
            .and_then(|r| r.uuid.as_deref())
            .filter(|u| !u.is_empty())
    }
}

/// The `result` body of a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseResult {
    pub code: u32,
    pub data: BTreeMap<String, Value>,
    pub msg: String,
}

/// A protocol response; `id` echoes the request id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub id: u64,
    pub result: ResponseResult,
}

impl Response {
    pub fn success(id: u64, data: BTreeMap<String, Value>) -> Self {
        Response {
            id,
            result: ResponseResult {
                code: CODE_SUCCESS,
                data,
                msg: "success".to_owned(),
            },
        }
    }

    pub fn error(id: u64, code: u32, msg: impl Into<String>) -> Self {
        Response {
            id,
            result: ResponseResult {
                code,
                data: BTreeMap::new(),
                msg: msg.into(),
            },
        }
    }

    pub fn is_success(&self) -> bool {
        self.result.code == CODE_SUCCESS
    }

    pub fn data_str(&self, key: &str) -> Option<&str> {
        self.result.data.get(key).and_then(Value::as_str)
    }
}

/// Either kind of wire message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Message {
    Request(Request),
    Response(Response),
}

/// Schema violation: a message missing mandatory fields or carrying unknown
/// ones.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaViolation {
    #[error("{method}: missing mandatory field {field}")]
    MissingField { method: Method, field: String },
    #[error("{method}: unknown params key {key}")]
    UnknownParam { method: Method, key: String },
    #[error("malformed message: {0}")]
    Malformed(String),
}

/// Encodes a message as canonical JSON bytes (sorted keys, no whitespace).
///
/// Encoding is deterministic: equal messages produce byte-identical output
/// across runs and platforms.
pub fn encode(message: &Message) -> Vec<u8> {
    // Struct fields are declared alphabetically and map params use BTreeMap,
    // so plain serialization is already canonical.
    serde_json::to_vec(message).expect("wire messages always serialize")
}

pub fn encode_request(request: &Request) -> Vec<u8> {
    serde_json::to_vec(request).expect("wire messages always serialize")
}

pub fn encode_response(response: &Response) -> Vec<u8> {
    serde_json::to_vec(response).expect("wire messages always serialize")
}

/// Decodes canonical JSON bytes back into a message. Unknown fields are
/// rejected.
pub fn decode(bytes: &[u8]) -> Result<Message, SchemaViolation> {
    // Try the request shape first; a response has a disjoint mandatory
    // field set ("result"), so untagged decoding is unambiguous.
    serde_json::from_slice::<Message>(bytes)
        .map_err(|e| SchemaViolation::Malformed(e.to_string()))
}

pub fn decode_request(bytes: &[u8]) -> Result<Request, SchemaViolation> {
    serde_json::from_slice::<Request>(bytes)
        .map_err(|e| SchemaViolation::Malformed(e.to_string()))
}

/// Per-method schema: mandatory params, allowed params, and whether a device
/// ID is required in the request context.
struct MethodSchema {
    required_params: &'static [&'static str],
    optional_params: &'static [&'static str],
    requires_uuid: bool,
}

fn schema_of(method: Method) -> MethodSchema {
    use Method::*;
    match method {
        RegisterDevice => MethodSchema {
            required_params: &["mac", "model"],
            optional_params: &["sn", "version"],
            requires_uuid: false,
        },
        BindDevice => MethodSchema {
            required_params: &[],
            optional_params: &["hwid", "mac", "reset_nonce", "secret", "tagkey"],
            requires_uuid: true,
        },
        UnbindDevice => MethodSchema {
            required_params: &[],
            optional_params: &[],
            requires_uuid: true,
        },
        LoginDevice => MethodSchema {
            required_params: &[],
            optional_params: &["hwid", "mac", "secret", "tagkey"],
            requires_uuid: true,
        },
        StatusUpload => MethodSchema {
            required_params: &[],
            optional_params: &["status"],
            requires_uuid: true,
        },
        ControlCommand => MethodSchema {
            required_params: &["command"],
            optional_params: &[],
            requires_uuid: true,
        },
        OtaUpdate => MethodSchema {
            required_params: &["model"],
            optional_params: &["secret", "version"],
            requires_uuid: false,
        },
        Discover => MethodSchema {
            required_params: &[],
            optional_params: &[],
            requires_uuid: false,
        },
        Provision => MethodSchema {
            required_params: &["ssid"],
            optional_params: &[],
            requires_uuid: false,
        },
        AppBind | AppUnbind => MethodSchema {
            required_params: &[],
            optional_params: &[],
            requires_uuid: false,
        },
        AppControl => MethodSchema {
            required_params: &["command"],
            optional_params: &[],
            requires_uuid: true,
        },
    }
}

/// Validates a request against its method schema.
pub fn validate_request(request: &Request) -> Result<(), SchemaViolation> {
    let schema = schema_of(request.method);
    for required in schema.required_params {
        if !request.params.contains_key(*required) {
            return Err(SchemaViolation::MissingField {
                method: request.method,
                field: (*required).to_owned(),
            });
        }
    }
    for key in request.params.keys() {
        if !schema.required_params.contains(&key.as_str())
            && !schema.optional_params.contains(&key.as_str())
        {
            return Err(SchemaViolation::UnknownParam {
                method: request.method,
                key: key.clone(),
            });
        }
    }
    if schema.requires_uuid && request.uuid().is_none() {
        return Err(SchemaViolation::MissingField {
            method: request.method,
            field: "request.uuid".to_owned(),
        });
    }
    Ok(())
}

/// Keyed digest over canonical payload bytes, rendered as 32 lowercase hex
/// chars. Deterministic; simulated stand-in for unpublished vendor signing.
pub fn compute_sign(payload: &[u8], key: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((key.len() as u64).to_be_bytes());
    hasher.update(key.as_bytes());
    hasher.update(payload);
    let digest = hasher.finalize();
    hex::encode(&digest[..16])
}

/// Signs a request in place: the sign field is computed over the canonical
/// encoding of the request with an empty sign.
pub fn sign_request(request: &mut Request, key: &str) {
    let system = request.system.get_or_insert_with(SystemFields::default);
    system.key = Some(key.to_owned());
    system.sign = Some(String::new());
    let payload = encode_request(request);
    let sign = compute_sign(&payload, key);
    request
        .system
        .as_mut()
        .expect("system envelope just inserted")
        .sign = Some(sign);
}

/// Verifies a signed request against the expected key. Returns false on a
/// missing or mismatching sign.
pub fn verify_sign(request: &Request, key: &str) -> bool {
    let Some(system) = &request.system else {
        return false;
    };
    let Some(sign) = system.sign.clone() else {
        return false;
    };
    let mut unsigned = request.clone();
    unsigned
        .system
        .as_mut()
        .expect("system envelope present")
        .sign = Some(String::new());
    compute_sign(&encode_request(&unsigned), key) == sign
}
