//! C ABI over the consent platform and resource server.
//!
//! Handles are opaque; every other value crosses the boundary as a JSON
//! string in UTF-8. Functions return a [`PdmStatus`]; on any non-OK
//! status the thread-local message behind [`pdm_last_error`] says why.
//! Strings returned through out-parameters are owned by the caller and
//! must be released with [`pdm_string_free`].

use pdm_core::contracts::audit::{audit_query, AuditFilter};
use pdm_core::contracts::policy::Operation;
use pdm_core::crypto::{KeyPair, PrivateKey, PublicKey};
use pdm_core::ledger::{ChainVerdict, Channel, Digest, Ledger, CONSENT_CHANNEL, LOG_CHANNEL};
use pdm_core::platform::{DatasetId, Platform, PlatformError};
use pdm_core::resource_server::{signed_request, ApiRequest, ResourceServer};
use serde::Deserialize;
use serde_json::{json, Value};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result of every ABI call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PdmStatus {
    PdmOk = 0,
    /// A required pointer argument was null.
    PdmNullArg = 1,
    /// An input string was not valid UTF-8.
    PdmUtf8 = 2,
    /// An input string was not the JSON shape the call expects.
    PdmJson = 3,
    /// The chain committed a rejection; the reason is in the last error.
    PdmRejected = 4,
    /// A named record, dataset, or profile does not exist.
    PdmMissing = 5,
    /// Key material failed to parse or an envelope failed to open.
    PdmCrypto = 6,
    /// Unexpected internal failure, including caught panics.
    PdmInternal = 7,
}

/// Opaque platform handle: ledger, contracts, clock, nonce source.
pub struct PdmPlatform(Platform);

/// Opaque resource-server handle: the off-chain profile store.
pub struct PdmResourceServer(ResourceServer);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

fn fail(status: PdmStatus, msg: &str) -> PdmStatus {
    set_error(msg);
    status
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread. Never freed by
/// the caller.
#[no_mangle]
pub extern "C" fn pdm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned through any out-parameter here.
#[no_mangle]
pub unsafe extern "C" fn pdm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ----- internal plumbing --------------------------------------------------

fn guarded(f: impl FnOnce() -> PdmStatus) -> PdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(PdmStatus::PdmInternal, "caught panic across the boundary"),
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, PdmStatus> {
    if ptr.is_null() {
        return Err(fail(PdmStatus::PdmNullArg, "null string argument"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| fail(PdmStatus::PdmUtf8, &e.to_string()))
}

fn write_out(out: *mut *mut c_char, value: &Value) -> PdmStatus {
    if out.is_null() {
        return fail(PdmStatus::PdmNullArg, "null out-parameter");
    }
    let body = serde_json::to_string(value).unwrap();
    let body = CString::new(body).unwrap();
    unsafe { *out = body.into_raw() };
    PdmStatus::PdmOk
}

fn parse_json<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, PdmStatus> {
    serde_json::from_str(s).map_err(|e| fail(PdmStatus::PdmJson, &e.to_string()))
}

fn platform_error(e: PlatformError) -> PdmStatus {
    let status = match &e {
        PlatformError::Rejected { .. } => PdmStatus::PdmRejected,
        PlatformError::MissingRecord(_) => PdmStatus::PdmMissing,
        PlatformError::Crypto(_) => PdmStatus::PdmCrypto,
        PlatformError::BadResponse(_) => PdmStatus::PdmInternal,
    };
    fail(status, &e.to_string())
}

/// Hex keypair as it crosses the boundary.
#[derive(Deserialize)]
struct KeyPairIn {
    public_key: Option<String>,
    private_key: String,
}

impl KeyPairIn {
    fn keypair(&self) -> Result<KeyPair, PdmStatus> {
        let private = PrivateKey::from_hex(&self.private_key)
            .map_err(|e| fail(PdmStatus::PdmCrypto, &e.to_string()))?;
        let keypair = KeyPair {
            public: private.public(),
            private,
        };
        if let Some(public) = &self.public_key {
            if *public != keypair.public.to_hex() {
                return Err(fail(
                    PdmStatus::PdmCrypto,
                    "public key does not match private key",
                ));
            }
        }
        Ok(keypair)
    }
}

#[derive(Deserialize)]
struct DatasetIn {
    subject: String,
    controller: String,
    encryption: String,
}

impl DatasetIn {
    fn dataset(&self) -> Result<DatasetId, PdmStatus> {
        let pk = |s: &str| {
            PublicKey::from_hex(s).map_err(|e| fail(PdmStatus::PdmCrypto, &e.to_string()))
        };
        Ok(DatasetId {
            subject: pk(&self.subject)?,
            controller: pk(&self.controller)?,
            encryption: pk(&self.encryption)?,
        })
    }
}

fn parse_op(s: &str) -> Result<Operation, PdmStatus> {
    Operation::parse(s).ok_or_else(|| {
        fail(
            PdmStatus::PdmJson,
            &format!("unknown operation {s:?}; expected create|read|update|delete"),
        )
    })
}

unsafe fn platform_mut<'a>(h: *mut PdmPlatform) -> Result<&'a mut Platform, PdmStatus> {
    h.as_mut()
        .map(|p| &mut p.0)
        .ok_or_else(|| fail(PdmStatus::PdmNullArg, "null platform handle"))
}

unsafe fn platform_ref<'a>(h: *const PdmPlatform) -> Result<&'a Platform, PdmStatus> {
    h.as_ref()
        .map(|p| &p.0)
        .ok_or_else(|| fail(PdmStatus::PdmNullArg, "null platform handle"))
}

unsafe fn server_mut<'a>(h: *mut PdmResourceServer) -> Result<&'a mut ResourceServer, PdmStatus> {
    h.as_mut()
        .map(|s| &mut s.0)
        .ok_or_else(|| fail(PdmStatus::PdmNullArg, "null resource server handle"))
}

macro_rules! ok_or_return {
    ($expr:expr) => {
        match $expr {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

// ----- platform lifecycle --------------------------------------------------

/// Fresh platform with a deterministic nonce stream for `seed`.
#[no_mangle]
pub extern "C" fn pdm_platform_new(seed: u64) -> *mut PdmPlatform {
    Box::into_raw(Box::new(PdmPlatform(Platform::with_seed(seed))))
}

#[no_mangle]
pub unsafe extern "C" fn pdm_platform_free(h: *mut PdmPlatform) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Moves the platform clock to `ms`; the clock never moves backwards.
#[no_mangle]
pub unsafe extern "C" fn pdm_platform_set_clock(h: *mut PdmPlatform, ms: u64) -> PdmStatus {
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        platform.set_clock(ms);
        PdmStatus::PdmOk
    })
}

/// Out: `{"public_key", "private_key"}`, drawn from the platform's rng.
#[no_mangle]
pub unsafe extern "C" fn pdm_keypair_generate(
    h: *mut PdmPlatform,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        let kp = platform.generate_keypair();
        write_out(
            out_json,
            &json!({ "public_key": kp.public.to_hex(), "private_key": kp.private.to_hex() }),
        )
    })
}

// ----- consent flows --------------------------------------------------------

/// In: `{"subject": keypair, "controller": keypair, "controller_ops": ["read", …]}`.
/// Out: dataset keys, both first tokens, the registration tx id, and the
/// dataset's encryption private key for the subject to hold.
#[no_mangle]
pub unsafe extern "C" fn pdm_register(
    h: *mut PdmPlatform,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    #[derive(Deserialize)]
    struct Request {
        subject: KeyPairIn,
        controller: KeyPairIn,
        controller_ops: Vec<String>,
    }
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        let req: Request = ok_or_return!(parse_json(ok_or_return!(read_str(request_json))));
        let subject = ok_or_return!(req.subject.keypair());
        let controller = ok_or_return!(req.controller.keypair());
        let mut ops = std::collections::BTreeSet::new();
        for op in &req.controller_ops {
            ops.insert(ok_or_return!(parse_op(op)));
        }
        let (reg, enc) = match platform.register(&subject, &controller, &ops) {
            Ok(v) => v,
            Err(e) => return platform_error(e),
        };
        write_out(
            out_json,
            &json!({
                "dataset": {
                    "subject": reg.dataset.subject.to_hex(),
                    "controller": reg.dataset.controller.to_hex(),
                    "encryption": reg.dataset.encryption.to_hex(),
                },
                "owner_token": reg.owner_token,
                "controller_token": reg.controller_token,
                "tx_id": reg.tx_id,
                "encryption_private_key": enc.private.to_hex(),
            }),
        )
    })
}

/// In: `{"dataset", "uploader": keypair, "pointer", "content_hash": hex}`.
#[no_mangle]
pub unsafe extern "C" fn pdm_upload(
    h: *mut PdmPlatform,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    #[derive(Deserialize)]
    struct Request {
        dataset: DatasetIn,
        uploader: KeyPairIn,
        pointer: String,
        content_hash: String,
    }
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        let req: Request = ok_or_return!(parse_json(ok_or_return!(read_str(request_json))));
        let dataset = ok_or_return!(req.dataset.dataset());
        let uploader = ok_or_return!(req.uploader.keypair());
        let hash = match Digest::from_hex(&req.content_hash) {
            Some(hash) => hash,
            None => return fail(PdmStatus::PdmJson, "content_hash must be 64 hex chars"),
        };
        match platform.upload(&dataset, &uploader, req.pointer.as_bytes(), hash) {
            Ok(committed) => write_out(out_json, &json!({ "tx_id": committed.tx_id })),
            Err(e) => platform_error(e),
        }
    })
}

/// In: `{"dataset", "subject", "controller", "processor": keypairs, "op"}`.
/// Out: `{"access_token"}`.
#[no_mangle]
pub unsafe extern "C" fn pdm_grant(
    h: *mut PdmPlatform,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    #[derive(Deserialize)]
    struct Request {
        dataset: DatasetIn,
        subject: KeyPairIn,
        controller: KeyPairIn,
        processor: KeyPairIn,
        op: String,
    }
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        let req: Request = ok_or_return!(parse_json(ok_or_return!(read_str(request_json))));
        let dataset = ok_or_return!(req.dataset.dataset());
        let subject = ok_or_return!(req.subject.keypair());
        let controller = ok_or_return!(req.controller.keypair());
        let processor = ok_or_return!(req.processor.keypair());
        let op = ok_or_return!(parse_op(&req.op));
        match platform.grant(&dataset, &subject, &controller, &processor, op) {
            Ok(token) => write_out(out_json, &json!({ "access_token": token })),
            Err(e) => platform_error(e),
        }
    })
}

/// In: `{"dataset", "signer": keypair, "processor": pubkey hex, "op"}`.
/// Out: `{"regenerated_token": string|null}`.
#[no_mangle]
pub unsafe extern "C" fn pdm_revoke(
    h: *mut PdmPlatform,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    #[derive(Deserialize)]
    struct Request {
        dataset: DatasetIn,
        signer: KeyPairIn,
        processor: String,
        op: String,
    }
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        let req: Request = ok_or_return!(parse_json(ok_or_return!(read_str(request_json))));
        let dataset = ok_or_return!(req.dataset.dataset());
        let signer = ok_or_return!(req.signer.keypair());
        let processor = match PublicKey::from_hex(&req.processor) {
            Ok(pk) => pk,
            Err(e) => return fail(PdmStatus::PdmCrypto, &e.to_string()),
        };
        let op = ok_or_return!(parse_op(&req.op));
        match platform.revoke(&dataset, &signer, processor, op) {
            Ok(token) => write_out(out_json, &json!({ "regenerated_token": token })),
            Err(e) => platform_error(e),
        }
    })
}

/// In: `{"dataset", "requester": keypair, "op"}`. Out: the encrypted
/// pointer, the current token, and the committed tx id.
#[no_mangle]
pub unsafe extern "C" fn pdm_access(
    h: *mut PdmPlatform,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    #[derive(Deserialize)]
    struct Request {
        dataset: DatasetIn,
        requester: KeyPairIn,
        op: String,
    }
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        let req: Request = ok_or_return!(parse_json(ok_or_return!(read_str(request_json))));
        let dataset = ok_or_return!(req.dataset.dataset());
        let requester = ok_or_return!(req.requester.keypair());
        let op = ok_or_return!(parse_op(&req.op));
        match platform.access(&dataset, &requester, op) {
            Ok(granted) => write_out(
                out_json,
                &json!({
                    "en_pointer": granted.en_pointer.to_hex(),
                    "access_token": granted.access_token,
                    "tx_id": granted.tx_id,
                }),
            ),
            Err(e) => platform_error(e),
        }
    })
}

/// In: `{"token", "holder": keypair, "op"}`. Out: the verdict; the
/// decision commits to the log channel either way, so OK is returned for
/// denials too, with `accepted` false.
#[no_mangle]
pub unsafe extern "C" fn pdm_validate(
    h: *mut PdmPlatform,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    #[derive(Deserialize)]
    struct Request {
        token: String,
        holder: KeyPairIn,
        op: String,
    }
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        let req: Request = ok_or_return!(parse_json(ok_or_return!(read_str(request_json))));
        let holder = ok_or_return!(req.holder.keypair());
        let op = ok_or_return!(parse_op(&req.op));
        let (verdict, committed) = platform.validate(&req.token, &holder, op);
        write_out(
            out_json,
            &json!({
                "accepted": verdict.accepted,
                "reason": verdict.reason,
                "holder": verdict.holder,
                "remaining_s": verdict.remaining_s,
                "tx_id": committed.tx_id,
            }),
        )
    })
}

/// In: `{"owner"?, "controller"?, "processor"?: pubkey hex, "from_ms"?,
/// "to_ms"?}`. Out: the matching audit rows, oldest first.
#[no_mangle]
pub unsafe extern "C" fn pdm_audit_query(
    h: *const PdmPlatform,
    filter_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    #[derive(Deserialize, Default)]
    struct FilterIn {
        owner: Option<String>,
        controller: Option<String>,
        processor: Option<String>,
        from_ms: Option<u64>,
        to_ms: Option<u64>,
    }
    guarded(|| {
        let platform = ok_or_return!(platform_ref(h));
        let raw: FilterIn = ok_or_return!(parse_json(ok_or_return!(read_str(filter_json))));
        let pk = |s: &Option<String>| -> Result<Option<PublicKey>, PdmStatus> {
            match s {
                Some(hex) => PublicKey::from_hex(hex)
                    .map(Some)
                    .map_err(|e| fail(PdmStatus::PdmCrypto, &e.to_string())),
                None => Ok(None),
            }
        };
        let filter = AuditFilter {
            owner: ok_or_return!(pk(&raw.owner)),
            controller: ok_or_return!(pk(&raw.controller)),
            processor: ok_or_return!(pk(&raw.processor)),
            from_ms: raw.from_ms,
            to_ms: raw.to_ms,
        };
        let rows: Vec<Value> = audit_query(platform.ledger(), &filter)
            .iter()
            .map(|e| {
                json!({
                    "who": e.who.to_hex(),
                    "what": e.what,
                    "when": e.when,
                    "which": e.which,
                    "verdict": e.verdict,
                })
            })
            .collect();
        write_out(out_json, &Value::Array(rows))
    })
}

/// Out: per-channel verification verdicts; OK even when corrupt, the
/// caller reads the report.
#[no_mangle]
pub unsafe extern "C" fn pdm_verify_chains(
    h: *const PdmPlatform,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guarded(|| {
        let platform = ok_or_return!(platform_ref(h));
        let rows: Vec<Value> = platform
            .ledger()
            .channels()
            .iter()
            .map(|c| match c.verify() {
                ChainVerdict::Ok => json!({
                    "channel": c.name(),
                    "verdict": "ok",
                    "height": c.height(),
                }),
                ChainVerdict::Corrupt { height } => json!({
                    "channel": c.name(),
                    "verdict": "corrupt",
                    "height": height,
                }),
            })
            .collect();
        write_out(out_json, &Value::Array(rows))
    })
}

/// Out: both chains as NDJSON strings keyed by channel name.
#[no_mangle]
pub unsafe extern "C" fn pdm_export_chains(
    h: *const PdmPlatform,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guarded(|| {
        let platform = ok_or_return!(platform_ref(h));
        let mut map = serde_json::Map::new();
        for channel in platform.ledger().channels() {
            map.insert(
                channel.name().to_string(),
                Value::String(channel.export_ndjson()),
            );
        }
        write_out(out_json, &Value::Object(map))
    })
}

/// In: the shape `pdm_export_chains` produced. Replaces the ledger;
/// sequence and clock continue from the imported history.
#[no_mangle]
pub unsafe extern "C" fn pdm_import_chains(
    h: *mut PdmPlatform,
    chains_json: *const c_char,
) -> PdmStatus {
    guarded(|| {
        let platform = ok_or_return!(platform_mut(h));
        let map: std::collections::BTreeMap<String, String> =
            ok_or_return!(parse_json(ok_or_return!(read_str(chains_json))));
        let mut ledger = Ledger::new();
        for name in [CONSENT_CHANNEL, LOG_CHANNEL] {
            let Some(data) = map.get(name) else {
                return fail(PdmStatus::PdmJson, &format!("missing channel {name}"));
            };
            match Channel::import_ndjson(name, data) {
                Ok(channel) => *ledger.channel_mut(name).unwrap() = channel,
                Err(e) => return fail(PdmStatus::PdmJson, &e.to_string()),
            }
        }
        platform.restore_ledger(ledger);
        PdmStatus::PdmOk
    })
}

// ----- resource server ------------------------------------------------------

#[no_mangle]
pub extern "C" fn pdm_resource_server_new() -> *mut PdmResourceServer {
    Box::into_raw(Box::new(PdmResourceServer(ResourceServer::new())))
}

#[no_mangle]
pub unsafe extern "C" fn pdm_resource_server_free(h: *mut PdmResourceServer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Builds a signed resource request. In: `{"holder": keypair, "token",
/// "operation", "profile_id"?, "payload"?, "nonce"}`. Out: the request
/// envelope for `pdm_resource_handle` or `pdm_resource_erase`.
#[no_mangle]
pub unsafe extern "C" fn pdm_resource_sign_request(
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    #[derive(Deserialize)]
    struct Request {
        holder: KeyPairIn,
        token: String,
        operation: String,
        profile_id: Option<String>,
        payload: Option<Value>,
        nonce: String,
    }
    guarded(|| {
        let req: Request = ok_or_return!(parse_json(ok_or_return!(read_str(request_json))));
        let holder = ok_or_return!(req.holder.keypair());
        let op = ok_or_return!(parse_op(&req.operation));
        let api = signed_request(
            &holder,
            &req.token,
            op,
            req.profile_id.as_deref(),
            req.payload,
            &req.nonce,
        );
        write_out(out_json, &serde_json::to_value(&api).unwrap())
    })
}

fn run_resource(
    server: &mut ResourceServer,
    platform: &mut Platform,
    request: &str,
    erase: bool,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    let req: ApiRequest = match parse_json(request) {
        Ok(req) => req,
        Err(status) => return status,
    };
    let resp = if erase {
        server.erase(platform, &req)
    } else {
        server.handle(platform, &req)
    };
    write_out(out_json, &serde_json::to_value(&resp).unwrap())
}

/// One CRUD request against the store; the chain rules first. The
/// response JSON carries status ok|denied|error plus the audit ref.
#[no_mangle]
pub unsafe extern "C" fn pdm_resource_handle(
    server: *mut PdmResourceServer,
    platform: *mut PdmPlatform,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guarded(|| {
        let server = ok_or_return!(server_mut(server));
        let platform = ok_or_return!(platform_mut(platform));
        let request = ok_or_return!(read_str(request_json));
        run_resource(server, platform, request, false, out_json)
    })
}

/// The erasure right; honored only for the dataset's data subject.
#[no_mangle]
pub unsafe extern "C" fn pdm_resource_erase(
    server: *mut PdmResourceServer,
    platform: *mut PdmPlatform,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guarded(|| {
        let server = ok_or_return!(server_mut(server));
        let platform = ok_or_return!(platform_mut(platform));
        let request = ok_or_return!(read_str(request_json));
        run_resource(server, platform, request, true, out_json)
    })
}

/// Out: `{"match": bool}` comparing the stored document hash with the
/// dataset's on-chain content digest.
#[no_mangle]
pub unsafe extern "C" fn pdm_resource_integrity(
    server: *const PdmResourceServer,
    platform: *const PdmPlatform,
    profile_id: *const c_char,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guarded(|| {
        let server = match server.as_ref() {
            Some(s) => &s.0,
            None => return fail(PdmStatus::PdmNullArg, "null resource server handle"),
        };
        let platform = ok_or_return!(platform_ref(platform));
        let profile_id = ok_or_return!(read_str(profile_id));
        match server.integrity_check(platform, profile_id) {
            Ok(matches) => write_out(out_json, &json!({ "match": matches })),
            Err(e) => fail(PdmStatus::PdmMissing, &e.to_string()),
        }
    })
}

/// Out: the store as JSON: documents, dataset index, mutation count.
#[no_mangle]
pub unsafe extern "C" fn pdm_resource_export(
    server: *const PdmResourceServer,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guarded(|| {
        let server = match server.as_ref() {
            Some(s) => &s.0,
            None => return fail(PdmStatus::PdmNullArg, "null resource server handle"),
        };
        let value: Value = serde_json::from_str(&server.export_json()).unwrap();
        write_out(out_json, &value)
    })
}
