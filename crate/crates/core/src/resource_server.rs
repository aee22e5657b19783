//! Off-chain profile store gated by on-chain token validation.
//!
//! Every CRUD request names a token; the server submits a validation
//! transaction and moves the store only on an accepted verdict. Accepted
//! and denied decisions alike commit to the log channel, and the response
//! carries that transaction id as `audit_ref`, so the trail of who asked
//! for what is complete whether or not access was granted.
//!
//! Three rules hold throughout:
//!
//! - The store mutates only behind an accepted validation; the mutation
//!   counter exists so tests can hold it to that.
//! - The store holds documents and public key material only, never a
//!   private key, so a curious operator learns nothing secret.
//! - Every request is answered. Requests whose caller key cannot even be
//!   parsed are answered locally as `bad_request`, since there is nobody
//!   to bill a validation to; everything else reaches the chain.
//!
//! Erasure is the subject's right alone: it removes the profile only when
//! the validated caller is the data subject named by the dataset behind
//! it, whatever the presented token would otherwise allow.
//!
//! The [`http`] submodule serves the same API over a socket.

use crate::contracts::policy::Operation;
use crate::contracts::{read_consent, signing_payload, ContractName};
use crate::crypto::{KeyPair, PublicKey};
use crate::ledger::{Digest, StateKey, TxStatus};
use crate::platform::Platform;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use thiserror::Error;

pub const API_ENDPOINT: &str = "/ProfileManagement";
pub const ERASE_ENDPOINT: &str = "/ProfileManagement/erase";
pub const REST_ENDPOINT: &str = "localhost:8080";
pub const CONTENT_TYPE: &str = "application/json";

#[derive(Debug, Error)]
pub enum ResourceError {
    #[error("no stored document for {0}")]
    MissingDocument(String),
    #[error("profile {0} is not indexed to an on-chain dataset")]
    Unindexed(String),
    #[error("no on-chain content hash for {0}")]
    MissingHash(String),
    #[error("malformed store export: {0}")]
    Malformed(String),
}

/// One stored profile. `version` counts accepted writes, and the content
/// hash covers attributes and version, so every accepted update changes
/// the hash an integrity check compares against the chain.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ProfileDocument {
    pub profile_id: String,
    pub attributes: BTreeMap<String, Value>,
    pub version: u64,
}

impl ProfileDocument {
    /// Digest of the canonical JSON rendering. BTreeMap ordering keeps the
    /// bytes reproducible across processes.
    pub fn content_hash(&self) -> Digest {
        let canon = json!({ "attributes": self.attributes, "version": self.version });
        Digest::of(canon.to_string().as_bytes())
    }

    fn to_body(&self) -> Value {
        json!({
            "profile_id": self.profile_id,
            "attributes": self.attributes,
            "version": self.version,
            "content_hash": self.content_hash().to_hex(),
        })
    }
}

/// Credential fields of one request. `pubkey` names the caller, and
/// `signature` covers token, caller key, and operation under `nonce`, so a
/// request cannot be replayed for a different operation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RequestParams {
    pub pubkey: String,
    pub signature: String,
    pub token: String,
    pub operation: String,
    #[serde(default)]
    pub profile_id: Option<String>,
    #[serde(default)]
    pub nonce: Option<String>,
}

/// One request envelope, shaped like the HTTP POST it arrives as.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApiRequest {
    pub api_endpoint: String,
    pub rest_endpoint: String,
    pub method: String,
    pub header: String,
    pub params: RequestParams,
    #[serde(default)]
    pub payload: Option<Value>,
}

/// Builds a well-formed request whose validation payload is signed by
/// `holder`. The private half never leaves the caller.
pub fn signed_request(
    holder: &KeyPair,
    token: &str,
    operation: Operation,
    profile_id: Option<&str>,
    payload: Option<Value>,
    nonce: &str,
) -> ApiRequest {
    let pk_hex = holder.public.to_hex();
    let msg = signing_payload(
        "token_validation",
        &[token, &pk_hex, operation.as_str()],
        nonce,
    );
    ApiRequest {
        api_endpoint: API_ENDPOINT.into(),
        rest_endpoint: REST_ENDPOINT.into(),
        method: "POST".into(),
        header: CONTENT_TYPE.into(),
        params: RequestParams {
            pubkey: pk_hex,
            signature: holder.sign(&msg).to_hex(),
            token: token.into(),
            operation: operation.as_str().into(),
            profile_id: profile_id.map(String::from),
            nonce: Some(nonce.into()),
        },
        payload,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiStatus {
    Ok,
    Denied,
    Error,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: ApiStatus,
    pub body: Value,
    /// Transaction id of the validation decision; present whenever the
    /// request reached the chain, for accepted and denied calls alike.
    pub audit_ref: Option<String>,
}

impl ApiResponse {
    fn ok(body: Value, audit_ref: String) -> Self {
        ApiResponse {
            status: ApiStatus::Ok,
            body,
            audit_ref: Some(audit_ref),
        }
    }

    fn denied(reason: &str, audit_ref: String) -> Self {
        ApiResponse {
            status: ApiStatus::Denied,
            body: json!({ "reason": reason }),
            audit_ref: Some(audit_ref),
        }
    }

    fn error(reason: &str, audit_ref: Option<String>) -> Self {
        ApiResponse {
            status: ApiStatus::Error,
            body: json!({ "reason": reason }),
            audit_ref,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        self.body["reason"].as_str()
    }

    pub fn http_code(&self) -> u16 {
        match self.status {
            ApiStatus::Ok => 200,
            ApiStatus::Denied => 403,
            ApiStatus::Error => match self.reason() {
                Some("not_found") => 404,
                Some("already_exists") => 409,
                _ => 400,
            },
        }
    }
}

/// The profile store plus its gatekeeping logic. `dataset_index` remembers
/// which on-chain dataset guards each profile, learned from the creating
/// token; erasure and integrity checks resolve the chain side through it.
#[derive(Default)]
pub struct ResourceServer {
    docs: BTreeMap<String, ProfileDocument>,
    dataset_index: BTreeMap<String, StateKey>,
    mutations: u64,
}

impl ResourceServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn document(&self, profile_id: &str) -> Option<&ProfileDocument> {
        self.docs.get(profile_id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &ProfileDocument> {
        self.docs.values()
    }

    pub fn profile_count(&self) -> usize {
        self.docs.len()
    }

    pub fn dataset_key(&self, profile_id: &str) -> Option<&StateKey> {
        self.dataset_index.get(profile_id)
    }

    /// Count of accepted store writes: create, update, delete, erase.
    pub fn mutation_count(&self) -> u64 {
        self.mutations
    }

    /// Answers one CRUD request. The chain rules first; the store moves
    /// only on an accepted validation.
    pub fn handle(&mut self, platform: &mut Platform, req: &ApiRequest) -> ApiResponse {
        let (pk, op) = match screen(req) {
            Ok(v) => v,
            Err(resp) => return resp,
        };
        match self.validate(platform, req, pk) {
            Ok(audit) => self.dispatch(platform, req, op, audit),
            Err(resp) => resp,
        }
    }

    /// The erasure right. Removes the profile only when the validated
    /// caller is the data subject of the dataset behind it; a controller
    /// or processor is denied even with a delete-scoped token.
    pub fn erase(&mut self, platform: &mut Platform, req: &ApiRequest) -> ApiResponse {
        let (pk, op) = match screen(req) {
            Ok(v) => v,
            Err(resp) => return resp,
        };
        if op != Operation::Delete {
            return ApiResponse::error("operation", None);
        }
        let audit = match self.validate(platform, req, pk) {
            Ok(audit) => audit,
            Err(resp) => return resp,
        };
        let Some(profile_id) = req.params.profile_id.as_deref() else {
            return ApiResponse::error("profile_id", Some(audit));
        };
        if !self.docs.contains_key(profile_id) {
            return ApiResponse::error("not_found", Some(audit));
        }
        let subject = self
            .dataset_index
            .get(profile_id)
            .and_then(|key| key.parts().ok())
            .and_then(|parts| parts.first().copied());
        let Some(subject) = subject else {
            return ApiResponse::error("unindexed", Some(audit));
        };
        if pk != subject {
            return ApiResponse::denied("owner_rights", audit);
        }
        self.docs.remove(profile_id);
        self.dataset_index.remove(profile_id);
        self.mutations += 1;
        ApiResponse::ok(json!({ "erased": profile_id }), audit)
    }

    /// Compares the stored document's hash with the on-chain content
    /// digest of its dataset. `Ok(true)` means they match.
    pub fn integrity_check(
        &self,
        platform: &Platform,
        profile_id: &str,
    ) -> Result<bool, ResourceError> {
        let doc = self
            .docs
            .get(profile_id)
            .ok_or_else(|| ResourceError::MissingDocument(profile_id.into()))?;
        let key = self
            .dataset_index
            .get(profile_id)
            .ok_or_else(|| ResourceError::Unindexed(profile_id.into()))?;
        let parts = key
            .parts()
            .map_err(|_| ResourceError::Unindexed(profile_id.into()))?;
        let &[subject, controller, _processor, enc] = &parts[..] else {
            return Err(ResourceError::Unindexed(profile_id.into()));
        };
        let consent_key = StateKey::consent(&subject, &controller, &enc);
        let record = read_consent(platform.ledger(), &consent_key)
            .ok_or_else(|| ResourceError::MissingHash(profile_id.into()))?;
        let on_chain = record
            .hash
            .ok_or_else(|| ResourceError::MissingHash(profile_id.into()))?;
        Ok(on_chain == doc.content_hash())
    }

    /// Serializes documents and dataset index; no key material to leak.
    pub fn export_json(&self) -> String {
        let export = StoreExport {
            documents: self.docs.values().cloned().collect(),
            dataset_index: self
                .dataset_index
                .iter()
                .map(|(k, v)| (k.clone(), v.as_str().to_string()))
                .collect(),
            mutations: self.mutations,
        };
        serde_json::to_string_pretty(&export).unwrap()
    }

    pub fn import_json(s: &str) -> Result<Self, ResourceError> {
        let export: StoreExport =
            serde_json::from_str(s).map_err(|e| ResourceError::Malformed(e.to_string()))?;
        Ok(ResourceServer {
            docs: export
                .documents
                .into_iter()
                .map(|d| (d.profile_id.clone(), d))
                .collect(),
            dataset_index: export
                .dataset_index
                .into_iter()
                .map(|(k, v)| (k, StateKey::raw(v)))
                .collect(),
            mutations: export.mutations,
        })
    }

    /// Submits the validation transaction. A rejected commit becomes a
    /// denial carrying the chain's reason; either way the transaction id
    /// is the audit reference.
    fn validate(
        &self,
        platform: &mut Platform,
        req: &ApiRequest,
        pk: PublicKey,
    ) -> Result<String, ApiResponse> {
        let committed = platform.submit(
            ContractName::Log,
            "token_validation",
            vec![
                req.params.token.clone(),
                req.params.pubkey.clone(),
                req.params.operation.clone(),
                req.params.signature.clone(),
                req.params.nonce.clone().unwrap_or_default(),
            ],
            pk,
        );
        match committed.status {
            TxStatus::Success => Ok(committed.tx_id),
            TxStatus::Rejected => Err(ApiResponse::denied(
                committed.reason.as_deref().unwrap_or("rejected"),
                committed.tx_id,
            )),
        }
    }

    fn dispatch(
        &mut self,
        platform: &Platform,
        req: &ApiRequest,
        op: Operation,
        audit: String,
    ) -> ApiResponse {
        let Some(profile_id) = req.params.profile_id.as_deref() else {
            return ApiResponse::error("profile_id", Some(audit));
        };
        match op {
            Operation::Create => {
                if self.docs.contains_key(profile_id) {
                    return ApiResponse::error("already_exists", Some(audit));
                }
                let Some(attributes) = object_payload(&req.payload) else {
                    return ApiResponse::error("payload", Some(audit));
                };
                // The creating token pins the profile to its dataset;
                // erasure and integrity need that chain side later.
                let Some((key, _)) = platform.token_record_by_token(&req.params.token) else {
                    return ApiResponse::error("unindexed", Some(audit));
                };
                let doc = ProfileDocument {
                    profile_id: profile_id.into(),
                    attributes,
                    version: 1,
                };
                let body = doc.to_body();
                self.dataset_index.insert(profile_id.into(), key);
                self.docs.insert(profile_id.into(), doc);
                self.mutations += 1;
                ApiResponse::ok(body, audit)
            }
            Operation::Read => match self.docs.get(profile_id) {
                Some(doc) => ApiResponse::ok(doc.to_body(), audit),
                None => ApiResponse::error("not_found", Some(audit)),
            },
            Operation::Update => {
                let Some(attributes) = object_payload(&req.payload) else {
                    return ApiResponse::error("payload", Some(audit));
                };
                match self.docs.get_mut(profile_id) {
                    Some(doc) => {
                        doc.attributes = attributes;
                        doc.version += 1;
                        self.mutations += 1;
                        let body = doc.to_body();
                        ApiResponse::ok(body, audit)
                    }
                    None => ApiResponse::error("not_found", Some(audit)),
                }
            }
            Operation::Delete => match self.docs.remove(profile_id) {
                Some(_) => {
                    self.dataset_index.remove(profile_id);
                    self.mutations += 1;
                    ApiResponse::ok(json!({ "deleted": profile_id }), audit)
                }
                None => ApiResponse::error("not_found", Some(audit)),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoreExport {
    documents: Vec<ProfileDocument>,
    dataset_index: BTreeMap<String, String>,
    mutations: u64,
}

/// Shape gate. Failures here are the only requests answered without a
/// chain transaction: a caller key that does not parse has nobody to
/// bill the validation to, and the rest never name a valid operation.
fn screen(req: &ApiRequest) -> Result<(PublicKey, Operation), ApiResponse> {
    if !req.method.eq_ignore_ascii_case("POST") {
        return Err(ApiResponse::error("method_not_allowed", None));
    }
    if !req.header.to_ascii_lowercase().contains(CONTENT_TYPE) {
        return Err(ApiResponse::error("content_type", None));
    }
    if !req.api_endpoint.starts_with(API_ENDPOINT) {
        return Err(ApiResponse::error("endpoint", None));
    }
    if req.params.token.is_empty() {
        return Err(ApiResponse::error("token", None));
    }
    let Ok(pk) = PublicKey::from_hex(&req.params.pubkey) else {
        return Err(ApiResponse::error("pubkey", None));
    };
    let Some(op) = Operation::parse(&req.params.operation) else {
        return Err(ApiResponse::error("operation", None));
    };
    Ok((pk, op))
}

fn object_payload(payload: &Option<Value>) -> Option<BTreeMap<String, Value>> {
    let map = payload.as_ref()?.as_object()?;
    Some(map.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
}

/// Minimal HTTP/1.1 front end over [`ResourceServer::handle`] and
/// [`ResourceServer::erase`]. Credentials travel as percent-encoded query
/// parameters, the payload as a JSON body. One platform and one store sit
/// behind a lock, so requests serialize exactly as a single node would.
pub mod http {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{SocketAddr, TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;
    use std::time::Duration;

    pub type Shared = Arc<Mutex<(Platform, ResourceServer)>>;

    /// Called under the lock after each handled request; hosts use it to
    /// persist chains and store before the response is on the wire.
    pub type Flush = Box<dyn Fn(&Platform, &ResourceServer) + Send>;

    pub struct HttpServer {
        addr: SocketAddr,
        stop: Arc<AtomicBool>,
        handle: Option<JoinHandle<()>>,
    }

    impl HttpServer {
        pub fn addr(&self) -> SocketAddr {
            self.addr
        }

        pub fn stop(mut self) {
            self.shutdown();
        }

        fn shutdown(&mut self) {
            self.stop.store(true, Ordering::SeqCst);
            if let Some(handle) = self.handle.take() {
                let _ = handle.join();
            }
        }
    }

    impl Drop for HttpServer {
        fn drop(&mut self) {
            self.shutdown();
        }
    }

    /// Binds and serves on a background thread until stopped. Bind to
    /// port 0 to let the OS pick.
    pub fn serve(bind: &str, shared: Shared) -> std::io::Result<HttpServer> {
        serve_hooked(bind, shared, None)
    }

    pub fn serve_hooked(
        bind: &str,
        shared: Shared,
        flush: Option<Flush>,
    ) -> std::io::Result<HttpServer> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        // Non-blocking accept so the loop observes the stop flag.
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = handle_conn(stream, &shared, flush.as_ref());
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(HttpServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    fn handle_conn(
        mut stream: TcpStream,
        shared: &Shared,
        flush: Option<&Flush>,
    ) -> std::io::Result<()> {
        stream.set_nonblocking(false)?;
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        let mut reader = BufReader::new(stream.try_clone()?);

        let mut line = String::new();
        reader.read_line(&mut line)?;
        let mut parts = line.split_whitespace();
        let method = parts.next().unwrap_or("").to_string();
        let target = parts.next().unwrap_or("").to_string();

        let mut headers = BTreeMap::new();
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h)? == 0 {
                break;
            }
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((name, value)) = h.split_once(':') {
                headers.insert(name.trim().to_ascii_lowercase(), value.trim().to_string());
            }
        }

        let len: usize = headers
            .get("content-length")
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        let mut body = vec![0u8; len];
        if len > 0 {
            reader.read_exact(&mut body)?;
        }

        let (code, payload) = route(shared, flush, &method, &target, &headers, &body);
        write_response(&mut stream, code, &payload)
    }

    fn route(
        shared: &Shared,
        flush: Option<&Flush>,
        method: &str,
        target: &str,
        headers: &BTreeMap<String, String>,
        body: &[u8],
    ) -> (u16, Value) {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        if method == "GET" && path == "/health" {
            return (200, json!({ "status": "ok" }));
        }
        let erase = match path {
            API_ENDPOINT => false,
            ERASE_ENDPOINT => true,
            _ => return (404, error_payload("no_route")),
        };
        let payload = if body.is_empty() {
            None
        } else {
            match serde_json::from_slice(body) {
                Ok(v) => Some(v),
                Err(_) => return (400, error_payload("payload")),
            }
        };
        let q = parse_query(query);
        let get = |k: &str| q.get(k).cloned().unwrap_or_default();
        let req = ApiRequest {
            api_endpoint: path.to_string(),
            rest_endpoint: headers.get("host").cloned().unwrap_or_default(),
            method: method.to_string(),
            header: headers.get("content-type").cloned().unwrap_or_default(),
            params: RequestParams {
                pubkey: get("pubkey"),
                signature: get("signature"),
                token: get("token"),
                operation: get("operation"),
                profile_id: q.get("profile_id").cloned(),
                nonce: q.get("nonce").cloned(),
            },
            payload,
        };
        let mut guard = shared.lock().unwrap_or_else(|p| p.into_inner());
        let (platform, server) = &mut *guard;
        let resp = if erase {
            server.erase(platform, &req)
        } else {
            server.handle(platform, &req)
        };
        if let Some(flush) = flush {
            flush(platform, server);
        }
        (resp.http_code(), serde_json::to_value(&resp).unwrap())
    }

    fn error_payload(reason: &str) -> Value {
        json!({ "status": "error", "body": { "reason": reason }, "audit_ref": null })
    }

    fn write_response(stream: &mut TcpStream, code: u16, payload: &Value) -> std::io::Result<()> {
        let body = payload.to_string();
        let phrase = match code {
            200 => "OK",
            400 => "Bad Request",
            403 => "Forbidden",
            404 => "Not Found",
            409 => "Conflict",
            _ => "OK",
        };
        write!(
            stream,
            "HTTP/1.1 {code} {phrase}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
    }

    fn parse_query(q: &str) -> BTreeMap<String, String> {
        q.split('&')
            .filter(|p| !p.is_empty())
            .filter_map(|p| {
                let (k, v) = p.split_once('=')?;
                Some((percent_decode(k), percent_decode(v)))
            })
            .collect()
    }

    fn percent_decode(s: &str) -> String {
        fn hexval(b: u8) -> Option<u8> {
            (b as char).to_digit(16).map(|d| d as u8)
        }
        let bytes = s.as_bytes();
        let mut out = Vec::with_capacity(bytes.len());
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'%' => {
                    let pair = (
                        bytes.get(i + 1).copied().and_then(hexval),
                        bytes.get(i + 2).copied().and_then(hexval),
                    );
                    if let (Some(hi), Some(lo)) = pair {
                        out.push(hi * 16 + lo);
                        i += 3;
                    } else {
                        out.push(b'%');
                        i += 1;
                    }
                }
                b'+' => {
                    out.push(b' ');
                    i += 1;
                }
                b => {
                    out.push(b);
                    i += 1;
                }
            }
        }
        String::from_utf8_lossy(&out).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::{DatasetId, Registration};
    use std::collections::BTreeSet;

    struct World {
        platform: Platform,
        server: ResourceServer,
        subject: KeyPair,
        controller: KeyPair,
        processor: KeyPair,
        dataset: DatasetId,
        owner_token: String,
        controller_token: String,
    }

    fn world() -> World {
        let mut platform = Platform::with_seed(11);
        let subject = platform.generate_keypair();
        let controller = platform.generate_keypair();
        let processor = platform.generate_keypair();
        let ops: BTreeSet<Operation> = [Operation::Read, Operation::Update].into();
        let (reg, _enc): (Registration, KeyPair) =
            platform.register(&subject, &controller, &ops).unwrap();
        World {
            platform,
            server: ResourceServer::new(),
            subject,
            controller,
            processor,
            dataset: reg.dataset,
            owner_token: reg.owner_token,
            controller_token: reg.controller_token,
        }
    }

    fn profile_payload(name: &str) -> Value {
        json!({ "name": name, "mbox": format!("mailto:{}@example.org", name) })
    }

    #[test]
    fn owner_walks_create_read_update_delete() {
        let mut w = world();
        let create = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("p1"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );
        assert_eq!(create.status, ApiStatus::Ok);
        assert_eq!(create.body["version"], 1);
        let created_hash = create.body["content_hash"].as_str().unwrap().to_string();

        let read = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Read,
                Some("p1"),
                None,
                "n2",
            ),
        );
        assert_eq!(read.status, ApiStatus::Ok);
        assert_eq!(read.body["attributes"]["name"], "alice");

        let update = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Update,
                Some("p1"),
                Some(profile_payload("alice2")),
                "n3",
            ),
        );
        assert_eq!(update.status, ApiStatus::Ok);
        assert_eq!(update.body["version"], 2);
        assert_ne!(update.body["content_hash"].as_str().unwrap(), created_hash);

        let delete = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Delete,
                Some("p1"),
                None,
                "n4",
            ),
        );
        assert_eq!(delete.status, ApiStatus::Ok);

        let gone = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Read,
                Some("p1"),
                None,
                "n5",
            ),
        );
        assert_eq!(gone.status, ApiStatus::Error);
        assert_eq!(gone.reason(), Some("not_found"));

        // Every answer, the miss included, carries a distinct audit entry.
        let refs: Vec<_> = [&create, &read, &update, &delete, &gone]
            .iter()
            .map(|r| r.audit_ref.clone().unwrap())
            .collect();
        let unique: BTreeSet<_> = refs.iter().collect();
        assert_eq!(unique.len(), refs.len());
        assert_eq!(w.server.mutation_count(), 3);
    }

    #[test]
    fn processor_is_held_to_its_scope() {
        let mut w = world();
        let create = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("p1"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );
        assert_eq!(create.status, ApiStatus::Ok);

        let subject = w.subject.public;
        let controller = w.controller.public;
        let token = {
            let World {
                platform,
                dataset,
                subject,
                controller,
                processor,
                ..
            } = &mut w;
            platform
                .grant(dataset, subject, controller, processor, Operation::Read)
                .unwrap()
        };
        let _ = (subject, controller);

        let read = w.server.handle(
            &mut w.platform,
            &signed_request(&w.processor, &token, Operation::Read, Some("p1"), None, "n2"),
        );
        assert_eq!(read.status, ApiStatus::Ok);

        let update = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.processor,
                &token,
                Operation::Update,
                Some("p1"),
                Some(profile_payload("mallory")),
                "n3",
            ),
        );
        assert_eq!(update.status, ApiStatus::Denied);
        assert_eq!(update.reason(), Some("scope_miss"));
        assert!(update.audit_ref.is_some());
        assert_eq!(w.server.document("p1").unwrap().version, 1);
        assert_eq!(
            w.server.document("p1").unwrap().attributes["name"],
            "alice"
        );
    }

    #[test]
    fn revocation_kills_the_old_token() {
        let mut w = world();
        w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("p1"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );
        let token = w
            .platform
            .grant(
                &w.dataset,
                &w.subject,
                &w.controller,
                &w.processor,
                Operation::Read,
            )
            .unwrap();
        let before = w.server.handle(
            &mut w.platform,
            &signed_request(&w.processor, &token, Operation::Read, Some("p1"), None, "n2"),
        );
        assert_eq!(before.status, ApiStatus::Ok);

        let regenerated = w
            .platform
            .revoke(&w.dataset, &w.subject, w.processor.public, Operation::Read)
            .unwrap()
            .unwrap();

        // The superseded token no longer resolves; the regenerated one
        // resolves but its consent now stands rejected.
        let stale = w.server.handle(
            &mut w.platform,
            &signed_request(&w.processor, &token, Operation::Read, Some("p1"), None, "n3"),
        );
        assert_eq!(stale.status, ApiStatus::Denied);
        assert_eq!(stale.reason(), Some("unknown_token"));

        let rescoped = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.processor,
                &regenerated,
                Operation::Read,
                Some("p1"),
                None,
                "n4",
            ),
        );
        assert_eq!(rescoped.status, ApiStatus::Denied);
        assert_eq!(rescoped.reason(), Some("not_approved"));
        assert_eq!(w.server.document("p1").unwrap().version, 1);
    }

    #[test]
    fn expiry_blocks_processors_but_not_the_owner() {
        let mut w = world();
        w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("p1"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );
        let token = w
            .platform
            .grant(
                &w.dataset,
                &w.subject,
                &w.controller,
                &w.processor,
                Operation::Read,
            )
            .unwrap();

        let lifetime_ms = w.platform.config().token_lifetime_s as u64 * 1000;
        w.platform.advance_clock(lifetime_ms + 1);

        let expired = w.server.handle(
            &mut w.platform,
            &signed_request(&w.processor, &token, Operation::Read, Some("p1"), None, "n2"),
        );
        assert_eq!(expired.status, ApiStatus::Denied);
        assert_eq!(expired.reason(), Some("expired"));

        // Possession alone carries the subject past the expiry gate.
        let owner = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Read,
                Some("p1"),
                None,
                "n3",
            ),
        );
        assert_eq!(owner.status, ApiStatus::Ok);
    }

    #[test]
    fn erasure_belongs_to_the_subject_alone() {
        let mut w = world();
        w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("p1"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );

        // The controller validates fine but holds no erasure right.
        let by_controller = w.server.erase(
            &mut w.platform,
            &signed_request(
                &w.controller,
                &w.controller_token,
                Operation::Delete,
                Some("p1"),
                None,
                "n2",
            ),
        );
        assert_eq!(by_controller.status, ApiStatus::Denied);
        assert_eq!(by_controller.reason(), Some("owner_rights"));
        assert!(by_controller.audit_ref.is_some());
        assert!(w.server.document("p1").is_some());

        let by_subject = w.server.erase(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Delete,
                Some("p1"),
                None,
                "n3",
            ),
        );
        assert_eq!(by_subject.status, ApiStatus::Ok);
        assert!(w.server.document("p1").is_none());

        let gone = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Read,
                Some("p1"),
                None,
                "n4",
            ),
        );
        assert_eq!(gone.reason(), Some("not_found"));

        let again = w.server.erase(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Delete,
                Some("p1"),
                None,
                "n5",
            ),
        );
        assert_eq!(again.status, ApiStatus::Error);
        assert_eq!(again.reason(), Some("not_found"));
    }

    #[test]
    fn integrity_tracks_the_on_chain_hash() {
        let mut w = world();
        w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("p1"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );
        let hash = w.server.document("p1").unwrap().content_hash();
        w.platform
            .upload(&w.dataset, &w.subject, b"s3://pdm/p1/profile.json", hash)
            .unwrap();
        assert!(w.server.integrity_check(&w.platform, "p1").unwrap());

        // A store tampered with behind the server's back stops matching.
        let tampered = w.server.export_json().replace("alice", "mallory");
        let hacked = ResourceServer::import_json(&tampered).unwrap();
        assert!(!hacked.integrity_check(&w.platform, "p1").unwrap());

        // An accepted update moves the store hash; the chain must be told
        // again before the check passes.
        w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Update,
                Some("p1"),
                Some(profile_payload("alice2")),
                "n2",
            ),
        );
        assert!(!w.server.integrity_check(&w.platform, "p1").unwrap());
        let hash = w.server.document("p1").unwrap().content_hash();
        w.platform
            .upload(&w.dataset, &w.subject, b"s3://pdm/p1/profile.json", hash)
            .unwrap();
        assert!(w.server.integrity_check(&w.platform, "p1").unwrap());

        assert!(matches!(
            w.server.integrity_check(&w.platform, "nope"),
            Err(ResourceError::MissingDocument(_))
        ));
    }

    #[test]
    fn store_moves_only_behind_accepted_validations() {
        let mut w = world();
        let log_height_before = w.platform.ledger().log().height();

        let ok_create = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("p1"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );
        assert_eq!(ok_create.status, ApiStatus::Ok);

        // Forged signature: the chain rejects, the store stays put.
        let mut forged = signed_request(
            &w.controller,
            &w.controller_token,
            Operation::Update,
            Some("p1"),
            Some(profile_payload("mallory")),
            "n2",
        );
        forged.params.signature = w
            .controller
            .sign(b"something else entirely")
            .to_hex();
        let denied = w.server.handle(&mut w.platform, &forged);
        assert_eq!(denied.status, ApiStatus::Denied);
        assert_eq!(denied.reason(), Some("signature"));

        // Unparseable caller key: answered locally, no transaction at all.
        let mut junk = signed_request(
            &w.subject,
            &w.owner_token,
            Operation::Read,
            Some("p1"),
            None,
            "n3",
        );
        junk.params.pubkey = "zz".into();
        let height_before_junk = w.platform.ledger().log().height();
        let bad = w.server.handle(&mut w.platform, &junk);
        assert_eq!(bad.status, ApiStatus::Error);
        assert!(bad.audit_ref.is_none());
        assert_eq!(w.platform.ledger().log().height(), height_before_junk);

        let ok_update = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Update,
                Some("p1"),
                Some(profile_payload("alice2")),
                "n4",
            ),
        );
        assert_eq!(ok_update.status, ApiStatus::Ok);

        // Two accepted writes, two mutations; the denials moved nothing,
        // and every screened request left a log-channel transaction.
        assert_eq!(w.server.mutation_count(), 2);
        assert_eq!(w.server.document("p1").unwrap().version, 2);
        assert_eq!(
            w.platform.ledger().log().height(),
            log_height_before + 3
        );
    }

    #[test]
    fn store_never_holds_private_keys() {
        let mut w = world();
        w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("p1"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );
        let token = w
            .platform
            .grant(
                &w.dataset,
                &w.subject,
                &w.controller,
                &w.processor,
                Operation::Read,
            )
            .unwrap();
        w.server.handle(
            &mut w.platform,
            &signed_request(&w.processor, &token, Operation::Read, Some("p1"), None, "n2"),
        );

        let export = w.server.export_json();
        for kp in [&w.subject, &w.controller, &w.processor] {
            assert!(!export.contains(&kp.private.to_hex()));
        }
        let back = ResourceServer::import_json(&export).unwrap();
        assert_eq!(back.document("p1"), w.server.document("p1"));
        assert_eq!(back.mutation_count(), w.server.mutation_count());
        assert_eq!(back.dataset_key("p1"), w.server.dataset_key("p1"));
    }

    #[test]
    fn malformed_requests_are_answered_not_dropped() {
        let mut w = world();
        let good = || {
            signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Read,
                Some("p1"),
                None,
                "n",
            )
        };

        let mut wrong_method = good();
        wrong_method.method = "GET".into();
        let mut wrong_type = good();
        wrong_type.header = "text/plain".into();
        let mut wrong_endpoint = good();
        wrong_endpoint.api_endpoint = "/Somewhere".into();
        let mut no_token = good();
        no_token.params.token = String::new();
        let mut bad_op = good();
        bad_op.params.operation = "explode".into();
        let mut no_profile = good();
        no_profile.params.profile_id = None;

        for (req, reason) in [
            (wrong_method, "method_not_allowed"),
            (wrong_type, "content_type"),
            (wrong_endpoint, "endpoint"),
            (no_token, "token"),
            (bad_op, "operation"),
        ] {
            let resp = w.server.handle(&mut w.platform, &req);
            assert_eq!(resp.status, ApiStatus::Error);
            assert_eq!(resp.reason(), Some(reason));
            assert!(resp.audit_ref.is_none());
            assert_eq!(resp.http_code(), 400);
        }

        // A missing profile id is only caught after validation, so it
        // does carry an audit reference.
        let resp = w.server.handle(&mut w.platform, &no_profile);
        assert_eq!(resp.status, ApiStatus::Error);
        assert_eq!(resp.reason(), Some("profile_id"));
        assert!(resp.audit_ref.is_some());
    }

    #[test]
    fn http_round_trip_matches_the_in_process_api() {
        use std::io::{Read, Write};
        use std::net::TcpStream;
        use std::sync::{Arc, Mutex};

        let mut w = world();
        // Seed one profile in process; exercise percent-decoding with a
        // space in the id.
        let create = w.server.handle(
            &mut w.platform,
            &signed_request(
                &w.subject,
                &w.owner_token,
                Operation::Create,
                Some("alice profile"),
                Some(profile_payload("alice")),
                "n1",
            ),
        );
        assert_eq!(create.status, ApiStatus::Ok);
        let token = w
            .platform
            .grant(
                &w.dataset,
                &w.subject,
                &w.controller,
                &w.processor,
                Operation::Read,
            )
            .unwrap();

        let read_req = signed_request(
            &w.subject,
            &w.owner_token,
            Operation::Read,
            Some("alice profile"),
            None,
            "n2",
        );
        let denied_req = signed_request(
            &w.processor,
            &token,
            Operation::Update,
            Some("alice profile"),
            Some(profile_payload("mallory")),
            "n3",
        );

        let shared: http::Shared = Arc::new(Mutex::new((w.platform, w.server)));
        let server = http::serve("127.0.0.1:0", shared.clone()).unwrap();
        let addr = server.addr();

        let send = |path_query: String, body: Option<String>| -> (u16, Value) {
            let mut stream = TcpStream::connect(addr).unwrap();
            let body = body.unwrap_or_default();
            write!(
                stream,
                "POST {path_query} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            let mut raw = String::new();
            stream.read_to_string(&mut raw).unwrap();
            let code: u16 = raw.split_whitespace().nth(1).unwrap().parse().unwrap();
            let json_body = raw.split("\r\n\r\n").nth(1).unwrap();
            (code, serde_json::from_str(json_body).unwrap())
        };
        let query = |req: &ApiRequest| {
            format!(
                "{}?pubkey={}&signature={}&token={}&operation={}&profile_id={}&nonce={}",
                req.api_endpoint,
                req.params.pubkey,
                req.params.signature,
                req.params.token,
                req.params.operation,
                req.params.profile_id.as_deref().unwrap().replace(' ', "%20"),
                req.params.nonce.as_deref().unwrap(),
            )
        };

        let (code, body) = send(query(&read_req), None);
        assert_eq!(code, 200);
        assert_eq!(body["status"], "ok");
        assert_eq!(body["body"]["attributes"]["name"], "alice");
        assert!(body["audit_ref"].as_str().unwrap().starts_with("tx-"));

        let (code, body) = send(
            query(&denied_req),
            Some(profile_payload("mallory").to_string()),
        );
        assert_eq!(code, 403);
        assert_eq!(body["status"], "denied");
        assert_eq!(body["body"]["reason"], "scope_miss");

        // Health probe and unknown routes answer too.
        let mut stream = TcpStream::connect(addr).unwrap();
        write!(stream, "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
        let mut raw = String::new();
        stream.read_to_string(&mut raw).unwrap();
        assert!(raw.starts_with("HTTP/1.1 200"));

        let (code, body) = send("/Nowhere?x=1".into(), None);
        assert_eq!(code, 404);
        assert_eq!(body["body"]["reason"], "no_route");

        server.stop();

        // The socket path hit the same store the in-process path seeded.
        let guard = shared.lock().unwrap();
        assert_eq!(guard.1.document("alice profile").unwrap().version, 1);
    }
}
