//! Minimal JSON-RPC 2.0 client for the handful of node methods the ingester
//! needs, plus decoders for their responses.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::hexqty::{parse_quantity, parse_quantity_u64, to_quantity};
use crate::tx::{Address, ReceiptStatus, TxHash, TxRecord};

/// JSON-RPC code for an unknown method.
pub const METHOD_NOT_FOUND: i64 = -32601;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RpcError {
    /// Network or HTTP failure; the call may succeed if retried.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("node does not support {0}")]
    MethodNotFound(String),
    #[error("node returned error {code}: {message}")]
    Node { code: i64, message: String },
    #[error("requested object not found")]
    NotFound,
    #[error("malformed {what}: {detail}; raw payload: {raw}")]
    Parse { what: &'static str, detail: String, raw: String },
}

impl RpcError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RpcError::Transport(_))
    }

    fn parse(what: &'static str, detail: impl ToString, raw: &Value) -> Self {
        let mut raw = raw.to_string();
        if raw.len() > 2048 {
            let mut cut = 2048;
            while !raw.is_char_boundary(cut) {
                cut -= 1;
            }
            raw.truncate(cut);
            raw.push_str("...");
        }
        RpcError::Parse { what, detail: detail.to_string(), raw }
    }
}

/// Something that can execute a JSON-RPC call and return its `result`.
pub trait Transport: Send + Sync {
    fn call(&self, method: &str, params: Value) -> Result<Value, RpcError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEndpoint {
    pub url: String,
    pub request_timeout: Duration,
    pub poll_interval: Duration,
}

impl NodeEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            request_timeout: Duration::from_secs(10),
            poll_interval: Duration::from_secs(1),
        }
    }

    pub fn validate(&self) -> Result<(), RpcError> {
        if self.request_timeout.is_zero() || self.poll_interval.is_zero() {
            return Err(RpcError::Transport("timeout and poll interval must be positive".into()));
        }
        url::Url::parse(&self.url).map_err(|e| RpcError::Transport(format!("bad node url: {e}")))?;
        Ok(())
    }
}

/// Unwraps a JSON-RPC response envelope into its `result`.
pub fn decode_response(method: &str, body: &str) -> Result<Value, RpcError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| RpcError::parse("response", e, &Value::String(body.chars().take(2048).collect())))?;
    if let Some(err) = v.get("error").filter(|e| !e.is_null()) {
        let code = err.get("code").and_then(Value::as_i64).unwrap_or(0);
        let message = err.get("message").and_then(Value::as_str).unwrap_or("").to_string();
        if code == METHOD_NOT_FOUND {
            return Err(RpcError::MethodNotFound(method.to_string()));
        }
        return Err(RpcError::Node { code, message });
    }
    match v.get("result") {
        Some(result) => Ok(result.clone()),
        None => Err(RpcError::parse("response", "no result or error member", &v)),
    }
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    next_id: AtomicU64,
}

impl HttpTransport {
    pub fn new(endpoint: &NodeEndpoint) -> Result<Self, RpcError> {
        endpoint.validate()?;
        let agent = ureq::AgentBuilder::new().timeout(endpoint.request_timeout).build();
        Ok(Self { agent, url: endpoint.url.clone(), next_id: AtomicU64::new(1) })
    }
}

impl Transport for HttpTransport {
    fn call(&self, method: &str, params: Value) -> Result<Value, RpcError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = json!({ "jsonrpc": "2.0", "id": id, "method": method, "params": params });
        let response = match self.agent.post(&self.url).send_json(request) {
            Ok(r) => r,
            // JSON-RPC errors may come back with a non-2xx status.
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(RpcError::Transport(e.to_string())),
        };
        let body = response.into_string().map_err(|e| RpcError::Transport(e.to_string()))?;
        decode_response(method, &body)
    }
}

/// A transaction as listed in a block or the pending pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTx {
    pub hash: TxHash,
    pub from: Address,
    pub nonce: u64,
    pub gas_price: u128,
    pub gas: u64,
    pub value: u128,
    pub block_number: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub number: u64,
    pub timestamp: u64,
    pub transactions: Vec<BlockTx>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub gas_used: u64,
    pub status: ReceiptStatus,
}

fn field<'a>(obj: &'a Value, name: &'static str, what: &'static str) -> Result<&'a str, RpcError> {
    obj.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| RpcError::parse(what, format!("missing string field {name}"), obj))
}

fn quantity(obj: &Value, name: &'static str, what: &'static str) -> Result<u128, RpcError> {
    parse_quantity(field(obj, name, what)?).map_err(|e| RpcError::parse(what, e, obj))
}

fn quantity_u64(obj: &Value, name: &'static str, what: &'static str) -> Result<u64, RpcError> {
    parse_quantity_u64(field(obj, name, what)?).map_err(|e| RpcError::parse(what, e, obj))
}

pub fn decode_tx(v: &Value) -> Result<BlockTx, RpcError> {
    const WHAT: &str = "transaction";
    if !v.is_object() {
        return Err(RpcError::parse(WHAT, "expected an object", v));
    }
    let block_number = match v.get("blockNumber") {
        None | Some(Value::Null) => None,
        Some(_) => Some(quantity_u64(v, "blockNumber", WHAT)?),
    };
    // Typed (EIP-1559) transactions may omit gasPrice in pool listings.
    let gas_price = if v.get("gasPrice").is_some_and(|g| !g.is_null()) {
        quantity(v, "gasPrice", WHAT)?
    } else {
        quantity(v, "maxFeePerGas", WHAT)?
    };
    Ok(BlockTx {
        hash: field(v, "hash", WHAT)?.parse().map_err(|e| RpcError::parse(WHAT, e, v))?,
        from: field(v, "from", WHAT)?.parse().map_err(|e| RpcError::parse(WHAT, e, v))?,
        nonce: quantity_u64(v, "nonce", WHAT)?,
        gas_price,
        gas: quantity_u64(v, "gas", WHAT)?,
        value: quantity(v, "value", WHAT)?,
        block_number,
    })
}

/// Decodes an `eth_getBlockByNumber(_, true)` result. `null` means the block
/// does not exist yet.
pub fn decode_block(v: &Value) -> Result<Block, RpcError> {
    const WHAT: &str = "block";
    if v.is_null() {
        return Err(RpcError::NotFound);
    }
    let txs = v
        .get("transactions")
        .and_then(Value::as_array)
        .ok_or_else(|| RpcError::parse(WHAT, "missing transactions array", v))?;
    Ok(Block {
        number: quantity_u64(v, "number", WHAT)?,
        timestamp: quantity_u64(v, "timestamp", WHAT)?,
        transactions: txs.iter().map(decode_tx).collect::<Result<_, _>>()?,
    })
}

pub fn decode_receipt(v: &Value) -> Result<Receipt, RpcError> {
    const WHAT: &str = "receipt";
    if v.is_null() {
        return Err(RpcError::NotFound);
    }
    // Receipts before Byzantium carry a state root instead of a status.
    let status = match v.get("status") {
        None | Some(Value::Null) => ReceiptStatus::Success,
        Some(_) => match quantity(v, "status", WHAT)? {
            1 => ReceiptStatus::Success,
            0 => ReceiptStatus::Failure,
            other => return Err(RpcError::parse(WHAT, format!("unknown status {other}"), v)),
        },
    };
    Ok(Receipt { gas_used: quantity_u64(v, "gasUsed", WHAT)?, status })
}

/// Flattens a `txpool_content` result's `pending` section.
pub fn decode_txpool_pending(v: &Value) -> Result<Vec<BlockTx>, RpcError> {
    const WHAT: &str = "txpool_content";
    let pending = v
        .get("pending")
        .and_then(Value::as_object)
        .ok_or_else(|| RpcError::parse(WHAT, "missing pending object", v))?;
    let mut out = Vec::new();
    for by_nonce in pending.values() {
        let by_nonce = by_nonce
            .as_object()
            .ok_or_else(|| RpcError::parse(WHAT, "sender entry is not an object", v))?;
        for tx in by_nonce.values() {
            out.push(decode_tx(tx)?);
        }
    }
    Ok(out)
}

pub fn head_block_number(transport: &dyn Transport) -> Result<u64, RpcError> {
    let v = transport.call("eth_blockNumber", json!([]))?;
    let s = v.as_str().ok_or_else(|| RpcError::parse("block number", "expected a string", &v))?;
    parse_quantity_u64(s).map_err(|e| RpcError::parse("block number", e, &v))
}

/// `eth_getBlockByNumber` with full transaction objects.
pub fn fetch_block(transport: &dyn Transport, number: u64) -> Result<Block, RpcError> {
    let v = transport.call("eth_getBlockByNumber", json!([to_quantity(number as u128), true]))?;
    decode_block(&v)
}

pub fn fetch_receipt(transport: &dyn Transport, hash: &TxHash) -> Result<Receipt, RpcError> {
    let v = transport.call("eth_getTransactionReceipt", json!([hash.to_string()]))?;
    decode_receipt(&v)
}

/// Confirmed-side records for a block: confirmation fields set, first-seen
/// time left empty for the join to fill in.
pub fn confirmed_records(block: &Block, receipts: &[Receipt]) -> Vec<TxRecord> {
    block
        .transactions
        .iter()
        .zip(receipts)
        .map(|(tx, receipt)| TxRecord {
            tx_hash: tx.hash,
            sender: tx.from,
            nonce: tx.nonce,
            gas_price: tx.gas_price,
            gas_limit: tx.gas,
            gas_used: Some(receipt.gas_used),
            value: tx.value,
            receipt_status: receipt.status,
            timestamp_seen: None,
            timestamp_confirmed: Some(block.timestamp),
            block_number: Some(block.number),
        })
        .collect()
}

/// Pending-side record for a transaction first observed at `seen`.
pub fn pending_record(tx: &BlockTx, seen: u64) -> TxRecord {
    TxRecord {
        tx_hash: tx.hash,
        sender: tx.from,
        nonce: tx.nonce,
        gas_price: tx.gas_price,
        gas_limit: tx.gas,
        gas_used: None,
        value: tx.value,
        receipt_status: ReceiptStatus::Pending,
        timestamp_seen: Some(seen),
        timestamp_confirmed: None,
        block_number: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope() {
        assert_eq!(decode_response("m", r#"{"jsonrpc":"2.0","id":1,"result":"0x10"}"#), Ok(json!("0x10")));
        assert_eq!(
            decode_response("txpool_content", r#"{"jsonrpc":"2.0","id":1,"error":{"code":-32601,"message":"nope"}}"#),
            Err(RpcError::MethodNotFound("txpool_content".into()))
        );
        assert!(matches!(
            decode_response("m", r#"{"error":{"code":-32000,"message":"x"}}"#),
            Err(RpcError::Node { code: -32000, .. })
        ));
        assert!(matches!(decode_response("m", "not json"), Err(RpcError::Parse { .. })));
        assert!(matches!(decode_response("m", "{}"), Err(RpcError::Parse { .. })));
    }

    #[test]
    fn null_block_is_not_found() {
        assert_eq!(decode_block(&Value::Null), Err(RpcError::NotFound));
    }

    #[test]
    fn malformed_block_keeps_payload() {
        let v = json!({ "number": "0x1", "timestamp": "zz", "transactions": [] });
        match decode_block(&v) {
            Err(RpcError::Parse { raw, .. }) => assert!(raw.contains("zz")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn receipt_status() {
        let r = decode_receipt(&json!({"gasUsed": "0x5208", "status": "0x0"})).unwrap();
        assert_eq!(r, Receipt { gas_used: 21_000, status: ReceiptStatus::Failure });
        let legacy = decode_receipt(&json!({"gasUsed": "0x5208", "root": "0x00"})).unwrap();
        assert_eq!(legacy.status, ReceiptStatus::Success);
    }
}
