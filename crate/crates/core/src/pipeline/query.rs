//! Prediction request parsing shared by the HTTP service and the CLI.

use thiserror::Error;

use super::model::ModelKind;
use crate::tx::{gwei_to_wei, Address, ReceiptStatus, TxHash, TxRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("missing parameter `{0}`")]
    Missing(&'static str),
    #[error("invalid `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{0}` given more than once")]
    Repeated(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictQuery {
    pub gas_price_gwei: f64,
    pub gas_limit: u64,
    pub value_wei: u128,
    pub nonce: u64,
    pub model: ModelKind,
}

impl PredictQuery {
    /// The unconfirmed record this query describes.
    pub fn to_record(&self) -> TxRecord {
        query_record(self.gas_price_gwei, self.gas_limit, self.value_wei, self.nonce)
    }
}

/// An unconfirmed, unsigned-looking record with the given fields; used as a
/// prediction input and as the template for curves.
pub fn query_record(gas_price_gwei: f64, gas_limit: u64, value_wei: u128, nonce: u64) -> TxRecord {
    TxRecord {
        tx_hash: TxHash([0; 32]),
        sender: Address([0; 20]),
        nonce,
        gas_price: gwei_to_wei(gas_price_gwei),
        gas_limit,
        gas_used: None,
        value: value_wei,
        receipt_status: ReceiptStatus::Pending,
        timestamp_seen: None,
        timestamp_confirmed: None,
        block_number: None,
    }
}

fn pairs(query: &str) -> Vec<(String, String)> {
    url::form_urlencoded::parse(query.as_bytes()).into_owned().collect()
}

fn invalid(name: &str, reason: impl ToString) -> QueryError {
    QueryError::Invalid { name: name.to_string(), reason: reason.to_string() }
}

/// Model selector: `model=forest|mlp|glm`, defaulting to the forest.
fn model_kind(value: Option<&str>) -> Result<ModelKind, QueryError> {
    match value {
        None => Ok(ModelKind::Forest),
        Some(v) => match v.parse::<ModelKind>() {
            Ok(k) if ModelKind::SERVED.contains(&k) => Ok(k),
            _ => Err(invalid("model", "expected forest, mlp or glm")),
        },
    }
}

fn collect<'a>(
    query: &'a [(String, String)],
    allowed: &[&str],
) -> Result<std::collections::HashMap<&'a str, &'a str>, QueryError> {
    let mut map = std::collections::HashMap::new();
    for (k, v) in query {
        if !allowed.contains(&k.as_str()) {
            return Err(QueryError::Unknown(k.clone()));
        }
        if map.insert(k.as_str(), v.as_str()).is_some() {
            return Err(QueryError::Repeated(k.clone()));
        }
    }
    Ok(map)
}

/// Parses `gas_price_gwei=..&gas_limit=..&value_wei=..[&nonce=..][&model=..]`.
pub fn parse_predict_query(query: &str) -> Result<PredictQuery, QueryError> {
    let raw = pairs(query);
    let map = collect(&raw, &["gas_price_gwei", "gas_limit", "value_wei", "nonce", "model"])?;
    let get = |name: &'static str| map.get(name).copied().ok_or(QueryError::Missing(name));

    let gas_price_gwei: f64 = get("gas_price_gwei")?.parse().map_err(|e| invalid("gas_price_gwei", e))?;
    if !gas_price_gwei.is_finite() || gas_price_gwei < 0.0 {
        return Err(invalid("gas_price_gwei", "must be a non-negative number"));
    }
    // Beyond this the wei amount no longer fits in 128 bits.
    if gas_price_gwei > 1e20 {
        return Err(invalid("gas_price_gwei", "too large"));
    }
    let gas_limit: u64 = get("gas_limit")?.parse().map_err(|e| invalid("gas_limit", e))?;
    if gas_limit == 0 {
        return Err(invalid("gas_limit", "must be positive"));
    }
    let value_wei: u128 = get("value_wei")?.parse().map_err(|e| invalid("value_wei", e))?;
    let nonce = match map.get("nonce") {
        Some(v) => v.parse().map_err(|e| invalid("nonce", e))?,
        None => 0,
    };
    let model = model_kind(map.get("model").copied())?;
    Ok(PredictQuery { gas_price_gwei, gas_limit, value_wei, nonce, model })
}

/// Parses the `model=` selector of curve and retrain requests.
pub fn parse_model_query(query: &str) -> Result<ModelKind, QueryError> {
    let raw = pairs(query);
    let map = collect(&raw, &["model"])?;
    model_kind(map.get("model").copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_query() {
        let q = parse_predict_query("gas_price_gwei=25&gas_limit=40000&value_wei=0&model=glm").unwrap();
        assert_eq!(
            q,
            PredictQuery { gas_price_gwei: 25.0, gas_limit: 40_000, value_wei: 0, nonce: 0, model: ModelKind::Glm }
        );
        assert_eq!(q.to_record().gas_price, 25_000_000_000);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_predict_query("gas_price_gwei=-1&gas_limit=21000&value_wei=0"),
            Err(QueryError::Invalid { .. })
        ));
        assert_eq!(parse_predict_query("gas_limit=21000&value_wei=0"), Err(QueryError::Missing("gas_price_gwei")));
        assert!(matches!(parse_predict_query("gas_price_gwei=NaN&gas_limit=1&value_wei=0"), Err(QueryError::Invalid { .. })));
        assert!(matches!(
            parse_predict_query("gas_price_gwei=1&gas_limit=1&value_wei=0&model=baseline"),
            Err(QueryError::Invalid { .. })
        ));
        assert_eq!(
            parse_predict_query("gas_price_gwei=1&gas_limit=1&value_wei=0&x=1"),
            Err(QueryError::Unknown("x".into()))
        );
        assert!(matches!(
            parse_predict_query("gas_price_gwei=1&gas_price_gwei=2&gas_limit=1&value_wei=0"),
            Err(QueryError::Repeated(_))
        ));
    }

    #[test]
    fn model_selector() {
        assert_eq!(parse_model_query(""), Ok(ModelKind::Forest));
        assert_eq!(parse_model_query("model=mlp"), Ok(ModelKind::Mlp));
        assert!(parse_model_query("model=tree").is_err());
    }
}
