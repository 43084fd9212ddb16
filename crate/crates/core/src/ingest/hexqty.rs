//! JSON-RPC hex quantities (`"0x1b4"`).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HexError {
    #[error("quantity {0:?} lacks the 0x prefix")]
    MissingPrefix(String),
    #[error("quantity has no digits")]
    Empty,
    #[error("quantity {0:?} contains a non-hex digit")]
    BadDigit(String),
    #[error("quantity {0:?} does not fit in 128 bits")]
    Overflow(String),
}

fn clip(s: &str) -> String {
    s.chars().take(80).collect()
}

/// Decodes a `0x`-prefixed hex quantity. Leading zeros are tolerated.
pub fn parse_quantity(s: &str) -> Result<u128, HexError> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or_else(|| HexError::MissingPrefix(clip(s)))?;
    if digits.is_empty() {
        return Err(HexError::Empty);
    }
    let significant = digits.trim_start_matches('0');
    if significant.len() > 32 {
        if significant.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(HexError::Overflow(clip(s)));
        }
        return Err(HexError::BadDigit(clip(s)));
    }
    if !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(HexError::BadDigit(clip(s)));
    }
    if significant.is_empty() {
        return Ok(0);
    }
    u128::from_str_radix(significant, 16).map_err(|_| HexError::BadDigit(clip(s)))
}

/// Narrows a quantity to 64 bits, for block numbers, nonces and gas.
pub fn parse_quantity_u64(s: &str) -> Result<u64, HexError> {
    let v = parse_quantity(s)?;
    u64::try_from(v).map_err(|_| HexError::Overflow(clip(s)))
}

pub fn to_quantity(v: u128) -> String {
    format!("{v:#x}")
}
