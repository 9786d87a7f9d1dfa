//! Canonical protocol documents.
//!
//! Every structured value that gets signed, hashed, or persisted is a
//! [`Value`] tree encoded with [`encode`]. The encoding is a strict JSON
//! subset chosen so that equal abstract values always produce equal bytes:
//!
//! - object keys sorted by their UTF-8 bytes, duplicates rejected
//! - no whitespace between tokens
//! - integers in minimal decimal form (no leading zeros, no `-0`)
//! - decimals are fixed-point with at most six fractional digits and no
//!   trailing zeros; a decimal with an empty fraction is an integer
//! - strings escape only `\" \\ \b \f \n \r \t` and other control
//!   characters as lowercase `\u00xx`; everything else is literal UTF-8
//!
//! Binary floating point never appears in protocol documents.
//!
//! [`decode`] is the strict inverse: it rejects any byte string that
//! [`encode`] could not have produced, so `encode(decode(b)) == b` holds
//! for every accepted input. [`decode_lenient`] additionally tolerates
//! ASCII whitespace between tokens and unsorted keys, for hand-written
//! files such as scenarios.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Maximum number of fractional digits a protocol decimal may carry.
pub const MAX_DECIMAL_SCALE: u32 = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DocError {
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("decimal scale {0} exceeds {MAX_DECIMAL_SCALE}")]
    ScaleTooLarge(u32),
    #[error("decimal magnitude out of range")]
    DecimalOverflow,
    #[error("invalid document at byte {at} (line {line}): {reason}")]
    Parse {
        at: usize,
        line: u32,
        reason: &'static str,
    },
}

/// Fixed-point decimal: `units / 10^scale`, normalized so the last
/// fractional digit is nonzero (or scale is zero).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Decimal {
    units: i64,
    scale: u32,
}

impl Decimal {
    /// Builds `units / 10^scale`, normalizing away trailing fractional
    /// zeros. `0.050000` and `0.05` are the same value.
    pub fn new(units: i64, scale: u32) -> Result<Self, DocError> {
        if scale > MAX_DECIMAL_SCALE {
            return Err(DocError::ScaleTooLarge(scale));
        }
        let mut units = units;
        let mut scale = scale;
        while scale > 0 && units % 10 == 0 {
            units /= 10;
            scale -= 1;
        }
        Ok(Decimal { units, scale })
    }

    pub fn from_int(value: i64) -> Self {
        Decimal {
            units: value,
            scale: 0,
        }
    }

    /// Value in millionths, saturating at the i64 range.
    pub fn micros(&self) -> i64 {
        let factor = 10i64.pow(MAX_DECIMAL_SCALE - self.scale);
        self.units.saturating_mul(factor)
    }

    /// Builds a decimal from a value in millionths.
    pub fn from_micros(micros: i64) -> Self {
        Decimal::new(micros, MAX_DECIMAL_SCALE).expect("scale 6 is always valid")
    }

    pub fn units(&self) -> i64 {
        self.units
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn is_integer(&self) -> bool {
        self.scale == 0
    }

    pub fn is_negative(&self) -> bool {
        self.units < 0
    }

    pub fn zero() -> Self {
        Decimal::from_int(0)
    }

    pub fn parse(text: &str) -> Result<Self, DocError> {
        let value = decode(text.as_bytes())?;
        match value {
            Value::Int(i) => Ok(Decimal::from_int(i)),
            Value::Decimal(d) => Ok(d),
            _ => Err(DocError::Parse {
                at: 0,
                line: 1,
                reason: "not a number",
            }),
        }
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // compare at a common scale; i128 avoids overflow
        let ls = i128::from(self.units) * 10i128.pow(MAX_DECIMAL_SCALE - self.scale);
        let rs = i128::from(other.units) * 10i128.pow(MAX_DECIMAL_SCALE - other.scale);
        ls.cmp(&rs)
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale == 0 {
            return write!(f, "{}", self.units);
        }
        let sign = if self.units < 0 { "-" } else { "" };
        let abs = self.units.unsigned_abs();
        let pow = 10u64.pow(self.scale);
        write!(
            f,
            "{sign}{}.{:0width$}",
            abs / pow,
            abs % pow,
            width = self.scale as usize
        )
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Decimal({self})")
    }
}

/// A canonical document value.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Decimal(Decimal),
    Text(String),
    Seq(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    /// Wraps a decimal, collapsing integer-valued decimals to `Int` so the
    /// tree has a single canonical representation per abstract value.
    pub fn decimal(d: Decimal) -> Value {
        if d.is_integer() {
            Value::Int(d.units)
        } else {
            Value::Decimal(d)
        }
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    pub fn empty_map() -> Value {
        Value::Map(BTreeMap::new())
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[Value]> {
        match self {
            Value::Seq(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Numeric accessor: integers widen to scale-0 decimals.
    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            Value::Int(i) => Some(Decimal::from_int(*i)),
            Value::Decimal(d) => Some(*d),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.as_map().and_then(|m| m.get(key))
    }

    pub fn get_text(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(Value::as_text)
    }

    pub fn get_int(&self, key: &str) -> Option<i64> {
        self.get(key).and_then(Value::as_int)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get_int(key).and_then(|i| u64::try_from(i).ok())
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Value {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Value {
        Value::Int(i)
    }
}

impl From<u64> for Value {
    fn from(i: u64) -> Value {
        Value::Int(i64::try_from(i).expect("value fits i64"))
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Value {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Value {
        Value::Text(s)
    }
}

impl From<Decimal> for Value {
    fn from(d: Decimal) -> Value {
        Value::decimal(d)
    }
}

impl From<Vec<Value>> for Value {
    fn from(items: Vec<Value>) -> Value {
        Value::Seq(items)
    }
}

/// Builds a map value from key/value pairs, rejecting duplicate keys.
pub fn object<K, V>(pairs: impl IntoIterator<Item = (K, V)>) -> Result<Value, DocError>
where
    K: Into<String>,
    V: Into<Value>,
{
    let mut map = BTreeMap::new();
    for (k, v) in pairs {
        let k = k.into();
        if map.contains_key(&k) {
            return Err(DocError::DuplicateKey(k));
        }
        map.insert(k, v.into());
    }
    Ok(Value::Map(map))
}

/// Canonical byte encoding of a value. Deterministic and independent of
/// the construction order of maps.
pub fn encode(value: &Value) -> Vec<u8> {
    let mut out = String::new();
    write_value(value, &mut out);
    out.into_bytes()
}

pub fn encode_to_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Bool(true) => out.push_str("true"),
        Value::Bool(false) => out.push_str("false"),
        Value::Int(i) => {
            out.push_str(&i.to_string());
        }
        Value::Decimal(d) => {
            // integer-valued decimals encode as integers
            if d.is_integer() {
                out.push_str(&d.units.to_string());
            } else {
                out.push_str(&d.to_string());
            }
        }
        Value::Text(s) => write_text(s, out),
        Value::Seq(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Map(map) => {
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_text(k, out);
                out.push(':');
                write_value(v, out);
            }
            out.push('}');
        }
    }
}

fn write_text(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\u{0008}' => out.push_str("\\b"),
            '\u{000c}' => out.push_str("\\f"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Strict decoder: accepts exactly the output space of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Value, DocError> {
    Parser::new(bytes, true).parse_document()
}

/// Lenient decoder for hand-authored files: permits ASCII whitespace
/// between tokens and unsorted (but still unique) object keys.
pub fn decode_lenient(bytes: &[u8]) -> Result<Value, DocError> {
    Parser::new(bytes, false).parse_document()
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: u32,
    strict: bool,
}

impl<'a> Parser<'a> {
    fn new(bytes: &'a [u8], strict: bool) -> Self {
        Parser {
            bytes,
            pos: 0,
            line: 1,
            strict,
        }
    }

    fn err(&self, reason: &'static str) -> DocError {
        DocError::Parse {
            at: self.pos,
            line: self.line,
            reason,
        }
    }

    fn parse_document(mut self) -> Result<Value, DocError> {
        self.skip_ws();
        let value = self.parse_value()?;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing bytes after document"));
        }
        Ok(value)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Result<u8, DocError> {
        let b = self.peek().ok_or_else(|| self.err("unexpected end"))?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
        }
        Ok(b)
    }

    fn expect(&mut self, want: u8) -> Result<(), DocError> {
        let got = self.bump()?;
        if got != want {
            self.pos -= 1;
            return Err(self.err("unexpected byte"));
        }
        Ok(())
    }

    fn skip_ws(&mut self) {
        if self.strict {
            return;
        }
        while let Some(b) = self.peek() {
            if b == b' ' || b == b'\t' || b == b'\r' || b == b'\n' {
                self.pos += 1;
                if b == b'\n' {
                    self.line += 1;
                }
            } else {
                break;
            }
        }
    }

    fn parse_value(&mut self) -> Result<Value, DocError> {
        match self.peek().ok_or_else(|| self.err("unexpected end"))? {
            b'{' => self.parse_map(),
            b'[' => self.parse_seq(),
            b'"' => Ok(Value::Text(self.parse_string()?)),
            b't' => {
                self.literal(b"true")?;
                Ok(Value::Bool(true))
            }
            b'f' => {
                self.literal(b"false")?;
                Ok(Value::Bool(false))
            }
            b'-' | b'0'..=b'9' => self.parse_number(),
            _ => Err(self.err("unexpected byte")),
        }
    }

    fn literal(&mut self, lit: &[u8]) -> Result<(), DocError> {
        for &b in lit {
            self.expect(b)?;
        }
        Ok(())
    }

    fn parse_map(&mut self) -> Result<Value, DocError> {
        self.expect(b'{')?;
        let mut map = BTreeMap::new();
        let mut last_key: Option<String> = None;
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(Value::Map(map));
        }
        loop {
            self.skip_ws();
            let key = self.parse_string()?;
            if map.contains_key(&key) {
                return Err(DocError::DuplicateKey(key));
            }
            if self.strict {
                if let Some(prev) = &last_key {
                    if key.as_bytes() < prev.as_bytes() {
                        return Err(self.err("object keys not in canonical order"));
                    }
                }
            }
            self.skip_ws();
            self.expect(b':')?;
            self.skip_ws();
            let value = self.parse_value()?;
            last_key = Some(key.clone());
            map.insert(key, value);
            self.skip_ws();
            match self.bump()? {
                b',' => continue,
                b'}' => return Ok(Value::Map(map)),
                _ => {
                    self.pos -= 1;
                    return Err(self.err("expected `,` or `}`"));
                }
            }
        }
    }

    fn parse_seq(&mut self) -> Result<Value, DocError> {
        self.expect(b'[')?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Value::Seq(items));
        }
        loop {
            self.skip_ws();
            items.push(self.parse_value()?);
            self.skip_ws();
            match self.bump()? {
                b',' => continue,
                b']' => return Ok(Value::Seq(items)),
                _ => {
                    self.pos -= 1;
                    return Err(self.err("expected `,` or `]`"));
                }
            }
        }
    }

    fn parse_string(&mut self) -> Result<String, DocError> {
        self.expect(b'"')?;
        let mut out = String::new();
        loop {
            let b = self.bump()?;
            match b {
                b'"' => return Ok(out),
                b'\\' => match self.bump()? {
                    b'"' => out.push('"'),
                    b'\\' => out.push('\\'),
                    b'b' => out.push('\u{0008}'),
                    b'f' => out.push('\u{000c}'),
                    b'n' => out.push('\n'),
                    b'r' => out.push('\r'),
                    b't' => out.push('\t'),
                    b'u' => {
                        let mut code = 0u32;
                        for _ in 0..4 {
                            let h = self.bump()?;
                            let digit = match h {
                                b'0'..=b'9' => u32::from(h - b'0'),
                                // canonical escapes use lowercase hex
                                b'a'..=b'f' => u32::from(h - b'a') + 10,
                                _ => return Err(self.err("invalid \\u escape")),
                            };
                            code = code * 16 + digit;
                        }
                        // only control characters without a short escape
                        // may use \u form
                        if code >= 0x20 || matches!(code, 0x08 | 0x0c | 0x0a | 0x0d | 0x09) {
                            return Err(self.err("non-canonical \\u escape"));
                        }
                        out.push(char::from_u32(code).expect("control char"));
                    }
                    _ => return Err(self.err("unknown escape")),
                },
                0x00..=0x1f => return Err(self.err("raw control character in string")),
                _ => {
                    // re-read the full UTF-8 scalar starting at b
                    let start = self.pos - 1;
                    let len = utf8_len(b).ok_or_else(|| self.err("invalid UTF-8"))?;
                    let end = start + len;
                    if end > self.bytes.len() {
                        return Err(self.err("invalid UTF-8"));
                    }
                    let s = std::str::from_utf8(&self.bytes[start..end])
                        .map_err(|_| self.err("invalid UTF-8"))?;
                    out.push_str(s);
                    self.pos = end;
                }
            }
        }
    }

    fn parse_number(&mut self) -> Result<Value, DocError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        let int_start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let int_digits = &self.bytes[int_start..self.pos];
        if int_digits.is_empty() {
            return Err(self.err("number without digits"));
        }
        if int_digits.len() > 1 && int_digits[0] == b'0' {
            return Err(self.err("leading zero"));
        }
        let negative = self.bytes[start] == b'-';
        let mut frac_digits: &[u8] = &[];
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let frac_start = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            frac_digits = &self.bytes[frac_start..self.pos];
            if frac_digits.is_empty() {
                return Err(self.err("empty fraction"));
            }
            if frac_digits.len() > MAX_DECIMAL_SCALE as usize {
                return Err(self.err("fraction longer than six digits"));
            }
            if self.strict && frac_digits.last() == Some(&b'0') {
                return Err(self.err("trailing zero in fraction"));
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            return Err(self.err("exponents are not canonical"));
        }

        let mut mantissa: i64 = 0;
        for &d in int_digits.iter().chain(frac_digits.iter()) {
            mantissa = mantissa
                .checked_mul(10)
                .and_then(|m| m.checked_add(i64::from(d - b'0')))
                .ok_or_else(|| self.err("number out of range"))?;
        }
        if negative {
            mantissa = -mantissa;
            if mantissa == 0 {
                return Err(self.err("negative zero"));
            }
        }
        if frac_digits.is_empty() {
            Ok(Value::Int(mantissa))
        } else {
            let d = Decimal::new(mantissa, frac_digits.len() as u32)
                .map_err(|_| self.err("fraction longer than six digits"))?;
            if self.strict && d.scale() as usize != frac_digits.len() {
                return Err(self.err("trailing zero in fraction"));
            }
            Ok(Value::decimal(d))
        }
    }
}

fn utf8_len(first: u8) -> Option<usize> {
    match first {
        0x20..=0x7f => Some(1),
        0xc2..=0xdf => Some(2),
        0xe0..=0xef => Some(3),
        0xf0..=0xf4 => Some(4),
        _ => None,
    }
}
