//! Canonical, hash-stable byte encoding for structured values.
//!
//! The encoding is a strict subset of JSON:
//!
//! - maps are written `{"k":v,...}` with keys sorted by their UTF-8 bytes,
//! - lists are written `[v,...]`,
//! - strings escape only `"`, `\`, newline, tab and other control characters
//!   (as `\u00XX`),
//! - integers are base-10 without leading zeros,
//! - floats are fixed-point with exactly nine fractional digits, rounded
//!   half-to-even, with negative zero written as zero,
//! - no whitespace anywhere.
//!
//! Because integers never contain a `.` and floats always do, `7` and `7.0`
//! encode differently and decode back to their original type.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::de::DeserializeOwned;
use serde::ser::{self, Serialize};

use super::digest::{sha256, Digest};

/// Number of fractional digits every float is rendered with.
pub const FLOAT_DIGITS: usize = 9;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("value contains a non-finite float")]
    NonFiniteFloat,
    #[error("map keys must be strings")]
    NonStringKey,
    #[error("integer out of range")]
    IntegerOutOfRange,
    #[error("malformed canonical bytes at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
    #[error("bytes are valid but not in canonical form")]
    NotCanonical,
    #[error("{0}")]
    Custom(String),
}

impl ser::Error for CanonicalError {
    fn custom<T: fmt::Display>(msg: T) -> Self {
        CanonicalError::Custom(msg.to_string())
    }
}

/// A structured value in the canonical data model.
#[derive(Debug, Clone, PartialEq)]
pub enum CanonicalValue {
    Null,
    Bool(bool),
    Int(i128),
    Float(f64),
    Str(String),
    List(Vec<CanonicalValue>),
    Map(BTreeMap<String, CanonicalValue>),
}

/// Output of [`canonical_serialize`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalBytes(Vec<u8>);

impl CanonicalBytes {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }

    pub fn digest(&self) -> Digest {
        sha256(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[u8]> for CanonicalBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Renders a finite float with the fixed nine-digit rule.
pub fn format_float(x: f64) -> Result<String, CanonicalError> {
    if !x.is_finite() {
        return Err(CanonicalError::NonFiniteFloat);
    }
    // `{:.N}` formats the exact binary value and breaks exact ties to even.
    let s = format!("{:.*}", FLOAT_DIGITS, x);
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => Ok(rest.to_string()),
        _ => Ok(s),
    }
}

impl CanonicalValue {
    pub fn encode(&self) -> Result<CanonicalBytes, CanonicalError> {
        let mut out = String::new();
        self.write_to(&mut out)?;
        Ok(CanonicalBytes(out.into_bytes()))
    }

    fn write_to(&self, out: &mut String) -> Result<(), CanonicalError> {
        match self {
            CanonicalValue::Null => out.push_str("null"),
            CanonicalValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            CanonicalValue::Int(i) => {
                let _ = write!(out, "{i}");
            }
            CanonicalValue::Float(f) => out.push_str(&format_float(*f)?),
            CanonicalValue::Str(s) => write_string(out, s),
            CanonicalValue::List(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write_to(out)?;
                }
                out.push(']');
            }
            CanonicalValue::Map(map) => {
                out.push('{');
                for (i, (k, v)) in map.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write_string(out, k);
                    out.push(':');
                    v.write_to(out)?;
                }
                out.push('}');
            }
        }
        Ok(())
    }

    /// Parses canonical bytes. Accepts only the exact canonical form.
    pub fn decode(bytes: &[u8]) -> Result<CanonicalValue, CanonicalError> {
        let mut p = Parser { bytes, pos: 0 };
        let v = p.value()?;
        if p.pos != bytes.len() {
            return Err(p.err("trailing bytes"));
        }
        // Catches unsorted keys, float renderings that don't round-trip, etc.
        if v.encode()?.as_bytes() != bytes {
            return Err(CanonicalError::NotCanonical);
        }
        Ok(v)
    }

    fn into_json(self) -> Result<serde_json::Value, CanonicalError> {
        use serde_json::Value as J;
        Ok(match self {
            CanonicalValue::Null => J::Null,
            CanonicalValue::Bool(b) => J::Bool(b),
            CanonicalValue::Int(i) => {
                if let Ok(v) = i64::try_from(i) {
                    J::from(v)
                } else if let Ok(v) = u64::try_from(i) {
                    J::from(v)
                } else {
                    return Err(CanonicalError::IntegerOutOfRange);
                }
            }
            CanonicalValue::Float(f) => serde_json::Number::from_f64(f)
                .map(J::Number)
                .ok_or(CanonicalError::NonFiniteFloat)?,
            CanonicalValue::Str(s) => J::String(s),
            CanonicalValue::List(items) => J::Array(
                items
                    .into_iter()
                    .map(CanonicalValue::into_json)
                    .collect::<Result<_, _>>()?,
            ),
            CanonicalValue::Map(map) => {
                let mut obj = serde_json::Map::new();
                for (k, v) in map {
                    obj.insert(k, v.into_json()?);
                }
                J::Object(obj)
            }
        })
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, reason: &'static str) -> CanonicalError {
        CanonicalError::Malformed { offset: self.pos, reason }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<(), CanonicalError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err("unexpected byte"))
        }
    }

    fn literal(&mut self, lit: &'static [u8]) -> Result<(), CanonicalError> {
        if self.bytes[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err("bad literal"))
        }
    }

    fn value(&mut self) -> Result<CanonicalValue, CanonicalError> {
        match self.peek() {
            Some(b'n') => self.literal(b"null").map(|_| CanonicalValue::Null),
            Some(b't') => self.literal(b"true").map(|_| CanonicalValue::Bool(true)),
            Some(b'f') => self.literal(b"false").map(|_| CanonicalValue::Bool(false)),
            Some(b'"') => self.string().map(CanonicalValue::Str),
            Some(b'[') => {
                self.pos += 1;
                let mut items = Vec::new();
                if self.peek() == Some(b']') {
                    self.pos += 1;
                    return Ok(CanonicalValue::List(items));
                }
                loop {
                    items.push(self.value()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(CanonicalValue::List(items));
                        }
                        _ => return Err(self.err("expected , or ]")),
                    }
                }
            }
            Some(b'{') => {
                self.pos += 1;
                let mut map = BTreeMap::new();
                if self.peek() == Some(b'}') {
                    self.pos += 1;
                    return Ok(CanonicalValue::Map(map));
                }
                loop {
                    let k = self.string()?;
                    self.expect(b':')?;
                    let v = self.value()?;
                    if map.insert(k, v).is_some() {
                        return Err(self.err("duplicate key"));
                    }
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b'}') => {
                            self.pos += 1;
                            return Ok(CanonicalValue::Map(map));
                        }
                        _ => return Err(self.err("expected , or }")),
                    }
                }
            }
            Some(b'-' | b'0'..=b'9') => self.number(),
            _ => Err(self.err("unexpected byte")),
        }
    }

    fn number(&mut self) -> Result<CanonicalValue, CanonicalError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(self.err("expected digits"));
        }
        let is_float = self.peek() == Some(b'.');
        if is_float {
            self.pos += 1;
            let frac_start = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            if self.pos - frac_start != FLOAT_DIGITS {
                return Err(self.err("float must carry nine fractional digits"));
            }
        }
        // Only ASCII digits, '-' and '.' were consumed.
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii");
        if is_float {
            text.parse::<f64>()
                .map(CanonicalValue::Float)
                .map_err(|_| self.err("bad float"))
        } else {
            text.parse::<i128>()
                .map(CanonicalValue::Int)
                .map_err(|_| CanonicalError::IntegerOutOfRange)
        }
    }

    fn string(&mut self) -> Result<String, CanonicalError> {
        self.expect(b'"')?;
        let mut buf: Vec<u8> = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(b'"') => buf.push(b'"'),
                        Some(b'\\') => buf.push(b'\\'),
                        Some(b'n') => buf.push(b'\n'),
                        Some(b't') => buf.push(b'\t'),
                        Some(b'u') => {
                            let hex = self
                                .bytes
                                .get(self.pos + 1..self.pos + 5)
                                .ok_or_else(|| self.err("short escape"))?;
                            let hex = std::str::from_utf8(hex).map_err(|_| self.err("bad escape"))?;
                            let code =
                                u32::from_str_radix(hex, 16).map_err(|_| self.err("bad escape"))?;
                            if code >= 0x20 {
                                return Err(self.err("escape outside control range"));
                            }
                            buf.push(code as u8);
                            self.pos += 4;
                        }
                        _ => return Err(self.err("bad escape")),
                    }
                    self.pos += 1;
                }
                Some(b) => {
                    buf.push(b);
                    self.pos += 1;
                }
            }
        }
        String::from_utf8(buf).map_err(|_| self.err("invalid utf-8"))
    }
}

/// Serializes any `Serialize` value into canonical bytes.
pub fn canonical_serialize<T: Serialize + ?Sized>(value: &T) -> Result<CanonicalBytes, CanonicalError> {
    to_canonical_value(value)?.encode()
}

/// `sha256(canonical_serialize(value))`.
pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> Result<Digest, CanonicalError> {
    Ok(canonical_serialize(value)?.digest())
}

/// Decodes canonical bytes into `T`. Non-canonical input is rejected.
pub fn canonical_deserialize<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let value = CanonicalValue::decode(bytes)?;
    serde_json::from_value(value.into_json()?).map_err(|e| CanonicalError::Custom(e.to_string()))
}

pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> Result<CanonicalValue, CanonicalError> {
    value.serialize(ValueSerializer)
}

struct ValueSerializer;

pub struct SeqBuilder {
    items: Vec<CanonicalValue>,
    variant: Option<&'static str>,
}

pub struct MapBuilder {
    map: BTreeMap<String, CanonicalValue>,
    pending_key: Option<String>,
    variant: Option<&'static str>,
}

fn wrap_variant(variant: Option<&'static str>, value: CanonicalValue) -> CanonicalValue {
    match variant {
        Some(name) => CanonicalValue::Map(BTreeMap::from([(name.to_string(), value)])),
        None => value,
    }
}

impl ser::Serializer for ValueSerializer {
    type Ok = CanonicalValue;
    type Error = CanonicalError;
    type SerializeSeq = SeqBuilder;
    type SerializeTuple = SeqBuilder;
    type SerializeTupleStruct = SeqBuilder;
    type SerializeTupleVariant = SeqBuilder;
    type SerializeMap = MapBuilder;
    type SerializeStruct = MapBuilder;
    type SerializeStructVariant = MapBuilder;

    fn serialize_bool(self, v: bool) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Bool(v))
    }
    fn serialize_i8(self, v: i8) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v.into()))
    }
    fn serialize_i16(self, v: i16) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v.into()))
    }
    fn serialize_i32(self, v: i32) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v.into()))
    }
    fn serialize_i64(self, v: i64) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v.into()))
    }
    fn serialize_i128(self, v: i128) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v))
    }
    fn serialize_u8(self, v: u8) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v.into()))
    }
    fn serialize_u16(self, v: u16) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v.into()))
    }
    fn serialize_u32(self, v: u32) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v.into()))
    }
    fn serialize_u64(self, v: u64) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Int(v.into()))
    }
    fn serialize_f32(self, v: f32) -> Result<CanonicalValue, CanonicalError> {
        self.serialize_f64(v.into())
    }
    fn serialize_f64(self, v: f64) -> Result<CanonicalValue, CanonicalError> {
        if v.is_finite() {
            Ok(CanonicalValue::Float(v))
        } else {
            Err(CanonicalError::NonFiniteFloat)
        }
    }
    fn serialize_char(self, v: char) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Str(v.to_string()))
    }
    fn serialize_str(self, v: &str) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Str(v.to_string()))
    }
    fn serialize_bytes(self, v: &[u8]) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::List(v.iter().map(|b| CanonicalValue::Int((*b).into())).collect()))
    }
    fn serialize_none(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Null)
    }
    fn serialize_some<T: Serialize + ?Sized>(self, value: &T) -> Result<CanonicalValue, CanonicalError> {
        value.serialize(self)
    }
    fn serialize_unit(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Null)
    }
    fn serialize_unit_struct(self, _name: &'static str) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Null)
    }
    fn serialize_unit_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
    ) -> Result<CanonicalValue, CanonicalError> {
        Ok(CanonicalValue::Str(variant.to_string()))
    }
    fn serialize_newtype_struct<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        value: &T,
    ) -> Result<CanonicalValue, CanonicalError> {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        value: &T,
    ) -> Result<CanonicalValue, CanonicalError> {
        Ok(wrap_variant(Some(variant), value.serialize(self)?))
    }
    fn serialize_seq(self, len: Option<usize>) -> Result<SeqBuilder, CanonicalError> {
        Ok(SeqBuilder { items: Vec::with_capacity(len.unwrap_or(0)), variant: None })
    }
    fn serialize_tuple(self, len: usize) -> Result<SeqBuilder, CanonicalError> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_struct(self, _name: &'static str, len: usize) -> Result<SeqBuilder, CanonicalError> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        len: usize,
    ) -> Result<SeqBuilder, CanonicalError> {
        Ok(SeqBuilder { items: Vec::with_capacity(len), variant: Some(variant) })
    }
    fn serialize_map(self, _len: Option<usize>) -> Result<MapBuilder, CanonicalError> {
        Ok(MapBuilder { map: BTreeMap::new(), pending_key: None, variant: None })
    }
    fn serialize_struct(self, _name: &'static str, _len: usize) -> Result<MapBuilder, CanonicalError> {
        self.serialize_map(None)
    }
    fn serialize_struct_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        _len: usize,
    ) -> Result<MapBuilder, CanonicalError> {
        Ok(MapBuilder { map: BTreeMap::new(), pending_key: None, variant: Some(variant) })
    }
}

impl SeqBuilder {
    fn push<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.items.push(value.serialize(ValueSerializer)?);
        Ok(())
    }
    fn finish(self) -> CanonicalValue {
        wrap_variant(self.variant, CanonicalValue::List(self.items))
    }
}

impl ser::SerializeSeq for SeqBuilder {
    type Ok = CanonicalValue;
    type Error = CanonicalError;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.push(value)
    }
    fn end(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(self.finish())
    }
}

impl ser::SerializeTuple for SeqBuilder {
    type Ok = CanonicalValue;
    type Error = CanonicalError;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.push(value)
    }
    fn end(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(self.finish())
    }
}

impl ser::SerializeTupleStruct for SeqBuilder {
    type Ok = CanonicalValue;
    type Error = CanonicalError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.push(value)
    }
    fn end(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(self.finish())
    }
}

impl ser::SerializeTupleVariant for SeqBuilder {
    type Ok = CanonicalValue;
    type Error = CanonicalError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.push(value)
    }
    fn end(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(self.finish())
    }
}

impl MapBuilder {
    fn insert<T: Serialize + ?Sized>(&mut self, key: String, value: &T) -> Result<(), CanonicalError> {
        let v = value.serialize(ValueSerializer)?;
        self.map.insert(key, v);
        Ok(())
    }
    fn finish(self) -> CanonicalValue {
        wrap_variant(self.variant, CanonicalValue::Map(self.map))
    }
}

impl ser::SerializeMap for MapBuilder {
    type Ok = CanonicalValue;
    type Error = CanonicalError;
    fn serialize_key<T: Serialize + ?Sized>(&mut self, key: &T) -> Result<(), CanonicalError> {
        match key.serialize(ValueSerializer)? {
            CanonicalValue::Str(s) => {
                self.pending_key = Some(s);
                Ok(())
            }
            _ => Err(CanonicalError::NonStringKey),
        }
    }
    fn serialize_value<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        let key = self
            .pending_key
            .take()
            .ok_or_else(|| CanonicalError::Custom("map value without key".into()))?;
        self.insert(key, value)
    }
    fn end(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(self.finish())
    }
}

impl ser::SerializeStruct for MapBuilder {
    type Ok = CanonicalValue;
    type Error = CanonicalError;
    fn serialize_field<T: Serialize + ?Sized>(
        &mut self,
        key: &'static str,
        value: &T,
    ) -> Result<(), CanonicalError> {
        self.insert(key.to_string(), value)
    }
    fn end(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(self.finish())
    }
}

impl ser::SerializeStructVariant for MapBuilder {
    type Ok = CanonicalValue;
    type Error = CanonicalError;
    fn serialize_field<T: Serialize + ?Sized>(
        &mut self,
        key: &'static str,
        value: &T,
    ) -> Result<(), CanonicalError> {
        self.insert(key.to_string(), value)
    }
    fn end(self) -> Result<CanonicalValue, CanonicalError> {
        Ok(self.finish())
    }
}
