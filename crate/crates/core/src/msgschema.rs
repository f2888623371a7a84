//! Message schemas parsed from `.msg`-style text, with a compact positional
//! binary codec and a canonical single-line JSON rendering.
//!
//! Schema files hold one `<type> <field_name>` pair per line. `#` starts a
//! comment and `<type>[]` declares an array of a scalar type.
//!
//! The binary format carries no field tags: both ends share the schema.
//! Numbers are fixed-width little-endian, `bool` is one byte, strings and
//! arrays are prefixed with a little-endian `u32` length/count.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value as Json;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("syntax error on line {0}")]
    SyntaxError(usize),
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("duplicate schema id {0}")]
    DuplicateSchemaId(u8),
    #[error("duplicate schema name `{0}`")]
    DuplicateSchemaName(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("value does not match schema at field `{0}`")]
    TypeMismatch(String),
    #[error("value is for schema {found}, expected schema {expected}")]
    SchemaMismatch { expected: u8, found: u8 },
    #[error("input truncated at offset {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("invalid bool byte at offset {0}")]
    InvalidBool(usize),
    #[error("invalid UTF-8 in string at offset {0}")]
    InvalidUtf8(usize),
    #[error("field `{0}` cannot be represented in JSON")]
    NotRepresentable(String),
    #[error("malformed JSON value: {0}")]
    Json(String),
}

/// Scalar and array field types.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FieldType {
    Bool,
    Int8,
    Int16,
    Int32,
    Int64,
    Uint8,
    Uint16,
    Uint32,
    Uint64,
    Float32,
    Float64,
    String,
    /// Array of a non-array type.
    Array(Box<FieldType>),
}

impl FieldType {
    pub const SCALARS: [FieldType; 12] = [
        FieldType::Bool,
        FieldType::Int8,
        FieldType::Int16,
        FieldType::Int32,
        FieldType::Int64,
        FieldType::Uint8,
        FieldType::Uint16,
        FieldType::Uint32,
        FieldType::Uint64,
        FieldType::Float32,
        FieldType::Float64,
        FieldType::String,
    ];

    fn scalar_from_token(token: &str) -> Option<FieldType> {
        Some(match token {
            "bool" => FieldType::Bool,
            "int8" => FieldType::Int8,
            "int16" => FieldType::Int16,
            "int32" => FieldType::Int32,
            "int64" => FieldType::Int64,
            "uint8" => FieldType::Uint8,
            "uint16" => FieldType::Uint16,
            "uint32" => FieldType::Uint32,
            "uint64" => FieldType::Uint64,
            "float32" => FieldType::Float32,
            "float64" => FieldType::Float64,
            "string" => FieldType::String,
            _ => return None,
        })
    }

    /// Parses a type token such as `uint32` or `float64[]`.
    pub fn from_token(token: &str) -> Result<FieldType, SchemaError> {
        if let Some(elem) = token.strip_suffix("[]") {
            return match FieldType::scalar_from_token(elem) {
                Some(t) => Ok(FieldType::Array(Box::new(t))),
                None => Err(SchemaError::UnknownType(token.to_string())),
            };
        }
        FieldType::scalar_from_token(token).ok_or_else(|| SchemaError::UnknownType(token.to_string()))
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, FieldType::Bool | FieldType::String | FieldType::Array(_))
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FieldType::Bool => "bool",
            FieldType::Int8 => "int8",
            FieldType::Int16 => "int16",
            FieldType::Int32 => "int32",
            FieldType::Int64 => "int64",
            FieldType::Uint8 => "uint8",
            FieldType::Uint16 => "uint16",
            FieldType::Uint32 => "uint32",
            FieldType::Uint64 => "uint64",
            FieldType::Float32 => "float32",
            FieldType::Float64 => "float64",
            FieldType::String => "string",
            FieldType::Array(elem) => return write!(f, "{elem}[]"),
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub ty: FieldType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageSchema {
    pub name: String,
    pub schema_id: u8,
    pub fields: Vec<Field>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses schema text into a [`MessageSchema`]; line numbers in errors are 1-based.
pub fn parse_schema(name: &str, text: &str, schema_id: u8) -> Result<MessageSchema, SchemaError> {
    let mut fields: Vec<Field> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let mut tokens = line.split_whitespace();
        let Some(type_token) = tokens.next() else {
            continue;
        };
        let (Some(field_name), None) = (tokens.next(), tokens.next()) else {
            return Err(SchemaError::SyntaxError(idx + 1));
        };
        if !is_identifier(field_name) {
            return Err(SchemaError::SyntaxError(idx + 1));
        }
        let ty = FieldType::from_token(type_token)?;
        if fields.iter().any(|f| f.name == field_name) {
            return Err(SchemaError::DuplicateField(field_name.to_string()));
        }
        fields.push(Field { name: field_name.to_string(), ty });
    }
    Ok(MessageSchema { name: name.to_string(), schema_id, fields })
}

impl MessageSchema {
    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}

/// A single typed value.
///
/// Equality compares floats by bit pattern so that a codec round trip is an
/// identity even for NaN payloads and signed zeros.
#[derive(Debug, Clone)]
pub enum Value {
    Bool(bool),
    I8(i8),
    I16(i16),
    I32(i32),
    I64(i64),
    U8(u8),
    U16(u16),
    U32(u32),
    U64(u64),
    F32(f32),
    F64(f64),
    Str(String),
    Array(Vec<Value>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (Bool(a), Bool(b)) => a == b,
            (I8(a), I8(b)) => a == b,
            (I16(a), I16(b)) => a == b,
            (I32(a), I32(b)) => a == b,
            (I64(a), I64(b)) => a == b,
            (U8(a), U8(b)) => a == b,
            (U16(a), U16(b)) => a == b,
            (U32(a), U32(b)) => a == b,
            (U64(a), U64(b)) => a == b,
            (F32(a), F32(b)) => a.to_bits() == b.to_bits(),
            (F64(a), F64(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            (Array(a), Array(b)) => a == b,
            _ => false,
        }
    }
}

impl Value {
    pub fn matches(&self, ty: &FieldType) -> bool {
        match (self, ty) {
            (Value::Array(items), FieldType::Array(elem)) => items.iter().all(|v| v.matches_scalar(elem)),
            (_, FieldType::Array(_)) => false,
            (v, t) => v.matches_scalar(t),
        }
    }

    fn matches_scalar(&self, ty: &FieldType) -> bool {
        matches!(
            (self, ty),
            (Value::Bool(_), FieldType::Bool)
                | (Value::I8(_), FieldType::Int8)
                | (Value::I16(_), FieldType::Int16)
                | (Value::I32(_), FieldType::Int32)
                | (Value::I64(_), FieldType::Int64)
                | (Value::U8(_), FieldType::Uint8)
                | (Value::U16(_), FieldType::Uint16)
                | (Value::U32(_), FieldType::Uint32)
                | (Value::U64(_), FieldType::Uint64)
                | (Value::F32(_), FieldType::Float32)
                | (Value::F64(_), FieldType::Float64)
                | (Value::Str(_), FieldType::String)
        )
    }

    /// Numeric view of a scalar, used for plotting time series.
    pub fn as_f64(&self) -> Option<f64> {
        Some(match *self {
            Value::I8(v) => v as f64,
            Value::I16(v) => v as f64,
            Value::I32(v) => v as f64,
            Value::I64(v) => v as f64,
            Value::U8(v) => v as f64,
            Value::U16(v) => v as f64,
            Value::U32(v) => v as f64,
            Value::U64(v) => v as f64,
            Value::F32(v) => v as f64,
            Value::F64(v) => v,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageValue {
    pub schema_id: u8,
    pub values: Vec<Value>,
}

impl MessageValue {
    pub fn new(schema_id: u8, values: Vec<Value>) -> Self {
        Self { schema_id, values }
    }
}

fn check_shape(schema: &MessageSchema, value: &MessageValue) -> Result<(), CodecError> {
    if value.schema_id != schema.schema_id {
        return Err(CodecError::SchemaMismatch { expected: schema.schema_id, found: value.schema_id });
    }
    for (i, field) in schema.fields.iter().enumerate() {
        match value.values.get(i) {
            Some(v) if v.matches(&field.ty) => {}
            _ => return Err(CodecError::TypeMismatch(field.name.clone())),
        }
    }
    if value.values.len() > schema.fields.len() {
        return Err(CodecError::TypeMismatch(format!("#{}", schema.fields.len())));
    }
    Ok(())
}

fn encode_scalar(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Bool(b) => out.push(u8::from(*b)),
        Value::I8(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::I16(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::I32(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::I64(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::U8(x) => out.push(*x),
        Value::U16(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::U32(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::U64(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::F32(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::F64(x) => out.extend_from_slice(&x.to_le_bytes()),
        Value::Str(s) => {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        Value::Array(items) => {
            out.extend_from_slice(&(items.len() as u32).to_le_bytes());
            for item in items {
                encode_scalar(out, item);
            }
        }
    }
}

pub fn encode_binary(schema: &MessageSchema, value: &MessageValue) -> Result<Vec<u8>, CodecError> {
    check_shape(schema, value)?;
    let mut out = Vec::new();
    for v in &value.values {
        encode_scalar(&mut out, v);
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.data.len() - self.pos < n {
            return Err(CodecError::Truncated(self.pos));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut buf = [0u8; N];
        buf.copy_from_slice(self.take(N)?);
        Ok(buf)
    }

    fn scalar(&mut self, ty: &FieldType) -> Result<Value, CodecError> {
        let start = self.pos;
        Ok(match ty {
            FieldType::Bool => match self.take(1)?[0] {
                0 => Value::Bool(false),
                1 => Value::Bool(true),
                _ => return Err(CodecError::InvalidBool(start)),
            },
            FieldType::Int8 => Value::I8(i8::from_le_bytes(self.array()?)),
            FieldType::Int16 => Value::I16(i16::from_le_bytes(self.array()?)),
            FieldType::Int32 => Value::I32(i32::from_le_bytes(self.array()?)),
            FieldType::Int64 => Value::I64(i64::from_le_bytes(self.array()?)),
            FieldType::Uint8 => Value::U8(self.take(1)?[0]),
            FieldType::Uint16 => Value::U16(u16::from_le_bytes(self.array()?)),
            FieldType::Uint32 => Value::U32(u32::from_le_bytes(self.array()?)),
            FieldType::Uint64 => Value::U64(u64::from_le_bytes(self.array()?)),
            FieldType::Float32 => Value::F32(f32::from_le_bytes(self.array()?)),
            FieldType::Float64 => Value::F64(f64::from_le_bytes(self.array()?)),
            FieldType::String => {
                let len = u32::from_le_bytes(self.array()?) as usize;
                let body_at = self.pos;
                let bytes = self.take(len)?;
                let s = std::str::from_utf8(bytes).map_err(|_| CodecError::InvalidUtf8(body_at))?;
                Value::Str(s.to_string())
            }
            FieldType::Array(elem) => {
                let count = u32::from_le_bytes(self.array()?) as usize;
                // every element takes at least one byte, so a count larger than
                // the remaining input is a truncation, not an allocation request
                if count > self.data.len() - self.pos {
                    return Err(CodecError::Truncated(self.pos));
                }
                let mut items = Vec::with_capacity(count);
                for _ in 0..count {
                    items.push(self.scalar(elem)?);
                }
                Value::Array(items)
            }
        })
    }
}

pub fn decode_binary(schema: &MessageSchema, data: &[u8]) -> Result<MessageValue, CodecError> {
    let mut reader = Reader { data, pos: 0 };
    let mut values = Vec::with_capacity(schema.fields.len());
    for field in &schema.fields {
        values.push(reader.scalar(&field.ty)?);
    }
    let rest = data.len() - reader.pos;
    if rest > 0 {
        return Err(CodecError::TrailingBytes(rest));
    }
    Ok(MessageValue { schema_id: schema.schema_id, values })
}

fn render_json_scalar(out: &mut String, field: &str, v: &Value) -> Result<(), CodecError> {
    // serde_json renders floats with ryu: shortest representation that round-trips.
    let text = match v {
        Value::F32(x) if !x.is_finite() => return Err(CodecError::NotRepresentable(field.to_string())),
        Value::F64(x) if !x.is_finite() => return Err(CodecError::NotRepresentable(field.to_string())),
        Value::Bool(x) => serde_json::to_string(x),
        Value::I8(x) => serde_json::to_string(x),
        Value::I16(x) => serde_json::to_string(x),
        Value::I32(x) => serde_json::to_string(x),
        Value::I64(x) => serde_json::to_string(x),
        Value::U8(x) => serde_json::to_string(x),
        Value::U16(x) => serde_json::to_string(x),
        Value::U32(x) => serde_json::to_string(x),
        Value::U64(x) => serde_json::to_string(x),
        Value::F32(x) => serde_json::to_string(x),
        Value::F64(x) => serde_json::to_string(x),
        Value::Str(s) => serde_json::to_string(s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                render_json_scalar(out, field, item)?;
            }
            out.push(']');
            return Ok(());
        }
    };
    out.push_str(&text.map_err(|e| CodecError::Json(e.to_string()))?);
    Ok(())
}

/// Renders a value as a single-line JSON object with keys in schema order.
pub fn encode_json(schema: &MessageSchema, value: &MessageValue) -> Result<String, CodecError> {
    check_shape(schema, value)?;
    let mut out = String::from("{");
    for (i, (field, v)) in schema.fields.iter().zip(&value.values).enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&serde_json::to_string(&field.name).map_err(|e| CodecError::Json(e.to_string()))?);
        out.push(':');
        render_json_scalar(&mut out, &field.name, v)?;
    }
    out.push('}');
    Ok(out)
}

fn json_to_scalar(field: &str, ty: &FieldType, j: &Json) -> Result<Value, CodecError> {
    let mismatch = || CodecError::TypeMismatch(field.to_string());
    macro_rules! int {
        ($variant:ident, $t:ty) => {{
            let v = if let Some(i) = j.as_i64() {
                <$t>::try_from(i).ok()
            } else if let Some(u) = j.as_u64() {
                <$t>::try_from(u).ok()
            } else {
                None
            };
            Value::$variant(v.ok_or_else(mismatch)?)
        }};
    }
    Ok(match ty {
        FieldType::Bool => Value::Bool(j.as_bool().ok_or_else(mismatch)?),
        FieldType::Int8 => int!(I8, i8),
        FieldType::Int16 => int!(I16, i16),
        FieldType::Int32 => int!(I32, i32),
        FieldType::Int64 => int!(I64, i64),
        FieldType::Uint8 => int!(U8, u8),
        FieldType::Uint16 => int!(U16, u16),
        FieldType::Uint32 => int!(U32, u32),
        FieldType::Uint64 => int!(U64, u64),
        FieldType::Float32 => Value::F32(j.as_f64().ok_or_else(mismatch)? as f32),
        FieldType::Float64 => Value::F64(j.as_f64().ok_or_else(mismatch)?),
        FieldType::String => Value::Str(j.as_str().ok_or_else(mismatch)?.to_string()),
        FieldType::Array(elem) => {
            let items = j.as_array().ok_or_else(mismatch)?;
            Value::Array(items.iter().map(|i| json_to_scalar(field, elem, i)).collect::<Result<_, _>>()?)
        }
    })
}

/// Parses a JSON object into a value for `schema`. Every schema field must be
/// present; unknown keys are rejected.
pub fn decode_json(schema: &MessageSchema, text: &str) -> Result<MessageValue, CodecError> {
    let parsed: Json = serde_json::from_str(text).map_err(|e| CodecError::Json(e.to_string()))?;
    let Json::Object(map) = parsed else {
        return Err(CodecError::Json("expected a JSON object".into()));
    };
    if let Some(extra) = map.keys().find(|k| schema.field_index(k).is_none()) {
        return Err(CodecError::TypeMismatch(extra.clone()));
    }
    let values = schema
        .fields
        .iter()
        .map(|f| {
            let j = map.get(&f.name).ok_or_else(|| CodecError::TypeMismatch(f.name.clone()))?;
            json_to_scalar(&f.name, &f.ty, j)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MessageValue { schema_id: schema.schema_id, values })
}

/// Schemas keyed by id, with lookup by name.
#[derive(Debug, Clone, Default)]
pub struct SchemaRegistry {
    by_id: BTreeMap<u8, MessageSchema>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, schema: MessageSchema) -> Result<(), SchemaError> {
        if self.by_id.contains_key(&schema.schema_id) {
            return Err(SchemaError::DuplicateSchemaId(schema.schema_id));
        }
        if self.by_name(&schema.name).is_some() {
            return Err(SchemaError::DuplicateSchemaName(schema.name));
        }
        self.by_id.insert(schema.schema_id, schema);
        Ok(())
    }

    pub fn get(&self, schema_id: u8) -> Option<&MessageSchema> {
        self.by_id.get(&schema_id)
    }

    pub fn by_name(&self, name: &str) -> Option<&MessageSchema> {
        self.by_id.values().find(|s| s.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MessageSchema> {
        self.by_id.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o2_schema() -> MessageSchema {
        parse_schema("o2", "int64 t_ns\nfloat64 o2_umol_per_l\nuint32 seq", 1).unwrap()
    }

    #[test]
    fn parses_single_field() {
        let s = parse_schema("x", "float64 o2_umol_per_l", 7).unwrap();
        assert_eq!(s.schema_id, 7);
        assert_eq!(s.fields, vec![Field { name: "o2_umol_per_l".into(), ty: FieldType::Float64 }]);
    }

    #[test]
    fn parses_fields_in_file_order() {
        let s = o2_schema();
        let names: Vec<_> = s.fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["t_ns", "o2_umol_per_l", "seq"]);
        assert_eq!(s.fields[0].ty, FieldType::Int64);
        assert_eq!(s.fields[2].ty, FieldType::Uint32);
    }

    #[test]
    fn comments_blank_lines_and_arrays() {
        let text = "# header\n\n  uint8[] raw   # bytes\nstring label\n";
        let s = parse_schema("x", text, 1).unwrap();
        assert_eq!(s.fields[0].ty, FieldType::Array(Box::new(FieldType::Uint8)));
        assert_eq!(s.fields[1].ty, FieldType::String);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_schema("x", "float99 x", 1), Err(SchemaError::UnknownType("float99".into())));
        assert_eq!(parse_schema("x", "int8 a\nint8 a", 1), Err(SchemaError::DuplicateField("a".into())));
        assert_eq!(parse_schema("x", "int8 a\nint8", 1), Err(SchemaError::SyntaxError(2)));
        assert_eq!(parse_schema("x", "int8 a b", 1), Err(SchemaError::SyntaxError(1)));
        assert_eq!(parse_schema("x", "int8 9a", 1), Err(SchemaError::SyntaxError(1)));
        assert_eq!(parse_schema("x", "int8[][] a", 1), Err(SchemaError::UnknownType("int8[][]".into())));
    }

    #[test]
    fn encodes_float64_little_endian() {
        let s = parse_schema("x", "float64 o2", 1).unwrap();
        let v = MessageValue::new(1, vec![Value::F64(12.5)]);
        let bytes = encode_binary(&s, &v).unwrap();
        assert_eq!(bytes, [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x29, 0x40]);
        assert_eq!(decode_binary(&s, &bytes).unwrap(), v);
    }

    #[test]
    fn empty_schema_encodes_to_nothing() {
        let s = parse_schema("empty", "", 3).unwrap();
        let v = MessageValue::new(3, vec![]);
        assert!(encode_binary(&s, &v).unwrap().is_empty());
        assert_eq!(encode_json(&s, &v).unwrap(), "{}");
    }

    #[test]
    fn string_is_length_prefixed() {
        let s = parse_schema("x", "string s", 1).unwrap();
        let v = MessageValue::new(1, vec![Value::Str("ab".into())]);
        assert_eq!(encode_binary(&s, &v).unwrap(), [0x02, 0x00, 0x00, 0x00, 0x61, 0x62]);
    }

    #[test]
    fn decode_errors() {
        let s = parse_schema("x", "uint32 seq", 1).unwrap();
        assert_eq!(decode_binary(&s, &[1, 2, 3]), Err(CodecError::Truncated(0)));
        let s = parse_schema("x", "bool b", 1).unwrap();
        assert_eq!(decode_binary(&s, &[0x01, 0xFF]), Err(CodecError::TrailingBytes(1)));
        assert_eq!(decode_binary(&s, &[0x02]), Err(CodecError::InvalidBool(0)));
        let s = parse_schema("x", "uint8 a\nstring s", 1).unwrap();
        assert_eq!(decode_binary(&s, &[9, 5, 0, 0, 0, b'a']), Err(CodecError::Truncated(5)));
        assert_eq!(decode_binary(&s, &[9, 1, 0, 0, 0, 0xFF]), Err(CodecError::InvalidUtf8(5)));
        let s = parse_schema("x", "uint16[] xs", 1).unwrap();
        assert_eq!(decode_binary(&s, &[0xFF, 0xFF, 0xFF, 0xFF]), Err(CodecError::Truncated(4)));
    }

    #[test]
    fn type_mismatch_names_field() {
        let s = o2_schema();
        let bad = MessageValue::new(1, vec![Value::I64(0), Value::F32(1.0), Value::U32(1)]);
        assert_eq!(encode_binary(&s, &bad), Err(CodecError::TypeMismatch("o2_umol_per_l".into())));
        let short = MessageValue::new(1, vec![Value::I64(0)]);
        assert_eq!(encode_json(&s, &short), Err(CodecError::TypeMismatch("o2_umol_per_l".into())));
        let wrong_id = MessageValue::new(2, vec![]);
        assert!(matches!(encode_binary(&s, &wrong_id), Err(CodecError::SchemaMismatch { .. })));
    }

    #[test]
    fn json_rendering() {
        let s = parse_schema("x", "float64 o2", 1).unwrap();
        let json = encode_json(&s, &MessageValue::new(1, vec![Value::F64(12.5)])).unwrap();
        assert_eq!(json, r#"{"o2":12.5}"#);
        assert_eq!(json.len(), 11);

        let s = o2_schema();
        let v = MessageValue::new(1, vec![Value::I64(0), Value::F64(12.5), Value::U32(1)]);
        let json = encode_json(&s, &v).unwrap();
        assert_eq!(json, r#"{"t_ns":0,"o2_umol_per_l":12.5,"seq":1}"#);
        assert_eq!(json.len(), 39);
        assert_eq!(encode_binary(&s, &v).unwrap().len(), 20);
    }

    #[test]
    fn json_escapes_and_arrays() {
        let s = parse_schema("x", "string s\nint16[] xs\nfloat32 f", 1).unwrap();
        let v = MessageValue::new(
            1,
            vec![Value::Str("a\"b\n".into()), Value::Array(vec![Value::I16(-1), Value::I16(2)]), Value::F32(0.1)],
        );
        let json = encode_json(&s, &v).unwrap();
        assert_eq!(json, r#"{"s":"a\"b\n","xs":[-1,2],"f":0.1}"#);
        assert_eq!(decode_json(&s, &json).unwrap(), v);
    }

    #[test]
    fn json_rejects_non_finite() {
        let s = parse_schema("x", "float64 f", 1).unwrap();
        let v = MessageValue::new(1, vec![Value::F64(f64::NAN)]);
        assert_eq!(encode_json(&s, &v), Err(CodecError::NotRepresentable("f".into())));
    }

    #[test]
    fn decode_json_range_checks() {
        let s = parse_schema("x", "uint8 a", 1).unwrap();
        assert_eq!(decode_json(&s, r#"{"a":256}"#), Err(CodecError::TypeMismatch("a".into())));
        assert_eq!(decode_json(&s, r#"{"a":1,"b":2}"#), Err(CodecError::TypeMismatch("b".into())));
        assert_eq!(decode_json(&s, r#"{}"#), Err(CodecError::TypeMismatch("a".into())));
        assert_eq!(decode_json(&s, r#"{"a":255}"#).unwrap().values, vec![Value::U8(255)]);
    }

    #[test]
    fn registry_rejects_duplicate_ids() {
        let mut reg = SchemaRegistry::new();
        reg.insert(parse_schema("a", "", 1).unwrap()).unwrap();
        assert_eq!(reg.insert(parse_schema("b", "", 1).unwrap()), Err(SchemaError::DuplicateSchemaId(1)));
        assert!(reg.by_name("a").is_some());
    }
}
