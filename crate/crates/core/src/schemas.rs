//! Message schemas used by the simulator's nodes.

use crate::msgschema::{
    decode_binary, encode_binary, parse_schema, CodecError, MessageSchema, MessageValue, SchemaRegistry, Value,
};

pub const O2_SAMPLE_ID: u8 = 1;
pub const APP_FRAME_ID: u8 = 2;
pub const TWIN_STATUS_ID: u8 = 3;

const O2_SAMPLE: &str = include_str!("../schemas/o2_sample.msg");
const APP_FRAME: &str = include_str!("../schemas/app_frame.msg");
const TWIN_STATUS: &str = include_str!("../schemas/twin_status.msg");

pub fn o2_sample() -> MessageSchema {
    parse_schema("o2_sample", O2_SAMPLE, O2_SAMPLE_ID).expect("builtin schema")
}

pub fn app_frame() -> MessageSchema {
    parse_schema("app_frame", APP_FRAME, APP_FRAME_ID).expect("builtin schema")
}

pub fn twin_status() -> MessageSchema {
    parse_schema("twin_status", TWIN_STATUS, TWIN_STATUS_ID).expect("builtin schema")
}

pub fn builtin_registry() -> SchemaRegistry {
    let mut reg = SchemaRegistry::new();
    for schema in [o2_sample(), app_frame(), twin_status()] {
        reg.insert(schema).expect("builtin ids are distinct");
    }
    reg
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct O2Sample {
    pub t_ns: i64,
    pub o2_umol_per_l: f64,
    pub seq: u32,
}

impl O2Sample {
    pub fn encode(&self) -> Vec<u8> {
        let value = MessageValue::new(
            O2_SAMPLE_ID,
            vec![Value::I64(self.t_ns), Value::F64(self.o2_umol_per_l), Value::U32(self.seq)],
        );
        encode_binary(&o2_sample(), &value).expect("shape matches schema")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let v = decode_binary(&o2_sample(), bytes)?;
        match v.values.as_slice() {
            [Value::I64(t_ns), Value::F64(o2), Value::U32(seq)] => {
                Ok(Self { t_ns: *t_ns, o2_umol_per_l: *o2, seq: *seq })
            }
            _ => unreachable!("decoded under the o2 schema"),
        }
    }
}

pub fn encode_app_frame(src: u8, dest: u8, payload: &[u8]) -> Vec<u8> {
    let value = MessageValue::new(
        APP_FRAME_ID,
        vec![Value::U8(src), Value::U8(dest), Value::Array(payload.iter().map(|b| Value::U8(*b)).collect())],
    );
    encode_binary(&app_frame(), &value).expect("shape matches schema")
}

pub fn encode_twin_status(battery_pct: f64, sampling_interval_s: u32) -> Vec<u8> {
    let value = MessageValue::new(TWIN_STATUS_ID, vec![Value::F64(battery_pct), Value::U32(sampling_interval_s)]);
    encode_binary(&twin_status(), &value).expect("shape matches schema")
}

/// Plot value of a record: the first floating-point field of its schema,
/// falling back to the first numeric field.
pub fn plot_value(schema: &MessageSchema, value: &MessageValue) -> Option<f64> {
    use crate::msgschema::FieldType;
    let pick = |want_float: bool| {
        schema.fields.iter().zip(&value.values).find_map(|(f, v)| {
            let is_float = matches!(f.ty, FieldType::Float32 | FieldType::Float64);
            if (want_float && is_float) || (!want_float && f.ty.is_numeric()) {
                v.as_f64()
            } else {
                None
            }
        })
    };
    pick(true).or_else(|| pick(false))
}
