//! Field-level accessors over parsed JSON values that report the offending
//! line and field path.

use serde_json::{Map, Value};

use crate::error::{DeduceError, Result};

#[derive(Clone, Copy)]
pub(crate) struct Ctx<'a> {
    pub line: usize,
    pub obj: &'a Map<String, Value>,
}

impl<'a> Ctx<'a> {
    pub fn new(line: usize, value: &'a Value, what: &str) -> Result<Self> {
        match value {
            Value::Object(obj) => Ok(Ctx { line, obj }),
            _ => Err(DeduceError::schema(line, what, "expected an object")),
        }
    }

    pub fn err(&self, field: &str, message: impl Into<String>) -> DeduceError {
        DeduceError::schema(self.line, field, message)
    }

    pub fn deny_unknown(&self, allowed: &[&str]) -> Result<()> {
        for key in self.obj.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(self.err(key, "unknown field"));
            }
        }
        Ok(())
    }

    pub fn required(&self, field: &str) -> Result<&'a Value> {
        self.obj
            .get(field)
            .ok_or_else(|| self.err(field, "missing field"))
    }

    /// `None` when the field is absent or null.
    pub fn optional(&self, field: &str) -> Option<&'a Value> {
        match self.obj.get(field) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v),
        }
    }

    pub fn str(&self, field: &str) -> Result<&'a str> {
        self.required(field)?
            .as_str()
            .ok_or_else(|| self.err(field, "expected a string"))
    }

    pub fn usize(&self, field: &str) -> Result<usize> {
        as_usize(self.required(field)?).ok_or_else(|| self.err(field, "expected a non-negative integer"))
    }

    pub fn u64(&self, field: &str) -> Result<u64> {
        self.required(field)?
            .as_u64()
            .ok_or_else(|| self.err(field, "expected a non-negative integer"))
    }

    pub fn f64(&self, field: &str) -> Result<f64> {
        finite(self.required(field)?).ok_or_else(|| self.err(field, "expected a finite number"))
    }

    pub fn f64_array(&self, field: &str) -> Result<Vec<f64>> {
        f64_array(self.required(field)?, field, self.line)
    }

    pub fn string_array(&self, field: &str) -> Result<Vec<String>> {
        let arr = self
            .required(field)?
            .as_array()
            .ok_or_else(|| self.err(field, "expected an array of strings"))?;
        arr.iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| self.err(&format!("{field}[{i}]"), "expected a string"))
            })
            .collect()
    }
}

pub(crate) fn as_usize(v: &Value) -> Option<usize> {
    v.as_u64().and_then(|n| usize::try_from(n).ok())
}

pub(crate) fn finite(v: &Value) -> Option<f64> {
    v.as_f64().filter(|x| x.is_finite())
}

pub(crate) fn f64_array(v: &Value, field: &str, line: usize) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| DeduceError::schema(line, field, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            finite(x).ok_or_else(|| {
                DeduceError::schema(line, format!("{field}[{i}]"), "expected a finite number")
            })
        })
        .collect()
}

/// Converts a finite float to a JSON number.
pub(crate) fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .expect("finite float")
}

pub(crate) fn num_array(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| num(*x)).collect())
}
