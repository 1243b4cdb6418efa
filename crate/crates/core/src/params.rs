//! Named parameter tables with bounds and free/fixed flags.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter {0}")]
    Unknown(String),
    #[error("parameter {name}: bounds [{min}, {max}] are empty")]
    EmptyBounds { name: String, min: f64, max: f64 },
    #[error("parameter {name} = {value} lies outside [{min}, {max}]")]
    OutOfBounds {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Param {
    pub name: String,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub free: bool,
}

impl Param {
    pub fn new(name: &str, value: f64, min: f64, max: f64, free: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            min,
            max,
            free,
        }
    }

    pub fn fixed(name: &str, value: f64) -> Self {
        Self::new(name, value, value, value, false)
    }
}

/// Ordered parameter table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector {
    #[serde(rename = "param")]
    params: Vec<Param>,
}

impl ParamVector {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Result<f64, ParamError> {
        self.get(name)
            .map(|p| p.value)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    /// Sets a value without bound checks (bounds are a search constraint,
    /// not a model invariant).
    pub fn set_value(&mut self, name: &str, value: f64) -> Result<(), ParamError> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))?;
        p.value = value;
        Ok(())
    }

    pub fn set_free(&mut self, name: &str, free: bool) -> Result<(), ParamError> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))?;
        p.free = free;
        Ok(())
    }

    /// Replaces or appends an entry.
    pub fn upsert(&mut self, param: Param) {
        match self.get_mut(&param.name) {
            Some(p) => *p = param,
            None => self.params.push(param),
        }
    }

    pub fn free_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.free)
            .map(|p| p.name.as_str())
            .collect()
    }

    /// Writes `values` into the entries named by `names`, in order.
    pub fn assign(&mut self, names: &[&str], values: &[f64]) -> Result<(), ParamError> {
        if names.len() != values.len() {
            return Err(ParamError::LengthMismatch {
                expected: names.len(),
                got: values.len(),
            });
        }
        for (name, v) in names.iter().zip(values) {
            self.set_value(name, *v)?;
        }
        Ok(())
    }

    pub fn values_of(&self, names: &[&str]) -> Result<Vec<f64>, ParamError> {
        names.iter().map(|n| self.value(n)).collect()
    }

    pub fn check_bounds(&self) -> Result<(), ParamError> {
        for p in &self.params {
            if p.min > p.max {
                return Err(ParamError::EmptyBounds {
                    name: p.name.clone(),
                    min: p.min,
                    max: p.max,
                });
            }
            if p.value < p.min || p.value > p.max {
                return Err(ParamError::OutOfBounds {
                    name: p.name.clone(),
                    value: p.value,
                    min: p.min,
                    max: p.max,
                });
            }
        }
        Ok(())
    }
}
