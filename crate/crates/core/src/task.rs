use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction target: age regression or two-class sex classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Age,
    Sex,
}

impl Task {
    pub fn output_dim(self) -> usize {
        match self {
            Task::Age => 1,
            Task::Sex => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Age => "age",
            Task::Sex => "sex",
        }
    }

    /// Name of the evaluation metric.
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Age => "mae",
            Task::Sex => "accuracy",
        }
    }

    /// Whether `a` is a strictly better metric value than `b`.
    pub fn improves(self, a: f64, b: f64) -> bool {
        match self {
            Task::Age => a < b,
            Task::Sex => a > b,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age" => Ok(Task::Age),
            "sex" => Ok(Task::Sex),
            other => Err(Error::config(format!("unknown task `{other}` (expected age or sex)"))),
        }
    }
}
