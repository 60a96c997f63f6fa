//! CSV emission with registered schemas.
//!
//! Floats are written with 9 significant digits, in plain decimal notation
//! when the exponent is in `[-4, 15)` and as `1.5e-7` otherwise.

use std::path::Path;

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schema {
    pub id: &'static str,
    pub columns: &'static [&'static str],
    pub description: &'static str,
}

pub const SCHEMAS: &[Schema] = &[
    Schema {
        id: "prices",
        columns: &["msp", "mu", "price"],
        description: "reward per unit IoM posted by each MSP to each MU",
    },
    Schema {
        id: "allocation",
        columns: &[
            "mu",
            "msp",
            "compute_hz",
            "bandwidth_hz",
            "iom",
            "participating",
        ],
        description: "MU resources per MSP task and the resulting IoM",
    },
    Schema {
        id: "utilities",
        columns: &["role", "id", "utility"],
        description: "utility of every MSP (role msp) and MU (role mu)",
    },
    Schema {
        id: "ne_summary",
        columns: &["sweeps", "converged", "total_msp_utility", "total_iom"],
        description: "equilibrium solve statistics",
    },
    Schema {
        id: "utility_trace",
        columns: &["episode", "msp", "utility"],
        description: "mean stage utility of each MSP per training episode",
    },
    Schema {
        id: "mddr_summary",
        columns: &[
            "episodes",
            "ne_total_utility",
            "final_mean_utility",
            "ratio_to_ne",
            "final_cv",
            "greedy_total_utility",
        ],
        description: "training outcome over the last 100 episodes (or all, if fewer)",
    },
    Schema {
        id: "benchmark",
        columns: &[
            "instance",
            "instance_seed",
            "scheme",
            "msp",
            "iom",
            "price",
            "time_to_target_s",
            "reached",
        ],
        description: "per-MSP IoM, mean posted reward and FL time to the accuracy target",
    },
    Schema {
        id: "benchmark_summary",
        columns: &[
            "instance",
            "instance_seed",
            "scheme",
            "total_iom",
            "mean_time_to_target_s",
            "participating_pairs",
        ],
        description: "per-instance totals; unreached targets count as the period T",
    },
    Schema {
        id: "fl_events",
        columns: &["time_s", "kind", "mu", "msp", "round"],
        description: "FL event log; mu is empty for round deadlines",
    },
    Schema {
        id: "fl_accuracy",
        columns: &["msp", "round", "time_s", "accuracy"],
        description: "held-out accuracy of each global model after every round",
    },
    Schema {
        id: "aoi",
        columns: &["mu", "msp", "simulated_aoi", "closed_form_aoi"],
        description: "time-average AoI from the event log against tau/2 + T_c + T_t",
    },
    Schema {
        id: "verify",
        columns: &["check", "passed", "detail"],
        description: "pass/fail report of every check",
    },
];

pub fn schema(id: &str) -> Option<&'static Schema> {
    SCHEMAS.iter().find(|s| s.id == id)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    UInt(u64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::UInt(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// `x` rounded to 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..15).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::UInt(v) => v.to_string(),
            Cell::Float(v) => format_sig9(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

/// Writes `rows` under the header of schema `schema_id`. Rows are written
/// in the order given.
pub fn emit_csv(rows: &[Vec<Cell>], schema_id: &str, path: &Path) -> Result<(), HarnessError> {
    let schema = schema(schema_id)
        .ok_or_else(|| HarnessError::Schema(format!("unknown schema `{schema_id}`")))?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(schema.columns)?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != schema.columns.len() {
            return Err(HarnessError::Schema(format!(
                "row {i} of `{schema_id}` has {} fields, expected {}",
                row.len(),
                schema.columns.len()
            )));
        }
        writer.write_record(row.iter().map(Cell::render))?;
    }
    writer
        .flush()
        .map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig9(11833.771234567), "11833.7712");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(-0.5), "-0.5");
        assert_eq!(format_sig9(1e9), "1000000000");
        assert_eq!(format_sig9(3.2e9 + 0.4), "3200000000");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
        assert_eq!(format_sig9(3.2e-7), "3.2e-7");
        assert_eq!(format_sig9(1.234567891e20), "1.23456789e20");
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(f64::NAN), "nan");
    }

    #[test]
    fn empty_result_set_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        emit_csv(&[], "utility_trace", &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "episode,msp,utility\n"
        );
    }

    #[test]
    fn rows_follow_the_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let rows = vec![
            vec![
                Cell::from(0.25),
                "train_start".into(),
                Some(1usize).into(),
                0usize.into(),
                0u64.into(),
            ],
            vec![
                Cell::from(2.0),
                "round_deadline".into(),
                None::<usize>.into(),
                0usize.into(),
                0u64.into(),
            ],
        ];
        emit_csv(&rows, "fl_events", &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "time_s,kind,mu,msp,round\n0.25,train_start,1,0,0\n2,round_deadline,,0,0\n"
        );
    }

    #[test]
    fn wrong_width_and_unknown_schema_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        assert!(emit_csv(&[vec![Cell::Int(1)]], "prices", &path).is_err());
        assert!(emit_csv(&[], "nope", &path).is_err());
    }

    mod properties {
        use proptest::prelude::*;

        use super::super::*;

        proptest! {
            #[test]
            fn nine_digits_parse_back_within_rounding(x in proptest::num::f64::NORMAL) {
                let back: f64 = format_sig9(x).parse().unwrap();
                prop_assert!((back - x).abs() <= 5e-9 * x.abs());
            }
        }
    }
}
