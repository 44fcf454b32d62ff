//! Survey records and their CSV form.
//!
//! ```text
//! respondent_id,phase,attitude_tsi,willingness_tsi,attitude_system,perceived_change,free_text
//! s001,pre,1,0,-2,,
//! s002,post,2,1,3,IncreasedALittle,"more questions answered"
//! ```
//!
//! `phase` is `pre` or `post`; Likert columns hold integers in `-3..=3`;
//! `perceived_change` is empty or one of the five change categories and may
//! only appear on post records.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::StatsError;

pub const CSV_HEADER: [&str; 7] = [
    "respondent_id",
    "phase",
    "attitude_tsi",
    "willingness_tsi",
    "attitude_system",
    "perceived_change",
    "free_text",
];

/// 7-point Likert answer, -3 to 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i8")]
pub struct LikertResponse(i8);

impl LikertResponse {
    pub fn new(value: i64) -> Result<Self, StatsError> {
        if (-3..=3).contains(&value) {
            Ok(LikertResponse(value as i8))
        } else {
            Err(StatsError::InvalidLikert(value))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }
}

impl TryFrom<i64> for LikertResponse {
    type Error = StatsError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        LikertResponse::new(v)
    }
}

impl From<LikertResponse> for i8 {
    fn from(v: LikertResponse) -> i8 {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" => Ok(Phase::Pre),
            "post" => Ok(Phase::Post),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerceivedChange {
    DecreasedALot,
    DecreasedALittle,
    NoChange,
    IncreasedALittle,
    IncreasedALot,
}

impl PerceivedChange {
    pub const ALL: [PerceivedChange; 5] = [
        PerceivedChange::DecreasedALot,
        PerceivedChange::DecreasedALittle,
        PerceivedChange::NoChange,
        PerceivedChange::IncreasedALittle,
        PerceivedChange::IncreasedALot,
    ];

    /// -2 (decreased a lot) to 2 (increased a lot).
    pub fn code(self) -> i8 {
        match self {
            PerceivedChange::DecreasedALot => -2,
            PerceivedChange::DecreasedALittle => -1,
            PerceivedChange::NoChange => 0,
            PerceivedChange::IncreasedALittle => 1,
            PerceivedChange::IncreasedALot => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PerceivedChange::DecreasedALot => "DecreasedALot",
            PerceivedChange::DecreasedALittle => "DecreasedALittle",
            PerceivedChange::NoChange => "NoChange",
            PerceivedChange::IncreasedALittle => "IncreasedALittle",
            PerceivedChange::IncreasedALot => "IncreasedALot",
        }
    }
}

impl std::str::FromStr for PerceivedChange {
    type Err = String;
    /// Accepts the variant name in any case, with or without `_`, `-` or spaces.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        PerceivedChange::ALL
            .into_iter()
            .find(|p| p.label().to_ascii_lowercase() == key)
            .ok_or_else(|| format!("unknown perceived change {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AttitudeTsi,
    WillingnessTsi,
    AttitudeSystem,
    PerceivedChange,
}

impl Metric {
    /// `(code, label)` for every answer category, in scale order.
    pub fn categories(self) -> Vec<(i8, &'static str)> {
        match self {
            Metric::PerceivedChange => PerceivedChange::ALL.iter().map(|p| (p.code(), p.label())).collect(),
            _ => vec![(-3, "-3"), (-2, "-2"), (-1, "-1"), (0, "0"), (1, "1"), (2, "2"), (3, "3")],
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "attitude_tsi" => Ok(Metric::AttitudeTsi),
            "willingness_tsi" => Ok(Metric::WillingnessTsi),
            "attitude_system" => Ok(Metric::AttitudeSystem),
            "perceived_change" => Ok(Metric::PerceivedChange),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub respondent_id: String,
    pub phase: Phase,
    pub attitude_tsi: LikertResponse,
    pub willingness_tsi: LikertResponse,
    pub attitude_system: LikertResponse,
    pub perceived_change: Option<PerceivedChange>,
    pub free_text: Option<String>,
}

impl SurveyRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.perceived_change.is_some() && self.phase != Phase::Post {
            return Err("perceived_change is only asked post-study".into());
        }
        Ok(())
    }

    pub fn value(&self, metric: Metric) -> Option<i8> {
        match metric {
            Metric::AttitudeTsi => Some(self.attitude_tsi.value()),
            Metric::WillingnessTsi => Some(self.willingness_tsi.value()),
            Metric::AttitudeSystem => Some(self.attitude_system.value()),
            Metric::PerceivedChange => self.perceived_change.map(PerceivedChange::code),
        }
    }
}

/// Parse survey responses; the header must match [`CSV_HEADER`].
pub fn read_csv(input: impl Read) -> Result<Vec<SurveyRecord>, StatsError> {
    let schema = |line: usize, message: String| StatsError::Schema { line, message };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(schema(1, format!("expected header {}", CSV_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| schema(line, e.to_string()))?;
        let likert = |col: usize| -> Result<LikertResponse, StatsError> {
            let v: i64 = row[col]
                .parse()
                .map_err(|_| schema(line, format!("{}: not an integer", CSV_HEADER[col])))?;
            LikertResponse::new(v).map_err(|e| schema(line, e.to_string()))
        };
        let opt = |col: usize| Some(row[col].to_string()).filter(|s| !s.is_empty());
        let rec = SurveyRecord {
            respondent_id: row[0].to_string(),
            phase: row[1].parse().map_err(|e| schema(line, e))?,
            attitude_tsi: likert(2)?,
            willingness_tsi: likert(3)?,
            attitude_system: likert(4)?,
            perceived_change: opt(5)
                .map(|s| s.parse())
                .transpose()
                .map_err(|e| schema(line, e))?,
            free_text: opt(6),
        };
        rec.validate().map_err(|e| schema(line, e))?;
        out.push(rec);
    }
    Ok(out)
}
