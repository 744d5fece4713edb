use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    NoFinding,
    Opacity,
    Effusion,
    Cardiomegaly,
    Edema,
    Pneumothorax,
}

impl Kind {
    pub const ALL: [Kind; 6] =
        [Kind::NoFinding, Kind::Opacity, Kind::Effusion, Kind::Cardiomegaly, Kind::Edema, Kind::Pneumothorax];
    pub const PATHOLOGIES: [Kind; 5] = [Kind::Opacity, Kind::Effusion, Kind::Cardiomegaly, Kind::Edema, Kind::Pneumothorax];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::NoFinding => "no_finding",
            Kind::Opacity => "opacity",
            Kind::Effusion => "effusion",
            Kind::Cardiomegaly => "cardiomegaly",
            Kind::Edema => "edema",
            Kind::Pneumothorax => "pneumothorax",
        }
    }

    /// Sides a finding of this kind may take.
    pub fn allowed_sides(self) -> &'static [Side] {
        match self {
            Kind::NoFinding | Kind::Cardiomegaly => &[Side::None],
            Kind::Opacity | Kind::Effusion => &[Side::Left, Side::Right, Side::Bilateral],
            Kind::Edema => &[Side::Bilateral],
            Kind::Pneumothorax => &[Side::Left, Side::Right],
        }
    }

    /// Kinds that have a meaningful location question.
    pub fn is_lateralized(self) -> bool {
        !matches!(self, Kind::NoFinding | Kind::Cardiomegaly)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bilateral,
    None,
}

impl Side {
    pub fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bilateral => "bilateral",
            Side::None => "",
        }
    }

    pub fn from_word(w: &str) -> Option<Side> {
        match w {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "bilateral" => Some(Side::Bilateral),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
    None,
}

impl Severity {
    pub const GRADED: [Severity; 3] = [Severity::Mild, Severity::Moderate, Severity::Severe];

    pub fn word(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
            Severity::None => "",
        }
    }

    pub fn from_word(w: &str) -> Option<Severity> {
        match w {
            "mild" => Some(Severity::Mild),
            "moderate" => Some(Severity::Moderate),
            "severe" => Some(Severity::Severe),
            _ => None,
        }
    }

    /// 0, 1, 2 for graded severities.
    pub fn level(self) -> usize {
        match self {
            Severity::Mild => 0,
            Severity::Moderate => 1,
            Severity::Severe => 2,
            Severity::None => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Finding {
    pub kind: Kind,
    pub side: Side,
    pub severity: Severity,
}

impl Finding {
    pub fn new(kind: Kind, side: Side, severity: Severity) -> Result<Self, CorpusError> {
        let f = Finding { kind, side, severity };
        f.validate()?;
        Ok(f)
    }

    pub fn no_finding() -> Self {
        Finding { kind: Kind::NoFinding, side: Side::None, severity: Severity::None }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !self.kind.allowed_sides().contains(&self.side) {
            return Err(CorpusError::InvalidFinding(format!("{} cannot have side {:?}", self.kind.name(), self.side)));
        }
        let graded = self.severity != Severity::None;
        if (self.kind == Kind::NoFinding) == graded {
            return Err(CorpusError::InvalidFinding(format!(
                "{} with severity {:?}",
                self.kind.name(),
                self.severity
            )));
        }
        Ok(())
    }
}

/// Checks a study's finding list: non-empty, unique kinds, `no_finding` only alone.
pub fn validate_findings(findings: &[Finding]) -> Result<(), CorpusError> {
    if findings.is_empty() {
        return Err(CorpusError::InvalidFinding("empty findings list".into()));
    }
    for (i, f) in findings.iter().enumerate() {
        f.validate()?;
        if findings[..i].iter().any(|g| g.kind == f.kind) {
            return Err(CorpusError::InvalidFinding(format!("duplicate kind {}", f.kind.name())));
        }
    }
    if findings.len() > 1 && findings.iter().any(|f| f.kind == Kind::NoFinding) {
        return Err(CorpusError::InvalidFinding("no_finding combined with other findings".into()));
    }
    Ok(())
}

pub fn has_kind(findings: &[Finding], kind: Kind) -> Option<&Finding> {
    findings.iter().find(|f| f.kind == kind)
}
