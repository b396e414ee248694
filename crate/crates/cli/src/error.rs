//! Exit classes and the machine-readable error record.

use recurlab::builders::BuildError;
use recurlab::interval::IntervalError;
use recurlab::overrec::OverRecError;
use recurlab::recurrence::RecurrenceError;
use recurlab::towerplex::TowerplexError;
use recurlab::towers::TowerError;
use recurlab::MapError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_PRECONDITION: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;
pub const EXIT_STAGE_EXHAUSTION: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Precondition,
    Verification,
    StageExhaustion,
}

impl ErrorClass {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Precondition => EXIT_PRECONDITION,
            ErrorClass::Verification => EXIT_VERIFICATION,
            ErrorClass::StageExhaustion => EXIT_STAGE_EXHAUSTION,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Precondition => "precondition",
            ErrorClass::Verification => "verification",
            ErrorClass::StageExhaustion => "stage-exhaustion",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliError {
    pub class: ErrorClass,
    pub kind: String,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn new(class: ErrorClass, kind: &str, message: impl Into<String>) -> Self {
        CliError { class, kind: kind.to_string(), message: message.into() }
    }

    pub fn precondition(kind: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Precondition, kind, message)
    }

    pub fn io(context: &str, e: std::io::Error) -> Self {
        Self::precondition("Io", format!("{context}: {e}"))
    }

    pub fn exit_code(&self) -> u8 {
        self.class.exit_code()
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "status: error\nexit_code: {}\nerror.class: {}\nerror.kind: {}\nerror.message: {}\n",
            self.exit_code(),
            self.class.name(),
            self.kind,
            self.message.replace('\n', " ")
        )
    }
}

/// Variant name from the derived `Debug` form.
fn variant<E: std::fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        CliError::new(ErrorClass::Precondition, &variant(&e), e.to_string())
    }
}

impl From<IntervalError> for CliError {
    fn from(e: IntervalError) -> Self {
        CliError::new(ErrorClass::Precondition, &variant(&e), e.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        let class = match e {
            BuildError::StageTooLarge { .. } => ErrorClass::StageExhaustion,
            _ => ErrorClass::Precondition,
        };
        CliError::new(class, &variant(&e), e.to_string())
    }
}

impl From<RecurrenceError> for CliError {
    fn from(e: RecurrenceError) -> Self {
        let class = match e {
            RecurrenceError::PartiallyUndefined { .. } => ErrorClass::StageExhaustion,
            RecurrenceError::Map(m) => return m.into(),
            _ => ErrorClass::Precondition,
        };
        CliError::new(class, &variant(&e), e.to_string())
    }
}

impl From<TowerError> for CliError {
    fn from(e: TowerError) -> Self {
        let class = match e {
            TowerError::Map(m) => return m.into(),
            _ => ErrorClass::StageExhaustion,
        };
        CliError::new(class, &variant(&e), e.to_string())
    }
}

impl From<OverRecError> for CliError {
    fn from(e: OverRecError) -> Self {
        let class = match &e {
            OverRecError::Recurrence(r) => return r.clone().into(),
            OverRecError::Build(b) => return b.clone().into(),
            _ if e.is_stage_exhaustion() => ErrorClass::StageExhaustion,
            OverRecError::BadParameter(_) => ErrorClass::Precondition,
            _ => ErrorClass::Verification,
        };
        CliError::new(class, &variant(&e), e.to_string())
    }
}

impl From<TowerplexError> for CliError {
    fn from(e: TowerplexError) -> Self {
        let class = match &e {
            TowerplexError::Map(m) => return m.clone().into(),
            TowerplexError::Coverage { .. } | TowerplexError::CoverageUnattainable { .. } | TowerplexError::WindowExhausted(_) => {
                ErrorClass::StageExhaustion
            }
            TowerplexError::DegenerateScale(_) | TowerplexError::HypothesisUnmet(_) | TowerplexError::BadParameter(_) => {
                ErrorClass::Precondition
            }
            _ => ErrorClass::Verification,
        };
        CliError::new(class, &variant(&e), e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        let e: CliError = OverRecError::NotFoundWithinStage {
            k: 1,
            window: 4,
            above: 0,
            reach: 10,
            best_deviation: "1".into(),
            tolerance: "1/17".into(),
        }
        .into();
        assert_eq!((e.exit_code(), e.kind.as_str()), (4, "NotFoundWithinStage"));
        let e: CliError = OverRecError::MarginViolated { n: 3 }.into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = OverRecError::BadParameter("a".into()).into();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_text().contains("error.kind: BadParameter\n"));
    }
}
