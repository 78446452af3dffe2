//! Failures reported by the command-line driver, each tied to a pipeline
//! stage and an exit code.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Io,
    Generate,
    Detect,
    Init,
    Optimize,
    Evaluate,
    Render,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
    #[serde(skip)]
    pub exit_code: i32,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DETECT: i32 = 4;
pub const EXIT_OPTIMIZE: i32 = 5;

/// Variant name of an error enum, from its `Debug` output.
fn variant_name<E: fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(['(', ' ', '{']).next().unwrap_or("Error").to_string()
}

impl CliError {
    pub fn new(stage: Stage, kind: &str, message: &str) -> Self {
        let exit_code = match stage {
            Stage::Config => EXIT_CONFIG,
            Stage::Io => EXIT_IO,
            Stage::Detect => EXIT_DETECT,
            Stage::Init | Stage::Optimize => EXIT_OPTIMIZE,
            Stage::Generate | Stage::Evaluate | Stage::Render => EXIT_CONFIG,
        };
        Self { stage, kind: kind.to_string(), message: message.to_string(), exit_code }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(Stage::Config, "InvalidConfig", &message.to_string())
    }

    /// I/O failure while serving `stage`; always exits with the I/O code.
    pub fn io(stage: Stage, path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: "Io".into(),
            message: format!("{}: {e}", path.display()),
            exit_code: EXIT_IO,
        }
    }

    pub fn detect(e: &jointcalib::detect::DetectError) -> Self {
        Self::new(Stage::Detect, &variant_name(e), &e.to_string())
    }

    pub fn init(e: &jointcalib::init::InitError) -> Self {
        Self::new(Stage::Init, &variant_name(e), &e.to_string())
    }

    pub fn optimize(e: &jointcalib::optimize::OptimizeError) -> Self {
        Self::new(Stage::Optimize, &variant_name(e), &e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} stage failed ({}): {}", self.stage, self.kind, self.message)
    }
}

impl std::error::Error for CliError {}
