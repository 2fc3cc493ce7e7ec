//! Process exit codes and the error type that carries them.
//!
//! | code | meaning                                                    |
//! |------|------------------------------------------------------------|
//! | 0    | run complete, every requested check passed                 |
//! | 1    | internal numerical failure                                 |
//! | 2    | usage: bad flags, malformed stage list or grid string      |
//! | 3    | configuration: unknown scenario, unreadable or invalid file, check not defined for the scenario |
//! | 4    | validation stage found the model or claim inconsistent     |
//! | 5    | stage ordering: a stage ran without its required producer  |
//! | 6    | a check ran to completion and failed its threshold         |
//! | 7    | output directory or artifact not writable                  |

use rdhedge_core::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_DEPENDENCY: i32 = 5;
pub const EXIT_CHECK_FAILED: i32 = 6;
pub const EXIT_IO: i32 = 7;

#[derive(Debug)]
pub struct CliError {
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(exit_code: i32, message: impl Into<String>) -> Self {
        CliError {
            exit_code,
            message: message.into(),
        }
    }

    /// Wrap a core error, mapping its category onto the exit-code table:
    /// definitional problems are configuration errors, argument misuse is
    /// usage, I/O is I/O, and everything numerical is internal.
    pub fn from_core(context: &str, e: CoreError) -> Self {
        let code = match &e {
            CoreError::Config(_) | CoreError::ModelDefinition(_) => EXIT_CONFIG,
            CoreError::Usage(_) => EXIT_USAGE,
            CoreError::Io(_) => EXIT_IO,
            _ => EXIT_INTERNAL,
        };
        CliError::new(code, format!("{context}: {e}"))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}
