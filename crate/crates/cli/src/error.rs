use std::fmt;

/// Process exit codes. Usage errors (2) come from the argument parser.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const RUNTIME: i32 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// A command ran but its result is outside the accepted bound.
    CheckFailed,
    /// Unreadable or invalid input files.
    Input,
    Config,
    /// Bind failures, backend or storage errors, write failures.
    Runtime,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::CheckFailed => exit::CHECK_FAILED,
            Self::Input => exit::INPUT,
            Self::Config => exit::CONFIG,
            Self::Runtime => exit::RUNTIME,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::CheckFailed => "check_failed",
            Self::Input => "input",
            Self::Config => "config",
            Self::Runtime => "runtime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(Category::Input, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(Category::Runtime, message)
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self::new(Category::CheckFailed, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.category.name(), self.message)
    }
}

impl std::error::Error for CliError {}
