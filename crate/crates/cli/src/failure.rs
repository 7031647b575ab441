use std::fmt;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for failures of the tool itself (output writes, panics).
pub const EXIT_INTERNAL: i32 = 1;
/// Exit code for unusable input or arguments.
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => EXIT_INPUT,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one line: the context chain joined by ": ", skipping causes that
        // the previous message already quotes
        let e = match self {
            Failure::Input(e) | Failure::Internal(e) => e,
        };
        let mut parts: Vec<String> = Vec::new();
        for cause in e.chain() {
            let text = cause.to_string().replace('\n', " ");
            if !parts.last().is_some_and(|p| p.contains(&text)) {
                parts.push(text);
            }
        }
        f.write_str(&parts.join(": "))
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Tags a fallible value with the exit code its failure maps to.
pub trait Classify<T> {
    fn input(self) -> CliResult<T>;
    fn internal(self) -> CliResult<T>;
    fn input_with(self, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> CliResult<T> {
        self.map_err(|e| Failure::Input(e.into()))
    }

    fn internal(self) -> CliResult<T> {
        self.map_err(|e| Failure::Internal(e.into()))
    }

    fn input_with(self, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure::Input(e.into().context(context())))
    }
}

pub fn input_error(message: impl Into<String>) -> Failure {
    Failure::Input(anyhow::anyhow!(message.into()))
}
