//! Error categories and their exit codes.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numerical => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Numerical => "numerical",
        }
    }
}

/// An error raised by the CLI itself with an explicit category.
#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    CliError {
        kind: Kind::Usage,
        message: message.into(),
    }
    .into()
}

pub fn data(message: impl Into<String>) -> anyhow::Error {
    CliError {
        kind: Kind::Data,
        message: message.into(),
    }
    .into()
}

/// First categorized cause in the chain; anything else is a data error.
pub fn classify(err: &anyhow::Error) -> Kind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.kind;
        }
        if let Some(e) = cause.downcast_ref::<tribosign_core::Error>() {
            return match e.kind() {
                tribosign_core::ErrorKind::Usage => Kind::Usage,
                tribosign_core::ErrorKind::Data => Kind::Data,
                tribosign_core::ErrorKind::Numerical => Kind::Numerical,
            };
        }
    }
    Kind::Data
}

/// The whole cause chain on one line, skipping causes a message already
/// spells out.
pub fn one_line(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for c in err.chain() {
        let text = c.to_string().replace('\n', " ");
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}
