use archetype_core::Error;

/// Exit code for a bad invocation, config, or missing input.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while computing or writing results.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// A pipeline stage failed; `stage` names it in the message.
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Stage { stage, source } => classify(stage, source),
        }
    }
}

/// Input and configuration problems are usage errors; numerical failures and
/// anything that goes wrong while writing are runtime errors.
fn classify(stage: &str, e: &Error) -> i32 {
    if stage == "write" {
        return EXIT_RUNTIME;
    }
    match e {
        Error::Diverged { .. } | Error::ModelCorrupt | Error::Evaluation(_) | Error::EmptyCluster(_) => EXIT_RUNTIME,
        _ => EXIT_USAGE,
    }
}

/// Tags a core error with the stage it came from.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for archetype_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        let usage = CliError::Usage("x".into());
        assert_eq!(usage.exit_code(), 2);
        let bad_k: archetype_core::Result<()> = Err(Error::Parameter("k".into()));
        assert_eq!(bad_k.stage("cluster").unwrap_err().exit_code(), 2);
        let diverged: archetype_core::Result<()> = Err(Error::Diverged { step: 3 });
        let e = diverged.stage("train").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().starts_with("train: "));
        let io: archetype_core::Result<()> = Err(Error::Parameter("disk".into()));
        assert_eq!(io.stage("write").unwrap_err().exit_code(), 1);
    }
}
