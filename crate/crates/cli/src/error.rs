use flexti2v_core::Error;

/// A failed CLI invocation, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Engine(String),
    #[error("{0}")]
    Transport(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Engine(_) => 3,
            Failure::Transport(_) => 4,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config error",
            Failure::Engine(_) => "engine error",
            Failure::Transport(_) => "transport failure",
        }
    }

    /// Classifies an error raised while the engine or estimator is running.
    pub fn engine(err: Error) -> Self {
        if err.is_transport() {
            Failure::Transport(err.to_string())
        } else if matches!(err.root(), Error::Config(_)) {
            Failure::Config(err.to_string())
        } else {
            Failure::Engine(err.to_string())
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "status": self.status(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}
