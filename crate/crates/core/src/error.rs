use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no simple connected {d}-regular graph on {n} nodes after {attempts} attempts")]
    GraphGeneration { n: usize, d: usize, attempts: usize },

    #[error("n = {n} exceeds the exact-oracle cap of {cap}")]
    OracleCap { n: usize, cap: usize },

    #[error("honest core has {size} nodes, fewer than n/2 = {half}")]
    CoreTooSmall { size: usize, half: usize },

    #[error("walk did not reach 1/n^3 mixing within {0} steps")]
    NotMixing(usize),

    #[error("round budget of {0} rounds exhausted")]
    BudgetExhausted(u64),

    #[error("byzantine node {from} tried to send to non-neighbor {to}")]
    NotAnEdge { from: u32, to: u32 },

    #[error("node {0} is not byzantine; only byzantine nodes may be driven by the adversary")]
    NotByzantine(u32),

    #[error("malformed graph file: {0}")]
    GraphFormat(String),

    #[error("malformed wire record: {0}")]
    Wire(String),

    #[error("transcript has no data for this query: {0}")]
    Transcript(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
