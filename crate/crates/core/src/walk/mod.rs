//! Byzantine-resilient capped random walks.

mod audit;
mod oracle;
mod protocol;
mod token;

pub use audit::CapAudit;
pub use oracle::{classify_tokens, endpoint_distribution_test, EndpointTest, Instance, TokenClassification, WalkOracle, NO_ENDPOINT};
pub use protocol::{Supply, TokenTemplate, WalkNode, WalkPathTable, WalkProtocol, WalkRecord, NO_PORT};
pub use token::{instance_creator, instance_id, Shadow, Token, TokenKey, NO_INSTANCE, WIRE_LEN};
