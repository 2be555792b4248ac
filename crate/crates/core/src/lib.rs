//! Intent-driven rApp composition for the O-RAN near-RT RIC.
//!
//! Operator intents are turned into pipelines of xApps by a set of LLM
//! agents. The crate provides the domain model ([`model`]), conflict
//! detection ([`conflict`]), an exact reference solver ([`oracle`]),
//! document retrieval ([`retrieval`]), a memory of past attempts
//! ([`memory`]), the agents and their loop ([`agents`]) and a scenario
//! harness with deterministic mock transports ([`harness`]).

pub mod agents;
pub mod conflict;
pub mod harness;
pub mod memory;
pub mod model;
pub mod oracle;
pub mod retrieval;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/conflicts.md")]
    mod conflicts {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
