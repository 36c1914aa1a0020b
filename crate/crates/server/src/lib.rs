//! HTTP service for conversational dashboard building, plus a mock
//! monitoring backend used for previews and tests.

pub mod api;
pub mod mock;
pub mod store;
