//! Doc-tests for the guide. Each module includes one chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/taxonomy.md")]
pub mod taxonomy {}

#[doc = include_str!("../../../book/src/retrieval.md")]
pub mod retrieval {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}

#[doc = include_str!("../../../book/src/diagnosis.md")]
pub mod diagnosis {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/builder.md")]
pub mod builder {}

#[doc = include_str!("../../../book/src/http.md")]
pub mod http {}

#[doc = include_str!("../../../book/src/fixtures.md")]
pub mod fixtures {}
