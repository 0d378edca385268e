//! Edit-understanding pipeline: region prioritization graphs over annotated
//! image edits, a small multimodal transformer that answers yes/no and
//! explains why, retrieval and language-only baselines, and metrics.
//!
//! ```
//! use pelican::data::{BBox, EditLabel, Question, QuestionType, Region};
//! use pelican::geometry::OverlapConfig;
//! use pelican::graph::{prioritize, Priority};
//!
//! let b = |x1, y1, x2, y2| BBox::new(x1, y1, x2, y2).unwrap();
//! let regions = vec![
//!     Region::new(0, b(0.0, 0.0, 10.0, 10.0), true, EditLabel::None),
//!     Region::new(1, b(5.0, 5.0, 15.0, 15.0), false, EditLabel::Introduced),
//!     Region::new(2, b(50.0, 50.0, 60.0, 60.0), false, EditLabel::Altered),
//! ];
//! let question = Question {
//!     qtype: QuestionType::Intent,
//!     subject_index: None,
//!     text: QuestionType::Intent.question_text(None),
//! };
//! let (graph, priorities) = prioritize(&regions, &question, &OverlapConfig::default()).unwrap();
//! assert_eq!(graph.edges.len(), 1);
//! assert_eq!(priorities.get(1), Priority::Rank(1));
//! assert_eq!(priorities.get(2), Priority::Unreachable);
//! ```

pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod graph;
pub mod hash;
pub mod model;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/annotations.md")]
    mod annotations {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
