//! Compiles a fitted collective-variable pipeline into a single closed-form
//! expression and provides an independent parser/evaluator/differentiator
//! to check it against direct evaluation.

mod ast;
mod compile;
mod parser;
mod pipeline;

pub use ast::{format_literal, EvalFlags, Expr, Func, Node, NodeId};
pub use compile::{compile, CvExpression};
pub use parser::parse;
pub use pipeline::{fit_pipeline, CvPipeline, FittedPipeline, PipelineConfig, TicaStage, TicaStageConfig};
