//! Left- and right-hand sides of the maximal inequalities, experiment
//! configuration, reports and the lemma suites.

pub mod fit;
pub mod rhs;
pub mod config;
pub mod lemmas;
pub mod report;
pub mod run;
