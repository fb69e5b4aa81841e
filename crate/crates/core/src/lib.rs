pub mod adversary;
pub mod containers;
pub mod engine;
pub mod geometry;
pub mod grouping;
pub mod ledger;
pub mod lp;
pub mod narrow;
pub mod num;
pub mod oracle;
pub mod plan;
pub mod runner;
pub mod shift;
pub mod snapshot;
pub mod svg;
pub mod validate;
