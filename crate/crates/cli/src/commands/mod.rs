pub mod atoms;
pub mod evaluate;
pub mod factory;
pub mod flow;
pub mod reward;
