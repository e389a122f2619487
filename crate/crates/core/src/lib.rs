// SPDX-License-Identifier: Apache-2.0

//! Change localization over SystemVerilog designs: block extraction, design
//! graphs, retrieval encoders and their training, evaluation, and mining of
//! change instances from version history.

pub mod corpus;
pub mod encoders;
pub mod graph;
pub mod miner;
pub mod par;
pub mod retrieval;
pub mod sv;
pub mod synth;
pub mod training;
