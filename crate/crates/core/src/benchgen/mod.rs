//! Benchmark construction: prompts, generators, and mixing synthetic images
//! into the unlabeled pool.

pub mod generator;
pub mod mix;
pub mod prompts;
pub mod render;
pub mod toy;

pub use generator::{GenerationRequest, GeneratorAdapter, ProceduralConfig, ProceduralGenerator, StyleParams};
pub use mix::{build_benchmark, mix_benchmark, synthesize_pool, synthetic_count, BuildOptions, MixPlan, MixedBenchmark, PoolEntry};
pub use prompts::{build_prompt_set, PromptSource, TemplateSource};
pub use toy::{make_toy, ToyConfig};
