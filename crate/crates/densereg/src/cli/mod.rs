//! Batch command-line front end. Every command is deterministic given its
//! config and validates the full config before touching the filesystem.
//!
//! Exit codes: 0 ok, 1 usage/config error, 2 runtime error, 3 verification
//! failure.

mod commands;
mod config;
mod dataset;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_gradcheck, cmd_infer, cmd_synth, cmd_train, eval_fields,
    infer_fields, EvalSettings, Normalizer,
};
pub use config::{load_config, thread_count, RunConfig};
pub use dataset::{
    image_to_tensor, load_sample, load_train_split, read_manifest, write_manifest, LoadedSample,
    ManifestRow,
};

use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

const USAGE: &str = "\
usage: densereg <command> [--config PATH] [--key value ...]

commands:
  synth      generate a synthetic dataset (images, fields, landmarks, manifests)
  train      train a network on a synth dataset
  infer      run a checkpoint over a split, writing predicted fields + previews
  eval       score predicted fields against ground truth
  gradcheck  finite-difference verification of all backward passes
  ablate     train/eval over a list of K values in both decode modes

common keys: out, seed; see each command's rejected-key message for its full
vocabulary. DENSEREG_THREADS overrides the worker pool size.
";

/// Dispatches a command line (without the program name) and returns the
/// process exit code.
pub fn run(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return EXIT_USAGE;
    };
    let cfg = match load_config(&args[1..]) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let outcome = match command.as_str() {
        "synth" => cmd_synth(&cfg),
        "train" => cmd_train(&cfg).map(|_| EXIT_OK),
        "infer" => cmd_infer(&cfg),
        "eval" => cmd_eval(&cfg).map(|_| EXIT_OK),
        "gradcheck" => cmd_gradcheck(&cfg),
        "ablate" => cmd_ablate(&cfg),
        other => {
            eprintln!("error: unknown command {other:?}\n{USAGE}");
            return EXIT_USAGE;
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
