//! Command-line pipeline: configuration, checkpoints, the synthetic
//! benchmark and the subcommands that tie the library stages together.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod synth;

use checkpoint::CheckpointError;
use commands::InputError;
use config::ConfigError;
use ctxppi_core::finetune::FinetuneError;
use ctxppi_core::kg::KgError;
use synth::SpecError;

/// 2 for usage and input problems, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let input = err.chain().any(|e| {
        e.is::<ConfigError>()
            || e.is::<InputError>()
            || e.is::<SpecError>()
            || e.is::<KgError>()
            || matches!(
                e.downcast_ref::<FinetuneError>(),
                Some(FinetuneError::Parse { .. })
            )
            || matches!(
                e.downcast_ref::<CheckpointError>(),
                Some(
                    CheckpointError::CorruptCheckpoint(_)
                        | CheckpointError::UnsupportedVersion { .. }
                        | CheckpointError::ResumeMismatch { .. }
                        | CheckpointError::Io { .. }
                )
            )
    });
    if input {
        2
    } else {
        1
    }
}
