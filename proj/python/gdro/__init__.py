"""Group-level direct reward optimization on a 2-D rectified-flow task.

Thin bindings over the C++ core: loss functions, the compass task, rollout
stores and the end-to-end pipeline.
"""

from ._core import (
    ConfigError,
    ExperimentConfig,
    NonFiniteError,
    RolloutStore,
    SampleGroup,
    ShapeError,
    StoreFormatError,
    TrainingAborted,
    corrected_score,
    dpo_loss,
    euler_sample,
    evaluate_checkpoint,
    gdro_loss,
    hackable_reward,
    load_config,
    load_store,
    log_sum_exp,
    main,
    perturb,
    pl_likelihood,
    quality_score,
    rank_loss,
    read_metrics,
    run_pipeline,
    save_store,
    sector_reward,
    suffix_distribution,
    top1_ce_loss,
)

__version__ = "0.1.0"
