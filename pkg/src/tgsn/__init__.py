"""EEG multi-band features, diffusion augmentation, and a gated
spatiotemporal attention network for joint dementia classification and MMSE
regression."""

from .data import (
    DatasetSplit,
    MmseLink,
    RawRecording,
    SynthConfig,
    load_recording,
    make_folds,
    save_recording,
    synthesize_dataset,
)
from .features import (
    BandSpec,
    FeatureConfig,
    FeatureTensor,
    extract_features,
    hjorth_complexity,
    hjorth_mobility,
    load_feature_tensor,
    preprocess,
    relative_spectral_density,
    sample_entropy,
    save_feature_tensor,
    welch_band_power,
)
from .diffusion import (
    DiffusionConfig,
    DiffusionSchedule,
    augment_dataset,
    make_schedule,
    p_sample_loop,
    pretrain_finetune,
    q_sample,
    train_denoiser,
)
from .gsa import GsaConfig, GsaStackParams, conv_ffn, gsa_block, gsa_stack, gsta_unit
from .tgq import TaskQueryParams, TgqConfig, attention_map, tgq_forward
from .training import (
    ExperimentConfig,
    LossWeightConfig,
    MetricsReport,
    TaskWeightState,
    TrainConfig,
    ablation_grid,
    compute_metrics,
    run_cv,
    total_loss,
    train_fold,
    update_task_weights,
)
from .analysis import MmdConfig, export_embedding_matrix, mmd

__version__ = "0.1.0"
