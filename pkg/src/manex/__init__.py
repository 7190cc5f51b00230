"""manex: on-manifold exploration for chunked-action diffusion policies.

A desk-scale library: a numpy MLP substrate with reverse-mode gradients, a
chunked-action diffusion policy (DDIM sampling), a latent-bottleneck
exploration plug-in, latent analytics (SNR spectrum, farthest point sampling,
jerk, Pass@k), deterministic planar environments with scripted experts,
multi-round self-improvement, and an HTTP steering service.
"""

from .analysis import (
    Proposal,
    ProposalSet,
    SnrSpectrum,
    average_jerk,
    compute_snr,
    effective_dimensions,
    farthest_point_sampling,
    pass_at_k,
    propose_along_dimension,
)
from .diffusion import NoiseSchedule, add_noise, ddim_step, ddim_step_list, make_schedule, time_embedding
from .envs import (
    EnvConfig,
    EnvState,
    PlanarEnv,
    TrajectoryRecord,
    expert_action,
    expert_side,
    generate_demos,
    load_dataset,
    make_env_config,
    run_expert_episode,
    save_dataset,
    scripted_expert,
)
from .errors import ConfigError, DomainError, NumericError, ShapeError, StateError
from .improve import (
    EVAL_SEED_BASE,
    ImprovementRoundReport,
    RoundPlan,
    aggregate_dataset,
    collect_rollouts,
    embedding_std,
    evaluate,
    filter_successes,
    plan_chunk,
    run_episode,
    run_round,
    run_rounds,
)
from .config import ExperimentConfig, Paths, config_from_dict, load_config
from .nets import AdamW, DenseNet, kl_diag_gaussian_to_standard, reparam_sample
from .policy import DiffusionPolicy, Normalizer, PolicyConfig
from .rng import RngStream
from .service import SteeringService, make_server
from .trainer import PolicyBundle, TrainConfig, build_windows, train
from .vib import LatentGaussian, VibConfig, VibPlugin, joint_train_step

__version__ = "0.1.0"
