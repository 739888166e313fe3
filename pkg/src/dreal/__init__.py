"""Reinforced attention learning: attention actors, recurrent critics and bypass rewards
for residual image classifiers."""
from .actors import (AttentionAction, cbam_channel_attention, channel_attention, mean_substitute,
                     spatial_attention, style_attention)
from .backbone import Network, Prediction, build_network, extract, forward, parameter_groups, recalibrate
from .config import (ConfigError, DatasetConfig, ExperimentConfig, NetworkConfig, RewardConfig,
                     StageSpec, TrainConfig, load_config)
from .critic import CriticState, RecurrentCritic, critic_param_count, critic_step, q_value, reduce_state
from .reward import bypass_forward, compute_reward, select_bypass_blocks
from .trainer import (classification_loss, make_optimizers, quality_loss, regression_loss, train,
                      train_step)

__version__ = "0.1.0"
