import os
from dotenv import load_dotenv

from chameleon.core.errors import ConfigError

# Load environment variables
load_dotenv()


def env_threads() -> int:
    """Worker-thread cap from CHM_THREADS (default 1)."""
    raw = os.getenv("CHM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"CHM_THREADS must be an integer, got {raw!r}")


LOG_LEVEL = os.getenv("CHM_LOG_LEVEL", "INFO").upper()

# ================= PROTOCOL =================
# The experimental constants of the reference protocol. Every other preset is
# expressed as a set of overrides on top of this dict.
PROTOCOL = {
    # task sampling
    'shots_train': 10,              # instances per class in the adaptation block
    'shots_test': 10,               # instances per class in the evaluation block
    'train_instance_frac': 0.75,    # instances available to pretraining and meta-training
    'reserved_feature_frac': 0.2,   # Split mode: features restricted to test tasks
    'min_feature_frac': 0.4,        # sampled share of the training features (lower bound)
    'max_feature_frac': 0.6,        # sampled share of the training features (upper bound)
    'test_feature_quota': 0.2,      # Split mode: share of a test task's features that are unseen
    # reordering pretraining
    'pretrain_epochs': 4000,
    'pretrain_lr': 1e-4,
    'tasks_per_epoch': 1,
    # reptile
    'inner_lr': 1e-3,
    'meta_lr': 0.01,
    'inner_steps': 3,
    'meta_batch_size': 16,
    'meta_epochs': 20000,
    'eval_steps': 3,
    'inner_optimizer': 'adam',
    # evaluation
    'eval_tasks': 1600,
    'n_seeds': 5,
}

PRESETS = {
    'paper': {},
    'desk': {
        'meta_epochs': 2000,
        'pretrain_epochs': 1000,
        'eval_tasks': 200,
    },
}

# Alternative names accepted by --preset.
PRESET_ALIASES = {'full': 'paper'}

# Feature count above which the reference protocol stops admitting datasets.
MAX_RECOMMENDED_FEATURES = 33
# Minimum instances per class for admitted datasets.
MIN_CLASS_INSTANCES = 90
