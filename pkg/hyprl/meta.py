from typing import Any, Dict, List, Tuple

# Order of the metafeature vector, shared by metadata files and checkpoints
METAFEATURE_NAMES: Tuple[str, ...] = (
    "num_instances",
    "log_num_instances",
    "num_features",
    "log_num_features",
    "dimensionality",
    "log_dimensionality",
    "inv_dimensionality",
    "log_inv_dimensionality",
    "kurtosis_min",
    "kurtosis_max",
    "kurtosis_mean",
    "kurtosis_std",
    "skewness_min",
    "skewness_max",
    "skewness_mean",
    "skewness_std",
)
N_METAFEATURES = len(METAFEATURE_NAMES)

# Hyperparameter grid of the neural network meta-dataset. Names follow the
# original table, including the two overlapping size hyperparameters.
NNMETA_SCHEMA: List[Tuple[str, str, Tuple[Any, ...]]] = [
    ("activation_function", "one-hot", ("ReLU", "leakyReLU", "tanh")),
    ("number_of_neurons", "scalar", (5, 10, 20)),
    ("number_of_hidden_units", "scalar", (10, 20, 50)),
    ("optimizer", "one-hot", ("Adam", "AdaDelta", "AdaGrad")),
    ("number_of_epochs", "scalar", (10, 100)),
    ("dropout", "scalar", (0, 0.2, 0.4)),
    ("lp_regularization", "one-hot", ("L1", "L2")),
    ("regularization_constant", "scalar", (0.01, 0.001, 0.0001)),
]
FULL_NNMETA = "full-nnmeta"

METHODS: Tuple[str, ...] = ("random", "i-gp", "spearmint", "hyp-rl")

# Controller defaults, picked from the limited grid searched for the policy
CONTROLLER_DEFAULTS: Dict[str, Any] = {
    "gamma": 0.9,
    "target_update": 500,
    "buffer_size": 10000,
    "episodes_per_dataset": 100,
    "budget": 10,
    "train_every": 4,
    "lr": 0.001,
    "batch_size": 32,
    "epsilon_start": 1.0,
    "epsilon_end": 0.1,
    "n_hidden": 32,
    "n_layer": 64,
}

SYNTH_DEFAULTS: Dict[str, Any] = {
    "n_latent": 8,
    "noise_std": 0.01,
    "n_folds": 5,
    "n_splits": 5,
}

SMBO_N_INIT = 3
GP_FIT_ITERATIONS = 50
GP_NOISE_FLOOR = 1e-6

SEED_ENV = "HYPRL_SEED"
