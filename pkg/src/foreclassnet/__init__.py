"""Joint forecasting and classification of univariate time series."""

from .adversarial import AdversarialProtocol, AttackConfig, fgsm
from .config import DataConfig, RunConfig, load_config, preset
from .data import Dataset, build_scenario, corrupt_labels, simulate_arma, smote, split
from .evaluation import metrics, model_saliency
from .network import ForeClassNet, ForeClassNetConfig, LossConfig, joint_loss, predict_mc
from .persistence import load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__all__ = [
    "AdversarialProtocol", "AttackConfig", "DataConfig", "Dataset", "ForeClassNet", "ForeClassNetConfig",
    "LossConfig", "RunConfig", "TrainConfig", "build_scenario", "corrupt_labels", "fgsm", "joint_loss",
    "load_checkpoint", "load_config", "metrics", "model_saliency", "predict_mc", "preset", "save_checkpoint",
    "simulate_arma", "smote", "split", "train",
]
