"""Meta-learning core: tasks, the classifier, MAML training and artifacts."""
from .artifact import ArtifactCorruptError, ArtifactError, ArtifactVersionError, load_model, save_model
from .maml import (Adam, EarlyStopping, TrainConfig, TrainingError, TrainReport, TransferError, adapt_model,
                   inner_adapt, meta_gradient, train_maml, transfer_weights)
from .model import MlpModel, Params, forward, hvp, init_model, init_params, loss_and_grads
from .tasks import MetaDataset, Task, TaskConfig, TaskError, build_meta_dataset, sample_task

__all__ = [
    "Adam", "ArtifactCorruptError", "ArtifactError", "ArtifactVersionError", "EarlyStopping", "MetaDataset",
    "MlpModel", "Params", "Task", "TaskConfig", "TaskError", "TrainConfig", "TrainReport", "TrainingError",
    "TransferError", "adapt_model", "build_meta_dataset", "forward", "hvp", "init_model", "init_params",
    "inner_adapt", "load_model", "loss_and_grads", "meta_gradient", "sample_task", "save_model",
    "train_maml", "transfer_weights",
]
