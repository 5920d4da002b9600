# src/orchestration/training_engine.py
"""
Episodic training loop.

Each step samples a batch of episodes, differentiates the mean cross-entropy
through the whole model, clips the gradients and applies an Adam update at
the decayed learning rate. Every step appends one metrics row; checkpoints
are written periodically, on a kill-switch stop and at the end.
"""
import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from config import CHECKPOINT_NAME, METRICS_LOG_NAME, TRAINING_LOG_NAME, RunConfig, TrainConfig, config_to_dict
from core_services.dcc_model import DCCModel
from core_services.similarity_head import episode_loss
from core_services.tensor_core import backward, set_debug_nans
from data_services.dataset import IdentityDataset
from data_services.episodes import sample_episodes
from utils import storage_service
from utils.exceptions import DataError, InterruptedException, NumericalError, TrainingError
from utils.log_utils import attach_file_log, detach_file_log

logger = logging.getLogger(__name__)

__all__ = [
    "AdamOptimizer", "Checkpoint", "TrainingEngine", "TrainingResult",
    "clip_gradients", "gradient_norms", "lr_at",
]

CHECKPOINT_VERSION = 1


def lr_at(m: int, N: int, cfg: TrainConfig) -> float:
    """base · decay^(m/N); the exponent is floored per epoch when ``cfg.staircase`` is set."""
    if N < 1 or m < 0:
        raise ValueError(f"lr_at needs N ≥ 1 and m ≥ 0, got m={m}, N={N}")
    exponent = m // N if cfg.staircase else m / N
    return cfg.lr * cfg.decay ** exponent


def gradient_norms(grads: dict[str, np.ndarray]) -> dict[str, float]:
    norms = {}
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite gradient", parameter=name)
        norms[name] = float(np.sqrt(np.sum(grad * grad)))
    return norms


def clip_gradients(grads: dict[str, np.ndarray], threshold: float = 100.0,
                   mode: str = "sum_of_norms") -> tuple[dict[str, np.ndarray], float]:
    """Rescale every gradient by threshold/S when S exceeds the threshold; returns the grads and S.

    S is the sum of per-tensor L2 norms, or the L2 norm of all gradients together in ``global_norm`` mode.
    """
    norms = gradient_norms(grads)
    if mode == "global_norm":
        total = float(np.sqrt(sum(n * n for n in norms.values())))
    else:
        total = float(sum(norms.values()))
    if total <= threshold:
        return dict(grads), total
    factor = threshold / total
    return {name: grad * factor for name, grad in grads.items()}, total


class AdamOptimizer:
    def __init__(self, names, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self._names = list(names)

    def step(self, params: dict, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        for name in self._names:
            grad = grads[name]
            m = self.m.get(name, np.zeros_like(grad))
            v = self.v.get(name, np.zeros_like(grad))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            params[name].data = params[name].data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self._names:
            if name in self.m:
                out[f"adam.m/{name}"] = self.m[name]
                out[f"adam.v/{name}"] = self.v[name]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        for name in self._names:
            if f"adam.m/{name}" in tensors:
                self.m[name] = np.array(tensors[f"adam.m/{name}"])
                self.v[name] = np.array(tensors[f"adam.v/{name}"])


@dataclass
class Checkpoint:
    step: int
    parameters: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    rng_state: dict | None = None
    config: dict | None = None
    epoch: int = 0
    version: int = CHECKPOINT_VERSION

    def save(self, path: str) -> str:
        tensors = {f"param/{name}": value for name, value in self.parameters.items()}
        tensors.update(self.optimizer)
        meta = {"version": self.version, "step": self.step, "adam_t": self.adam_t, "epoch": self.epoch,
                "rng_state": self.rng_state, "config": self.config}
        return storage_service.write_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        tensors, meta = storage_service.read_checkpoint(path)
        parameters = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
        optimizer = {k: v for k, v in tensors.items() if k.startswith("adam.")}
        return cls(step=int(meta.get("step", 0)), parameters=parameters, optimizer=optimizer,
                   adam_t=int(meta.get("adam_t", 0)), rng_state=meta.get("rng_state"),
                   config=meta.get("config"), epoch=int(meta.get("epoch", 0)),
                   version=int(meta.get("version", CHECKPOINT_VERSION)))


@dataclass
class TrainingResult:
    checkpoint_path: str
    metrics_path: str
    steps: int
    final_loss: float
    final_accuracy: float
    epochs_run: int
    stopped_early: bool = False


class TrainingEngine:
    """Owns the model, the optimizer and the run directory of one training run."""

    def __init__(self, cfg: RunConfig, dataset: IdentityDataset, run_dir: str,
                 kill_switch: threading.Event | None = None, model: DCCModel | None = None,
                 show_progress: bool = True):
        self.cfg = cfg
        self.dataset = dataset
        self.run_dir = run_dir
        self.kill_switch = kill_switch or threading.Event()
        self.show_progress = show_progress
        self.model = model or DCCModel.initialize(cfg, np.random.default_rng([cfg.train.seed, 0]))
        self.optimizer = AdamOptimizer(self.model.parameters(), cfg.train.beta1, cfg.train.beta2, cfg.train.eps)
        self.rng = np.random.default_rng([cfg.train.seed, 1])
        self.step_count = 0
        self.epoch = 0

        self.checkpoint_path = os.path.join(run_dir, CHECKPOINT_NAME)
        self.metrics_path = os.path.join(run_dir, METRICS_LOG_NAME)
        self.log_path = os.path.join(run_dir, TRAINING_LOG_NAME)
        self.last_good_checkpoint: str | None = None

        self.check_dataset(cfg, dataset)
        print("✅ Training engine initialized.")

    @staticmethod
    def check_dataset(cfg: RunConfig, dataset: IdentityDataset) -> None:
        """Raise DataError unless the dataset can fill every episode of ``cfg.train.classes``."""
        eligible = len(dataset.multi_view_identities())
        if eligible < cfg.train.classes:
            raise DataError(f"training needs {cfg.train.classes} identities with two or more camera views, "
                            f"dataset has {eligible}")

    # --- checkpoints -------------------------------------------------------------

    def snapshot(self) -> Checkpoint:
        return Checkpoint(step=self.step_count, parameters=self.model.state_dict(),
                          optimizer=self.optimizer.state(), adam_t=self.optimizer.t,
                          rng_state=self.rng.bit_generator.state, config=config_to_dict(self.cfg),
                          epoch=self.epoch)

    def save_checkpoint(self) -> str:
        self.last_good_checkpoint = self.snapshot().save(self.checkpoint_path)
        return self.last_good_checkpoint

    def resume(self, path: str) -> None:
        checkpoint = Checkpoint.load(path)
        self.model.load_state_dict(checkpoint.parameters)
        self.optimizer.load_state(checkpoint.optimizer, checkpoint.adam_t)
        if checkpoint.rng_state:
            self.rng.bit_generator.state = checkpoint.rng_state
        self.step_count, self.epoch = checkpoint.step, checkpoint.epoch
        self.last_good_checkpoint = path
        logger.info("resumed from %s at step %d (epoch %d)", path, self.step_count, self.epoch)

    # --- loop --------------------------------------------------------------------

    def train_step(self) -> tuple[float, float, float]:
        train = self.cfg.train
        episodes = sample_episodes(self.dataset, train.classes, train.batch_size, self.rng)
        try:
            outcome = episode_loss(self.model, episodes, rng=self.rng)
        except NumericalError as e:
            raise TrainingError(f"{e} at step {self.step_count}",
                                checkpoint_path=self.last_good_checkpoint) from e
        loss = outcome.loss.item()
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {self.step_count}",
                                checkpoint_path=self.last_good_checkpoint)

        params = self.model.parameters()
        try:
            leaf_grads = backward(None, outcome.loss)
        except NumericalError as e:
            raise TrainingError(f"{e} in the backward pass at step {self.step_count}",
                                checkpoint_path=self.last_good_checkpoint) from e
        grads = {name: leaf_grads.get(tensor, np.zeros_like(tensor.data)) for name, tensor in params.items()}
        try:
            grads, _ = clip_gradients(grads, train.clip, train.clip_mode)
        except TrainingError as e:
            raise TrainingError("non-finite gradient", parameter=e.parameter,
                                checkpoint_path=self.last_good_checkpoint) from None

        lr = lr_at(self.step_count, train.steps_per_epoch, train)
        self.optimizer.step(params, grads, lr)
        for tensor in params.values():
            tensor.zero_grad()
        self.step_count += 1
        return loss, outcome.accuracy, lr

    def train(self) -> TrainingResult:
        train = self.cfg.train
        set_debug_nans(self.cfg.debug_nans)
        if self.step_count == 0 and os.path.exists(self.metrics_path):
            os.remove(self.metrics_path)
        handler = attach_file_log(self.log_path)
        logger.info("🚀 Starting training: %d epochs × %d steps, %d classes per episode, fusion=%s",
                    train.epochs, train.steps_per_epoch, train.classes, self.cfg.head.fusion)

        best_loss, stale_epochs, stopped_early = np.inf, 0, False
        loss = accuracy = float("nan")
        total = train.epochs * train.steps_per_epoch
        try:
            with tqdm(total=total, initial=self.step_count, desc="training", disable=not self.show_progress) as bar:
                while self.epoch < train.epochs:
                    epoch_losses = []
                    while self.step_count < (self.epoch + 1) * train.steps_per_epoch:
                        if self.kill_switch.is_set():
                            path = self.save_checkpoint()
                            logger.info("⏹️  Training stopped by request at step %d", self.step_count)
                            raise InterruptedException(f"training stopped at step {self.step_count}; checkpoint {path}")
                        loss, accuracy, lr = self.train_step()
                        epoch_losses.append(loss)
                        storage_service.append_metrics(self.metrics_path, [(self.step_count, loss, accuracy, lr)])
                        bar.update(1)
                        bar.set_postfix(loss=f"{loss:.4f}", acc=f"{accuracy:.2f}")
                        if self.step_count % train.checkpoint_every == 0:
                            self.save_checkpoint()
                    self.epoch += 1

                    if not epoch_losses:
                        continue
                    epoch_loss = float(np.mean(epoch_losses))
                    logger.info("   - epoch %d: mean loss %.4f, last accuracy %.3f", self.epoch, epoch_loss, accuracy)
                    if epoch_loss < best_loss - 1e-6:
                        best_loss, stale_epochs = epoch_loss, 0
                    else:
                        stale_epochs += 1
                    if train.early_stop_patience and stale_epochs >= train.early_stop_patience:
                        logger.info("   - loss plateaued for %d epochs, stopping early", stale_epochs)
                        stopped_early = True
                        break

            path = self.save_checkpoint()
            logger.info("✅ Training finished after %d steps (loss %.4f, accuracy %.3f)",
                        self.step_count, loss, accuracy)
        except TrainingError as e:
            logger.error(f"❌ Training aborted: {e}")
            raise
        finally:
            detach_file_log(handler)

        return TrainingResult(checkpoint_path=path, metrics_path=self.metrics_path, steps=self.step_count,
                              final_loss=loss, final_accuracy=accuracy, epochs_run=self.epoch,
                              stopped_early=stopped_early)
