"""Shared optimisation loop for every training stage."""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from src.numerics.optim import ParamStore, adam_step, ema_update
from src.numerics.tensor import Tensor
from src.utils.config import Config
from src.utils.error_handler import ConfigError
from src.utils.logger import logger, progress_record

StepFn = Callable[[int], Tuple[Tensor, Dict[str, float]]]
# (label, step, total steps, loss)
StepHook = Callable[[str, int, int, float], None]


@dataclass(frozen=True)
class TrainSettings:
    """Optimiser and bookkeeping settings of one stage."""

    steps: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    ema_decay: float = 0.998
    ema_every: int = 10
    use_ema: bool = False
    log_every: int = 10

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError(f"step count must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"BATCH_SIZE must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"LR must be > 0, got {self.lr}")

    @classmethod
    def from_config(cls, cfg: Config, steps: int, use_ema: bool = False) -> "TrainSettings":
        return cls(
            steps=steps,
            lr=cfg.lr,
            beta1=cfg.adam_beta1,
            beta2=cfg.adam_beta2,
            eps=cfg.adam_eps,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            ema_decay=cfg.ema_decay,
            ema_every=cfg.ema_every,
            use_ema=use_ema,
        )


@dataclass
class TrainLoop:
    """Run ``steps`` Adam updates of one parameter store.

    Each step calls ``step_fn(k)`` for a (loss, terms) pair, back-propagates,
    applies Adam and, when enabled, blends the EMA shadows. ``on_step`` is
    called after every update, for example to drive a progress bar.
    """

    store: ParamStore
    settings: TrainSettings
    label: str = "train"
    history: List[float] = field(default_factory=list)
    on_step: Optional[StepHook] = None

    def run(self, step_fn: StepFn) -> List[float]:
        """Execute the loop.

        Returns:
            Loss value of every step
        """
        s = self.settings
        if s.use_ema and not self.store.shadows:
            self.store.init_shadows()
        for k in range(1, s.steps + 1):
            self.store.zero_grad()
            loss, terms = step_fn(k)
            loss.backward()
            adam_step(self.store, self.store.grads(), s.lr, s.beta1, s.beta2, s.eps)
            self.store.global_step += 1
            if s.use_ema:
                ema_update(self.store, s.ema_decay, s.ema_every, self.store.global_step)
            value = loss.item()
            self.history.append(value)
            if self.on_step is not None:
                self.on_step(self.label, k, s.steps, value)
            if k == 1 or k == s.steps or k % s.log_every == 0:
                logger.info(f"[{self.label}] {progress_record(k, value, terms)}")
        return self.history
