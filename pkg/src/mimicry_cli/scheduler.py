"""Plateau Learning-Rate Scheduler.

Counts consecutive epochs without a strictly better validation mean rho.
When the count reaches ``patience`` the learning rate is multiplied by
``factor`` and the count starts over.
"""

import math

from pydantic import BaseModel, ConfigDict, Field

from mimicry_cli.run_logger import get_logger

logger = get_logger(__name__)


class SchedulerState(BaseModel):
    """Plateau tracking state."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(3e-5, ge=0)
    best: float = Field(-math.inf, description="Best validation mean rho so far")
    epochs_since_improvement: int = Field(0, ge=0)
    patience: int = Field(10, gt=0)
    factor: float = Field(0.5, gt=0, lt=1)
    halvings: int = Field(0, ge=0)

    def below_floor(self, floor: float) -> bool:
        """True once a reduction has taken lr below ``floor``; the starting lr is never checked."""
        return self.halvings > 0 and self.lr < floor


def scheduler_update(state: SchedulerState, val_mean_rho: float) -> tuple[SchedulerState, float]:
    """Advance the scheduler by one epoch.

    Args:
        state: Current state
        val_mean_rho: This epoch's validation mean rho (NaN never improves)

    Returns:
        (new state, learning rate for the next epoch)
    """
    if val_mean_rho > state.best:
        new = state.model_copy(update={"best": float(val_mean_rho), "epochs_since_improvement": 0})
        return new, new.lr

    waited = state.epochs_since_improvement + 1
    if waited < state.patience:
        new = state.model_copy(update={"epochs_since_improvement": waited})
        return new, new.lr

    lr = state.lr * state.factor
    logger.info("Learning rate reduced", old_lr=state.lr, new_lr=lr, best_rho=state.best)
    new = state.model_copy(
        update={"lr": lr, "epochs_since_improvement": 0, "halvings": state.halvings + 1}
    )
    return new, lr
