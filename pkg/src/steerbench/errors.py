"""Exception types shared across the workbench."""


class ConfigError(ValueError):
    """An invalid configuration value (bad block tuple, negative epsilon, ...)."""


class StructuralError(ValueError):
    """Shape or wiring mismatch between tensors, layers, or report cells."""


class EmptyDatasetError(ValueError):
    """A manifest or split yielded no usable records."""


class DomainError(ValueError):
    """An argument outside a formula's mathematical domain (e.g. baseline MSE <= 0)."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries the epoch and batch where it happened."""

    def __init__(self, epoch: int, batch: int, loss_value: float):
        self.epoch = epoch
        self.batch = batch
        self.loss_value = loss_value
        super().__init__(
            f"non-finite training loss {loss_value!r} at epoch {epoch}, batch {batch}"
        )
