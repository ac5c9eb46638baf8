"""differentiable predictors with exact per-sample gradients."""

from abc import ABC, abstractmethod
from typing import Callable

import numpy as np
import numpy.typing as npt
from scipy import special

from dpcfl.core.mathcore import ParamVector
from dpcfl.core.models import Dataset
from dpcfl.errors import ParameterError
from dpcfl.registry import Registry

Array = npt.NDArray[np.float64]


class Predictor(ABC):
    """softmax classifier h(x, theta) trained with cross-entropy."""

    d: int
    C: int

    @abstractmethod
    def param_dim(self) -> int:
        """number of parameters p."""

    @abstractmethod
    def init_params(self, rng: np.random.Generator) -> ParamVector:
        """draws an initialization theta_init."""

    @abstractmethod
    def logits(self, params: ParamVector, x: Array) -> Array:
        """class scores of shape (n, C)."""

    @abstractmethod
    def per_sample_gradients(
        self, params: ParamVector, x: Array, y: npt.NDArray[np.int64]
    ) -> Array:
        """loss gradients of each example, shape (n, p)."""

    def per_sample_gradient(
        self, params: ParamVector, x: Array, y: int
    ) -> ParamVector:
        """loss gradient of a single example."""
        grads = self.per_sample_gradients(
            params, np.atleast_2d(x), np.asarray([y], dtype=np.int64)
        )
        return np.asarray(grads[0], dtype=np.float64)

    def loss(self, params: ParamVector, data: Dataset) -> float:
        """mean cross-entropy f_i(theta) over a dataset."""
        log_probs = special.log_softmax(self.logits(params, data.x), axis=1)
        return float(-np.mean(log_probs[np.arange(len(data)), data.y]))

    def accuracy(self, params: ParamVector, data: Dataset) -> float:
        """fraction of correctly classified examples."""
        if len(data) == 0:
            return 0.0
        predicted = np.argmax(self.logits(params, data.x), axis=1)
        return float(np.mean(predicted == data.y))

    def _residuals(self, logits: Array, y: npt.NDArray[np.int64]) -> Array:
        """softmax minus one-hot: d loss / d logits."""
        residual = special.softmax(logits, axis=1)
        residual[np.arange(len(y)), y] -= 1.0
        return np.asarray(residual, dtype=np.float64)


PREDICTORS: Registry[Callable[..., Predictor]] = Registry("predictor")


def predictor(
    name: str,
) -> Callable[[type[Predictor]], type[Predictor]]:
    """class decorator registering a predictor under name."""

    def decorator(cls: type[Predictor]) -> type[Predictor]:
        PREDICTORS.register(name, cls)
        return cls

    return decorator


@predictor("logreg")
class LogisticRegression(Predictor):
    """multinomial logistic regression; theta = [W (d x C) row-major, b (C)]."""

    def __init__(self, d: int, C: int, hidden: int = 0) -> None:
        del hidden
        self.d = d
        self.C = C

    def param_dim(self) -> int:
        return self.d * self.C + self.C

    def _unpack(self, params: ParamVector) -> tuple[Array, Array]:
        split = self.d * self.C
        return params[:split].reshape(self.d, self.C), params[split:]

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        return np.asarray(rng.normal(0.0, 0.01, size=self.param_dim()), dtype=np.float64)

    def logits(self, params: ParamVector, x: Array) -> Array:
        weights, bias = self._unpack(params)
        return np.asarray(x @ weights + bias, dtype=np.float64)

    def per_sample_gradients(
        self, params: ParamVector, x: Array, y: npt.NDArray[np.int64]
    ) -> Array:
        residual = self._residuals(self.logits(params, x), y)
        grad_w = (x[:, :, None] * residual[:, None, :]).reshape(len(y), -1)
        return np.concatenate([grad_w, residual], axis=1)


@predictor("mlp")
class MLP(Predictor):
    """one hidden tanh layer; theta = [W1 (d x h), b1 (h), W2 (h x C), b2 (C)]."""

    def __init__(self, d: int, C: int, hidden: int = 32) -> None:
        if hidden < 1:
            raise ParameterError(f"hidden width must be >= 1, got {hidden}")
        self.d = d
        self.C = C
        self.hidden = hidden

    def param_dim(self) -> int:
        return self.d * self.hidden + self.hidden + self.hidden * self.C + self.C

    def _unpack(self, params: ParamVector) -> tuple[Array, Array, Array, Array]:
        d, h, C = self.d, self.hidden, self.C
        offsets = np.cumsum([d * h, h, h * C])
        w1, b1, w2, b2 = np.split(params, offsets)
        return w1.reshape(d, h), b1, w2.reshape(h, C), b2

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        w1 = rng.normal(0.0, 1.0 / np.sqrt(self.d), size=self.d * self.hidden)
        w2 = rng.normal(0.0, 1.0 / np.sqrt(self.hidden), size=self.hidden * self.C)
        return np.concatenate(
            [w1, np.zeros(self.hidden), w2, np.zeros(self.C)]
        ).astype(np.float64)

    def _forward(self, params: ParamVector, x: Array) -> tuple[Array, Array]:
        w1, b1, w2, b2 = self._unpack(params)
        hidden = np.tanh(x @ w1 + b1)
        return hidden, np.asarray(hidden @ w2 + b2, dtype=np.float64)

    def logits(self, params: ParamVector, x: Array) -> Array:
        return self._forward(params, x)[1]

    def per_sample_gradients(
        self, params: ParamVector, x: Array, y: npt.NDArray[np.int64]
    ) -> Array:
        _, _, w2, _ = self._unpack(params)
        hidden, logits = self._forward(params, x)
        residual = self._residuals(logits, y)
        n = len(y)

        grad_w2 = (hidden[:, :, None] * residual[:, None, :]).reshape(n, -1)
        delta = (residual @ w2.T) * (1.0 - hidden**2)
        grad_w1 = (x[:, :, None] * delta[:, None, :]).reshape(n, -1)
        return np.concatenate([grad_w1, delta, grad_w2, residual], axis=1)


def make_predictor(name: str, d: int, C: int, hidden: int = 32) -> Predictor:
    """
    builds a registered predictor.

    Args:
        name: registered predictor name ("logreg" or "mlp")
        d: feature dimension
        C: number of classes
        hidden: hidden width (ignored by logreg)

    Returns:
        predictor instance
    """
    return PREDICTORS.get(name)(d, C, hidden)
