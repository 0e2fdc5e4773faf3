"""LARS and Adam optimizers operating in place on :class:`Parameter` data."""
import numpy as np


class TrainingError(RuntimeError):
    """Numerical failure during optimization (non-finite gradient or loss)."""


def _check_finite(p):
    if not np.all(np.isfinite(p.grad)):
        raise TrainingError(f"non-finite gradient in {getattr(p, 'name', '?')}")


class Optimizer:
    def __init__(self, params):
        self.params = list(params)
        if not self.params:
            raise ValueError("optimizer got an empty parameter list")
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def _buffers(self):
        return {}

    def state_dict(self):
        """Buffers keyed by ``<slot>/<param index>`` plus scalar state."""
        arrays = {}
        for slot, bufs in self._buffers().items():
            for i, b in enumerate(bufs):
                arrays[f"{slot}/{i}"] = b
        return {"step_count": self.step_count, "arrays": arrays}

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        for slot, bufs in self._buffers().items():
            for i in range(len(bufs)):
                bufs[i] = np.asarray(state["arrays"][f"{slot}/{i}"], dtype=self.params[i].dtype).copy()


class LARS(Optimizer):
    """SGD with momentum where each parameter's step is scaled by a trust ratio.

    ratio = trust * ||w|| / (||g|| + weight_decay * ||w|| + eps), or 1 when
    either norm is zero. The decayed gradient is scaled by that ratio before
    entering the momentum buffer.
    """

    def __init__(self, params, momentum=0.9, weight_decay=1e-6, trust_coefficient=1e-3, eps=1e-8):
        super().__init__(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.trust_coefficient = trust_coefficient
        self.eps = eps
        self.momentum_buffers = [np.zeros_like(p.data) for p in self.params]

    def _buffers(self):
        return {"momentum": self.momentum_buffers}

    def trust_ratio(self, w, g):
        w_norm = float(np.linalg.norm(w))
        g_norm = float(np.linalg.norm(g))
        if w_norm == 0.0 or g_norm == 0.0:
            return 1.0
        return self.trust_coefficient * w_norm / (g_norm + self.weight_decay * w_norm + self.eps)

    def step(self, lr):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            _check_finite(p)
            g = p.grad
            ratio = self.trust_ratio(p.data, g)
            d = (g + self.weight_decay * p.data) * ratio
            buf = self.momentum_buffers[i]
            buf *= self.momentum
            buf += d.astype(buf.dtype, copy=False)
            p.data -= (lr * buf).astype(p.dtype, copy=False)
        self.step_count += 1


class Adam(Optimizer):
    """Bias-corrected Adam."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        super().__init__(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _buffers(self):
        return {"m": self.m, "v": self.v}

    def step(self, lr):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            _check_finite(p)
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype, copy=False)
